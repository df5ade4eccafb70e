#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "prefalign/signal.hpp"

using namespace prefalign;

namespace {

// Independent DFT oracle: power of the signal near a frequency, via direct
// correlation with a complex exponential over the whole signal.
double tone_power_at(const Signal& s, double freq_hz) {
    double re = 0.0;
    double im = 0.0;
    for (size_t n = 0; n < s.samples.size(); ++n) {
        const double ang = 2.0 * M_PI * freq_hz * static_cast<double>(n) / s.sample_rate;
        re += s.samples[n] * std::cos(ang);
        im -= s.samples[n] * std::sin(ang);
    }
    return (re * re + im * im) / static_cast<double>(s.samples.size());
}

double mean_power(const Signal& s) {
    double p = 0.0;
    for (double v : s.samples) {
        p += v * v;
    }
    return p / static_cast<double>(s.samples.size());
}

Signal tone(double freq_hz, int frames, double amp = 0.5, const FrameSpec& spec = {}) {
    Signal out;
    out.sample_rate = spec.sample_rate;
    const int len = spec.signal_length(frames);
    out.samples.resize(static_cast<size_t>(len));
    for (int n = 0; n < len; ++n) {
        out.samples[static_cast<size_t>(n)] = amp * std::sin(2.0 * M_PI * freq_hz * n / spec.sample_rate);
    }
    return out;
}

}  // namespace

TEST(MakeClean, DeterministicInSeed) {
    const Signal a = make_clean(42, 16);
    const Signal b = make_clean(42, 16);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i) {
        EXPECT_EQ(a.samples[i], b.samples[i]);
    }
}

TEST(MakeClean, DifferentSeedsDiffer) {
    const Signal a = make_clean(1, 16);
    const Signal b = make_clean(2, 16);
    double max_diff = 0.0;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(a.samples[i] - b.samples[i]));
    }
    EXPECT_GT(max_diff, 1e-3);
}

TEST(MakeClean, PeakBelowOneAndFinite) {
    for (uint64_t seed = 0; seed < 32; ++seed) {
        const Signal s = make_clean(seed, 16);
        for (double v : s.samples) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_LE(std::fabs(v), 1.0);
        }
    }
}

TEST(MakeClean, TooShortThrows) {
    EXPECT_THROW(make_clean(1, 7), std::invalid_argument);
}

TEST(MakeClean, SpectralEnergyConcentratedInBand) {
    // Energy at in-band tones should dwarf energy probed far from every band
    // the generator could have chosen. Probe between band centers instead:
    // generator frequencies sit at band centers, so a probe at a band edge
    // plus an offset off the DFT grid sees only leakage.
    const FrameSpec spec;
    const Signal s = make_clean(9, 64, spec);
    double best_band = 0.0;
    for (int band = 0; band < spec.bands; ++band) {
        best_band = std::max(best_band, tone_power_at(s, spec.band_center_hz(band)));
    }
    const double off_grid = tone_power_at(s, spec.band_center_hz(3) + 61.8);
    EXPECT_GT(best_band, 20.0 * off_grid);
}

TEST(Degrade, ClipAbovePeakIsIdentity) {
    const Signal clean = tone(1062.5, 16, 0.8);
    DegradationSpec spec;
    spec.clip_threshold = 1.0;
    const Signal out = degrade(clean, spec);
    for (size_t i = 0; i < clean.samples.size(); ++i) {
        EXPECT_EQ(out.samples[i], clean.samples[i]);
    }
}

TEST(Degrade, SnrZeroDoublesPower) {
    const Signal clean = make_clean(5, 128);  // long signal so the power estimate settles
    DegradationSpec spec;
    spec.noise_snr_db = 0.0;
    spec.seed = 77;
    const Signal out = degrade(clean, spec);
    const double ratio = mean_power(out) / mean_power(clean);
    EXPECT_NEAR(ratio, 2.0, 0.1);  // +-5%
}

TEST(Degrade, SmearLengthOneIsIdentity) {
    const Signal clean = make_clean(3, 16);
    DegradationSpec spec;
    spec.smear_len = 1;
    const Signal out = degrade(clean, spec);
    for (size_t i = 0; i < clean.samples.size(); ++i) {
        EXPECT_EQ(out.samples[i], clean.samples[i]);
    }
}

TEST(Degrade, CutoffAtOrAboveNyquistThrows) {
    const Signal clean = make_clean(3, 16);
    DegradationSpec spec;
    spec.lowpass_cutoff_hz = 4000.0;
    EXPECT_THROW(degrade(clean, spec), std::invalid_argument);
}

TEST(Degrade, EmptySpecThrows) {
    const Signal clean = make_clean(3, 16);
    EXPECT_THROW(degrade(clean, DegradationSpec{}), std::invalid_argument);
}

TEST(Degrade, DeterministicInSeedAndNeverNonFinite) {
    const Signal clean = make_clean(8, 32);
    DegradationSpec spec;
    spec.noise_snr_db = 3.0;
    spec.lowpass_cutoff_hz = 1500.0;
    spec.clip_threshold = 0.7;
    spec.smear_len = 3;
    spec.seed = 123;
    const Signal a = degrade(clean, spec);
    const Signal b = degrade(clean, spec);
    for (size_t i = 0; i < a.samples.size(); ++i) {
        ASSERT_EQ(a.samples[i], b.samples[i]);
        ASSERT_TRUE(std::isfinite(a.samples[i]));
        ASSERT_LE(std::fabs(a.samples[i]), 0.7);
    }
}

TEST(Degrade, LowpassAttenuatesAboveCutoff) {
    const FrameSpec fs;
    const Signal hi = tone(3437.5, 32, 0.5);
    const Signal lo = tone(562.5, 32, 0.5);
    DegradationSpec spec;
    spec.lowpass_cutoff_hz = 1500.0;
    const double hi_att = mean_power(degrade(hi, spec)) / mean_power(hi);
    const double lo_att = mean_power(degrade(lo, spec)) / mean_power(lo);
    EXPECT_LT(hi_att, 0.05);
    EXPECT_GT(lo_att, 0.8);
}

TEST(FramesOf, PureToneMaximizesItsBand) {
    const FrameSpec spec;
    for (int band : {1, 5, 10, 15}) {
        const Signal s = tone(spec.band_center_hz(band), 12, 0.5);
        const FrameMatrix fm = frames_of(s, spec);
        ASSERT_EQ(fm.rows, 12);
        ASSERT_EQ(fm.cols, spec.bands);
        for (int f = 0; f < fm.rows; ++f) {
            int argmax = 0;
            for (int b = 1; b < fm.cols; ++b) {
                if (fm.at(f, b) > fm.at(f, argmax)) {
                    argmax = b;
                }
            }
            EXPECT_EQ(argmax, band) << "frame " << f;
        }
    }
}

TEST(FramesOf, SilenceHitsLogFloor) {
    Signal s;
    s.samples.assign(static_cast<size_t>(FrameSpec{}.signal_length(4)), 0.0);
    const FrameMatrix fm = frames_of(s);
    for (double v : fm.data) {
        EXPECT_DOUBLE_EQ(v, std::log(kLogEnergyFloor));
    }
}

TEST(FramesOf, DoublingAmplitudeAddsLogFourInLogPower) {
    const FrameSpec spec;
    const Signal s1 = tone(spec.band_center_hz(4), 10, 0.3);
    const Signal s2 = tone(spec.band_center_hz(4), 10, 0.6);
    const FrameMatrix f1 = frames_of(s1, spec);
    const FrameMatrix f2 = frames_of(s2, spec);
    // check in the tone's band where energy is far above the floor
    for (int f = 0; f < f1.rows; ++f) {
        EXPECT_NEAR(f2.at(f, 4) - f1.at(f, 4), std::log(4.0), 1e-6);
    }
}

TEST(FramesOf, FrameCountFormula) {
    const FrameSpec spec;
    for (int frames : {1, 2, 9, 33}) {
        Signal s;
        s.samples.assign(static_cast<size_t>(spec.signal_length(frames)), 0.1);
        EXPECT_EQ(frames_of(s, spec).rows, frames);
        // adding fewer than `hop` extra samples must not add a frame
        s.samples.resize(s.samples.size() + static_cast<size_t>(spec.hop) - 1, 0.1);
        EXPECT_EQ(frames_of(s, spec).rows, frames);
    }
}

TEST(FramesOf, ShorterThanWindowThrows) {
    Signal s;
    s.samples.assign(63, 0.0);
    EXPECT_THROW(frames_of(s), std::invalid_argument);
}

TEST(Render, RoundTripRecoversToneEnvelope) {
    const FrameSpec spec;
    const Signal s = tone(spec.band_center_hz(6), 16, 0.4);
    const Signal back = render(frames_of(s, spec), spec);
    ASSERT_EQ(back.samples.size(), s.samples.size());
    // Phase-free resynthesis: compare band energy, not waveform.
    const FrameMatrix fa = frames_of(s, spec);
    const FrameMatrix fb = frames_of(back, spec);
    for (int f = 2; f < fa.rows - 2; ++f) {
        EXPECT_NEAR(fa.at(f, 6), fb.at(f, 6), 0.35) << "frame " << f;
    }
}

TEST(SignalIO, RoundTripIsExact) {
    namespace fs = std::filesystem;
    const Signal s = make_clean(31, 16);
    const std::string path = (fs::temp_directory_path() / "prefalign_sig_test.f64").string();
    write_signal(s, path);
    const Signal back = read_signal(path);
    EXPECT_EQ(back.sample_rate, s.sample_rate);
    ASSERT_EQ(back.samples.size(), s.samples.size());
    for (size_t i = 0; i < s.samples.size(); ++i) {
        EXPECT_EQ(back.samples[i], s.samples[i]);
    }
    fs::remove(path);
    fs::remove(path + ".meta");
}
