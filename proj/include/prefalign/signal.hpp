// Synthetic signal world: clean-signal generation, parameterized degradations,
// windowed band-energy framing and its sinusoidal inverse, raw f64 file I/O.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "prefalign/array.hpp"
#include "prefalign/rng.hpp"

namespace prefalign {

// rows = frames, cols = band count; entries are log(band energy + floor).
using FrameMatrix = Array2D;

struct Signal {
    std::vector<double> samples;
    int sample_rate{8000};
};

struct FrameSpec {
    int sample_rate{8000};
    int win{64};
    int hop{32};
    int bands{16};

    int bins_per_band() const { return win / 2 / bands; }
    double band_center_hz(int band) const {
        const double bin_hz = static_cast<double>(sample_rate) / win;
        return (band * bins_per_band() + 0.5 * bins_per_band()) * bin_hz;
    }
    int signal_length(int frames) const { return (frames - 1) * hop + win; }
    int frame_count(int samples) const { return (samples - win) / hop + 1; }
};

inline constexpr double kLogEnergyFloor = 1e-5;
inline constexpr double kPeakHeadroom = 4.0;

struct DegradationSpec {
    std::optional<double> noise_snr_db;
    std::optional<double> lowpass_cutoff_hz;
    std::optional<double> clip_threshold;  // absolute amplitude in (0, 1]
    std::optional<int> smear_len;          // moving-average length (toy reverberation)
    uint64_t seed{0};

    bool any() const { return noise_snr_db || lowpass_cutoff_hz || clip_threshold || smear_len; }
};

// Deterministic sum of 2-5 band-centered sinusoids under a slow amplitude
// envelope; peak stays below 1. Content sits in the lower three quarters of
// the bands, like voiced speech, so high-band energy marks artifacts.
inline Signal make_clean(uint64_t seed, int duration_frames, const FrameSpec& spec = {}) {
    if (duration_frames < 8) {
        throw std::invalid_argument("make_clean: duration_frames must be >= 8");
    }
    Rng rng(seed);
    const int len = spec.signal_length(duration_frames);
    const int n_sines = 2 + rng.uniform_int(4);
    const int content_bands = std::max(spec.bands * 3 / 4, 1);
    std::vector<double> amp(static_cast<size_t>(n_sines));
    std::vector<double> freq(static_cast<size_t>(n_sines));
    std::vector<double> phase(static_cast<size_t>(n_sines));
    double amp_total = 0.0;
    for (int i = 0; i < n_sines; ++i) {
        amp[static_cast<size_t>(i)] = rng.uniform(0.3, 1.0);
        freq[static_cast<size_t>(i)] = spec.band_center_hz(rng.uniform_int(content_bands));
        phase[static_cast<size_t>(i)] = rng.uniform(0.0, 2.0 * M_PI);
        amp_total += amp[static_cast<size_t>(i)];
    }
    for (double& a : amp) {
        a *= 0.9 / amp_total;
    }
    const double env_freq = rng.uniform(0.5, 2.0);
    const double env_phase = rng.uniform(0.0, 2.0 * M_PI);

    Signal out;
    out.sample_rate = spec.sample_rate;
    out.samples.resize(static_cast<size_t>(len));
    for (int n = 0; n < len; ++n) {
        const double t = static_cast<double>(n) / spec.sample_rate;
        const double env = 0.75 + 0.25 * std::sin(2.0 * M_PI * env_freq * t + env_phase);
        double s = 0.0;
        for (int i = 0; i < n_sines; ++i) {
            s += amp[static_cast<size_t>(i)] *
                 std::sin(2.0 * M_PI * freq[static_cast<size_t>(i)] * t + phase[static_cast<size_t>(i)]);
        }
        out.samples[static_cast<size_t>(n)] = env * s;
    }
    return out;
}

namespace detail {

inline std::vector<double> moving_average(const std::vector<double>& x, int len) {
    if (len <= 1) {
        return x;
    }
    std::vector<double> out(x.size(), 0.0);
    double acc = 0.0;
    for (size_t n = 0; n < x.size(); ++n) {
        acc += x[n];
        if (n >= static_cast<size_t>(len)) {
            acc -= x[n - static_cast<size_t>(len)];
        }
        out[n] = acc / len;
    }
    return out;
}

// 63-tap Hamming-windowed sinc, center-aligned so the passband is not delayed.
inline std::vector<double> lowpass_fir(const std::vector<double>& x, double cutoff_hz, int sample_rate) {
    constexpr int kTaps = 63;
    constexpr int kMid = kTaps / 2;
    const double fc = cutoff_hz / sample_rate;  // normalized (cycles/sample)
    std::vector<double> h(kTaps);
    double norm = 0.0;
    for (int i = 0; i < kTaps; ++i) {
        const int k = i - kMid;
        const double sinc = k == 0 ? 2.0 * fc : std::sin(2.0 * M_PI * fc * k) / (M_PI * k);
        const double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (kTaps - 1));
        h[static_cast<size_t>(i)] = sinc * w;
        norm += h[static_cast<size_t>(i)];
    }
    for (double& v : h) {
        v /= norm;
    }
    std::vector<double> out(x.size(), 0.0);
    const int n_total = static_cast<int>(x.size());
    for (int n = 0; n < n_total; ++n) {
        double s = 0.0;
        for (int i = 0; i < kTaps; ++i) {
            const int src = n + kMid - i;
            if (src >= 0 && src < n_total) {
                s += h[static_cast<size_t>(i)] * x[static_cast<size_t>(src)];
            }
        }
        out[static_cast<size_t>(n)] = s;
    }
    return out;
}

inline double mean_power(const std::vector<double>& x) {
    double p = 0.0;
    for (double v : x) {
        p += v * v;
    }
    return x.empty() ? 0.0 : p / static_cast<double>(x.size());
}

}  // namespace detail

// Applies, in order: smear, lowpass, additive noise at the given SNR, clipping.
// Pure function of (clean, spec); spec.seed drives the noise draw.
inline Signal degrade(const Signal& clean, const DegradationSpec& spec) {
    if (!spec.any()) {
        throw std::invalid_argument("degrade: at least one degradation must be present");
    }
    if (spec.lowpass_cutoff_hz && *spec.lowpass_cutoff_hz >= 0.5 * clean.sample_rate) {
        throw std::invalid_argument("degrade: lowpass cutoff must be below Nyquist");
    }
    if (spec.clip_threshold && (*spec.clip_threshold <= 0.0 || *spec.clip_threshold > 1.0)) {
        throw std::invalid_argument("degrade: clip threshold must lie in (0, 1]");
    }
    if (spec.smear_len && *spec.smear_len < 1) {
        throw std::invalid_argument("degrade: smear length must be >= 1");
    }
    std::vector<double> x = clean.samples;
    if (spec.smear_len) {
        x = detail::moving_average(x, *spec.smear_len);
    }
    if (spec.lowpass_cutoff_hz) {
        x = detail::lowpass_fir(x, *spec.lowpass_cutoff_hz, clean.sample_rate);
    }
    if (spec.noise_snr_db) {
        Rng rng(derive_seed(spec.seed, 0x6e6f6973ull));
        const double sig_power = detail::mean_power(x);
        const double noise_power = sig_power / std::pow(10.0, *spec.noise_snr_db / 10.0);
        const double sigma = std::sqrt(noise_power);
        for (double& v : x) {
            v += sigma * rng.normal();
        }
    }
    if (spec.clip_threshold) {
        const double c = *spec.clip_threshold;
        for (double& v : x) {
            v = std::clamp(v, -c, c);
        }
    }
    for (double& v : x) {
        v = std::clamp(v, -kPeakHeadroom, kPeakHeadroom);
    }
    Signal out;
    out.sample_rate = clean.sample_rate;
    out.samples = std::move(x);
    return out;
}

// Hann-windowed DFT band log-energies; frames = floor((len - win)/hop) + 1.
inline FrameMatrix frames_of(const Signal& signal, const FrameSpec& spec = {}) {
    const int len = static_cast<int>(signal.samples.size());
    if (len < spec.win) {
        throw std::invalid_argument("frames_of: signal shorter than one window");
    }
    const int frames = spec.frame_count(len);
    const int bins = spec.win / 2;  // bins 0 .. win/2 - 1
    const int per_band = spec.bins_per_band();
    FrameMatrix out(frames, spec.bands);

    std::vector<double> window(static_cast<size_t>(spec.win));
    for (int i = 0; i < spec.win; ++i) {
        window[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (spec.win - 1)));
    }
    std::vector<double> buf(static_cast<size_t>(spec.win));
    for (int f = 0; f < frames; ++f) {
        const int start = f * spec.hop;
        for (int i = 0; i < spec.win; ++i) {
            buf[static_cast<size_t>(i)] = signal.samples[static_cast<size_t>(start + i)] * window[static_cast<size_t>(i)];
        }
        for (int band = 0; band < spec.bands; ++band) {
            double energy = 0.0;
            for (int b = band * per_band; b < (band + 1) * per_band && b < bins; ++b) {
                double re = 0.0;
                double im = 0.0;
                for (int i = 0; i < spec.win; ++i) {
                    const double ang = 2.0 * M_PI * b * i / spec.win;
                    re += buf[static_cast<size_t>(i)] * std::cos(ang);
                    im -= buf[static_cast<size_t>(i)] * std::sin(ang);
                }
                energy += re * re + im * im;
            }
            out.at(f, band) = std::log(energy + kLogEnergyFloor);
        }
    }
    return out;
}

namespace detail {

// Band response of a unit-amplitude sinusoid at each band center under the
// same windowed DFT; used to invert band energies back to amplitudes.
// Cached per FrameSpec; safe to call from the analysis fan-out threads.
inline std::vector<double> band_unit_energy(const FrameSpec& spec) {
    static std::mutex mu;
    static std::map<std::tuple<int, int, int, int>, std::vector<double>> cache;
    const auto key = std::make_tuple(spec.sample_rate, spec.win, spec.hop, spec.bands);
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) {
            return it->second;
        }
    }
    std::vector<double> out(static_cast<size_t>(spec.bands));
    for (int band = 0; band < spec.bands; ++band) {
        Signal tone;
        tone.sample_rate = spec.sample_rate;
        tone.samples.resize(static_cast<size_t>(spec.win));
        const double f = spec.band_center_hz(band);
        for (int n = 0; n < spec.win; ++n) {
            tone.samples[static_cast<size_t>(n)] = std::sin(2.0 * M_PI * f * n / spec.sample_rate);
        }
        const FrameMatrix fm = frames_of(tone, spec);
        out[static_cast<size_t>(band)] = std::exp(fm.at(0, band)) - kLogEnergyFloor;
    }
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace(key, out);
    return out;
}

}  // namespace detail

// Phase-free sinusoidal resynthesis from band log-energies: one oscillator per
// band, amplitude linearly interpolated between frame centers. Inverse of
// frames_of only up to phase, which is all the metric suite needs.
inline Signal render(const FrameMatrix& fm, const FrameSpec& spec = {}) {
    if (fm.rows < 1 || fm.cols != spec.bands) {
        throw std::invalid_argument("render: frame matrix shape does not match spec");
    }
    const int len = spec.signal_length(fm.rows);
    const auto unit = detail::band_unit_energy(spec);
    Signal out;
    out.sample_rate = spec.sample_rate;
    out.samples.assign(static_cast<size_t>(len), 0.0);

    const double center0 = 0.5 * spec.win;
    for (int band = 0; band < spec.bands; ++band) {
        const double f = spec.band_center_hz(band);
        const double omega = 2.0 * M_PI * f / spec.sample_rate;
        for (int n = 0; n < len; ++n) {
            // amplitude from the two nearest frame centers
            double pos = (static_cast<double>(n) - center0) / spec.hop;
            pos = std::clamp(pos, 0.0, static_cast<double>(fm.rows - 1));
            const int f0 = static_cast<int>(pos);
            const int f1 = std::min(f0 + 1, fm.rows - 1);
            const double frac = pos - f0;
            const double e0 = std::max(std::exp(fm.at(f0, band)) - kLogEnergyFloor, 0.0);
            const double e1 = std::max(std::exp(fm.at(f1, band)) - kLogEnergyFloor, 0.0);
            const double a0 = std::sqrt(e0 / unit[static_cast<size_t>(band)]);
            const double a1 = std::sqrt(e1 / unit[static_cast<size_t>(band)]);
            const double a = (1.0 - frac) * a0 + frac * a1;
            out.samples[static_cast<size_t>(n)] += a * std::sin(omega * n);
        }
    }
    for (double& v : out.samples) {
        v = std::clamp(v, -kPeakHeadroom, kPeakHeadroom);
    }
    return out;
}

// Raw little-endian f64 payload plus a one-line text sidecar at <path>.meta.
inline void write_signal(const Signal& signal, const std::string& path) {
    std::ofstream raw(path, std::ios::binary);
    if (!raw) {
        throw std::runtime_error("write_signal: cannot open " + path);
    }
    raw.write(reinterpret_cast<const char*>(signal.samples.data()),
              static_cast<std::streamsize>(signal.samples.size() * sizeof(double)));
    std::ofstream meta(path + ".meta");
    meta << signal.sample_rate << " " << signal.samples.size() << "\n";
}

inline Signal read_signal(const std::string& path) {
    std::ifstream meta(path + ".meta");
    if (!meta) {
        throw std::runtime_error("read_signal: missing sidecar for " + path);
    }
    int sample_rate = 0;
    size_t length = 0;
    meta >> sample_rate >> length;
    if (sample_rate <= 0) {
        throw std::runtime_error("read_signal: bad sidecar for " + path);
    }
    Signal out;
    out.sample_rate = sample_rate;
    out.samples.resize(length);
    std::ifstream raw(path, std::ios::binary);
    if (!raw) {
        throw std::runtime_error("read_signal: cannot open " + path);
    }
    raw.read(reinterpret_cast<char*>(out.samples.data()), static_cast<std::streamsize>(length * sizeof(double)));
    if (static_cast<size_t>(raw.gcount()) != length * sizeof(double)) {
        throw std::runtime_error("read_signal: truncated payload in " + path);
    }
    return out;
}

}  // namespace prefalign
