#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "prefalign/metrics.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/signal.hpp"

using namespace prefalign;

namespace {

// Spearman rank correlation, average ranks on ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        size_t i = 0;
        while (i < idx.size()) {
            size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) {
                ++j;
            }
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (size_t k = i; k <= j; ++k) {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        return r;
    };
    const auto rx = ranks(x);
    const auto ry = ranks(y);
    return detail::pearson(rx, ry);
}

ScoreCard score_degraded(uint64_t utt_seed, const DegradationSpec& d) {
    const Signal clean = make_clean(utt_seed, 48);
    const Signal deg = degrade(clean, d);
    return score(deg, clean, deg);
}

}  // namespace

TEST(MetricRegistry, ExactlyOneMetricPerRole) {
    const auto& reg = MetricRegistry::standard();
    ASSERT_EQ(reg.metrics.size(), 4u);
    std::vector<int> role_counts(4, 0);
    int reference_free = 0;
    for (const auto& m : reg.metrics) {
        role_counts[static_cast<size_t>(m.role)]++;
        reference_free += m.reference_free ? 1 : 0;
        EXPECT_EQ(metric_role_from_name(m.name), m.role);
    }
    for (int c : role_counts) {
        EXPECT_EQ(c, 1);
    }
    EXPECT_EQ(reference_free, 1);
}

TEST(Score, SelfComparisonMaximizesReferenceMetrics) {
    for (uint64_t seed : {1ull, 7ull, 19ull}) {
        const Signal clean = make_clean(seed, 24);
        const ScoreCard card = score(clean, clean, clean);
        EXPECT_NEAR(card.fidelity, 1.0, 1e-6);
        EXPECT_NEAR(card.content, 1.0, 1e-6);
        EXPECT_NEAR(card.timbre, 1.0, 1e-6);
        EXPECT_TRUE(card.all_finite());
    }
}

TEST(Score, ZeroLengthThrows) {
    Signal empty;
    const Signal clean = make_clean(1, 24);
    EXPECT_THROW(score(empty, clean, clean), std::invalid_argument);
    EXPECT_THROW(score(clean, empty, clean), std::invalid_argument);
}

TEST(Score, HeavyNoiseScoresBelowLightNoiseOnFidelity) {
    DegradationSpec heavy;
    heavy.noise_snr_db = 0.0;
    heavy.seed = 11;
    DegradationSpec light;
    light.noise_snr_db = 20.0;
    light.seed = 11;
    double heavy_fid = 0.0;
    double light_fid = 0.0;
    for (uint64_t s = 0; s < 8; ++s) {
        heavy_fid += score_degraded(s, heavy).fidelity;
        light_fid += score_degraded(s, light).fidelity;
    }
    EXPECT_LT(heavy_fid, light_fid);
}

TEST(Score, FidelityMonotoneAlongSnrGrid) {
    std::vector<double> fid;
    std::vector<double> snr_axis;
    for (int i = 0; i < 8; ++i) {
        const double snr = 21.0 - 3.0 * i;
        DegradationSpec d;
        d.noise_snr_db = snr;
        d.seed = 3;
        double mean_fid = 0.0;
        for (uint64_t s = 0; s < 12; ++s) {
            mean_fid += score_degraded(s, d).fidelity / 12.0;
        }
        fid.push_back(mean_fid);
        snr_axis.push_back(snr);
    }
    for (size_t i = 1; i < fid.size(); ++i) {
        EXPECT_LT(fid[i], fid[i - 1]) << "snr " << snr_axis[i];
    }
}

TEST(Score, WhiteNoiseCandidateScoresBelowCleanOnPerceptual) {
    const Signal clean = make_clean(4, 48);
    Rng rng(8);
    Signal noise;
    noise.sample_rate = clean.sample_rate;
    noise.samples = rng.normal_vector(clean.samples.size(), 0.0, 0.3);
    const double clean_p = metric_perceptual(clean, {}, {});
    const double noise_p = metric_perceptual(noise, {}, {});
    EXPECT_LT(noise_p, clean_p);
    EXPECT_LT(noise_p, 0.3);
    EXPECT_GT(clean_p, 0.6);
}

// 10-point severity sweep: every reference-based metric must fall with
// severity at Spearman rho < -0.9.
TEST(Score, ReferenceMetricsDecreaseAlongSeveritySweep) {
    std::vector<double> severity;
    std::vector<double> fid;
    std::vector<double> cont;
    std::vector<double> timb;
    for (int lvl = 1; lvl <= 10; ++lvl) {
        double f = 0.0;
        double c = 0.0;
        double t = 0.0;
        for (uint64_t s = 0; s < 24; ++s) {
            DegradationSpec d;
            d.noise_snr_db = 24.0 - 3.0 * lvl;
            d.lowpass_cutoff_hz = 2800.0 - 220.0 * lvl;
            d.clip_threshold = std::max(1.0 - 0.06 * lvl, 0.05);
            d.smear_len = 1 + lvl / 3;
            d.seed = s * 31 + static_cast<uint64_t>(lvl);
            const ScoreCard card = score_degraded(s, d);
            f += card.fidelity / 24.0;
            c += card.content / 24.0;
            t += card.timbre / 24.0;
        }
        severity.push_back(lvl);
        fid.push_back(f);
        cont.push_back(c);
        timb.push_back(t);
    }
    EXPECT_LT(spearman(severity, fid), -0.9);
    EXPECT_LT(spearman(severity, cont), -0.9);
    EXPECT_LT(spearman(severity, timb), -0.9);
}

TEST(Score, MetricsArePairwiseNonRedundant) {
    std::vector<std::vector<double>> cols(4);
    Rng rng(9);
    for (uint64_t u = 0; u < 48; ++u) {
        const Signal ref = make_clean(u, 32);
        DegradationSpec d;
        d.seed = u * 7 + 1;
        switch (u % 4) {
            case 0:
                d.noise_snr_db = rng.uniform(0.0, 25.0);
                break;
            case 1:
                d.lowpass_cutoff_hz = rng.uniform(500.0, 3000.0);
                d.noise_snr_db = rng.uniform(5.0, 30.0);
                break;
            case 2:
                d.clip_threshold = rng.uniform(0.1, 1.0);
                d.noise_snr_db = rng.uniform(5.0, 30.0);
                break;
            default:
                d.smear_len = 1 + rng.uniform_int(8);
                d.noise_snr_db = rng.uniform(0.0, 30.0);
                break;
        }
        const Signal cand = degrade(ref, d);
        const ScoreCard c = score(cand, ref, cand);
        cols[0].push_back(c.perceptual);
        cols[1].push_back(c.fidelity);
        cols[2].push_back(c.content);
        cols[3].push_back(c.timbre);
    }
    for (size_t i = 0; i < 4; ++i) {
        for (size_t j = i + 1; j < 4; ++j) {
            EXPECT_LE(std::fabs(detail::pearson(cols[i], cols[j])), 0.99) << i << " vs " << j;
        }
    }
}

TEST(Score, Deterministic) {
    const Signal clean = make_clean(2, 24);
    DegradationSpec d;
    d.noise_snr_db = 6.0;
    d.seed = 21;
    const Signal cand = degrade(clean, d);
    const ScoreCard a = score(cand, clean, cand);
    const ScoreCard b = score(cand, clean, cand);
    EXPECT_EQ(a.perceptual, b.perceptual);
    EXPECT_EQ(a.fidelity, b.fidelity);
    EXPECT_EQ(a.content, b.content);
    EXPECT_EQ(a.timbre, b.timbre);
}

TEST(ScoreCard, DominanceRequiresStrictInequalityEverywhere) {
    const ScoreCard hi{0.9, 0.9, 0.9, 0.9};
    const ScoreCard lo{0.8, 0.8, 0.8, 0.8};
    EXPECT_TRUE(hi.dominates(lo));
    EXPECT_FALSE(lo.dominates(hi));
    const ScoreCard mixed{0.9, 0.7, 0.9, 0.9};
    EXPECT_FALSE(mixed.dominates(lo));
    ScoreCard tied = hi;
    tied.perceptual = lo.perceptual;
    EXPECT_FALSE(tied.dominates(lo));
}
