// Four deterministic proxy metrics covering the evaluation roles: perceptual
// quality (reference-free), signal fidelity, content consistency and timbre
// preservation. Each is normalized to roughly [0, 1], higher is better.

#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefalign/signal.hpp"

namespace prefalign {

struct ScoreCard {
    double perceptual{0.0};
    double fidelity{0.0};
    double content{0.0};
    double timbre{0.0};

    double mean() const { return 0.25 * (perceptual + fidelity + content + timbre); }
    bool all_finite() const {
        return std::isfinite(perceptual) && std::isfinite(fidelity) && std::isfinite(content) && std::isfinite(timbre);
    }
    double by_index(int i) const {
        switch (i) {
            case 0: return perceptual;
            case 1: return fidelity;
            case 2: return content;
            case 3: return timbre;
            default: throw std::invalid_argument("ScoreCard::by_index: index out of range");
        }
    }
    // Strict four-way dominance; any tie disqualifies.
    bool dominates(const ScoreCard& o) const {
        return perceptual > o.perceptual && fidelity > o.fidelity && content > o.content && timbre > o.timbre;
    }
};

enum class MetricRole { Perceptual, Fidelity, Content, Timbre };

inline const char* metric_role_name(MetricRole role) {
    switch (role) {
        case MetricRole::Perceptual: return "perceptual";
        case MetricRole::Fidelity: return "fidelity";
        case MetricRole::Content: return "content";
        case MetricRole::Timbre: return "timbre";
    }
    return "?";
}

inline MetricRole metric_role_from_name(const std::string& name) {
    if (name == "perceptual") return MetricRole::Perceptual;
    if (name == "fidelity") return MetricRole::Fidelity;
    if (name == "content") return MetricRole::Content;
    if (name == "timbre") return MetricRole::Timbre;
    throw std::invalid_argument("metric_role_from_name: unknown role '" + name + "'");
}

struct MetricDescriptor {
    std::string name;
    MetricRole role;
    bool reference_free;
};

// Fixed order defines ScoreCard field identity; exactly one metric per role.
struct MetricRegistry {
    std::vector<MetricDescriptor> metrics;

    static const MetricRegistry& standard() {
        static const MetricRegistry reg{{
            {"perceptual", MetricRole::Perceptual, true},
            {"fidelity", MetricRole::Fidelity, false},
            {"content", MetricRole::Content, false},
            {"timbre", MetricRole::Timbre, false},
        }};
        return reg;
    }
};

// Squashing constants frozen from a calibration sweep over the synthetic
// world; keeping them fixed keeps dominance thresholds stable across runs.
struct MetricConfig {
    double fidelity_mid_db{9.0};
    double fidelity_scale_db{5.0};
    double perceptual_flatness_weight{0.85};
    double perceptual_highband_weight{1.1};
    int content_bands{8};
    int highband_start{12};
};

namespace detail {

// Log band energies shifted so the silence floor maps to zero; the
// representation fidelity's SNR is computed over.
inline void shifted_log_bands(const FrameMatrix& fm, Array2D& out) {
    const double floor_log = std::log(kLogEnergyFloor);
    out = Array2D(fm.rows, fm.cols);
    for (size_t i = 0; i < fm.size(); ++i) {
        out.data[i] = fm.data[i] - floor_log;
    }
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const size_t n = std::min(a.size(), b.size());
    double ma = 0.0;
    double mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) {
        return saa == sbb ? 1.0 : 0.0;  // both flat -> identical shape
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace detail

// Reference-free: penalizes spectral flatness (noise haze) and high-band
// artifact energy, both weighted by frame energy.
inline double metric_perceptual(const Signal& candidate, const FrameSpec& spec, const MetricConfig& cfg) {
    const FrameMatrix fm = frames_of(candidate, spec);
    double flat_acc = 0.0;
    double high_acc = 0.0;
    double weight_acc = 0.0;
    for (int f = 0; f < fm.rows; ++f) {
        double log_sum = 0.0;
        double lin_sum = 0.0;
        double high_sum = 0.0;
        for (int b = 0; b < fm.cols; ++b) {
            const double v = fm.at(f, b);
            const double e = std::exp(v);
            log_sum += v;
            lin_sum += e;
            if (b >= cfg.highband_start) {
                high_sum += e;
            }
        }
        const double flatness = std::exp(log_sum / fm.cols) / (lin_sum / fm.cols);
        const double high_ratio = high_sum / lin_sum;
        const double w = lin_sum;
        flat_acc += w * flatness;
        high_acc += w * high_ratio;
        weight_acc += w;
    }
    if (weight_acc <= 0.0) {
        return 0.0;
    }
    const double flat = flat_acc / weight_acc;
    const double high = high_acc / weight_acc;
    return std::clamp(1.0 - cfg.perceptual_flatness_weight * flat - cfg.perceptual_highband_weight * high, 0.0, 1.0);
}

// Sigmoid-squashed SNR between log-band-energy images of candidate and
// reference. Exact self-comparison maps to 1.
inline double metric_fidelity(const FrameMatrix& cand_fm, const FrameMatrix& ref_fm, const MetricConfig& cfg) {
    Array2D ca;
    Array2D ra;
    detail::shifted_log_bands(cand_fm, ca);
    detail::shifted_log_bands(ref_fm, ra);
    const size_t n = std::min(ca.size(), ra.size());
    double err = 0.0;
    double ref_pow = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = ca.data[i] - ra.data[i];
        err += d * d;
        ref_pow += ra.data[i] * ra.data[i];
    }
    if (err == 0.0) {
        return 1.0;
    }
    if (ref_pow == 0.0) {
        return 0.0;
    }
    const double snr_db = 10.0 * std::log10(ref_pow / err);
    return sigmoid((snr_db - cfg.fidelity_mid_db) / cfg.fidelity_scale_db);
}

// Cosine similarity of per-frame low-band envelope shapes.
inline double metric_content(const FrameMatrix& cand_fm, const FrameMatrix& ref_fm, const MetricConfig& cfg) {
    const int frames = std::min(cand_fm.rows, ref_fm.rows);
    const int bands = std::min({cfg.content_bands, cand_fm.cols, ref_fm.cols});
    std::vector<double> a;
    std::vector<double> b;
    a.reserve(static_cast<size_t>(frames) * bands);
    b.reserve(static_cast<size_t>(frames) * bands);
    for (int f = 0; f < frames; ++f) {
        double na = 0.0;
        double nb = 0.0;
        for (int j = 0; j < bands; ++j) {
            const double ea = std::exp(cand_fm.at(f, j));
            const double eb = std::exp(ref_fm.at(f, j));
            na += ea * ea;
            nb += eb * eb;
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        for (int j = 0; j < bands; ++j) {
            a.push_back(na > 0.0 ? std::exp(cand_fm.at(f, j)) / na : 0.0);
            b.push_back(nb > 0.0 ? std::exp(ref_fm.at(f, j)) / nb : 0.0);
        }
    }
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) {
        return 0.0;
    }
    return std::clamp(ab / std::sqrt(aa * bb), 0.0, 1.0);
}

// Correlation of long-term average spectra, mapped to [0, 1].
inline double metric_timbre(const FrameMatrix& cand_fm, const FrameMatrix& ref_fm) {
    const int bands = std::min(cand_fm.cols, ref_fm.cols);
    std::vector<double> ltas_a(static_cast<size_t>(bands), 0.0);
    std::vector<double> ltas_b(static_cast<size_t>(bands), 0.0);
    for (int f = 0; f < cand_fm.rows; ++f) {
        for (int b = 0; b < bands; ++b) {
            ltas_a[static_cast<size_t>(b)] += cand_fm.at(f, b) / cand_fm.rows;
        }
    }
    for (int f = 0; f < ref_fm.rows; ++f) {
        for (int b = 0; b < bands; ++b) {
            ltas_b[static_cast<size_t>(b)] += ref_fm.at(f, b) / ref_fm.rows;
        }
    }
    const double r = detail::pearson(ltas_a, ltas_b);
    return std::clamp(0.5 * (r + 1.0), 0.0, 1.0);
}

// Full scorecard for a candidate signal against the clean reference. The
// degraded input is part of the contract for future reference-aware roles;
// the current four proxies do not consult it.
inline ScoreCard score(const Signal& candidate, const Signal& reference, const Signal& degraded,
                       const FrameSpec& spec = {}, const MetricConfig& cfg = {}) {
    (void)degraded;
    const size_t min_len = std::min(candidate.samples.size(), reference.samples.size());
    if (min_len < static_cast<size_t>(spec.win)) {
        throw std::invalid_argument("score: signals must cover at least one frame");
    }
    Signal cand = candidate;
    cand.samples.resize(min_len);
    Signal ref = reference;
    ref.samples.resize(min_len);

    const FrameMatrix cand_fm = frames_of(cand, spec);
    const FrameMatrix ref_fm = frames_of(ref, spec);

    ScoreCard card;
    card.perceptual = metric_perceptual(cand, spec, cfg);
    card.fidelity = metric_fidelity(cand_fm, ref_fm, cfg);
    card.content = metric_content(cand_fm, ref_fm, cfg);
    card.timbre = metric_timbre(cand_fm, ref_fm);
    return card;
}

}  // namespace prefalign
