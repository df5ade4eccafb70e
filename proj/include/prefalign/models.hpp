// The three toy generative restoration models. Each exposes the per-sample
// likelihood (AR token log-probs, MGM masked log-probs) or velocity (FM)
// both as plain values and as tape nodes, plus seeded sampling. The value
// path and the tape path run the identical arithmetic in the identical
// order, so a frozen clone reproduces the trainable model bit for bit.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefalign/array.hpp"
#include "prefalign/quantizer.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/signal.hpp"
#include "prefalign/tape.hpp"

namespace prefalign {

enum class Paradigm { AR, MGM, FM };

inline const char* paradigm_name(Paradigm p) {
    switch (p) {
        case Paradigm::AR: return "AR";
        case Paradigm::MGM: return "MGM";
        case Paradigm::FM: return "FM";
    }
    return "?";
}

inline Paradigm paradigm_from_name(const std::string& s) {
    if (s == "AR") return Paradigm::AR;
    if (s == "MGM") return Paradigm::MGM;
    if (s == "FM") return Paradigm::FM;
    throw std::invalid_argument("paradigm_from_name: unknown paradigm '" + s + "'");
}

struct ModelArch {
    int vocab{32};
    int embed_dim{8};
    int hidden{48};
    int context{3};     // AR: number of previous tokens fed to the head
    int bands{16};      // conditioning dim and FM frame dim
    int t_embed_dim{8};
    // fixed affine conditioning of log-band inputs, and the FM prior fitted
    // to world frame statistics
    double frame_shift{6.0};
    double frame_scale{0.25};
    double fm_noise_mean{-6.0};
    double fm_noise_std{5.0};

    bool operator==(const ModelArch&) const = default;
};

// One flag per token position; true = masked.
struct MaskPattern {
    std::vector<uint8_t> masked;

    int count() const {
        int n = 0;
        for (uint8_t m : masked) {
            n += m ? 1 : 0;
        }
        return n;
    }
};

// A model output in its native representation: tokens for AR/MGM, frames for FM.
struct Restoration {
    Paradigm paradigm{Paradigm::AR};
    TokenSequence tokens;
    FrameMatrix frames;

    bool operator==(const Restoration& o) const {
        return paradigm == o.paradigm && tokens == o.tokens && frames.rows == o.frames.rows &&
               frames.cols == o.frames.cols && frames.data == o.frames.data;
    }
};

struct SampleConfig {
    int mgm_steps{8};
    int fm_steps{16};
};

class PolicyModel {
  public:
    static PolicyModel create(Paradigm paradigm, const ModelArch& arch, uint64_t seed) {
        PolicyModel m;
        m.paradigm_ = paradigm;
        m.arch_ = arch;
        m.seed_ = seed;
        Rng rng(derive_seed(seed, 0x6d6f64656cull));
        auto init = [&rng](int rows, int cols, double std) {
            Array2D a(rows, cols);
            for (double& v : a.data) {
                v = rng.normal(0.0, std);
            }
            return a;
        };
        const int in_dim = m.input_dim();
        const int out_dim = paradigm == Paradigm::FM ? arch.bands : arch.vocab;
        if (paradigm != Paradigm::FM) {
            // one extra row: BOS for AR, MASK for MGM
            m.params_.add("emb", init(arch.vocab + 1, arch.embed_dim, 0.5));
        }
        m.params_.add("w1", init(in_dim, arch.hidden, 1.0 / std::sqrt(in_dim)));
        m.params_.add("b1", Array2D(1, arch.hidden, 0.0));
        m.params_.add("w2", init(arch.hidden, out_dim, 1.0 / std::sqrt(arch.hidden)));
        m.params_.add("b2", Array2D(1, out_dim, 0.0));
        return m;
    }

    Paradigm paradigm() const { return paradigm_; }
    const ModelArch& arch() const { return arch_; }
    uint64_t seed() const { return seed_; }
    bool frozen() const { return frozen_; }

    PolicyModel frozen_clone() const {
        PolicyModel m = *this;
        m.frozen_ = true;
        return m;
    }

    // Mutable access is how updates happen; frozen models refuse it.
    ParamStore& params() {
        if (frozen_) {
            throw std::logic_error("PolicyModel: frozen model rejects parameter updates");
        }
        return params_;
    }
    const ParamStore& params() const { return params_; }

    // ---------------------------------------------------------------- AR

    // sum_t log p(y_t | y_<t, x); <= 0, one term per frame.
    double ar_logprob(const FrameMatrix& x, const TokenSequence& y) const {
        require_paradigm(Paradigm::AR, "ar_logprob");
        Array2D logits = forward_values(ar_features(x, y));
        log_softmax_rows(logits);
        double total = 0.0;
        for (int t = 0; t < logits.rows; ++t) {
            total += logits.at(t, y.tokens[static_cast<size_t>(t)]);
        }
        return total;
    }

    int ar_logprob_node(Tape& tape, const FrameMatrix& x, const TokenSequence& y) {
        require_paradigm(Paradigm::AR, "ar_logprob_node");
        require_trainable("ar_logprob_node");
        const int logits = forward_nodes(tape, ar_features(x, y));
        return tape.logprob_sum(logits, y.tokens, std::vector<double>(y.tokens.size(), 1.0));
    }

    // --------------------------------------------------------------- MGM

    // sum_i m_i log p(y0_i | y_t, x) where y_t replaces masked tokens by MASK.
    double mgm_masked_logprob(const FrameMatrix& x, const TokenSequence& y0, const MaskPattern& mask) const {
        require_paradigm(Paradigm::MGM, "mgm_masked_logprob");
        Array2D logits = mgm_position_logits(x, y0, mask);
        log_softmax_rows(logits);
        double total = 0.0;
        for (int i = 0; i < logits.rows; ++i) {
            if (mask.masked[static_cast<size_t>(i)]) {
                total += logits.at(i, y0.tokens[static_cast<size_t>(i)]);
            }
        }
        return total;
    }

    int mgm_masked_logprob_node(Tape& tape, const FrameMatrix& x, const TokenSequence& y0, const MaskPattern& mask) {
        require_paradigm(Paradigm::MGM, "mgm_masked_logprob_node");
        require_trainable("mgm_masked_logprob_node");
        check_mgm_args(x, y0, mask);
        const int logits = forward_nodes(tape, mgm_features(x, masked_ids(y0, mask)));
        std::vector<double> weights(y0.tokens.size(), 0.0);
        for (size_t i = 0; i < weights.size(); ++i) {
            weights[i] = mask.masked[i] ? 1.0 : 0.0;
        }
        return tape.logprob_sum(logits, y0.tokens, weights);
    }

    // Per-position log-prob rows (each row a valid simplex after exp).
    Array2D mgm_position_logprobs(const FrameMatrix& x, const TokenSequence& y0, const MaskPattern& mask) const {
        Array2D logits = mgm_position_logits(x, y0, mask);
        log_softmax_rows(logits);
        return logits;
    }

    // ---------------------------------------------------------------- FM

    // Predicted velocity for the interpolant y_t at time t, conditioned on x.
    FrameMatrix fm_velocity(const FrameMatrix& y_t, double t, const FrameMatrix& x) const {
        require_paradigm(Paradigm::FM, "fm_velocity");
        check_fm_args(y_t, t, x);
        return forward_values(fm_features(y_t, t, x));
    }

    int fm_velocity_node(Tape& tape, const FrameMatrix& y_t, double t, const FrameMatrix& x) {
        require_paradigm(Paradigm::FM, "fm_velocity_node");
        require_trainable("fm_velocity_node");
        check_fm_args(y_t, t, x);
        return forward_nodes(tape, fm_features(y_t, t, x));
    }

    // Point on the linear path from noise y0 to data y1.
    static FrameMatrix fm_interpolant(const FrameMatrix& y0, const FrameMatrix& y1, double t) {
        if (!y0.same_shape(y1)) {
            throw std::invalid_argument("fm_interpolant: endpoint shapes disagree");
        }
        FrameMatrix out(y0.rows, y0.cols);
        for (size_t i = 0; i < out.size(); ++i) {
            out.data[i] = (1.0 - t) * y0.data[i] + t * y1.data[i];
        }
        return out;
    }

    // ------------------------------------------------------------ sampling

    // Deterministic in (params, x, seed, temperature).
    Restoration sample(const FrameMatrix& x, uint64_t seed, double temperature,
                       const SampleConfig& sc = {}) const {
        if (!(temperature > 0.0)) {
            throw std::invalid_argument("PolicyModel::sample: temperature must be > 0");
        }
        Rng rng(derive_seed(seed, 0x73616d70ull));
        Restoration out;
        out.paradigm = paradigm_;
        switch (paradigm_) {
            case Paradigm::AR: out.tokens = sample_ar(x, rng, temperature); break;
            case Paradigm::MGM: out.tokens = sample_mgm(x, rng, temperature, sc.mgm_steps); break;
            case Paradigm::FM: out.frames = sample_fm(x, rng, temperature, sc.fm_steps); break;
        }
        return out;
    }

    // ----------------------------------------------------- representations

    int input_dim() const {
        switch (paradigm_) {
            case Paradigm::AR: return arch_.context * arch_.embed_dim + arch_.bands;
            case Paradigm::MGM: return 2 * arch_.embed_dim + arch_.bands;
            case Paradigm::FM: return 2 * arch_.bands + arch_.t_embed_dim;
        }
        return 0;
    }

  private:
    // ---- feature construction (shared by both paths via gathered matrices)

    struct Features {
        // Token ids routed through the embedding table, reshaped to one row
        // per position (AR: context window; MGM: the position's own token),
        // then concatenated with dense per-position columns.
        std::vector<int> embed_ids;     // empty for FM
        int ids_per_position{0};
        bool append_mean_context{false};  // MGM: mean-pooled sequence embedding
        Array2D dense;                  // per-position dense features
    };

    double condition(double v) const { return (v + arch_.frame_shift) * arch_.frame_scale; }

    Features ar_features(const FrameMatrix& x, const TokenSequence& y) const {
        if (y.tokens.empty() || x.rows != static_cast<int>(y.tokens.size())) {
            throw std::invalid_argument("ar features: token length must match frame count");
        }
        if (y.vocab_size != arch_.vocab) {
            throw std::invalid_argument("ar features: vocab mismatch");
        }
        Features f;
        f.ids_per_position = arch_.context;
        f.embed_ids.reserve(y.tokens.size() * static_cast<size_t>(arch_.context));
        const int bos = arch_.vocab;
        for (int t = 0; t < static_cast<int>(y.tokens.size()); ++t) {
            for (int k = arch_.context; k >= 1; --k) {
                const int src = t - k;
                f.embed_ids.push_back(src < 0 ? bos : y.tokens[static_cast<size_t>(src)]);
            }
        }
        f.dense = Array2D(x.rows, x.cols);
        for (size_t i = 0; i < x.size(); ++i) {
            f.dense.data[i] = condition(x.data[i]);
        }
        return f;
    }

    Features mgm_features(const FrameMatrix& x, std::vector<int> visible_ids) const {
        Features f;
        f.ids_per_position = 1;
        f.embed_ids = std::move(visible_ids);
        f.append_mean_context = true;
        f.dense = Array2D(x.rows, x.cols);
        for (size_t i = 0; i < x.size(); ++i) {
            f.dense.data[i] = condition(x.data[i]);
        }
        return f;
    }

    Features fm_features(const FrameMatrix& y_t, double t, const FrameMatrix& x) const {
        Features f;
        f.dense = Array2D(y_t.rows, 2 * arch_.bands + arch_.t_embed_dim);
        const std::vector<double> temb = t_embedding(t);
        for (int r = 0; r < y_t.rows; ++r) {
            double* dst = f.dense.row_ptr(r);
            for (int c = 0; c < arch_.bands; ++c) {
                dst[c] = condition(y_t.at(r, c));
                dst[arch_.bands + c] = condition(x.at(r, c));
            }
            std::copy(temb.begin(), temb.end(), dst + 2 * arch_.bands);
        }
        return f;
    }

    std::vector<double> t_embedding(double t) const {
        std::vector<double> out(static_cast<size_t>(arch_.t_embed_dim));
        for (int j = 0; j < arch_.t_embed_dim / 2; ++j) {
            const double omega = 2.0 * M_PI * std::pow(2.0, j);
            out[static_cast<size_t>(2 * j)] = std::sin(omega * t);
            out[static_cast<size_t>(2 * j + 1)] = std::cos(omega * t);
        }
        return out;
    }

    // Both forward paths assemble [embedded ids | mean context | dense] and
    // run the two-layer tanh MLP in the same operation order.
    Array2D forward_values(const Features& f) const {
        const int positions = f.dense.rows;
        Array2D feat;
        if (!f.embed_ids.empty()) {
            const Array2D& emb = params_.value("emb");
            Array2D gathered(static_cast<int>(f.embed_ids.size()), emb.cols);
            for (size_t i = 0; i < f.embed_ids.size(); ++i) {
                std::copy(emb.row_ptr(f.embed_ids[i]), emb.row_ptr(f.embed_ids[i]) + emb.cols,
                          gathered.row_ptr(static_cast<int>(i)));
            }
            gathered.rows = positions;
            gathered.cols = f.ids_per_position * emb.cols;
            if (f.append_mean_context) {
                Array2D mean(1, gathered.cols);
                for (int r = 0; r < positions; ++r) {
                    for (int c = 0; c < gathered.cols; ++c) {
                        mean.data[static_cast<size_t>(c)] += gathered.at(r, c);
                    }
                }
                for (double& v : mean.data) {
                    v /= positions;
                }
                Array2D with_ctx(positions, 2 * gathered.cols);
                for (int r = 0; r < positions; ++r) {
                    std::copy(gathered.row_ptr(r), gathered.row_ptr(r) + gathered.cols, with_ctx.row_ptr(r));
                    std::copy(mean.data.begin(), mean.data.end(), with_ctx.row_ptr(r) + gathered.cols);
                }
                feat = concat_value(with_ctx, f.dense);
            } else {
                feat = concat_value(gathered, f.dense);
            }
        } else {
            feat = f.dense;
        }
        Array2D h = matmul(feat, params_.value("w1"));
        add_row_value(h, params_.value("b1"));
        for (double& v : h.data) {
            v = std::tanh(v);
        }
        Array2D out = matmul(h, params_.value("w2"));
        add_row_value(out, params_.value("b2"));
        return out;
    }

    int forward_nodes(Tape& tape, const Features& f) {
        const int positions = f.dense.rows;
        int feat;
        if (!f.embed_ids.empty()) {
            const int emb = tape.param(params_, "emb");
            int gathered = tape.gather_rows(emb, f.embed_ids);
            gathered = tape.reshape_rows(gathered, positions);
            if (f.append_mean_context) {
                const int ctx = tape.repeat_row(tape.mean_rows(gathered), positions);
                gathered = tape.concat_cols(gathered, ctx);
            }
            feat = tape.concat_cols(gathered, tape.input(f.dense));
        } else {
            feat = tape.input(f.dense);
        }
        const int h = tape.tanh_op(tape.add_row(tape.matmul(feat, tape.param(params_, "w1")),
                                                tape.param(params_, "b1")));
        return tape.add_row(tape.matmul(h, tape.param(params_, "w2")), tape.param(params_, "b2"));
    }

    static Array2D concat_value(const Array2D& a, const Array2D& b) {
        Array2D out(a.rows, a.cols + b.cols);
        for (int r = 0; r < a.rows; ++r) {
            std::copy(a.row_ptr(r), a.row_ptr(r) + a.cols, out.row_ptr(r));
            std::copy(b.row_ptr(r), b.row_ptr(r) + b.cols, out.row_ptr(r) + a.cols);
        }
        return out;
    }

    static void add_row_value(Array2D& a, const Array2D& row) {
        for (int r = 0; r < a.rows; ++r) {
            double* p = a.row_ptr(r);
            for (int c = 0; c < a.cols; ++c) {
                p[c] += row.data[static_cast<size_t>(c)];
            }
        }
    }

    std::vector<int> masked_ids(const TokenSequence& y0, const MaskPattern& mask) const {
        std::vector<int> ids(y0.tokens.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            ids[i] = mask.masked[i] ? arch_.vocab : y0.tokens[i];
        }
        return ids;
    }

    Array2D mgm_position_logits(const FrameMatrix& x, const TokenSequence& y0, const MaskPattern& mask) const {
        require_paradigm(Paradigm::MGM, "mgm logits");
        check_mgm_args(x, y0, mask);
        return forward_values(mgm_features(x, masked_ids(y0, mask)));
    }

    void check_mgm_args(const FrameMatrix& x, const TokenSequence& y0, const MaskPattern& mask) const {
        if (y0.tokens.empty() || x.rows != static_cast<int>(y0.tokens.size()) ||
            mask.masked.size() != y0.tokens.size()) {
            throw std::invalid_argument("mgm: frame count, token count and mask length must agree");
        }
        if (y0.vocab_size != arch_.vocab) {
            throw std::invalid_argument("mgm: vocab mismatch");
        }
        if (mask.count() == 0) {
            throw std::invalid_argument("mgm: mask must cover at least one position");
        }
    }

    void check_fm_args(const FrameMatrix& y_t, double t, const FrameMatrix& x) const {
        if (!(t >= 0.0 && t <= 1.0)) {
            throw std::invalid_argument("fm: t must lie in [0, 1]");
        }
        if (!y_t.same_shape(x) || y_t.cols != arch_.bands) {
            throw std::invalid_argument("fm: y_t and x must share shape frames x bands");
        }
    }

    // ---- samplers

    TokenSequence sample_ar(const FrameMatrix& x, Rng& rng, double temperature) const {
        require_paradigm(Paradigm::AR, "sample");
        TokenSequence y;
        y.vocab_size = arch_.vocab;
        const int bos = arch_.vocab;
        std::vector<int> ctx(static_cast<size_t>(arch_.context), bos);
        for (int t = 0; t < x.rows; ++t) {
            const Array2D& emb = params_.value("emb");
            Array2D feat(1, input_dim());
            double* dst = feat.row_ptr(0);
            for (int k = 0; k < arch_.context; ++k) {
                std::copy(emb.row_ptr(ctx[static_cast<size_t>(k)]), emb.row_ptr(ctx[static_cast<size_t>(k)]) + emb.cols,
                          dst + k * emb.cols);
            }
            for (int c = 0; c < arch_.bands; ++c) {
                dst[arch_.context * emb.cols + c] = condition(x.at(t, c));
            }
            Array2D h = matmul(feat, params_.value("w1"));
            add_row_value(h, params_.value("b1"));
            for (double& v : h.data) {
                v = std::tanh(v);
            }
            Array2D logits = matmul(h, params_.value("w2"));
            add_row_value(logits, params_.value("b2"));
            const int tok = sample_categorical(logits.data, temperature, rng);
            y.tokens.push_back(tok);
            ctx.erase(ctx.begin());
            ctx.push_back(tok);
        }
        return y;
    }

    // Iterative confidence-based unmasking with a cosine schedule.
    TokenSequence sample_mgm(const FrameMatrix& x, Rng& rng, double temperature, int steps) const {
        require_paradigm(Paradigm::MGM, "sample");
        const int len = x.rows;
        TokenSequence y;
        y.vocab_size = arch_.vocab;
        y.tokens.assign(static_cast<size_t>(len), 0);
        MaskPattern mask;
        mask.masked.assign(static_cast<size_t>(len), 1);
        int still_masked = len;
        for (int s = 1; s <= steps && still_masked > 0; ++s) {
            const double keep_ratio = std::cos(0.5 * M_PI * static_cast<double>(s) / steps);
            const int target_masked = s == steps ? 0 : static_cast<int>(std::floor(keep_ratio * len));
            Array2D logits = forward_values(mgm_features(x, masked_ids(y, mask)));
            std::vector<std::pair<double, int>> confidences;  // (-confidence, position)
            std::vector<int> drawn(static_cast<size_t>(len), -1);
            for (int i = 0; i < len; ++i) {
                if (!mask.masked[static_cast<size_t>(i)]) {
                    continue;
                }
                std::vector<double> row(logits.row_ptr(i), logits.row_ptr(i) + logits.cols);
                const int tok = sample_categorical(row, temperature, rng);
                const auto lp = softmax_logprobs(row);
                drawn[static_cast<size_t>(i)] = tok;
                // temperature-scaled Gumbel noise randomizes the unmasking
                // order, which is where decode diversity comes from
                const double gumbel = -std::log(-std::log(std::max(rng.uniform(), 1e-300)));
                confidences.emplace_back(-(lp[static_cast<size_t>(tok)] + temperature * gumbel), i);
            }
            std::sort(confidences.begin(), confidences.end());
            const int to_fix = std::max(still_masked - target_masked, 1);
            for (int k = 0; k < to_fix && k < static_cast<int>(confidences.size()); ++k) {
                const int pos = confidences[static_cast<size_t>(k)].second;
                y.tokens[static_cast<size_t>(pos)] = drawn[static_cast<size_t>(pos)];
                mask.masked[static_cast<size_t>(pos)] = 0;
                --still_masked;
            }
        }
        return y;
    }

    // Euler integration of dy/dt = v(y, t, x) from temperature-scaled
    // Gaussian noise fitted to the world's frame statistics.
    FrameMatrix sample_fm(const FrameMatrix& x, Rng& rng, double temperature, int steps) const {
        require_paradigm(Paradigm::FM, "sample");
        FrameMatrix y(x.rows, arch_.bands);
        for (double& v : y.data) {
            v = arch_.fm_noise_mean + temperature * arch_.fm_noise_std * rng.normal();
        }
        const double dt = 1.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double t = static_cast<double>(k) * dt;
            const FrameMatrix v = fm_velocity(y, t, x);
            for (size_t i = 0; i < y.size(); ++i) {
                y.data[i] += dt * v.data[i];
            }
        }
        return y;
    }

    static int sample_categorical(const std::vector<double>& logits, double temperature, Rng& rng) {
        std::vector<double> scaled(logits.size());
        for (size_t i = 0; i < logits.size(); ++i) {
            scaled[i] = logits[i] / temperature;
        }
        const auto lp = softmax_logprobs(scaled);
        std::vector<double> probs(lp.size());
        for (size_t i = 0; i < lp.size(); ++i) {
            probs[i] = std::exp(lp[i]);
        }
        return rng.categorical(probs);
    }

    void require_paradigm(Paradigm want, const char* what) const {
        if (paradigm_ != want) {
            throw std::logic_error(std::string("PolicyModel::") + what + ": paradigm mismatch (model is " +
                                   paradigm_name(paradigm_) + ")");
        }
    }

    void require_trainable(const char* what) const {
        if (frozen_) {
            throw std::logic_error(std::string("PolicyModel::") + what + ": frozen model has no gradient path");
        }
    }

    Paradigm paradigm_{Paradigm::AR};
    ModelArch arch_;
    uint64_t seed_{0};
    bool frozen_{false};
    ParamStore params_;
};

// Draws an i.i.d. Bernoulli(t) mask, redrawing until at least one position is
// masked. t in (0, 1].
inline MaskPattern draw_mask(Rng& rng, int length, double t) {
    if (!(t > 0.0 && t <= 1.0)) {
        throw std::invalid_argument("draw_mask: mask ratio must lie in (0, 1]");
    }
    MaskPattern mask;
    mask.masked.assign(static_cast<size_t>(length), 0);
    while (mask.count() == 0) {
        for (auto& m : mask.masked) {
            m = rng.uniform() < t ? 1 : 0;
        }
    }
    return mask;
}

// ------------------------------------------------------------- checkpoints

// Binary layout: magic, version, paradigm, arch, seed, config hash, then
// named flat f64 arrays. Round trips bit-exactly.
inline void save_checkpoint(const PolicyModel& model, const std::string& path, uint64_t config_hash = 0) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("save_checkpoint: cannot open " + path);
    }
    auto put_u32 = [&f](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&f](uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    auto put_i32 = [&f](int v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_f64 = [&f](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    f.write("PALN", 4);
    put_u32(1);  // version
    put_u32(static_cast<uint32_t>(model.paradigm()));
    const ModelArch& a = model.arch();
    put_i32(a.vocab);
    put_i32(a.embed_dim);
    put_i32(a.hidden);
    put_i32(a.context);
    put_i32(a.bands);
    put_i32(a.t_embed_dim);
    put_f64(a.frame_shift);
    put_f64(a.frame_scale);
    put_f64(a.fm_noise_mean);
    put_f64(a.fm_noise_std);
    put_u64(model.seed());
    put_u64(config_hash);
    const auto& names = model.params().names();
    put_u32(static_cast<uint32_t>(names.size()));
    for (const auto& name : names) {
        put_u32(static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Array2D& v = model.params().value(name);
        put_i32(v.rows);
        put_i32(v.cols);
        f.write(reinterpret_cast<const char*>(v.data.data()), static_cast<std::streamsize>(v.size() * 8));
    }
}

struct Checkpoint {
    PolicyModel model;
    uint64_t config_hash{0};
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("load_checkpoint: cannot open " + path);
    }
    auto get_u32 = [&f]() {
        uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&f]() {
        uint64_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto get_i32 = [&f]() {
        int v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    char magic[4] = {};
    f.read(magic, 4);
    if (std::memcmp(magic, "PALN", 4) != 0) {
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    }
    if (get_u32() != 1) {
        throw std::runtime_error("load_checkpoint: unsupported version in " + path);
    }
    const Paradigm paradigm = static_cast<Paradigm>(get_u32());
    auto get_f64 = [&f]() {
        double v = 0.0;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    ModelArch arch;
    arch.vocab = get_i32();
    arch.embed_dim = get_i32();
    arch.hidden = get_i32();
    arch.context = get_i32();
    arch.bands = get_i32();
    arch.t_embed_dim = get_i32();
    arch.frame_shift = get_f64();
    arch.frame_scale = get_f64();
    arch.fm_noise_mean = get_f64();
    arch.fm_noise_std = get_f64();
    const uint64_t seed = get_u64();
    Checkpoint out{PolicyModel::create(paradigm, arch, seed), get_u64()};
    const uint32_t n = get_u32();
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t len = get_u32();
        std::string name(len, '\0');
        f.read(name.data(), len);
        const int rows = get_i32();
        const int cols = get_i32();
        Array2D v(rows, cols);
        f.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(v.size() * 8));
        if (!f) {
            throw std::runtime_error("load_checkpoint: truncated payload in " + path);
        }
        if (!out.model.params().value(name).same_shape(v)) {
            throw std::runtime_error("load_checkpoint: parameter shape mismatch for '" + name + "' in " + path);
        }
        out.model.params().value(name) = std::move(v);
    }
    return out;
}

}  // namespace prefalign
