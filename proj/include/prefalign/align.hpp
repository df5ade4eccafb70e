// DPO losses for the three paradigms, SFT baselines, and the training loop
// with reward-margin telemetry. The implicit-reward partition functions
// cancel inside every sigmoid argument, so none is ever computed.
//
//   AR:  -log sigmoid( beta * [dlogp(y_w) - dlogp(y_l)] ),
//        dlogp = log p_policy - log p_ref over whole token sequences
//   MGM: same contrast on masked log-probs, one mask-ratio draw per step,
//        independent Bernoulli patterns for winner and loser
//   FM:  -log sigmoid( -beta * (D_w - D_l) ),
//        D = |v_policy - v*|^2 - |v_ref - v*|^2 at one sampled (t, y0)

#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefalign/curation.hpp"
#include "prefalign/models.hpp"
#include "prefalign/optim.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/tape.hpp"

namespace prefalign {

struct DpoConfig {
    double beta{1.0};
    Paradigm paradigm{Paradigm::AR};
    int steps{2000};
    int batch_pairs{8};
    OptimConfig optimizer;
    bool shared_noise{true};       // FM: one (t, y0) draw serves winner and loser
    bool length_normalize{false};  // AR: divide sequence log-ratios by token count
    uint64_t seed{0};

    void validate() const {
        if (!(beta > 0.0)) {
            throw std::invalid_argument("DpoConfig: beta must be > 0");
        }
        if (batch_pairs < 1 || steps < 0) {
            throw std::invalid_argument("DpoConfig: batch_pairs must be >= 1 and steps >= 0");
        }
        optimizer.validate();
    }
};

// Per-step training telemetry. reward_margin is the mean sigmoid argument;
// reward_accuracy the fraction of pairs with positive margin (exact zeros
// count half, so an untouched policy reads 0.5 rather than 0).
struct RewardTelemetry {
    int step{0};
    double loss{0.0};
    double reward_margin{0.0};
    double reward_accuracy{0.5};
};

struct DpoResult {
    double loss{0.0};
    double margin{0.0};
};

namespace detail {

inline void require_pair_models(const PolicyModel& policy, const PolicyModel& reference, Paradigm want,
                                const char* what) {
    if (policy.paradigm() != want || reference.paradigm() != want) {
        throw std::logic_error(std::string(what) + ": paradigm mismatch");
    }
    if (!reference.frozen()) {
        throw std::logic_error(std::string(what) + ": reference model must be frozen");
    }
    if (policy.frozen()) {
        throw std::logic_error(std::string(what) + ": policy model must be trainable");
    }
}

inline double accuracy_vote(double margin) { return margin > 0.0 ? 1.0 : (margin == 0.0 ? 0.5 : 0.0); }

// FM pairs may carry different frame counts; trim both outputs and the
// conditioning to the shared prefix.
struct FmPairView {
    FrameMatrix x;
    FrameMatrix y_w;
    FrameMatrix y_l;
};

inline FmPairView fm_pair_view(const PreferencePair& pair) {
    if (pair.y_w.frames.cols != pair.y_l.frames.cols) {
        throw std::invalid_argument("fm pair: winner and loser band counts disagree");
    }
    const int frames = std::min({pair.y_w.frames.rows, pair.y_l.frames.rows, pair.x.rows});
    if (frames < 1) {
        throw std::invalid_argument("fm pair: empty frame payload");
    }
    auto take = [frames](const FrameMatrix& src) {
        FrameMatrix out(frames, src.cols);
        std::copy(src.data.begin(), src.data.begin() + static_cast<size_t>(frames) * src.cols, out.data.begin());
        return out;
    };
    return {take(pair.x), take(pair.y_w.frames), take(pair.y_l.frames)};
}

}  // namespace detail

// ------------------------------------------------------------------- AR DPO

inline int dpo_loss_ar_node(Tape& tape, PolicyModel& policy, const PolicyModel& reference,
                            const PreferencePair& pair, double beta, bool length_normalize, double* margin_out) {
    detail::require_pair_models(policy, reference, Paradigm::AR, "dpo_loss_ar");
    const double len_w = length_normalize ? static_cast<double>(pair.y_w.tokens.tokens.size()) : 1.0;
    const double len_l = length_normalize ? static_cast<double>(pair.y_l.tokens.tokens.size()) : 1.0;
    // subtract each reference log-prob from its own policy term first, so a
    // policy identical to the reference cancels exactly
    const int dlp_w = tape.scale(tape.add(policy.ar_logprob_node(tape, pair.x, pair.y_w.tokens),
                                          tape.input(Array2D(1, 1, -reference.ar_logprob(pair.x, pair.y_w.tokens)))),
                                 1.0 / len_w);
    const int dlp_l = tape.scale(tape.add(policy.ar_logprob_node(tape, pair.x, pair.y_l.tokens),
                                          tape.input(Array2D(1, 1, -reference.ar_logprob(pair.x, pair.y_l.tokens)))),
                                 1.0 / len_l);
    const int z = tape.scale(tape.sub(dlp_w, dlp_l), beta);
    if (margin_out != nullptr) {
        *margin_out = tape.scalar(z);
    }
    return tape.scale(tape.log_sigmoid_op(z), -1.0);
}

inline DpoResult dpo_loss_ar(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair,
                             double beta, bool length_normalize = false) {
    if (policy.paradigm() != Paradigm::AR || reference.paradigm() != Paradigm::AR) {
        throw std::logic_error("dpo_loss_ar: paradigm mismatch");
    }
    const double len_w = length_normalize ? static_cast<double>(pair.y_w.tokens.tokens.size()) : 1.0;
    const double len_l = length_normalize ? static_cast<double>(pair.y_l.tokens.tokens.size()) : 1.0;
    const double z = beta * ((policy.ar_logprob(pair.x, pair.y_w.tokens) -
                              reference.ar_logprob(pair.x, pair.y_w.tokens)) / len_w -
                             (policy.ar_logprob(pair.x, pair.y_l.tokens) -
                              reference.ar_logprob(pair.x, pair.y_l.tokens)) / len_l);
    return {-log_sigmoid(z), z};
}

// ------------------------------------------------------------------ MGM DPO

// One mask-ratio draw t per call; winner and loser get independent Bernoulli
// patterns at the same ratio (their lengths may differ). Degenerate
// all-unmasked draws are redrawn inside draw_mask.
struct MgmDraw {
    double t{0.5};
    MaskPattern mask_w;
    MaskPattern mask_l;
};

inline MgmDraw mgm_draw(const PreferencePair& pair, uint64_t t_seed) {
    Rng rng(derive_seed(t_seed, 0x6d676d64ull));
    MgmDraw d;
    d.t = 1.0 - rng.uniform();  // (0, 1]
    d.mask_w = draw_mask(rng, static_cast<int>(pair.y_w.tokens.tokens.size()), d.t);
    d.mask_l = draw_mask(rng, static_cast<int>(pair.y_l.tokens.tokens.size()), d.t);
    return d;
}

inline int dpo_loss_mgm_node(Tape& tape, PolicyModel& policy, const PolicyModel& reference,
                             const PreferencePair& pair, double beta, uint64_t t_seed, double* margin_out) {
    detail::require_pair_models(policy, reference, Paradigm::MGM, "dpo_loss_mgm");
    const MgmDraw d = mgm_draw(pair, t_seed);
    const int dlp_w =
        tape.add(policy.mgm_masked_logprob_node(tape, pair.x, pair.y_w.tokens, d.mask_w),
                 tape.input(Array2D(1, 1, -reference.mgm_masked_logprob(pair.x, pair.y_w.tokens, d.mask_w))));
    const int dlp_l =
        tape.add(policy.mgm_masked_logprob_node(tape, pair.x, pair.y_l.tokens, d.mask_l),
                 tape.input(Array2D(1, 1, -reference.mgm_masked_logprob(pair.x, pair.y_l.tokens, d.mask_l))));
    const int z = tape.scale(tape.sub(dlp_w, dlp_l), beta);
    if (margin_out != nullptr) {
        *margin_out = tape.scalar(z);
    }
    return tape.scale(tape.log_sigmoid_op(z), -1.0);
}

inline DpoResult dpo_loss_mgm(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair,
                              double beta, uint64_t t_seed) {
    if (policy.paradigm() != Paradigm::MGM || reference.paradigm() != Paradigm::MGM) {
        throw std::logic_error("dpo_loss_mgm: paradigm mismatch");
    }
    const MgmDraw d = mgm_draw(pair, t_seed);
    const double z = beta * ((policy.mgm_masked_logprob(pair.x, pair.y_w.tokens, d.mask_w) -
                              reference.mgm_masked_logprob(pair.x, pair.y_w.tokens, d.mask_w)) -
                             (policy.mgm_masked_logprob(pair.x, pair.y_l.tokens, d.mask_l) -
                              reference.mgm_masked_logprob(pair.x, pair.y_l.tokens, d.mask_l)));
    return {-log_sigmoid(z), z};
}

// ------------------------------------------------------------------- FM DPO

struct FmDraw {
    double t{0.5};
    FrameMatrix noise_w;
    FrameMatrix noise_l;  // equals noise_w under shared noise
};

inline FmDraw fm_draw(int frames, int bands, uint64_t t_seed, bool shared_noise, double noise_mean,
                      double noise_std) {
    Rng rng(derive_seed(t_seed, 0x666d6472ull));
    FmDraw d;
    d.t = rng.uniform();
    d.noise_w = FrameMatrix(frames, bands);
    for (double& v : d.noise_w.data) {
        v = noise_mean + noise_std * rng.normal();
    }
    if (shared_noise) {
        d.noise_l = d.noise_w;
    } else {
        d.noise_l = FrameMatrix(frames, bands);
        for (double& v : d.noise_l.data) {
            v = noise_mean + noise_std * rng.normal();
        }
    }
    return d;
}

namespace detail {

inline FrameMatrix velocity_target(const FrameMatrix& y1, const FrameMatrix& y0) {
    FrameMatrix out(y1.rows, y1.cols);
    for (size_t i = 0; i < out.size(); ++i) {
        out.data[i] = y1.data[i] - y0.data[i];
    }
    return out;
}

inline double sse_value(const FrameMatrix& a, const FrameMatrix& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s;
}

}  // namespace detail

inline int dpo_loss_fm_node(Tape& tape, PolicyModel& policy, const PolicyModel& reference,
                            const PreferencePair& pair, double beta, uint64_t t_seed, bool shared_noise,
                            double* margin_out) {
    detail::require_pair_models(policy, reference, Paradigm::FM, "dpo_loss_fm");
    const detail::FmPairView v = detail::fm_pair_view(pair);
    const FmDraw d = fm_draw(v.y_w.rows, v.y_w.cols, t_seed, shared_noise, policy.arch().fm_noise_mean,
                             policy.arch().fm_noise_std);

    const FrameMatrix yt_w = PolicyModel::fm_interpolant(d.noise_w, v.y_w, d.t);
    const FrameMatrix yt_l = PolicyModel::fm_interpolant(d.noise_l, v.y_l, d.t);
    const FrameMatrix target_w = detail::velocity_target(v.y_w, d.noise_w);
    const FrameMatrix target_l = detail::velocity_target(v.y_l, d.noise_l);

    // D = sse_policy - sse_ref per sample; z = -beta * (D_w - D_l)
    const int delta_w =
        tape.add(tape.sse(policy.fm_velocity_node(tape, yt_w, d.t, v.x), tape.input(target_w)),
                 tape.input(Array2D(1, 1, -detail::sse_value(reference.fm_velocity(yt_w, d.t, v.x), target_w))));
    const int delta_l =
        tape.add(tape.sse(policy.fm_velocity_node(tape, yt_l, d.t, v.x), tape.input(target_l)),
                 tape.input(Array2D(1, 1, -detail::sse_value(reference.fm_velocity(yt_l, d.t, v.x), target_l))));
    const int z = tape.scale(tape.sub(delta_w, delta_l), -beta);
    if (margin_out != nullptr) {
        *margin_out = tape.scalar(z);
    }
    return tape.scale(tape.log_sigmoid_op(z), -1.0);
}

inline DpoResult dpo_loss_fm(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair,
                             double beta, uint64_t t_seed, bool shared_noise = true) {
    if (policy.paradigm() != Paradigm::FM || reference.paradigm() != Paradigm::FM) {
        throw std::logic_error("dpo_loss_fm: paradigm mismatch");
    }
    const detail::FmPairView v = detail::fm_pair_view(pair);
    const FmDraw d = fm_draw(v.y_w.rows, v.y_w.cols, t_seed, shared_noise, policy.arch().fm_noise_mean,
                             policy.arch().fm_noise_std);
    const FrameMatrix yt_w = PolicyModel::fm_interpolant(d.noise_w, v.y_w, d.t);
    const FrameMatrix yt_l = PolicyModel::fm_interpolant(d.noise_l, v.y_l, d.t);
    const FrameMatrix target_w = detail::velocity_target(v.y_w, d.noise_w);
    const FrameMatrix target_l = detail::velocity_target(v.y_l, d.noise_l);
    const double delta_w = detail::sse_value(policy.fm_velocity(yt_w, d.t, v.x), target_w) -
                           detail::sse_value(reference.fm_velocity(yt_w, d.t, v.x), target_w);
    const double delta_l = detail::sse_value(policy.fm_velocity(yt_l, d.t, v.x), target_l) -
                           detail::sse_value(reference.fm_velocity(yt_l, d.t, v.x), target_l);
    const double z = -beta * (delta_w - delta_l);
    return {-log_sigmoid(z), z};
}

// Paradigm dispatch used by the trainer and the margin evaluator.
inline DpoResult dpo_loss(const PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair,
                          const DpoConfig& cfg, uint64_t t_seed) {
    switch (cfg.paradigm) {
        case Paradigm::AR: return dpo_loss_ar(policy, reference, pair, cfg.beta, cfg.length_normalize);
        case Paradigm::MGM: return dpo_loss_mgm(policy, reference, pair, cfg.beta, t_seed);
        case Paradigm::FM: return dpo_loss_fm(policy, reference, pair, cfg.beta, t_seed, cfg.shared_noise);
    }
    throw std::logic_error("dpo_loss: unreachable");
}

inline int dpo_loss_node(Tape& tape, PolicyModel& policy, const PolicyModel& reference, const PreferencePair& pair,
                         const DpoConfig& cfg, uint64_t t_seed, double* margin_out) {
    switch (cfg.paradigm) {
        case Paradigm::AR:
            return dpo_loss_ar_node(tape, policy, reference, pair, cfg.beta, cfg.length_normalize, margin_out);
        case Paradigm::MGM: return dpo_loss_mgm_node(tape, policy, reference, pair, cfg.beta, t_seed, margin_out);
        case Paradigm::FM:
            return dpo_loss_fm_node(tape, policy, reference, pair, cfg.beta, t_seed, cfg.shared_noise, margin_out);
    }
    throw std::logic_error("dpo_loss_node: unreachable");
}

// --------------------------------------------------------------------- SFT

struct SftExample {
    FrameMatrix x;
    Restoration target;
};

// The paradigm's pretraining objective on (x, target): token cross-entropy
// for AR, masked cross-entropy for MGM (one mask draw), velocity MSE for FM
// (one (t, y0) draw). Losses are per-token / per-element means.
inline int sft_loss_node(Tape& tape, PolicyModel& policy, const SftExample& ex, uint64_t draw_seed) {
    if (policy.paradigm() != ex.target.paradigm) {
        throw std::logic_error("sft_loss: paradigm mismatch between policy and target");
    }
    switch (policy.paradigm()) {
        case Paradigm::AR: {
            const double n = static_cast<double>(ex.target.tokens.tokens.size());
            return tape.scale(policy.ar_logprob_node(tape, ex.x, ex.target.tokens), -1.0 / n);
        }
        case Paradigm::MGM: {
            Rng rng(derive_seed(draw_seed, 0x7366746dull));
            const double t = 1.0 - rng.uniform();
            const MaskPattern mask = draw_mask(rng, static_cast<int>(ex.target.tokens.tokens.size()), t);
            return tape.scale(policy.mgm_masked_logprob_node(tape, ex.x, ex.target.tokens, mask),
                              -1.0 / mask.count());
        }
        case Paradigm::FM: {
            Rng rng(derive_seed(draw_seed, 0x73667466ull));
            const double t = rng.uniform();
            FrameMatrix y0(ex.target.frames.rows, ex.target.frames.cols);
            for (double& v : y0.data) {
                v = policy.arch().fm_noise_mean + policy.arch().fm_noise_std * rng.normal();
            }
            const FrameMatrix y_t = PolicyModel::fm_interpolant(y0, ex.target.frames, t);
            const FrameMatrix target = detail::velocity_target(ex.target.frames, y0);
            const int sse = tape.sse(policy.fm_velocity_node(tape, y_t, t, ex.x), tape.input(target));
            return tape.scale(sse, 1.0 / static_cast<double>(target.size()));
        }
    }
    throw std::logic_error("sft_loss_node: unreachable");
}

inline double sft_loss(PolicyModel& policy, const SftExample& ex, uint64_t draw_seed) {
    Tape tape;
    return tape.scalar(sft_loss_node(tape, policy, ex, draw_seed));
}

// Winner outputs of a preference dataset as SFT targets.
inline std::vector<SftExample> winners_as_sft(const std::vector<PreferencePair>& pairs) {
    std::vector<SftExample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back({p.x, p.y_w});
    }
    return out;
}

// ---------------------------------------------------------------- training

struct TrainResult {
    std::vector<RewardTelemetry> telemetry;
};

// Clones the policy into a frozen reference (or trains against a caller-held
// frozen reference), then runs minibatch Adam on the DPO loss. Deterministic
// in cfg.seed. The policy is aligned in place.
inline TrainResult train_dpo(PolicyModel& policy, const std::vector<PreferencePair>& dataset, const DpoConfig& cfg,
                             const PolicyModel* external_reference = nullptr) {
    cfg.validate();
    if (dataset.empty()) {
        throw std::invalid_argument("train_dpo: dataset is empty");
    }
    if (policy.paradigm() != cfg.paradigm) {
        throw std::logic_error("train_dpo: config paradigm does not match policy");
    }
    for (const auto& p : dataset) {
        if (p.paradigm != cfg.paradigm) {
            throw std::invalid_argument("train_dpo: dataset pair paradigm does not match config");
        }
    }
    const PolicyModel reference = external_reference != nullptr ? *external_reference : policy.frozen_clone();
    Rng rng(derive_seed(cfg.seed, 0x7472656eull));
    TrainResult result;
    result.telemetry.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 1; step <= cfg.steps; ++step) {
        policy.params().zero_grad();
        double loss_acc = 0.0;
        double margin_acc = 0.0;
        double acc_acc = 0.0;
        for (int b = 0; b < cfg.batch_pairs; ++b) {
            const auto& pair = dataset[static_cast<size_t>(rng.uniform_int(static_cast<int>(dataset.size())))];
            const uint64_t t_seed = rng.next_u64();
            Tape tape;
            double margin = 0.0;
            const int loss = dpo_loss_node(tape, policy, reference, pair, cfg, t_seed, &margin);
            tape.backward(loss);
            loss_acc += tape.scalar(loss);
            margin_acc += margin;
            acc_acc += detail::accuracy_vote(margin);
        }
        policy.params().scale_grad(1.0 / cfg.batch_pairs);
        adam_step(policy.params(), cfg.optimizer, step);
        result.telemetry.push_back({step, loss_acc / cfg.batch_pairs, margin_acc / cfg.batch_pairs,
                                    acc_acc / cfg.batch_pairs});
    }
    return result;
}

// Minibatch Adam on the paradigm pretraining loss; used for pretraining and
// for the SFT-GT / SFT-Winner baselines. Telemetry carries the loss only
// (margin 0, accuracy 0.5 placeholders).
inline TrainResult train_sft(PolicyModel& policy, const std::vector<SftExample>& examples, const DpoConfig& cfg) {
    cfg.validate();
    if (examples.empty()) {
        throw std::invalid_argument("train_sft: no examples");
    }
    Rng rng(derive_seed(cfg.seed, 0x73667472ull));
    TrainResult result;
    result.telemetry.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 1; step <= cfg.steps; ++step) {
        policy.params().zero_grad();
        double loss_acc = 0.0;
        for (int b = 0; b < cfg.batch_pairs; ++b) {
            const auto& ex = examples[static_cast<size_t>(rng.uniform_int(static_cast<int>(examples.size())))];
            const uint64_t draw_seed = rng.next_u64();
            Tape tape;
            const int loss = sft_loss_node(tape, policy, ex, draw_seed);
            tape.backward(loss);
            loss_acc += tape.scalar(loss);
        }
        policy.params().scale_grad(1.0 / cfg.batch_pairs);
        adam_step(policy.params(), cfg.optimizer, step);
        result.telemetry.push_back({step, loss_acc / cfg.batch_pairs, 0.0, 0.5});
    }
    return result;
}

// Margin statistics of a trained policy against a frozen reference over a
// pair set; value paths only. Used for held-out reward accuracy.
struct MarginReport {
    double mean_margin{0.0};
    double accuracy{0.5};
};

// The MGM and FM margins are expectations over (t, mask/noise); several
// draws per pair keep the estimator variance below the decision threshold.
inline MarginReport evaluate_margins(const PolicyModel& policy, const PolicyModel& reference,
                                     const std::vector<PreferencePair>& pairs, const DpoConfig& cfg, uint64_t seed,
                                     int draws_per_pair = 8) {
    if (pairs.empty()) {
        throw std::invalid_argument("evaluate_margins: no pairs");
    }
    if (draws_per_pair < 1) {
        throw std::invalid_argument("evaluate_margins: need at least one draw per pair");
    }
    Rng rng(derive_seed(seed, 0x6d726570ull));
    MarginReport rep;
    rep.mean_margin = 0.0;
    rep.accuracy = 0.0;
    const int draws = cfg.paradigm == Paradigm::AR ? 1 : draws_per_pair;  // AR margins are exact
    for (const auto& pair : pairs) {
        double margin = 0.0;
        for (int d = 0; d < draws; ++d) {
            margin += dpo_loss(policy, reference, pair, cfg, rng.next_u64()).margin / draws;
        }
        rep.mean_margin += margin / static_cast<double>(pairs.size());
        rep.accuracy += detail::accuracy_vote(margin) / static_cast<double>(pairs.size());
    }
    return rep;
}

// ------------------------------------------------------------- persistence

// Exponential smoothing used for reported training curves.
inline std::vector<double> ema_smooth(const std::vector<double>& values, double factor = 0.99) {
    std::vector<double> out;
    out.reserve(values.size());
    double s = values.empty() ? 0.0 : values.front();
    for (double v : values) {
        s = factor * s + (1.0 - factor) * v;
        out.push_back(s);
    }
    return out;
}

// Headered tab-separated telemetry table with the config hash up top.
inline void write_telemetry(const std::vector<RewardTelemetry>& series, const std::string& path,
                            uint64_t config_hash = 0) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("write_telemetry: cannot open " + path);
    }
    std::ostringstream hash;
    hash << std::hex << config_hash;
    f << "# config_hash=" << hash.str() << "\n";
    f << "step\tloss\treward_margin\treward_accuracy\n";
    f.precision(17);
    for (const auto& row : series) {
        f << row.step << "\t" << row.loss << "\t" << row.reward_margin << "\t" << row.reward_accuracy << "\n";
    }
}

inline std::vector<RewardTelemetry> read_telemetry(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("read_telemetry: cannot open " + path);
    }
    std::vector<RewardTelemetry> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("step\t", 0) == 0) {
            continue;
        }
        std::istringstream ss(line);
        RewardTelemetry row;
        ss >> row.step >> row.loss >> row.reward_margin >> row.reward_accuracy;
        out.push_back(row);
    }
    return out;
}

}  // namespace prefalign
