// Experiment orchestration shared by the CLI and the test suites: the
// synthetic utterance corpus, pretraining, and the curation stage wiring.

#pragma once

#include <string>
#include <vector>

#include "prefalign/align.hpp"
#include "prefalign/config.hpp"
#include "prefalign/curation.hpp"
#include "prefalign/metrics.hpp"
#include "prefalign/models.hpp"
#include "prefalign/quantizer.hpp"
#include "prefalign/signal.hpp"

namespace prefalign {

struct Utterance {
    int id{0};
    Signal clean;
    Signal degraded;
    FrameMatrix x;             // degraded frames (model conditioning)
    FrameMatrix clean_frames;  // FM ground truth
    TokenSequence clean_tokens;
};

// Deterministic utterance factory plus the frozen codebook. Utterances for
// any id are derivable on demand; the codebook trains once on clean frames
// from a dedicated id range that never overlaps train or test splits.
class World {
  public:
    explicit World(const RunConfig& cfg) : cfg_(cfg) {
        std::vector<FrameMatrix> codebook_frames;
        for (int i = 0; i < cfg.world_codebook_utterances; ++i) {
            codebook_frames.push_back(
                frames_of(make_clean(derive_seed(cfg.seed, kCodebookBase + static_cast<uint64_t>(i)),
                                     cfg.world_duration_frames, spec_),
                          spec_));
        }
        codebook_ = Codebook::train(codebook_frames, cfg.world_vocab, derive_seed(cfg.seed, 0x636f6465ull));
    }

    const Codebook& codebook() const { return codebook_; }
    const FrameSpec& frame_spec() const { return spec_; }
    const RunConfig& config() const { return cfg_; }

    ModelArch arch() const {
        ModelArch a;
        a.vocab = cfg_.world_vocab;
        a.embed_dim = cfg_.arch_embed_dim;
        a.hidden = cfg_.arch_hidden;
        a.context = cfg_.arch_context;
        a.bands = spec_.bands;
        return a;
    }

    // Standard-domain utterance: additive noise always on, each further
    // degradation with probability one half.
    Utterance utterance(int id) const {
        Rng rng(derive_seed(cfg_.seed, kUtteranceBase + static_cast<uint64_t>(id)));
        DegradationSpec d;
        d.seed = rng.next_u64();
        d.noise_snr_db = rng.uniform(cfg_.world_snr_min, cfg_.world_snr_max);
        if (rng.uniform() < 0.5) {
            d.lowpass_cutoff_hz = rng.uniform(cfg_.world_cutoff_min, cfg_.world_cutoff_max);
        }
        if (rng.uniform() < 0.5) {
            d.clip_threshold = rng.uniform(cfg_.world_clip_min, cfg_.world_clip_max);
        }
        if (rng.uniform() < 0.5) {
            d.smear_len = 1 + rng.uniform_int(cfg_.world_smear_max);
        }
        return build(id, kUtteranceBase, d);
    }

    // Data-scarce domain for the pseudo-labeling application: every
    // degradation active and much lower SNR.
    Utterance heavy_utterance(int id) const {
        Rng rng(derive_seed(cfg_.seed, kHeavyBase + static_cast<uint64_t>(id)));
        DegradationSpec d;
        d.seed = rng.next_u64();
        d.noise_snr_db = rng.uniform(cfg_.world_heavy_snr_min, cfg_.world_heavy_snr_max);
        d.lowpass_cutoff_hz = rng.uniform(cfg_.world_cutoff_min, cfg_.world_cutoff_max);
        d.clip_threshold = rng.uniform(cfg_.world_clip_min, cfg_.world_clip_max);
        d.smear_len = 1 + rng.uniform_int(cfg_.world_smear_max);
        return build(id, kHeavyBase, d);
    }

    Restoration ground_truth(Paradigm paradigm, const Utterance& utt) const {
        Restoration r;
        r.paradigm = paradigm;
        if (paradigm == Paradigm::FM) {
            r.frames = utt.clean_frames;
        } else {
            r.tokens = utt.clean_tokens;
        }
        return r;
    }

    std::vector<int> train_ids() const {
        return id_range(0, cfg_.data_train_utterances);
    }
    std::vector<int> test_ids() const {
        return id_range(cfg_.data_train_utterances, cfg_.data_test_utterances);
    }

  private:
    static constexpr uint64_t kCodebookBase = 0x1000000000ull;
    static constexpr uint64_t kUtteranceBase = 0x2000000000ull;
    static constexpr uint64_t kHeavyBase = 0x3000000000ull;

    static std::vector<int> id_range(int from, int count) {
        std::vector<int> out(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            out[static_cast<size_t>(i)] = from + i;
        }
        return out;
    }

    Utterance build(int id, uint64_t domain, const DegradationSpec& d) const {
        Utterance u;
        u.id = id;
        u.clean = make_clean(derive_seed(cfg_.seed, domain + 0x10000000ull + static_cast<uint64_t>(id)),
                             cfg_.world_duration_frames, spec_);
        u.degraded = degrade(u.clean, d);
        u.x = frames_of(u.degraded, spec_);
        u.clean_frames = frames_of(u.clean, spec_);
        u.clean_tokens = codebook_.tokenize(u.clean_frames);
        return u;
    }

    RunConfig cfg_;
    FrameSpec spec_{};
    Codebook codebook_;
};

// ---------------------------------------------------------------- pretrain

// Ground-truth SFT on the train split; this is the "before alignment" model.
inline PolicyModel pretrain(const World& world, Paradigm paradigm, std::vector<RewardTelemetry>* telemetry = nullptr) {
    const RunConfig& cfg = world.config();
    PolicyModel model = PolicyModel::create(paradigm, world.arch(), derive_seed(cfg.seed, 0x70726531ull));
    std::vector<SftExample> examples;
    for (int id : world.train_ids()) {
        const Utterance u = world.utterance(id);
        examples.push_back({u.x, world.ground_truth(paradigm, u)});
    }
    DpoConfig tc;
    tc.paradigm = paradigm;
    tc.steps = cfg.pretrain_steps;
    tc.batch_pairs = cfg.pretrain_batch;
    tc.optimizer.learning_rate = cfg.pretrain_lr;
    tc.optimizer.warmup_steps = cfg.pretrain_warmup;
    tc.optimizer.schedule = Schedule::InverseSqrt;
    tc.seed = derive_seed(cfg.seed, 0x70726532ull + static_cast<uint64_t>(paradigm));
    const TrainResult result = train_sft(model, examples, tc);
    if (telemetry != nullptr) {
        *telemetry = result.telemetry;
    }
    return model;
}

// ------------------------------------------------------------------ curate

struct CurationOutput {
    std::vector<PreferencePair> pairs;
    size_t candidate_count{0};
    size_t utterance_count{0};
};

// Candidate generation plus pair formation over an id range. criterion is
// "multi", "single:<metric>" or "gt_winner".
inline CurationOutput curate(const World& world, const PolicyModel& model, const std::vector<int>& ids,
                             const std::string& criterion) {
    const RunConfig& cfg = world.config();
    CurationOutput out;
    out.utterance_count = ids.size();
    for (int id : ids) {
        const Utterance u = world.utterance(id);
        std::vector<uint64_t> seeds;
        for (int c = 0; c < cfg.curate_candidates; ++c) {
            seeds.push_back(derive_seed(cfg.seed, 0x63616e64ull + static_cast<uint64_t>(id) * 131 +
                                                      static_cast<uint64_t>(c)));
        }
        const CandidateSet cs = generate_candidates(model, id, u.x, u.clean, u.degraded, world.codebook(), seeds,
                                                    cfg.curate_temperatures, world.frame_spec());
        out.candidate_count += cs.candidates.size();
        std::vector<PreferencePair> pairs;
        if (criterion == criterion_multi()) {
            pairs = form_pairs_unanimous(cs, cfg.curate_pair_cap);
        } else if (criterion.rfind("single:", 0) == 0) {
            pairs = form_pairs_single(cs, metric_role_from_name(criterion.substr(7)), cfg.curate_single_margin,
                                      cfg.curate_pair_cap);
        } else if (criterion == criterion_gt_winner()) {
            const Restoration gt = world.ground_truth(model.paradigm(), u);
            const ScoreCard gt_card = score(restoration_to_signal(gt, world.codebook(), world.frame_spec()),
                                            u.clean, u.degraded, world.frame_spec());
            pairs = form_pairs_gt_winner(cs, gt, gt_card);
        } else {
            throw std::invalid_argument("curate: unknown criterion '" + criterion + "'");
        }
        for (auto& p : pairs) {
            out.pairs.push_back(std::move(p));
        }
    }
    return out;
}

// DpoConfig assembled from the run config for one paradigm.
inline DpoConfig dpo_config_for(const RunConfig& cfg, Paradigm paradigm) {
    DpoConfig dc;
    dc.paradigm = paradigm;
    dc.steps = cfg.dpo_steps;
    dc.batch_pairs = cfg.dpo_batch;
    dc.optimizer.learning_rate = cfg.dpo_lr;
    dc.optimizer.warmup_steps = cfg.dpo_warmup;
    dc.optimizer.schedule = Schedule::InverseSqrt;
    dc.shared_noise = cfg.dpo_shared_noise;
    dc.length_normalize = cfg.dpo_length_normalize;
    dc.seed = derive_seed(cfg.seed, 0x64706f63ull + static_cast<uint64_t>(paradigm));
    switch (paradigm) {
        case Paradigm::AR: dc.beta = cfg.dpo_beta_ar; break;
        case Paradigm::MGM: dc.beta = cfg.dpo_beta_mgm; break;
        case Paradigm::FM: dc.beta = cfg.dpo_beta_fm; break;
    }
    return dc;
}

}  // namespace prefalign
