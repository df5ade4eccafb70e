// Evaluation harness and the analysis experiments: before/after metric
// tables, preference-vector cosine structure, the in-/cross-paradigm
// alignment grid, the metric-vote preference comparison and the
// pseudo-labeling application.

#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "prefalign/align.hpp"
#include "prefalign/experiment.hpp"

namespace prefalign {

struct EvalReport {
    std::string model_id;
    double perceptual{0.0};
    double fidelity{0.0};
    double content{0.0};
    double timbre{0.0};
    int utterances{0};
    uint64_t config_hash{0};

    double mean() const { return 0.25 * (perceptual + fidelity + content + timbre); }
    double by_index(int i) const {
        switch (i) {
            case 0: return perceptual;
            case 1: return fidelity;
            case 2: return content;
            case 3: return timbre;
            default: throw std::invalid_argument("EvalReport::by_index: out of range");
        }
    }
    double min_delta_vs(const EvalReport& baseline) const {
        double m = perceptual - baseline.perceptual;
        m = std::min(m, fidelity - baseline.fidelity);
        m = std::min(m, content - baseline.content);
        m = std::min(m, timbre - baseline.timbre);
        return m;
    }
};

// Mean scorecard of a restoration function over a test range. The restore
// callback returns the candidate signal for an utterance; models, oracles
// and passthrough baselines all evaluate through this one path.
inline EvalReport evaluate_restorer(const std::function<Signal(const Utterance&)>& restore, const World& world,
                                    const std::vector<int>& ids, const std::string& model_id,
                                    bool heavy_domain = false) {
    if (ids.empty()) {
        throw std::invalid_argument("evaluate: empty test set");
    }
    EvalReport rep;
    rep.model_id = model_id;
    rep.utterances = static_cast<int>(ids.size());
    for (int id : ids) {
        const Utterance u = heavy_domain ? world.heavy_utterance(id) : world.utterance(id);
        const ScoreCard card = score(restore(u), u.clean, u.degraded, world.frame_spec());
        rep.perceptual += card.perceptual / static_cast<double>(ids.size());
        rep.fidelity += card.fidelity / static_cast<double>(ids.size());
        rep.content += card.content / static_cast<double>(ids.size());
        rep.timbre += card.timbre / static_cast<double>(ids.size());
    }
    return rep;
}

// One sampled restoration per utterance at a fixed per-utterance seed.
inline EvalReport evaluate(const PolicyModel& model, const World& world, const std::vector<int>& ids,
                           const std::string& model_id, uint64_t eval_seed = 0) {
    if (static_cast<int>(ids.size()) < 16) {
        throw std::invalid_argument("evaluate: need at least 16 test utterances");
    }
    auto restore = [&](const Utterance& u) {
        const Restoration r =
            model.sample(u.x, derive_seed(world.config().seed ^ eval_seed, 0x6576616cull + static_cast<uint64_t>(u.id)),
                         1.0);
        return restoration_to_signal(r, world.codebook(), world.frame_spec());
    };
    EvalReport rep = evaluate_restorer(restore, world, ids, model_id);
    rep.config_hash = 0;
    return rep;
}

// Degraded input projected through the model output space (band envelopes),
// the floor every trained model should beat.
inline EvalReport evaluate_passthrough(const World& world, const std::vector<int>& ids) {
    return evaluate_restorer([&](const Utterance& u) { return render(u.x, world.frame_spec()); }, world, ids,
                             "degraded-passthrough");
}

inline EvalReport evaluate_clean_oracle(const World& world, const std::vector<int>& ids) {
    return evaluate_restorer([&](const Utterance& u) { return u.clean; }, world, ids, "clean-oracle");
}

// ---------------------------------------------------------- pref vectors

struct PrefVector {
    std::vector<double> v;
    Paradigm paradigm{Paradigm::AR};
};

// f(y): log-band energies of the decoded output, averaged over time. The
// preference vector is f(y_w) - f(y_l); undecodable pairs are skipped.
inline std::vector<PrefVector> pref_vectors(const std::vector<PreferencePair>& dataset, const Codebook& codebook,
                                            size_t* skipped = nullptr) {
    auto feature = [&](const Restoration& r) {
        const FrameMatrix fm = restoration_to_frames(r, codebook);
        std::vector<double> f(static_cast<size_t>(fm.cols), 0.0);
        for (int row = 0; row < fm.rows; ++row) {
            for (int col = 0; col < fm.cols; ++col) {
                f[static_cast<size_t>(col)] += fm.at(row, col) / fm.rows;
            }
        }
        return f;
    };
    std::vector<PrefVector> out;
    size_t bad = 0;
    for (const auto& p : dataset) {
        try {
            const std::vector<double> fw = feature(p.y_w);
            const std::vector<double> fl = feature(p.y_l);
            PrefVector pv;
            pv.paradigm = p.paradigm;
            pv.v.resize(fw.size());
            for (size_t i = 0; i < fw.size(); ++i) {
                pv.v[i] = fw[i] - fl[i];
            }
            out.push_back(std::move(pv));
        } catch (const std::exception&) {
            ++bad;
        }
    }
    if (skipped != nullptr) {
        *skipped = bad;
    }
    return out;
}

// -------------------------------------------------------- cosine matrix

struct CosineMatrix {
    // rows/cols ordered AR, MGM, FM (Paradigm enum order)
    std::array<std::array<double, 3>, 3> m{};
    size_t excluded_zero_vectors{0};

    double at(Paradigm a, Paradigm b) const { return m[static_cast<size_t>(a)][static_cast<size_t>(b)]; }
};

inline CosineMatrix cosine_matrix(const std::vector<PrefVector>& vectors) {
    std::array<std::vector<const PrefVector*>, 3> groups;
    CosineMatrix out;
    for (const auto& v : vectors) {
        double norm = 0.0;
        for (double x : v.v) {
            norm += x * x;
        }
        if (norm < 1e-30) {
            ++out.excluded_zero_vectors;
            continue;
        }
        groups[static_cast<size_t>(v.paradigm)].push_back(&v);
    }
    for (const auto& g : groups) {
        if (g.size() < 2) {
            throw std::invalid_argument("cosine_matrix: need at least two nonzero vectors per paradigm");
        }
    }
    auto cosine = [](const PrefVector& a, const PrefVector& b) {
        double ab = 0.0;
        double aa = 0.0;
        double bb = 0.0;
        for (size_t i = 0; i < a.v.size(); ++i) {
            ab += a.v[i] * b.v[i];
            aa += a.v[i] * a.v[i];
            bb += b.v[i] * b.v[i];
        }
        return ab / std::sqrt(aa * bb);
    };
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = i; j < 3; ++j) {
            double acc = 0.0;
            size_t count = 0;
            if (i == j) {
                for (size_t a = 0; a < groups[i].size(); ++a) {
                    for (size_t b = a + 1; b < groups[i].size(); ++b) {
                        acc += cosine(*groups[i][a], *groups[i][b]);
                        ++count;
                    }
                }
            } else {
                for (const auto* a : groups[i]) {
                    for (const auto* b : groups[j]) {
                        acc += cosine(*a, *b);
                        ++count;
                    }
                }
            }
            const double mean = acc / static_cast<double>(count);
            out.m[i][j] = mean;
            out.m[j][i] = mean;
        }
    }
    return out;
}

// ---------------------------------------------------- cross-paradigm grid

// Re-expresses a pair in another paradigm's representation: outputs decode
// to band envelopes and re-encode through the shared codebook.
inline PreferencePair convert_pair_paradigm(const PreferencePair& src, Paradigm target, const Codebook& codebook) {
    PreferencePair out = src;
    out.paradigm = target;
    auto convert = [&](const Restoration& r) {
        Restoration c;
        c.paradigm = target;
        const FrameMatrix frames = restoration_to_frames(r, codebook);
        if (target == Paradigm::FM) {
            c.frames = frames;
        } else {
            c.tokens = codebook.tokenize(frames);
        }
        return c;
    };
    out.y_w = convert(src.y_w);
    out.y_l = convert(src.y_l);
    return out;
}

inline std::vector<PreferencePair> convert_dataset_paradigm(const std::vector<PreferencePair>& src, Paradigm target,
                                                            const Codebook& codebook) {
    std::vector<PreferencePair> out;
    out.reserve(src.size());
    for (const auto& p : src) {
        PreferencePair c = convert_pair_paradigm(p, target, codebook);
        if (!(c.y_w == c.y_l)) {  // tokenization can collapse near-identical outputs
            out.push_back(std::move(c));
        }
    }
    return out;
}

struct CrossAlignGrid {
    std::array<EvalReport, 3> baseline;              // indexed by Paradigm
    std::array<std::array<EvalReport, 3>, 3> cell;   // [model][data source]
};

inline int fanout_threads() {
    const char* env = std::getenv("PREFALIGN_THREADS");
    if (env != nullptr) {
        const int n = std::atoi(env);
        if (n >= 1) {
            return n;
        }
    }
    return 3;
}

// Trains every (model, data source) combination and evaluates all nine on
// the shared test range. Runs fan out over worker threads, each internally
// deterministic; results land by index.
inline CrossAlignGrid crossalign_grid(const std::array<PolicyModel, 3>& models,
                                      const std::array<std::vector<PreferencePair>, 3>& datasets, const World& world,
                                      const std::string& telemetry_dir = "") {
    const std::vector<int> test = world.test_ids();
    std::set<int> shared_ids;
    for (int id : world.train_ids()) {
        shared_ids.insert(id);
    }
    for (const auto& ds : datasets) {
        if (ds.empty()) {
            throw std::invalid_argument("crossalign_grid: empty dataset");
        }
        for (const auto& p : ds) {
            if (!shared_ids.count(p.utterance_id)) {
                throw std::invalid_argument("crossalign_grid: datasets must cover the shared utterance range");
            }
        }
    }
    CrossAlignGrid grid;
    for (size_t i = 0; i < 3; ++i) {
        const Paradigm p = static_cast<Paradigm>(i);
        grid.baseline[i] = evaluate(models[i], world, test, std::string(paradigm_name(p)) + "-baseline");
    }
    struct Job {
        size_t model_idx;
        size_t data_idx;
    };
    std::vector<Job> jobs;
    for (size_t i = 0; i < 3; ++i) {
        for (size_t j = 0; j < 3; ++j) {
            jobs.push_back({i, j});
        }
    }
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t k = next.fetch_add(1);
            if (k >= jobs.size()) {
                return;
            }
            const Job job = jobs[k];
            const Paradigm target = static_cast<Paradigm>(job.model_idx);
            PolicyModel policy = models[job.model_idx];
            const std::vector<PreferencePair> data =
                convert_dataset_paradigm(datasets[job.data_idx], target, world.codebook());
            DpoConfig dc = dpo_config_for(world.config(), target);
            dc.seed = derive_seed(dc.seed, 101 + job.model_idx * 3 + job.data_idx);
            const TrainResult result = train_dpo(policy, data, dc);
            const std::string run_id = std::string(paradigm_name(target)) + "-from-" +
                                       paradigm_name(static_cast<Paradigm>(job.data_idx));
            if (!telemetry_dir.empty()) {
                write_telemetry(result.telemetry,
                                (std::filesystem::path(telemetry_dir) / ("telemetry_" + run_id + ".tsv")).string());
            }
            grid.cell[job.model_idx][job.data_idx] = evaluate(policy, world, test, run_id);
        }
    };
    const int n_threads = std::min<int>(fanout_threads(), static_cast<int>(jobs.size()));
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }
    return grid;
}

// ------------------------------------------------- metric-vote preference

// Stand-in for a listener A/B test: the candidate with the higher mean
// scorecard wins; near-equal means count as a tie.
struct AbResult {
    double win_pct{0.0};
    double tie_pct{0.0};
    double loss_pct{0.0};
};

inline AbResult ab_compare(const PolicyModel& model_a, const PolicyModel& model_b, const World& world,
                           const std::vector<int>& ids, double tie_threshold = 1e-3) {
    if (ids.empty()) {
        throw std::invalid_argument("ab_compare: empty test set");
    }
    AbResult r;
    for (int id : ids) {
        const Utterance u = world.utterance(id);
        const uint64_t s = derive_seed(world.config().seed, 0x61627465ull + static_cast<uint64_t>(id));
        const ScoreCard ca = score(restoration_to_signal(model_a.sample(u.x, s, 1.0), world.codebook(),
                                                         world.frame_spec()),
                                   u.clean, u.degraded, world.frame_spec());
        const ScoreCard cb = score(restoration_to_signal(model_b.sample(u.x, s, 1.0), world.codebook(),
                                                         world.frame_spec()),
                                   u.clean, u.degraded, world.frame_spec());
        const double diff = ca.mean() - cb.mean();
        if (std::fabs(diff) <= tie_threshold) {
            r.tie_pct += 1.0;
        } else if (diff > 0.0) {
            r.win_pct += 1.0;
        } else {
            r.loss_pct += 1.0;
        }
    }
    const double n = static_cast<double>(ids.size());
    r.win_pct *= 100.0 / n;
    r.tie_pct *= 100.0 / n;
    r.loss_pct *= 100.0 / n;
    return r;
}

// --------------------------------------------------------- pseudo-labeling

// Small frame-to-frame regression network trained with plain MSE; the
// discriminative student in the pseudo-labeling application.
class StudentEnhancer {
  public:
    StudentEnhancer(int bands, int hidden, uint64_t seed) : bands_(bands) {
        Rng rng(derive_seed(seed, 0x73747564ull));
        auto init = [&rng](int rows, int cols, double std) {
            Array2D a(rows, cols);
            for (double& v : a.data) {
                v = rng.normal(0.0, std);
            }
            return a;
        };
        params_.add("w1", init(bands, hidden, 1.0 / std::sqrt(bands)));
        params_.add("b1", Array2D(1, hidden, 0.0));
        params_.add("w2", init(hidden, bands, 1.0 / std::sqrt(hidden)));
        params_.add("b2", Array2D(1, bands, 0.0));
    }

    FrameMatrix enhance(const FrameMatrix& x) const {
        Array2D h = matmul(x, params_.value("w1"));
        for (int r = 0; r < h.rows; ++r) {
            for (int c = 0; c < h.cols; ++c) {
                h.at(r, c) = std::tanh(h.at(r, c) + params_.value("b1").data[static_cast<size_t>(c)]);
            }
        }
        Array2D y = matmul(h, params_.value("w2"));
        for (int r = 0; r < y.rows; ++r) {
            for (int c = 0; c < y.cols; ++c) {
                y.at(r, c) += params_.value("b2").data[static_cast<size_t>(c)];
            }
        }
        return y;
    }

    struct FramePair {
        FrameMatrix x;
        FrameMatrix target;
    };

    void train_mse(const std::vector<FramePair>& data, int steps, double lr, int warmup, uint64_t seed) {
        if (data.empty()) {
            throw std::invalid_argument("StudentEnhancer::train_mse: no data");
        }
        OptimConfig oc;
        oc.learning_rate = lr;
        oc.warmup_steps = warmup;
        Rng rng(derive_seed(seed, 0x73747274ull));
        for (int step = 1; step <= steps; ++step) {
            const auto& ex = data[static_cast<size_t>(rng.uniform_int(static_cast<int>(data.size())))];
            Tape tape;
            const int h = tape.tanh_op(tape.add_row(tape.matmul(tape.input(ex.x), tape.param(params_, "w1")),
                                                    tape.param(params_, "b1")));
            const int y = tape.add_row(tape.matmul(h, tape.param(params_, "w2")), tape.param(params_, "b2"));
            const int loss =
                tape.scale(tape.sse(y, tape.input(ex.target)), 1.0 / static_cast<double>(ex.target.size()));
            params_.zero_grad();
            tape.backward(loss);
            adam_step(params_, oc, step);
        }
    }

    const ParamStore& params() const { return params_; }

  private:
    int bands_;
    ParamStore params_;
};

struct PseudoLabelReport {
    EvalReport student_before;
    EvalReport student_after;
    ScoreCard pseudo_label_mean;    // teacher outputs scored against clean
    ScoreCard degraded_input_mean;  // raw degraded inputs scored against clean
    bool teacher_was_aligned{true};
};

// Teacher restores the data-scarce heavy-degradation set; the student fine-
// tunes on those pseudo-clean targets. Zero fine-tune steps leave the
// student untouched, so before equals after.
inline PseudoLabelReport pseudo_label_finetune(const PolicyModel& teacher, const World& world, int fine_tune_steps,
                                               bool teacher_aligned = true) {
    const RunConfig& cfg = world.config();
    PseudoLabelReport rep;
    rep.teacher_was_aligned = teacher_aligned;

    StudentEnhancer student(world.frame_spec().bands, cfg.pseudo_student_hidden,
                            derive_seed(cfg.seed, 0x70736575ull));
    // stage 1: ordinary supervised pretraining on the standard domain
    std::vector<StudentEnhancer::FramePair> pretrain_data;
    for (int id : world.train_ids()) {
        const Utterance u = world.utterance(id);
        pretrain_data.push_back({u.x, u.clean_frames});
    }
    student.train_mse(pretrain_data, cfg.pseudo_pretrain_steps, 3e-3, 50, derive_seed(cfg.seed, 0x70737431ull));

    // stage 2: teacher annotates the data-scarce domain
    std::vector<StudentEnhancer::FramePair> pseudo_data;
    for (int id = 0; id < cfg.pseudo_train_utterances; ++id) {
        const Utterance u = world.heavy_utterance(id);
        const Restoration pseudo =
            teacher.sample(u.x, derive_seed(cfg.seed, 0x70736c62ull + static_cast<uint64_t>(id)), 1.0);
        const FrameMatrix pseudo_frames = restoration_to_frames(pseudo, world.codebook());
        const ScoreCard pseudo_card = score(render(pseudo_frames, world.frame_spec()), u.clean, u.degraded,
                                            world.frame_spec());
        const ScoreCard degraded_card = score(u.degraded, u.clean, u.degraded, world.frame_spec());
        const double inv = 1.0 / cfg.pseudo_train_utterances;
        rep.pseudo_label_mean.perceptual += pseudo_card.perceptual * inv;
        rep.pseudo_label_mean.fidelity += pseudo_card.fidelity * inv;
        rep.pseudo_label_mean.content += pseudo_card.content * inv;
        rep.pseudo_label_mean.timbre += pseudo_card.timbre * inv;
        rep.degraded_input_mean.perceptual += degraded_card.perceptual * inv;
        rep.degraded_input_mean.fidelity += degraded_card.fidelity * inv;
        rep.degraded_input_mean.content += degraded_card.content * inv;
        rep.degraded_input_mean.timbre += degraded_card.timbre * inv;
        pseudo_data.push_back({u.x, pseudo_frames});
    }

    std::vector<int> heavy_test;
    for (int i = 0; i < cfg.pseudo_test_utterances; ++i) {
        heavy_test.push_back(1000000 + i);
    }
    auto student_restorer = [&](const Utterance& u) { return render(student.enhance(u.x), world.frame_spec()); };
    rep.student_before = evaluate_restorer(student_restorer, world, heavy_test, "student-before", true);
    if (fine_tune_steps > 0) {
        student.train_mse(pseudo_data, fine_tune_steps, 1e-3, 20, derive_seed(cfg.seed, 0x70737432ull));
    }
    rep.student_after = evaluate_restorer(student_restorer, world, heavy_test, "student-after", true);
    return rep;
}

// ------------------------------------------------------------ persistence

// Delimited text table plus a machine-readable JSON summary per report.
inline void write_eval_report(const EvalReport& rep, const std::string& path_base) {
    {
        std::ofstream f(path_base + ".txt", std::ios::binary);
        if (!f) {
            throw std::runtime_error("write_eval_report: cannot open " + path_base + ".txt");
        }
        std::ostringstream hash;
        hash << std::hex << rep.config_hash;
        f << "# config_hash=" << hash.str() << "\n";
        f << "model\tperceptual\tfidelity\tcontent\ttimbre\tmean\tutterances\n";
        f << std::setprecision(17) << rep.model_id << "\t" << rep.perceptual << "\t" << rep.fidelity << "\t"
          << rep.content << "\t" << rep.timbre << "\t" << rep.mean() << "\t" << rep.utterances << "\n";
    }
    {
        nlohmann::json j;
        j["model_id"] = rep.model_id;
        j["perceptual"] = rep.perceptual;
        j["fidelity"] = rep.fidelity;
        j["content"] = rep.content;
        j["timbre"] = rep.timbre;
        j["mean"] = rep.mean();
        j["utterances"] = rep.utterances;
        std::ostringstream hash;
        hash << std::hex << rep.config_hash;
        j["config_hash"] = hash.str();
        std::ofstream f(path_base + ".json", std::ios::binary);
        f << j.dump(2) << "\n";
    }
}

inline EvalReport read_eval_report(const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) {
        throw std::runtime_error("read_eval_report: cannot open " + json_path);
    }
    nlohmann::json j;
    f >> j;
    EvalReport rep;
    rep.model_id = j.at("model_id").get<std::string>();
    rep.perceptual = j.at("perceptual").get<double>();
    rep.fidelity = j.at("fidelity").get<double>();
    rep.content = j.at("content").get<double>();
    rep.timbre = j.at("timbre").get<double>();
    rep.utterances = j.at("utterances").get<int>();
    rep.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    return rep;
}

// Plot-ready (step, value) series, exponentially smoothed for reporting.
inline void write_series(const std::vector<RewardTelemetry>& telemetry, const std::string& path,
                         const std::function<double(const RewardTelemetry&)>& field, double smoothing = 0.99) {
    std::vector<double> values;
    values.reserve(telemetry.size());
    for (const auto& row : telemetry) {
        values.push_back(field(row));
    }
    const std::vector<double> smooth = ema_smooth(values, smoothing);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("write_series: cannot open " + path);
    }
    f << std::setprecision(17);
    for (size_t i = 0; i < telemetry.size(); ++i) {
        f << telemetry[i].step << "\t" << smooth[i] << "\n";
    }
}

}  // namespace prefalign
