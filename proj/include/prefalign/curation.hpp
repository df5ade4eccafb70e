// Preference-pair curation: candidate generation, the unanimous multi-metric
// agreement criterion plus the single-metric and GT-winner variants, and
// line-delimited dataset serialization.

#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prefalign/metrics.hpp"
#include "prefalign/models.hpp"
#include "prefalign/quantizer.hpp"
#include "prefalign/signal.hpp"

namespace prefalign {

struct Candidate {
    Restoration output;
    uint64_t seed{0};
    double temperature{1.0};
    ScoreCard card;
};

struct CandidateSet {
    int utterance_id{0};
    Paradigm paradigm{Paradigm::AR};
    FrameMatrix x;  // conditioning input (degraded frames)
    std::vector<Candidate> candidates;
};

inline std::string criterion_multi() { return "multi"; }
inline std::string criterion_single(MetricRole role) { return std::string("single:") + metric_role_name(role); }
inline std::string criterion_gt_winner() { return "gt_winner"; }

struct PreferencePair {
    int utterance_id{0};
    Paradigm paradigm{Paradigm::AR};
    std::string criterion_tag;
    FrameMatrix x;
    Restoration y_w;
    Restoration y_l;
    ScoreCard score_w;
    ScoreCard score_l;
    uint64_t seed_w{0};
    uint64_t seed_l{0};
};

// Decode a model output to signal space for scoring: tokens go through the
// codebook, frames render directly.
inline Signal restoration_to_signal(const Restoration& r, const Codebook& codebook, const FrameSpec& spec = {}) {
    if (r.paradigm == Paradigm::FM) {
        return render(r.frames, spec);
    }
    return render(codebook.detokenize(r.tokens), spec);
}

inline FrameMatrix restoration_to_frames(const Restoration& r, const Codebook& codebook) {
    if (r.paradigm == Paradigm::FM) {
        return r.frames;
    }
    return codebook.detokenize(r.tokens);
}

// n sampled outputs, each scored against the clean reference. Deterministic
// in the seed list; temperatures cycle through the configured list.
inline CandidateSet generate_candidates(const PolicyModel& model, int utterance_id, const FrameMatrix& x,
                                        const Signal& clean, const Signal& degraded, const Codebook& codebook,
                                        const std::vector<uint64_t>& seeds, const std::vector<double>& temperatures,
                                        const FrameSpec& spec = {}, const MetricConfig& mc = {}) {
    if (seeds.size() < 2) {
        throw std::invalid_argument("generate_candidates: need at least two candidates");
    }
    if (temperatures.empty()) {
        throw std::invalid_argument("generate_candidates: need at least one temperature");
    }
    CandidateSet cs;
    cs.utterance_id = utterance_id;
    cs.paradigm = model.paradigm();
    cs.x = x;
    for (size_t i = 0; i < seeds.size(); ++i) {
        Candidate c;
        c.seed = seeds[i];
        c.temperature = temperatures[i % temperatures.size()];
        c.output = model.sample(x, c.seed, c.temperature);
        c.card = score(restoration_to_signal(c.output, codebook, spec), clean, degraded, spec, mc);
        cs.candidates.push_back(std::move(c));
    }
    return cs;
}

// All ordered pairs where the winner strictly beats the loser on every
// metric; ties disqualify. Output order follows candidate indices; a
// per-utterance cap guards against dominance-chain blowup.
inline std::vector<PreferencePair> form_pairs_unanimous(const CandidateSet& cs, int cap = 4) {
    std::vector<PreferencePair> out;
    for (size_t i = 0; i < cs.candidates.size(); ++i) {
        for (size_t j = 0; j < cs.candidates.size(); ++j) {
            if (i == j || static_cast<int>(out.size()) >= cap) {
                continue;
            }
            const Candidate& a = cs.candidates[i];
            const Candidate& b = cs.candidates[j];
            if (a.card.dominates(b.card) && !(a.output == b.output)) {
                PreferencePair p;
                p.utterance_id = cs.utterance_id;
                p.paradigm = cs.paradigm;
                p.criterion_tag = criterion_multi();
                p.x = cs.x;
                p.y_w = a.output;
                p.y_l = b.output;
                p.score_w = a.card;
                p.score_l = b.card;
                p.seed_w = a.seed;
                p.seed_l = b.seed;
                out.push_back(std::move(p));
            }
        }
    }
    return out;
}

// Pairs ranked on a single metric: winner must exceed loser by more than
// `margin` on that metric; the other metrics are ignored.
inline std::vector<PreferencePair> form_pairs_single(const CandidateSet& cs, MetricRole role, double margin,
                                                     int cap = 4) {
    if (margin < 0.0) {
        throw std::invalid_argument("form_pairs_single: margin must be >= 0");
    }
    const int idx = static_cast<int>(role);
    std::vector<PreferencePair> out;
    for (size_t i = 0; i < cs.candidates.size(); ++i) {
        for (size_t j = 0; j < cs.candidates.size(); ++j) {
            if (i == j || static_cast<int>(out.size()) >= cap) {
                continue;
            }
            const Candidate& a = cs.candidates[i];
            const Candidate& b = cs.candidates[j];
            if (a.card.by_index(idx) > b.card.by_index(idx) + margin && !(a.output == b.output)) {
                PreferencePair p;
                p.utterance_id = cs.utterance_id;
                p.paradigm = cs.paradigm;
                p.criterion_tag = criterion_single(role);
                p.x = cs.x;
                p.y_w = a.output;
                p.y_l = b.output;
                p.score_w = a.card;
                p.score_l = b.card;
                p.seed_w = a.seed;
                p.seed_l = b.seed;
                out.push_back(std::move(p));
            }
        }
    }
    return out;
}

// Ground truth as fixed winner against every candidate. Candidates identical
// to the ground-truth projection are skipped (y_w != y_l must hold).
inline std::vector<PreferencePair> form_pairs_gt_winner(const CandidateSet& cs, const Restoration& ground_truth,
                                                        const ScoreCard& gt_card) {
    std::vector<PreferencePair> out;
    for (const Candidate& c : cs.candidates) {
        if (c.output == ground_truth) {
            continue;
        }
        PreferencePair p;
        p.utterance_id = cs.utterance_id;
        p.paradigm = cs.paradigm;
        p.criterion_tag = criterion_gt_winner();
        p.x = cs.x;
        p.y_w = ground_truth;
        p.y_l = c.output;
        p.score_w = gt_card;
        p.score_l = c.card;
        p.seed_w = 0;
        p.seed_l = c.seed;
        out.push_back(std::move(p));
    }
    return out;
}

// ------------------------------------------------------------ serialization

class DatasetParseError : public std::runtime_error {
  public:
    DatasetParseError(size_t line, const std::string& what)
        : std::runtime_error("dataset parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
    size_t line() const { return line_; }

  private:
    size_t line_;
};

namespace detail {

inline nlohmann::json restoration_to_json(const Restoration& r) {
    nlohmann::json j;
    if (r.paradigm == Paradigm::FM) {
        j["kind"] = "frames";
        j["rows"] = r.frames.rows;
        j["cols"] = r.frames.cols;
        j["v"] = r.frames.data;
    } else {
        j["kind"] = "tokens";
        j["vocab"] = r.tokens.vocab_size;
        j["v"] = r.tokens.tokens;
    }
    return j;
}

inline Restoration restoration_from_json(const nlohmann::json& j, Paradigm paradigm) {
    Restoration r;
    r.paradigm = paradigm;
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "frames") {
        r.frames = Array2D(j.at("rows").get<int>(), j.at("cols").get<int>());
        r.frames.data = j.at("v").get<std::vector<double>>();
        if (r.frames.data.size() != static_cast<size_t>(r.frames.rows) * r.frames.cols) {
            throw std::runtime_error("frame payload size mismatch");
        }
    } else if (kind == "tokens") {
        r.tokens.vocab_size = j.at("vocab").get<int>();
        r.tokens.tokens = j.at("v").get<std::vector<int>>();
    } else {
        throw std::runtime_error("unknown restoration kind '" + kind + "'");
    }
    return r;
}

inline nlohmann::json scorecard_to_json(const ScoreCard& c) {
    return nlohmann::json{
        {"perceptual", c.perceptual}, {"fidelity", c.fidelity}, {"content", c.content}, {"timbre", c.timbre}};
}

inline ScoreCard scorecard_from_json(const nlohmann::json& j) {
    ScoreCard c;
    c.perceptual = j.at("perceptual").get<double>();
    c.fidelity = j.at("fidelity").get<double>();
    c.content = j.at("content").get<double>();
    c.timbre = j.at("timbre").get<double>();
    return c;
}

}  // namespace detail

inline nlohmann::json pair_to_json(const PreferencePair& p) {
    nlohmann::json j;
    j["version"] = 1;
    j["utterance_id"] = p.utterance_id;
    j["paradigm"] = paradigm_name(p.paradigm);
    j["criterion"] = p.criterion_tag;
    j["x_rows"] = p.x.rows;
    j["x_cols"] = p.x.cols;
    j["x"] = p.x.data;
    j["y_w"] = detail::restoration_to_json(p.y_w);
    j["y_l"] = detail::restoration_to_json(p.y_l);
    j["score_w"] = detail::scorecard_to_json(p.score_w);
    j["score_l"] = detail::scorecard_to_json(p.score_l);
    j["seed_w"] = p.seed_w;
    j["seed_l"] = p.seed_l;
    return j;
}

inline PreferencePair pair_from_json(const nlohmann::json& j) {
    PreferencePair p;
    p.utterance_id = j.at("utterance_id").get<int>();
    p.paradigm = paradigm_from_name(j.at("paradigm").get<std::string>());
    p.criterion_tag = j.at("criterion").get<std::string>();
    p.x = Array2D(j.at("x_rows").get<int>(), j.at("x_cols").get<int>());
    p.x.data = j.at("x").get<std::vector<double>>();
    if (p.x.data.size() != static_cast<size_t>(p.x.rows) * p.x.cols) {
        throw std::runtime_error("conditioning payload size mismatch");
    }
    p.y_w = detail::restoration_from_json(j.at("y_w"), p.paradigm);
    p.y_l = detail::restoration_from_json(j.at("y_l"), p.paradigm);
    p.score_w = detail::scorecard_from_json(j.at("score_w"));
    p.score_l = detail::scorecard_from_json(j.at("score_l"));
    p.seed_w = j.at("seed_w").get<uint64_t>();
    p.seed_l = j.at("seed_l").get<uint64_t>();
    return p;
}

// One JSON record per line; keys are emitted in sorted order so identical
// inputs produce byte-identical files.
inline void write_dataset(const std::vector<PreferencePair>& pairs, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("write_dataset: cannot open " + path);
    }
    for (const auto& p : pairs) {
        f << pair_to_json(p).dump() << "\n";
    }
}

inline std::vector<PreferencePair> read_dataset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("read_dataset: cannot open " + path);
    }
    std::vector<PreferencePair> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        try {
            out.push_back(pair_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw DatasetParseError(line_no, e.what());
        }
    }
    return out;
}

// Sidecar manifest: config hash plus record counts, as key=value lines.
struct DatasetManifest {
    uint64_t config_hash{0};
    size_t pair_count{0};
    size_t candidate_count{0};
    size_t utterance_count{0};
    std::string criterion;
    std::string paradigm;
};

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("write_manifest: cannot open " + path);
    }
    std::ostringstream hash;
    hash << std::hex << m.config_hash;
    f << "config_hash=" << hash.str() << "\n"
      << "paradigm=" << m.paradigm << "\n"
      << "criterion=" << m.criterion << "\n"
      << "pairs=" << m.pair_count << "\n"
      << "candidates=" << m.candidate_count << "\n"
      << "utterances=" << m.utterance_count << "\n";
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw std::runtime_error("read_manifest: cannot open " + path);
    }
    DatasetManifest m;
    std::string line;
    while (std::getline(f, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            continue;
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "config_hash") {
            m.config_hash = std::stoull(value, nullptr, 16);
        } else if (key == "paradigm") {
            m.paradigm = value;
        } else if (key == "criterion") {
            m.criterion = value;
        } else if (key == "pairs") {
            m.pair_count = std::stoull(value);
        } else if (key == "candidates") {
            m.candidate_count = std::stoull(value);
        } else if (key == "utterances") {
            m.utterance_count = std::stoull(value);
        }
    }
    return m;
}

}  // namespace prefalign
