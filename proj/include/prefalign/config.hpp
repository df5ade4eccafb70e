// Flat, typed key=value run configuration. One file fully determines a run;
// the canonical hash of the parsed keys is embedded in every artifact.

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prefalign {

class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::vector<std::string>& problems)
        : std::runtime_error("invalid config:\n  " + join(problems)), problems_(problems) {}
    const std::vector<std::string>& problems() const { return problems_; }

  private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out;
        for (size_t i = 0; i < v.size(); ++i) {
            out += v[i];
            if (i + 1 < v.size()) {
                out += "\n  ";
            }
        }
        return out;
    }
    std::vector<std::string> problems_;
};

struct RunConfig {
    std::string experiment{"default"};
    uint64_t seed{0};
    bool seed_set{false};

    // world
    int world_duration_frames{24};
    int world_vocab{32};
    int world_codebook_utterances{48};
    double world_snr_min{0.0};
    double world_snr_max{18.0};
    double world_cutoff_min{700.0};
    double world_cutoff_max{2200.0};
    double world_clip_min{0.35};
    double world_clip_max{0.9};
    int world_smear_max{4};
    double world_heavy_snr_min{-2.0};
    double world_heavy_snr_max{6.0};

    // model architecture
    int arch_embed_dim{8};
    int arch_hidden{32};
    int arch_context{3};

    // pretraining
    int pretrain_steps{9000};
    int pretrain_batch{8};
    double pretrain_lr{3e-3};
    int pretrain_warmup{300};

    // corpus split
    int data_train_utterances{300};
    int data_test_utterances{24};

    // curation
    int curate_candidates{6};
    std::vector<double> curate_temperatures{0.8, 1.0, 1.2};
    int curate_pair_cap{6};
    double curate_single_margin{0.0};

    // alignment (betas default to the reported per-paradigm settings)
    int dpo_steps{2000};
    int dpo_batch{8};
    double dpo_lr{3e-4};
    int dpo_warmup{100};
    double dpo_beta_ar{0.1};
    double dpo_beta_mgm{10.0};
    double dpo_beta_fm{1000.0};
    bool dpo_shared_noise{true};
    bool dpo_length_normalize{false};

    // pseudo-labeling application
    int pseudo_steps{800};
    int pseudo_student_hidden{24};
    int pseudo_train_utterances{48};
    int pseudo_test_utterances{16};
    int pseudo_pretrain_steps{800};
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

class ConfigFile {
  public:
    static ConfigFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) {
            throw std::runtime_error("config: cannot open " + path);
        }
        std::stringstream ss;
        ss << f.rdbuf();
        return parse_text(ss.str());
    }

    static ConfigFile parse_text(const std::string& text) {
        ConfigFile cfg;
        std::istringstream ss(text);
        std::string line;
        size_t line_no = 0;
        std::vector<std::string> problems;
        while (std::getline(ss, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) {
                line = line.substr(0, hash);
            }
            line = detail::trim(line);
            if (line.empty()) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                problems.push_back("line " + std::to_string(line_no) + ": expected key = value");
                continue;
            }
            const std::string key = detail::trim(line.substr(0, eq));
            const std::string value = detail::trim(line.substr(eq + 1));
            if (key.empty()) {
                problems.push_back("line " + std::to_string(line_no) + ": empty key");
                continue;
            }
            if (cfg.values_.count(key)) {
                problems.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
                continue;
            }
            cfg.values_[key] = value;
        }
        if (!problems.empty()) {
            throw ConfigError(problems);
        }
        return cfg;
    }

    // FNV-1a over the canonical sorted key=value serialization.
    uint64_t hash() const {
        uint64_t h = 0xcbf29ce484222325ull;
        auto mix = [&h](const std::string& s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 0x100000001b3ull;
            }
        };
        for (const auto& [k, v] : values_) {  // std::map iterates sorted
            mix(k);
            mix("=");
            mix(v);
            mix("\n");
        }
        return h;
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    RunConfig to_run_config() const {
        RunConfig rc;
        std::vector<std::string> problems;
        std::map<std::string, bool> seen;
        for (const auto& [k, v] : values_) {
            seen[k] = false;
        }
        auto get_str = [&](const std::string& key, std::string& dst) {
            auto it = values_.find(key);
            if (it != values_.end()) {
                dst = it->second;
                seen[key] = true;
            }
        };
        auto get_int = [&](const std::string& key, int& dst) {
            auto it = values_.find(key);
            if (it == values_.end()) {
                return;
            }
            seen[key] = true;
            try {
                size_t pos = 0;
                dst = std::stoi(it->second, &pos);
                if (pos != it->second.size()) {
                    throw std::invalid_argument("");
                }
            } catch (...) {
                problems.push_back(key + ": expected integer, got '" + it->second + "'");
            }
        };
        auto get_u64 = [&](const std::string& key, uint64_t& dst) {
            auto it = values_.find(key);
            if (it == values_.end()) {
                return;
            }
            seen[key] = true;
            try {
                size_t pos = 0;
                dst = std::stoull(it->second, &pos);
                if (pos != it->second.size()) {
                    throw std::invalid_argument("");
                }
            } catch (...) {
                problems.push_back(key + ": expected unsigned integer, got '" + it->second + "'");
            }
        };
        auto get_double = [&](const std::string& key, double& dst) {
            auto it = values_.find(key);
            if (it == values_.end()) {
                return;
            }
            seen[key] = true;
            try {
                size_t pos = 0;
                dst = std::stod(it->second, &pos);
                if (pos != it->second.size()) {
                    throw std::invalid_argument("");
                }
            } catch (...) {
                problems.push_back(key + ": expected number, got '" + it->second + "'");
            }
        };
        auto get_bool = [&](const std::string& key, bool& dst) {
            auto it = values_.find(key);
            if (it == values_.end()) {
                return;
            }
            seen[key] = true;
            if (it->second == "true" || it->second == "1") {
                dst = true;
            } else if (it->second == "false" || it->second == "0") {
                dst = false;
            } else {
                problems.push_back(key + ": expected true/false, got '" + it->second + "'");
            }
        };
        auto get_double_list = [&](const std::string& key, std::vector<double>& dst) {
            auto it = values_.find(key);
            if (it == values_.end()) {
                return;
            }
            seen[key] = true;
            std::vector<double> out;
            std::istringstream ss(it->second);
            std::string item;
            bool ok = true;
            while (std::getline(ss, item, ',')) {
                try {
                    out.push_back(std::stod(detail::trim(item)));
                } catch (...) {
                    ok = false;
                }
            }
            if (!ok || out.empty()) {
                problems.push_back(key + ": expected comma-separated numbers, got '" + it->second + "'");
            } else {
                dst = std::move(out);
            }
        };

        get_str("experiment", rc.experiment);
        if (values_.count("seed")) {
            get_u64("seed", rc.seed);
            rc.seed_set = true;
        }
        get_int("world.duration_frames", rc.world_duration_frames);
        get_int("world.vocab", rc.world_vocab);
        get_int("world.codebook_utterances", rc.world_codebook_utterances);
        get_double("world.snr_min", rc.world_snr_min);
        get_double("world.snr_max", rc.world_snr_max);
        get_double("world.cutoff_min", rc.world_cutoff_min);
        get_double("world.cutoff_max", rc.world_cutoff_max);
        get_double("world.clip_min", rc.world_clip_min);
        get_double("world.clip_max", rc.world_clip_max);
        get_int("world.smear_max", rc.world_smear_max);
        get_double("world.heavy_snr_min", rc.world_heavy_snr_min);
        get_double("world.heavy_snr_max", rc.world_heavy_snr_max);
        get_int("arch.embed_dim", rc.arch_embed_dim);
        get_int("arch.hidden", rc.arch_hidden);
        get_int("arch.context", rc.arch_context);
        get_int("pretrain.steps", rc.pretrain_steps);
        get_int("pretrain.batch", rc.pretrain_batch);
        get_double("pretrain.lr", rc.pretrain_lr);
        get_int("pretrain.warmup", rc.pretrain_warmup);
        get_int("data.train_utterances", rc.data_train_utterances);
        get_int("data.test_utterances", rc.data_test_utterances);
        get_int("curate.candidates", rc.curate_candidates);
        get_double_list("curate.temperatures", rc.curate_temperatures);
        get_int("curate.pair_cap", rc.curate_pair_cap);
        get_double("curate.single_margin", rc.curate_single_margin);
        get_int("dpo.steps", rc.dpo_steps);
        get_int("dpo.batch", rc.dpo_batch);
        get_double("dpo.lr", rc.dpo_lr);
        get_int("dpo.warmup", rc.dpo_warmup);
        get_double("dpo.beta_ar", rc.dpo_beta_ar);
        get_double("dpo.beta_mgm", rc.dpo_beta_mgm);
        get_double("dpo.beta_fm", rc.dpo_beta_fm);
        get_bool("dpo.shared_noise", rc.dpo_shared_noise);
        get_bool("dpo.length_normalize", rc.dpo_length_normalize);
        get_int("pseudo.steps", rc.pseudo_steps);
        get_int("pseudo.student_hidden", rc.pseudo_student_hidden);
        get_int("pseudo.train_utterances", rc.pseudo_train_utterances);
        get_int("pseudo.test_utterances", rc.pseudo_test_utterances);
        get_int("pseudo.pretrain_steps", rc.pseudo_pretrain_steps);

        for (const auto& [k, was_seen] : seen) {
            if (!was_seen) {
                problems.push_back("unknown key '" + k + "'");
            }
        }
        if (!rc.seed_set) {
            problems.push_back("seed: mandatory key is missing");
        }
        if (rc.world_vocab < 2) {
            problems.push_back("world.vocab: must be >= 2");
        }
        if (rc.data_test_utterances < 16) {
            problems.push_back("data.test_utterances: must be >= 16");
        }
        if (rc.curate_candidates < 2) {
            problems.push_back("curate.candidates: must be >= 2");
        }
        if (!problems.empty()) {
            throw ConfigError(problems);
        }
        return rc;
    }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace prefalign
