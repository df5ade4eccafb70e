// Named parameter storage and Adam with linear warmup + inverse-sqrt decay.

#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prefalign/array.hpp"

namespace prefalign {

enum class Schedule { InverseSqrt, Constant };

struct OptimConfig {
    double learning_rate{1e-3};
    int warmup_steps{0};
    Schedule schedule{Schedule::InverseSqrt};
    double adam_beta1{0.9};
    double adam_beta2{0.999};
    double adam_eps{1e-8};

    void validate() const {
        if (!(learning_rate > 0.0)) {
            throw std::invalid_argument("OptimConfig: learning_rate must be > 0");
        }
        if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
            throw std::invalid_argument("OptimConfig: betas must lie in [0, 1)");
        }
        if (warmup_steps < 0) {
            throw std::invalid_argument("OptimConfig: warmup_steps must be >= 0");
        }
    }
};

// Effective learning rate at a 1-based step: linear warmup from 0 to peak,
// then either flat or peak * sqrt(warmup/step).
inline double effective_lr(const OptimConfig& cfg, int step) {
    if (step <= 0) {
        throw std::invalid_argument("effective_lr: step must be >= 1");
    }
    if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
        return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    if (cfg.schedule == Schedule::Constant) {
        return cfg.learning_rate;
    }
    const double ref = cfg.warmup_steps > 0 ? static_cast<double>(cfg.warmup_steps) : 1.0;
    return cfg.learning_rate * std::sqrt(ref / static_cast<double>(step));
}

class ParamStore {
  public:
    struct Slot {
        Array2D value;
        Array2D grad;
        Array2D m;  // Adam first moment
        Array2D v;  // Adam second moment
    };

    void add(const std::string& name, Array2D init) {
        if (slots_.count(name)) {
            throw std::invalid_argument("ParamStore::add: duplicate parameter '" + name + "'");
        }
        Slot s;
        s.grad = Array2D(init.rows, init.cols, 0.0);
        s.m = Array2D(init.rows, init.cols, 0.0);
        s.v = Array2D(init.rows, init.cols, 0.0);
        s.value = std::move(init);
        order_.push_back(name);
        slots_.emplace(name, std::move(s));
    }

    bool has(const std::string& name) const { return slots_.count(name) != 0; }

    Array2D& value(const std::string& name) { return slot(name).value; }
    const Array2D& value(const std::string& name) const { return slot(name).value; }
    Array2D& grad(const std::string& name) { return slot(name).grad; }
    const Array2D& grad(const std::string& name) const { return slot(name).grad; }

    const std::vector<std::string>& names() const { return order_; }

    void zero_grad() {
        for (auto& [name, s] : slots_) {
            std::fill(s.grad.data.begin(), s.grad.data.end(), 0.0);
        }
    }

    void scale_grad(double c) {
        for (auto& [name, s] : slots_) {
            for (double& g : s.grad.data) {
                g *= c;
            }
        }
    }

    size_t total_parameters() const {
        size_t n = 0;
        for (const auto& [name, s] : slots_) {
            n += s.value.size();
        }
        return n;
    }

    Slot& slot(const std::string& name) {
        auto it = slots_.find(name);
        if (it == slots_.end()) {
            throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
        }
        return it->second;
    }
    const Slot& slot(const std::string& name) const {
        auto it = slots_.find(name);
        if (it == slots_.end()) {
            throw std::invalid_argument("ParamStore: unknown parameter '" + name + "'");
        }
        return it->second;
    }

  private:
    std::map<std::string, Slot> slots_;
    std::vector<std::string> order_;

  public:
    // Flat views used by checkpoints and finite-difference harnesses.
    std::vector<double*> flat_value_ptrs() {
        std::vector<double*> out;
        for (const auto& name : order_) {
            Array2D& v = slots_.at(name).value;
            for (double& x : v.data) {
                out.push_back(&x);
            }
        }
        return out;
    }
    std::vector<double> flat_grads() const {
        std::vector<double> out;
        for (const auto& name : order_) {
            const Array2D& g = slots_.at(name).grad;
            out.insert(out.end(), g.data.begin(), g.data.end());
        }
        return out;
    }
};

// One Adam update with bias correction. `step` is 1-based and also drives the
// warmup/decay schedule.
inline void adam_step(ParamStore& store, const OptimConfig& cfg, int step) {
    if (step <= 0) {
        throw std::invalid_argument("adam_step: step must be >= 1");
    }
    cfg.validate();
    const double lr = effective_lr(cfg, step);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, step);
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, step);
    for (const auto& name : store.names()) {
        auto& s = store.slot(name);
        for (size_t i = 0; i < s.value.size(); ++i) {
            const double g = s.grad.data[i];
            s.m.data[i] = cfg.adam_beta1 * s.m.data[i] + (1.0 - cfg.adam_beta1) * g;
            s.v.data[i] = cfg.adam_beta2 * s.v.data[i] + (1.0 - cfg.adam_beta2) * g * g;
            const double mhat = s.m.data[i] / bc1;
            const double vhat = s.v.data[i] / bc2;
            s.value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
        }
    }
}

}  // namespace prefalign
