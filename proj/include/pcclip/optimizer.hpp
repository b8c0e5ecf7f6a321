#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcclip/error.hpp"

namespace pcclip {

enum class OptimizerAlgorithm { adam, adamw };

inline OptimizerAlgorithm parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerAlgorithm::adam;
    if (s == "adamw") return OptimizerAlgorithm::adamw;
    throw ValidationError("unknown optimizer '" + s + "' (expected adam or adamw)");
}

inline std::string optimizer_name(OptimizerAlgorithm a) { return a == OptimizerAlgorithm::adam ? "adam" : "adamw"; }

struct OptimizerConfig {
    OptimizerAlgorithm algorithm = OptimizerAlgorithm::adamw;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    int epochs = 100;
    int batch_size = 32;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
        if (weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
        if (epochs < 0) throw ValidationError("epochs must be non-negative");
        if (batch_size < 1) throw ValidationError("batch_size must be positive");
    }

    // Translator pre-training recipe: Adam, lr 1e-3, decay 1e-4, 100 epochs, batch 16.
    static OptimizerConfig pretraining() { return {OptimizerAlgorithm::adam, 1e-3, 1e-4, 100, 16, 0}; }
    // Adapter recipe: AdamW, lr 1e-3, decay 1e-4, 100 epochs, batch 32.
    static OptimizerConfig few_shot() { return {OptimizerAlgorithm::adamw, 1e-3, 1e-4, 100, 32, 0}; }
};

// Adam over a flat parameter vector. `adam` adds weight decay to the gradient,
// `adamw` decays the weights directly. Entries with frozen[i] != 0 never move.
template <typename T>
class Adam {
public:
    Adam(std::size_t n, OptimizerAlgorithm algorithm, double lr, double weight_decay, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8)
        : algorithm_(algorithm), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0),
          v_(n, 0.0) {}

    void set_frozen(std::vector<std::uint8_t> frozen) { frozen_ = std::move(frozen); }

    void step(std::span<T> params, std::span<const T> grads) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw ValidationError("Adam::step: size mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!frozen_.empty() && frozen_[i]) continue;
            double p = params[i];
            double g = grads[i];
            if (algorithm_ == OptimizerAlgorithm::adam) {
                g += wd_ * p;
            } else {
                p -= lr_ * wd_ * p;
            }
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i] / bc1;
            const double vhat = v_[i] / bc2;
            p -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            params[i] = static_cast<T>(p);
        }
    }

    std::uint64_t steps() const { return t_; }
    void set_learning_rate(double lr) { lr_ = lr; }

private:
    OptimizerAlgorithm algorithm_;
    double lr_, wd_, beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::vector<std::uint8_t> frozen_;
    std::uint64_t t_ = 0;
};

}  // namespace pcclip
