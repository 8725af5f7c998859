#include "roma/optim.hpp"

#include <cmath>

namespace roma {

AdamW::AdamW(ParamRegistry& params, double weight_decay, double beta1, double beta2, double eps)
    : params_(params), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, t] : params_) {
        Slot slot;
        slot.m.assign(t.numel(), 0.0);
        slot.v.assign(t.numel(), 0.0);
        slots_.emplace(name, std::move(slot));
    }
}

void AdamW::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, t] : params_) {
        Slot& slot = slots_.at(name);
        double* p = t.data();
        const double* g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            if (std::isnan(g[i])) throw NumericError("adamw_step: NaN gradient in " + name);
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g[i];
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[i]);
        }
    }
}

void AdamW::restore(std::size_t step_count, const std::map<std::string, Slot>& slots) {
    if (slots.size() != slots_.size()) throw ContractError("AdamW::restore: slot count mismatch");
    for (auto& [name, slot] : slots) {
        auto it = slots_.find(name);
        if (it == slots_.end()) throw ContractError("AdamW::restore: unknown slot " + name);
        if (slot.m.size() != it->second.m.size())
            throw ShapeError("AdamW::restore: moment size mismatch for " + name);
        it->second = slot;
    }
    t_ = step_count;
}

double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double base, double min_lr) {
    if (warmup > total) throw ConfigError("cosine_lr: warmup " + std::to_string(warmup) + " exceeds total " +
                                          std::to_string(total));
    if (step > total) throw ContractError("cosine_lr: step beyond schedule end");
    if (step <= warmup)
        return warmup == 0 ? base : base * static_cast<double>(step) / static_cast<double>(warmup);
    const double t = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
    return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace roma
