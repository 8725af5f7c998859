#pragma once

#include <map>
#include <string>

#include "roma/tensor.hpp"

namespace roma {

// Decoupled-weight-decay Adam over a parameter registry. Moment buffers
// mirror parameter shapes; iteration order is the registry's (lexicographic).
class AdamW {
  public:
    AdamW(ParamRegistry& params, double weight_decay = 0.05, double beta1 = 0.9, double beta2 = 0.999,
          double eps = 1e-8);

    // One update from the gradients currently held by the registry.
    void step(double lr);

    std::size_t step_count() const { return t_; }
    double weight_decay() const { return weight_decay_; }
    double beta1() const { return beta1_; }
    double beta2() const { return beta2_; }
    double eps() const { return eps_; }

    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };
    const std::map<std::string, Slot>& slots() const { return slots_; }
    // Checkpoint restore.
    void restore(std::size_t step_count, const std::map<std::string, Slot>& slots);

  private:
    ParamRegistry& params_;
    double weight_decay_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

// Linear warmup from 0 to base over `warmup` steps, then cosine decay to
// min_lr at `total`.
double cosine_lr(std::size_t step, std::size_t warmup, std::size_t total, double base, double min_lr);

}  // namespace roma
