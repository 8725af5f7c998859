#pragma once

#include <functional>
#include <string>
#include <vector>

#include "roma/checkpoint.hpp"
#include "roma/fdcheck.hpp"
#include "roma/loss.hpp"
#include "roma/model.hpp"
#include "roma/optim.hpp"
#include "roma/vision.hpp"

namespace roma {

struct TrainOptions {
    double lambda = 0.1;
    bool ares_enabled = true;
    AresParams ares;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

// One optimizer update over a batch. Per image: rotation augmentation,
// embed (+angle), encode, decode, token + lambda*cluster loss; the batch
// gradient is the per-sample gradients summed in sample-index order scaled
// by 1/B, so results are bitwise identical for any worker count. Gradients
// are cleared afterwards. The augmentation stream for batch position i is
// seeded with seed ^ (step_index * batch + i).
LossBreakdown train_step(const std::vector<ImageBuffer>& batch, RomaModel& model, AdamW& optim, double lr,
                         std::size_t step_index, const TrainOptions& opts);

struct TrainConfig {
    std::size_t steps = 2000;
    std::size_t batch_size = 8;
    double base_lr = 1.5e-4;
    double warmup_frac = 0.05;
    double min_lr_frac = 0.01;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    TrainOptions step;
};

struct PretrainResult {
    std::vector<LossBreakdown> curve;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Full loop: cosine schedule with warmup, metrics CSV
// (step,lr,token_mse,cluster_mse,total,wall_ms), final checkpoint.
// Batch j of step s is dataset[(s*B + j) % N].
PretrainResult run_pretraining(RomaModel& model, const std::vector<ImageBuffer>& dataset, const TrainConfig& cfg,
                               const std::string& run_dir);

struct ModelFdOptions {
    FdOptions fd;
    double lambda = 0.1;
    std::size_t workers = 1;
};

// Finite-difference check of the full Eq-total loss over every trainable
// tensor. Functionally identical to finite_difference_check on the same
// loss; evaluation is staged (probes of a block re-run the pipeline only
// from that block on) and parallel across probes, neither of which changes
// any computed value.
FdReport model_fd_check(const ModelConfig& cfg, const ParamRegistry& master, const ImageBuffer& img,
                        const RotationRecord& rec, const ModelFdOptions& opts);

}  // namespace roma
