#pragma once

#include "roma/image.hpp"
#include "roma/model.hpp"
#include "roma/ops.hpp"

namespace roma {

struct LossBreakdown {
    double token_mse = 0.0;
    double cluster_mse = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

// Reconstruction targets come from the augmented image (the pixels the
// encoder actually sees). Token targets are patches 2..K, cluster targets
// are the s x s pixel blocks 2..N, both in raster order and flattened with
// the same layout the prediction heads emit.
Tensor extract_token_targets(const ImageBuffer& img, std::size_t patch_size);
Tensor extract_cluster_targets(const ImageBuffer& img, std::size_t cluster_side_px);

// Mean over predictions of the per-element mean squared error.
Tensor token_loss(const Tensor& preds, const Tensor& targets);
Tensor cluster_loss(const Tensor& preds, const Tensor& targets);

// Taped total: token + lambda * cluster.
Tensor combine_loss(const Tensor& token, const Tensor& cluster, double lambda);

// Plain-arithmetic breakdown for reporting.
LossBreakdown total_loss(double token_mse, double cluster_mse, double lambda);

}  // namespace roma
