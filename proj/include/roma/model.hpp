#pragma once

#include <string>
#include <vector>

#include "roma/ops.hpp"
#include "roma/tensor.hpp"
#include "roma/vision.hpp"

namespace roma {

struct ModelConfig {
    std::size_t width = 64;      // token feature width d
    std::size_t depth = 4;       // encoder blocks
    std::size_t decoder_depth = 2;
    std::size_t heads = 4;       // decoder attention heads
    std::size_t patch_size = 8;
    std::size_t image_side = 96;
    std::size_t state_dim = 8;   // SSM state per channel
    std::size_t expansion = 2;   // SSM channel expansion
    std::size_t s_mult = 6;      // cluster side in patches
    std::size_t mlp_ratio = 4;
    double lambda = 0.1;

    std::size_t grid_side() const { return image_side / patch_size; }
    std::size_t tokens() const { return grid_side() * grid_side(); }
    std::size_t token_dim() const { return patch_size * patch_size * 3; }
    std::size_t inner() const { return expansion * width; }
    std::size_t cluster_grid() const { return grid_side() / s_mult; }
    std::size_t clusters() const { return cluster_grid() * cluster_grid(); }
    std::size_t cluster_side_px() const { return s_mult * patch_size; }
    std::size_t cluster_dim() const { return cluster_side_px() * cluster_side_px() * 3; }

    void validate() const;
    // Presets: desk plus the tiny/small/base/large variant ladder.
    static ModelConfig preset(const std::string& name);
};

enum class InitMode {
    kTrain,  // zero-initialized output projections: residual blocks start as identity
    kDense,  // every weight nonzero; used by gradient checks
};

ParamRegistry init_model_params(const ModelConfig& cfg, Rng& rng, InitMode mode);

// Token embedding: linear map of flattened patch pixels plus a learnable
// per-position embedding.
Tensor patch_embed(const Tensor& patches, const ParamRegistry& params, const ModelConfig& cfg);

// Adds one shared learnable vector, derived from (cos theta, sin theta), to
// every token covered by the rotated crop. Identity when record.applied is
// false.
Tensor angle_embedding(const Tensor& tokens, const RotationRecord& record, const ParamRegistry& params);

// Gated selective-SSM mixer plus MLP, both pre-norm residual.
Tensor mamba_block(const Tensor& x, const ParamRegistry& params, const std::string& prefix, const ModelConfig& cfg);

// Stack of mamba blocks followed by the final norm. Feature row j depends on
// input tokens 0..j only (single left-to-right scan).
Tensor encoder_forward(const Tensor& tokens, const ParamRegistry& params, const ModelConfig& cfg);

// Multi-head cross-attention from per-position queries onto encoder
// features under a strict-past mask: query row k attends features < k, and
// the aggregation for row 0 is all zeros. causal=false exists only for the
// causality-audit fault-injection fixture.
Tensor causal_cross_attention(const Tensor& queries, const Tensor& features, const ParamRegistry& params,
                              const std::string& prefix, const ModelConfig& cfg, bool causal = true);

// One decoder block: pre-norm cross-attention onto the features, then a
// pre-norm MLP, both residual.
Tensor decoder_block(const Tensor& stream, const Tensor& features, const ParamRegistry& params,
                     const std::string& prefix, const ModelConfig& cfg, bool causal = true);

struct DecoderOut {
    Tensor token_preds;               // (K-1) x p^2*C, row r predicts token r+1
    std::vector<Tensor> layer_feats;  // decoder_depth tensors of K x d
};

DecoderOut decoder_forward(const Tensor& features, const ParamRegistry& params, const ModelConfig& cfg,
                           bool causal = true);

// Final decoder norm and per-token pixel head over rows 2..K.
Tensor token_head(const Tensor& stream, const ParamRegistry& params, const ModelConfig& cfg);

// Token indices of cluster block m (raster order over the block grid).
std::vector<std::size_t> cluster_token_indices(const ModelConfig& cfg, std::size_t block);

// Concatenates per-layer decoder features and mean-pools them over the
// tokens of cluster n-1, producing the context row for prediction n
// (n = 2..N): output is (N-1) x (decoder_depth * d).
Tensor cluster_aggregate(const std::vector<Tensor>& layer_feats, const ModelConfig& cfg);

// Two-layer MLP mapping cluster context to s^2*C pixel values.
Tensor cluster_head(const Tensor& context, const ParamRegistry& params, const ModelConfig& cfg);

struct ModelOutputs {
    Tensor features;
    Tensor token_preds;
    Tensor cluster_preds;
};

struct ForwardOptions {
    bool causal_mask = true;
};

class RomaModel {
  public:
    RomaModel(ModelConfig cfg, Rng& rng, InitMode mode = InitMode::kTrain);

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    Tensor embed(const Tensor& patch_matrix, const RotationRecord& record) const;
    ModelOutputs forward(const Tensor& patch_matrix, const RotationRecord& record, ForwardOptions opts = {}) const;
    ModelOutputs forward_image(const ImageBuffer& img, const RotationRecord& record, ForwardOptions opts = {}) const;
    // Embedding + encoder only (used by feature extraction and benchmarks).
    Tensor encode(const Tensor& patch_matrix, const RotationRecord& record) const;

  private:
    ModelConfig cfg_;
    ParamRegistry params_;
};

}  // namespace roma
