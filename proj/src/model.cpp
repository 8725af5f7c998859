#include "roma/model.hpp"

#include <cmath>

namespace roma {

void ModelConfig::validate() const {
    if (width == 0 || depth == 0 || decoder_depth == 0) throw ConfigError("model dims must be positive");
    if (image_side % patch_size != 0)
        throw ConfigError("image side " + std::to_string(image_side) + " not divisible by patch size " +
                          std::to_string(patch_size));
    if (grid_side() % s_mult != 0)
        throw ConfigError("grid side " + std::to_string(grid_side()) + " not divisible by s_mult " +
                          std::to_string(s_mult));
    if (width % heads != 0)
        throw ConfigError("width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
    if (state_dim == 0 || expansion == 0 || mlp_ratio == 0) throw ConfigError("state/expansion/mlp_ratio must be positive");
}

ModelConfig ModelConfig::preset(const std::string& name) {
    ModelConfig cfg;
    if (name == "desk") {
        // Defaults above.
    } else if (name == "tiny") {
        cfg = ModelConfig{192, 12, 2, 6, 16, 192, 16, 2, 6, 4, 0.1};
    } else if (name == "small") {
        cfg = ModelConfig{384, 12, 2, 6, 16, 192, 16, 2, 6, 4, 0.1};
    } else if (name == "base") {
        cfg = ModelConfig{768, 12, 2, 8, 16, 192, 16, 2, 6, 4, 0.1};
    } else if (name == "large") {
        cfg = ModelConfig{1024, 24, 2, 8, 16, 192, 16, 2, 6, 4, 0.1};
    } else {
        throw ConfigError("unknown model preset: " + name + " (expected desk/tiny/small/base/large)");
    }
    cfg.validate();
    return cfg;
}

namespace {

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

void init_linear(ParamRegistry& reg, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng,
                 double stddev, bool zero) {
    reg.add(prefix + ".w", zero ? Tensor::zeros({in, out}) : Tensor::randn({in, out}, rng, stddev));
    reg.add(prefix + ".b", Tensor::zeros({out}));
}

void init_norm(ParamRegistry& reg, const std::string& prefix, std::size_t d) {
    reg.add(prefix + ".g", Tensor::full({d}, 1.0));
    reg.add(prefix + ".b", Tensor::zeros({d}));
}

}  // namespace

ParamRegistry init_model_params(const ModelConfig& cfg, Rng& rng, InitMode mode) {
    cfg.validate();
    const bool dense = mode == InitMode::kDense;
    const double sd = 0.02;
    const std::size_t d = cfg.width, ed = cfg.inner(), n = cfg.state_dim;
    ParamRegistry reg;

    init_linear(reg, "embed.patch", cfg.token_dim(), d, rng, sd, false);
    reg.add("embed.pos", Tensor::randn({cfg.tokens(), d}, rng, sd));
    reg.add("embed.angle.w", Tensor::randn({2, d}, rng, sd));

    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string p = "enc" + std::to_string(i) + ".";
        init_norm(reg, p + "norm1", d);
        init_linear(reg, p + "in", d, 2 * ed, rng, sd, false);
        init_linear(reg, p + "dt", ed, ed, rng, sd, false);
        // Per-channel step bias: softplus(dt.b) log-uniform in [1e-3, 1e-1].
        {
            Tensor& dtb = reg.get(p + "dt.b");
            for (std::size_t c = 0; c < ed; ++c)
                dtb.data()[c] = softplus_inverse(std::exp(rng.uniform(std::log(1e-3), std::log(1e-1))));
        }
        reg.add(p + "bproj.w", Tensor::randn({ed, n}, rng, sd));
        reg.add(p + "cproj.w", Tensor::randn({ed, n}, rng, sd));
        // A = -exp(a_log), initialized to -(1..n) per channel.
        {
            Tensor a_log = Tensor::zeros({ed, n});
            for (std::size_t c = 0; c < ed; ++c)
                for (std::size_t i2 = 0; i2 < n; ++i2) a_log.data()[c * n + i2] = std::log(static_cast<double>(i2 + 1));
            reg.add(p + "a_log", std::move(a_log));
        }
        reg.add(p + "dskip", Tensor::full({ed}, 1.0));
        init_linear(reg, p + "out", ed, d, rng, sd, !dense);
        init_norm(reg, p + "norm2", d);
        init_linear(reg, p + "fc1", d, cfg.mlp_ratio * d, rng, sd, false);
        init_linear(reg, p + "fc2", cfg.mlp_ratio * d, d, rng, sd, !dense);
    }
    init_norm(reg, "enc_norm", d);

    reg.add("queries", Tensor::randn({cfg.tokens(), d}, rng, sd));
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
        const std::string p = "dec" + std::to_string(i) + ".";
        init_norm(reg, p + "norm1", d);
        init_linear(reg, p + "q", d, d, rng, sd, false);
        init_linear(reg, p + "k", d, d, rng, sd, false);
        init_linear(reg, p + "v", d, d, rng, sd, false);
        init_linear(reg, p + "o", d, d, rng, sd, !dense);
        init_norm(reg, p + "norm2", d);
        init_linear(reg, p + "fc1", d, cfg.mlp_ratio * d, rng, sd, false);
        init_linear(reg, p + "fc2", cfg.mlp_ratio * d, d, rng, sd, !dense);
    }
    init_norm(reg, "dec_norm", d);

    init_linear(reg, "head.token", d, cfg.token_dim(), rng, sd, false);
    const std::size_t ctx_dim = cfg.decoder_depth * d;
    init_linear(reg, "head.cluster.fc1", ctx_dim, ctx_dim, rng, sd, false);
    init_linear(reg, "head.cluster.fc2", ctx_dim, cfg.cluster_dim(), rng, sd, false);
    return reg;
}

Tensor patch_embed(const Tensor& patches, const ParamRegistry& params, const ModelConfig& cfg) {
    if (patches.ndim() != 2 || patches.cols() != cfg.token_dim())
        throw ShapeError("patch_embed: expected [Kx" + std::to_string(cfg.token_dim()) + "], got " +
                         shape_str(patches.shape()));
    Tensor tok = add_rowvec(matmul(patches, params.get("embed.patch.w")), params.get("embed.patch.b"));
    return add(tok, params.get("embed.pos"));
}

Tensor angle_embedding(const Tensor& tokens, const RotationRecord& record, const ParamRegistry& params) {
    if (!record.applied) return tokens;
    Tensor phase = Tensor::from_data({1, 2}, {std::cos(record.theta), std::sin(record.theta)});
    Tensor vec = matmul(phase, params.get("embed.angle.w"));
    return add_to_rows(tokens, record.covered_patches, vec);
}

namespace {

Tensor mlp_block(const Tensor& x, const ParamRegistry& params, const std::string& prefix, const ModelConfig& cfg) {
    Tensor z = layer_norm(x, params.get(prefix + "norm2.g"), params.get(prefix + "norm2.b"));
    Tensor h = gelu(add_rowvec(matmul(z, params.get(prefix + "fc1.w")), params.get(prefix + "fc1.b")));
    Tensor m = add_rowvec(matmul(h, params.get(prefix + "fc2.w")), params.get(prefix + "fc2.b"));
    return add(x, m);
}

}  // namespace

Tensor mamba_block(const Tensor& x, const ParamRegistry& params, const std::string& prefix, const ModelConfig& cfg) {
    const std::size_t ed = cfg.inner();
    Tensor xn = layer_norm(x, params.get(prefix + "norm1.g"), params.get(prefix + "norm1.b"));
    Tensor vg = add_rowvec(matmul(xn, params.get(prefix + "in.w")), params.get(prefix + "in.b"));
    Tensor v = slice_cols(vg, 0, ed);
    Tensor gate = slice_cols(vg, ed, 2 * ed);

    Tensor dlt = softplus(add_rowvec(matmul(v, params.get(prefix + "dt.w")), params.get(prefix + "dt.b")));
    Tensor b_in = matmul(v, params.get(prefix + "bproj.w"));
    Tensor c_out = matmul(v, params.get(prefix + "cproj.w"));
    Tensor a = neg(exp_elem(params.get(prefix + "a_log")));
    Tensor scanned = ssm_scan(v, dlt, b_in, c_out, a, params.get(prefix + "dskip"));

    Tensor gated = mul(scanned, silu(gate));
    Tensor y = add_rowvec(matmul(gated, params.get(prefix + "out.w")), params.get(prefix + "out.b"));
    Tensor x1 = add(x, y);
    return mlp_block(x1, params, prefix, cfg);
}

Tensor encoder_forward(const Tensor& tokens, const ParamRegistry& params, const ModelConfig& cfg) {
    Tensor x = tokens;
    for (std::size_t i = 0; i < cfg.depth; ++i) x = mamba_block(x, params, "enc" + std::to_string(i) + ".", cfg);
    return layer_norm(x, params.get("enc_norm.g"), params.get("enc_norm.b"));
}

Tensor causal_cross_attention(const Tensor& queries, const Tensor& features, const ParamRegistry& params,
                              const std::string& prefix, const ModelConfig& cfg, bool causal) {
    const std::size_t d = cfg.width, dh = d / cfg.heads;
    Tensor q = add_rowvec(matmul(queries, params.get(prefix + "q.w")), params.get(prefix + "q.b"));
    Tensor k = add_rowvec(matmul(features, params.get(prefix + "k.w")), params.get(prefix + "k.b"));
    Tensor v = add_rowvec(matmul(features, params.get(prefix + "v.w")), params.get(prefix + "v.b"));
    std::vector<Tensor> head_outs;
    head_outs.reserve(cfg.heads);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t h = 0; h < cfg.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
        Tensor weights = causal ? prefix_softmax_rows(scores) : softmax_rows(scores);
        head_outs.push_back(matmul(weights, vh));
    }
    Tensor merged = concat_cols(head_outs);
    return add_rowvec(matmul(merged, params.get(prefix + "o.w")), params.get(prefix + "o.b"));
}

Tensor decoder_block(const Tensor& stream, const Tensor& features, const ParamRegistry& params,
                     const std::string& prefix, const ModelConfig& cfg, bool causal) {
    Tensor qn = layer_norm(stream, params.get(prefix + "norm1.g"), params.get(prefix + "norm1.b"));
    Tensor attn = causal_cross_attention(qn, features, params, prefix, cfg, causal);
    Tensor x1 = add(stream, attn);
    return mlp_block(x1, params, prefix, cfg);
}

Tensor token_head(const Tensor& stream, const ParamRegistry& params, const ModelConfig& cfg) {
    Tensor final = layer_norm(stream, params.get("dec_norm.g"), params.get("dec_norm.b"));
    // Position 0 has an empty attention set and gets no prediction.
    Tensor tail = slice_rows(final, 1, cfg.tokens());
    return add_rowvec(matmul(tail, params.get("head.token.w")), params.get("head.token.b"));
}

DecoderOut decoder_forward(const Tensor& features, const ParamRegistry& params, const ModelConfig& cfg, bool causal) {
    DecoderOut out;
    Tensor stream = params.get("queries");
    for (std::size_t i = 0; i < cfg.decoder_depth; ++i) {
        stream = decoder_block(stream, features, params, "dec" + std::to_string(i) + ".", cfg, causal);
        out.layer_feats.push_back(stream);
    }
    out.token_preds = token_head(stream, params, cfg);
    return out;
}

std::vector<std::size_t> cluster_token_indices(const ModelConfig& cfg, std::size_t block) {
    const std::size_t g = cfg.cluster_grid();
    const std::size_t br = block / g, bc = block % g;
    std::vector<std::size_t> idx;
    idx.reserve(cfg.s_mult * cfg.s_mult);
    for (std::size_t r = br * cfg.s_mult; r < (br + 1) * cfg.s_mult; ++r)
        for (std::size_t c = bc * cfg.s_mult; c < (bc + 1) * cfg.s_mult; ++c) idx.push_back(r * cfg.grid_side() + c);
    return idx;
}

Tensor cluster_aggregate(const std::vector<Tensor>& layer_feats, const ModelConfig& cfg) {
    if (layer_feats.size() != cfg.decoder_depth)
        throw ShapeError("cluster_aggregate: expected " + std::to_string(cfg.decoder_depth) + " layer features");
    if (cfg.grid_side() % cfg.s_mult != 0)
        throw ShapeError("cluster_aggregate: grid side not divisible by s_mult");
    Tensor stacked = concat_cols(layer_feats);
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t b = 0; b + 1 < cfg.clusters(); ++b) groups.push_back(cluster_token_indices(cfg, b));
    return group_mean_rows(stacked, groups);
}

Tensor cluster_head(const Tensor& context, const ParamRegistry& params, const ModelConfig& cfg) {
    Tensor h = gelu(add_rowvec(matmul(context, params.get("head.cluster.fc1.w")), params.get("head.cluster.fc1.b")));
    return add_rowvec(matmul(h, params.get("head.cluster.fc2.w")), params.get("head.cluster.fc2.b"));
}

RomaModel::RomaModel(ModelConfig cfg, Rng& rng, InitMode mode)
    : cfg_(cfg), params_(init_model_params(cfg, rng, mode)) {}

Tensor RomaModel::embed(const Tensor& patch_matrix, const RotationRecord& record) const {
    return angle_embedding(patch_embed(patch_matrix, params_, cfg_), record, params_);
}

Tensor RomaModel::encode(const Tensor& patch_matrix, const RotationRecord& record) const {
    return encoder_forward(embed(patch_matrix, record), params_, cfg_);
}

ModelOutputs RomaModel::forward(const Tensor& patch_matrix, const RotationRecord& record, ForwardOptions opts) const {
    ModelOutputs out;
    out.features = encode(patch_matrix, record);
    DecoderOut dec = decoder_forward(out.features, params_, cfg_, opts.causal_mask);
    out.token_preds = dec.token_preds;
    out.cluster_preds = cluster_head(cluster_aggregate(dec.layer_feats, cfg_), params_, cfg_);
    return out;
}

ModelOutputs RomaModel::forward_image(const ImageBuffer& img, const RotationRecord& record, ForwardOptions opts) const {
    const PatchGrid grid = split_patches(img, cfg_.patch_size);
    return forward(grid.patch_matrix(), record, opts);
}

}  // namespace roma
