#include "roma/loss.hpp"

namespace roma {

namespace {
// Flattens the pixel block at (y0, x0) of side `side`: row-major within the
// block, channels interleaved. Matches PatchGrid::patch_pixels.
void copy_block(const ImageBuffer& img, std::size_t y0, std::size_t x0, std::size_t side, double* out) {
    std::size_t i = 0;
    for (std::size_t dy = 0; dy < side; ++dy)
        for (std::size_t dx = 0; dx < side; ++dx)
            for (std::size_t c = 0; c < img.channels; ++c) out[i++] = img.at(y0 + dy, x0 + dx, c);
}

Tensor extract_blocks_from_second(const ImageBuffer& img, std::size_t side, const char* who) {
    if (img.height % side != 0 || img.width % side != 0)
        throw ShapeError(std::string(who) + ": image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " not divisible by block side " + std::to_string(side));
    const std::size_t rows = img.height / side, cols = img.width / side;
    const std::size_t count = rows * cols;
    if (count < 2) throw ShapeError(std::string(who) + ": need at least 2 blocks");
    const std::size_t dim = side * side * img.channels;
    Tensor out = Tensor::zeros({count - 1, dim});
    for (std::size_t k = 1; k < count; ++k)
        copy_block(img, (k / cols) * side, (k % cols) * side, side, out.data() + (k - 1) * dim);
    return out;
}
}  // namespace

Tensor extract_token_targets(const ImageBuffer& img, std::size_t patch_size) {
    return extract_blocks_from_second(img, patch_size, "extract_token_targets");
}

Tensor extract_cluster_targets(const ImageBuffer& img, std::size_t cluster_side_px) {
    return extract_blocks_from_second(img, cluster_side_px, "extract_cluster_targets");
}

Tensor token_loss(const Tensor& preds, const Tensor& targets) {
    if (preds.shape() != targets.shape())
        throw ShapeError("token_loss: preds " + shape_str(preds.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    return mse(preds, targets);
}

Tensor cluster_loss(const Tensor& preds, const Tensor& targets) {
    if (preds.shape() != targets.shape())
        throw ShapeError("cluster_loss: preds " + shape_str(preds.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    return mse(preds, targets);
}

Tensor combine_loss(const Tensor& token, const Tensor& cluster, double lambda) {
    if (lambda < 0.0) throw ContractError("combine_loss: lambda must be >= 0");
    return add(token, scale(cluster, lambda));
}

LossBreakdown total_loss(double token_mse, double cluster_mse, double lambda) {
    if (lambda < 0.0) throw ContractError("total_loss: lambda must be >= 0");
    if (token_mse < 0.0 || cluster_mse < 0.0) throw ContractError("total_loss: MSE terms must be >= 0");
    LossBreakdown b;
    b.token_mse = token_mse;
    b.cluster_mse = cluster_mse;
    b.lambda = lambda;
    b.total = token_mse + lambda * cluster_mse;
    return b;
}

}  // namespace roma
