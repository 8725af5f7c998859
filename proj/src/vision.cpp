#include "roma/vision.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace roma {

std::vector<double> PatchGrid::patch_pixels(std::size_t k) const {
    const std::size_t p = patch_size;
    const std::size_t y0 = patch_row(k) * p;
    const std::size_t x0 = patch_col(k) * p;
    std::vector<double> out;
    out.reserve(p * p * image.channels);
    for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
            for (std::size_t c = 0; c < image.channels; ++c) out.push_back(image.at(y0 + dy, x0 + dx, c));
    return out;
}

Tensor PatchGrid::patch_matrix() const {
    const std::size_t dim = patch_size * patch_size * image.channels;
    Tensor m = Tensor::zeros({count(), dim});
    for (std::size_t k = 0; k < count(); ++k) {
        const auto px = patch_pixels(k);
        std::copy(px.begin(), px.end(), m.data() + k * dim);
    }
    return m;
}

PatchGrid split_patches(const ImageBuffer& img, std::size_t patch_size) {
    if (patch_size == 0) throw ShapeError("split_patches: patch size 0");
    if (img.height % patch_size != 0 || img.width % patch_size != 0)
        throw ShapeError("split_patches: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " not divisible by patch size " + std::to_string(patch_size));
    PatchGrid grid;
    grid.rows = img.height / patch_size;
    grid.cols = img.width / patch_size;
    grid.patch_size = patch_size;
    grid.image = img;
    return grid;
}

std::vector<std::uint8_t> lbp_map(const ImageBuffer& img) {
    const std::size_t h = img.height, w = img.width;
    std::vector<double> gray(h * w);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (std::size_t c = 0; c < img.channels; ++c) s += img.at(y, x, c);
            gray[y * w + x] = s / static_cast<double>(img.channels);
        }
    // Clockwise from top-left: bit 0 TL, 1 T, 2 TR, 3 R, 4 BR, 5 B, 6 BL, 7 L.
    static constexpr int kDy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
    static constexpr int kDx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
    std::vector<std::uint8_t> codes(h * w, 0);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            const double center = gray[y * w + x];
            std::uint8_t code = 0;
            for (int b = 0; b < 8; ++b) {
                const long ny = std::clamp<long>(static_cast<long>(y) + kDy[b], 0, static_cast<long>(h) - 1);
                const long nx = std::clamp<long>(static_cast<long>(x) + kDx[b], 0, static_cast<long>(w) - 1);
                if (gray[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)] > center)
                    code |= static_cast<std::uint8_t>(1u << b);
            }
            codes[y * w + x] = code;
        }
    return codes;
}

ScoreMap patch_scores(const PatchGrid& grid, const std::vector<std::uint8_t>& lbp) {
    const std::size_t w = grid.image.width;
    if (lbp.size() != grid.image.height * w)
        throw ShapeError("patch_scores: LBP map size " + std::to_string(lbp.size()) + " does not match image");
    ScoreMap sm;
    sm.rows = grid.rows;
    sm.cols = grid.cols;
    sm.patch_size = grid.patch_size;
    sm.scores.resize(grid.count());
    const std::size_t p = grid.patch_size;
    const double total = static_cast<double>(p * p);
    std::array<std::size_t, 256> hist{};
    for (std::size_t k = 0; k < grid.count(); ++k) {
        hist.fill(0);
        const std::size_t y0 = grid.patch_row(k) * p;
        const std::size_t x0 = grid.patch_col(k) * p;
        for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx) ++hist[lbp[(y0 + dy) * w + x0 + dx]];
        double entropy = 0.0;
        for (std::size_t cnt : hist) {
            if (cnt == 0) continue;
            const double q = static_cast<double>(cnt) / total;
            entropy -= q * std::log2(q);
        }
        sm.scores[k] = entropy;
    }
    double mean = 0.0;
    for (double s : sm.scores) mean += s;
    sm.image_mean = mean / static_cast<double>(sm.scores.size());
    return sm;
}

std::size_t select_top_patch(const ScoreMap& scores) {
    if (scores.scores.empty()) throw ContractError("select_top_patch: empty score map");
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.scores.size(); ++k)
        if (scores.scores[k] > scores.scores[best]) best = k;
    return best;
}

RegionBox best_candidate_box(const ScoreMap& scores, std::size_t top_patch, std::size_t side) {
    const std::size_t p = scores.patch_size;
    if (side % p != 0) throw ContractError("best_candidate_box: side not a multiple of patch size");
    const std::size_t bs = side / p;  // box side in patches
    if (bs > scores.rows || bs > scores.cols)
        throw ContractError("best_candidate_box: side " + std::to_string(side) + " exceeds image");
    const std::size_t tr = top_patch / scores.cols;
    const std::size_t tc = top_patch % scores.cols;

    bool found = false;
    RegionBox best;
    double best_value = 0.0;
    for (std::size_t r0 = 0; r0 + bs <= scores.rows; ++r0) {
        if (tr < r0 || tr >= r0 + bs) continue;
        for (std::size_t c0 = 0; c0 + bs <= scores.cols; ++c0) {
            if (tc < c0 || tc >= c0 + bs) continue;
            double sum = 0.0;
            for (std::size_t r = r0; r < r0 + bs; ++r)
                for (std::size_t c = c0; c < c0 + bs; ++c) sum += scores.scores[r * scores.cols + c];
            const double value = sum / static_cast<double>(bs * bs);
            if (!found || value > best_value) {
                found = true;
                best_value = value;
                best = RegionBox{r0 * p, c0 * p, side};
            }
        }
    }
    if (!found) throw ContractError("best_candidate_box: no candidate contains the top patch");
    return best;
}

namespace {
double box_mean_score(const ScoreMap& scores, const RegionBox& box) {
    const std::size_t p = scores.patch_size;
    const std::size_t bs = box.side / p;
    const std::size_t r0 = box.top / p, c0 = box.left / p;
    double sum = 0.0;
    for (std::size_t r = r0; r < r0 + bs; ++r)
        for (std::size_t c = c0; c < c0 + bs; ++c) sum += scores.scores[r * scores.cols + c];
    return sum / static_cast<double>(bs * bs);
}
}  // namespace

std::optional<RegionBox> adaptive_region_select(const ScoreMap& scores, std::size_t top_patch,
                                                const std::vector<std::size_t>& ladder, double threshold_mult) {
    for (std::size_t i = 0; i + 1 < ladder.size(); ++i)
        if (ladder[i] < ladder[i + 1]) throw ContractError("adaptive_region_select: ladder must descend");
    for (std::size_t side : ladder) {
        if (side / scores.patch_size > scores.rows || side / scores.patch_size > scores.cols) continue;
        const RegionBox box = best_candidate_box(scores, top_patch, side);
        if (box_mean_score(scores, box) > threshold_mult * scores.image_mean) return box;
    }
    return std::nullopt;
}

void inscribed_source_coord(std::size_t box_side, std::size_t square_side, double theta, std::size_t row,
                            std::size_t col, double& src_y, double& src_x) {
    const double cy = (static_cast<double>(box_side) - 1.0) / 2.0;
    const double cx = cy;
    const double v = static_cast<double>(row) - (static_cast<double>(square_side) - 1.0) / 2.0;
    const double u = static_cast<double>(col) - (static_cast<double>(square_side) - 1.0) / 2.0;
    // Content rotated by theta means sampling the source at R(-theta).
    const double ct = std::cos(theta), st = std::sin(theta);
    src_x = cx + ct * u + st * v;
    src_y = cy - st * u + ct * v;
}

namespace {
double bilinear(const ImageBuffer& img, double y, double x, std::size_t c) {
    const double yc = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const double xc = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    const std::size_t y0 = static_cast<std::size_t>(yc);
    const std::size_t x0 = static_cast<std::size_t>(xc);
    const std::size_t y1 = std::min(y0 + 1, img.height - 1);
    const std::size_t x1 = std::min(x0 + 1, img.width - 1);
    const double fy = yc - static_cast<double>(y0);
    const double fx = xc - static_cast<double>(x0);
    const double a = img.at(y0, x0, c) * (1 - fx) + img.at(y0, x1, c) * fx;
    const double b = img.at(y1, x0, c) * (1 - fx) + img.at(y1, x1, c) * fx;
    return a * (1 - fy) + b * fy;
}
}  // namespace

ImageBuffer inscribed_rotate_crop(const ImageBuffer& img, const RegionBox& box, double theta) {
    if (box.top + box.side > img.height || box.left + box.side > img.width)
        throw ContractError("inscribed_rotate_crop: box outside image");
    const std::size_t L = box.side;
    const std::size_t m = static_cast<std::size_t>(std::floor(static_cast<double>(L) / std::sqrt(2.0)));

    // Rotated inscribed square, sampled from the box content.
    ImageBuffer square(m, m, img.channels);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t q = 0; q < m; ++q) {
            double sy, sx;
            inscribed_source_coord(L, m, theta, r, q, sy, sx);
            for (std::size_t c = 0; c < img.channels; ++c)
                square.at(r, q, c) =
                    bilinear(img, static_cast<double>(box.top) + sy, static_cast<double>(box.left) + sx, c);
        }

    // Bilinear resize back to L x L (half-pixel convention).
    ImageBuffer out(L, L, img.channels);
    const double s = static_cast<double>(m) / static_cast<double>(L);
    for (std::size_t r = 0; r < L; ++r)
        for (std::size_t q = 0; q < L; ++q) {
            const double sy = (static_cast<double>(r) + 0.5) * s - 0.5;
            const double sx = (static_cast<double>(q) + 0.5) * s - 0.5;
            for (std::size_t c = 0; c < img.channels; ++c) out.at(r, q, c) = bilinear(square, sy, sx, c);
        }
    return out;
}

namespace {
std::vector<std::size_t> patches_intersecting(const RegionBox& box, std::size_t grid_rows, std::size_t grid_cols,
                                              std::size_t p) {
    std::vector<std::size_t> covered;
    for (std::size_t r = 0; r < grid_rows; ++r)
        for (std::size_t c = 0; c < grid_cols; ++c) {
            const std::size_t py0 = r * p, py1 = py0 + p;
            const std::size_t px0 = c * p, px1 = px0 + p;
            const bool overlap_y = py0 < box.top + box.side && box.top < py1;
            const bool overlap_x = px0 < box.left + box.side && box.left < px1;
            if (overlap_y && overlap_x) covered.push_back(r * grid_cols + c);
        }
    return covered;
}
}  // namespace

AugmentResult apply_rotation_augment(const ImageBuffer& img, Rng& rng, const AresParams& params) {
    const PatchGrid grid = split_patches(img, params.patch_size);
    const auto lbp = lbp_map(img);
    const ScoreMap scores = patch_scores(grid, lbp);
    const std::size_t top = select_top_patch(scores);
    const auto box = adaptive_region_select(scores, top, params.ladder, params.threshold_mult);

    AugmentResult result;
    if (!box) {
        result.image = img;
        result.record.applied = false;
        return result;
    }
    const double theta = rng.uniform(0.0, 6.283185307179586476925286766559);
    ImageBuffer crop = inscribed_rotate_crop(img, *box, theta);

    result.image = img;
    for (std::size_t dy = 0; dy < box->side; ++dy)
        for (std::size_t dx = 0; dx < box->side; ++dx)
            for (std::size_t c = 0; c < img.channels; ++c)
                result.image.at(box->top + dy, box->left + dx, c) = crop.at(dy, dx, c);

    result.record.box = *box;
    result.record.theta = theta;
    result.record.covered_patches = patches_intersecting(*box, grid.rows, grid.cols, params.patch_size);
    result.record.applied = true;
    return result;
}

RegionBox random_crop_baseline(const ImageBuffer& img, std::size_t side, std::size_t patch_size, Rng& rng) {
    if (side > img.height || side > img.width)
        throw ContractError("random_crop_baseline: side " + std::to_string(side) + " exceeds image");
    const std::size_t max_r = (img.height - side) / patch_size;
    const std::size_t max_c = (img.width - side) / patch_size;
    const std::size_t r = static_cast<std::size_t>(rng.below(max_r + 1));
    const std::size_t c = static_cast<std::size_t>(rng.below(max_c + 1));
    return RegionBox{r * patch_size, c * patch_size, side};
}

}  // namespace roma
