#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "roma/image.hpp"
#include "roma/rng.hpp"
#include "roma/tensor.hpp"

namespace roma {

// Non-overlapping p x p patch decomposition in row-major patch order.
struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_size = 0;
    ImageBuffer image;

    std::size_t count() const { return rows * cols; }
    std::size_t patch_row(std::size_t k) const { return k / cols; }
    std::size_t patch_col(std::size_t k) const { return k % cols; }

    // Flattened pixels of patch k: row-major within the patch, channels
    // interleaved; length p*p*C.
    std::vector<double> patch_pixels(std::size_t k) const;
    // All patches stacked as an [N x p*p*C] tensor (token order).
    Tensor patch_matrix() const;
};

PatchGrid split_patches(const ImageBuffer& img, std::size_t patch_size);

// Per-pixel 8-bit codes on the channel-mean grayscale. Bit i is set when
// neighbor i is strictly brighter than the center; neighbors are ordered
// clockwise from the top-left, borders replicate.
std::vector<std::uint8_t> lbp_map(const ImageBuffer& img);

struct ScoreMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_size = 0;
    std::vector<double> scores;  // per patch, row-major
    double image_mean = 0.0;
};

// Patch score = Shannon entropy (base 2) of the 256-bin code histogram.
ScoreMap patch_scores(const PatchGrid& grid, const std::vector<std::uint8_t>& lbp);

// Argmax with smallest-index tie-break.
std::size_t select_top_patch(const ScoreMap& scores);

struct RegionBox {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t side = 0;
};

// Best patch-aligned side x side box containing the top patch; box value is
// the mean score of contained patches, ties resolved top-left-most.
RegionBox best_candidate_box(const ScoreMap& scores, std::size_t top_patch, std::size_t side);

// Walks the shrinking side ladder; accepts the first box whose mean score
// strictly exceeds threshold_mult * image mean. nullopt when every rung fails.
std::optional<RegionBox> adaptive_region_select(const ScoreMap& scores, std::size_t top_patch,
                                                const std::vector<std::size_t>& ladder, double threshold_mult = 1.0);

// Inverse-mapped source coordinate (relative to the box origin) for output
// pixel (row, col) of the inscribed square of side m inside an L x L box
// rotated by theta. Shared between the crop and its geometry tests.
void inscribed_source_coord(std::size_t box_side, std::size_t square_side, double theta, std::size_t row,
                            std::size_t col, double& src_y, double& src_x);

// Rotates box content by theta, keeps the centered square of side
// floor(L/sqrt(2)) (inside the inscribed circle), and rescales it to L x L.
// Bilinear sampling throughout.
ImageBuffer inscribed_rotate_crop(const ImageBuffer& img, const RegionBox& box, double theta);

struct RotationRecord {
    RegionBox box;
    double theta = 0.0;
    std::vector<std::size_t> covered_patches;
    bool applied = false;
};

struct AresParams {
    std::size_t patch_size = 8;
    std::vector<std::size_t> ladder = {48, 32, 16};
    double threshold_mult = 1.0;
};

struct AugmentResult {
    ImageBuffer image;
    RotationRecord record;
};

// Full pipeline: score, select, rotate-crop, paste. Pixels outside the
// accepted box are bit-identical to the input; with no accepted region the
// input is returned unchanged and record.applied is false.
AugmentResult apply_rotation_augment(const ImageBuffer& img, Rng& rng, const AresParams& params);

// Uniformly sampled patch-aligned in-bounds box of the given side.
RegionBox random_crop_baseline(const ImageBuffer& img, std::size_t side, std::size_t patch_size, Rng& rng);

}  // namespace roma
