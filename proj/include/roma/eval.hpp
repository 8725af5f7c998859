#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "roma/model.hpp"

namespace roma {

// Frozen-feature vectors with integer labels for one split.
struct ProbeDataset {
    std::vector<std::vector<double>> features;
    std::vector<std::size_t> labels;

    std::size_t size() const { return features.size(); }
    std::size_t classes() const;
};

// Mean over tokens of the encoder features; deterministic, no parameter
// mutation, no augmentation.
std::vector<double> extract_features(const RomaModel& model, const ImageBuffer& img);

// Multinomial logistic regression on standardized frozen features,
// full-batch gradient descent from zero weights. Returns test overall
// accuracy.
double linear_probe(const ProbeDataset& train, const ProbeDataset& test, std::size_t epochs = 500, double lr = 0.1);

struct CaptureSample {
    ImageBuffer image;
    std::vector<std::uint8_t> mask;  // H*W, nonzero = foreground
    std::size_t label = 0;
};

// Region strategy under test: returns the selected box, or nothing.
using RegionSelector = std::function<std::optional<RegionBox>(const ImageBuffer&, Rng&)>;

// Fraction of samples whose selected box contains at least
// `coverage_threshold` of the foreground mask pixels. A sample with no
// selected box counts as not captured.
double capture_rate(const RegionSelector& selector, const std::vector<CaptureSample>& dataset, Rng& rng,
                    double coverage_threshold = 0.5);

// ARES and random-crop strategies packaged for capture-rate comparisons.
RegionSelector make_ares_selector(const AresParams& params);
RegionSelector make_random_crop_selector(std::size_t side, std::size_t patch_size);

struct CausalityReport {
    std::size_t trials = 0;
    std::size_t violations = 0;
    double max_violation = 0.0;  // max abs change inside a protected region
};

// Re-runs the forward pass with random patches replaced by noise and checks
// that predictions which cannot see the perturbed token are bit-identical:
// token prediction rows r < j, and cluster predictions whose context block
// lies entirely before token j. causal_mask=false is the fault-injection
// fixture and should report violations.
CausalityReport causality_audit(const RomaModel& model, const ImageBuffer& img, std::size_t trials, Rng& rng,
                                bool causal_mask = true);

}  // namespace roma
