#include "roma/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace roma {

std::size_t ProbeDataset::classes() const {
    std::size_t c = 0;
    for (std::size_t l : labels) c = std::max(c, l + 1);
    return c;
}

std::vector<double> extract_features(const RomaModel& model, const ImageBuffer& img) {
    Tensor features = model.encode(split_patches(img, model.config().patch_size).patch_matrix(), RotationRecord{});
    const std::size_t k = features.rows(), d = features.cols();
    std::vector<double> out(d, 0.0);
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t j = 0; j < d; ++j) out[j] += features.at(r, j);
    for (auto& v : out) v /= static_cast<double>(k);
    return out;
}

double linear_probe(const ProbeDataset& train, const ProbeDataset& test, std::size_t epochs, double lr) {
    if (train.size() == 0 || test.size() == 0) throw ContractError("linear_probe: empty split");
    if (train.features.size() != train.labels.size()) throw ContractError("linear_probe: features/labels mismatch");
    const std::size_t d = train.features[0].size();
    const std::size_t classes = std::max(train.classes(), test.classes());
    {
        std::set<std::size_t> seen(train.labels.begin(), train.labels.end());
        if (seen.size() < 2) throw ContractError("linear_probe: training split has a single class");
    }

    // Standardize with train statistics.
    std::vector<double> mean(d, 0.0), stddev(d, 0.0);
    for (const auto& f : train.features)
        for (std::size_t j = 0; j < d; ++j) mean[j] += f[j];
    for (auto& m : mean) m /= static_cast<double>(train.size());
    for (const auto& f : train.features)
        for (std::size_t j = 0; j < d; ++j) stddev[j] += (f[j] - mean[j]) * (f[j] - mean[j]);
    for (auto& s : stddev) s = std::max(std::sqrt(s / static_cast<double>(train.size())), 1e-8);

    auto standardized = [&](const std::vector<double>& f, std::size_t j) { return (f[j] - mean[j]) / stddev[j]; };

    std::vector<double> w(classes * d, 0.0), b(classes, 0.0);
    std::vector<double> logits(classes), probs(classes);
    std::vector<double> gw(classes * d), gb(classes);

    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto& f = train.features[i];
            double mx = -1e300;
            for (std::size_t c = 0; c < classes; ++c) {
                double z = b[c];
                for (std::size_t j = 0; j < d; ++j) z += w[c * d + j] * standardized(f, j);
                logits[c] = z;
                mx = std::max(mx, z);
            }
            double sum = 0.0;
            for (std::size_t c = 0; c < classes; ++c) {
                probs[c] = std::exp(logits[c] - mx);
                sum += probs[c];
            }
            for (std::size_t c = 0; c < classes; ++c) {
                probs[c] /= sum;
                const double delta = probs[c] - (c == train.labels[i] ? 1.0 : 0.0);
                gb[c] += delta * inv_n;
                for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += delta * standardized(f, j) * inv_n;
            }
        }
        for (std::size_t c = 0; c < classes; ++c) {
            b[c] -= lr * gb[c];
            for (std::size_t j = 0; j < d; ++j) w[c * d + j] -= lr * gw[c * d + j];
        }
    }

    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& f = test.features[i];
        std::size_t best = 0;
        double best_z = -1e300;
        for (std::size_t c = 0; c < classes; ++c) {
            double z = b[c];
            for (std::size_t j = 0; j < d; ++j) z += w[c * d + j] * standardized(f, j);
            if (z > best_z) {
                best_z = z;
                best = c;
            }
        }
        if (best == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

double capture_rate(const RegionSelector& selector, const std::vector<CaptureSample>& dataset, Rng& rng,
                    double coverage_threshold) {
    if (dataset.empty()) throw ContractError("capture_rate: empty dataset");
    std::size_t captured = 0;
    for (const auto& sample : dataset) {
        const auto box = selector(sample.image, rng);
        if (!box) continue;
        std::size_t total = 0, inside = 0;
        const std::size_t w = sample.image.width;
        for (std::size_t y = 0; y < sample.image.height; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                if (!sample.mask[y * w + x]) continue;
                ++total;
                if (y >= box->top && y < box->top + box->side && x >= box->left && x < box->left + box->side) ++inside;
            }
        if (total == 0) throw ContractError("capture_rate: sample with empty mask");
        if (static_cast<double>(inside) >= coverage_threshold * static_cast<double>(total)) ++captured;
    }
    return static_cast<double>(captured) / static_cast<double>(dataset.size());
}

RegionSelector make_ares_selector(const AresParams& params) {
    return [params](const ImageBuffer& img, Rng&) -> std::optional<RegionBox> {
        const PatchGrid grid = split_patches(img, params.patch_size);
        const ScoreMap scores = patch_scores(grid, lbp_map(img));
        return adaptive_region_select(scores, select_top_patch(scores), params.ladder, params.threshold_mult);
    };
}

RegionSelector make_random_crop_selector(std::size_t side, std::size_t patch_size) {
    return [side, patch_size](const ImageBuffer& img, Rng& rng) -> std::optional<RegionBox> {
        return random_crop_baseline(img, side, patch_size, rng);
    };
}

CausalityReport causality_audit(const RomaModel& model, const ImageBuffer& img, std::size_t trials, Rng& rng,
                                bool causal_mask) {
    const ModelConfig& cfg = model.config();
    ForwardOptions opts;
    opts.causal_mask = causal_mask;
    const ModelOutputs base = model.forward_image(img, RotationRecord{}, opts);

    CausalityReport report;
    report.trials = trials;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t j = static_cast<std::size_t>(rng.below(cfg.tokens()));
        ImageBuffer noisy = img;
        const std::size_t p = cfg.patch_size;
        const std::size_t y0 = (j / cfg.grid_side()) * p, x0 = (j % cfg.grid_side()) * p;
        for (std::size_t dy = 0; dy < p; ++dy)
            for (std::size_t dx = 0; dx < p; ++dx)
                for (std::size_t c = 0; c < 3; ++c) noisy.at(y0 + dy, x0 + dx, c) = rng.uniform();
        const ModelOutputs out = model.forward_image(noisy, RotationRecord{}, opts);

        bool violated = false;
        // Token prediction row r attends features 0..r; rows r < j must not move.
        for (std::size_t r = 0; r < j && r + 1 < cfg.tokens(); ++r)
            for (std::size_t c = 0; c < cfg.token_dim(); ++c) {
                const double diff = std::fabs(out.token_preds.at(r, c) - base.token_preds.at(r, c));
                if (diff > 0.0) {
                    violated = true;
                    report.max_violation = std::max(report.max_violation, diff);
                }
            }
        // Cluster prediction m is conditioned on context block m; protected
        // when every context token index precedes j.
        for (std::size_t m = 0; m + 1 < cfg.clusters(); ++m) {
            const auto idx = cluster_token_indices(cfg, m);
            std::size_t mx = 0;
            for (std::size_t t : idx) mx = std::max(mx, t);
            if (mx >= j) continue;
            for (std::size_t c = 0; c < cfg.cluster_dim(); ++c) {
                const double diff = std::fabs(out.cluster_preds.at(m, c) - base.cluster_preds.at(m, c));
                if (diff > 0.0) {
                    violated = true;
                    report.max_violation = std::max(report.max_violation, diff);
                }
            }
        }
        if (violated) ++report.violations;
    }
    return report;
}

}  // namespace roma
