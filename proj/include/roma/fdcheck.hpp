#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "roma/tensor.hpp"

namespace roma {

struct FdOptions {
    double h = 1e-5;
    // Tensors with more elements than this are probed at subsample_count
    // fixed-seed indices instead of exhaustively.
    std::size_t subsample_threshold = 4096;
    std::size_t subsample_count = 256;
    std::uint64_t seed = 0x5eed;
    // Relative error denominator floor. Central differences on an O(0.1)
    // loss resolve gradients down to roughly 1e-9 absolute; grads below this
    // floor are compared against that noise, not against zero.
    double denom_floor = 1e-5;
    // Test-only fault injection: scale the analytic grad of one parameter.
    std::string tamper_param;
    double tamper_factor = 1.0;
};

struct FdParamStat {
    std::string name;
    std::size_t checked = 0;
    double max_rel = 0.0;
    double mean_rel = 0.0;
};

struct FdReport {
    double max_rel = 0.0;
    double mean_rel = 0.0;
    std::size_t total_checked = 0;
    std::string worst_param;
    std::vector<FdParamStat> per_param;
};

// Which data indices of a tensor the checker probes. Exposed so that staged
// drivers sample identically to the generic path.
std::vector<std::size_t> fd_probe_indices(const std::string& name, std::size_t numel, const FdOptions& opts);

double fd_relative_error(double analytic, double numeric, double denom_floor);

// Compares analytic gradients (reverse-mode over one taped evaluation of
// loss_fn) against central finite differences computed from tape-less
// evaluations. loss_fn must be deterministic given the registry values.
FdReport finite_difference_check(ParamRegistry& params, const std::function<Tensor()>& loss_fn,
                                 const FdOptions& opts = {});

}  // namespace roma
