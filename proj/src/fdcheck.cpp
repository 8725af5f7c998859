#include "roma/fdcheck.hpp"

#include <cmath>
#include <unordered_set>

namespace roma {

std::vector<std::size_t> fd_probe_indices(const std::string& name, std::size_t numel, const FdOptions& opts) {
    std::vector<std::size_t> idx;
    if (numel <= opts.subsample_threshold || opts.subsample_count >= numel) {
        idx.resize(numel);
        for (std::size_t i = 0; i < numel; ++i) idx[i] = i;
        return idx;
    }
    std::uint64_t h = 1469598103934665603ull;
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    Rng rng(Rng::mix(opts.seed, h));
    std::unordered_set<std::size_t> seen;
    idx.reserve(opts.subsample_count);
    while (idx.size() < opts.subsample_count) {
        const std::size_t i = rng.below(numel);
        if (seen.insert(i).second) idx.push_back(i);
    }
    return idx;
}

double fd_relative_error(double analytic, double numeric, double denom_floor) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), denom_floor});
    return std::fabs(analytic - numeric) / denom;
}

FdReport finite_difference_check(ParamRegistry& params, const std::function<Tensor()>& loss_fn,
                                 const FdOptions& opts) {
    // Analytic pass.
    params.zero_grads();
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        if (!std::isfinite(loss.item())) throw NumericError("finite_difference_check: non-finite loss");
        tape.backward(loss);
    }
    if (!opts.tamper_param.empty()) {
        Tensor& t = params.get(opts.tamper_param);
        double* g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) g[i] *= opts.tamper_factor;
    }

    FdReport report;
    double rel_sum = 0.0;
    for (auto& [name, tensor] : params) {
        FdParamStat stat;
        stat.name = name;
        const auto indices = fd_probe_indices(name, tensor.numel(), opts);
        double* p = tensor.data();
        const double* g = tensor.grad();
        double param_rel_sum = 0.0;
        for (std::size_t i : indices) {
            const double saved = p[i];
            p[i] = saved + opts.h;
            const double fp = loss_fn().item();
            p[i] = saved - opts.h;
            const double fm = loss_fn().item();
            p[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("finite_difference_check: non-finite probe at " + name);
            const double numeric = (fp - fm) / (2.0 * opts.h);
            const double rel = fd_relative_error(g[i], numeric, opts.denom_floor);
            param_rel_sum += rel;
            if (rel > stat.max_rel) stat.max_rel = rel;
        }
        stat.checked = indices.size();
        stat.mean_rel = stat.checked ? param_rel_sum / static_cast<double>(stat.checked) : 0.0;
        rel_sum += param_rel_sum;
        report.total_checked += stat.checked;
        if (stat.max_rel > report.max_rel) {
            report.max_rel = stat.max_rel;
            report.worst_param = name;
        }
        report.per_param.push_back(std::move(stat));
    }
    report.mean_rel = report.total_checked ? rel_sum / static_cast<double>(report.total_checked) : 0.0;
    return report;
}

}  // namespace roma
