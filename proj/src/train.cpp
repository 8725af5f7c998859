#include "roma/train.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

namespace roma {

namespace {

struct SampleResult {
    std::map<std::string, std::vector<double>> grads;
    double token = 0.0;
    double cluster = 0.0;
};

SampleResult process_sample(const ImageBuffer& img, ParamRegistry& params, const ModelConfig& cfg,
                            const TrainOptions& opts, std::uint64_t sample_index, double inv_batch) {
    Rng rng(opts.seed ^ sample_index);
    AugmentResult aug;
    if (opts.ares_enabled) {
        AresParams ap = opts.ares;
        ap.patch_size = cfg.patch_size;
        aug = apply_rotation_augment(img, rng, ap);
    } else {
        aug.image = img;
        aug.record.applied = false;
    }

    const Tensor patches = split_patches(aug.image, cfg.patch_size).patch_matrix();
    const Tensor tok_t = extract_token_targets(aug.image, cfg.patch_size);
    const Tensor clu_t = extract_cluster_targets(aug.image, cfg.cluster_side_px());

    params.zero_grads();
    SampleResult result;
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor tokens = angle_embedding(patch_embed(patches, params, cfg), aug.record, params);
        Tensor features = encoder_forward(tokens, params, cfg);
        DecoderOut dec = decoder_forward(features, params, cfg);
        Tensor cluster_preds = cluster_head(cluster_aggregate(dec.layer_feats, cfg), params, cfg);
        Tensor tok_l = token_loss(dec.token_preds, tok_t);
        Tensor clu_l = cluster_loss(cluster_preds, clu_t);
        result.token = tok_l.item();
        result.cluster = clu_l.item();
        Tensor total = combine_loss(tok_l, clu_l, opts.lambda);
        tape.backward(scale(total, inv_batch));
    }
    for (auto& [name, t] : params) {
        const double* g = t.grad();
        result.grads.emplace(name, std::vector<double>(g, g + t.numel()));
    }
    params.zero_grads();
    return result;
}

}  // namespace

LossBreakdown train_step(const std::vector<ImageBuffer>& batch, RomaModel& model, AdamW& optim, double lr,
                         std::size_t step_index, const TrainOptions& opts) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const std::size_t n = batch.size();
    const double inv_batch = 1.0 / static_cast<double>(n);
    const ModelConfig& cfg = model.config();

    std::vector<SampleResult> results(n);
    const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i)
            results[i] = process_sample(batch[i], model.params(), cfg, opts,
                                        static_cast<std::uint64_t>(step_index) * n + i, inv_batch);
    } else {
        // Each worker owns a value-identical parameter replica; per-sample
        // results are byte-equal to the sequential path, so the later
        // in-order reduction is worker-count independent.
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr first_error = nullptr;
        std::mutex error_mu;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w]() {
                try {
                    ParamRegistry replica = w == 0 ? ParamRegistry() : model.params().clone();
                    ParamRegistry& local = w == 0 ? model.params() : replica;
                    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                        results[i] = process_sample(batch[i], local, cfg, opts,
                                                    static_cast<std::uint64_t>(step_index) * n + i, inv_batch);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    LossBreakdown mean;
    mean.lambda = opts.lambda;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(results[i].token) || !std::isfinite(results[i].cluster))
            throw NumericError("train_step: non-finite loss at step " + std::to_string(step_index));
        mean.token_mse += results[i].token * inv_batch;
        mean.cluster_mse += results[i].cluster * inv_batch;
    }
    mean.total = mean.token_mse + opts.lambda * mean.cluster_mse;

    // Reduce per-sample gradients in sample-index order.
    model.params().zero_grads();
    for (std::size_t i = 0; i < n; ++i)
        for (auto& [name, g] : results[i].grads) {
            double* acc = model.params().get(name).grad();
            for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
        }
    optim.step(lr);
    model.params().zero_grads();
    return mean;
}

PretrainResult run_pretraining(RomaModel& model, const std::vector<ImageBuffer>& dataset, const TrainConfig& cfg,
                               const std::string& run_dir) {
    if (dataset.empty()) throw ContractError("run_pretraining: empty dataset");
    std::filesystem::create_directories(run_dir);
    PretrainResult out;
    out.metrics_path = run_dir + "/metrics.csv";
    out.checkpoint_path = run_dir + "/checkpoint.roma";

    std::ofstream csv(out.metrics_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + out.metrics_path);
    csv << "step,lr,token_mse,cluster_mse,total,wall_ms\n";
    csv.precision(17);

    AdamW optim(model.params(), cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps);
    const std::size_t warmup = static_cast<std::size_t>(std::llround(cfg.warmup_frac * static_cast<double>(cfg.steps)));
    const double min_lr = cfg.base_lr * cfg.min_lr_frac;
    Rng loop_rng(cfg.step.seed);

    std::vector<ImageBuffer> batch(cfg.batch_size);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (std::size_t j = 0; j < cfg.batch_size; ++j)
            batch[j] = dataset[(step * cfg.batch_size + j) % dataset.size()];
        const double lr = cosine_lr(step, warmup, cfg.steps, cfg.base_lr, min_lr);
        const auto t0 = std::chrono::steady_clock::now();
        LossBreakdown lb = train_step(batch, model, optim, lr, step, cfg.step);
        const double wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        out.curve.push_back(lb);
        csv << step << "," << lr << "," << lb.token_mse << "," << lb.cluster_mse << "," << lb.total << ","
            << wall_ms << "\n";
    }
    csv.flush();
    checkpoint_save(make_checkpoint(model, optim, loop_rng, cfg.steps), out.checkpoint_path);
    return out;
}

namespace {

// The Eq-total pipeline cut into stages so a probe of one block's parameter
// re-runs only that block and everything after it. Stage s output depends
// only on stages < s and their parameters, so cached prefixes are bitwise
// equal to a full re-evaluation.
class FdPipeline {
  public:
    FdPipeline(const ModelConfig& cfg, const ImageBuffer& img, const RotationRecord& rec, double lambda)
        : cfg_(cfg), rec_(rec), lambda_(lambda) {
        patches_ = split_patches(img, cfg.patch_size).patch_matrix();
        tok_t_ = extract_token_targets(img, cfg.patch_size);
        clu_t_ = extract_cluster_targets(img, cfg.cluster_side_px());
    }

    struct State {
        Tensor x;
        Tensor features;
        Tensor stream;
        std::vector<Tensor> layer_feats;
    };

    std::size_t final_stage() const { return 2 + cfg_.depth + cfg_.decoder_depth; }

    std::size_t stage_of(const std::string& name) const {
        auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
        if (starts("embed.")) return 0;
        if (starts("enc_norm.")) return 1 + cfg_.depth;
        if (starts("enc")) return 1 + std::stoul(name.substr(3));
        if (name == "queries") return 2 + cfg_.depth;
        if (starts("dec_norm.") || starts("head.")) return final_stage();
        if (starts("dec")) return 2 + cfg_.depth + std::stoul(name.substr(3));
        throw ContractError("model_fd_check: unmapped parameter " + name);
    }

    State advance(const ParamRegistry& params, const State& in, std::size_t stage) const {
        State out = in;
        if (stage == 0) {
            out.x = angle_embedding(patch_embed(patches_, params, cfg_), rec_, params);
        } else if (stage <= cfg_.depth) {
            out.x = mamba_block(in.x, params, "enc" + std::to_string(stage - 1) + ".", cfg_);
        } else if (stage == 1 + cfg_.depth) {
            out.features = layer_norm(in.x, params.get("enc_norm.g"), params.get("enc_norm.b"));
        } else {
            const std::size_t i = stage - (2 + cfg_.depth);
            Tensor stream = i == 0 ? params.get("queries") : in.stream;
            out.stream = decoder_block(stream, in.features, params, "dec" + std::to_string(i) + ".", cfg_);
            out.layer_feats.push_back(out.stream);
        }
        return out;
    }

    double finish(const ParamRegistry& params, const State& in) const {
        Tensor preds = token_head(in.stream, params, cfg_);
        Tensor cluster_preds = cluster_head(cluster_aggregate(in.layer_feats, cfg_), params, cfg_);
        const double tok = token_loss(preds, tok_t_).item();
        const double clu = cluster_loss(cluster_preds, clu_t_).item();
        return tok + lambda_ * clu;
    }

    double loss_from(const ParamRegistry& params, State st, std::size_t from) const {
        for (std::size_t s = from; s < final_stage(); ++s) st = advance(params, st, s);
        return finish(params, st);
    }

    Tensor taped_loss(const ParamRegistry& params) const {
        Tensor tokens = angle_embedding(patch_embed(patches_, params, cfg_), rec_, params);
        Tensor features = encoder_forward(tokens, params, cfg_);
        DecoderOut dec = decoder_forward(features, params, cfg_);
        Tensor cluster_preds = cluster_head(cluster_aggregate(dec.layer_feats, cfg_), params, cfg_);
        return combine_loss(token_loss(dec.token_preds, tok_t_), cluster_loss(cluster_preds, clu_t_), lambda_);
    }

  private:
    ModelConfig cfg_;
    Tensor patches_, tok_t_, clu_t_;
    RotationRecord rec_;
    double lambda_;
};

}  // namespace

FdReport model_fd_check(const ModelConfig& cfg, const ParamRegistry& master, const ImageBuffer& img,
                        const RotationRecord& rec, const ModelFdOptions& opts) {
    FdPipeline pipe(cfg, img, rec, opts.lambda);

    // Analytic gradients from one taped evaluation.
    ParamRegistry analytic = master.clone();
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = pipe.taped_loss(analytic);
        if (!std::isfinite(loss.item())) throw NumericError("model_fd_check: non-finite loss");
        tape.backward(loss);
    }
    if (!opts.fd.tamper_param.empty()) {
        Tensor& t = analytic.get(opts.fd.tamper_param);
        double* g = t.grad();
        for (std::size_t i = 0; i < t.numel(); ++i) g[i] *= opts.fd.tamper_factor;
    }

    std::vector<std::string> names;
    for (const auto& [name, t] : analytic) names.push_back(name);
    std::vector<FdParamStat> stats(names.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error = nullptr;
    std::mutex error_mu;
    auto worker_fn = [&]() {
        try {
            ParamRegistry local = master.clone();
            for (std::size_t ti = next.fetch_add(1); ti < names.size(); ti = next.fetch_add(1)) {
                const std::string& name = names[ti];
                Tensor& tensor = local.get(name);
                const Tensor& ref = analytic.get(name);
                const std::size_t stage = pipe.stage_of(name);

                FdPipeline::State prefix;
                for (std::size_t s = 0; s < stage; ++s) prefix = pipe.advance(local, prefix, s);

                FdParamStat stat;
                stat.name = name;
                const auto indices = fd_probe_indices(name, tensor.numel(), opts.fd);
                double* p = tensor.data();
                const double* g = ref.grad();
                double rel_sum = 0.0;
                for (std::size_t idx : indices) {
                    const double saved = p[idx];
                    p[idx] = saved + opts.fd.h;
                    const double fp = pipe.loss_from(local, prefix, stage);
                    p[idx] = saved - opts.fd.h;
                    const double fm = pipe.loss_from(local, prefix, stage);
                    p[idx] = saved;
                    if (!std::isfinite(fp) || !std::isfinite(fm))
                        throw NumericError("model_fd_check: non-finite probe at " + name);
                    const double numeric = (fp - fm) / (2.0 * opts.fd.h);
                    const double rel = fd_relative_error(g[idx], numeric, opts.fd.denom_floor);
                    rel_sum += rel;
                    if (rel > stat.max_rel) stat.max_rel = rel;
                }
                stat.checked = indices.size();
                stat.mean_rel = stat.checked ? rel_sum / static_cast<double>(stat.checked) : 0.0;
                stats[ti] = std::move(stat);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mu);
            if (!first_error) first_error = std::current_exception();
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, opts.workers);
    if (workers == 1) {
        worker_fn();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker_fn);
        for (auto& t : pool) t.join();
    }
    if (first_error) std::rethrow_exception(first_error);

    FdReport report;
    double rel_sum = 0.0;
    for (auto& stat : stats) {
        rel_sum += stat.mean_rel * static_cast<double>(stat.checked);
        report.total_checked += stat.checked;
        if (stat.max_rel > report.max_rel) {
            report.max_rel = stat.max_rel;
            report.worst_param = stat.name;
        }
        report.per_param.push_back(stat);
    }
    report.mean_rel = report.total_checked ? rel_sum / static_cast<double>(report.total_checked) : 0.0;
    return report;
}

}  // namespace roma
