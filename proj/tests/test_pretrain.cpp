#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "roma/train.hpp"

using namespace roma;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.width = 8;
    cfg.depth = 1;
    cfg.decoder_depth = 2;
    cfg.heads = 2;
    cfg.patch_size = 8;
    cfg.image_side = 32;
    cfg.state_dim = 4;
    cfg.expansion = 2;
    cfg.s_mult = 2;
    cfg.mlp_ratio = 2;
    cfg.validate();
    return cfg;
}

ImageBuffer random_image(std::size_t side, Rng& rng) {
    ImageBuffer img(side, side, 3);
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

// Independent Eq-total reference: explicit double loops over predictions
// and elements, per-element mean inside the norm, 1/(K-1) and 1/(N-1)
// outside, lambda on the cluster term.
double eq6_reference(const Tensor& tok_preds, const Tensor& tok_targets, const Tensor& clu_preds,
                     const Tensor& clu_targets, double lambda) {
    double tok = 0.0;
    for (std::size_t k = 0; k < tok_preds.rows(); ++k) {
        double row = 0.0;
        for (std::size_t j = 0; j < tok_preds.cols(); ++j) {
            const double d = tok_preds.at(k, j) - tok_targets.at(k, j);
            row += d * d;
        }
        tok += row / static_cast<double>(tok_preds.cols());
    }
    tok /= static_cast<double>(tok_preds.rows());
    double clu = 0.0;
    for (std::size_t n = 0; n < clu_preds.rows(); ++n) {
        double row = 0.0;
        for (std::size_t j = 0; j < clu_preds.cols(); ++j) {
            const double d = clu_preds.at(n, j) - clu_targets.at(n, j);
            row += d * d;
        }
        clu += row / static_cast<double>(clu_preds.cols());
    }
    clu /= static_cast<double>(clu_preds.rows());
    return tok + lambda * clu;
}

}  // namespace

TEST_CASE("adamw decoupled decay with zero gradients") {
    ParamRegistry params;
    Tensor& p = params.add("p", Tensor::from_data({3}, {1.0, -2.0, 0.5}));
    AdamW opt(params, 0.01);
    p.grad();  // allocate zero grads
    opt.step(0.1);
    CHECK(p.data()[0] == doctest::Approx(1.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
    CHECK(p.data()[1] == doctest::Approx(-2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
    CHECK(p.data()[2] == doctest::Approx(0.5 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
}

TEST_CASE("adamw first step closed form") {
    ParamRegistry params;
    Tensor& p = params.add("p", Tensor::from_data({1}, {0.0}));
    AdamW opt(params, 0.0, 0.9, 0.999, 1e-8);
    p.grad()[0] = 1.0;
    opt.step(0.05);
    // Bias correction is exact at t=1: update = -lr * 1/(1 + eps).
    CHECK(p.data()[0] == doctest::Approx(-0.05 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adamw converges on a quadratic") {
    ParamRegistry params;
    Tensor& p = params.add("p", Tensor::from_data({1}, {0.0}));
    AdamW opt(params, 0.0);
    for (int i = 0; i < 200; ++i) {
        params.zero_grads();
        p.grad()[0] = 2.0 * (p.data()[0] - 3.0);
        opt.step(0.05);
    }
    CHECK(std::fabs(p.data()[0] - 3.0) < 0.1);
}

TEST_CASE("adamw rejects NaN gradients naming the parameter") {
    ParamRegistry params;
    Tensor& p = params.add("weights", Tensor::from_data({1}, {0.0}));
    AdamW opt(params, 0.0);
    p.grad()[0] = std::nan("");
    CHECK_THROWS_WITH_AS(opt.step(0.1), doctest::Contains("weights"), NumericError);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    const double base = 1.5e-4, min_lr = 1.5e-6;
    CHECK(cosine_lr(100, 100, 2000, base, min_lr) == doctest::Approx(base));
    CHECK(cosine_lr(2000, 100, 2000, base, min_lr) == doctest::Approx(min_lr));
    CHECK(cosine_lr(1050, 100, 2000, base, min_lr) == doctest::Approx((base + min_lr) / 2.0).epsilon(1e-12));
    CHECK(cosine_lr(0, 100, 2000, base, min_lr) == 0.0);
    CHECK_THROWS_AS(cosine_lr(0, 300, 200, base, min_lr), ConfigError);
}

TEST_CASE("token and cluster loss basics") {
    Rng rng(3);
    Tensor a = Tensor::randn({5, 12}, rng, 1.0);
    CHECK(token_loss(a, a).item() == 0.0);

    Tensor b = Tensor::zeros({5, 12});
    Tensor ones = Tensor::full({5, 12}, 1.0);
    CHECK(token_loss(ones, b).item() == doctest::Approx(1.0));

    Tensor c1 = Tensor::randn({1, 7}, rng, 1.0);
    Tensor c2 = Tensor::randn({1, 7}, rng, 1.0);
    double manual = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
        const double d = c1.at(0, j) - c2.at(0, j);
        manual += d * d;
    }
    CHECK(cluster_loss(c1, c2).item() == doctest::Approx(manual / 7.0).epsilon(1e-14));

    Tensor bad = Tensor::zeros({4, 12});
    CHECK_THROWS_AS(token_loss(a, bad), ShapeError);
}

TEST_CASE("total_loss arithmetic and lambda handling") {
    LossBreakdown lb = total_loss(0.5, 0.3, 0.1);
    CHECK(lb.total == doctest::Approx(0.53).epsilon(1e-15));
    CHECK(lb.total == lb.token_mse + lb.lambda * lb.cluster_mse);

    CHECK(total_loss(0.5, 0.3, 0.0).total == 0.5);
    CHECK(total_loss(0.5, 0.3, 1.0).total == doctest::Approx(0.8));
    CHECK_THROWS_AS(total_loss(0.5, 0.3, -1.0), ContractError);

    // Doubling lambda adds exactly lambda * cluster_mse on a fixed forward.
    const double lam = 0.1;
    LossBreakdown l2 = total_loss(0.5, 0.3, 2.0 * lam);
    CHECK(l2.total == 0.5 + 2.0 * lam * 0.3);
}

TEST_CASE("module losses match the brute-force double-loop reference") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t K = 2 + rng.below(15);  // K tokens -> K-1 predictions
        const std::size_t N = 2 + rng.below(3);
        const std::size_t td = 1 + rng.below(24);
        const std::size_t cd = 1 + rng.below(48);
        Tensor tp = Tensor::randn({K - 1, td}, rng, 1.0);
        Tensor tt = Tensor::randn({K - 1, td}, rng, 1.0);
        Tensor cp = Tensor::randn({N - 1, cd}, rng, 1.0);
        Tensor ct = Tensor::randn({N - 1, cd}, rng, 1.0);
        for (double lambda : {0.0, 0.1, 1.0}) {
            const double module_val =
                combine_loss(token_loss(tp, tt), cluster_loss(cp, ct), lambda).item();
            const double ref = eq6_reference(tp, tt, cp, ct, lambda);
            CHECK(module_val == doctest::Approx(ref).epsilon(1e-12));
        }
    }
}

TEST_CASE("train_step clears gradients and reproduces bitwise") {
    ModelConfig cfg = tiny_config();
    Rng data_rng(11);
    std::vector<ImageBuffer> batch;
    for (int i = 0; i < 3; ++i) batch.push_back(random_image(cfg.image_side, data_rng));

    auto run = [&](std::size_t workers, std::vector<double>& params_out) {
        Rng rng(123);
        RomaModel model(cfg, rng, InitMode::kTrain);
        AdamW opt(model.params(), 0.05);
        TrainOptions opts;
        opts.seed = 9;
        opts.workers = workers;
        LossBreakdown lb{};
        for (std::size_t s = 0; s < 3; ++s) lb = train_step(batch, model, opt, 1e-3, s, opts);
        CHECK(lb.total == lb.token_mse + opts.lambda * lb.cluster_mse);
        for (auto& [name, t] : model.params()) {
            if (t.has_grad())
                for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t.grad()[i] == 0.0);
            params_out.insert(params_out.end(), t.data(), t.data() + t.numel());
        }
    };
    std::vector<double> a, b, c;
    run(1, a);
    run(1, b);
    run(2, c);
    CHECK(a == b);  // deterministic repeat
    CHECK(a == c);  // worker-count independent
}

TEST_CASE("overfitting a fixed small batch reduces the loss") {
    ModelConfig cfg = tiny_config();
    Rng rng(13);
    RomaModel model(cfg, rng, InitMode::kTrain);
    AdamW opt(model.params(), 0.0);
    Rng data_rng(17);
    std::vector<ImageBuffer> batch;
    for (int i = 0; i < 4; ++i) batch.push_back(random_image(cfg.image_side, data_rng));
    TrainOptions opts;
    opts.ares_enabled = false;
    double first = 0.0, last = 0.0;
    for (std::size_t s = 0; s < 200; ++s) {
        LossBreakdown lb = train_step(batch, model, opt, 2e-3, s, opts);
        if (s == 0) first = lb.total;
        last = lb.total;
    }
    CHECK(last < 0.5 * first);
}

TEST_CASE("checkpoint round trip is bitwise and training continues identically") {
    ModelConfig cfg = tiny_config();
    Rng rng(19);
    RomaModel model(cfg, rng, InitMode::kTrain);
    AdamW opt(model.params(), 0.05);
    Rng data_rng(23);
    std::vector<ImageBuffer> batch;
    for (int i = 0; i < 2; ++i) batch.push_back(random_image(cfg.image_side, data_rng));
    TrainOptions opts;
    opts.seed = 5;
    for (std::size_t s = 0; s < 2; ++s) train_step(batch, model, opt, 1e-3, s, opts);

    const auto dir = fs::temp_directory_path() / "roma_ckpt_test";
    fs::create_directories(dir);
    const std::string path = (dir / "ck.roma").string();
    Rng loop_rng(77);
    checkpoint_save(make_checkpoint(model, opt, loop_rng, 2), path);

    // Continue original.
    LossBreakdown next_a = train_step(batch, model, opt, 1e-3, 2, opts);

    // Restore into a fresh model and continue.
    Rng rng2(999);
    RomaModel model2(cfg, rng2, InitMode::kTrain);
    AdamW opt2(model2.params(), 0.05);
    Checkpoint ck = checkpoint_load(path);
    Rng restored_rng(0);
    std::uint64_t step = 0;
    checkpoint_restore(ck, model2, opt2, restored_rng, step);
    CHECK(step == 2);
    CHECK(restored_rng.serialize() == loop_rng.serialize());

    // Bitwise parameter equality after restore.
    for (auto& [name, t] : model2.params()) {
        const Tensor& src = ck.params.get(name);
        for (std::size_t i = 0; i < t.numel(); ++i) CHECK(t.data()[i] == src.data()[i]);
    }
    LossBreakdown next_b = train_step(batch, model2, opt2, 1e-3, 2, opts);
    CHECK(next_a.token_mse == next_b.token_mse);
    CHECK(next_a.cluster_mse == next_b.cluster_mse);
    CHECK(next_a.total == next_b.total);
    fs::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected atomically") {
    ModelConfig cfg = tiny_config();
    Rng rng(29);
    RomaModel model(cfg, rng, InitMode::kTrain);
    AdamW opt(model.params(), 0.05);
    const auto dir = fs::temp_directory_path() / "roma_ckpt_corrupt";
    fs::create_directories(dir);
    const std::string path = (dir / "ck.roma").string();
    Rng loop_rng(0);
    checkpoint_save(make_checkpoint(model, opt, loop_rng, 0), path);

    auto read_all = [&]() {
        std::ifstream in(path, std::ios::binary);
        return std::vector<char>((std::istreambuf_iterator<char>(in)), {});
    };
    auto write_all = [&](const std::vector<char>& bytes, const std::string& p) {
        std::ofstream out(p, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    };

    auto bytes = read_all();
    // Flipped magic byte -> format error.
    auto bad_magic = bytes;
    bad_magic[1] ^= 0xff;
    write_all(bad_magic, (dir / "bad_magic.roma").string());
    CHECK_THROWS_AS(checkpoint_load((dir / "bad_magic.roma").string()), FormatError);

    // Flipped payload byte -> checksum failure.
    auto bad_body = bytes;
    bad_body[bytes.size() / 2] ^= 0x10;
    write_all(bad_body, (dir / "bad_body.roma").string());
    CHECK_THROWS_AS(checkpoint_load((dir / "bad_body.roma").string()), IntegrityError);

    // Truncation -> integrity error.
    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    write_all(truncated, (dir / "trunc.roma").string());
    CHECK_THROWS_AS(checkpoint_load((dir / "trunc.roma").string()), IntegrityError);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint restore names mismatched tensors") {
    ModelConfig small = tiny_config();
    ModelConfig bigger = tiny_config();
    bigger.width = 16;
    Rng rng(31);
    RomaModel a(small, rng, InitMode::kTrain);
    RomaModel b(bigger, rng, InitMode::kTrain);
    AdamW opt_a(a.params(), 0.05);
    AdamW opt_b(b.params(), 0.05);
    Rng loop_rng(0);
    Checkpoint ck = make_checkpoint(a, opt_a, loop_rng, 0);
    std::uint64_t step = 0;
    CHECK_THROWS_WITH_AS(checkpoint_restore(ck, b, opt_b, loop_rng, step), doctest::Contains("shape mismatch for"), ShapeError);
}

TEST_CASE("staged model_fd_check equals the generic checker") {
    ModelConfig cfg = tiny_config();
    Rng rng(37);
    RomaModel model(cfg, rng, InitMode::kDense);
    ImageBuffer img = random_image(cfg.image_side, rng);
    RotationRecord rec;
    rec.applied = true;
    rec.theta = 1.1;
    rec.covered_patches = {0, 1};

    FdOptions fd;
    fd.subsample_threshold = 48;
    fd.subsample_count = 16;

    // Generic path.
    Tensor patches = split_patches(img, cfg.patch_size).patch_matrix();
    Tensor tok_t = extract_token_targets(img, cfg.patch_size);
    Tensor clu_t = extract_cluster_targets(img, cfg.cluster_side_px());
    auto loss = [&]() {
        Tensor tokens = angle_embedding(patch_embed(patches, model.params(), cfg), rec, model.params());
        Tensor features = encoder_forward(tokens, model.params(), cfg);
        DecoderOut dec = decoder_forward(features, model.params(), cfg);
        Tensor cp = cluster_head(cluster_aggregate(dec.layer_feats, cfg), model.params(), cfg);
        return combine_loss(token_loss(dec.token_preds, tok_t), cluster_loss(cp, clu_t), 0.1);
    };
    FdReport generic = finite_difference_check(model.params(), loss, fd);

    ModelFdOptions opts;
    opts.fd = fd;
    opts.lambda = 0.1;
    opts.workers = 2;
    FdReport staged = model_fd_check(cfg, model.params(), img, rec, opts);

    CHECK(staged.total_checked == generic.total_checked);
    CHECK(staged.max_rel == doctest::Approx(generic.max_rel).epsilon(1e-12));
    CHECK(staged.mean_rel == doctest::Approx(generic.mean_rel).epsilon(1e-12));
    CHECK(staged.max_rel < 1e-4);
    REQUIRE(staged.per_param.size() == generic.per_param.size());
    for (std::size_t i = 0; i < staged.per_param.size(); ++i) {
        CHECK(staged.per_param[i].name == generic.per_param[i].name);
        CHECK(staged.per_param[i].max_rel == generic.per_param[i].max_rel);
    }
}

TEST_CASE("run_pretraining writes metrics and a loadable checkpoint") {
    ModelConfig cfg = tiny_config();
    Rng rng(41);
    RomaModel model(cfg, rng, InitMode::kTrain);
    Rng data_rng(43);
    std::vector<ImageBuffer> dataset;
    for (int i = 0; i < 6; ++i) dataset.push_back(random_image(cfg.image_side, data_rng));

    TrainConfig tc;
    tc.steps = 4;
    tc.batch_size = 2;
    tc.step.seed = 1;
    tc.step.ares.patch_size = cfg.patch_size;
    tc.step.ares.ladder = {16, 8};
    const auto dir = fs::temp_directory_path() / "roma_run_test";
    fs::remove_all(dir);
    PretrainResult res = run_pretraining(model, dataset, tc, dir.string());
    CHECK(res.curve.size() == 4);
    CHECK(fs::exists(res.metrics_path));
    CHECK(fs::exists(res.checkpoint_path));

    std::ifstream csv(res.metrics_path);
    std::string header;
    std::getline(csv, header);
    CHECK(header == "step,lr,token_mse,cluster_mse,total,wall_ms");
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 4);

    Checkpoint ck = checkpoint_load(res.checkpoint_path);
    CHECK(ck.train_step == 4);
    CHECK(ck.config.width == cfg.width);
    fs::remove_all(dir);
}
