#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "vnd/errors.hpp"
#include "vnd/gaussian.hpp"
#include "vnd/vae.hpp"

using namespace vnd;

namespace {

// low-dimensional manifold data: x = A u + small noise, compressible by the
// autoencoder so training moves the ELBO substantially
FeatureMatrix manifold_data(std::size_t n, std::size_t d, std::size_t k, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<VecD> basis(k, VecD(d));
    for (auto& b : basis)
        for (double& v : b) v = rng.uniform(-1, 1);
    FeatureMatrix m;
    m.n = n;
    m.d = d;
    m.values.resize(n * d);
    for (std::size_t i = 0; i < n; ++i) {
        VecD u(k);
        for (double& v : u) v = rng.normal();
        for (std::size_t j = 0; j < d; ++j) {
            double acc = 0.05 * rng.normal();
            for (std::size_t c = 0; c < k; ++c) acc += basis[c][j] * u[c];
            m.values[i * m.d + j] = static_cast<float>(acc);
        }
    }
    m.source = "manifold";
    return m;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TrainedFixture {
    VaeModel model;
    FeatureMatrix data;
    TrainLog log;
};

const TrainedFixture& trained_fixture() {
    static TrainedFixture* fx = [] {
        auto* f = new TrainedFixture;
        f->data = manifold_data(400, 8, 2, 11);
        f->model = make_vae("8-16-4-16-8", DecoderFamily::gaussian, 21);
        TrainConfig cfg;
        cfg.lr = 5e-3;
        cfg.batch_size = 64;
        cfg.max_epochs = 200;
        cfg.patience = 25;
        cfg.seed = 31;
        f->log = train(f->model, f->data, cfg);
        return f;
    }();
    return *fx;
}

} // namespace

TEST_CASE("builtin dense catalog matches the published width strings") {
    const ArchSpec a = builtin_architecture("dense46_z8");
    CHECK(a.input_shape == Shape{46});
    CHECK(a.latent_dim == 8);
    // encoder: 64, 32, 16 hidden widths, then the 2*8 head
    REQUIRE(a.encoder.size() == 7);
    CHECK(a.encoder[0].units == 64);
    CHECK(a.encoder[1].act == Activation::relu);
    CHECK(a.encoder[2].units == 32);
    CHECK(a.encoder[4].units == 16);
    CHECK(a.encoder[6].units == 16); // 2 * latent
    // decoder mirrored: 16, 32, 64 then the Gaussian head 2*46
    REQUIRE(a.decoder.size() == 7);
    CHECK(a.decoder[0].units == 16);
    CHECK(a.decoder[2].units == 32);
    CHECK(a.decoder[4].units == 64);
    CHECK(a.decoder[6].units == 92);

    const ArchSpec b16 = builtin_architecture("dense46_z16");
    CHECK(b16.latent_dim == 16);
    CHECK(b16.encoder[0].units == 128);
    const ArchSpec b24 = builtin_architecture("dense46_z24");
    CHECK(b24.latent_dim == 24);
    CHECK(b24.encoder[4].units == 48);
}

TEST_CASE("builtin conv architecture matches the published table") {
    const ArchSpec a = builtin_architecture("mnist_conv", DecoderFamily::bernoulli);
    CHECK(a.input_shape == Shape{1, 28, 28});
    CHECK(a.latent_dim == 64);

    REQUIRE(a.encoder.size() == 6);
    CHECK(a.encoder[0].kind == LayerKind::conv2d);
    CHECK(a.encoder[0].units == 16);
    CHECK(a.encoder[0].filter == std::array<std::size_t, 2>{3, 3});
    CHECK(a.encoder[0].stride == std::array<std::size_t, 2>{1, 1});
    CHECK(a.encoder[2].kind == LayerKind::maxpool2d);
    CHECK(a.encoder[2].filter == std::array<std::size_t, 2>{2, 2});
    CHECK(a.encoder[3].units == 32);
    CHECK(a.encoder[5].kind == LayerKind::dense);
    CHECK(a.encoder[5].units == 128); // 2 * 64

    // spatial sizes along the encoder: 28 -> 28 -> 14 -> 14
    const auto shapes = infer_shapes(a.encoder, a.input_shape);
    CHECK(shapes[1] == Shape{16, 28, 28});
    CHECK(shapes[3] == Shape{16, 14, 14});
    CHECK(shapes[4] == Shape{32, 14, 14});

    // decoder: dense 14x14, conv 32, transposed conv 16 (2x2 stride 2), conv head
    CHECK(a.decoder[0].kind == LayerKind::dense);
    CHECK(a.decoder[0].units == 196);
    CHECK(a.decoder[2].units == 32);
    CHECK(a.decoder[4].kind == LayerKind::transposed_conv2d);
    CHECK(a.decoder[4].units == 16);
    CHECK(a.decoder[4].stride == std::array<std::size_t, 2>{2, 2});
    const auto dshapes = infer_shapes(a.decoder, Shape{64});
    CHECK(dshapes[1] == Shape{1, 14, 14});
    CHECK(dshapes[5] == Shape{16, 28, 28});
    CHECK(dshapes.back() == Shape{1, 28, 28}); // Bernoulli head

    const ArchSpec g = builtin_architecture("mnist_conv_z24", DecoderFamily::gaussian);
    CHECK(g.latent_dim == 24);
    CHECK(infer_shapes(g.decoder, Shape{24}).back() == Shape{2, 28, 28});
}

TEST_CASE("unknown architecture raises a config error listing the catalog") {
    CHECK_THROWS_WITH_AS(builtin_architecture("resnet50"), doctest::Contains("dense46_z8"),
                         ConfigError);
}

TEST_CASE("encode on a zero-weight model returns the head biases") {
    VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 3);
    m.enc_params.fill(0.0);
    auto& head = m.enc_params.layers.back();
    head.bias = Tensor({4}, VecD{0.5, -0.25, 0.1, -0.3});
    const DiagonalGaussian q = encode(m, m.as_input(VecD{1, 2, 3, 4, 5, 6}));
    CHECK(q.dim() == 2);
    CHECK(q.mean == VecD{0.5, -0.25});
    CHECK(q.log_var == VecD{0.1, -0.3});
}

TEST_CASE("decode on a zero-weight model returns the head biases") {
    VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 3);
    m.dec_params.fill(0.0);
    auto& head = m.dec_params.layers.back();
    for (std::size_t j = 0; j < 12; ++j) head.bias[j] = 0.1 * static_cast<double>(j);
    const OutputDistribution dist = decode(m, VecD{0.3, -0.4});
    CHECK(dist.dim() == 6);
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(dist.mean[j] == doctest::Approx(0.1 * j).epsilon(1e-14));
        CHECK(dist.log_var[j] == doctest::Approx(0.1 * (j + 6)).epsilon(1e-14));
    }
}

TEST_CASE("encode output dimension equals latent_dim for any input") {
    const VaeModel m = make_vae("mnist_conv_z24", DecoderFamily::bernoulli, 5);
    Rng rng(7);
    Tensor x({1, 28, 28});
    for (double& v : x.data) v = rng.uniform(0, 1);
    CHECK(encode(m, x).dim() == 24);
    CHECK_THROWS_AS(decode(m, VecD{0.0}), ConfigError);
}

TEST_CASE("log-variance heads are clamped before distributions are built") {
    VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 3);
    m.enc_params.fill(0.0);
    m.enc_params.layers.back().bias = Tensor({4}, VecD{0.0, 0.0, 64.0, -64.0});
    const DiagonalGaussian q = encode(m, m.as_input(VecD(6, 0.0)));
    CHECK(q.log_var[0] == kLogVarClamp);
    CHECK(q.log_var[1] == -kLogVarClamp);
}

TEST_CASE("elbo_terms: kl is exactly the closed-form value of encode(x)") {
    const VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 9);
    Rng rng(5);
    Tensor x({6});
    for (double& v : x.data) v = rng.uniform(-1, 1);
    Rng s(77);
    const ElboTerms t = elbo_terms(m, x, 4, s);
    CHECK(t.kl == kl_to_standard_normal(encode(m, x)));
    CHECK(t.negative_elbo() == -t.recon_log_lik + t.kl);
    CHECK(t.kl >= 0.0);
}

TEST_CASE("elbo_terms with one sample and a fixed seed is deterministic") {
    const VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 9);
    const Tensor x({6}, VecD{0.1, -0.2, 0.3, 0.0, 0.5, -0.6});
    Rng a(123), b(123);
    const ElboTerms ta = elbo_terms(m, x, 1, a);
    const ElboTerms tb = elbo_terms(m, x, 1, b);
    CHECK(ta.recon_log_lik == tb.recon_log_lik);
    CHECK(ta.kl == tb.kl);
}

TEST_CASE("elbo Monte Carlo estimates agree across sample counts") {
    // encoder variance pinned small so the per-sample spread is moderate
    VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 9);
    m.enc_params.layers.back().bias[2] = -4.0;
    m.enc_params.layers.back().bias[3] = -4.0;
    const Tensor x({6}, VecD{0.1, -0.2, 0.3, 0.0, 0.5, -0.6});
    Rng big(200), small(201);
    const double e_big = elbo_terms(m, x, 10000, big).recon_log_lik;
    const double e_small = elbo_terms(m, x, 100, small).recon_log_lik;
    CHECK(std::abs(e_big - e_small) < 0.05 * std::abs(e_big) + 0.05);
}

TEST_CASE("reparameterized gradients match finite differences with frozen noise") {
    const VaeModel m = make_vae("5-8-2-8-5", DecoderFamily::gaussian, 13);
    Rng rng(17);
    Tensor x({5});
    for (double& v : x.data) v = rng.uniform(-1, 1);
    std::vector<VecD> noise(3, VecD(2));
    for (auto& v : noise)
        for (double& e : v) e = rng.normal();

    const ElboGrads analytic = elbo_gradients(m, x, noise);
    const double h = 1e-5;
    double worst = 0.0;
    VaeModel probe = m;
    auto fd_check = [&](Tensor& slot_tensor, std::size_t i, double analytic_g) {
        const double saved = slot_tensor[i];
        slot_tensor[i] = saved + h;
        const double up = elbo_gradients(probe, x, noise).loss;
        slot_tensor[i] = saved - h;
        const double down = elbo_gradients(probe, x, noise).loss;
        slot_tensor[i] = saved;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - analytic_g) /
                                    std::max({std::abs(fd), std::abs(analytic_g), 1e-5}));
    };
    for (std::size_t l = 0; l < probe.enc_params.layers.size(); ++l) {
        for (std::size_t i = 0; i < probe.enc_params.layers[l].weight.numel(); ++i)
            fd_check(probe.enc_params.layers[l].weight, i, analytic.enc.layers[l].weight[i]);
        for (std::size_t i = 0; i < probe.enc_params.layers[l].bias.numel(); ++i)
            fd_check(probe.enc_params.layers[l].bias, i, analytic.enc.layers[l].bias[i]);
    }
    for (std::size_t l = 0; l < probe.dec_params.layers.size(); ++l) {
        for (std::size_t i = 0; i < probe.dec_params.layers[l].weight.numel(); ++i)
            fd_check(probe.dec_params.layers[l].weight, i, analytic.dec.layers[l].weight[i]);
        for (std::size_t i = 0; i < probe.dec_params.layers[l].bias.numel(); ++i)
            fd_check(probe.dec_params.layers[l].bias, i, analytic.dec.layers[l].bias[i]);
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("training a point mass drives its reconstruction error to zero") {
    FeatureMatrix data;
    data.n = 16;
    data.d = 4;
    const VecD point{0.4, -0.7, 1.1, 0.2};
    for (std::size_t i = 0; i < data.n; ++i)
        for (double v : point) data.values.push_back(static_cast<float>(v));

    VaeModel m = make_vae("4-8-2-8-4", DecoderFamily::gaussian, 41);
    TrainConfig cfg;
    cfg.lr = 1e-2;
    cfg.batch_size = 16;
    cfg.max_epochs = 400;
    cfg.patience = 400; // run to convergence
    cfg.val_fraction = 0.25;
    cfg.seed = 43;
    train(m, data, cfg);

    const OutputDistribution recon = decode(m, encode(m, m.as_input(point)).mean);
    double err = 0.0;
    for (std::size_t j = 0; j < 4; ++j)
        err += (recon.mean[j] - point[j]) * (recon.mean[j] - point[j]);
    CHECK(err < 1e-2);
}

TEST_CASE("early stopping returns the parameters of the best validation epoch") {
    const TrainedFixture& fx = trained_fixture();
    REQUIRE(fx.log.best_epoch >= 0);
    const double best = fx.log.val_loss[fx.log.best_epoch];
    for (double v : fx.log.val_loss) CHECK(best <= v);
    CHECK(fx.log.epochs_run == static_cast<int>(fx.log.val_loss.size()));
}

TEST_CASE("training reduces the validation negative ELBO by at least half") {
    const TrainedFixture& fx = trained_fixture();
    const double first = fx.log.val_loss.front();
    const double best = fx.log.val_loss[fx.log.best_epoch];
    CHECK((first - best) / std::abs(first) >= 0.5);
}

TEST_CASE("trained model reconstructs training data below a fixed threshold") {
    const TrainedFixture& fx = trained_fixture();
    double total = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
        const Tensor x = fx.data.row_tensor(i, fx.model.input_shape);
        const OutputDistribution recon = decode(fx.model, encode(fx.model, x).mean);
        for (std::size_t j = 0; j < recon.dim(); ++j)
            total += (recon.mean[j] - x[j]) * (recon.mean[j] - x[j]);
    }
    CHECK(total / 50.0 < 0.5);
}

TEST_CASE("encoded normal data sits closer to the prior than a far outlier") {
    const TrainedFixture& fx = trained_fixture();
    const Tensor normal = fx.data.row_tensor(0, fx.model.input_shape);
    Tensor outlier({8});
    outlier.fill(20.0);
    CHECK(kl_to_standard_normal(encode(fx.model, normal)) <
          kl_to_standard_normal(encode(fx.model, outlier)));
}

TEST_CASE("identical seeds give identical training logs and parameters") {
    const FeatureMatrix data = manifold_data(120, 6, 2, 51);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 32;
    cfg.max_epochs = 12;
    cfg.patience = 12;
    cfg.seed = 61;

    VaeModel a = make_vae("6-12-3-12-6", DecoderFamily::gaussian, 71);
    VaeModel b = make_vae("6-12-3-12-6", DecoderFamily::gaussian, 71);
    const TrainLog la = train(a, data, cfg);
    const TrainLog lb = train(b, data, cfg);
    CHECK(la.train_loss == lb.train_loss);
    CHECK(la.val_loss == lb.val_loss);
    CHECK(la.best_epoch == lb.best_epoch);
    for (std::size_t l = 0; l < a.enc_params.layers.size(); ++l)
        CHECK(a.enc_params.layers[l].weight.data == b.enc_params.layers[l].weight.data);
}

TEST_CASE("training results do not depend on the worker count") {
    const FeatureMatrix data = manifold_data(120, 6, 2, 52);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 32;
    cfg.max_epochs = 6;
    cfg.patience = 6;
    cfg.seed = 62;

    VaeModel a = make_vae("6-12-3-12-6", DecoderFamily::gaussian, 72);
    VaeModel b = a;
    TrainConfig cfg8 = cfg;
    cfg8.workers = 8;
    const TrainLog la = train(a, data, cfg);
    const TrainLog lb = train(b, data, cfg8);
    CHECK(la.train_loss == lb.train_loss);
    CHECK(la.val_loss == lb.val_loss);
    for (std::size_t l = 0; l < a.enc_params.layers.size(); ++l)
        CHECK(a.enc_params.layers[l].weight.data == b.enc_params.layers[l].weight.data);
}

TEST_CASE("non-finite loss aborts training with epoch/step diagnostics") {
    const FeatureMatrix data = manifold_data(64, 6, 2, 53);
    VaeModel m = make_vae("6-12-3-12-6", DecoderFamily::gaussian, 73);
    m.enc_params.layers.back().bias[0] = std::numeric_limits<double>::quiet_NaN();
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 10;
    cfg.seed = 63;
    CHECK_THROWS_WITH_AS(train(m, data, cfg), doctest::Contains("epoch 0"), NumericError);
}

TEST_CASE("checkpoint round-trip is byte-identical and preserves behavior") {
    const TrainedFixture& fx = trained_fixture();
    VaeModel m = fx.model;
    m.stats.channel_means = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
    m.stats.source_means["scan_a"] = 0.123456789012345;
    m.stats.from_training = true;

    const std::string p1 = "/tmp/vnd_test_ckpt_1.bin";
    const std::string p2 = "/tmp/vnd_test_ckpt_2.bin";
    save_checkpoint(m, p1);
    const VaeModel loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);
    CHECK(read_file(p1) == read_file(p2));

    CHECK(loaded.arch_name == m.arch_name);
    CHECK(loaded.latent_dim == m.latent_dim);
    CHECK(loaded.family == m.family);
    CHECK(loaded.input_shape == m.input_shape);
    CHECK(loaded.stats.channel_means == m.stats.channel_means);
    CHECK(loaded.stats.source_means == m.stats.source_means);

    const Tensor x = fx.data.row_tensor(3, m.input_shape);
    const DiagonalGaussian qa = encode(loaded, x);
    const DiagonalGaussian qb = encode(load_checkpoint(p2), x);
    CHECK(qa.mean == qb.mean);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("corrupt checkpoints are rejected") {
    const std::string p = "/tmp/vnd_test_ckpt_bad.bin";
    std::ofstream(p) << "not a checkpoint\n";
    CHECK_THROWS_AS(load_checkpoint(p), DataError);
    std::remove(p.c_str());
}

TEST_CASE("bernoulli decoder produces probabilities and a proper log mass") {
    const VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::bernoulli, 91);
    const OutputDistribution dist = decode(m, VecD{0.2, -0.1});
    for (double p : dist.mean) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    const VecD x(6, 1.0);
    CHECK(output_log_density(dist, x) < 0.0);

    Rng rng(93);
    const VecD draw = output_sample(dist, rng);
    for (double v : draw) CHECK((v == 0.0 || v == 1.0));
}

TEST_CASE("train validates inputs") {
    const FeatureMatrix data = manifold_data(32, 6, 2, 54);
    VaeModel m = make_vae("6-12-3-12-6", DecoderFamily::gaussian, 74);
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(m, data, cfg), ConfigError);
    FeatureMatrix empty;
    CHECK_THROWS_AS(train(m, empty, data, TrainConfig{}), DataError);
}
