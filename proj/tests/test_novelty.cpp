#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vnd/errors.hpp"
#include "vnd/novelty.hpp"
#include "vnd/selfcheck.hpp"

using namespace vnd;

namespace {

FeatureMatrix random_matrix(std::size_t n, std::size_t d, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
    Rng rng(seed);
    FeatureMatrix m;
    m.n = n;
    m.d = d;
    m.values.resize(n * d);
    for (auto& v : m.values) v = static_cast<float>(rng.uniform(lo, hi));
    m.source = "random";
    return m;
}

std::vector<VecD> rows_of(const FeatureMatrix& m) {
    std::vector<VecD> rows;
    for (std::size_t i = 0; i < m.n; ++i) rows.push_back(m.row_double(i));
    return rows;
}

// encoder mean = x, unit encoder variance; decoder mean = z, unit variance
VaeModel linear_identity_model(std::size_t d) {
    ArchSpec a;
    a.name = "custom";
    a.input_shape = {d};
    a.latent_dim = d;
    a.encoder = {LayerSpec::dense(2 * d)};
    a.decoder = {LayerSpec::dense(2 * d)};
    VaeModel m = make_vae(a, DecoderFamily::gaussian, 1);
    m.enc_params.fill(0.0);
    m.dec_params.fill(0.0);
    for (std::size_t j = 0; j < d; ++j) {
        m.enc_params.layers[0].weight[j * d + j] = 1.0;
        m.dec_params.layers[0].weight[j * d + j] = 1.0;
    }
    return m;
}

struct OracleFixture {
    VaeModel model;
    FeatureMatrix normal;
    std::vector<VecD> normal_rows;
    ReferenceSet ref;
};

OracleFixture make_fixture(DecoderFamily family, std::uint64_t seed, std::size_t n_ref = 60) {
    OracleFixture f;
    f.model = make_vae("6-8-2-8-6", family, seed);
    const double lo = family == DecoderFamily::bernoulli ? 0.05 : -1.0;
    const double hi = family == DecoderFamily::bernoulli ? 0.95 : 1.0;
    f.normal = random_matrix(n_ref, 6, seed + 1, lo, hi);
    f.normal_rows = rows_of(f.normal);
    f.ref = build_reference(f.model, f.normal);
    return f;
}

} // namespace

TEST_CASE("metric id strings round-trip and unknown ids are rejected with the catalog") {
    for (const std::string& id : MetricId::all_ids()) {
        CHECK(MetricId::parse(id).str() == id);
    }
    CHECK(MetricId::all_ids().size() == 27);
    CHECK_THROWS_WITH_AS(MetricId::parse("recon-dec-stoch-lik"), doctest::Contains("baseline-nn"),
                         ConfigError);
}

TEST_CASE("every metric equals its naive transcription (gaussian decoder)") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 1001, 100);
    ScoreParams params;
    params.n_samples = 8;
    Rng rng(77);
    for (const std::string& id : MetricId::all_ids()) {
        const MetricId metric = MetricId::parse(id);
        if (metric.family == MetricFamily::generated) continue;
        for (int t = 0; t < 5; ++t) {
            VecD x(6);
            for (double& v : x) v = rng.uniform(-1.5, 1.5);
            ScoreParams p = params;
            p.seed = Rng::derive(555, static_cast<std::uint64_t>(t));
            const double got = score_one(metric.needs_model() ? &f.model : nullptr, &f.ref,
                                         f.model.as_input(x), metric, p)
                                   .score;
            const double want =
                selfcheck::naive_metric_score(f.model, f.normal_rows, x, metric, p);
            CHECK_MESSAGE(selfcheck::isclose(got, want),
                          id << ": got " << got << ", naive " << want);
        }
    }
}

TEST_CASE("every metric equals its naive transcription (bernoulli decoder)") {
    const OracleFixture f = make_fixture(DecoderFamily::bernoulli, 2002, 50);
    ScoreParams params;
    params.n_samples = 8;
    Rng rng(78);
    for (const std::string& id : MetricId::all_ids()) {
        const MetricId metric = MetricId::parse(id);
        if (metric.family == MetricFamily::generated) continue;
        for (int t = 0; t < 3; ++t) {
            VecD x(6);
            for (double& v : x) v = rng.uniform(0.05, 0.95);
            ScoreParams p = params;
            p.seed = Rng::derive(556, static_cast<std::uint64_t>(t));
            const double got = score_one(metric.needs_model() ? &f.model : nullptr, &f.ref,
                                         f.model.as_input(x), metric, p)
                                   .score;
            const double want =
                selfcheck::naive_metric_score(f.model, f.normal_rows, x, metric, p);
            CHECK_MESSAGE(selfcheck::isclose(got, want),
                          id << ": got " << got << ", naive " << want);
        }
    }
}

TEST_CASE("self-member scores are exactly zero for min-distance metrics") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 3003);
    for (const char* id : {"latent-nn-euclid", "latent-nn-bhatt", "out-nn-recon", "out-nn-bhatt",
                           "baseline-nn"}) {
        const MetricId metric = MetricId::parse(id);
        for (std::size_t i : {std::size_t{0}, std::size_t{17}, std::size_t{59}}) {
            const Tensor y = f.normal.row_tensor(i, f.model.input_shape);
            const ScoreResult r = score_one(&f.model, &f.ref, y, metric, ScoreParams{});
            CHECK_MESSAGE(r.score == 0.0, id << " at reference row " << i);
            CHECK(r.argmin_id == static_cast<int>(i));
        }
    }
}

TEST_CASE("single-member reference reduces to the pairwise distance") {
    const VaeModel m = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 4004);
    const FeatureMatrix one = random_matrix(1, 6, 5005);
    const ReferenceSet ref = build_reference(m, one);
    const VecD x{0.3, -0.2, 0.8, 0.1, -0.5, 0.6};
    const DiagonalGaussian qx = encode(m, m.as_input(x));
    const DiagonalGaussian qy = encode(m, m.as_input(one.row_double(0)));

    const double euclid =
        score_one(&m, &ref, m.as_input(x), MetricId::parse("latent-nn-euclid"), {}).score;
    double want = 0.0;
    for (std::size_t j = 0; j < qx.dim(); ++j)
        want += (qx.mean[j] - qy.mean[j]) * (qx.mean[j] - qy.mean[j]);
    CHECK(euclid == doctest::Approx(want).epsilon(1e-12));

    const double bhatt =
        score_one(&m, &ref, m.as_input(x), MetricId::parse("latent-nn-bhatt"), {}).score;
    CHECK(bhatt == bhattacharyya(qx, qy));
}

TEST_CASE("latent density: analytic single-reference value and ray monotonicity") {
    // zero-weight encoder maps everything to N(0, 1): the mixture density at
    // the encoded mean is the standard normal density at 0
    VaeModel m = make_vae("3-4-1-4-3", DecoderFamily::gaussian, 6006);
    m.enc_params.fill(0.0);
    const FeatureMatrix one = random_matrix(1, 3, 6007);
    const ReferenceSet ref = build_reference(m, one);
    const double score =
        score_one(&m, &ref, m.as_input(VecD{0.5, 0.5, 0.5}), MetricId::parse("latent-density"), {})
            .score;
    CHECK(score == doctest::Approx(-1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));

    // identity encoder: moving x away from the single reference increases the score
    const VaeModel lin = linear_identity_model(2);
    FeatureMatrix origin;
    origin.n = 1;
    origin.d = 2;
    origin.values = {0.0f, 0.0f};
    origin.source = "origin";
    const ReferenceSet ref2 = build_reference(lin, origin);
    double prev = -std::numeric_limits<double>::infinity();
    for (double r = 0.0; r <= 3.0; r += 0.5) {
        const double s =
            score_one(&lin, &ref2, lin.as_input(VecD{r, 0.0}), MetricId::parse("latent-density"),
                      {})
                .score;
        CHECK(s > prev);
        prev = s;
    }
}

TEST_CASE("output density: analytic value and reduction to the input variant") {
    // zero decoder weights give p(x|z) = N(0, 1) regardless of z
    VaeModel m = make_vae("1-2-1-2-1", DecoderFamily::gaussian, 7007);
    m.dec_params.fill(0.0);
    FeatureMatrix one;
    one.n = 1;
    one.d = 1;
    one.values = {0.7f};
    one.source = "one";
    const ReferenceSet ref = build_reference(m, one);
    // x reconstructs to the origin, where the mixture is N(0,1)
    const double s =
        score_one(&m, &ref, m.as_input(VecD{0.0}), MetricId::parse("out-density-recon"), {}).score;
    CHECK(s == doctest::Approx(-1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-12));

    // perfect-reconstruction model: evaluating at recon(x) or at x coincide
    const VaeModel lin = linear_identity_model(2);
    const FeatureMatrix nr = random_matrix(10, 2, 7008);
    const ReferenceSet lref = build_reference(lin, nr);
    for (int t = 0; t < 5; ++t) {
        const VecD x{0.1 * t, -0.2 * t};
        const double recon_v =
            score_one(&lin, &lref, lin.as_input(x), MetricId::parse("out-density-recon"), {}).score;
        const double input_v =
            score_one(&lin, &lref, lin.as_input(x), MetricId::parse("out-density-x"), {}).score;
        CHECK(recon_v == input_v);
    }
}

TEST_CASE("perfect-reconstruction model: x-vs-recon equals the baseline") {
    const VaeModel lin = linear_identity_model(3);
    const FeatureMatrix nr = random_matrix(25, 3, 8008);
    const ReferenceSet ref = build_reference(lin, nr);
    Rng rng(8009);
    for (int t = 0; t < 10; ++t) {
        VecD x(3);
        for (double& v : x) v = rng.uniform(-2, 2);
        const double a =
            score_one(&lin, &ref, lin.as_input(x), MetricId::parse("out-nn-x-vs-recon"), {}).score;
        const double b =
            score_one(nullptr, &ref, lin.as_input(x), MetricId::parse("baseline-nn"), {}).score;
        CHECK(a == b);
    }
}

TEST_CASE("reconstruction scores: deterministic zero, degenerate limits, aggregation order") {
    // identity model reconstructs exactly: deterministic error is zero
    const VaeModel lin = linear_identity_model(4);
    Rng rng(9009);
    VecD x(4);
    for (double& v : x) v = rng.uniform(-1, 1);
    Rng s1(1);
    CHECK(reconstruction_score(lin, lin.as_input(x), EncoderMode::mean, DecoderMode::mean,
                               Aggregate::mean, 1, s1) == 0.0);

    // encoder variance forced down to the clamp floor: stochastic equals deterministic
    VaeModel frozen = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 9010);
    frozen.enc_params.layers.back().bias[2] = -40.0; // log-variance head
    frozen.enc_params.layers.back().bias[3] = -40.0;
    for (std::size_t j = 0; j < 8; ++j) { // zero the log-variance weight rows
        frozen.enc_params.layers.back().weight[2 * 8 + j] = 0.0;
        frozen.enc_params.layers.back().weight[3 * 8 + j] = 0.0;
    }
    VecD x6{0.2, -0.4, 0.6, 0.1, -0.3, 0.5};
    Rng s2(2), s3(3);
    const double stoch = reconstruction_score(frozen, frozen.as_input(x6), EncoderMode::sample,
                                              DecoderMode::mean, Aggregate::mean, 16, s2);
    const double det = reconstruction_score(frozen, frozen.as_input(x6), EncoderMode::mean,
                                            DecoderMode::mean, Aggregate::mean, 1, s3);
    CHECK(stoch == doctest::Approx(det).epsilon(1e-6));

    // order statistic: min aggregate never exceeds the mean aggregate
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 9011);
    for (const char* base : {"recon-enc-stoch-err", "recon-enc-stoch-lik", "recon-dec-stoch-err",
                             "recon-full-stoch-err"}) {
        for (int t = 0; t < 5; ++t) {
            VecD xt(6);
            for (double& v : xt) v = rng.uniform(-1, 1);
            ScoreParams p;
            p.n_samples = 16;
            p.seed = 100 + static_cast<std::uint64_t>(t);
            const double mean_v =
                score_one(&f.model, &f.ref, f.model.as_input(xt), MetricId::parse(base), p).score;
            const double min_v = score_one(&f.model, &f.ref, f.model.as_input(xt),
                                           MetricId::parse(std::string(base) + "-min"), p)
                                     .score;
            CHECK(min_v <= mean_v);
        }
    }
}

TEST_CASE("Monte Carlo reconstruction scores converge with the sample count") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 1100);
    const VecD x{0.3, -0.5, 0.2, 0.7, -0.1, 0.4};
    ScoreParams big, small;
    big.n_samples = 10000;
    big.seed = 1;
    small.n_samples = 100;
    small.seed = 2;
    const MetricId id = MetricId::parse("recon-enc-stoch-err");
    const double a = score_one(&f.model, &f.ref, f.model.as_input(x), id, big).score;
    const double b = score_one(&f.model, &f.ref, f.model.as_input(x), id, small).score;
    CHECK(std::abs(a - b) < 0.1 * std::abs(a));
}

TEST_CASE("vae-reg equals the KL of the encoded distribution exactly") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 1200);
    Rng rng(1201);
    for (int t = 0; t < 10; ++t) {
        VecD x(6);
        for (double& v : x) v = rng.uniform(-2, 2);
        const double s = score_one(&f.model, nullptr, f.model.as_input(x),
                                   MetricId::parse("vae-reg"), {})
                             .score;
        CHECK(s == kl_to_standard_normal(encode(f.model, f.model.as_input(x))));
        CHECK(s >= 0.0);
    }
    // encoder pinned to the prior scores zero
    VaeModel prior = make_vae("6-8-2-8-6", DecoderFamily::gaussian, 1202);
    prior.enc_params.fill(0.0);
    CHECK(score_one(&prior, nullptr, prior.as_input(VecD(6, 0.3)), MetricId::parse("vae-reg"), {})
              .score == 0.0);
}

TEST_CASE("neg-elbo composes exactly from the stochastic likelihood score and vae-reg") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 1300);
    Rng rng(1301);
    for (int t = 0; t < 5; ++t) {
        VecD x(6);
        for (double& v : x) v = rng.uniform(-1, 1);
        ScoreParams p;
        p.n_samples = 16;
        p.seed = 1400 + static_cast<std::uint64_t>(t);
        const double elbo =
            score_one(&f.model, nullptr, f.model.as_input(x), MetricId::parse("neg-elbo"), p)
                .score;
        const double lik = score_one(&f.model, nullptr, f.model.as_input(x),
                                     MetricId::parse("recon-enc-stoch-lik"), p)
                               .score;
        const double reg =
            score_one(&f.model, nullptr, f.model.as_input(x), MetricId::parse("vae-reg"), p).score;
        CHECK(elbo == lik + reg);

        const double elbo_min =
            score_one(&f.model, nullptr, f.model.as_input(x), MetricId::parse("neg-elbo-min"), p)
                .score;
        CHECK(elbo_min <= elbo);
    }
}

TEST_CASE("generated scores: linear model reaches zero, dominance invariants hold") {
    const VaeModel lin = linear_identity_model(2);
    ScoreParams p;
    p.search.max_iterations = 200;
    Rng rng(1500);
    for (int t = 0; t < 5; ++t) {
        VecD x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
        const ScoreResult r =
            generated_score(lin, lin.as_input(x), SearchMeasure::sq_error, false, p);
        CHECK(r.score < 1e-10);
        CHECK(std::abs(r.z_star[0] - x[0]) < 1e-4);
        CHECK(std::abs(r.z_star[1] - x[1]) < 1e-4);
    }

    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 1600);
    Rng rng2(1601);
    for (int t = 0; t < 5; ++t) {
        VecD x(6);
        for (double& v : x) v = rng2.uniform(-1.5, 1.5);
        const Tensor xt = f.model.as_input(x);
        ScoreParams sp;
        sp.seed = 1700 + static_cast<std::uint64_t>(t);

        const double gen = score_one(&f.model, nullptr, xt, MetricId::parse("gen-err"), sp).score;
        const double det =
            score_one(&f.model, nullptr, xt, MetricId::parse("recon-det-err"), sp).score;
        CHECK(gen <= det + 1e-12);

        const double bounded =
            score_one(&f.model, nullptr, xt, MetricId::parse("gen-err-bounded"), sp).score;
        CHECK(bounded >= gen - 1e-9);

        // the reported score is the measure evaluated at the reported z*
        const ScoreResult gl = score_one(&f.model, nullptr, xt, MetricId::parse("gen-lik"), sp);
        CHECK(selfcheck::isclose(gl.score,
                                 selfcheck::naive_measure_at(f.model, x, gl.z_star,
                                                             SearchMeasure::neg_log_likelihood)));
    }
}

TEST_CASE("baseline-nn: trivial values and no model required") {
    FeatureMatrix two;
    two.n = 2;
    two.d = 2;
    two.values = {0.0f, 0.0f, 3.0f, 4.0f};
    two.source = "two";
    const VaeModel m = make_vae("2-4-1-4-2", DecoderFamily::gaussian, 1800);
    const ReferenceSet ref = build_reference(m, two, {}, ReferenceSet::kInput);
    const MetricId id = MetricId::parse("baseline-nn");
    const ScoreResult r = score_one(nullptr, &ref, Tensor({2}, VecD{0.0, 1.0}), id, {});
    CHECK(r.score == 1.0);
    CHECK(r.argmin_id == 0);
    const ScoreResult self = score_one(nullptr, &ref, Tensor({2}, VecD{3.0, 4.0}), id, {});
    CHECK(self.score == 0.0);
}

TEST_CASE("build_reference: consistency, delegation, subsampling") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 1900, 40);
    CHECK(f.ref.size == 40);
    CHECK(f.ref.latent_gaussians().size() == 40);
    CHECK(f.ref.latent_means.size() == 40);
    CHECK(f.ref.inputs.size() == 40);
    CHECK(f.ref.recon_means.size() == 40);
    CHECK(f.ref.recon_dists.size() == 40);

    // latent means equal encode() means elementwise
    for (std::size_t i : {std::size_t{0}, std::size_t{13}, std::size_t{39}}) {
        const DiagonalGaussian q = encode(f.model, f.normal.row_tensor(i, f.model.input_shape));
        const auto row = f.ref.latent_means.row(i);
        for (std::size_t j = 0; j < q.dim(); ++j) CHECK(row[j] == q.mean[j]);
        CHECK(f.ref.latent_gaussians()[i].mean == q.mean);
    }

    // reproducible subsampling
    const ReferenceSet sub_a = build_reference(f.model, f.normal, {20, 7});
    const ReferenceSet sub_b = build_reference(f.model, f.normal, {20, 7});
    CHECK(sub_a.size == 20);
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(VecD(sub_a.inputs.row(i).begin(), sub_a.inputs.row(i).end()) ==
              VecD(sub_b.inputs.row(i).begin(), sub_b.inputs.row(i).end()));

    // subset dominance for every min-over-Y metric
    Rng rng(1901);
    for (const char* id : {"latent-nn-euclid", "latent-nn-bhatt", "out-nn-recon", "out-nn-bhatt",
                           "out-nn-x-vs-recon", "out-nn-recon-vs-y", "baseline-nn"}) {
        const MetricId metric = MetricId::parse(id);
        for (int t = 0; t < 3; ++t) {
            VecD x(6);
            for (double& v : x) v = rng.uniform(-2, 2);
            const Tensor xt = f.model.as_input(x);
            const double full = score_one(&f.model, &f.ref, xt, metric, {}).score;
            const double sub = score_one(&f.model, &sub_a, xt, metric, {}).score;
            CHECK(sub >= full);
        }
    }

    CHECK_THROWS_AS(build_reference(f.model, FeatureMatrix{}), DataError);
    CHECK_THROWS_AS(build_reference(f.model, f.normal, {100, 1}), ConfigError);
}

TEST_CASE("missing reference sections are reported as config errors") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 2000, 10);
    const ReferenceSet latent_only = build_reference(f.model, f.normal, {}, ReferenceSet::kLatent);
    const Tensor x = f.model.as_input(VecD(6, 0.1));
    CHECK_THROWS_AS(score_one(nullptr, &latent_only, x, MetricId::parse("baseline-nn"), {}),
                    ConfigError);
    CHECK_THROWS_AS(score_one(&f.model, &latent_only, x, MetricId::parse("out-nn-recon"), {}),
                    ConfigError);
    CHECK(score_one(&f.model, &latent_only, x, MetricId::parse("latent-nn-euclid"), {}).score >=
          0.0);
    CHECK_THROWS_AS(score_one(nullptr, nullptr, x, MetricId::parse("vae-reg"), {}), ConfigError);
}

TEST_CASE("batch scoring is independent of the worker count and seed-derived") {
    const OracleFixture f = make_fixture(DecoderFamily::gaussian, 2100, 30);
    const FeatureMatrix test = random_matrix(24, 6, 2101);
    ScoreParams p;
    p.n_samples = 8;
    p.seed = 42;
    const MetricId id = MetricId::parse("recon-full-stoch-err");
    const auto serial = score_batch(&f.model, &f.ref, test, id, p, 1);
    const auto parallel = score_batch(&f.model, &f.ref, test, id, p, 8);
    REQUIRE(serial.size() == 24);
    for (std::size_t i = 0; i < 24; ++i) CHECK(serial[i].score == parallel[i].score);

    // per-sample streams: same seed reproduces, different seed changes scores
    const auto again = score_batch(&f.model, &f.ref, test, id, p, 3);
    ScoreParams p2 = p;
    p2.seed = 43;
    const auto other = score_batch(&f.model, &f.ref, test, id, p2, 3);
    bool any_diff = false;
    for (std::size_t i = 0; i < 24; ++i) {
        CHECK(serial[i].score == again[i].score);
        any_diff = any_diff || serial[i].score != other[i].score;
    }
    CHECK(any_diff);
}

TEST_CASE("trained fixture: novelty scores separate the outlier cluster") {
    // small trained model; outliers shifted far from the normal cluster
    FeatureMatrix normal = random_matrix(300, 6, 2200, -1.0, 1.0);
    VaeModel model = make_vae("6-12-3-12-6", DecoderFamily::gaussian, 2201);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.batch_size = 64;
    cfg.max_epochs = 80;
    cfg.patience = 15;
    cfg.seed = 2202;
    train(model, normal, cfg);
    const ReferenceSet ref = build_reference(model, normal);

    const FeatureMatrix held = random_matrix(40, 6, 2203, -1.0, 1.0);
    FeatureMatrix outliers = random_matrix(40, 6, 2204, 4.0, 6.0);

    for (const char* id : {"vae-reg", "latent-nn-euclid", "recon-det-err", "neg-elbo"}) {
        const MetricId metric = MetricId::parse(id);
        ScoreParams p;
        p.n_samples = 8;
        p.seed = 2205;
        double mean_norm = 0.0, mean_out = 0.0;
        for (std::size_t i = 0; i < 40; ++i) {
            mean_norm +=
                score_one(&model, &ref, held.row_tensor(i, model.input_shape), metric, p).score;
            mean_out +=
                score_one(&model, &ref, outliers.row_tensor(i, model.input_shape), metric, p)
                    .score;
        }
        CHECK_MESSAGE(mean_out > mean_norm, id);
    }
}
