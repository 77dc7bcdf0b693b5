#include "vnd/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "vnd/errors.hpp"
#include "vnd/latent_search.hpp"

namespace vnd::selfcheck {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double rel_close(double a, double b) {
    if (a == b) return 0.0;
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

double naive_log_pdf(const DiagonalGaussian& g, std::span<const double> x) {
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double var = std::exp(g.log_var[j]);
        const double diff = x[j] - g.mean[j];
        acc += -0.5 * std::log(2.0 * M_PI * var) - diff * diff / (2.0 * var);
    }
    return acc;
}

double naive_output_log_pdf(const OutputDistribution& d, std::span<const double> x) {
    if (d.family == DecoderFamily::gaussian)
        return naive_log_pdf(DiagonalGaussian(d.mean, d.log_var), x);
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double p = std::clamp(d.mean[j], 1e-7, 1.0 - 1e-7);
        acc += x[j] * std::log(p) + (1.0 - x[j]) * std::log1p(-p);
    }
    return acc;
}

double naive_sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
    return acc;
}

double naive_kl(const DiagonalGaussian& g) {
    double acc = 0.0;
    for (std::size_t j = 0; j < g.dim(); ++j)
        acc += std::exp(g.log_var[j]) + g.mean[j] * g.mean[j] - 1.0 - g.log_var[j];
    return 0.5 * acc;
}

double naive_bhatt(const DiagonalGaussian& p, const DiagonalGaussian& q) {
    double acc = 0.0;
    for (std::size_t j = 0; j < p.dim(); ++j) {
        const double vp = std::exp(p.log_var[j]);
        const double vq = std::exp(q.log_var[j]);
        const double vbar = 0.5 * (vp + vq);
        const double diff = p.mean[j] - q.mean[j];
        acc += diff * diff / vbar / 8.0 + 0.5 * std::log(vbar / std::sqrt(vp * vq));
    }
    return acc;
}

double naive_output_bhatt(const OutputDistribution& a, const OutputDistribution& b) {
    if (a.family == DecoderFamily::gaussian)
        return naive_bhatt(DiagonalGaussian(a.mean, a.log_var),
                           DiagonalGaussian(b.mean, b.log_var));
    double acc = 0.0;
    for (std::size_t j = 0; j < a.dim(); ++j) {
        const double p = std::clamp(a.mean[j], 1e-7, 1.0 - 1e-7);
        const double q = std::clamp(b.mean[j], 1e-7, 1.0 - 1e-7);
        acc -= std::log(std::sqrt(p * q) + std::sqrt((1.0 - p) * (1.0 - q)));
    }
    return acc;
}

VecD draw_latent(const DiagonalGaussian& q, Rng& rng) {
    VecD z(q.dim());
    for (std::size_t j = 0; j < z.size(); ++j)
        z[j] = q.mean[j] + std::exp(0.5 * q.log_var[j]) * rng.normal();
    return z;
}

VecD draw_output(const OutputDistribution& d, Rng& rng) {
    VecD x(d.dim());
    if (d.family == DecoderFamily::gaussian) {
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] = d.mean[j] + std::exp(0.5 * d.log_var[j]) * rng.normal();
    } else {
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = rng.uniform() < d.mean[j] ? 1.0 : 0.0;
    }
    return x;
}

} // namespace

double naive_measure_at(const VaeModel& m, const VecD& x, const VecD& z, SearchMeasure measure) {
    const OutputDistribution dist = decode(m, z);
    if (measure == SearchMeasure::sq_error) return naive_sq_dist(x, dist.mean);
    return -naive_output_log_pdf(dist, x);
}

double naive_metric_score(const VaeModel& m, const std::vector<VecD>& normal_rows, const VecD& x,
                          const MetricId& metric, const ScoreParams& params) {
    const Tensor xt = m.as_input(x);
    // same stream derivation as score_one, so stochastic draws coincide
    Rng rng(Rng::derive(params.seed, 0x5c03ull));
    const double inf = std::numeric_limits<double>::infinity();

    switch (metric.family) {
    case MetricFamily::vae_reg:
        return naive_kl(encode(m, xt));

    case MetricFamily::latent_nn: {
        const DiagonalGaussian q = encode(m, xt);
        double best = inf;
        for (const VecD& y : normal_rows) {
            const DiagonalGaussian qy = encode(m, m.as_input(y));
            const double d = metric.latent_distance == LatentDistance::euclid_mean
                                 ? naive_sq_dist(q.mean, qy.mean)
                                 : naive_bhatt(q, qy);
            best = std::min(best, d);
        }
        return best;
    }

    case MetricFamily::latent_density: {
        const DiagonalGaussian q = encode(m, xt);
        double acc = 0.0;
        for (const VecD& y : normal_rows)
            acc += std::exp(naive_log_pdf(encode(m, m.as_input(y)), q.mean));
        const double density = acc / static_cast<double>(normal_rows.size());
        return params.log_density ? -std::log(density) : -density;
    }

    case MetricFamily::reconstruction: {
        const DiagonalGaussian q = encode(m, xt);
        const bool deterministic =
            metric.encoder_mode == EncoderMode::mean && metric.decoder_mode != DecoderMode::sample;
        const int n = deterministic ? 1 : params.n_samples;
        double acc = 0.0, best = inf;
        for (int s = 0; s < n; ++s) {
            const VecD z = metric.encoder_mode == EncoderMode::sample ? draw_latent(q, rng) : q.mean;
            const OutputDistribution dist = decode(m, z);
            double v = 0.0;
            switch (metric.decoder_mode) {
            case DecoderMode::mean: v = naive_sq_dist(x, dist.mean); break;
            case DecoderMode::likelihood: v = -naive_output_log_pdf(dist, x); break;
            case DecoderMode::sample: v = naive_sq_dist(x, draw_output(dist, rng)); break;
            }
            acc += v;
            best = std::min(best, v);
        }
        return metric.aggregate == Aggregate::min ? best : acc / n;
    }

    case MetricFamily::output_nn: {
        const OutputDistribution recon = decode(m, encode(m, xt).mean);
        double best = inf;
        for (const VecD& y : normal_rows) {
            const OutputDistribution recon_y = decode(m, encode(m, m.as_input(y)).mean);
            double d = 0.0;
            switch (metric.output_variant) {
            case OutputVariant::recon_vs_recon: d = naive_sq_dist(recon.mean, recon_y.mean); break;
            case OutputVariant::bhatt: d = naive_output_bhatt(recon, recon_y); break;
            case OutputVariant::x_vs_recon_y: d = naive_sq_dist(x, recon_y.mean); break;
            case OutputVariant::recon_vs_y: d = naive_sq_dist(recon.mean, y); break;
            }
            best = std::min(best, d);
        }
        return best;
    }

    case MetricFamily::output_density: {
        VecD at = x;
        if (metric.density_at == DensityAt::reconstruction)
            at = decode(m, encode(m, xt).mean).mean;
        double acc = 0.0;
        for (const VecD& y : normal_rows) {
            const OutputDistribution recon_y = decode(m, encode(m, m.as_input(y)).mean);
            acc += std::exp(naive_output_log_pdf(recon_y, at));
        }
        const double density = acc / static_cast<double>(normal_rows.size());
        return params.log_density ? -std::log(density) : -density;
    }

    case MetricFamily::elbo: {
        const DiagonalGaussian q = encode(m, xt);
        const double kl = naive_kl(q);
        double acc = 0.0, best = inf;
        for (int s = 0; s < params.n_samples; ++s) {
            const double v = -naive_output_log_pdf(decode(m, draw_latent(q, rng)), x);
            acc += v;
            best = std::min(best, v);
        }
        return (metric.elbo_mode == ElboMode::mc_mean ? acc / params.n_samples : best) + kl;
    }

    case MetricFamily::baseline_nn: {
        double best = inf;
        for (const VecD& y : normal_rows) best = std::min(best, naive_sq_dist(x, y));
        return best;
    }

    case MetricFamily::generated:
        throw ConfigError("generated scores have no closed transcription; use naive_measure_at");
    }
    throw ConfigError("unhandled metric family");
}

double mc_kl_estimate(const DiagonalGaussian& g, int n_samples, std::uint64_t seed) {
    Rng rng(seed);
    double acc = 0.0;
    VecD z(g.dim());
    for (int s = 0; s < n_samples; ++s) {
        for (std::size_t j = 0; j < z.size(); ++j)
            z[j] = g.mean[j] + std::exp(0.5 * g.log_var[j]) * rng.normal();
        double logq = 0.0, logp = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double var = std::exp(g.log_var[j]);
            const double diff = z[j] - g.mean[j];
            logq += -0.5 * std::log(2.0 * M_PI * var) - diff * diff / (2.0 * var);
            logp += -0.5 * kLog2Pi - 0.5 * z[j] * z[j];
        }
        acc += logq - logp;
    }
    return acc / n_samples;
}

double quadrature_bhattacharyya_1d(const DiagonalGaussian& p, const DiagonalGaussian& q) {
    const double sp = std::exp(0.5 * p.log_var[0]);
    const double sq = std::exp(0.5 * q.log_var[0]);
    const double lo = std::min(p.mean[0] - 10.0 * sp, q.mean[0] - 10.0 * sq);
    const double hi = std::max(p.mean[0] + 10.0 * sp, q.mean[0] + 10.0 * sq);
    const int n = 40000; // Simpson needs even interval count
    const double h = (hi - lo) / n;
    auto f = [&](double x) {
        const VecD xv{x};
        return std::sqrt(std::exp(naive_log_pdf(p, xv)) * std::exp(naive_log_pdf(q, xv)));
    };
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    const double bc = acc * h / 3.0;
    return -std::log(bc);
}

double paircount_auc(const LabeledScores& ls) {
    double wins = 0.0;
    std::size_t n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < ls.size(); ++i) {
        if (ls.labels[i] != 1) continue;
        ++n1;
        for (std::size_t j = 0; j < ls.size(); ++j) {
            if (ls.labels[j] == 1) continue;
            if (ls.scores[i] > ls.scores[j]) wins += 1.0;
            else if (ls.scores[i] == ls.scores[j]) wins += 0.5;
        }
    }
    n0 = ls.size() - n1;
    return wins / (static_cast<double>(n0) * static_cast<double>(n1));
}

double naive_nearest_sq_dist(const std::vector<VecD>& rows, const VecD& query) {
    double best = std::numeric_limits<double>::infinity();
    for (const VecD& r : rows) best = std::min(best, naive_sq_dist(query, r));
    return best;
}

bool isclose(double a, double b, double rel, double abs_floor) {
    return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

namespace {

void add(std::vector<CheckResult>& out, const std::string& name, bool pass,
         const std::string& detail) {
    out.push_back({name, pass, detail});
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

} // namespace

std::vector<CheckResult> run_all(std::uint64_t seed) {
    std::vector<CheckResult> out;
    Rng rng(Rng::derive(seed, 0xc4ecull));

    { // per-dimension density product
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const std::size_t d = 1 + rng.uniform_index(6);
            VecD mean(d), lv(d), x(d);
            for (std::size_t j = 0; j < d; ++j) {
                mean[j] = rng.uniform(-2, 2);
                lv[j] = rng.uniform(-1, 1);
                x[j] = rng.uniform(-3, 3);
            }
            const DiagonalGaussian g(mean, lv);
            double prod = 1.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double var = std::exp(lv[j]);
                prod *= std::exp(-(x[j] - mean[j]) * (x[j] - mean[j]) / (2 * var)) /
                        std::sqrt(2 * M_PI * var);
            }
            worst = std::max(worst, rel_close(std::exp(log_density(g, x)), prod));
        }
        add(out, "gaussian-density-vs-1d-product", worst < 1e-12, "max rel err " + fmt(worst));
    }

    { // KL closed form vs Monte Carlo
        double worst = 0.0;
        for (int t = 0; t < 5; ++t) {
            VecD mean(4), lv(4);
            for (std::size_t j = 0; j < 4; ++j) {
                mean[j] = rng.uniform(-2, 2);
                lv[j] = rng.uniform(-0.7, 0.7);
            }
            const DiagonalGaussian g(mean, lv);
            const double closed = kl_to_standard_normal(g);
            if (closed < 0.5) continue;
            const double mc = mc_kl_estimate(g, 100000, Rng::derive(seed, 100 + t));
            worst = std::max(worst, std::abs(mc - closed) / closed);
        }
        add(out, "kl-closed-vs-monte-carlo", worst < 0.02, "max rel err " + fmt(worst));
    }

    { // Bhattacharyya closed form vs quadrature
        double worst = 0.0;
        for (int t = 0; t < 5; ++t) {
            const DiagonalGaussian p(VecD{rng.uniform(-2, 2)}, VecD{rng.uniform(-1, 1)});
            const DiagonalGaussian q(VecD{rng.uniform(-2, 2)}, VecD{rng.uniform(-1, 1)});
            worst = std::max(worst,
                             std::abs(bhattacharyya(p, q) - quadrature_bhattacharyya_1d(p, q)));
        }
        add(out, "bhattacharyya-closed-vs-quadrature", worst < 1e-3, "max abs err " + fmt(worst));
    }

    { // mixture density vs direct summation
        double worst = 0.0;
        for (int t = 0; t < 10; ++t) {
            GaussianMixture mix;
            for (int c = 0; c < 3; ++c) {
                VecD mean{rng.uniform(-2, 2), rng.uniform(-2, 2)};
                VecD lv{rng.uniform(-1, 1), rng.uniform(-1, 1)};
                mix.components.emplace_back(mean, lv);
            }
            const VecD x{rng.uniform(-3, 3), rng.uniform(-3, 3)};
            double naive = 0.0;
            for (const auto& c : mix.components) naive += std::exp(naive_log_pdf(c, x));
            naive /= 3.0;
            worst = std::max(worst, rel_close(mixture_density(mix, x), naive));
        }
        add(out, "mixture-density-vs-naive-sum", worst < 1e-12, "max rel err " + fmt(worst));
    }

    { // nearest neighbor exactness
        std::vector<VecD> rows(300, VecD(16));
        for (auto& r : rows)
            for (double& v : r) v = rng.uniform(-1, 1);
        const VectorIndex index = VectorIndex::from_rows(rows);
        bool ok = true;
        for (int t = 0; t < 50 && ok; ++t) {
            VecD q(16);
            for (double& v : q) v = rng.uniform(-1, 1);
            ok = index.nearest_sq_dist(q).sq_dist == naive_nearest_sq_dist(rows, q);
        }
        add(out, "nn-index-vs-naive-scan", ok, ok ? "exact" : "mismatch");
    }

    { // AUC vs pair counting, with ties
        bool ok = true;
        for (int t = 0; t < 20 && ok; ++t) {
            LabeledScores ls;
            const std::size_t n = 30 + rng.uniform_index(100);
            for (std::size_t i = 0; i < n; ++i) {
                ls.scores.push_back(std::round(rng.uniform(-2, 2) * 8.0) / 8.0);
                ls.labels.push_back(rng.uniform() < 0.4 ? 1 : 0);
            }
            std::size_t n1 = 0;
            for (int l : ls.labels) n1 += l;
            if (n1 == 0 || n1 == n) continue;
            ok = auc(ls) == paircount_auc(ls);
        }
        add(out, "auc-vs-pair-counting", ok, ok ? "exact" : "mismatch");
    }

    { // every metric id vs its naive transcription on a toy model
        const VaeModel model = make_vae("6-8-2-8-6", DecoderFamily::gaussian,
                                        Rng::derive(seed, 0xab1ull));
        FeatureMatrix normal;
        normal.n = 30;
        normal.d = 6;
        for (std::size_t i = 0; i < normal.n * normal.d; ++i)
            normal.values.push_back(static_cast<float>(rng.uniform(-1, 1)));
        // the oracle sees the same single-precision rows the reference was built from
        std::vector<VecD> normal_rows;
        for (std::size_t i = 0; i < normal.n; ++i) normal_rows.push_back(normal.row_double(i));
        const ReferenceSet ref = build_reference(model, normal);
        ScoreParams params;
        params.n_samples = 8;
        params.seed = Rng::derive(seed, 0x7357ull);
        params.search.max_iterations = 120;

        bool all_ok = true;
        double worst = 0.0;
        std::string worst_id = "-";
        bool gen_ok = true;
        for (const std::string& id : MetricId::all_ids()) {
            const MetricId metric = MetricId::parse(id);
            for (int t = 0; t < 3; ++t) {
                VecD x(6);
                for (double& v : x) v = rng.uniform(-1.5, 1.5);
                const ScoreResult res = score_one(metric.needs_model() ? &model : nullptr, &ref,
                                                  model.as_input(x), metric, params);
                if (metric.family == MetricFamily::generated) {
                    const double at_min = naive_measure_at(model, x, res.z_star, metric.measure);
                    if (!isclose(res.score, at_min)) gen_ok = false;
                } else {
                    const double naive = naive_metric_score(model, normal_rows, x, metric, params);
                    if (!isclose(res.score, naive)) all_ok = false;
                    const double err = rel_close(res.score, naive);
                    if (err > worst) {
                        worst = err;
                        worst_id = id;
                    }
                }
            }
        }
        add(out, "metric-vs-naive-transcription", all_ok,
            "max rel err " + fmt(worst) + " (" + worst_id + ")");
        add(out, "generated-score-measure-consistency", gen_ok,
            gen_ok ? "score equals measure at reported z*" : "mismatch");
    }

    { // latent search sanity
        const Objective quad = [](std::span<const double> z, VecD& g) {
            double f = 0.0;
            g.assign(z.size(), 0.0);
            for (std::size_t i = 0; i < z.size(); ++i) {
                const double d = z[i] - 1.5;
                f += d * d;
                g[i] = 2.0 * d;
            }
            return f;
        };
        const SearchResult r1 = minimize(quad, VecD{-3.0, 4.0}, SearchConfig::unbounded());
        const bool quad_ok = std::abs(r1.z[0] - 1.5) < 1e-6 && std::abs(r1.z[1] - 1.5) < 1e-6;

        const Objective rosen = [](std::span<const double> z, VecD& g) {
            const double a = z[0], b = z[1];
            g.assign(2, 0.0);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            return (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a);
        };
        SearchConfig cfg = SearchConfig::unbounded();
        cfg.max_iterations = 500;
        const SearchResult r2 = minimize(rosen, VecD{-1.2, 1.0}, cfg);
        const bool rosen_ok = std::abs(r2.z[0] - 1.0) < 1e-4 && std::abs(r2.z[1] - 1.0) < 1e-4;
        add(out, "latent-search-quadratic", quad_ok, "z* err " + fmt(std::abs(r1.z[0] - 1.5)));
        add(out, "latent-search-rosenbrock", rosen_ok,
            "z* = (" + fmt(r2.z[0]) + ", " + fmt(r2.z[1]) + ") in " +
                std::to_string(r2.iterations) + " iterations");
    }

    return out;
}

} // namespace vnd::selfcheck
