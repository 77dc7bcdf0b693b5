#include "vnd/novelty.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "vnd/errors.hpp"
#include "vnd/parallel.hpp"

namespace vnd {

ReferenceSet build_reference(const VaeModel& model, const FeatureMatrix& normal_data,
                             const SubsampleSpec& subsample, unsigned sections, int workers) {
    if (normal_data.n == 0) throw DataError("build_reference: empty normal data");
    if (normal_data.d != model.input_dim())
        throw ConfigError("build_reference: data dimension does not match model input");

    std::vector<std::size_t> ids(normal_data.n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    if (subsample.count > 0 && subsample.count < normal_data.n) {
        Rng rng(Rng::derive(subsample.seed, 0x5ab5ull));
        for (std::size_t i = 0; i < subsample.count; ++i) {
            const std::size_t j = i + rng.uniform_index(normal_data.n - i);
            std::swap(ids[i], ids[j]);
        }
        ids.resize(subsample.count);
        std::sort(ids.begin(), ids.end());
    } else if (subsample.count > normal_data.n) {
        throw ConfigError("build_reference: subsample count exceeds reference size");
    }

    ReferenceSet ref;
    ref.size = ids.size();
    ref.sections = sections;
    const std::size_t n = ids.size();
    const std::size_t d = model.input_dim();

    if (sections & ReferenceSet::kInput) {
        VecD flat(n * d);
        for (std::size_t i = 0; i < n; ++i) {
            const VecD row = normal_data.row_double(ids[i]);
            std::copy(row.begin(), row.end(), flat.begin() + i * d);
        }
        ref.inputs = VectorIndex(n, d, std::move(flat));
    }

    if (sections & (ReferenceSet::kLatent | ReferenceSet::kRecon)) {
        ref.latent_q.components.resize(n);
        VecD latent_flat(n * model.latent_dim);
        VecD recon_flat;
        if (sections & ReferenceSet::kRecon) {
            ref.recon_dists.resize(n);
            recon_flat.resize(n * d);
        }
        parallel_tasks(workers, n, [&](std::size_t i) {
            const DiagonalGaussian q =
                encode(model, normal_data.row_tensor(ids[i], model.input_shape));
            std::copy(q.mean.begin(), q.mean.end(), latent_flat.begin() + i * model.latent_dim);
            if (sections & ReferenceSet::kRecon) {
                OutputDistribution dist = decode(model, q.mean);
                std::copy(dist.mean.begin(), dist.mean.end(), recon_flat.begin() + i * d);
                ref.recon_dists[i] = std::move(dist);
            }
            ref.latent_q.components[i] = q;
        });
        if (sections & ReferenceSet::kLatent)
            ref.latent_means = VectorIndex(n, model.latent_dim, std::move(latent_flat));
        if (sections & ReferenceSet::kRecon)
            ref.recon_means = VectorIndex(n, d, std::move(recon_flat));
        if (!(sections & ReferenceSet::kLatent)) ref.latent_q.components.clear();
    }
    return ref;
}

namespace {

const std::vector<std::string> kAllIds = {
    "vae-reg",
    "latent-nn-euclid",
    "latent-nn-bhatt",
    "latent-density",
    "recon-det-err",
    "recon-det-lik",
    "recon-enc-stoch-err",
    "recon-enc-stoch-err-min",
    "recon-enc-stoch-lik",
    "recon-enc-stoch-lik-min",
    "recon-dec-stoch-err",
    "recon-dec-stoch-err-min",
    "recon-full-stoch-err",
    "recon-full-stoch-err-min",
    "out-nn-recon",
    "out-nn-bhatt",
    "out-nn-x-vs-recon",
    "out-nn-recon-vs-y",
    "out-density-recon",
    "out-density-x",
    "gen-err",
    "gen-err-bounded",
    "gen-lik",
    "gen-lik-bounded",
    "neg-elbo",
    "neg-elbo-min",
    "baseline-nn",
};

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

void require_sections(const ReferenceSet& ref, unsigned mask, const char* what) {
    if (!ref.has(mask))
        throw ConfigError(std::string(what) + ": reference set was built without a needed section");
    if (ref.size == 0) throw DataError(std::string(what) + ": empty reference set");
}

} // namespace

const std::vector<std::string>& MetricId::all_ids() { return kAllIds; }

MetricId MetricId::parse(const std::string& id) {
    MetricId m;
    auto recon = [&](EncoderMode e, DecoderMode d, Aggregate a) {
        m.family = MetricFamily::reconstruction;
        m.encoder_mode = e;
        m.decoder_mode = d;
        m.aggregate = a;
        return m;
    };
    if (id == "vae-reg") {
        m.family = MetricFamily::vae_reg;
        return m;
    }
    if (id == "latent-nn-euclid" || id == "latent-nn-bhatt") {
        m.family = MetricFamily::latent_nn;
        m.latent_distance =
            id == "latent-nn-euclid" ? LatentDistance::euclid_mean : LatentDistance::bhattacharyya;
        return m;
    }
    if (id == "latent-density") {
        m.family = MetricFamily::latent_density;
        return m;
    }
    if (id == "recon-det-err") return recon(EncoderMode::mean, DecoderMode::mean, Aggregate::mean);
    if (id == "recon-det-lik")
        return recon(EncoderMode::mean, DecoderMode::likelihood, Aggregate::mean);
    if (id == "recon-enc-stoch-err")
        return recon(EncoderMode::sample, DecoderMode::mean, Aggregate::mean);
    if (id == "recon-enc-stoch-err-min")
        return recon(EncoderMode::sample, DecoderMode::mean, Aggregate::min);
    if (id == "recon-enc-stoch-lik")
        return recon(EncoderMode::sample, DecoderMode::likelihood, Aggregate::mean);
    if (id == "recon-enc-stoch-lik-min")
        return recon(EncoderMode::sample, DecoderMode::likelihood, Aggregate::min);
    if (id == "recon-dec-stoch-err")
        return recon(EncoderMode::mean, DecoderMode::sample, Aggregate::mean);
    if (id == "recon-dec-stoch-err-min")
        return recon(EncoderMode::mean, DecoderMode::sample, Aggregate::min);
    if (id == "recon-full-stoch-err")
        return recon(EncoderMode::sample, DecoderMode::sample, Aggregate::mean);
    if (id == "recon-full-stoch-err-min")
        return recon(EncoderMode::sample, DecoderMode::sample, Aggregate::min);
    if (id == "out-nn-recon" || id == "out-nn-bhatt" || id == "out-nn-x-vs-recon" ||
        id == "out-nn-recon-vs-y") {
        m.family = MetricFamily::output_nn;
        m.output_variant = id == "out-nn-recon"      ? OutputVariant::recon_vs_recon
                           : id == "out-nn-bhatt"    ? OutputVariant::bhatt
                           : id == "out-nn-x-vs-recon" ? OutputVariant::x_vs_recon_y
                                                       : OutputVariant::recon_vs_y;
        return m;
    }
    if (id == "out-density-recon" || id == "out-density-x") {
        m.family = MetricFamily::output_density;
        m.density_at = id == "out-density-recon" ? DensityAt::reconstruction : DensityAt::input;
        return m;
    }
    if (id == "gen-err" || id == "gen-err-bounded" || id == "gen-lik" || id == "gen-lik-bounded") {
        m.family = MetricFamily::generated;
        m.measure = (id == "gen-err" || id == "gen-err-bounded") ? SearchMeasure::sq_error
                                                                 : SearchMeasure::neg_log_likelihood;
        m.bounded = id.ends_with("-bounded");
        return m;
    }
    if (id == "neg-elbo" || id == "neg-elbo-min") {
        m.family = MetricFamily::elbo;
        m.elbo_mode = id == "neg-elbo" ? ElboMode::mc_mean : ElboMode::min_over_samples;
        return m;
    }
    if (id == "baseline-nn") {
        m.family = MetricFamily::baseline_nn;
        return m;
    }
    std::string known;
    for (const auto& k : kAllIds) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown metric id '" + id + "'. Valid ids: " + known);
}

std::string MetricId::str() const {
    switch (family) {
    case MetricFamily::vae_reg: return "vae-reg";
    case MetricFamily::latent_nn:
        return latent_distance == LatentDistance::euclid_mean ? "latent-nn-euclid"
                                                              : "latent-nn-bhatt";
    case MetricFamily::latent_density: return "latent-density";
    case MetricFamily::reconstruction: {
        std::string base;
        if (encoder_mode == EncoderMode::mean && decoder_mode == DecoderMode::mean)
            return "recon-det-err";
        if (encoder_mode == EncoderMode::mean && decoder_mode == DecoderMode::likelihood)
            return "recon-det-lik";
        if (encoder_mode == EncoderMode::sample && decoder_mode == DecoderMode::mean)
            base = "recon-enc-stoch-err";
        else if (encoder_mode == EncoderMode::sample && decoder_mode == DecoderMode::likelihood)
            base = "recon-enc-stoch-lik";
        else if (encoder_mode == EncoderMode::mean && decoder_mode == DecoderMode::sample)
            base = "recon-dec-stoch-err";
        else
            base = "recon-full-stoch-err";
        if (aggregate == Aggregate::min) base += "-min";
        return base;
    }
    case MetricFamily::output_nn:
        switch (output_variant) {
        case OutputVariant::recon_vs_recon: return "out-nn-recon";
        case OutputVariant::bhatt: return "out-nn-bhatt";
        case OutputVariant::x_vs_recon_y: return "out-nn-x-vs-recon";
        case OutputVariant::recon_vs_y: return "out-nn-recon-vs-y";
        }
        break;
    case MetricFamily::output_density:
        return density_at == DensityAt::reconstruction ? "out-density-recon" : "out-density-x";
    case MetricFamily::generated: {
        std::string base = measure == SearchMeasure::sq_error ? "gen-err" : "gen-lik";
        if (bounded) base += "-bounded";
        return base;
    }
    case MetricFamily::elbo: return elbo_mode == ElboMode::mc_mean ? "neg-elbo" : "neg-elbo-min";
    case MetricFamily::baseline_nn: return "baseline-nn";
    }
    return "?";
}

bool MetricId::stochastic() const {
    switch (family) {
    case MetricFamily::reconstruction:
        return encoder_mode == EncoderMode::sample || decoder_mode == DecoderMode::sample;
    case MetricFamily::elbo: return true;
    default: return false;
    }
}

unsigned MetricId::required_sections() const {
    switch (family) {
    case MetricFamily::latent_nn:
    case MetricFamily::latent_density: return ReferenceSet::kLatent;
    case MetricFamily::output_nn:
        return output_variant == OutputVariant::recon_vs_y
                   ? (ReferenceSet::kInput | ReferenceSet::kRecon)
                   : ReferenceSet::kRecon;
    case MetricFamily::output_density: return ReferenceSet::kRecon;
    case MetricFamily::baseline_nn: return ReferenceSet::kInput;
    default: return 0;
    }
}

double vae_reg_score(const VaeModel& m, const Tensor& x) {
    return kl_to_standard_normal(encode(m, x));
}

double latent_nn_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                       LatentDistance distance, int* argmin) {
    require_sections(ref, ReferenceSet::kLatent, "latent_nn_score");
    const DiagonalGaussian q = encode(m, x);
    if (distance == LatentDistance::euclid_mean) {
        const NearestResult r = ref.latent_means.nearest_sq_dist(q.mean);
        if (argmin) *argmin = static_cast<int>(r.id);
        return r.sq_dist;
    }
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_id = 0;
    const auto& comps = ref.latent_gaussians();
    for (std::size_t i = 0; i < comps.size(); ++i) {
        const double d = bhattacharyya(q, comps[i]);
        if (d < best) {
            best = d;
            best_id = i;
        }
    }
    if (argmin) *argmin = static_cast<int>(best_id);
    return best;
}

double latent_density_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                            bool log_space) {
    require_sections(ref, ReferenceSet::kLatent, "latent_density_score");
    const DiagonalGaussian q = encode(m, x);
    const double ld = mixture_log_density(ref.latent_q, q.mean);
    return log_space ? -ld : -std::exp(ld);
}

double reconstruction_score(const VaeModel& m, const Tensor& x, EncoderMode enc_mode,
                            DecoderMode dec_mode, Aggregate aggregate, int n_samples, Rng& rng) {
    const DiagonalGaussian q = encode(m, x);
    const VecD xflat(x.data.begin(), x.data.end());
    const bool deterministic = enc_mode == EncoderMode::mean && dec_mode != DecoderMode::sample;
    const int n = deterministic ? 1 : n_samples;
    if (n < 1) throw ConfigError("reconstruction_score: n_samples must be >= 1");

    double acc = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < n; ++s) {
        const VecD z = enc_mode == EncoderMode::sample ? sample(q, rng) : q.mean;
        const OutputDistribution dist = decode(m, z);
        double value;
        switch (dec_mode) {
        case DecoderMode::mean: value = sq_dist(xflat, dist.mean); break;
        case DecoderMode::likelihood: value = -output_log_density(dist, xflat); break;
        case DecoderMode::sample: value = sq_dist(xflat, output_sample(dist, rng)); break;
        default: throw ConfigError("reconstruction_score: invalid decoder mode");
        }
        acc += value;
        best = std::min(best, value);
    }
    return aggregate == Aggregate::min ? best : acc / n;
}

double output_nn_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                       OutputVariant variant, int* argmin) {
    const VecD xflat(x.data.begin(), x.data.end());
    if (variant == OutputVariant::x_vs_recon_y) {
        require_sections(ref, ReferenceSet::kRecon, "output_nn_score");
        const NearestResult r = ref.recon_means.nearest_sq_dist(xflat);
        if (argmin) *argmin = static_cast<int>(r.id);
        return r.sq_dist;
    }

    const DiagonalGaussian q = encode(m, x);
    const OutputDistribution recon = decode(m, q.mean);
    switch (variant) {
    case OutputVariant::recon_vs_recon: {
        require_sections(ref, ReferenceSet::kRecon, "output_nn_score");
        const NearestResult r = ref.recon_means.nearest_sq_dist(recon.mean);
        if (argmin) *argmin = static_cast<int>(r.id);
        return r.sq_dist;
    }
    case OutputVariant::recon_vs_y: {
        require_sections(ref, ReferenceSet::kInput, "output_nn_score");
        const NearestResult r = ref.inputs.nearest_sq_dist(recon.mean);
        if (argmin) *argmin = static_cast<int>(r.id);
        return r.sq_dist;
    }
    case OutputVariant::bhatt: {
        require_sections(ref, ReferenceSet::kRecon, "output_nn_score");
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_id = 0;
        for (std::size_t i = 0; i < ref.recon_dists.size(); ++i) {
            const double d = output_bhattacharyya(recon, ref.recon_dists[i]);
            if (d < best) {
                best = d;
                best_id = i;
            }
        }
        if (argmin) *argmin = static_cast<int>(best_id);
        return best;
    }
    default: throw ConfigError("output_nn_score: invalid variant");
    }
}

double output_mixture_log_density(const std::vector<OutputDistribution>& dists,
                                  std::span<const double> x) {
    if (dists.empty()) throw DataError("output_mixture_log_density: empty mixture");
    double mx = -std::numeric_limits<double>::infinity();
    VecD lds(dists.size());
    for (std::size_t i = 0; i < dists.size(); ++i) {
        lds[i] = output_log_density(dists[i], x);
        mx = std::max(mx, lds[i]);
    }
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double ld : lds) acc += std::exp(ld - mx);
    return mx + std::log(acc) - std::log(static_cast<double>(dists.size()));
}

double output_density_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                            DensityAt at, bool log_space) {
    require_sections(ref, ReferenceSet::kRecon, "output_density_score");
    const VecD xflat(x.data.begin(), x.data.end());
    double ld;
    if (at == DensityAt::input) {
        ld = output_mixture_log_density(ref.recon_dists, xflat);
    } else {
        const OutputDistribution recon = decode(m, encode(m, x).mean);
        ld = output_mixture_log_density(ref.recon_dists, recon.mean);
    }
    return log_space ? -ld : -std::exp(ld);
}

ScoreResult generated_score(const VaeModel& m, const Tensor& x, SearchMeasure measure,
                            bool bounded, const ScoreParams& params) {
    const std::size_t d = m.input_dim();
    const VecD xflat(x.data.begin(), x.data.end());
    constexpr double kLog2Pi = 1.8378770664093454836;

    Objective objective = [&](std::span<const double> z, VecD& grad) {
        const Tensor zt(Shape{m.latent_dim}, VecD(z.begin(), z.end()));
        const ForwardTrace trace = forward_trace(m.decoder, m.dec_params, zt);
        const Tensor& out = trace.output();
        Tensor gout(out.shape);
        double value = 0.0;
        if (measure == SearchMeasure::sq_error) {
            for (std::size_t j = 0; j < d; ++j) {
                const double mean_j = out[j];
                const double diff = xflat[j] - mean_j;
                value += diff * diff;
                gout[j] = -2.0 * diff;
            }
        } else if (m.family == DecoderFamily::gaussian) {
            for (std::size_t j = 0; j < d; ++j) {
                const double mean_j = out[j];
                const double raw = out[d + j];
                const double lv = std::clamp(raw, -kLogVarClamp, kLogVarClamp);
                const double e = std::exp(-lv);
                const double diff = xflat[j] - mean_j;
                value += 0.5 * (kLog2Pi + lv) + 0.5 * diff * diff * e;
                gout[j] = -diff * e;
                gout[d + j] = std::abs(raw) >= kLogVarClamp ? 0.0 : 0.5 - 0.5 * diff * diff * e;
            }
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                const double p = std::clamp(out[j], 1e-7, 1.0 - 1e-7);
                value -= xflat[j] * std::log(p) + (1.0 - xflat[j]) * std::log1p(-p);
                gout[j] = (p - xflat[j]) / (p * (1.0 - p));
            }
        }
        ParameterStore scratch = zeros_like(m.dec_params);
        const Tensor gz = backward_accumulate(m.decoder, m.dec_params, trace, gout, scratch);
        grad.assign(gz.data.begin(), gz.data.end());
        return value;
    };

    SearchConfig cfg = params.search;
    if (bounded && !cfg.bounded()) {
        cfg.lower.assign(m.latent_dim, params.bound_lo);
        cfg.upper.assign(m.latent_dim, params.bound_hi);
    }
    cfg.seed = Rng::derive(params.seed, 0x6e17ull);

    const SearchResult res = minimize(objective, encode(m, x).mean, cfg);
    ScoreResult out;
    out.score = res.value;
    out.iterations = res.iterations;
    out.converged = res.converged;
    out.z_star = res.z;
    return out;
}

double elbo_score(const VaeModel& m, const Tensor& x, ElboMode mode, int n_samples, Rng& rng) {
    if (n_samples < 1) throw ConfigError("elbo_score: n_samples must be >= 1");
    const DiagonalGaussian q = encode(m, x);
    const double kl = kl_to_standard_normal(q);
    const VecD xflat(x.data.begin(), x.data.end());
    double acc = 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (int s = 0; s < n_samples; ++s) {
        const VecD z = sample(q, rng);
        const double neg_logp = -output_log_density(decode(m, z), xflat);
        acc += neg_logp;
        best = std::min(best, neg_logp);
    }
    return (mode == ElboMode::mc_mean ? acc / n_samples : best) + kl;
}

double baseline_nn_score(const ReferenceSet& ref, const Tensor& x, int* argmin) {
    require_sections(ref, ReferenceSet::kInput, "baseline_nn_score");
    const VecD xflat(x.data.begin(), x.data.end());
    const NearestResult r = ref.inputs.nearest_sq_dist(xflat);
    if (argmin) *argmin = static_cast<int>(r.id);
    return r.sq_dist;
}

ScoreResult score_one(const VaeModel* model, const ReferenceSet* ref, const Tensor& x,
                      const MetricId& metric, const ScoreParams& params) {
    if (metric.needs_model() && !model)
        throw ConfigError("metric " + metric.str() + " needs a trained model");
    if (metric.required_sections() != 0 && !ref)
        throw ConfigError("metric " + metric.str() + " needs a reference set");

    ScoreResult res;
    Rng rng(Rng::derive(params.seed, 0x5c03ull));
    switch (metric.family) {
    case MetricFamily::vae_reg:
        res.score = vae_reg_score(*model, x);
        break;
    case MetricFamily::latent_nn:
        res.score = latent_nn_score(*model, *ref, x, metric.latent_distance, &res.argmin_id);
        break;
    case MetricFamily::latent_density:
        res.score = latent_density_score(*model, *ref, x, params.log_density);
        break;
    case MetricFamily::reconstruction:
        res.score = reconstruction_score(*model, x, metric.encoder_mode, metric.decoder_mode,
                                         metric.aggregate, params.n_samples, rng);
        res.samples_used = metric.stochastic() ? params.n_samples : 1;
        break;
    case MetricFamily::output_nn:
        res.score = output_nn_score(*model, *ref, x, metric.output_variant, &res.argmin_id);
        break;
    case MetricFamily::output_density:
        res.score = output_density_score(*model, *ref, x, metric.density_at, params.log_density);
        break;
    case MetricFamily::generated:
        res = generated_score(*model, x, metric.measure, metric.bounded, params);
        break;
    case MetricFamily::elbo:
        res.score = elbo_score(*model, x, metric.elbo_mode, params.n_samples, rng);
        res.samples_used = params.n_samples;
        break;
    case MetricFamily::baseline_nn:
        res.score = baseline_nn_score(*ref, x, &res.argmin_id);
        break;
    }
    return res;
}

std::vector<ScoreResult> score_batch(const VaeModel* model, const ReferenceSet* ref,
                                     const FeatureMatrix& test, const MetricId& metric,
                                     const ScoreParams& params, int workers) {
    if (model && test.d != model->input_dim())
        throw ConfigError("score_batch: test data dimension does not match model input");
    std::vector<ScoreResult> out(test.n);
    const Shape shape = model ? model->input_shape : Shape{test.d};
    parallel_tasks(workers, test.n, [&](std::size_t i) {
        ScoreParams p = params;
        p.seed = Rng::derive(params.seed, i);
        out[i] = score_one(model, ref, test.row_tensor(i, shape), metric, p);
    });
    return out;
}

} // namespace vnd
