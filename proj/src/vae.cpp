#include "vnd/vae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "vnd/adam.hpp"
#include "vnd/errors.hpp"
#include "vnd/parallel.hpp"

namespace vnd {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kBernoulliEps = 1e-7;
// fixed task count for batch gradient accumulation; partial sums are reduced
// in task order, so results do not depend on the worker count
constexpr std::size_t kGradChunks = 8;
} // namespace

const char* decoder_family_name(DecoderFamily f) {
    return f == DecoderFamily::gaussian ? "gaussian" : "bernoulli";
}

DecoderFamily parse_decoder_family(const std::string& s) {
    if (s == "gaussian") return DecoderFamily::gaussian;
    if (s == "bernoulli") return DecoderFamily::bernoulli;
    throw ConfigError("unknown decoder family: " + s + " (expected gaussian or bernoulli)");
}

namespace {

std::vector<std::size_t> parse_width_string(const std::string& s) {
    std::vector<std::size_t> widths;
    std::string cur;
    for (char c : s + "-") {
        if (c == '-') {
            if (cur.empty()) throw ConfigError("bad width string: " + s);
            widths.push_back(std::stoul(cur));
            cur.clear();
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            cur += c;
        } else {
            throw ConfigError("bad width string: " + s);
        }
    }
    return widths;
}

ArchSpec dense_arch_from_widths(const std::string& name, const std::vector<std::size_t>& w,
                                DecoderFamily family) {
    if (w.size() < 3 || w.front() != w.back())
        throw ConfigError("dense architecture string must start and end with the input width");
    const auto latent_it = std::min_element(w.begin(), w.end());
    const std::size_t mid = static_cast<std::size_t>(latent_it - w.begin());
    if (mid == 0 || mid + 1 == w.size())
        throw ConfigError("dense architecture string has no interior bottleneck");

    ArchSpec a;
    a.name = name;
    a.input_shape = {w.front()};
    a.latent_dim = w[mid];
    for (std::size_t i = 1; i < mid; ++i) {
        a.encoder.push_back(LayerSpec::dense(w[i]));
        a.encoder.push_back(LayerSpec::activation(Activation::relu));
    }
    a.encoder.push_back(LayerSpec::dense(2 * a.latent_dim)); // mean and log-variance head
    for (std::size_t i = mid + 1; i + 1 < w.size(); ++i) {
        a.decoder.push_back(LayerSpec::dense(w[i]));
        a.decoder.push_back(LayerSpec::activation(Activation::relu));
    }
    if (family == DecoderFamily::gaussian) {
        a.decoder.push_back(LayerSpec::dense(2 * w.back()));
    } else {
        a.decoder.push_back(LayerSpec::dense(w.back()));
        a.decoder.push_back(LayerSpec::activation(Activation::sigmoid));
    }
    return a;
}

ArchSpec mnist_conv_arch(std::size_t latent, DecoderFamily family) {
    ArchSpec a;
    a.name = "mnist_conv_z" + std::to_string(latent);
    a.input_shape = {1, 28, 28};
    a.latent_dim = latent;
    a.encoder = {
        LayerSpec::conv2d(16, 3, 1),
        LayerSpec::activation(Activation::relu),
        LayerSpec::maxpool2d(2, 2),
        LayerSpec::conv2d(32, 3, 1),
        LayerSpec::activation(Activation::relu),
        LayerSpec::dense(2 * latent),
    };
    a.decoder = {
        LayerSpec::dense(14 * 14, {1, 14, 14}),
        LayerSpec::activation(Activation::relu),
        LayerSpec::conv2d(32, 3, 1),
        LayerSpec::activation(Activation::relu),
        LayerSpec::transposed_conv2d(16, 2, 2),
        LayerSpec::activation(Activation::relu),
    };
    if (family == DecoderFamily::gaussian) {
        a.decoder.push_back(LayerSpec::conv2d(2, 3, 1));
    } else {
        a.decoder.push_back(LayerSpec::conv2d(1, 3, 1));
        a.decoder.push_back(LayerSpec::activation(Activation::sigmoid));
    }
    return a;
}

} // namespace

std::vector<std::string> builtin_architecture_names() {
    return {"dense46_z8",    "dense46_z16",   "dense46_z24", "mnist_conv",
            "mnist_conv_z24", "mnist_conv_z48", "mnist_conv_z64"};
}

ArchSpec builtin_architecture(const std::string& name, DecoderFamily family) {
    if (name == "dense46_z8")
        return dense_arch_from_widths(name, parse_width_string("46-64-32-16-8-16-32-64-46"),
                                      family);
    if (name == "dense46_z16")
        return dense_arch_from_widths(name, parse_width_string("46-128-64-32-16-32-64-128-46"),
                                      family);
    if (name == "dense46_z24")
        return dense_arch_from_widths(name, parse_width_string("46-128-64-48-24-48-64-128-46"),
                                      family);
    if (name == "mnist_conv" || name == "mnist_conv_z64") return mnist_conv_arch(64, family);
    if (name == "mnist_conv_z48") return mnist_conv_arch(48, family);
    if (name == "mnist_conv_z24") return mnist_conv_arch(24, family);
    if (!name.empty() && std::isdigit(static_cast<unsigned char>(name.front())) &&
        name.find('-') != std::string::npos)
        return dense_arch_from_widths(name, parse_width_string(name), family);

    std::string known;
    for (const auto& n : builtin_architecture_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown architecture '" + name + "' (catalog: " + known +
                      "; width strings like 46-64-8-64-46 are also accepted)");
}

Tensor VaeModel::as_input(std::span<const double> x) const {
    if (x.size() != input_dim())
        throw ConfigError("input has " + std::to_string(x.size()) + " features, model expects " +
                          std::to_string(input_dim()));
    return Tensor(input_shape, VecD(x.begin(), x.end()));
}

VaeModel make_vae(const ArchSpec& arch, DecoderFamily family, std::uint64_t seed) {
    VaeModel m;
    m.arch_name = arch.name.empty() ? "custom" : arch.name;
    m.encoder = arch.encoder;
    m.decoder = arch.decoder;
    m.input_shape = arch.input_shape;
    m.latent_dim = arch.latent_dim;
    m.family = family;
    m.init_seed = seed;

    const auto enc_shapes = infer_shapes(m.encoder, m.input_shape);
    if (shape_numel(enc_shapes.back()) != 2 * m.latent_dim)
        throw ConfigError("encoder head provides " + std::to_string(shape_numel(enc_shapes.back())) +
                          " values, expected 2*latent_dim = " + std::to_string(2 * m.latent_dim));
    const auto dec_shapes = infer_shapes(m.decoder, Shape{m.latent_dim});
    const std::size_t want =
        (family == DecoderFamily::gaussian ? 2 : 1) * shape_numel(m.input_shape);
    if (shape_numel(dec_shapes.back()) != want)
        throw ConfigError("decoder head provides " + std::to_string(shape_numel(dec_shapes.back())) +
                          " values, expected " + std::to_string(want) + " for a " +
                          decoder_family_name(family) + " decoder");

    Rng enc_rng(Rng::derive(seed, 0xe11c0dell));
    Rng dec_rng(Rng::derive(seed, 0xdec0dell));
    m.enc_params = init_params(m.encoder, m.input_shape, enc_rng);
    m.dec_params = init_params(m.decoder, Shape{m.latent_dim}, dec_rng);
    return m;
}

VaeModel make_vae(const std::string& arch_name, DecoderFamily family, std::uint64_t seed) {
    return make_vae(builtin_architecture(arch_name, family), family, seed);
}

namespace {

double clamp_log_var(double v) { return std::clamp(v, -kLogVarClamp, kLogVarClamp); }
bool log_var_clamped(double v) { return v <= -kLogVarClamp || v >= kLogVarClamp; }

} // namespace

DiagonalGaussian encode(const VaeModel& m, const Tensor& x) {
    if (!same_shape(x.shape, m.input_shape) && x.numel() != m.input_dim())
        throw ConfigError("encode: input shape " + shape_str(x.shape) + " does not match model " +
                          shape_str(m.input_shape));
    const Tensor in = same_shape(x.shape, m.input_shape) ? x : Tensor(m.input_shape, x.data);
    const Tensor out = forward(m.encoder, m.enc_params, in);
    const std::size_t z = m.latent_dim;
    VecD mu(out.data.begin(), out.data.begin() + z);
    VecD lv(z);
    for (std::size_t j = 0; j < z; ++j) lv[j] = clamp_log_var(out[z + j]);
    return DiagonalGaussian(std::move(mu), std::move(lv));
}

DiagonalGaussian OutputDistribution::as_gaussian() const {
    if (family != DecoderFamily::gaussian)
        throw ConfigError("output distribution is not Gaussian");
    return DiagonalGaussian(mean, log_var);
}

OutputDistribution decode(const VaeModel& m, std::span<const double> z) {
    if (z.size() != m.latent_dim)
        throw ConfigError("decode: latent vector has dimension " + std::to_string(z.size()) +
                          ", model expects " + std::to_string(m.latent_dim));
    const Tensor out =
        forward(m.decoder, m.dec_params, Tensor(Shape{m.latent_dim}, VecD(z.begin(), z.end())));
    OutputDistribution dist;
    dist.family = m.family;
    const std::size_t d = m.input_dim();
    if (m.family == DecoderFamily::gaussian) {
        dist.mean.assign(out.data.begin(), out.data.begin() + d);
        dist.log_var.resize(d);
        for (std::size_t j = 0; j < d; ++j) dist.log_var[j] = clamp_log_var(out[d + j]);
    } else {
        dist.mean.assign(out.data.begin(), out.data.end());
    }
    return dist;
}

double output_log_density(const OutputDistribution& dist, std::span<const double> x) {
    if (x.size() != dist.dim())
        throw ConfigError("output_log_density: dimension mismatch");
    if (dist.family == DecoderFamily::gaussian) {
        double acc = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double lv = dist.log_var[j];
            const double diff = x[j] - dist.mean[j];
            acc += -0.5 * (kLog2Pi + lv) - 0.5 * diff * diff * std::exp(-lv);
        }
        return acc;
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double p = std::clamp(dist.mean[j], kBernoulliEps, 1.0 - kBernoulliEps);
        acc += x[j] * std::log(p) + (1.0 - x[j]) * std::log1p(-p);
    }
    return acc;
}

double output_bhattacharyya(const OutputDistribution& a, const OutputDistribution& b) {
    if (a.family != b.family || a.dim() != b.dim())
        throw ConfigError("output_bhattacharyya: mismatched distributions");
    if (a.family == DecoderFamily::gaussian)
        return bhattacharyya(a.as_gaussian(), b.as_gaussian());
    double acc = 0.0;
    for (std::size_t j = 0; j < a.dim(); ++j) {
        const double p = std::clamp(a.mean[j], kBernoulliEps, 1.0 - kBernoulliEps);
        const double q = std::clamp(b.mean[j], kBernoulliEps, 1.0 - kBernoulliEps);
        acc += std::log(std::sqrt(p * q) + std::sqrt((1.0 - p) * (1.0 - q)));
    }
    return -acc;
}

VecD output_sample(const OutputDistribution& dist, Rng& rng) {
    VecD out(dist.dim());
    if (dist.family == DecoderFamily::gaussian) {
        for (std::size_t j = 0; j < out.size(); ++j)
            out[j] = dist.mean[j] + std::exp(0.5 * dist.log_var[j]) * rng.normal();
    } else {
        for (std::size_t j = 0; j < out.size(); ++j)
            out[j] = rng.uniform() < dist.mean[j] ? 1.0 : 0.0;
    }
    return out;
}

ElboTerms elbo_terms(const VaeModel& m, const Tensor& x, int n_samples, Rng& rng) {
    if (n_samples < 1) throw ConfigError("elbo_terms: n_samples must be >= 1");
    const DiagonalGaussian q = encode(m, x);
    ElboTerms t;
    t.kl = kl_to_standard_normal(q);
    const VecD xflat(x.data.begin(), x.data.end());
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        const VecD z = sample(q, rng);
        acc += output_log_density(decode(m, z), xflat);
    }
    t.recon_log_lik = acc / n_samples;
    return t;
}

namespace {

// Gradient of the per-sample negative ELBO with the given frozen noise draws,
// accumulated into enc_acc / dec_acc. Returns the loss value.
double add_sample_gradients(const VaeModel& m, const Tensor& x, const std::vector<VecD>& noise,
                            ParameterStore& enc_acc, ParameterStore& dec_acc) {
    const std::size_t z_dim = m.latent_dim;
    const std::size_t d = m.input_dim();
    const ForwardTrace enc_trace = forward_trace(m.encoder, m.enc_params, x);
    const Tensor& head = enc_trace.output();

    VecD mu(z_dim), lv(z_dim);
    std::vector<unsigned char> lv_clamped(z_dim);
    for (std::size_t j = 0; j < z_dim; ++j) {
        mu[j] = head[j];
        lv_clamped[j] = log_var_clamped(head[z_dim + j]);
        lv[j] = clamp_log_var(head[z_dim + j]);
    }

    double kl = 0.0;
    VecD g_mu(z_dim), g_lv(z_dim, 0.0);
    for (std::size_t j = 0; j < z_dim; ++j) {
        const double ev = std::exp(lv[j]);
        kl += ev + mu[j] * mu[j] - 1.0 - lv[j];
        g_mu[j] = mu[j];
        if (!lv_clamped[j]) g_lv[j] = 0.5 * (ev - 1.0);
    }
    kl *= 0.5;

    const double inv_s = 1.0 / static_cast<double>(noise.size());
    double recon = 0.0;
    Tensor z_t(Shape{z_dim});
    const std::vector<Shape> dec_shapes = infer_shapes(m.decoder, Shape{z_dim});
    for (const VecD& eps : noise) {
        for (std::size_t j = 0; j < z_dim; ++j)
            z_t[j] = mu[j] + std::exp(0.5 * lv[j]) * eps[j];
        const ForwardTrace dec_trace = forward_trace(m.decoder, m.dec_params, z_t);
        const Tensor& out = dec_trace.output();
        Tensor gout(out.shape);
        double logp = 0.0;
        if (m.family == DecoderFamily::gaussian) {
            for (std::size_t j = 0; j < d; ++j) {
                const double mj = out[j];
                const double raw = out[d + j];
                const double dlv = clamp_log_var(raw);
                const double e = std::exp(-dlv);
                const double diff = x[j] - mj;
                logp += -0.5 * (kLog2Pi + dlv) - 0.5 * diff * diff * e;
                gout[j] = -diff * e * inv_s;
                gout[d + j] = log_var_clamped(raw) ? 0.0 : (0.5 - 0.5 * diff * diff * e) * inv_s;
            }
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                const double p = std::clamp(out[j], kBernoulliEps, 1.0 - kBernoulliEps);
                logp += x[j] * std::log(p) + (1.0 - x[j]) * std::log1p(-p);
                gout[j] = (p - x[j]) / (p * (1.0 - p)) * inv_s;
            }
        }
        recon += logp * inv_s;
        const Tensor gz = backward_accumulate(m.decoder, m.dec_params, dec_trace, gout, dec_acc);
        for (std::size_t j = 0; j < z_dim; ++j) {
            g_mu[j] += gz[j];
            if (!lv_clamped[j]) g_lv[j] += gz[j] * eps[j] * 0.5 * std::exp(0.5 * lv[j]);
        }
    }

    Tensor ghead(head.shape);
    for (std::size_t j = 0; j < z_dim; ++j) {
        ghead[j] = g_mu[j];
        ghead[z_dim + j] = g_lv[j];
    }
    backward_accumulate(m.encoder, m.enc_params, enc_trace, ghead, enc_acc);
    return -recon + kl;
}

std::vector<VecD> draw_noise(std::uint64_t stream, std::size_t n_samples, std::size_t dim) {
    Rng rng(stream);
    std::vector<VecD> noise(n_samples, VecD(dim));
    for (auto& v : noise)
        for (double& e : v) e = rng.normal();
    return noise;
}

} // namespace

ElboGrads elbo_gradients(const VaeModel& m, const Tensor& x, const std::vector<VecD>& noise_draws) {
    ElboGrads g;
    g.enc = zeros_like(m.enc_params);
    g.dec = zeros_like(m.dec_params);
    g.loss = add_sample_gradients(m, x, noise_draws, g.enc, g.dec);
    return g;
}

namespace {

struct ChunkAccum {
    ParameterStore enc, dec;
    double loss = 0.0;
};

// per-epoch, per-sample noise stream; depends on the dataset index only, so
// shuffling and worker scheduling cannot change the draws
std::uint64_t noise_stream(std::uint64_t seed, int epoch, std::size_t dataset_index) {
    return Rng::derive(Rng::derive(seed, 0xb0153ull + static_cast<std::uint64_t>(epoch)),
                       dataset_index);
}

std::uint64_t val_noise_stream(std::uint64_t seed, std::size_t index) {
    return Rng::derive(Rng::derive(seed, 0x7a11dull), index);
}

double mean_validation_loss(const VaeModel& m, const FeatureMatrix& val, int mc_samples,
                            std::uint64_t seed, int workers) {
    const std::size_t n_chunks = std::min<std::size_t>(kGradChunks, val.n);
    VecD chunk_sums(n_chunks, 0.0);
    parallel_tasks(workers, n_chunks, [&](std::size_t c) {
        const std::size_t lo = val.n * c / n_chunks;
        const std::size_t hi = val.n * (c + 1) / n_chunks;
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng(val_noise_stream(seed, i));
            const ElboTerms t =
                elbo_terms(m, val.row_tensor(i, m.input_shape), mc_samples, rng);
            acc += t.negative_elbo();
        }
        chunk_sums[c] = acc;
    });
    double total = 0.0;
    for (double v : chunk_sums) total += v; // fixed order
    return total / static_cast<double>(val.n);
}

} // namespace

TrainLog train(VaeModel& m, const FeatureMatrix& train_data, const FeatureMatrix& val_data,
               const TrainConfig& cfg) {
    if (train_data.n == 0) throw DataError("train: empty training set");
    if (val_data.n == 0) throw DataError("train: empty validation set (needed for early stopping)");
    if (train_data.d != m.input_dim() || val_data.d != m.input_dim())
        throw ConfigError("train: data has " + std::to_string(train_data.d) +
                          " features, model expects " + std::to_string(m.input_dim()));
    if (cfg.batch_size < 1 || cfg.patience < 1 || cfg.max_epochs < 1 || cfg.mc_samples < 1)
        throw ConfigError("train: batch_size, patience, max_epochs and mc_samples must be >= 1");

    AdamConfig adam_cfg{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
    AdamState enc_adam = AdamState::for_params(m.enc_params);
    AdamState dec_adam = AdamState::for_params(m.dec_params);

    const std::size_t n = train_data.n;
    const std::size_t n_chunks = std::min<std::size_t>(kGradChunks, static_cast<std::size_t>(cfg.batch_size));
    std::vector<ChunkAccum> chunks(n_chunks);
    for (auto& c : chunks) {
        c.enc = zeros_like(m.enc_params);
        c.dec = zeros_like(m.dec_params);
    }
    ParameterStore enc_batch = zeros_like(m.enc_params);
    ParameterStore dec_batch = zeros_like(m.dec_params);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainLog log;
    double best_val = std::numeric_limits<double>::infinity();
    ParameterStore best_enc = m.enc_params, best_dec = m.dec_params;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(cfg.seed, 0x54u + static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const std::size_t j = i + shuffle_rng.uniform_index(n - i);
            std::swap(order[i], order[j]);
        }

        double epoch_loss = 0.0;
        int step = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
            const std::size_t b = std::min<std::size_t>(cfg.batch_size, n - start);
            const std::size_t active = std::min(n_chunks, b);
            parallel_tasks(cfg.workers, active, [&](std::size_t c) {
                chunks[c].enc.fill(0.0);
                chunks[c].dec.fill(0.0);
                chunks[c].loss = 0.0;
                const std::size_t lo = b * c / active;
                const std::size_t hi = b * (c + 1) / active;
                for (std::size_t k = lo; k < hi; ++k) {
                    const std::size_t idx = order[start + k];
                    const auto noise =
                        draw_noise(noise_stream(cfg.seed, epoch, idx),
                                   static_cast<std::size_t>(cfg.mc_samples), m.latent_dim);
                    chunks[c].loss += add_sample_gradients(
                        m, train_data.row_tensor(idx, m.input_shape), noise, chunks[c].enc,
                        chunks[c].dec);
                }
            });

            enc_batch.fill(0.0);
            dec_batch.fill(0.0);
            double batch_loss = 0.0;
            for (std::size_t c = 0; c < active; ++c) { // fixed reduction order
                accumulate(enc_batch, chunks[c].enc);
                accumulate(dec_batch, chunks[c].dec);
                batch_loss += chunks[c].loss;
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
            const double scale = 1.0 / static_cast<double>(b);
            enc_batch.add_scaled(enc_batch, scale - 1.0); // enc_batch *= scale
            dec_batch.add_scaled(dec_batch, scale - 1.0);
            adam_step(m.enc_params, enc_batch, enc_adam, adam_cfg);
            adam_step(m.dec_params, dec_batch, dec_adam, adam_cfg);
            epoch_loss += batch_loss;
        }

        log.train_loss.push_back(epoch_loss / static_cast<double>(n));
        const double val =
            mean_validation_loss(m, val_data, cfg.mc_samples, cfg.seed, cfg.workers);
        log.val_loss.push_back(val);
        if (!std::isfinite(val))
            throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));

        if (val < best_val) {
            best_val = val;
            log.best_epoch = epoch;
            best_enc = m.enc_params;
            best_dec = m.dec_params;
            since_best = 0;
        } else {
            ++since_best;
        }
        log.epochs_run = epoch + 1;
        if (since_best >= cfg.patience) break;
    }

    m.enc_params = std::move(best_enc);
    m.dec_params = std::move(best_dec);
    return log;
}

TrainLog train(VaeModel& m, const FeatureMatrix& data, const TrainConfig& cfg) {
    SplitSpec spec;
    spec.train_fraction = 1.0 - cfg.val_fraction;
    spec.val_fraction = cfg.val_fraction;
    spec.seed = cfg.seed;
    const Split parts = split(data, spec);
    return train(m, parts.train, parts.validation, cfg);
}

} // namespace vnd
