#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vnd/data_io.hpp"
#include "vnd/gaussian.hpp"
#include "vnd/layers.hpp"
#include "vnd/rng.hpp"

namespace vnd {

enum class DecoderFamily { gaussian, bernoulli };

const char* decoder_family_name(DecoderFamily f);
DecoderFamily parse_decoder_family(const std::string& s);

/// Network output heads are clamped to this log-variance range before a
/// DiagonalGaussian is formed.
constexpr double kLogVarClamp = 20.0;

struct ArchSpec {
    std::string name;
    std::vector<LayerSpec> encoder;
    std::vector<LayerSpec> decoder;
    Shape input_shape;
    std::size_t latent_dim = 0;
};

/// Catalog of the architectures used in the experiments:
///   dense46_z8   46-64-32-16-8-16-32-64-46
///   dense46_z16  46-128-64-32-16-32-64-128-46
///   dense46_z24  46-128-64-48-24-48-64-128-46
///   mnist_conv_z24 / _z48 / _z64 (alias mnist_conv)
/// Any "w0-w1-...-w0" width string is also accepted and built as a mirrored
/// dense autoencoder with the minimum width as the latent layer.
ArchSpec builtin_architecture(const std::string& name,
                              DecoderFamily family = DecoderFamily::gaussian);
std::vector<std::string> builtin_architecture_names();

struct VaeModel {
    std::string arch_name = "custom";
    std::vector<LayerSpec> encoder;
    std::vector<LayerSpec> decoder;
    ParameterStore enc_params;
    ParameterStore dec_params;
    Shape input_shape;
    std::size_t latent_dim = 0;
    DecoderFamily family = DecoderFamily::gaussian;
    std::uint64_t init_seed = 0;
    PreprocessStats stats; // preprocessing constants travel with the model

    std::size_t input_dim() const { return shape_numel(input_shape); }
    Tensor as_input(std::span<const double> x) const;
};

VaeModel make_vae(const ArchSpec& arch, DecoderFamily family, std::uint64_t seed);
VaeModel make_vae(const std::string& arch_name, DecoderFamily family, std::uint64_t seed);

/// q(z|x): encoder forward, head split into mean and clamped log-variance.
DiagonalGaussian encode(const VaeModel& m, const Tensor& x);

/// p(x|z) parameters. For the Gaussian family mean and log-variance; for the
/// Bernoulli family `mean` holds per-feature probabilities.
struct OutputDistribution {
    DecoderFamily family = DecoderFamily::gaussian;
    VecD mean;
    VecD log_var;

    std::size_t dim() const { return mean.size(); }
    DiagonalGaussian as_gaussian() const;
};

OutputDistribution decode(const VaeModel& m, std::span<const double> z);

double output_log_density(const OutputDistribution& d, std::span<const double> x);
double output_bhattacharyya(const OutputDistribution& a, const OutputDistribution& b);
VecD output_sample(const OutputDistribution& d, Rng& rng);

struct ElboTerms {
    double recon_log_lik = 0.0; // E_q log p(x|z), Monte Carlo
    double kl = 0.0;            // KL(q(z|x) || N(0,I)), closed form
    double negative_elbo() const { return -recon_log_lik + kl; }
};

ElboTerms elbo_terms(const VaeModel& m, const Tensor& x, int n_samples, Rng& rng);

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32768; // the dense q-space default; MNIST runs use 64
    int max_epochs = 100;
    int patience = 10;
    int mc_samples = 1;
    double val_fraction = 0.2; // used when no explicit validation set is given
    std::uint64_t seed = 0;
    int workers = 1;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
};

struct TrainLog {
    std::vector<double> train_loss; // mean per-sample negative ELBO
    std::vector<double> val_loss;
    int best_epoch = -1;
    int epochs_run = 0;
};

/// Minimizes mean per-sample negative ELBO with Adam and reparameterized
/// gradients; early stopping on the validation loss, parameters restored from
/// the best epoch. Deterministic for a fixed seed and any worker count.
TrainLog train(VaeModel& m, const FeatureMatrix& train_data, const FeatureMatrix& val_data,
               const TrainConfig& cfg);
TrainLog train(VaeModel& m, const FeatureMatrix& data, const TrainConfig& cfg);

/// Self-describing checkpoint: text header (architecture, latent dim, decoder
/// family, preprocessing constants, seed) followed by little-endian f32
/// weight blobs in declared layer order. save(load(p)) is byte-identical.
void save_checkpoint(const VaeModel& m, const std::string& path);
VaeModel load_checkpoint(const std::string& path);

/// Gradient of the one-sample negative ELBO with frozen noise, for both
/// parameter stores. Exposed for gradient checking.
struct ElboGrads {
    ParameterStore enc;
    ParameterStore dec;
    double loss = 0.0;
};
ElboGrads elbo_gradients(const VaeModel& m, const Tensor& x,
                         const std::vector<VecD>& noise_draws);

} // namespace vnd
