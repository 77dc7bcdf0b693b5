#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vnd/data_io.hpp"
#include "vnd/gaussian.hpp"
#include "vnd/latent_search.hpp"
#include "vnd/nn_index.hpp"
#include "vnd/vae.hpp"

namespace vnd {

/// Precomputed views of the normal reference set Y: latent posteriors
/// q(z|y), their means, the raw inputs, and the deterministic reconstructions
/// with their decoder distributions. The latent mixture q_Y and the output
/// mixture p_Y are the uniform mixtures over these lists.
struct ReferenceSet {
    enum Sections : unsigned {
        kLatent = 1u,
        kInput = 2u,
        kRecon = 4u,
        kAll = kLatent | kInput | kRecon,
    };

    std::size_t size = 0;
    unsigned sections = 0;

    GaussianMixture latent_q; // components = q(z|y) per reference sample
    VectorIndex latent_means;
    VectorIndex inputs;
    VectorIndex recon_means;
    std::vector<OutputDistribution> recon_dists;

    bool has(unsigned mask) const { return (sections & mask) == mask; }
    const std::vector<DiagonalGaussian>& latent_gaussians() const { return latent_q.components; }
};

struct SubsampleSpec {
    std::size_t count = 0; // 0 = use everything
    std::uint64_t seed = 0;
};

ReferenceSet build_reference(const VaeModel& model, const FeatureMatrix& normal_data,
                             const SubsampleSpec& subsample = {},
                             unsigned sections = ReferenceSet::kAll, int workers = 1);

enum class MetricFamily {
    vae_reg,
    latent_nn,
    latent_density,
    reconstruction,
    output_nn,
    output_density,
    generated,
    elbo,
    baseline_nn,
};

enum class LatentDistance { euclid_mean, bhattacharyya };
enum class EncoderMode { mean, sample };
enum class DecoderMode { mean, sample, likelihood };
enum class Aggregate { mean, min };
enum class OutputVariant { recon_vs_recon, bhatt, x_vs_recon_y, recon_vs_y };
enum class DensityAt { reconstruction, input };
enum class SearchMeasure { sq_error, neg_log_likelihood };
enum class ElboMode { mc_mean, min_over_samples };

/// One of the catalog's scorers, identified by a stable string id (the ids
/// mirror the score subscripts: "vae-reg", "latent-nn-euclid", ...,
/// "baseline-nn"). Higher score = more novel for every metric.
struct MetricId {
    MetricFamily family = MetricFamily::vae_reg;
    LatentDistance latent_distance = LatentDistance::euclid_mean;
    EncoderMode encoder_mode = EncoderMode::mean;
    DecoderMode decoder_mode = DecoderMode::mean;
    Aggregate aggregate = Aggregate::mean;
    OutputVariant output_variant = OutputVariant::recon_vs_recon;
    DensityAt density_at = DensityAt::reconstruction;
    SearchMeasure measure = SearchMeasure::sq_error;
    bool bounded = false;
    ElboMode elbo_mode = ElboMode::mc_mean;

    std::string str() const;
    static MetricId parse(const std::string& id);
    static const std::vector<std::string>& all_ids();

    bool needs_model() const { return family != MetricFamily::baseline_nn; }
    bool stochastic() const;
    unsigned required_sections() const;
};

struct ScoreParams {
    int n_samples = 32;       // draws for stochastic metrics
    std::uint64_t seed = 0;   // base seed; batch scoring derives per-sample streams
    double bound_lo = -10.0;  // box for the bounded generative searches
    double bound_hi = 10.0;
    SearchConfig search;      // iteration limits etc.; bounds filled from the metric
    bool log_density = false; // report density metrics as -log q instead of -q
};

struct ScoreResult {
    double score = 0.0;
    int argmin_id = -1;   // nearest reference row, when applicable
    int iterations = 0;   // latent search iterations (generated family)
    bool converged = true;
    int samples_used = 0;
    VecD z_star;          // latent minimizer (generated family)
};

// The individual scorers. `x` is one test sample shaped like the model input.
double vae_reg_score(const VaeModel& m, const Tensor& x);
double latent_nn_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                       LatentDistance distance, int* argmin = nullptr);
double latent_density_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                            bool log_space = false);
double reconstruction_score(const VaeModel& m, const Tensor& x, EncoderMode enc_mode,
                            DecoderMode dec_mode, Aggregate aggregate, int n_samples, Rng& rng);
double output_nn_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                       OutputVariant variant, int* argmin = nullptr);
double output_density_score(const VaeModel& m, const ReferenceSet& ref, const Tensor& x,
                            DensityAt at, bool log_space = false);
ScoreResult generated_score(const VaeModel& m, const Tensor& x, SearchMeasure measure,
                            bool bounded, const ScoreParams& params);
double elbo_score(const VaeModel& m, const Tensor& x, ElboMode mode, int n_samples, Rng& rng);
double baseline_nn_score(const ReferenceSet& ref, const Tensor& x, int* argmin = nullptr);

/// Uniform mixture density over decoder output distributions (p_Y).
double output_mixture_log_density(const std::vector<OutputDistribution>& dists,
                                  std::span<const double> x);

/// Dispatch by metric id. `model` may be null only for baseline-nn; `ref` may
/// be null for metrics that do not use the reference set.
ScoreResult score_one(const VaeModel* model, const ReferenceSet* ref, const Tensor& x,
                      const MetricId& metric, const ScoreParams& params);

/// Scores every row of `test`. Stochastic metrics use per-sample streams
/// derived from (params.seed, row index), so results are identical for any
/// worker count.
std::vector<ScoreResult> score_batch(const VaeModel* model, const ReferenceSet* ref,
                                     const FeatureMatrix& test, const MetricId& metric,
                                     const ScoreParams& params, int workers = 1);

} // namespace vnd
