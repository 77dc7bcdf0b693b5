#pragma once

#include <span>
#include <vector>

#include "vnd/rng.hpp"
#include "vnd/tensor.hpp"

namespace vnd {

/// Gaussian with diagonal covariance, parameterized by mean and per-dimension
/// log-variance. Encoder and decoder outputs, as well as the unit prior, are
/// all instances of this type.
struct DiagonalGaussian {
    VecD mean;
    VecD log_var;

    DiagonalGaussian() = default;
    DiagonalGaussian(VecD m, VecD lv);

    std::size_t dim() const { return mean.size(); }

    /// The unit prior N(0, I).
    static DiagonalGaussian standard(std::size_t dim);
};

/// Exact log density of x under g.
double log_density(const DiagonalGaussian& g, std::span<const double> x);

/// Reparameterized draw: mean + exp(log_var / 2) * eps, eps ~ N(0, I).
VecD sample(const DiagonalGaussian& g, Rng& rng);

/// Draw with externally supplied standard-normal noise (used where gradients
/// must flow through the noise path).
VecD sample_with_noise(const DiagonalGaussian& g, std::span<const double> eps);

/// KL(g || N(0, I)) = 1/2 sum(exp(lv) + mean^2 - 1 - lv). Non-negative.
double kl_to_standard_normal(const DiagonalGaussian& g);

/// Bhattacharyya distance between diagonal Gaussians, closed form:
///   1/8 sum (mu_p - mu_q)^2 / vbar + 1/2 sum log(vbar / (sp * sq)),
/// vbar = (vp + vq) / 2. Symmetric, zero iff p == q.
double bhattacharyya(const DiagonalGaussian& p, const DiagonalGaussian& q);

/// Uniformly weighted mixture of diagonal Gaussians (the latent-space and
/// output-space densities of the normal reference set).
struct GaussianMixture {
    std::vector<DiagonalGaussian> components;

    std::size_t size() const { return components.size(); }
    std::size_t dim() const { return components.empty() ? 0 : components.front().dim(); }
};

/// log((1/n) sum_i exp(log_density_i(x))), computed with log-sum-exp.
double mixture_log_density(const GaussianMixture& m, std::span<const double> x);

/// exp(mixture_log_density). May underflow to 0 in high dimension; callers
/// that only need a ranking should prefer the log form.
double mixture_density(const GaussianMixture& m, std::span<const double> x);

} // namespace vnd
