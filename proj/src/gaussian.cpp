#include "vnd/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vnd/errors.hpp"

namespace vnd {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836; // log(2*pi)

void check_dim(std::size_t a, std::size_t b, const char* what) {
    if (a != b)
        throw ConfigError(std::string(what) + ": dimension mismatch (" +
                          std::to_string(a) + " vs " + std::to_string(b) + ")");
}
} // namespace

DiagonalGaussian::DiagonalGaussian(VecD m, VecD lv)
    : mean(std::move(m)), log_var(std::move(lv)) {
    check_dim(mean.size(), log_var.size(), "DiagonalGaussian");
    for (double v : log_var)
        if (!std::isfinite(v)) throw NumericError("DiagonalGaussian: non-finite log-variance");
}

DiagonalGaussian DiagonalGaussian::standard(std::size_t dim) {
    return DiagonalGaussian(VecD(dim, 0.0), VecD(dim, 0.0));
}

double log_density(const DiagonalGaussian& g, std::span<const double> x) {
    check_dim(g.dim(), x.size(), "log_density");
    double acc = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        const double lv = g.log_var[j];
        const double d = x[j] - g.mean[j];
        acc += -0.5 * (kLog2Pi + lv) - 0.5 * d * d * std::exp(-lv);
    }
    return acc;
}

VecD sample(const DiagonalGaussian& g, Rng& rng) {
    VecD out(g.dim());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = g.mean[j] + std::exp(0.5 * g.log_var[j]) * rng.normal();
    return out;
}

VecD sample_with_noise(const DiagonalGaussian& g, std::span<const double> eps) {
    check_dim(g.dim(), eps.size(), "sample_with_noise");
    VecD out(g.dim());
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] = g.mean[j] + std::exp(0.5 * g.log_var[j]) * eps[j];
    return out;
}

double kl_to_standard_normal(const DiagonalGaussian& g) {
    double acc = 0.0;
    for (std::size_t j = 0; j < g.dim(); ++j) {
        const double lv = g.log_var[j];
        const double m = g.mean[j];
        acc += std::exp(lv) + m * m - 1.0 - lv;
    }
    return 0.5 * acc;
}

double bhattacharyya(const DiagonalGaussian& p, const DiagonalGaussian& q) {
    check_dim(p.dim(), q.dim(), "bhattacharyya");
    double quad = 0.0, logdet = 0.0;
    for (std::size_t j = 0; j < p.dim(); ++j) {
        // canonical operand order keeps the result bit-symmetric in (p, q)
        // even when the compiler contracts a*b+c into fused multiply-adds
        const double slo = std::exp(0.5 * std::min(p.log_var[j], q.log_var[j]));
        const double shi = std::exp(0.5 * std::max(p.log_var[j], q.log_var[j]));
        const double vbar = 0.5 * (slo * slo + shi * shi);
        const double d = p.mean[j] - q.mean[j];
        quad += d * d / vbar;
        // log(vbar / (slo*shi)) = log1p((shi-slo)^2 / (2 slo shi)); the log1p
        // form stays accurate (and exactly zero) when the variances coincide
        const double spq = slo * shi;
        logdet += std::log1p((shi - slo) * (shi - slo) / (2.0 * spq));
    }
    return 0.125 * quad + 0.5 * logdet;
}

double mixture_log_density(const GaussianMixture& m, std::span<const double> x) {
    if (m.components.empty()) throw ConfigError("mixture_log_density: empty mixture");
    double mx = -std::numeric_limits<double>::infinity();
    VecD lds(m.components.size());
    for (std::size_t i = 0; i < m.components.size(); ++i) {
        lds[i] = log_density(m.components[i], x);
        mx = std::max(mx, lds[i]);
    }
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double ld : lds) acc += std::exp(ld - mx);
    return mx + std::log(acc) - std::log(static_cast<double>(m.components.size()));
}

double mixture_density(const GaussianMixture& m, std::span<const double> x) {
    return std::exp(mixture_log_density(m, x));
}

} // namespace vnd
