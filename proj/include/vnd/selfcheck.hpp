#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vnd/eval.hpp"
#include "vnd/gaussian.hpp"
#include "vnd/novelty.hpp"

namespace vnd::selfcheck {

/// Independent reference computations kept deliberately naive: direct loops
/// transcribed from the score definitions, plain summation, numerical
/// integration and Monte Carlo instead of closed forms. The `selftest` CLI
/// command and the test suites compare the production paths against these.

/// Direct transcription of a metric formula from the raw normal rows. The
/// model's encode/decode are shared primitives; everything above them
/// (minima, mixtures, sampling aggregation) is re-derived here. Metrics of
/// the generated family have no closed transcription; use naive_measure_at
/// with the reported minimizer instead.
double naive_metric_score(const VaeModel& m, const std::vector<VecD>& normal_rows, const VecD& x,
                          const MetricId& metric, const ScoreParams& params);

/// The generated-search objective evaluated naively at a given latent point.
double naive_measure_at(const VaeModel& m, const VecD& x, const VecD& z, SearchMeasure measure);

/// Monte Carlo estimate of KL(g || N(0,I)).
double mc_kl_estimate(const DiagonalGaussian& g, int n_samples, std::uint64_t seed);

/// Bhattacharyya distance of 1-D Gaussians by Simpson quadrature of the
/// overlap integral.
double quadrature_bhattacharyya_1d(const DiagonalGaussian& p, const DiagonalGaussian& q);

/// O(n^2) pair-counting AUC with half credit for ties.
double paircount_auc(const LabeledScores& ls);

/// Exhaustive nearest-neighbor scan.
double naive_nearest_sq_dist(const std::vector<VecD>& rows, const VecD& query);

/// |a - b| <= rel * max(|a|, |b|) + abs_floor. The floor covers score values
/// that are exact zeros up to floating-point noise (e.g. minima over
/// near-identical distributions).
bool isclose(double a, double b, double rel = 1e-9, double abs_floor = 1e-12);

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Quick oracle battery used by the `selftest` command.
std::vector<CheckResult> run_all(std::uint64_t seed);

} // namespace vnd::selfcheck
