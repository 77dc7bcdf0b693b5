#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "vnd/tensor.hpp"

namespace vnd {

/// Box-constrained limited-memory quasi-Newton minimization (gradient
/// projection with L-BFGS curvature and a backtracking sufficient-decrease
/// line search). Used for the generative-search novelty scores.
struct SearchConfig {
    VecD lower; // empty = unbounded
    VecD upper;
    int max_iterations = 200;
    double gradient_tolerance = 1e-5;
    int history_size = 8;
    int restarts = 1;
    std::uint64_t seed = 0; // extra restarts draw start points from this

    bool bounded() const { return !lower.empty(); }

    static SearchConfig unbounded();
    static SearchConfig box(std::size_t dim, double lo = -10.0, double hi = 10.0);
};

struct SearchResult {
    VecD z;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Objective callback: returns f(z) and writes df/dz into grad (resized by
/// the callee or pre-sized by the caller to dim(z)).
using Objective = std::function<double(std::span<const double>, VecD&)>;

/// Minimizes the objective from z0. The returned value never exceeds the
/// objective at (projected) z0; with bounds, every reported point lies inside
/// them. Non-finite objective values during the search reject the step; if no
/// progress is possible the best iterate so far is returned with
/// converged = false.
SearchResult minimize(const Objective& objective, VecD z0, const SearchConfig& config);

} // namespace vnd
