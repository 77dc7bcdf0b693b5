#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vnd/tensor.hpp"

namespace vnd {

struct NearestResult {
    double sq_dist;
    std::size_t id;
};

/// Exact nearest-neighbor index over a fixed reference matrix: a flat scan,
/// no approximation. The novelty scores are defined as exact minima over the
/// reference set, so correctness comes first; `subsample` is the scaling
/// lever for very large reference sets.
class VectorIndex {
public:
    VectorIndex() = default;
    VectorIndex(std::size_t n, std::size_t d, VecD values);

    static VectorIndex from_rows(const std::vector<VecD>& rows);

    std::size_t size() const { return n_; }
    std::size_t dim() const { return d_; }
    bool empty() const { return n_ == 0; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * d_, d_}; }

    /// Minimum squared Euclidean distance over all rows; ties break to the
    /// lowest id.
    NearestResult nearest_sq_dist(std::span<const double> query) const;

    std::vector<NearestResult> batch_nearest(const std::vector<VecD>& queries, int workers = 1) const;

    /// Uniform subsample without replacement, reproducible per seed.
    VectorIndex subsample(std::size_t count, std::uint64_t seed) const;

    /// Row ids kept by the most recent subsample (identity for a full index).
    const std::vector<std::size_t>& source_ids() const { return source_ids_; }

private:
    std::size_t n_ = 0, d_ = 0;
    VecD values_;
    std::vector<std::size_t> source_ids_;
};

} // namespace vnd
