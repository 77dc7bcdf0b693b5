#include "vnd/nn_index.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "vnd/errors.hpp"
#include "vnd/parallel.hpp"
#include "vnd/rng.hpp"

namespace vnd {

VectorIndex::VectorIndex(std::size_t n, std::size_t d, VecD values)
    : n_(n), d_(d), values_(std::move(values)) {
    if (n_ == 0) throw DataError("VectorIndex: empty reference set");
    if (values_.size() != n_ * d_)
        throw DataError("VectorIndex: value buffer does not match n*d");
    source_ids_.resize(n_);
    std::iota(source_ids_.begin(), source_ids_.end(), std::size_t{0});
}

VectorIndex VectorIndex::from_rows(const std::vector<VecD>& rows) {
    if (rows.empty()) throw DataError("VectorIndex: empty reference set");
    const std::size_t d = rows.front().size();
    VecD flat;
    flat.reserve(rows.size() * d);
    for (const auto& r : rows) {
        if (r.size() != d) throw DataError("VectorIndex: rows have mixed dimensions");
        flat.insert(flat.end(), r.begin(), r.end());
    }
    return VectorIndex(rows.size(), d, std::move(flat));
}

NearestResult VectorIndex::nearest_sq_dist(std::span<const double> query) const {
    if (query.size() != d_)
        throw ConfigError("nearest_sq_dist: query dimension " + std::to_string(query.size()) +
                          " does not match index dimension " + std::to_string(d_));
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_id = 0;
    const double* p = values_.data();
    for (std::size_t i = 0; i < n_; ++i, p += d_) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d_; ++j) {
            const double diff = query[j] - p[j];
            acc += diff * diff;
        }
        if (acc < best) {
            best = acc;
            best_id = i;
        }
    }
    return {best, best_id};
}

std::vector<NearestResult> VectorIndex::batch_nearest(const std::vector<VecD>& queries,
                                                      int workers) const {
    std::vector<NearestResult> out(queries.size());
    parallel_tasks(workers, queries.size(), [&](std::size_t i) {
        out[i] = nearest_sq_dist(queries[i]);
    });
    return out;
}

VectorIndex VectorIndex::subsample(std::size_t count, std::uint64_t seed) const {
    if (count < 1 || count > n_)
        throw ConfigError("subsample: count " + std::to_string(count) +
                          " out of range [1, " + std::to_string(n_) + "]");
    // partial Fisher-Yates over the id vector
    std::vector<std::size_t> ids(n_);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + rng.uniform_index(n_ - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(count);
    std::sort(ids.begin(), ids.end());

    VecD flat;
    flat.reserve(count * d_);
    for (std::size_t id : ids)
        flat.insert(flat.end(), values_.begin() + id * d_, values_.begin() + (id + 1) * d_);
    VectorIndex sub(count, d_, std::move(flat));
    sub.source_ids_ = std::move(ids);
    return sub;
}

} // namespace vnd
