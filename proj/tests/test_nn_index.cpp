#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vnd/errors.hpp"
#include "vnd/nn_index.hpp"
#include "vnd/rng.hpp"
#include "vnd/selfcheck.hpp"

using namespace vnd;

namespace {

std::vector<VecD> random_rows(std::size_t n, std::size_t d, Rng& rng) {
    std::vector<VecD> rows(n, VecD(d));
    for (auto& r : rows)
        for (double& v : r) v = rng.uniform(-2, 2);
    return rows;
}

} // namespace

TEST_CASE("query equal to an indexed vector gives distance 0 and its id") {
    Rng rng(5);
    const auto rows = random_rows(20, 4, rng);
    const VectorIndex index = VectorIndex::from_rows(rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const NearestResult r = index.nearest_sq_dist(rows[i]);
        CHECK(r.sq_dist == 0.0);
        CHECK(r.id == i);
    }
}

TEST_CASE("analytic two-point example") {
    const VectorIndex index = VectorIndex::from_rows({{0.0, 0.0}, {3.0, 4.0}});
    const NearestResult r = index.nearest_sq_dist(VecD{0.0, 1.0});
    CHECK(r.sq_dist == 1.0);
    CHECK(r.id == 0);
}

TEST_CASE("ties break to the lowest id") {
    const VectorIndex index = VectorIndex::from_rows({{1.0}, {-1.0}, {1.0}});
    const NearestResult r = index.nearest_sq_dist(VecD{0.0});
    CHECK(r.id == 0);
}

TEST_CASE("matches the naive double-loop oracle on random sets") {
    Rng rng(7);
    const auto rows = random_rows(1000, 16, rng);
    const VectorIndex index = VectorIndex::from_rows(rows);
    for (int t = 0; t < 200; ++t) {
        VecD q(16);
        for (double& v : q) v = rng.uniform(-2, 2);
        CHECK(index.nearest_sq_dist(q).sq_dist == selfcheck::naive_nearest_sq_dist(rows, q));
    }
}

TEST_CASE("batch_nearest is elementwise equal to single queries, any worker count") {
    Rng rng(11);
    const auto rows = random_rows(300, 8, rng);
    const VectorIndex index = VectorIndex::from_rows(rows);
    const auto queries = random_rows(64, 8, rng);
    const auto serial = index.batch_nearest(queries, 1);
    const auto parallel = index.batch_nearest(queries, 8);
    REQUIRE(serial.size() == queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        CHECK(serial[i].sq_dist == index.nearest_sq_dist(queries[i]).sq_dist);
        CHECK(serial[i].sq_dist == parallel[i].sq_dist);
        CHECK(serial[i].id == parallel[i].id);
    }
}

TEST_CASE("dimension mismatch rejected") {
    const VectorIndex index = VectorIndex::from_rows({{1.0, 2.0}});
    CHECK_THROWS_AS(index.nearest_sq_dist(VecD{1.0}), ConfigError);
}

TEST_CASE("subsample: identity, determinism, bounds") {
    Rng rng(13);
    const auto rows = random_rows(50, 4, rng);
    const VectorIndex index = VectorIndex::from_rows(rows);

    const VectorIndex full = index.subsample(50, 99);
    CHECK(full.size() == 50);
    for (std::size_t i = 0; i < 50; ++i)
        CHECK(VecD(full.row(i).begin(), full.row(i).end()) == rows[i]);

    const VectorIndex one_a = index.subsample(1, 42);
    const VectorIndex one_b = index.subsample(1, 42);
    CHECK(one_a.source_ids() == one_b.source_ids());

    CHECK_THROWS_AS(index.subsample(0, 1), ConfigError);
    CHECK_THROWS_AS(index.subsample(51, 1), ConfigError);
}

TEST_CASE("monotonicity: subset distance dominates the full-set distance") {
    Rng rng(17);
    const auto rows = random_rows(200, 6, rng);
    const VectorIndex index = VectorIndex::from_rows(rows);
    for (int t = 0; t < 50; ++t) {
        const VectorIndex sub = index.subsample(20 + rng.uniform_index(100), 1000 + t);
        VecD q(6);
        for (double& v : q) v = rng.uniform(-3, 3);
        CHECK(sub.nearest_sq_dist(q).sq_dist >= index.nearest_sq_dist(q).sq_dist);
    }
}
