#include "vnd/latent_search.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include "vnd/errors.hpp"
#include "vnd/rng.hpp"

namespace vnd {

SearchConfig SearchConfig::unbounded() { return SearchConfig{}; }

SearchConfig SearchConfig::box(std::size_t dim, double lo, double hi) {
    if (lo >= hi) throw ConfigError("SearchConfig: lower bound must be below upper bound");
    SearchConfig c;
    c.lower.assign(dim, lo);
    c.upper.assign(dim, hi);
    return c;
}

namespace {

double dot(const VecD& a, const VecD& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double inf_norm(const VecD& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

struct Pair {
    VecD s, y;
    double rho;
};

void project(VecD& z, const SearchConfig& c) {
    if (!c.bounded()) return;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::clamp(z[i], c.lower[i], c.upper[i]);
}

// infinity norm of z - P(z - g): zero exactly at a constrained stationary point
double projected_grad_norm(const VecD& z, const VecD& g, const SearchConfig& c) {
    double m = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double t = z[i] - g[i];
        if (c.bounded()) t = std::clamp(t, c.lower[i], c.upper[i]);
        m = std::max(m, std::abs(z[i] - t));
    }
    return m;
}

VecD lbfgs_direction(const VecD& g, const std::deque<Pair>& hist) {
    VecD q = g;
    std::vector<double> alpha(hist.size());
    for (std::size_t i = hist.size(); i-- > 0;) {
        alpha[i] = hist[i].rho * dot(hist[i].s, q);
        for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[i] * hist[i].y[j];
    }
    if (!hist.empty()) {
        const Pair& last = hist.back();
        const double gamma = dot(last.s, last.y) / dot(last.y, last.y);
        for (double& v : q) v *= gamma;
    }
    for (std::size_t i = 0; i < hist.size(); ++i) {
        const double beta = hist[i].rho * dot(hist[i].y, q);
        for (std::size_t j = 0; j < q.size(); ++j) q[j] += (alpha[i] - beta) * hist[i].s[j];
    }
    for (double& v : q) v = -v;
    return q;
}

SearchResult run_single(const Objective& objective, VecD z, const SearchConfig& cfg) {
    constexpr double kArmijo = 1e-4;
    project(z, cfg);
    const std::size_t dim = z.size();

    VecD g(dim, 0.0);
    double f = objective(z, g);
    if (!std::isfinite(f))
        throw NumericError("latent search: objective is non-finite at the start point");

    SearchResult best;
    best.z = z;
    best.value = f;

    std::deque<Pair> hist;
    VecD g_new(dim, 0.0);
    int iter = 0;
    for (; iter < cfg.max_iterations; ++iter) {
        if (projected_grad_norm(z, g, cfg) < cfg.gradient_tolerance) {
            best.converged = true;
            break;
        }

        VecD d = lbfgs_direction(g, hist);
        if (dot(d, g) >= 0.0) { // curvature went bad; fall back to steepest descent
            hist.clear();
            d = g;
            for (double& v : d) v = -v;
        }

        double alpha = 1.0;
        if (hist.empty()) {
            const double gn = std::sqrt(dot(g, g));
            alpha = gn > 1.0 ? 1.0 / gn : 1.0;
        }

        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
            VecD z_new(dim);
            for (std::size_t i = 0; i < dim; ++i) z_new[i] = z[i] + alpha * d[i];
            project(z_new, cfg);

            double step_sq = 0.0, gdot = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double dz = z_new[i] - z[i];
                step_sq += dz * dz;
                gdot += g[i] * dz;
            }
            if (step_sq == 0.0) break; // projection pinned every coordinate

            const double f_new = objective(z_new, g_new);
            if (!std::isfinite(f_new)) continue;
            if (f_new <= f + kArmijo * std::min(gdot, 0.0) && f_new < f) {
                Pair p;
                p.s.resize(dim);
                p.y.resize(dim);
                double sy = 0.0;
                for (std::size_t i = 0; i < dim; ++i) {
                    p.s[i] = z_new[i] - z[i];
                    p.y[i] = g_new[i] - g[i];
                    sy += p.s[i] * p.y[i];
                }
                if (sy > 1e-12 * std::sqrt(dot(p.s, p.s)) * std::sqrt(dot(p.y, p.y))) {
                    p.rho = 1.0 / sy;
                    hist.push_back(std::move(p));
                    if (static_cast<int>(hist.size()) > cfg.history_size) hist.pop_front();
                }
                z = std::move(z_new);
                f = f_new;
                g = g_new;
                accepted = true;
                break;
            }
        }
        if (!accepted) break; // no further progress; best iterate stands

        if (f < best.value) {
            best.value = f;
            best.z = z;
        }
    }
    if (iter == cfg.max_iterations) // re-test at the last iterate
        best.converged = projected_grad_norm(z, g, cfg) < cfg.gradient_tolerance;
    best.iterations = iter;
    return best;
}

} // namespace

SearchResult minimize(const Objective& objective, VecD z0, const SearchConfig& config) {
    if (config.bounded()) {
        if (config.lower.size() != z0.size() || config.upper.size() != z0.size())
            throw ConfigError("latent search: bounds dimension does not match start point");
        for (std::size_t i = 0; i < z0.size(); ++i)
            if (config.lower[i] >= config.upper[i])
                throw ConfigError("latent search: lower bound must be below upper bound");
    }
    if (config.max_iterations < 1 || config.gradient_tolerance <= 0.0)
        throw ConfigError("latent search: invalid iteration limit or tolerance");

    SearchResult best = run_single(objective, z0, config);
    Rng rng(Rng::derive(config.seed, 0x5eacc0ffull));
    for (int r = 1; r < config.restarts; ++r) {
        VecD start(z0.size());
        for (std::size_t i = 0; i < start.size(); ++i)
            start[i] = config.bounded() ? rng.uniform(config.lower[i], config.upper[i])
                                        : z0[i] + rng.normal();
        SearchResult res = run_single(objective, std::move(start), config);
        res.iterations += best.iterations;
        if (res.value < best.value)
            best = std::move(res);
        else
            best.iterations = res.iterations;
    }
    return best;
}

} // namespace vnd
