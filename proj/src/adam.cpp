#include "vnd/adam.hpp"

#include <cmath>

#include "vnd/errors.hpp"

namespace vnd {

AdamState AdamState::for_params(const ParameterStore& params) {
    AdamState st;
    st.m = zeros_like(params);
    st.v = zeros_like(params);
    st.step = 0;
    return st;
}

namespace {

void update_tensor(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, const AdamConfig& c,
                   double bc1, double bc2, long step) {
    for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g[i];
        if (!std::isfinite(gi))
            throw NumericError("non-finite gradient at Adam step " + std::to_string(step));
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
}

} // namespace

void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state,
               const AdamConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update_tensor(params.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight,
                      state.v.layers[l].weight, cfg, bc1, bc2, state.step);
        update_tensor(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias,
                      state.v.layers[l].bias, cfg, bc1, bc2, state.step);
    }
}

} // namespace vnd
