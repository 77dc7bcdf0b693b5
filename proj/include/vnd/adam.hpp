#pragma once

#include "vnd/layers.hpp"

namespace vnd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment accumulators, shaped like the parameters.
struct AdamState {
    ParameterStore m;
    ParameterStore v;
    long step = 0;

    static AdamState for_params(const ParameterStore& params);
};

/// One bias-corrected Adam update. Throws NumericError (with the step index)
/// if any gradient entry is non-finite.
void adam_step(ParameterStore& params, const ParameterStore& grads, AdamState& state,
               const AdamConfig& cfg);

} // namespace vnd
