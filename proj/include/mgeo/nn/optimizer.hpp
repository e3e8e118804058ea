#pragma once

#include "mgeo/nn/tensor.hpp"

namespace mgeo::nn {

struct AdamWConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real eps = 1e-8;
    Real weight_decay = 0.02;
    // Optional hard cap on the global gradient L2 norm; 0 disables clipping.
    Real clip_norm = 0.0;
};

// One AdamW update over every parameter in the store using the grads
// accumulated there. Decay is decoupled and skipped for 1-row tensors
// (biases, layer-norm vectors). Does not zero the grads.
void adamw_step(ParameterStore& ps, const AdamWConfig& cfg);

}  // namespace mgeo::nn
