#pragma once

#include <functional>
#include <string>

#include "mgeo/nn/tensor.hpp"

namespace mgeo::nn {

struct GradCheckReport {
    Real max_rel_err = 0.0;
    std::string worst_param;
    size_t worst_index = 0;
    Real worst_analytic = 0.0;
    Real worst_numeric = 0.0;
    size_t checked = 0;
};

// Central-difference verification of the gradients a loss function produces.
// `loss` must run forward+backward, accumulating into freshly zeroed grads,
// and must be a pure function of the store values. Relative error uses
// |num - ana| / max(1e-3, |num|, |ana|). max_per_param > 0 checks only that
// many evenly spaced elements of each tensor.
GradCheckReport grad_check(ParameterStore& ps, const std::function<Real(ParameterStore&)>& loss,
                           Real eps = 1e-5, size_t max_per_param = 0);

}  // namespace mgeo::nn
