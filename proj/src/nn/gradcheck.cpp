#include "mgeo/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace mgeo::nn {

GradCheckReport grad_check(ParameterStore& ps, const std::function<Real(ParameterStore&)>& loss,
                           Real eps, size_t max_per_param) {
    ps.zero_grads();
    loss(ps);
    std::unordered_map<std::string, std::vector<Real>> analytic;
    for (const std::string& name : ps.names()) analytic[name] = ps.at(name).grad;

    GradCheckReport report;
    for (const std::string& name : ps.names()) {
        Tensor& t = ps.at(name);
        size_t n = t.size();
        size_t stride = 1;
        if (max_per_param > 0 && n > max_per_param) stride = n / max_per_param;
        for (size_t i = 0; i < n; i += stride) {
            Real saved = t.values[i];
            t.values[i] = saved + eps;
            ps.zero_grads();
            Real lp = loss(ps);
            t.values[i] = saved - eps;
            ps.zero_grads();
            Real lm = loss(ps);
            t.values[i] = saved;

            Real num = (lp - lm) / (2.0 * eps);
            Real ana = analytic[name][i];
            Real rel = std::abs(num - ana) / std::max({1e-3, std::abs(num), std::abs(ana)});
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = ana;
                report.worst_numeric = num;
            }
        }
    }
    // Leave the store with the analytic grads it started from.
    ps.zero_grads();
    loss(ps);
    return report;
}

}  // namespace mgeo::nn
