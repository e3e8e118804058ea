#include "mgeo/nn/optimizer.hpp"

#include <cmath>

namespace mgeo::nn {

void adamw_step(ParameterStore& ps, const AdamWConfig& cfg) {
    Real clip_scale = 1.0;
    if (cfg.clip_norm > 0.0) {
        Real sq = 0.0;
        for (const std::string& name : ps.names()) {
            const Tensor& t = ps.at(name);
            for (Real g : t.grad) sq += g * g;
        }
        Real norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) clip_scale = cfg.clip_norm / norm;
    }

    ps.step_count += 1;
    const Real t = static_cast<Real>(ps.step_count);
    const Real bc1 = 1.0 - std::pow(cfg.beta1, t);
    const Real bc2 = 1.0 - std::pow(cfg.beta2, t);

    for (const std::string& name : ps.names()) {
        Tensor& p = ps.at(name);
        if (p.grad.size() != p.size()) throw NnError("missing gradients for " + name);
        auto& mom = ps.moments[name];
        if (mom.m.size() != p.size()) {
            mom.m.assign(p.size(), 0.0);
            mom.v.assign(p.size(), 0.0);
        }
        const bool decay = p.rows() > 1 && cfg.weight_decay > 0.0;
        for (size_t i = 0; i < p.size(); ++i) {
            Real g = p.grad[i] * clip_scale;
            mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g;
            mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g;
            Real mhat = mom.m[i] / bc1;
            Real vhat = mom.v[i] / bc2;
            Real upd = mhat / (std::sqrt(vhat) + cfg.eps);
            if (decay) upd += cfg.weight_decay * p.values[i];
            p.values[i] -= cfg.lr * upd;
        }
    }
}

}  // namespace mgeo::nn
