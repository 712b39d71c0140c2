#pragma once

#include <cmath>

#include "sdfrec/core/checkpoint.hpp"

namespace sdfrec {

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard bias-corrected Adam over every parameter in the store; per-param
// lr_scale implements the slower symmetry-transform schedule.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, long step) {
    if (step < 1) throw PreconditionError("adam step index is 1-based");
    double bc1 = 1.0 - std::pow(cfg.beta1, (double)step);
    double bc2 = 1.0 - std::pow(cfg.beta2, (double)step);
    for (int i = 0; i < store.count(); ++i) {
        Param& p = store.at(i);
        if (!p.grad.same_shape(p.value))
            throw ShapeError("gradient shape mismatch for " + p.name);
        double lr = cfg.lr * p.lr_scale;
        for (long e = 0; e < p.value.size(); ++e) {
            double g = p.grad.at(e);
            p.adam_m.at(e) = cfg.beta1 * p.adam_m.at(e) + (1.0 - cfg.beta1) * g;
            p.adam_v.at(e) = cfg.beta2 * p.adam_v.at(e) + (1.0 - cfg.beta2) * g * g;
            double mhat = p.adam_m.at(e) / bc1;
            double vhat = p.adam_v.at(e) / bc2;
            p.value.at(e) -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace sdfrec
