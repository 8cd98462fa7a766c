#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "enclab/graph.hpp"

namespace enclab {

inline void zero_grads(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) p->zero_grad();
}

// Returns the pre-clip global L2 norm; scales all gradients by
// max_norm/norm when the norm exceeds max_norm.
inline float clip_grad_global_norm(const std::vector<Parameter*>& params, float max_norm) {
    double sq = 0.0;
    for (const Parameter* p : params)
        for (float g : p->grad.data) sq += static_cast<double>(g) * g;
    float norm = static_cast<float>(std::sqrt(sq));
    if (norm > max_norm && norm > 0.0f) {
        float scale = max_norm / norm;
        for (Parameter* p : params)
            for (float& g : p->grad.data) g *= scale;
    }
    return norm;
}

// Bias-corrected Adam. Throws on non-finite gradients before touching any
// parameter state.
inline void adam_step(const std::vector<Parameter*>& params, float lr, float beta1 = 0.9f,
                      float beta2 = 0.999f, float eps = 1e-8f) {
    for (const Parameter* p : params)
        if (!p->grad.all_finite())
            throw std::runtime_error("adam_step: non-finite gradient in parameter '" + p->name + "'");
    for (Parameter* p : params) {
        p->step_count += 1;
        const double bc1 = 1.0 - std::pow(static_cast<double>(beta1), static_cast<double>(p->step_count));
        const double bc2 = 1.0 - std::pow(static_cast<double>(beta2), static_cast<double>(p->step_count));
        for (size_t i = 0; i < p->value.numel(); ++i) {
            float g = p->grad.data[i];
            float& m = p->adam_m.data[i];
            float& v = p->adam_v.data[i];
            m = beta1 * m + (1.0f - beta1) * g;
            v = beta2 * v + (1.0f - beta2) * g * g;
            double mhat = m / bc1;
            double vhat = v / bc2;
            p->value.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

}  // namespace enclab
