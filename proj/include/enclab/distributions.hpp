#pragma once

#include <cmath>
#include <random>
#include <stdexcept>

#include "enclab/tensor.hpp"

namespace enclab {

// Max-subtracted softmax over the last dimension of [A] or [B,A].
inline Tensor softmax(const Tensor& logits) {
    if (logits.ndim() != 1 && logits.ndim() != 2)
        throw std::invalid_argument("softmax: logits must be 1-D or 2-D");
    const int a = logits.dim(logits.ndim() - 1);
    const int rows = static_cast<int>(logits.numel()) / a;
    Tensor out = logits;
    for (int r = 0; r < rows; ++r) {
        float* p = out.ptr() + static_cast<size_t>(r) * a;
        float mx = p[0];
        for (int i = 1; i < a; ++i) mx = std::max(mx, p[i]);
        double z = 0.0;
        for (int i = 0; i < a; ++i) {
            p[i] = std::exp(p[i] - mx);
            z += p[i];
        }
        for (int i = 0; i < a; ++i) p[i] = static_cast<float>(p[i] / z);
    }
    return out;
}

// Discrete distribution over the last axis of a logits tensor.
struct Categorical {
    Tensor probs;  // same shape as logits
    int n_actions = 0;

    static Categorical from_logits(const Tensor& logits) {
        Categorical c;
        c.probs = softmax(logits);
        c.n_actions = logits.dim(logits.ndim() - 1);
        if (!c.probs.all_finite()) throw std::runtime_error("Categorical: non-finite probabilities");
        return c;
    }

    const float* row(int r) const { return probs.ptr() + static_cast<size_t>(r) * n_actions; }

    // Inverse-CDF sampling; consumes exactly one draw from the stream.
    int sample(int r, std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        double u = unit(rng);
        const float* p = row(r);
        double acc = 0.0;
        for (int i = 0; i < n_actions; ++i) {
            acc += p[i];
            if (u < acc) return i;
        }
        return n_actions - 1;
    }

    float log_prob(int r, int action) const {
        return std::log(std::max(row(r)[action], 1e-38f));
    }

    float entropy(int r) const {
        const float* p = row(r);
        double h = 0.0;
        for (int i = 0; i < n_actions; ++i)
            if (p[i] > 0.0f) h -= p[i] * std::log(p[i]);
        return static_cast<float>(h);
    }

    // d log p(a) / d logit_j = 1[j==a] - p_j
    void log_prob_grad(int r, int action, float scale, float* dlogits) const {
        const float* p = row(r);
        for (int i = 0; i < n_actions; ++i) dlogits[i] += scale * ((i == action ? 1.0f : 0.0f) - p[i]);
    }

    // d H / d logit_j = -p_j (log p_j + H)
    void entropy_grad(int r, float scale, float* dlogits) const {
        const float* p = row(r);
        float h = entropy(r);
        for (int i = 0; i < n_actions; ++i) {
            float logp = p[i] > 0.0f ? std::log(p[i]) : 0.0f;
            dlogits[i] += scale * (-p[i] * (logp + h));
        }
    }
};

}  // namespace enclab
