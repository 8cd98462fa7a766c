#pragma once

// Test-only reference implementations, independent of the library's
// forward/backward paths. Everything here is naive loops in double
// precision.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "enclab/tensor.hpp"

namespace oracle {

using enclab::Tensor;

using dvec = std::vector<double>;

inline dvec to_d(const Tensor& t) { return dvec(t.data.begin(), t.data.end()); }

// 6-nested-loop cross-correlation with bias, groups supported.
inline dvec conv2d(const dvec& x, const dvec& w, const dvec& b, int c_in, int h, int wd, int c_out,
                   int k, int stride, int padding, int groups) {
    int h_out = (h + 2 * padding - k) / stride + 1;
    int w_out = (wd + 2 * padding - k) / stride + 1;
    int cg_in = c_in / groups, cg_out = c_out / groups;
    dvec y(static_cast<size_t>(c_out) * h_out * w_out, 0.0);
    for (int co = 0; co < c_out; ++co) {
        int g = co / cg_out;
        for (int oi = 0; oi < h_out; ++oi)
            for (int oj = 0; oj < w_out; ++oj) {
                double acc = b[co];
                for (int ci = 0; ci < cg_in; ++ci)
                    for (int ki = 0; ki < k; ++ki)
                        for (int kj = 0; kj < k; ++kj) {
                            int ii = oi * stride - padding + ki;
                            int jj = oj * stride - padding + kj;
                            if (ii < 0 || ii >= h || jj < 0 || jj >= wd) continue;
                            acc += x[(static_cast<size_t>(g * cg_in + ci) * h + ii) * wd + jj] *
                                   w[((static_cast<size_t>(co) * cg_in + ci) * k + ki) * k + kj];
                        }
                y[(static_cast<size_t>(co) * h_out + oi) * w_out + oj] = acc;
            }
    }
    return y;
}

// Brute-force window scan.
inline dvec maxpool2d(const dvec& x, int c, int h, int w, int k, int stride, int padding) {
    int h_out = (h + 2 * padding - k) / stride + 1;
    int w_out = (w + 2 * padding - k) / stride + 1;
    dvec y(static_cast<size_t>(c) * h_out * w_out);
    for (int ch = 0; ch < c; ++ch)
        for (int oi = 0; oi < h_out; ++oi)
            for (int oj = 0; oj < w_out; ++oj) {
                double best = -std::numeric_limits<double>::infinity();
                for (int ki = 0; ki < k; ++ki)
                    for (int kj = 0; kj < k; ++kj) {
                        int ii = oi * stride - padding + ki;
                        int jj = oj * stride - padding + kj;
                        if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                        best = std::max(best, x[(static_cast<size_t>(ch) * h + ii) * w + jj]);
                    }
                y[(static_cast<size_t>(ch) * h_out + oi) * w_out + oj] = best;
            }
    return y;
}

// Explicit bin-partition average pooling.
inline dvec adaptive_avg_pool(const dvec& x, int c, int h, int w, int n, int m) {
    dvec y(static_cast<size_t>(c) * n * m);
    for (int ch = 0; ch < c; ++ch)
        for (int bi = 0; bi < n; ++bi)
            for (int bj = 0; bj < m; ++bj) {
                int i0 = bi * h / n, i1 = (bi + 1) * h / n;
                int j0 = bj * w / m, j1 = (bj + 1) * w / m;
                double acc = 0.0;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) acc += x[(static_cast<size_t>(ch) * h + i) * w + j];
                y[(static_cast<size_t>(ch) * n + bi) * m + bj] = acc / ((i1 - i0) * (j1 - j0));
            }
    return y;
}

inline dvec linear(const dvec& x, const dvec& w, const dvec& b, int n_in, int n_out) {
    dvec y(static_cast<size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
        double acc = b[o];
        for (int i = 0; i < n_in; ++i) acc += w[static_cast<size_t>(o) * n_in + i] * x[i];
        y[o] = acc;
    }
    return y;
}

inline dvec relu(const dvec& x) {
    dvec y = x;
    for (double& v : y) v = v > 0.0 ? v : 0.0;
    return y;
}

inline dvec softmax(const dvec& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    dvec p(logits.size());
    double z = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
    for (double& v : p) v /= z;
    return p;
}

inline double log_prob(const dvec& logits, int a) { return std::log(softmax(logits)[static_cast<size_t>(a)]); }

inline double entropy(const dvec& logits) {
    dvec p = softmax(logits);
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return h;
}

// Central finite differences of a scalar-valued double function.
template <typename F>
dvec finite_diff(F f, dvec x, double h = 1e-3) {
    dvec g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double up = f(x);
        x[i] = keep - h;
        double dn = f(x);
        x[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const dvec& got, const dvec& want) {
    double worst = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        double denom = std::max(1.0, std::abs(want[i]));
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

}  // namespace oracle
