#include "conv3x3.hpp"

// The accumulator arrays in the kernels below must be fully unrolled into
// registers; without unrolling they spill to the stack and the kernels run at
// a fraction of machine peak.
#if defined(__GNUC__) && !defined(__clang__)
#pragma GCC optimize("O3", "unroll-loops")
#endif

#include <immintrin.h>

#include <cstring>
#include <vector>

// Direct AVX-512 kernels for the one convolution shape the encoders use
// everywhere: 3x3 kernel, stride 1, pad 1, no groups. The input image is
// copied once into a zero-bordered scratch plane so the inner loops carry no
// boundary branches; tail columns use masked loads/stores, which do not fault
// past the end of a buffer.

namespace enclab::detail {

namespace {

thread_local std::vector<float> tl_pad;
thread_local std::vector<float> tl_wflip;

// Copies one [c, h, wd] image into a [c, h+2, wd+2] plane with zero borders.
void pad_image(const float* x, int c, int h, int wd, float* xp) {
    const int wp = wd + 2;
    for (int ch = 0; ch < c; ++ch) {
        float* plane = xp + static_cast<size_t>(ch) * (h + 2) * wp;
        std::memset(plane, 0, sizeof(float) * static_cast<size_t>(wp));
        std::memset(plane + static_cast<size_t>(h + 1) * wp, 0, sizeof(float) * static_cast<size_t>(wp));
        const float* src = x + static_cast<size_t>(ch) * h * wd;
        for (int i = 0; i < h; ++i) {
            float* row = plane + static_cast<size_t>(i + 1) * wp;
            row[0] = 0.0f;
            std::memcpy(row + 1, src + static_cast<size_t>(i) * wd, sizeof(float) * static_cast<size_t>(wd));
            row[wd + 1] = 0.0f;
        }
    }
}

// Produces one row of OCB output channels, two 16-column chunks at a time.
// xp points at the padded input plane stack, oi is the output row.
template <int OCB>
__attribute__((target("avx512f"))) void fwd_row(const float* xp, const float* w, const float* b,
                                                float* y, int c_in, int c_in_stride, int oc0, int oi,
                                                int h, int wd, bool accumulate) {
    const int wp = wd + 2;
    int j0 = 0;
    while (wd - j0 >= 32) {
        __m512 acc0[OCB], acc1[OCB];
        for (int u = 0; u < OCB; ++u) {
            const float bias = b ? b[oc0 + u] : 0.0f;
            acc0[u] = _mm512_set1_ps(bias);
            acc1[u] = _mm512_set1_ps(bias);
        }
        for (int ci = 0; ci < c_in; ++ci) {
            const float* base = xp + (static_cast<size_t>(ci) * (h + 2) + oi) * wp + j0;
            const float* wr = w + (static_cast<size_t>(oc0) * c_in_stride + ci) * 9;
            for (int ki = 0; ki < 3; ++ki) {
                const float* row = base + static_cast<size_t>(ki) * wp;
                for (int kj = 0; kj < 3; ++kj) {
                    const __m512 v0 = _mm512_loadu_ps(row + kj);
                    const __m512 v1 = _mm512_loadu_ps(row + kj + 16);
                    for (int u = 0; u < OCB; ++u) {
                        const __m512 wb = _mm512_set1_ps(wr[u * c_in_stride * 9 + ki * 3 + kj]);
                        acc0[u] = _mm512_fmadd_ps(v0, wb, acc0[u]);
                        acc1[u] = _mm512_fmadd_ps(v1, wb, acc1[u]);
                    }
                }
            }
        }
        for (int u = 0; u < OCB; ++u) {
            float* out = y + (static_cast<size_t>(oc0 + u) * h + oi) * wd + j0;
            if (accumulate) {
                acc0[u] = _mm512_add_ps(acc0[u], _mm512_loadu_ps(out));
                acc1[u] = _mm512_add_ps(acc1[u], _mm512_loadu_ps(out + 16));
            }
            _mm512_storeu_ps(out, acc0[u]);
            _mm512_storeu_ps(out + 16, acc1[u]);
        }
        j0 += 32;
    }
    while (j0 < wd) {
        const int rem = wd - j0;
        const __mmask16 m = rem >= 16 ? static_cast<__mmask16>(0xFFFF)
                                      : static_cast<__mmask16>((1u << rem) - 1u);
        __m512 acc[OCB];
        for (int u = 0; u < OCB; ++u) acc[u] = _mm512_set1_ps(b ? b[oc0 + u] : 0.0f);
        for (int ci = 0; ci < c_in; ++ci) {
            const float* base = xp + (static_cast<size_t>(ci) * (h + 2) + oi) * wp + j0;
            const float* wr = w + (static_cast<size_t>(oc0) * c_in_stride + ci) * 9;
            for (int ki = 0; ki < 3; ++ki) {
                const float* row = base + static_cast<size_t>(ki) * wp;
                for (int kj = 0; kj < 3; ++kj) {
                    const __m512 v = _mm512_maskz_loadu_ps(m, row + kj);
                    for (int u = 0; u < OCB; ++u)
                        acc[u] = _mm512_fmadd_ps(v, _mm512_set1_ps(wr[u * c_in_stride * 9 + ki * 3 + kj]),
                                                 acc[u]);
                }
            }
        }
        for (int u = 0; u < OCB; ++u) {
            float* out = y + (static_cast<size_t>(oc0 + u) * h + oi) * wd + j0;
            if (accumulate) acc[u] = _mm512_add_ps(acc[u], _mm512_maskz_loadu_ps(m, out));
            _mm512_mask_storeu_ps(out, m, acc[u]);
        }
        j0 += 16;
    }
}

using FwdRowFn = void (*)(const float*, const float*, const float*, float*, int, int, int, int, int,
                          int, bool);

constexpr FwdRowFn kFwdRows[8] = {fwd_row<1>, fwd_row<2>, fwd_row<3>, fwd_row<4>,
                                  fwd_row<5>, fwd_row<6>, fwd_row<7>, fwd_row<8>};

// Accumulates the nine dW taps for output channels {oc0, oc0+1} against input
// channel ci over one whole image.
template <int OCB>
__attribute__((target("avx512f"))) void gradw_pair(const float* xp, const float* dy, float* dw,
                                                   int c_in, int oc0, int ci, int h, int wd) {
    const int wp = wd + 2;
    __m512 acc[OCB][9];
    for (int u = 0; u < OCB; ++u)
        for (int t = 0; t < 9; ++t) acc[u][t] = _mm512_setzero_ps();
    const float* xplane = xp + static_cast<size_t>(ci) * (h + 2) * wp;
    for (int oi = 0; oi < h; ++oi) {
        const float* xrow = xplane + static_cast<size_t>(oi) * wp;
        for (int j0 = 0; j0 < wd; j0 += 16) {
            const int rem = wd - j0;
            const __mmask16 m = rem >= 16 ? static_cast<__mmask16>(0xFFFF)
                                          : static_cast<__mmask16>((1u << rem) - 1u);
            __m512 g[OCB];
            for (int u = 0; u < OCB; ++u)
                g[u] = _mm512_maskz_loadu_ps(m, dy + (static_cast<size_t>(oc0 + u) * h + oi) * wd + j0);
            for (int ki = 0; ki < 3; ++ki) {
                const float* row = xrow + static_cast<size_t>(ki) * wp + j0;
                for (int kj = 0; kj < 3; ++kj) {
                    const __m512 v = _mm512_maskz_loadu_ps(m, row + kj);
                    for (int u = 0; u < OCB; ++u)
                        acc[u][ki * 3 + kj] = _mm512_fmadd_ps(g[u], v, acc[u][ki * 3 + kj]);
                }
            }
        }
    }
    for (int u = 0; u < OCB; ++u) {
        float* out = dw + (static_cast<size_t>(oc0 + u) * c_in + ci) * 9;
        for (int t = 0; t < 9; ++t) out[t] += _mm512_reduce_add_ps(acc[u][t]);
    }
}

__attribute__((target("avx512f"))) void gradb_plane(const float* dy, float* db, int c_out, int h,
                                                    int wd) {
    const int plane = h * wd;
    for (int oc = 0; oc < c_out; ++oc) {
        const float* p = dy + static_cast<size_t>(oc) * plane;
        __m512 acc = _mm512_setzero_ps();
        int i = 0;
        for (; i + 16 <= plane; i += 16) acc = _mm512_add_ps(acc, _mm512_loadu_ps(p + i));
        float s = _mm512_reduce_add_ps(acc);
        for (; i < plane; ++i) s += p[i];
        db[oc] += s;
    }
}

}  // namespace

bool conv3x3_available() {
    static const bool ok = __builtin_cpu_supports("avx512f");
    return ok;
}

void conv3x3_forward(const float* x, const float* w, const float* b, float* y, int n, int c_in,
                     int c_out, int h, int wd, bool accumulate) {
    const size_t in_img = static_cast<size_t>(c_in) * h * wd;
    const size_t out_img = static_cast<size_t>(c_out) * h * wd;
    tl_pad.resize(static_cast<size_t>(c_in) * (h + 2) * (wd + 2));
    for (int img = 0; img < n; ++img) {
        pad_image(x + img * in_img, c_in, h, wd, tl_pad.data());
        float* yp = y + img * out_img;
        int oc0 = 0;
        for (; oc0 + 8 <= c_out; oc0 += 8)
            for (int oi = 0; oi < h; ++oi)
                fwd_row<8>(tl_pad.data(), w, b, yp, c_in, c_in, oc0, oi, h, wd, accumulate);
        if (oc0 < c_out) {
            const FwdRowFn fn = kFwdRows[c_out - oc0 - 1];
            for (int oi = 0; oi < h; ++oi)
                fn(tl_pad.data(), w, b, yp, c_in, c_in, oc0, oi, h, wd, accumulate);
        }
    }
}

void conv3x3_grad_w(const float* x, const float* dy, float* dw, float* db, int n, int c_in,
                    int c_out, int h, int wd) {
    const size_t in_img = static_cast<size_t>(c_in) * h * wd;
    const size_t out_img = static_cast<size_t>(c_out) * h * wd;
    tl_pad.resize(static_cast<size_t>(c_in) * (h + 2) * (wd + 2));
    for (int img = 0; img < n; ++img) {
        pad_image(x + img * in_img, c_in, h, wd, tl_pad.data());
        const float* dyp = dy + img * out_img;
        for (int oc0 = 0; oc0 + 2 <= c_out; oc0 += 2)
            for (int ci = 0; ci < c_in; ++ci) gradw_pair<2>(tl_pad.data(), dyp, dw, c_in, oc0, ci, h, wd);
        if (c_out % 2)
            for (int ci = 0; ci < c_in; ++ci)
                gradw_pair<1>(tl_pad.data(), dyp, dw, c_in, c_out - 1, ci, h, wd);
        if (db) gradb_plane(dyp, db, c_out, h, wd);
    }
}

void conv3x3_grad_x(const float* w, const float* dy, float* dx, int n, int c_in, int c_out, int h,
                    int wd) {
    // dX is the correlation of dY with the spatially flipped weights, with the
    // channel axes swapped; build that weight tensor once and reuse the
    // forward kernel in accumulate mode.
    tl_wflip.resize(static_cast<size_t>(c_in) * c_out * 9);
    for (int ci = 0; ci < c_in; ++ci)
        for (int oc = 0; oc < c_out; ++oc)
            for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj)
                    tl_wflip[((static_cast<size_t>(ci) * c_out + oc) * 3 + ki) * 3 + kj] =
                        w[((static_cast<size_t>(oc) * c_in + ci) * 3 + (2 - ki)) * 3 + (2 - kj)];
    // tl_pad is reused inside conv3x3_forward; tl_wflip is a distinct buffer.
    conv3x3_forward(dy, tl_wflip.data(), nullptr, dx, n, c_out, c_in, h, wd, true);
}

}  // namespace enclab::detail
