#include "enclab/graph.hpp"

#include <cblas.h>
#include <malloc.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "conv3x3.hpp"

namespace enclab {

namespace {

struct ConvDims {
    int n, c_in, h, w;       // input
    int c_out, k;            // weight
    int h_out, w_out;
    bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int padding, int groups,
                   const std::string& layer_name) {
    ConvDims d{};
    d.batched = x.ndim() == 4;
    if (x.ndim() != 3 && x.ndim() != 4)
        throw std::invalid_argument(layer_name + ": input must be [C,H,W] or [N,C,H,W], got " + x.shape_str());
    int off = d.batched ? 1 : 0;
    d.n = d.batched ? x.dim(0) : 1;
    d.c_in = x.dim(off);
    d.h = x.dim(off + 1);
    d.w = x.dim(off + 2);
    if (w.ndim() != 4) throw std::invalid_argument(layer_name + ": weight must be 4-D");
    d.c_out = w.dim(0);
    d.k = w.dim(2);
    if (w.dim(2) != w.dim(3)) throw std::invalid_argument(layer_name + ": only square kernels");
    if (d.k < 1) throw std::invalid_argument(layer_name + ": kernel size must be >= 1");
    if (groups < 1 || d.c_in % groups != 0 || d.c_out % groups != 0)
        throw std::invalid_argument(layer_name + ": channels not divisible by groups");
    if (w.dim(1) != d.c_in / groups)
        throw std::invalid_argument(layer_name + ": weight expects " + std::to_string(w.dim(1) * groups) +
                                    " input channels, input has " + std::to_string(d.c_in));
    d.h_out = (d.h + 2 * padding - d.k) / stride + 1;
    d.w_out = (d.w + 2 * padding - d.k) / stride + 1;
    if (d.h_out < 1 || d.w_out < 1)
        throw std::invalid_argument(layer_name + ": non-positive output dims for input " + x.shape_str());
    return d;
}

// Unpacks channels [c0, c0+nc) of one image into a [nc*k*k, h_out*w_out]
// column matrix. Row-major, zero padding.
void im2col(const float* x, int c0, int nc, int h, int w, int k, int stride, int padding,
            int h_out, int w_out, float* cols) {
    const int plane = h * w;
    const int out_plane = h_out * w_out;
    float* dst = cols;
    for (int c = c0; c < c0 + nc; ++c) {
        const float* src = x + static_cast<size_t>(c) * plane;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                for (int oi = 0; oi < h_out; ++oi) {
                    int ii = oi * stride - padding + ki;
                    if (ii < 0 || ii >= h) {
                        std::memset(dst + oi * w_out, 0, sizeof(float) * static_cast<size_t>(w_out));
                        continue;
                    }
                    const float* row = src + ii * w;
                    float* drow = dst + oi * w_out;
                    for (int oj = 0; oj < w_out; ++oj) {
                        int jj = oj * stride - padding + kj;
                        drow[oj] = (jj >= 0 && jj < w) ? row[jj] : 0.0f;
                    }
                }
                dst += out_plane;
            }
        }
    }
    (void)nc;
}

// Scatter-add of a column matrix back into channels [c0, c0+nc) of one image.
void col2im_add(const float* cols, int c0, int nc, int h, int w, int k, int stride, int padding,
                int h_out, int w_out, float* x) {
    const int plane = h * w;
    const int out_plane = h_out * w_out;
    const float* src = cols;
    for (int c = c0; c < c0 + nc; ++c) {
        float* dst = x + static_cast<size_t>(c) * plane;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                for (int oi = 0; oi < h_out; ++oi) {
                    int ii = oi * stride - padding + ki;
                    if (ii < 0 || ii >= h) continue;
                    float* row = dst + ii * w;
                    const float* srow = src + oi * w_out;
                    for (int oj = 0; oj < w_out; ++oj) {
                        int jj = oj * stride - padding + kj;
                        if (jj >= 0 && jj < w) row[jj] += srow[oj];
                    }
                }
                src += out_plane;
            }
        }
    }
}

void sgemm(bool ta, bool tb, int m, int n, int k, const float* a, const float* b, float beta, float* c) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k,
                1.0f, a, ta ? m : k, b, tb ? k : n, beta, c, n);
}

struct PoolBins {
    std::vector<int> start, end;
};

PoolBins make_bins(int size, int n) {
    PoolBins b;
    b.start.resize(static_cast<size_t>(n));
    b.end.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        b.start[static_cast<size_t>(i)] = (i * size) / n;
        b.end[static_cast<size_t>(i)] = ((i + 1) * size) / n;
    }
    return b;
}

}  // namespace

Tensor& Graph::grad_buf(Id id) {
    Node& nd = node(id);
    if (nd.grad.data.empty()) nd.grad = Tensor::zeros(nd.value.shape);
    return nd.grad;
}

Graph::Id Graph::input(Tensor x, bool needs_grad) {
    Node n;
    n.value = std::move(x);
    n.needs_grad = needs_grad;
    return push(std::move(n));
}

Graph::Id Graph::leaf(Parameter& p) {
    Node n;
    n.value = p.value;
    n.needs_grad = true;
    n.param = &p;
    return push(std::move(n));
}

Graph::Id Graph::conv2d(Id xid, Id wid, Id bid, int stride, int padding, int groups,
                        const std::string& layer_name) {
    const Tensor& x = value(xid);
    const Tensor& w = value(wid);
    const Tensor& b = value(bid);
    ConvDims d = conv_dims(x, w, stride, padding, groups, layer_name);
    if (b.ndim() != 1 || b.dim(0) != d.c_out)
        throw std::invalid_argument(layer_name + ": bias must be [" + std::to_string(d.c_out) + "]");

    const int cg_in = d.c_in / groups;
    const int cg_out = d.c_out / groups;
    const int krows = cg_in * d.k * d.k;
    const int out_plane = d.h_out * d.w_out;
    const size_t in_img = static_cast<size_t>(d.c_in) * d.h * d.w;
    const size_t out_img = static_cast<size_t>(d.c_out) * out_plane;

    const bool fast3x3 =
        d.k == 3 && stride == 1 && padding == 1 && groups == 1 && detail::conv3x3_available();

    Tensor y = Tensor::uninit(d.batched ? std::vector<int>{d.n, d.c_out, d.h_out, d.w_out}
                                        : std::vector<int>{d.c_out, d.h_out, d.w_out});
    if (fast3x3) {
        detail::conv3x3_forward(x.ptr(), w.ptr(), b.ptr(), y.ptr(), d.n, d.c_in, d.c_out, d.h, d.w,
                                false);
    } else {
    std::vector<float> cols(static_cast<size_t>(krows) * out_plane);
    for (int img = 0; img < d.n; ++img) {
        const float* xp = x.ptr() + img * in_img;
        float* yp = y.ptr() + img * out_img;
        for (int g = 0; g < groups; ++g) {
            im2col(xp, g * cg_in, cg_in, d.h, d.w, d.k, stride, padding, d.h_out, d.w_out, cols.data());
            sgemm(false, false, cg_out, out_plane, krows,
                  w.ptr() + static_cast<size_t>(g) * cg_out * krows, cols.data(), 0.0f,
                  yp + static_cast<size_t>(g) * cg_out * out_plane);
        }
        for (int c = 0; c < d.c_out; ++c) {
            float bias = b.ptr()[c];
            float* row = yp + static_cast<size_t>(c) * out_plane;
            for (int i = 0; i < out_plane; ++i) row[i] += bias;
        }
    }
    }

    Node n;
    n.value = std::move(y);
    n.needs_grad = wants_grad(xid) || wants_grad(wid) || wants_grad(bid);
    n.back = [=](Graph& g, Node& self) {
        const Tensor& xv = g.value(xid);
        const Tensor& wv = g.value(wid);
        const Tensor& dy = self.grad;
        const bool want_x = g.wants_grad(xid);
        if (fast3x3) {
            detail::conv3x3_grad_w(xv.ptr(), dy.ptr(), g.grad_buf(wid).ptr(), g.grad_buf(bid).ptr(),
                                   d.n, d.c_in, d.c_out, d.h, d.w);
            if (want_x)
                detail::conv3x3_grad_x(wv.ptr(), dy.ptr(), g.grad_buf(xid).ptr(), d.n, d.c_in,
                                       d.c_out, d.h, d.w);
            return;
        }
        std::vector<float> cols2(static_cast<size_t>(krows) * out_plane);
        std::vector<float> dcols(want_x ? cols2.size() : 0);
        Tensor* dx = want_x ? &g.grad_buf(xid) : nullptr;
        Tensor& dw = g.grad_buf(wid);
        Tensor& db = g.grad_buf(bid);
        for (int img = 0; img < d.n; ++img) {
            const float* xp = xv.ptr() + img * in_img;
            const float* dyp = dy.ptr() + img * out_img;
            for (int g2 = 0; g2 < groups; ++g2) {
                im2col(xp, g2 * cg_in, cg_in, d.h, d.w, d.k, stride, padding, d.h_out, d.w_out,
                       cols2.data());
                // dW += dY · cols^T
                sgemm(false, true, cg_out, krows, out_plane,
                      dyp + static_cast<size_t>(g2) * cg_out * out_plane, cols2.data(), 1.0f,
                      dw.ptr() + static_cast<size_t>(g2) * cg_out * krows);
                if (want_x) {
                    // dcols = W^T · dY, then scatter back
                    sgemm(true, false, krows, out_plane, cg_out,
                          wv.ptr() + static_cast<size_t>(g2) * cg_out * krows,
                          dyp + static_cast<size_t>(g2) * cg_out * out_plane, 0.0f, dcols.data());
                    col2im_add(dcols.data(), g2 * cg_in, cg_in, d.h, d.w, d.k, stride, padding,
                               d.h_out, d.w_out, dx->ptr() + img * in_img);
                }
            }
            for (int c = 0; c < d.c_out; ++c) {
                const float* row = dyp + static_cast<size_t>(c) * out_plane;
                double acc = 0.0;
                for (int i = 0; i < out_plane; ++i) acc += row[i];
                db.ptr()[c] += static_cast<float>(acc);
            }
        }
    };
    return push(std::move(n));
}

Graph::Id Graph::maxpool2d(Id xid, int k, int stride, int padding) {
    const Tensor& x = value(xid);
    const bool batched = x.ndim() == 4;
    if (!batched && x.ndim() != 3) throw std::invalid_argument("maxpool2d: input must be 3-D or 4-D");
    int off = batched ? 1 : 0;
    const int n = batched ? x.dim(0) : 1;
    const int c = x.dim(off), h = x.dim(off + 1), w = x.dim(off + 2);
    const int h_out = (h + 2 * padding - k) / stride + 1;
    const int w_out = (w + 2 * padding - k) / stride + 1;
    if (h_out < 1 || w_out < 1) throw std::invalid_argument("maxpool2d: non-positive output dims");

    Tensor y = Tensor::uninit(batched ? std::vector<int>{n, c, h_out, w_out}
                                      : std::vector<int>{c, h_out, w_out});
    std::vector<int> argmax(y.numel());
    const int plane = h * w, out_plane = h_out * w_out;
    size_t o = 0;
    for (int img = 0; img < n; ++img) {
        for (int ch = 0; ch < c; ++ch) {
            const float* src = x.ptr() + (static_cast<size_t>(img) * c + ch) * plane;
            for (int oi = 0; oi < h_out; ++oi) {
                for (int oj = 0; oj < w_out; ++oj, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int ki = 0; ki < k; ++ki) {
                        int ii = oi * stride - padding + ki;
                        if (ii < 0 || ii >= h) continue;
                        for (int kj = 0; kj < k; ++kj) {
                            int jj = oj * stride - padding + kj;
                            if (jj < 0 || jj >= w) continue;
                            float v = src[ii * w + jj];
                            if (v > best) {  // strict: ties keep the first row-major hit
                                best = v;
                                best_idx = ii * w + jj;
                            }
                        }
                    }
                    y.data[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (void)out_plane;

    Node nd;
    nd.value = std::move(y);
    nd.needs_grad = wants_grad(xid);
    if (nd.needs_grad) {
        nd.back = [xid, argmax = std::move(argmax), n, c, plane, out_plane](Graph& g, Node& self) {
            Tensor& dx = g.grad_buf(xid);
            size_t o2 = 0;
            for (int img = 0; img < n; ++img) {
                for (int ch = 0; ch < c; ++ch) {
                    float* dplane = dx.ptr() + (static_cast<size_t>(img) * c + ch) * plane;
                    for (int i = 0; i < out_plane; ++i, ++o2) dplane[argmax[o2]] += self.grad.data[o2];
                }
            }
        };
    }
    return push(std::move(nd));
}

Graph::Id Graph::adaptive_avg_pool(Id xid, int n_out, int m_out) {
    const Tensor& x = value(xid);
    const bool batched = x.ndim() == 4;
    if (!batched && x.ndim() != 3) throw std::invalid_argument("adaptive_avg_pool: input must be 3-D or 4-D");
    int off = batched ? 1 : 0;
    const int n = batched ? x.dim(0) : 1;
    const int c = x.dim(off), h = x.dim(off + 1), w = x.dim(off + 2);
    if (n_out < 1 || n_out > h || m_out < 1 || m_out > w)
        throw std::invalid_argument("adaptive_avg_pool: output dims out of range");

    PoolBins hb = make_bins(h, n_out), wb = make_bins(w, m_out);
    Tensor y = Tensor::uninit(batched ? std::vector<int>{n, c, n_out, m_out}
                                      : std::vector<int>{c, n_out, m_out});
    const int plane = h * w;
    size_t o = 0;
    for (int img = 0; img < n; ++img) {
        for (int ch = 0; ch < c; ++ch) {
            const float* src = x.ptr() + (static_cast<size_t>(img) * c + ch) * plane;
            for (int bi = 0; bi < n_out; ++bi) {
                for (int bj = 0; bj < m_out; ++bj, ++o) {
                    double acc = 0.0;  // f64 accumulation, fixed row-major order
                    for (int i = hb.start[bi]; i < hb.end[bi]; ++i)
                        for (int j = wb.start[bj]; j < wb.end[bj]; ++j) acc += src[i * w + j];
                    int cnt = (hb.end[bi] - hb.start[bi]) * (wb.end[bj] - wb.start[bj]);
                    y.data[o] = static_cast<float>(acc / cnt);
                }
            }
        }
    }

    Node nd;
    nd.value = std::move(y);
    nd.needs_grad = wants_grad(xid);
    if (nd.needs_grad) {
        nd.back = [=](Graph& g, Node& self) {
            Tensor& dx = g.grad_buf(xid);
            size_t o2 = 0;
            for (int img = 0; img < n; ++img) {
                for (int ch = 0; ch < c; ++ch) {
                    float* dst = dx.ptr() + (static_cast<size_t>(img) * c + ch) * plane;
                    for (int bi = 0; bi < n_out; ++bi) {
                        for (int bj = 0; bj < m_out; ++bj, ++o2) {
                            int cnt = (hb.end[bi] - hb.start[bi]) * (wb.end[bj] - wb.start[bj]);
                            float gshare = self.grad.data[o2] / static_cast<float>(cnt);
                            for (int i = hb.start[bi]; i < hb.end[bi]; ++i)
                                for (int j = wb.start[bj]; j < wb.end[bj]; ++j) dst[i * w + j] += gshare;
                        }
                    }
                }
            }
        };
    }
    return push(std::move(nd));
}

Graph::Id Graph::linear(Id xid, Id wid, Id bid) {
    const Tensor& x = value(xid);
    const Tensor& w = value(wid);
    const Tensor& b = value(bid);
    const bool batched = x.ndim() == 2;
    if (!batched && x.ndim() != 1) throw std::invalid_argument("linear: input must be 1-D or 2-D");
    const int bs = batched ? x.dim(0) : 1;
    const int n_in = batched ? x.dim(1) : x.dim(0);
    if (w.ndim() != 2 || w.dim(1) != n_in)
        throw std::invalid_argument("linear: weight " + w.shape_str() + " does not accept input " +
                                    x.shape_str());
    const int n_out = w.dim(0);
    if (b.ndim() != 1 || b.dim(0) != n_out) throw std::invalid_argument("linear: bad bias shape");

    Tensor y = Tensor::uninit(batched ? std::vector<int>{bs, n_out} : std::vector<int>{n_out});
    // y = x · W^T
    sgemm(false, true, bs, n_out, n_in, x.ptr(), w.ptr(), 0.0f, y.ptr());
    for (int r = 0; r < bs; ++r)
        for (int c = 0; c < n_out; ++c) y.ptr()[r * n_out + c] += b.ptr()[c];

    Node nd;
    nd.value = std::move(y);
    nd.needs_grad = wants_grad(xid) || wants_grad(wid) || wants_grad(bid);
    nd.back = [=](Graph& g, Node& self) {
        const Tensor& dy = self.grad;
        // dW += dY^T · X
        sgemm(true, false, n_out, n_in, bs, dy.ptr(), g.value(xid).ptr(), 1.0f, g.grad_buf(wid).ptr());
        Tensor& db = g.grad_buf(bid);
        for (int r = 0; r < bs; ++r)
            for (int c = 0; c < n_out; ++c) db.ptr()[c] += dy.ptr()[r * n_out + c];
        if (g.wants_grad(xid)) {
            // dX += dY · W
            std::vector<float> tmp(static_cast<size_t>(bs) * n_in);
            sgemm(false, false, bs, n_in, n_out, dy.ptr(), g.value(wid).ptr(), 0.0f, tmp.data());
            Tensor& dx = g.grad_buf(xid);
            for (size_t i = 0; i < tmp.size(); ++i) dx.data[i] += tmp[i];
        }
    };
    return push(std::move(nd));
}

Graph::Id Graph::relu(Id xid) {
    const Tensor& x = value(xid);
    Tensor y = Tensor::uninit(x.shape);
    for (size_t i = 0; i < y.numel(); ++i) {
        const float v = x.data[i];
        y.data[i] = v > 0.0f ? v : 0.0f;
    }
    Node nd;
    nd.value = std::move(y);
    nd.needs_grad = wants_grad(xid);
    if (nd.needs_grad) {
        nd.back = [xid](Graph& g, Node& self) {
            const Tensor& xv = g.value(xid);
            Tensor& dx = g.grad_buf(xid);
            for (size_t i = 0; i < dx.numel(); ++i)
                if (xv.data[i] > 0.0f) dx.data[i] += self.grad.data[i];
        };
    }
    return push(std::move(nd));
}

Graph::Id Graph::add(Id aid, Id bid) {
    const Tensor& a = value(aid);
    const Tensor& b = value(bid);
    if (!a.same_shape(b))
        throw std::invalid_argument("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor y = Tensor::uninit(a.shape);
    for (size_t i = 0; i < y.numel(); ++i) y.data[i] = a.data[i] + b.data[i];
    Node nd;
    nd.value = std::move(y);
    nd.needs_grad = wants_grad(aid) || wants_grad(bid);
    nd.back = [aid, bid](Graph& g, Node& self) {
        for (Id id : {aid, bid}) {
            if (!g.wants_grad(id)) continue;
            Tensor& d = g.grad_buf(id);
            for (size_t i = 0; i < d.numel(); ++i) d.data[i] += self.grad.data[i];
        }
    };
    return push(std::move(nd));
}

Graph::Id Graph::flatten(Id xid) {
    const Tensor& x = value(xid);
    Tensor y = x;
    if (x.ndim() == 4)
        y.shape = {x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)};
    else
        y.shape = {static_cast<int>(x.numel())};
    Node nd;
    nd.value = std::move(y);
    nd.needs_grad = wants_grad(xid);
    if (nd.needs_grad) {
        nd.back = [xid](Graph& g, Node& self) {
            Tensor& dx = g.grad_buf(xid);
            for (size_t i = 0; i < dx.numel(); ++i) dx.data[i] += self.grad.data[i];
        };
    }
    return push(std::move(nd));
}

void Graph::backward(const std::vector<std::pair<Id, Tensor>>& seeds) {
    for (const auto& [id, seed] : seeds) {
        Node& nd = node(id);
        if (!seed.same_shape(nd.value))
            throw std::invalid_argument("backward: seed shape mismatch at node " + std::to_string(id));
        Tensor& gbuf = grad_buf(id);
        for (size_t i = 0; i < gbuf.numel(); ++i) gbuf.data[i] += seed.data[i];
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& nd = *it;
        if (nd.grad.data.empty()) continue;
        if (nd.param) {
            for (size_t i = 0; i < nd.grad.numel(); ++i) nd.param->grad.data[i] += nd.grad.data[i];
        } else if (nd.back) {
            nd.back(*this, nd);
        }
    }
}

void init_runtime(int argc, char** argv) {
    // Large activation buffers are allocated and freed once per graph; keep
    // them on the heap instead of round-tripping through mmap/munmap, which
    // would re-fault the pages on every training step.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    setenv("OPENBLAS_NUM_THREADS", "1", 0);
    if (getenv("OPENBLAS_CORETYPE") == nullptr) {
        std::ifstream cpuinfo("/proc/cpuinfo");
        std::string line;
        bool avx512 = false;
        while (std::getline(cpuinfo, line)) {
            if (line.rfind("flags", 0) == 0 && line.find("avx512f") != std::string::npos) {
                avx512 = true;
                break;
            }
        }
        if (avx512 && argc > 0) {
            setenv("OPENBLAS_CORETYPE", "SKYLAKEX", 1);
            execv("/proc/self/exe", argv);  // only returns on failure; fall through
        }
        setenv("OPENBLAS_CORETYPE", "", 0);
    }
    openblas_set_num_threads(1);
}

}  // namespace enclab
