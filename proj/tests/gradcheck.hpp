#pragma once

// Finite-difference gradient checks shared by the unit tests and the
// acceptance suite: analytic gradients from the library's backward pass vs
// central differences of the double-precision oracles.

#include <random>

#include "enclab/distributions.hpp"
#include "enclab/graph.hpp"
#include "oracles.hpp"

namespace gradcheck {

using enclab::Graph;
using enclab::Parameter;
using enclab::Tensor;
using oracle::dvec;

inline Tensor rand_distinct(std::vector<int> shape, std::mt19937_64& rng) {
    // Values spaced at least 0.01 apart so argmax/sign decisions sit well
    // clear of the finite-difference step.
    Tensor t(std::move(shape));
    std::vector<float> vals(t.numel());
    for (size_t i = 0; i < vals.size(); ++i)
        vals[i] = -0.5f * static_cast<float>(vals.size()) * 0.01f + 0.01f * static_cast<float>(i);
    std::shuffle(vals.begin(), vals.end(), rng);
    t.data.assign(vals.begin(), vals.end());
    return t;
}

inline Tensor rand_seed_grad(const std::vector<int>& shape, std::mt19937_64& rng) {
    return enclab::rand_uniform(shape, rng, -1.0f, 1.0f);
}

inline double dot(const dvec& a, const Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b.data[i];
    return s;
}

inline double check_conv(std::mt19937_64& rng, int groups) {
    std::uniform_int_distribution<int> size_d(3, 7), chan_d(1, 3);
    int h = size_d(rng), w = size_d(rng), k = std::uniform_int_distribution<int>(1, 3)(rng);
    int g = groups;
    int c_in = chan_d(rng) * g, c_out = chan_d(rng) * g;
    int stride = std::uniform_int_distribution<int>(1, 2)(rng);
    int padding = std::uniform_int_distribution<int>(0, 1)(rng);
    if ((h + 2 * padding - k) / stride + 1 < 1 || (w + 2 * padding - k) / stride + 1 < 1) padding = k;

    Tensor x = enclab::rand_uniform({c_in, h, w}, rng, -1.0f, 1.0f);
    Parameter pw("w", enclab::rand_uniform({c_out, c_in / g, k, k}, rng, -1.0f, 1.0f));
    Parameter pb("b", enclab::rand_uniform({c_out}, rng, -0.5f, 0.5f));

    Graph graph;
    auto xid = graph.input(x, true);
    auto out = graph.conv2d(xid, graph.leaf(pw), graph.leaf(pb), stride, padding, g);
    Tensor seed = rand_seed_grad(graph.value(out).shape, rng);
    graph.backward(out, seed);

    auto scalar_loss = [&](const dvec& xv, const dvec& wv, const dvec& bv) {
        dvec y = oracle::conv2d(xv, wv, bv, c_in, h, w, c_out, k, stride, padding, g);
        double s = 0.0;
        for (size_t i = 0; i < y.size(); ++i) s += y[i] * seed.data[i];
        return s;
    };
    dvec xd = oracle::to_d(x), wd = oracle::to_d(pw.value), bd = oracle::to_d(pb.value);
    dvec fd_x = oracle::finite_diff([&](const dvec& v) { return scalar_loss(v, wd, bd); }, xd);
    dvec fd_w = oracle::finite_diff([&](const dvec& v) { return scalar_loss(xd, v, bd); }, wd);
    dvec fd_b = oracle::finite_diff([&](const dvec& v) { return scalar_loss(xd, wd, v); }, bd);
    double err = oracle::max_rel_err(oracle::to_d(graph.grad(xid)), fd_x);
    err = std::max(err, oracle::max_rel_err(oracle::to_d(pw.grad), fd_w));
    err = std::max(err, oracle::max_rel_err(oracle::to_d(pb.grad), fd_b));
    return err;
}

inline double check_maxpool(std::mt19937_64& rng) {
    int c = std::uniform_int_distribution<int>(1, 3)(rng);
    int h = std::uniform_int_distribution<int>(4, 8)(rng);
    int w = std::uniform_int_distribution<int>(4, 8)(rng);
    Tensor x = rand_distinct({c, h, w}, rng);
    Graph graph;
    auto xid = graph.input(x, true);
    auto out = graph.maxpool2d(xid, 3, 2, 1);
    Tensor seed = rand_seed_grad(graph.value(out).shape, rng);
    graph.backward(out, seed);
    dvec fd = oracle::finite_diff(
        [&](const dvec& v) {
            dvec y = oracle::maxpool2d(v, c, h, w, 3, 2, 1);
            double s = 0.0;
            for (size_t i = 0; i < y.size(); ++i) s += y[i] * seed.data[i];
            return s;
        },
        oracle::to_d(x));
    return oracle::max_rel_err(oracle::to_d(graph.grad(xid)), fd);
}

inline double check_avgpool(std::mt19937_64& rng) {
    int c = std::uniform_int_distribution<int>(1, 3)(rng);
    int h = std::uniform_int_distribution<int>(3, 8)(rng);
    int w = std::uniform_int_distribution<int>(3, 8)(rng);
    int n = std::uniform_int_distribution<int>(1, h)(rng);
    int m = std::uniform_int_distribution<int>(1, w)(rng);
    Tensor x = enclab::rand_uniform({c, h, w}, rng, -1.0f, 1.0f);
    Graph graph;
    auto xid = graph.input(x, true);
    auto out = graph.adaptive_avg_pool(xid, n, m);
    Tensor seed = rand_seed_grad(graph.value(out).shape, rng);
    graph.backward(out, seed);
    dvec fd = oracle::finite_diff(
        [&](const dvec& v) {
            dvec y = oracle::adaptive_avg_pool(v, c, h, w, n, m);
            double s = 0.0;
            for (size_t i = 0; i < y.size(); ++i) s += y[i] * seed.data[i];
            return s;
        },
        oracle::to_d(x));
    return oracle::max_rel_err(oracle::to_d(graph.grad(xid)), fd);
}

inline double check_linear(std::mt19937_64& rng) {
    int n_in = std::uniform_int_distribution<int>(1, 12)(rng);
    int n_out = std::uniform_int_distribution<int>(1, 8)(rng);
    Tensor x = enclab::rand_uniform({n_in}, rng, -1.0f, 1.0f);
    Parameter pw("w", enclab::rand_uniform({n_out, n_in}, rng, -1.0f, 1.0f));
    Parameter pb("b", enclab::rand_uniform({n_out}, rng, -0.5f, 0.5f));
    Graph graph;
    auto xid = graph.input(x, true);
    auto out = graph.linear(xid, graph.leaf(pw), graph.leaf(pb));
    Tensor seed = rand_seed_grad({n_out}, rng);
    graph.backward(out, seed);
    auto loss = [&](const dvec& xv, const dvec& wv, const dvec& bv) {
        dvec y = oracle::linear(xv, wv, bv, n_in, n_out);
        double s = 0.0;
        for (size_t i = 0; i < y.size(); ++i) s += y[i] * seed.data[i];
        return s;
    };
    dvec xd = oracle::to_d(x), wd = oracle::to_d(pw.value), bd = oracle::to_d(pb.value);
    double err = oracle::max_rel_err(
        oracle::to_d(graph.grad(xid)),
        oracle::finite_diff([&](const dvec& v) { return loss(v, wd, bd); }, xd));
    err = std::max(err, oracle::max_rel_err(
                            oracle::to_d(pw.grad),
                            oracle::finite_diff([&](const dvec& v) { return loss(xd, v, bd); }, wd)));
    err = std::max(err, oracle::max_rel_err(
                            oracle::to_d(pb.grad),
                            oracle::finite_diff([&](const dvec& v) { return loss(xd, wd, v); }, bd)));
    return err;
}

inline double check_relu(std::mt19937_64& rng) {
    int n = std::uniform_int_distribution<int>(2, 16)(rng);
    Tensor x = rand_distinct({n}, rng);
    for (float& v : x.data)
        if (std::abs(v) < 0.005f) v += 0.01f;  // keep clear of the kink
    Graph graph;
    auto xid = graph.input(x, true);
    auto out = graph.relu(xid);
    Tensor seed = rand_seed_grad({n}, rng);
    graph.backward(out, seed);
    dvec fd = oracle::finite_diff(
        [&](const dvec& v) {
            dvec y = oracle::relu(v);
            double s = 0.0;
            for (size_t i = 0; i < y.size(); ++i) s += y[i] * seed.data[i];
            return s;
        },
        oracle::to_d(x));
    return oracle::max_rel_err(oracle::to_d(graph.grad(xid)), fd);
}

inline double check_log_prob(std::mt19937_64& rng) {
    int a = std::uniform_int_distribution<int>(2, 9)(rng);
    Tensor logits = enclab::rand_uniform({a}, rng, -2.0f, 2.0f);
    int action = std::uniform_int_distribution<int>(0, a - 1)(rng);
    auto dist = enclab::Categorical::from_logits(logits);
    Tensor analytic = Tensor::zeros({a});
    dist.log_prob_grad(0, action, 1.0f, analytic.ptr());
    dvec fd = oracle::finite_diff([&](const dvec& v) { return oracle::log_prob(v, action); },
                                  oracle::to_d(logits));
    return oracle::max_rel_err(oracle::to_d(analytic), fd);
}

inline double check_entropy(std::mt19937_64& rng) {
    int a = std::uniform_int_distribution<int>(2, 9)(rng);
    Tensor logits = enclab::rand_uniform({a}, rng, -2.0f, 2.0f);
    auto dist = enclab::Categorical::from_logits(logits);
    Tensor analytic = Tensor::zeros({a});
    dist.entropy_grad(0, 1.0f, analytic.ptr());
    dvec fd = oracle::finite_diff([&](const dvec& v) { return oracle::entropy(v); },
                                  oracle::to_d(logits));
    return oracle::max_rel_err(oracle::to_d(analytic), fd);
}

}  // namespace gradcheck
