#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace enclab {

// std::allocator that leaves value-initialized elements uninitialized, so a
// buffer about to be fully overwritten is not zero-filled first. Explicitly
// initialized elements behave as usual.
template <class T>
struct default_init_allocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = default_init_allocator<U>;
    };
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        if constexpr (sizeof...(Args) == 0)
            ::new (static_cast<void*>(p)) U;
        else
            ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

// Dense row-major f32 tensor. The only numeric value type in the library.
struct Tensor {
    using Buffer = std::vector<float, default_init_allocator<float>>;

    std::vector<int> shape;
    Buffer data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0f) {
        for (int d : shape)
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim");
    }
    Tensor(std::vector<int> s, std::vector<float> d)
        : shape(std::move(s)), data(d.begin(), d.end()) {
        if (numel_of(shape) != data.size()) throw std::invalid_argument("Tensor: shape/data mismatch");
    }

    // Allocates without zero-filling; every element must be written before use.
    static Tensor uninit(std::vector<int> s) {
        Tensor t;
        t.shape = std::move(s);
        for (int d : t.shape)
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dim");
        t.data.resize(numel_of(t.shape));
        return t;
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, float v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline Tensor randn(std::vector<int> shape, std::mt19937_64& rng, float stddev = 1.0f) {
    Tensor t(std::move(shape));
    std::normal_distribution<float> dist(0.0f, stddev);
    for (float& v : t.data) v = dist(rng);
    return t;
}

inline Tensor rand_uniform(std::vector<int> shape, std::mt19937_64& rng, float lo = 0.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> dist(lo, hi);
    for (float& v : t.data) v = dist(rng);
    return t;
}

}  // namespace enclab
