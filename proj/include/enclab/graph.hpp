#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "enclab/tensor.hpp"

namespace enclab {

// Trainable weight with its gradient and Adam state. All four tensors share
// one shape; step_count advances once per optimizer step.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    uint64_t step_count = 0;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)),
          value(std::move(v)),
          grad(Tensor::zeros(value.shape)),
          adam_m(Tensor::zeros(value.shape)),
          adam_v(Tensor::zeros(value.shape)) {}

    void zero_grad() { grad.fill(0.0f); }
};

// Reverse-mode tape. Nodes are appended in forward order; backward() visits
// them in exact reverse. A Graph is built fresh per forward pass and owned by
// a single thread.
class Graph {
  public:
    using Id = int;

    // Leaf holding a network input (or any constant). Set needs_grad when the
    // gradient w.r.t. the input itself is wanted (finite-difference checks,
    // sensitivity probes).
    Id input(Tensor x, bool needs_grad = false);

    // Leaf bound to a Parameter; backward accumulates into p.grad.
    Id leaf(Parameter& p);

    // Cross-correlation with bias. x: [C,H,W] or [N,C,H,W];
    // w: [C_out, C_in/groups, k, k]; b: [C_out].
    Id conv2d(Id x, Id w, Id b, int stride, int padding, int groups = 1,
              const std::string& layer_name = "conv2d");

    // Per-window max; gradient routes to the first (row-major) argmax.
    Id maxpool2d(Id x, int k, int stride, int padding);

    // Partitions H into n and W into m contiguous bins whose sizes differ by
    // at most one; n=m=1 is global average pooling.
    Id adaptive_avg_pool(Id x, int n, int m);

    // x: [N_in] or [B,N_in]; w: [N_out,N_in]; b: [N_out].
    Id linear(Id x, Id w, Id b);

    Id relu(Id x);
    Id add(Id a, Id b);
    Id flatten(Id x);  // [C,H,W] -> [C*H*W], [N,C,H,W] -> [N, C*H*W]

    const Tensor& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(Id id) const { return nodes_[static_cast<size_t>(id)].grad; }

    // Seeds gradients at the given roots, then runs one reverse sweep.
    void backward(const std::vector<std::pair<Id, Tensor>>& seeds);
    void backward(Id root, const Tensor& seed) { backward({{root, seed}}); }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;  // lazily allocated; empty means zero
        bool needs_grad = false;
        Parameter* param = nullptr;
        std::function<void(Graph&, Node&)> back;  // accumulate into input grads
    };

    Id push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }
    Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }
    Tensor& grad_buf(Id id);  // allocates zeros on first touch
    bool wants_grad(Id id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    std::vector<Node> nodes_;
};

// One-time process setup: pins the BLAS backend to a single thread and, when
// the CPU supports AVX-512 but the BLAS runtime auto-detected a generic
// kernel, re-executes the process with OPENBLAS_CORETYPE set. Call first
// thing in main().
void init_runtime(int argc, char** argv);

}  // namespace enclab
