#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "enclab/checkpoint.hpp"
#include "enclab/graph.hpp"

namespace enclab {

enum class EncoderKind { Nature, ImpalaFamily };

enum class Tail {
    Flatten,               // Impala-CNN
    GAP,                   // Impoola-CNN
    AvgPool2x2,
    MaxPool1x1,
    DepthwiseConv1x1Maps,  // depthwise conv collapsing final maps to 1x1
    ExtraConvSeq,          // fourth ConvSequence, then Flatten
};

struct EncoderSpec {
    EncoderKind kind = EncoderKind::ImpalaFamily;
    Tail tail = Tail::Flatten;
    int width_scale = 1;  // tau
    std::vector<int> base_channels = {16, 32, 32};
    int embed_dim = 256;
    std::array<int, 3> input_shape = {3, 64, 64};

    static EncoderSpec impala(int tau) { return {EncoderKind::ImpalaFamily, Tail::Flatten, tau}; }
    static EncoderSpec impoola(int tau) { return {EncoderKind::ImpalaFamily, Tail::GAP, tau}; }
    static EncoderSpec nature(int tau, bool gap = false) {
        return {EncoderKind::Nature, gap ? Tail::GAP : Tail::Flatten, tau};
    }
};

EncoderSpec parse_encoder_spec(const std::string& kind_name, int tau);
std::string encoder_spec_name(const EncoderSpec& spec);

struct LayerSummary {
    std::string name;
    std::vector<int> input_shape;
    std::vector<int> output_shape;
    long param_count = 0;
    std::optional<int> kernel;  // square kernels only
    long multi_adds = 0;
};

struct SummaryTable {
    std::vector<LayerSummary> rows;
    long total_params = 0;
    long total_multi_adds = 0;
    double linear_param_share() const;  // encoder projection layer share, in [0,1]
    std::string to_csv() const;         // layer,input,output,params,kernel,param_pct,multi_adds
};

// Called after every monitored activation (each ReLU output) during forward.
using ActivationHook = std::function<void(const std::string& layer, const Tensor& activation)>;

struct ConvLayer {
    Parameter w, b;
    int stride = 1, padding = 0, groups = 1;
    std::string name;
    Graph::Id forward(Graph& g, Graph::Id x) const;
};

struct LinearLayer {
    Parameter w, b;
    std::string name;
    Graph::Id forward(Graph& g, Graph::Id x) const;
};

struct ConvSequence {
    ConvLayer conv;
    ConvLayer res[2][2];  // two ResBlocks of two convs each
};

// Image encoder producing z in R^embed_dim. Layer graph fixed by EncoderSpec.
class Encoder {
  public:
    explicit Encoder(const EncoderSpec& spec, std::mt19937_64& rng);

    Graph::Id forward(Graph& g, Graph::Id x, const ActivationHook* hook = nullptr) const;
    std::vector<Parameter*> parameters();
    const EncoderSpec& spec() const { return spec_; }
    int embedding_dim() const { return embed_dim_; }  // length of e (pre-projection)

    friend SummaryTable summarize(const class ActorCritic& net);

  private:
    EncoderSpec spec_;
    std::vector<ConvSequence> seqs_;       // ImpalaFamily
    std::vector<ConvLayer> nature_convs_;  // Nature
    std::optional<ConvLayer> depthwise_;   // DepthwiseConv1x1Maps tail
    LinearLayer proj_;
    int embed_dim_ = 0;
};

// Shared encoder with actor (policy logits) and critic (value) heads. The
// same structure doubles as the DQN Q-network by reading the actor head as
// Q-values and ignoring the critic.
class ActorCritic {
  public:
    ActorCritic(const EncoderSpec& spec, int n_actions, uint64_t init_seed);

    struct Out {
        Graph::Id z, logits, value;
    };
    Out forward(Graph& g, Graph::Id x, const ActivationHook* hook = nullptr) const;

    std::vector<Parameter*> parameters();
    int n_actions() const { return n_actions_; }
    const Encoder& encoder() const { return enc_; }

    Checkpoint to_checkpoint() const;
    void load(const Checkpoint& ckpt);
    void copy_from(const ActorCritic& other);  // same-architecture weight copy

    friend SummaryTable summarize(const ActorCritic& net);

  private:
    Encoder enc_;
    LinearLayer actor_, critic_;
    int n_actions_;
};

// Per-layer shape/parameter/multi-add accounting for the full actor-critic
// stack, matching the convention: conv multi-adds = out_elems * (C_in/groups
// * k^2 + 1), linear multi-adds = N_out * (N_in + 1).
SummaryTable summarize(const ActorCritic& net);

// Width-scaled learning rate: eta(tau) = eta(tau=2) * tau / 2.
inline float lr_for_tau(float base_lr_at_tau2, int tau) {
    return base_lr_at_tau2 * static_cast<float>(tau) / 2.0f;
}

// Orthogonal init (rows orthonormal when possible), scaled by gain.
Tensor orthogonal_init(std::vector<int> shape, float gain, std::mt19937_64& rng);

}  // namespace enclab
