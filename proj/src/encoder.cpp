#include "enclab/encoder.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace enclab {

namespace {

int conv_out(int size, int k, int stride, int padding) {
    return (size + 2 * padding - k) / stride + 1;
}

ConvLayer make_conv(const std::string& name, int c_in, int c_out, int k, int stride, int padding,
                    int groups, float gain, std::mt19937_64& rng) {
    ConvLayer l;
    l.name = name;
    l.stride = stride;
    l.padding = padding;
    l.groups = groups;
    l.w = Parameter(name + ".w", orthogonal_init({c_out, c_in / groups, k, k}, gain, rng));
    l.b = Parameter(name + ".b", Tensor::zeros({c_out}));
    return l;
}

LinearLayer make_linear(const std::string& name, int n_in, int n_out, float gain,
                        std::mt19937_64& rng) {
    LinearLayer l;
    l.name = name;
    l.w = Parameter(name + ".w", orthogonal_init({n_out, n_in}, gain, rng));
    l.b = Parameter(name + ".b", Tensor::zeros({n_out}));
    return l;
}

const float kHiddenGain = std::sqrt(2.0f);

}  // namespace

Tensor orthogonal_init(std::vector<int> shape, float gain, std::mt19937_64& rng) {
    size_t numel = Tensor::numel_of(shape);
    int rows = shape[0];
    int cols = static_cast<int>(numel) / rows;
    // Orthogonalize the taller orientation, then transpose back if needed.
    int r = std::max(rows, cols), c = std::min(rows, cols);
    Eigen::MatrixXd gauss(r, c);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) gauss(i, j) = dist(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
    Eigen::MatrixXd rmat = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
    for (int j = 0; j < c; ++j)
        if (rmat(j, j) < 0) q.col(j) = -q.col(j);
    Tensor t(std::move(shape));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            double v = rows >= cols ? q(i, j) : q(j, i);
            t.data[static_cast<size_t>(i) * cols + j] = static_cast<float>(gain * v);
        }
    return t;
}

Graph::Id ConvLayer::forward(Graph& g, Graph::Id x) const {
    return g.conv2d(x, g.leaf(const_cast<Parameter&>(w)), g.leaf(const_cast<Parameter&>(b)), stride,
                    padding, groups, name);
}

Graph::Id LinearLayer::forward(Graph& g, Graph::Id x) const {
    return g.linear(x, g.leaf(const_cast<Parameter&>(w)), g.leaf(const_cast<Parameter&>(b)));
}

Encoder::Encoder(const EncoderSpec& spec, std::mt19937_64& rng) : spec_(spec) {
    if (spec.width_scale < 1) throw std::invalid_argument("encoder: width scale must be >= 1");
    const int tau = spec.width_scale;
    const int c_img = spec.input_shape[0];
    int h = spec.input_shape[1], w = spec.input_shape[2];

    if (spec.kind == EncoderKind::Nature) {
        if (spec.tail != Tail::Flatten && spec.tail != Tail::GAP)
            throw std::invalid_argument("encoder: Nature kind supports only Flatten or GAP tails");
        const int filters[3] = {32 * tau, 64 * tau, 64 * tau};
        const int ks[3] = {8, 4, 3};
        const int strides[3] = {4, 2, 1};
        int c_in = c_img;
        for (int i = 0; i < 3; ++i) {
            nature_convs_.push_back(make_conv("enc.conv" + std::to_string(i), c_in, filters[i], ks[i],
                                              strides[i], 0, 1, kHiddenGain, rng));
            c_in = filters[i];
            h = conv_out(h, ks[i], strides[i], 0);
            w = conv_out(w, ks[i], strides[i], 0);
        }
        embed_dim_ = spec.tail == Tail::GAP ? c_in : c_in * h * w;
    } else {
        std::vector<int> channels;
        for (int c : spec.base_channels) channels.push_back(c * tau);
        if (spec.tail == Tail::ExtraConvSeq) channels.push_back(channels.back());
        int c_in = c_img;
        for (size_t s = 0; s < channels.size(); ++s) {
            std::string base = "enc.seq" + std::to_string(s);
            ConvSequence seq;
            seq.conv = make_conv(base + ".conv", c_in, channels[s], 3, 1, 1, 1, kHiddenGain, rng);
            c_in = channels[s];
            h = conv_out(h, 3, 2, 1);  // MaxPool(3, stride 2, pad 1)
            w = conv_out(w, 3, 2, 1);
            for (int r = 0; r < 2; ++r)
                for (int k = 0; k < 2; ++k)
                    seq.res[r][k] = make_conv(base + ".res" + std::to_string(r) + ".conv" + std::to_string(k),
                                              c_in, c_in, 3, 1, 1, 1, kHiddenGain, rng);
            seqs_.push_back(std::move(seq));
        }
        switch (spec.tail) {
            case Tail::Flatten:
            case Tail::ExtraConvSeq:
                embed_dim_ = c_in * h * w;
                break;
            case Tail::GAP:
            case Tail::MaxPool1x1:
                embed_dim_ = c_in;
                break;
            case Tail::AvgPool2x2:
                embed_dim_ = c_in * 4;
                break;
            case Tail::DepthwiseConv1x1Maps:
                depthwise_ = make_conv("enc.depthwise", c_in, c_in, h, h, 0, c_in, kHiddenGain, rng);
                embed_dim_ = c_in;
                break;
        }
    }
    proj_ = make_linear("enc.proj", embed_dim_, spec.embed_dim, kHiddenGain, rng);
}

Graph::Id Encoder::forward(Graph& g, Graph::Id x, const ActivationHook* hook) const {
    auto notify = [&](const std::string& layer, Graph::Id id) {
        if (hook && *hook) (*hook)(layer, g.value(id));
    };
    if (spec_.kind == EncoderKind::Nature) {
        for (size_t i = 0; i < nature_convs_.size(); ++i) {
            x = nature_convs_[i].forward(g, x);
            x = g.relu(x);
            notify(nature_convs_[i].name + ".relu", x);
        }
        if (spec_.tail == Tail::GAP) x = g.adaptive_avg_pool(x, 1, 1);
        x = g.flatten(x);
    } else {
        for (size_t s = 0; s < seqs_.size(); ++s) {
            const ConvSequence& seq = seqs_[s];
            x = seq.conv.forward(g, x);
            x = g.maxpool2d(x, 3, 2, 1);
            for (int r = 0; r < 2; ++r) {
                Graph::Id y = g.relu(x);
                notify(seq.res[r][0].name + ".pre_relu", y);
                y = seq.res[r][0].forward(g, y);
                y = g.relu(y);
                notify(seq.res[r][1].name + ".pre_relu", y);
                y = seq.res[r][1].forward(g, y);
                x = g.add(x, y);
            }
        }
        x = g.relu(x);
        notify("enc.trunk.relu", x);
        switch (spec_.tail) {
            case Tail::Flatten:
            case Tail::ExtraConvSeq:
                break;
            case Tail::GAP:
                x = g.adaptive_avg_pool(x, 1, 1);
                break;
            case Tail::AvgPool2x2:
                x = g.adaptive_avg_pool(x, 2, 2);
                break;
            case Tail::MaxPool1x1: {
                const Tensor& v = g.value(x);
                int off = v.ndim() == 4 ? 1 : 0;
                x = g.maxpool2d(x, v.dim(off + 1), v.dim(off + 1), 0);
                break;
            }
            case Tail::DepthwiseConv1x1Maps:
                x = depthwise_->forward(g, x);
                break;
        }
        x = g.flatten(x);
    }
    x = proj_.forward(g, x);
    x = g.relu(x);
    notify("enc.proj.relu", x);
    return x;
}

std::vector<Parameter*> Encoder::parameters() {
    std::vector<Parameter*> out;
    for (ConvSequence& s : seqs_) {
        out.push_back(&s.conv.w);
        out.push_back(&s.conv.b);
        for (int r = 0; r < 2; ++r)
            for (int k = 0; k < 2; ++k) {
                out.push_back(&s.res[r][k].w);
                out.push_back(&s.res[r][k].b);
            }
    }
    for (ConvLayer& c : nature_convs_) {
        out.push_back(&c.w);
        out.push_back(&c.b);
    }
    if (depthwise_) {
        out.push_back(&depthwise_->w);
        out.push_back(&depthwise_->b);
    }
    out.push_back(&proj_.w);
    out.push_back(&proj_.b);
    return out;
}

ActorCritic::ActorCritic(const EncoderSpec& spec, int n_actions, uint64_t init_seed)
    : enc_([&] {
          std::mt19937_64 rng(init_seed);
          return Encoder(spec, rng);
      }()),
      n_actions_(n_actions) {
    // Head init draws from a stream offset so encoder weights do not depend
    // on the action count.
    std::mt19937_64 rng(init_seed ^ 0x9e3779b97f4a7c15ull);
    actor_ = make_linear("actor", spec.embed_dim, n_actions, 0.01f, rng);
    critic_ = make_linear("critic", spec.embed_dim, 1, 1.0f, rng);
}

ActorCritic::Out ActorCritic::forward(Graph& g, Graph::Id x, const ActivationHook* hook) const {
    Out o;
    o.z = enc_.forward(g, x, hook);
    o.logits = actor_.forward(g, o.z);
    o.value = critic_.forward(g, o.z);
    return o;
}

std::vector<Parameter*> ActorCritic::parameters() {
    std::vector<Parameter*> out = enc_.parameters();
    out.push_back(&actor_.w);
    out.push_back(&actor_.b);
    out.push_back(&critic_.w);
    out.push_back(&critic_.b);
    return out;
}

Checkpoint ActorCritic::to_checkpoint() const {
    Checkpoint ckpt;
    for (Parameter* p : const_cast<ActorCritic*>(this)->parameters()) ckpt.add(p->name, p->value);
    return ckpt;
}

void ActorCritic::load(const Checkpoint& ckpt) {
    for (Parameter* p : parameters()) {
        const Tensor* t = ckpt.find(p->name);
        if (!t) throw std::runtime_error("checkpoint: missing tensor '" + p->name + "'");
        if (t->shape != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for '" + p->name + "'");
        p->value = *t;
    }
}

void ActorCritic::copy_from(const ActorCritic& other) {
    auto dst = parameters();
    auto src = const_cast<ActorCritic&>(other).parameters();
    if (dst.size() != src.size()) throw std::runtime_error("copy_from: architecture mismatch");
    for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

namespace {

struct SummaryBuilder {
    SummaryTable table;

    void conv(const ConvLayer& l, std::vector<int>& shape) {
        const Tensor& w = l.w.value;
        int c_out = w.dim(0), k = w.dim(2);
        std::vector<int> in = shape;
        int h = conv_out(shape[1], k, l.stride, l.padding);
        int wd = conv_out(shape[2], k, l.stride, l.padding);
        shape = {c_out, h, wd};
        long params = static_cast<long>(w.numel() + l.b.value.numel());
        long per_out = static_cast<long>(w.dim(1)) * k * k + 1;
        long multi = static_cast<long>(c_out) * h * wd * per_out;
        table.rows.push_back({l.name, in, shape, params, k, multi});
    }
    void pool(const std::string& name, std::vector<int>& shape, int h_out, int w_out) {
        std::vector<int> in = shape;
        shape = {shape[0], h_out, w_out};
        table.rows.push_back({name, in, shape, 0, std::nullopt, 0});
    }
    void flatten(std::vector<int>& shape) {
        std::vector<int> in = shape;
        int n = 1;
        for (int d : shape) n *= d;
        shape = {n};
        table.rows.push_back({"flatten", in, shape, 0, std::nullopt, 0});
    }
    void linear(const LinearLayer& l, std::vector<int>& shape) {
        std::vector<int> in = shape;
        int n_in = l.w.value.dim(1), n_out = l.w.value.dim(0);
        shape = {n_out};
        long params = static_cast<long>(l.w.value.numel() + l.b.value.numel());
        long multi = static_cast<long>(n_out) * (n_in + 1);
        table.rows.push_back({l.name, in, shape, params, std::nullopt, multi});
        (void)n_in;
    }
};

std::string shape_to_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += " ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

}  // namespace

SummaryTable summarize(const ActorCritic& net) {
    const Encoder& enc = net.enc_;
    SummaryBuilder b;
    std::vector<int> shape(enc.spec_.input_shape.begin(), enc.spec_.input_shape.end());
    if (enc.spec_.kind == EncoderKind::Nature) {
        for (const ConvLayer& c : enc.nature_convs_) b.conv(c, shape);
        if (enc.spec_.tail == Tail::GAP) b.pool("adaptive_avg_pool", shape, 1, 1);
        b.flatten(shape);
    } else {
        for (const ConvSequence& s : enc.seqs_) {
            b.conv(s.conv, shape);
            b.pool(s.conv.name + ".maxpool", shape, conv_out(shape[1], 3, 2, 1),
                   conv_out(shape[2], 3, 2, 1));
            for (int r = 0; r < 2; ++r)
                for (int k = 0; k < 2; ++k) b.conv(s.res[r][k], shape);
        }
        switch (enc.spec_.tail) {
            case Tail::Flatten:
            case Tail::ExtraConvSeq:
                break;
            case Tail::GAP:
                b.pool("adaptive_avg_pool", shape, 1, 1);
                break;
            case Tail::AvgPool2x2:
                b.pool("adaptive_avg_pool", shape, 2, 2);
                break;
            case Tail::MaxPool1x1:
                b.pool("maxpool_global", shape, 1, 1);
                break;
            case Tail::DepthwiseConv1x1Maps:
                b.conv(*enc.depthwise_, shape);
                break;
        }
        b.flatten(shape);
    }
    b.linear(enc.proj_, shape);
    std::vector<int> head_in = shape;
    b.linear(net.actor_, shape);
    shape = head_in;
    b.linear(net.critic_, shape);

    for (const LayerSummary& r : b.table.rows) {
        b.table.total_params += r.param_count;
        b.table.total_multi_adds += r.multi_adds;
    }
    return b.table;
}

double SummaryTable::linear_param_share() const {
    for (const LayerSummary& r : rows)
        if (r.name == "enc.proj")
            return total_params > 0 ? static_cast<double>(r.param_count) / total_params : 0.0;
    return 0.0;
}

std::string SummaryTable::to_csv() const {
    std::ostringstream os;
    os << "layer,input,output,params,kernel,param_pct,multi_adds\n";
    for (const LayerSummary& r : rows) {
        double pct = total_params > 0 ? 100.0 * r.param_count / total_params : 0.0;
        os << r.name << "," << shape_to_str(r.input_shape) << "," << shape_to_str(r.output_shape)
           << "," << r.param_count << ",";
        if (r.kernel) os << "[" << *r.kernel << " " << *r.kernel << "]";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", pct);
        os << "," << buf << "," << r.multi_adds << "\n";
    }
    os << "total,,," << total_params << ",,100.00," << total_multi_adds << "\n";
    return os.str();
}

EncoderSpec parse_encoder_spec(const std::string& kind_name, int tau) {
    EncoderSpec s;
    s.width_scale = tau;
    if (kind_name == "impala") {
        s.tail = Tail::Flatten;
    } else if (kind_name == "impoola") {
        s.tail = Tail::GAP;
    } else if (kind_name == "impala-avgpool2x2") {
        s.tail = Tail::AvgPool2x2;
    } else if (kind_name == "impala-maxpool1x1") {
        s.tail = Tail::MaxPool1x1;
    } else if (kind_name == "impala-depthwise") {
        s.tail = Tail::DepthwiseConv1x1Maps;
    } else if (kind_name == "impala-extraconvseq") {
        s.tail = Tail::ExtraConvSeq;
    } else if (kind_name == "nature") {
        s.kind = EncoderKind::Nature;
        s.tail = Tail::Flatten;
    } else if (kind_name == "nature-gap") {
        s.kind = EncoderKind::Nature;
        s.tail = Tail::GAP;
    } else {
        throw std::invalid_argument("unknown encoder kind '" + kind_name + "'");
    }
    return s;
}

std::string encoder_spec_name(const EncoderSpec& spec) {
    if (spec.kind == EncoderKind::Nature)
        return spec.tail == Tail::GAP ? "nature-gap" : "nature";
    switch (spec.tail) {
        case Tail::Flatten: return "impala";
        case Tail::GAP: return "impoola";
        case Tail::AvgPool2x2: return "impala-avgpool2x2";
        case Tail::MaxPool1x1: return "impala-maxpool1x1";
        case Tail::DepthwiseConv1x1Maps: return "impala-depthwise";
        case Tail::ExtraConvSeq: return "impala-extraconvseq";
    }
    return "unknown";
}

}  // namespace enclab
