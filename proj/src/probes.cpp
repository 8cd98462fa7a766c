#include "enclab/probes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "enclab/distributions.hpp"

namespace enclab {

double SensitivityMap::at(int dx, int dy) const {
    if (std::abs(dx) > max_shift || std::abs(dy) > max_shift)
        throw std::out_of_range("SensitivityMap::at: shift out of range");
    return grid[static_cast<size_t>((dy + max_shift) * side() + (dx + max_shift))];
}

double SensitivityMap::mean() const {
    double s = 0.0;
    for (double v : grid) s += v;
    return s / static_cast<double>(grid.size());
}

std::string SensitivityMap::to_csv() const {
    std::ostringstream out;
    out << "dx,dy,score\n";
    for (int dy = -max_shift; dy <= max_shift; ++dy)
        for (int dx = -max_shift; dx <= max_shift; ++dx) out << dx << ',' << dy << ',' << at(dx, dy) << '\n';
    return out.str();
}

void SensitivityMap::write_pgm(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("SensitivityMap::write_pgm: cannot open " + path);
    out << "P5\n" << side() << ' ' << side() << "\n255\n";
    for (double v : grid) {
        const int px = static_cast<int>(std::lround(std::clamp(v, 0.0, 2.0) / 2.0 * 255.0));
        out.put(static_cast<char>(px));
    }
}

namespace {

// Softmax action probabilities for a batch of observations.
Tensor actor_probs(ActorCritic& net, const std::vector<Observation>& obs) {
    Graph g;
    const ActorCritic::Out out = net.forward(g, g.input(obs_to_input(obs)));
    const Tensor& logits = g.value(out.logits);
    if (!logits.all_finite()) throw std::runtime_error("sensitivity: non-finite logits");
    return softmax(logits);
}

double l1_rows(const Tensor& probs, int row_a, int row_b, int a) {
    const float* p = probs.ptr() + static_cast<size_t>(row_a) * a;
    const float* q = probs.ptr() + static_cast<size_t>(row_b) * a;
    double s = 0.0;
    for (int i = 0; i < a; ++i) s += std::abs(static_cast<double>(p[i]) - q[i]);
    return s;
}

}  // namespace

double sensitivity_score(ActorCritic& net, const Observation& x_orig, const Observation& x_trans) {
    if (x_orig.size() != x_trans.size()) throw std::invalid_argument("sensitivity_score: shape mismatch");
    const Tensor probs = actor_probs(net, {x_orig, x_trans});
    return l1_rows(probs, 0, 1, net.n_actions());
}

SensitivityMap sensitivity_map(ActorCritic& net, Game& game, const Policy& policy, int n_states,
                               int max_shift, std::mt19937_64& rng) {
    if (n_states <= 0) throw std::invalid_argument("sensitivity_map: n_states must be positive");
    if (max_shift < 0 || max_shift > 8) throw std::invalid_argument("sensitivity_map: max_shift must be in [0, 8]");
    SensitivityMap map;
    map.max_shift = max_shift;
    map.sample_count = n_states;
    const int side = map.side();
    map.grid.assign(static_cast<size_t>(side) * side, 0.0);

    const int a = net.n_actions();
    for (int s = 0; s < n_states; ++s) {
        game.set_state(sample_analysis_state(game, policy, rng));
        // batch: reference render first, then all shifts in scan order
        std::vector<Observation> batch;
        batch.reserve(static_cast<size_t>(side) * side + 1);
        batch.push_back(game.render());
        for (int dy = -max_shift; dy <= max_shift; ++dy)
            for (int dx = -max_shift; dx <= max_shift; ++dx) batch.push_back(game.render_translated(dx, dy));
        // chunked forward to bound tape memory
        constexpr int kChunk = 72;
        std::vector<float> ref;  // probs of the unshifted render
        size_t cell = 0;
        for (size_t o = 0; o < batch.size(); o += kChunk) {
            const size_t e = std::min(batch.size(), o + kChunk);
            const Tensor probs = actor_probs(net, {batch.begin() + static_cast<long>(o), batch.begin() + static_cast<long>(e)});
            size_t row = 0;
            if (o == 0) {
                ref.assign(probs.ptr(), probs.ptr() + a);
                row = 1;
            }
            for (; row < e - o; ++row, ++cell) {
                const float* q = probs.ptr() + row * static_cast<size_t>(a);
                double d = 0.0;
                for (int i = 0; i < a; ++i) d += std::abs(static_cast<double>(ref[static_cast<size_t>(i)]) - q[i]);
                map.grid[cell] += d;
            }
        }
    }
    for (double& v : map.grid) v /= static_cast<double>(n_states);
    // identical render and floating-point determinism make the center cell 0
    // already; pin it against any future renderer drift
    map.grid[static_cast<size_t>(max_shift) * side + static_cast<size_t>(max_shift)] = 0.0;
    return map;
}

DormantReport dormant_fractions(ActorCritic& net, const std::vector<Observation>& probe_batch, double threshold,
                                int chunk) {
    if (probe_batch.empty()) throw std::invalid_argument("dormant_fractions: empty probe batch");
    if (threshold < 0.0) throw std::invalid_argument("dormant_fractions: negative threshold");

    struct Acc {
        std::vector<double> abs_sum;  // per unit
        long long count = 0;          // samples per unit (batch x spatial)
    };
    std::map<std::string, Acc> acc;
    std::vector<std::string> order;  // forward order, first appearance

    ActivationHook hook = [&](const std::string& layer, const Tensor& act) {
        const int ndim = act.ndim();
        int n = 1, units, spatial = 1;
        if (ndim == 4) {
            n = act.dim(0);
            units = act.dim(1);
            spatial = act.dim(2) * act.dim(3);
        } else if (ndim == 3) {
            units = act.dim(0);
            spatial = act.dim(1) * act.dim(2);
        } else if (ndim == 2) {
            n = act.dim(0);
            units = act.dim(1);
        } else {
            units = act.dim(0);
        }
        auto it = acc.find(layer);
        if (it == acc.end()) {
            it = acc.emplace(layer, Acc{std::vector<double>(static_cast<size_t>(units), 0.0), 0}).first;
            order.push_back(layer);
        }
        Acc& a = it->second;
        if (ndim == 2 || ndim == 1) {
            for (int b = 0; b < n; ++b)
                for (int u = 0; u < units; ++u)
                    a.abs_sum[static_cast<size_t>(u)] +=
                        std::abs(static_cast<double>(act.data[static_cast<size_t>(b) * units + u]));
            a.count += n;
        } else {
            for (int b = 0; b < n; ++b)
                for (int u = 0; u < units; ++u) {
                    const float* p = act.ptr() + (static_cast<size_t>(b) * units + u) * static_cast<size_t>(spatial);
                    double s = 0.0;
                    for (int k = 0; k < spatial; ++k) s += std::abs(static_cast<double>(p[k]));
                    a.abs_sum[static_cast<size_t>(u)] += s;
                }
            a.count += static_cast<long long>(n) * spatial;
        }
    };

    for (size_t o = 0; o < probe_batch.size(); o += static_cast<size_t>(chunk)) {
        const size_t e = std::min(probe_batch.size(), o + static_cast<size_t>(chunk));
        std::vector<Observation> part(probe_batch.begin() + static_cast<long>(o),
                                      probe_batch.begin() + static_cast<long>(e));
        Graph g;
        net.forward(g, g.input(obs_to_input(part)), &hook);
    }

    DormantReport rep;
    rep.threshold = threshold;
    for (const std::string& layer : order) {
        const Acc& a = acc.at(layer);
        const size_t units = a.abs_sum.size();
        double layer_mean = 0.0;
        for (double s : a.abs_sum) layer_mean += s / static_cast<double>(a.count);
        layer_mean /= static_cast<double>(units);

        DormantLayerReport lr;
        lr.layer = layer;
        lr.n_units = static_cast<int>(units);
        for (double s : a.abs_sum) {
            const double unit_mean = s / static_cast<double>(a.count);
            const bool dormant = layer_mean == 0.0 || unit_mean / layer_mean <= threshold;
            if (dormant) lr.n_dormant += 1;
        }
        lr.fraction = static_cast<double>(lr.n_dormant) / static_cast<double>(lr.n_units);
        rep.total_units += lr.n_units;
        rep.total_dormant += lr.n_dormant;
        rep.layers.push_back(std::move(lr));
    }
    rep.total_fraction = rep.total_units ? static_cast<double>(rep.total_dormant) / rep.total_units : 0.0;
    return rep;
}

}  // namespace enclab
