#pragma once

#include <random>
#include <string>
#include <vector>

#include "enclab/encoder.hpp"
#include "enclab/envs.hpp"

namespace enclab {

struct SensitivityMap {
    int max_shift = 8;  // M; grid spans [-M, M]^2
    std::vector<double> grid;  // row-major over (dy + M) * (2M+1) + (dx + M)
    int sample_count = 0;

    int side() const { return 2 * max_shift + 1; }
    double at(int dx, int dy) const;
    double mean() const;
    std::string to_csv() const;                    // dx,dy,score
    void write_pgm(const std::string& path) const;  // 0 -> 0, 2 -> 255
};

struct DormantLayerReport {
    std::string layer;
    int n_units = 0;    // conv: output channels; linear: units
    int n_dormant = 0;
    double fraction = 0.0;
};

struct DormantReport {
    std::vector<DormantLayerReport> layers;
    int total_units = 0;
    int total_dormant = 0;
    double total_fraction = 0.0;
    double threshold = 0.0;
};

// L1 distance between the action distributions the actor assigns to the two
// observations. Zero for identical inputs, at most 2.
double sensitivity_score(ActorCritic& net, const Observation& x_orig, const Observation& x_trans);

// Averages sensitivity_score between render(state) and the foreground
// shifted by each (dx, dy) over n_states sampled analysis states.
SensitivityMap sensitivity_map(ActorCritic& net, Game& game, const Policy& policy, int n_states,
                               int max_shift, std::mt19937_64& rng);

// Per-layer dormant unit fractions over a probe batch. A unit's score is its
// mean absolute activation divided by the layer mean of those; dormant iff
// score <= threshold. A layer whose activations are all zero counts as fully
// dormant.
DormantReport dormant_fractions(ActorCritic& net, const std::vector<Observation>& probe_batch,
                                double threshold = 0.025, int chunk = 64);

}  // namespace enclab
