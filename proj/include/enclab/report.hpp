#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "enclab/metrics.hpp"
#include "enclab/runlog.hpp"

namespace enclab {

// One completed run directory (config + manifest + RunLog).
struct RunData {
    std::string dir;
    std::string label;  // "<algo>/<encoder>" from the stored config
    std::string env;
    std::int64_t seed = 0;
    std::vector<RunRecord> records;
};

// Throws if the directory is missing manifest.json, config, or the RunLog.
RunData load_run_dir(const std::string& dir);

struct Report {
    // columns: algo,env,split,iqm,ci_lo,ci_hi (one row per label/env/split)
    std::string summary_csv;
    // square matrix of P(row label improves on column label), test split
    std::string poi_csv;
    // training curves: normalized eval score vs step, one polyline per run
    std::string curves_svg;
};

// Final eval record per (run, split) becomes that run's score; runs sharing a
// label and env form the ScoreMatrix strata.
Report build_report(const std::vector<RunData>& runs, int n_resamples, double level, std::uint64_t seed);

}  // namespace enclab
