#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "stga/data_io.hpp"
#include "stga/stgcn.hpp"

namespace stga {

/// Everything a run needs, loadable from one JSON file; every field has a
/// working default so partial configs are fine.
struct RunConfig {
    struct Grid {
        int num_lanes = 4;
        int num_cells = 30;
        double cell_miles = 0.1;
        double dt_seconds = 10.0;
        bool lateral_edges = true;
        // Ingestion extent; NaN means "derive from the data".
        double milepost_min = std::numeric_limits<double>::quiet_NaN();
        double milepost_max = std::numeric_limits<double>::quiet_NaN();
        double time_min = std::numeric_limits<double>::quiet_NaN();
        double time_max = std::numeric_limits<double>::quiet_NaN();
    } grid;

    StgcnHyper hyper;
    TrainConfig train;

    struct Explainer {
        int n_samples = 0;  // 0 = auto: min(2^M, 2048)
        std::uint64_t seed = 1;
        std::string baseline = "zero";  // zero | mean
        int target_node = 0;
        int target_feature = 2;  // speed
        int target_step = 0;     // horizon step
        int hops = 2;            // spatial neighborhood radius; -1 = every node
        int max_temporal_players = 0;  // 0 = all eligible window steps
        int window_start = -1;         // -1 = last full window in the tensor
        bool exempt_final_step = true;
        int top_k = 5;
    } explainer;

    AsmParams asm_params;
    SynthConfig synth;  // lanes/cells taken from grid at run time

    struct Paths {
        std::string input_csv;
        std::string out_dir = "out";
    } paths;

    int threads = 1;  // 0 = hardware concurrency
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json config_to_json(const RunConfig& config);

/// Apply one `--set key.path=value` override; the key must name an existing
/// scalar field and the value must match its type.
void apply_override(RunConfig& config, const std::string& assignment);

/// Cross-field checks shared by every command; throws ConfigError.
void validate_config(const RunConfig& config);

void save_config_json(const RunConfig& config, const std::string& path);

/// The SynthConfig actually used by commands: grid dims + synth knobs.
SynthConfig effective_synth(const RunConfig& config);

}  // namespace stga
