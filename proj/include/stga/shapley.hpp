#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stga/graph.hpp"
#include "stga/masking.hpp"
#include "stga/tensor.hpp"

namespace stga {

/// Regression input: one row per evaluated coalition.
struct CoalitionRow {
    std::vector<std::uint8_t> z;  // length M
    double y = 0.0;               // model value on the masked input
};

struct CoalitionDataset {
    int num_players = 0;
    std::vector<CoalitionRow> rows;  // must contain the empty and full coalitions
    double f_empty = 0.0;
    double f_full = 0.0;
};

enum class PlayerKind { Spatial, Temporal };

/// Where a player lives: spatial players carry (lane, cell); temporal
/// players carry a negative offset relative to the window end (-1 = last
/// maskable step).
struct PlayerCoord {
    PlayerKind kind = PlayerKind::Spatial;
    int lane = -1;
    int cell = -1;
    int time_offset = 0;
};

struct ExplanationTarget {
    int node = 0;
    int feature = 0;
    int step = 0;  // horizon step
};

struct FitDiagnostics {
    int n_samples = 0;
    double condition_number = 0.0;
    double residual_norm = 0.0;
};

struct Explanation {
    double phi0 = 0.0;          // base value, equals f_empty by construction
    std::vector<double> phi;    // length M; phi0 + sum(phi) == f_full
    std::vector<PlayerCoord> player_coords;
    ExplanationTarget target;
    FitDiagnostics diagnostics;
};

/// Standard Shapley kernel (M-1) / (C(M,s) * s * (M-s)). Returns +inf at
/// s in {0, M}: those coalitions enter the fit as hard constraints, never
/// as weighted rows.
double shapley_kernel_weight(int num_players, int coalition_size);

/// Kernel-weighted least squares for g(z) = phi0 + sum phi_i z_i with the
/// constraints g(0) = f_empty and g(1) = f_full enforced by variable
/// elimination. Duplicate z rows are aggregated with summed weight.
Explanation fit_wlr(const CoalitionDataset& data);

using CoalitionValueFn = std::function<double(const std::vector<std::uint8_t>&)>;

/// Exact Shapley values by full enumeration of 2^M coalitions, M <= 20.
/// Each subset's value is computed once.
std::vector<double> exact_shapley(const CoalitionValueFn& value, int num_players);

using ModelFn = std::function<double(const TrafficTensor&)>;

/// Full pipeline: sample (or enumerate, when cheaper) coalitions, mask the
/// window, evaluate the model per unique coalition, fit the weighted
/// regression. Deterministic under seed for any thread count.
Explanation explain(const ModelFn& model, const TrafficTensor& window, const LatticeGraph& graph,
                    const PlayerMap& map, int n_samples, std::uint64_t seed,
                    const TrafficTensor& baseline, int target_feature = 0, int target_step = 0,
                    int threads = 1);

struct RankedPlayer {
    int player = 0;  // index into phi / player_coords
    PlayerCoord coords;
    double phi = 0.0;
};

/// Top-k players by |phi| descending, ties broken by player index.
std::vector<RankedPlayer> rank_players(const Explanation& e, int k);

void save_explanation_json(const Explanation& e, const std::string& path);

/// Per-(lane, cell) spatial attribution; cells without a spatial player get 0.
Eigen::MatrixXd spatial_phi_matrix(const Explanation& e, const LatticeGraph& graph);

/// CSV rows (lane, cell, phi) over the whole lattice.
void write_heatmap_csv(const Explanation& e, const LatticeGraph& graph, const std::string& path);

}  // namespace stga
