#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stga/graph.hpp"
#include "stga/tensor.hpp"

namespace stga {

/// A subset of players encoded as two binary masks: spatial bits over the
/// maskable nodes and temporal bits over the maskable window steps.
struct Coalition {
    std::vector<std::uint8_t> spatial_mask;   // length S, 1 = node kept
    std::vector<std::uint8_t> temporal_mask;  // length T, 1 = step kept

    // Concatenation (spatial ‖ temporal), length M = S + T.
    std::vector<std::uint8_t> z() const;
    int num_on() const;
    bool all_on() const;
    bool all_off() const;
};

/// Which nodes and window steps are maskable for one explained node.
/// Anything not listed is always-on context; the explained node itself is
/// never maskable.
struct PlayerMap {
    int explained_node = 0;
    std::vector<int> spatial_players;   // node indices, ascending, excludes explained_node
    std::vector<int> temporal_players;  // window step indices, ascending

    int num_spatial() const { return static_cast<int>(spatial_players.size()); }
    int num_temporal() const { return static_cast<int>(temporal_players.size()); }
    int num_players() const { return num_spatial() + num_temporal(); }

    void validate(int num_nodes, int window_steps) const;
};

/// Build the default player map for a node: spatial players are all nodes
/// within `hops` of it (every other node when hops < 0), temporal players
/// are the window steps, optionally exempting the final step so the value
/// function keeps its anchor. max_temporal_players > 0 keeps only that many
/// trailing eligible steps.
PlayerMap make_player_map(const LatticeGraph& graph, int explained_node, int hops,
                          int window_steps, bool exempt_final_step = true,
                          int max_temporal_players = 0);

/// All 2^(S+T) coalitions in binary counting order (index 0 = empty,
/// last = full). Guarded at S + T <= 22.
std::vector<Coalition> enumerate_coalitions(const PlayerMap& map);

/// n coalitions: empty and full always first, the rest drawn by sampling a
/// size proportional to Shapley-kernel mass and then a uniform subset of
/// that size. Duplicates permitted; deterministic under seed.
std::vector<Coalition> sample_coalitions(const PlayerMap& map, int n, std::uint64_t seed);

/// The what-if input: entry (i,t,f) comes from X when node i is the
/// explained node, or when i's spatial bit and t's temporal bit are both on;
/// otherwise from baseline. Nodes/steps outside the player map count as on.
TrafficTensor apply_mask(const TrafficTensor& X, const PlayerMap& map, const Coalition& c,
                         const TrafficTensor& baseline);

/// Audit export: one row per coalition, id followed by the z bits.
void write_coalitions_csv(const std::vector<Coalition>& coalitions, const std::string& path);

}  // namespace stga
