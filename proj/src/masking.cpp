#include "stga/masking.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "stga/errors.hpp"

namespace stga {

namespace {

constexpr int kEnumerationGuard = 22;

// Uniform integer in [0, n) from the raw engine output via rejection;
// avoids the implementation-defined std distributions.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

double next_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

Coalition uniform_coalition(const PlayerMap& map, std::uint8_t fill) {
    Coalition c;
    c.spatial_mask.assign(static_cast<size_t>(map.num_spatial()), fill);
    c.temporal_mask.assign(static_cast<size_t>(map.num_temporal()), fill);
    return c;
}

}  // namespace

std::vector<std::uint8_t> Coalition::z() const {
    std::vector<std::uint8_t> out;
    out.reserve(spatial_mask.size() + temporal_mask.size());
    out.insert(out.end(), spatial_mask.begin(), spatial_mask.end());
    out.insert(out.end(), temporal_mask.begin(), temporal_mask.end());
    return out;
}

int Coalition::num_on() const {
    int acc = 0;
    for (std::uint8_t b : spatial_mask) acc += b != 0;
    for (std::uint8_t b : temporal_mask) acc += b != 0;
    return acc;
}

bool Coalition::all_on() const {
    return num_on() == static_cast<int>(spatial_mask.size() + temporal_mask.size());
}

bool Coalition::all_off() const { return num_on() == 0; }

void PlayerMap::validate(int num_nodes, int window_steps) const {
    if (explained_node < 0 || explained_node >= num_nodes)
        throw InvalidArgumentError("explained node out of range");
    int prev = -1;
    for (int node : spatial_players) {
        if (node < 0 || node >= num_nodes)
            throw InvalidArgumentError("spatial player node out of range");
        if (node == explained_node)
            throw ContractViolationError("explained node listed as a spatial player");
        if (node <= prev)
            throw ContractViolationError("spatial players must be strictly ascending");
        prev = node;
    }
    prev = -1;
    for (int step : temporal_players) {
        if (step < 0 || step >= window_steps)
            throw InvalidArgumentError("temporal player step out of range");
        if (step <= prev)
            throw ContractViolationError("temporal players must be strictly ascending");
        prev = step;
    }
}

PlayerMap make_player_map(const LatticeGraph& graph, int explained_node, int hops,
                          int window_steps, bool exempt_final_step, int max_temporal_players) {
    if (explained_node < 0 || explained_node >= graph.num_nodes())
        throw InvalidArgumentError("explained node out of range");
    if (window_steps < 1) throw InvalidArgumentError("window must have at least one step");

    PlayerMap map;
    map.explained_node = explained_node;

    if (hops < 0) {
        for (int i = 0; i < graph.num_nodes(); ++i)
            if (i != explained_node) map.spatial_players.push_back(i);
    } else {
        std::vector<int> near = neighbors_within(graph, explained_node, hops);
        for (int i : near)
            if (i != explained_node) map.spatial_players.push_back(i);
        std::sort(map.spatial_players.begin(), map.spatial_players.end());
    }

    int last_eligible = window_steps - (exempt_final_step ? 1 : 0);
    int first = 0;
    if (max_temporal_players > 0 && last_eligible - first > max_temporal_players)
        first = last_eligible - max_temporal_players;
    for (int t = first; t < last_eligible; ++t) map.temporal_players.push_back(t);
    return map;
}

std::vector<Coalition> enumerate_coalitions(const PlayerMap& map) {
    const int S = map.num_spatial();
    const int T = map.num_temporal();
    const int M = S + T;
    if (M > kEnumerationGuard)
        throw TooLargeError("cannot enumerate 2^" + std::to_string(M) +
                            " coalitions (limit 2^" + std::to_string(kEnumerationGuard) +
                            "); use sampling instead");
    const std::uint64_t count = std::uint64_t{1} << M;
    std::vector<Coalition> out;
    out.reserve(static_cast<size_t>(count));
    for (std::uint64_t id = 0; id < count; ++id) {
        Coalition c;
        c.spatial_mask.resize(static_cast<size_t>(S));
        c.temporal_mask.resize(static_cast<size_t>(T));
        for (int j = 0; j < S; ++j) c.spatial_mask[j] = (id >> j) & 1u;
        for (int j = 0; j < T; ++j) c.temporal_mask[j] = (id >> (S + j)) & 1u;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<Coalition> sample_coalitions(const PlayerMap& map, int n, std::uint64_t seed) {
    if (n < 2) throw InvalidArgumentError("at least two coalitions required (empty and full)");
    const int S = map.num_spatial();
    const int T = map.num_temporal();
    const int M = S + T;

    std::vector<Coalition> out;
    out.reserve(static_cast<size_t>(n));
    out.push_back(uniform_coalition(map, 0));  // empty
    out.push_back(uniform_coalition(map, 1));  // full

    if (n == 2) return out;
    if (M < 2) {
        // Only the anchors exist; pad deterministically with alternating copies.
        for (int i = 2; i < n; ++i) out.push_back(out[static_cast<size_t>(i % 2)]);
        return out;
    }

    // Kernel mass at size s: (M-1) / (s (M-s)), the per-coalition kernel
    // weight times the number of size-s coalitions.
    std::vector<double> cum(static_cast<size_t>(M - 1));
    double total = 0.0;
    for (int s = 1; s < M; ++s) {
        total += static_cast<double>(M - 1) / (static_cast<double>(s) * (M - s));
        cum[static_cast<size_t>(s - 1)] = total;
    }

    std::mt19937_64 rng(seed);
    std::vector<int> idx(static_cast<size_t>(M));
    for (int i = 2; i < n; ++i) {
        const double u = next_double(rng) * total;
        int s = 1;
        while (s < M - 1 && u >= cum[static_cast<size_t>(s - 1)]) ++s;

        // Partial Fisher-Yates: the first s entries form a uniform subset.
        std::iota(idx.begin(), idx.end(), 0);
        for (int j = 0; j < s; ++j) {
            const int k = j + static_cast<int>(bounded(rng, static_cast<std::uint64_t>(M - j)));
            std::swap(idx[static_cast<size_t>(j)], idx[static_cast<size_t>(k)]);
        }
        Coalition c = uniform_coalition(map, 0);
        for (int j = 0; j < s; ++j) {
            const int p = idx[static_cast<size_t>(j)];
            if (p < S)
                c.spatial_mask[static_cast<size_t>(p)] = 1;
            else
                c.temporal_mask[static_cast<size_t>(p - S)] = 1;
        }
        out.push_back(std::move(c));
    }
    return out;
}

TrafficTensor apply_mask(const TrafficTensor& X, const PlayerMap& map, const Coalition& c,
                         const TrafficTensor& baseline) {
    if (!X.same_shape(baseline))
        throw InvalidDimensionError("baseline shape does not match the input window");
    map.validate(X.num_nodes(), X.num_steps());
    if (static_cast<int>(c.spatial_mask.size()) != map.num_spatial() ||
        static_cast<int>(c.temporal_mask.size()) != map.num_temporal())
        throw InvalidDimensionError("coalition mask lengths do not match the player map");

    // Unlisted nodes/steps are always-on context.
    std::vector<std::uint8_t> node_on(static_cast<size_t>(X.num_nodes()), 1);
    for (size_t j = 0; j < c.spatial_mask.size(); ++j)
        node_on[static_cast<size_t>(map.spatial_players[j])] = c.spatial_mask[j];
    node_on[static_cast<size_t>(map.explained_node)] = 1;
    std::vector<std::uint8_t> step_on(static_cast<size_t>(X.num_steps()), 1);
    for (size_t j = 0; j < c.temporal_mask.size(); ++j)
        step_on[static_cast<size_t>(map.temporal_players[j])] = c.temporal_mask[j];

    TrafficTensor out = X.zeros_like();
    for (int i = 0; i < X.num_nodes(); ++i) {
        const bool is_target = i == map.explained_node;
        for (int t = 0; t < X.num_steps(); ++t) {
            const bool keep = is_target || (node_on[static_cast<size_t>(i)] &&
                                            step_on[static_cast<size_t>(t)]);
            const TrafficTensor& src = keep ? X : baseline;
            for (int f = 0; f < X.num_features(); ++f) out.at(i, t, f) = src.at(i, t, f);
        }
    }
    return out;
}

void write_coalitions_csv(const std::vector<Coalition>& coalitions, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const size_t m = coalitions.empty()
                         ? 0
                         : coalitions.front().spatial_mask.size() +
                               coalitions.front().temporal_mask.size();
    out << "id";
    for (size_t j = 0; j < m; ++j) out << ",z" << j;
    out << "\n";
    for (size_t id = 0; id < coalitions.size(); ++id) {
        out << id;
        for (std::uint8_t b : coalitions[id].z()) out << ',' << static_cast<int>(b);
        out << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace stga
