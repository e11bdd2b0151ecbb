#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stga/errors.hpp"
#include "stga/shapley.hpp"

using namespace stga;

namespace {

// Evaluate a coalition value function on every enumerated coalition of a
// flat M-player map and package the result for fit_wlr.
CoalitionDataset full_dataset(const CoalitionValueFn& value, int players) {
    CoalitionDataset d;
    d.num_players = players;
    for (uint32_t mask = 0; mask < (1u << players); ++mask) {
        CoalitionRow row;
        row.z.resize(size_t(players));
        for (int i = 0; i < players; ++i) row.z[size_t(i)] = (mask >> i) & 1u;
        row.y = value(row.z);
        d.rows.push_back(row);
    }
    d.f_empty = d.rows.front().y;
    d.f_full = d.rows.back().y;
    return d;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

}  // namespace

TEST_CASE("kernel weight: pinned values, symmetry, infinite anchors") {
    CHECK(shapley_kernel_weight(3, 1) == doctest::Approx(1.0 / 3.0));
    CHECK(shapley_kernel_weight(3, 2) == doctest::Approx(1.0 / 3.0));
    CHECK(shapley_kernel_weight(2, 1) == doctest::Approx(0.5));
    for (int m = 2; m <= 14; ++m) {
        for (int s = 1; s < m; ++s) {
            double w = shapley_kernel_weight(m, s);
            CHECK(w > 0.0);
            CHECK(w == doctest::Approx(shapley_kernel_weight(m, m - s)).epsilon(1e-12));
        }
        CHECK(std::isinf(shapley_kernel_weight(m, 0)));
        CHECK(std::isinf(shapley_kernel_weight(m, m)));
    }
    CHECK_THROWS_AS(shapley_kernel_weight(3, -1), InvalidArgumentError);
    CHECK_THROWS_AS(shapley_kernel_weight(3, 4), InvalidArgumentError);
}

TEST_CASE("exact shapley: two-player hand enumeration") {
    auto value = [](const std::vector<std::uint8_t>& z) {
        if (z[0] && z[1]) return 4.0;
        if (z[0]) return 1.0;
        if (z[1]) return 2.0;
        return 0.0;
    };
    auto phi = exact_shapley(value, 2);
    CHECK(phi[0] == doctest::Approx(1.5));
    CHECK(phi[1] == doctest::Approx(2.5));
}

TEST_CASE("exact shapley: symmetry, dummy, efficiency on random games") {
    std::mt19937_64 rng(7);
    for (int players = 2; players <= 6; ++players) {
        for (int rep = 0; rep < 10; ++rep) {
            oracle::TableGame g = oracle::random_game(players, rng);
            auto phi = exact_shapley(g, players);
            double sum = 0.0;
            for (double p : phi) sum += p;
            std::vector<std::uint8_t> empty(size_t(players), 0), full(size_t(players), 1);
            CHECK(sum == doctest::Approx(g(full) - g(empty)).epsilon(1e-10));
        }
    }
    // value depends only on |s| -> all phi equal
    auto size_game = [](const std::vector<std::uint8_t>& z) {
        int on = 0;
        for (auto b : z) on += b;
        return double(on * on);
    };
    auto phi = exact_shapley(size_game, 5);
    for (double p : phi) CHECK(p == doctest::Approx(phi[0]).epsilon(1e-12));
    // player 3 never affects the value -> dummy
    auto dummy_game = [](const std::vector<std::uint8_t>& z) {
        return 3.0 * z[0] + 7.0 * z[1] * z[2];
    };
    auto dphi = exact_shapley(dummy_game, 4);
    CHECK(dphi[3] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(dphi[0] == doctest::Approx(3.0));
}

TEST_CASE("exact shapley: agrees with the permutation definition") {
    std::mt19937_64 rng(17);
    for (int players = 2; players <= 6; ++players) {
        oracle::TableGame g = oracle::random_game(players, rng);
        auto fast = exact_shapley(g, players);
        auto slow = oracle::shapley_by_permutations(g, players);
        CHECK(max_abs_diff(fast, slow) < 1e-12);
    }
}

TEST_CASE("exact shapley: linear in the value function") {
    std::mt19937_64 rng(23);
    const int players = 5;
    oracle::TableGame u = oracle::random_game(players, rng);
    oracle::TableGame w = oracle::random_game(players, rng);
    const double a = 2.25, b = -0.75;
    auto mix = [&](const std::vector<std::uint8_t>& z) { return a * u(z) + b * w(z); };
    auto pm = exact_shapley(mix, players);
    auto pu = exact_shapley(u, players);
    auto pw = exact_shapley(w, players);
    for (int i = 0; i < players; ++i)
        CHECK(pm[size_t(i)] ==
              doctest::Approx(a * pu[size_t(i)] + b * pw[size_t(i)]).epsilon(1e-10));
}

TEST_CASE("exact shapley: player-count guard") {
    auto zero = [](const std::vector<std::uint8_t>&) { return 0.0; };
    CHECK_THROWS_AS(exact_shapley(zero, 21), TooLargeError);
    CHECK_THROWS_AS(exact_shapley(zero, 0), InvalidArgumentError);
}

TEST_CASE("fit_wlr: two-player full enumeration reproduces the hand values") {
    auto value = [](const std::vector<std::uint8_t>& z) {
        if (z[0] && z[1]) return 4.0;
        if (z[0]) return 1.0;
        if (z[1]) return 2.0;
        return 0.0;
    };
    Explanation e = fit_wlr(full_dataset(value, 2));
    CHECK(e.phi0 == doctest::Approx(0.0));
    CHECK(e.phi[0] == doctest::Approx(1.5));
    CHECK(e.phi[1] == doctest::Approx(2.5));
    CHECK(e.diagnostics.n_samples == 4);
}

TEST_CASE("fit_wlr: additive and constant games are recovered exactly") {
    const std::vector<double> a{2.0, -1.0, 0.5, 3.0};
    auto additive = [&](const std::vector<std::uint8_t>& z) {
        double s = 10.0;
        for (size_t i = 0; i < z.size(); ++i) s += a[i] * z[i];
        return s;
    };
    Explanation e = fit_wlr(full_dataset(additive, 4));
    CHECK(e.phi0 == doctest::Approx(10.0));
    for (int i = 0; i < 4; ++i) CHECK(e.phi[size_t(i)] == doctest::Approx(a[size_t(i)]).epsilon(1e-10));

    auto constant = [](const std::vector<std::uint8_t>&) { return 42.0; };
    Explanation c = fit_wlr(full_dataset(constant, 3));
    CHECK(c.phi0 == doctest::Approx(42.0));
    for (double p : c.phi) CHECK(p == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("fit_wlr: full enumeration equals exact shapley on random games") {
    std::mt19937_64 rng(31);
    for (int players : {2, 3, 5, 8, 10}) {
        for (int rep = 0; rep < 3; ++rep) {
            oracle::TableGame g = oracle::random_game(players, rng, -5.0, 5.0);
            Explanation e = fit_wlr(full_dataset(g, players));
            auto phi = exact_shapley(g, players);
            CHECK(max_abs_diff(e.phi, phi) < 1e-8);
            double sum = e.phi0;
            for (double p : e.phi) sum += p;
            std::vector<std::uint8_t> full(size_t(players), 1);
            CHECK(sum == doctest::Approx(g(full)).epsilon(1e-6));
        }
    }
}

TEST_CASE("fit_wlr: efficiency and base value hold on sampled datasets too") {
    std::mt19937_64 rng(37);
    const int players = 9;
    oracle::TableGame g = oracle::random_game(players, rng);
    CoalitionDataset d;
    d.num_players = players;
    std::uniform_int_distribution<uint32_t> pick(1, (1u << players) - 2);
    CoalitionRow row;
    row.z.assign(size_t(players), 0);
    d.rows.push_back(row);  // empty
    row.z.assign(size_t(players), 1);
    d.rows.push_back(row);  // full
    for (int k = 0; k < 60; ++k) {
        uint32_t mask = pick(rng);
        CoalitionRow r;
        r.z.resize(size_t(players));
        for (int i = 0; i < players; ++i) r.z[size_t(i)] = (mask >> i) & 1u;
        d.rows.push_back(r);
    }
    for (auto& rr : d.rows) rr.y = g(rr.z);
    d.f_empty = g(std::vector<std::uint8_t>(size_t(players), 0));
    d.f_full = g(std::vector<std::uint8_t>(size_t(players), 1));
    Explanation e = fit_wlr(d);
    CHECK(e.phi0 == doctest::Approx(d.f_empty).epsilon(1e-9));
    double sum = e.phi0;
    for (double p : e.phi) sum += p;
    CHECK(sum == doctest::Approx(d.f_full).epsilon(1e-6));
    CHECK(e.diagnostics.condition_number >= 1.0);
}

TEST_CASE("fit_wlr: too few distinct rows is a singular system") {
    auto value = [](const std::vector<std::uint8_t>& z) { return double(z[0]); };
    CoalitionDataset d;
    d.num_players = 3;
    CoalitionRow row;
    row.z = {0, 0, 0};
    row.y = 0.0;
    d.rows.push_back(row);
    row.z = {1, 1, 1};
    row.y = 1.0;
    d.rows.push_back(row);
    row.z = {1, 0, 0};
    row.y = value(row.z);
    d.rows.push_back(row);
    d.f_empty = 0.0;
    d.f_full = 1.0;
    CHECK_THROWS_AS(fit_wlr(d), SingularSystemError);  // 3 distinct rows < M+1 = 4
}

TEST_CASE("explain: constant model yields zero attributions") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    std::mt19937_64 rng(41);
    TrafficTensor window = oracle::random_tensor(6, 5, 3, rng, 1.0, 2.0);
    PlayerMap map = make_player_map(g, 0, 1, 5);
    auto model = [](const TrafficTensor&) { return 3.25; };
    Explanation e = explain(model, window, g, map, 2048, 1, window.zeros_like());
    CHECK(e.phi0 == doctest::Approx(3.25));
    for (double p : e.phi) CHECK(p == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("explain: row-sum model matches exact shapley under enumeration") {
    LatticeGraph g = build_lattice_graph(2, 2, true);
    std::mt19937_64 rng(43);
    TrafficTensor window = oracle::random_tensor(4, 4, 3, rng, 0.5, 1.5);
    PlayerMap map = make_player_map(g, 1, -1, 4, true);  // S=3, T=3 -> M=6
    REQUIRE(map.num_players() == 6);
    TrafficTensor zero = window.zeros_like();
    auto model = [](const TrafficTensor& x) {
        double s = 0.0;
        for (int i = 0; i < x.num_nodes(); ++i)
            for (int t = 0; t < x.num_steps(); ++t) s += x.at(i, t, 0);
        return s;
    };
    Explanation e = explain(model, window, g, map, 1 << 6, 9, zero);

    auto value = [&](const std::vector<std::uint8_t>& z) {
        Coalition c;
        c.spatial_mask.assign(z.begin(), z.begin() + map.num_spatial());
        c.temporal_mask.assign(z.begin() + map.num_spatial(), z.end());
        return model(apply_mask(window, map, c, zero));
    };
    auto phi = exact_shapley(value, map.num_players());
    CHECK(max_abs_diff(e.phi, phi) < 1e-8);
}

TEST_CASE("explain: seeded runs reproduce phi bit-for-bit, any thread count") {
    LatticeGraph g = build_lattice_graph(2, 4, true);
    std::mt19937_64 rng(47);
    TrafficTensor window = oracle::random_tensor(8, 6, 3, rng, 0.5, 1.5);
    PlayerMap map = make_player_map(g, 2, -1, 6, true);  // M = 7 + 5 = 12
    TrafficTensor zero = window.zeros_like();
    auto model = [](const TrafficTensor& x) {
        double s = 0.0;
        for (int i = 0; i < x.num_nodes(); ++i) s += x.at(i, x.num_steps() - 1, 2);
        return s * s;
    };
    Explanation a = explain(model, window, g, map, 300, 11, zero, 2, 0, 1);
    Explanation b = explain(model, window, g, map, 300, 11, zero, 2, 0, 1);
    Explanation c = explain(model, window, g, map, 300, 11, zero, 2, 0, 7);
    CHECK(a.phi == b.phi);
    CHECK(a.phi == c.phi);
    Explanation d = explain(model, window, g, map, 300, 12, zero, 2, 0, 1);
    CHECK(a.phi != d.phi);  // different seed, sampled regime
}

TEST_CASE("explain: non-finite model values name the coalition") {
    LatticeGraph g = build_lattice_graph(2, 2, true);
    TrafficTensor window(4, 4, 3);
    for (double& v : window.values()) v = 1.0;
    PlayerMap map = make_player_map(g, 0, 1, 4);
    auto model = [](const TrafficTensor& x) {
        double s = 0.0;
        for (double v : x.values()) s += v;
        return s < 30.0 ? std::numeric_limits<double>::quiet_NaN() : s;
    };
    CHECK_THROWS_AS(explain(model, window, g, map, 64, 3, window.zeros_like()), EvaluationError);
}

TEST_CASE("explain: player coordinates are lattice positions and time offsets") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    TrafficTensor window(6, 5, 3);
    for (double& v : window.values()) v = 1.0;
    PlayerMap map = make_player_map(g, 0, 1, 5, true);
    auto model = [](const TrafficTensor& x) { return x.at(0, 0, 0); };
    Explanation e = explain(model, window, g, map, 1 << map.num_players(), 1, window.zeros_like(),
                            1, 0);
    REQUIRE(e.player_coords.size() == size_t(map.num_players()));
    for (int k = 0; k < map.num_spatial(); ++k) {
        const PlayerCoord& pc = e.player_coords[size_t(k)];
        CHECK(pc.kind == PlayerKind::Spatial);
        CHECK(g.node_index(pc.lane, pc.cell) == map.spatial_players[size_t(k)]);
    }
    for (int k = 0; k < map.num_temporal(); ++k) {
        const PlayerCoord& pc = e.player_coords[size_t(map.num_spatial() + k)];
        CHECK(pc.kind == PlayerKind::Temporal);
        // steps 0..3 of a 5-step window -> offsets -5..-2
        CHECK(pc.time_offset == map.temporal_players[size_t(k)] - 5);
    }
    CHECK(e.target.node == 0);
    CHECK(e.target.feature == 1);
    CHECK(e.target.step == 0);
}

TEST_CASE("rank_players: magnitude order with index tie-break") {
    Explanation e;
    e.phi = {0.0, 5.0, -7.0};
    e.player_coords.resize(3);
    auto top = rank_players(e, 3);
    REQUIRE(top.size() == 3);
    CHECK(top[0].player == 2);
    CHECK(top[1].player == 1);
    CHECK(top[2].player == 0);
    CHECK(top[0].phi == -7.0);

    Explanation zero;
    zero.phi = {0.0, 0.0, 0.0};
    zero.player_coords.resize(3);
    auto flat = rank_players(zero, 3);
    CHECK(flat[0].player == 0);
    CHECK(flat[1].player == 1);
    CHECK(flat[2].player == 2);

    CHECK(rank_players(e, 0).empty());
    CHECK(rank_players(e, 2).size() == 2);
    CHECK_THROWS_AS(rank_players(e, 4), InvalidArgumentError);
}

TEST_CASE("explanation JSON and heatmap CSV round trip") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    Explanation e;
    e.phi0 = 1.5;
    e.phi = {0.25, -0.5};
    PlayerCoord a;
    a.kind = PlayerKind::Spatial;
    a.lane = 1;
    a.cell = 2;
    PlayerCoord b;
    b.kind = PlayerKind::Temporal;
    b.time_offset = -3;
    e.player_coords = {a, b};
    e.target.node = 3;
    e.target.feature = 2;
    e.target.step = 0;
    e.diagnostics.n_samples = 4;
    e.diagnostics.condition_number = 1.0;

    const std::string jpath = "explanation_test.json";
    save_explanation_json(e, jpath);
    std::ifstream in(jpath);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(text.find("\"phi0\"") != std::string::npos);
    CHECK(text.find("\"spatial\"") != std::string::npos);
    CHECK(text.find("\"temporal\"") != std::string::npos);
    std::remove(jpath.c_str());

    Eigen::MatrixXd m = spatial_phi_matrix(e, g);
    REQUIRE(m.rows() == 2);
    REQUIRE(m.cols() == 3);
    CHECK(m(1, 2) == 0.25);
    CHECK(m.sum() == doctest::Approx(0.25));  // temporal player doesn't land on the map

    const std::string hpath = "heatmap_test.csv";
    write_heatmap_csv(e, g, hpath);
    std::ifstream hin(hpath);
    std::string line;
    std::getline(hin, line);
    CHECK(line == "lane,cell,phi");
    int rows = 0;
    while (std::getline(hin, line)) ++rows;
    CHECK(rows == 6);
    std::remove(hpath.c_str());
}
