#include "stga/shapley.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include "json.hpp"
#include "stga/errors.hpp"

namespace stga {

namespace {

using json = nlohmann::ordered_json;

// C(n, k) as double; grows monotonically, overflow saturates to +inf.
double binom_double(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    k = std::min(k, n - k);
    double acc = 1.0;
    for (int j = 1; j <= k; ++j) acc = acc * static_cast<double>(n - k + j) / j;
    return acc;
}

int coalition_size(const std::vector<std::uint8_t>& z) {
    int acc = 0;
    for (std::uint8_t b : z) acc += b != 0;
    return acc;
}

}  // namespace

double shapley_kernel_weight(int num_players, int coalition_size) {
    if (num_players < 1) throw InvalidArgumentError("player count must be >= 1");
    if (coalition_size < 0 || coalition_size > num_players)
        throw InvalidArgumentError("coalition size out of range");
    if (coalition_size == 0 || coalition_size == num_players)
        return std::numeric_limits<double>::infinity();
    const double M = num_players;
    const double s = coalition_size;
    return (M - 1.0) / (binom_double(num_players, coalition_size) * s * (M - s));
}

Explanation fit_wlr(const CoalitionDataset& data) {
    const int M = data.num_players;
    if (M < 1) throw InvalidArgumentError("dataset must have at least one player");
    for (const CoalitionRow& r : data.rows)
        if (static_cast<int>(r.z.size()) != M)
            throw InvalidDimensionError("coalition row length does not match player count");

    // Aggregate duplicates; track the anchors.
    std::map<std::vector<std::uint8_t>, std::pair<double, double>> agg;  // z -> (weight, y)
    bool saw_empty = false, saw_full = false;
    for (const CoalitionRow& r : data.rows) {
        const int s = coalition_size(r.z);
        if (s == 0) {
            saw_empty = true;
            continue;
        }
        if (s == M) {
            saw_full = true;
            continue;
        }
        const double w = shapley_kernel_weight(M, s);
        auto [it, inserted] = agg.try_emplace(r.z, 0.0, r.y);
        it->second.first += w;
    }
    if (!saw_empty || !saw_full)
        throw InvalidArgumentError("dataset must contain the empty and full coalitions");

    const size_t distinct = agg.size() + 2;
    if (distinct < static_cast<size_t>(M) + 1)
        throw SingularSystemError(
            "only " + std::to_string(distinct) + " distinct coalitions for " +
                std::to_string(M) + " players; draw more samples",
            std::numeric_limits<double>::infinity());

    Explanation out;
    out.phi0 = data.f_empty;
    out.phi.assign(static_cast<size_t>(M), 0.0);
    out.diagnostics.n_samples = static_cast<int>(data.rows.size());
    const double delta = data.f_full - data.f_empty;

    if (M == 1) {
        out.phi[0] = delta;
        out.diagnostics.condition_number = 1.0;
        out.diagnostics.residual_norm = 0.0;
        return out;
    }

    // Eliminate phi0 = f_empty and phi_{M-1} = delta - sum(others):
    //   g(z) - f_empty - z_{M-1} delta = sum_{i<M-1} phi_i (z_i - z_{M-1})
    const int n_unknown = M - 1;
    const int n_rows = static_cast<int>(agg.size());
    Eigen::MatrixXd design(n_rows, n_unknown);
    Eigen::VectorXd rhs(n_rows), weight(n_rows);
    {
        int r = 0;
        for (const auto& [z, wy] : agg) {
            const double zl = z[static_cast<size_t>(M - 1)] ? 1.0 : 0.0;
            for (int i = 0; i < n_unknown; ++i)
                design(r, i) = (z[static_cast<size_t>(i)] ? 1.0 : 0.0) - zl;
            rhs(r) = wy.second - data.f_empty - zl * delta;
            weight(r) = wy.first;
            ++r;
        }
    }

    const Eigen::MatrixXd normal =
        design.transpose() * weight.asDiagonal() * design;
    const Eigen::VectorXd moment = design.transpose() * (weight.array() * rhs.array()).matrix();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    const double cond = (lo > 0.0 && hi > 0.0) ? hi / lo
                                               : std::numeric_limits<double>::infinity();
    out.diagnostics.condition_number = cond;

    Eigen::VectorXd reduced;
    if (std::isfinite(cond) && cond <= 1e10) {
        reduced = normal.ldlt().solve(moment);
    } else {
        // Rank-revealing fallback on the weighted design itself.
        const Eigen::VectorXd sw = weight.array().sqrt();
        const Eigen::MatrixXd wd = sw.asDiagonal() * design;
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wd);
        if (qr.rank() < n_unknown)
            throw SingularSystemError(
                "weighted regression system is rank-deficient; draw more samples", cond);
        reduced = qr.solve((sw.array() * rhs.array()).matrix());
    }

    double tail = delta;
    for (int i = 0; i < n_unknown; ++i) {
        out.phi[static_cast<size_t>(i)] = reduced(i);
        tail -= reduced(i);
    }
    out.phi[static_cast<size_t>(M - 1)] = tail;

    const Eigen::VectorXd resid = design * reduced - rhs;
    out.diagnostics.residual_norm =
        std::sqrt((weight.array() * resid.array().square()).sum());
    return out;
}

std::vector<double> exact_shapley(const CoalitionValueFn& value, int num_players) {
    if (num_players < 1) throw InvalidArgumentError("player count must be >= 1");
    if (num_players > 20)
        throw TooLargeError("exact enumeration limited to 20 players (got " +
                            std::to_string(num_players) + ")");
    const int M = num_players;
    const std::uint64_t n = std::uint64_t{1} << M;

    std::vector<double> val(n);
    std::vector<std::uint8_t> z(static_cast<size_t>(M));
    for (std::uint64_t id = 0; id < n; ++id) {
        for (int j = 0; j < M; ++j) z[static_cast<size_t>(j)] = (id >> j) & 1u;
        val[id] = value(z);
    }

    // c(s) = s! (M-s-1)! / M! = 1 / (M * C(M-1, s))
    std::vector<double> coef(static_cast<size_t>(M));
    for (int s = 0; s < M; ++s)
        coef[static_cast<size_t>(s)] = 1.0 / (M * binom_double(M - 1, s));

    std::vector<double> phi(static_cast<size_t>(M), 0.0);
    for (std::uint64_t id = 0; id < n; ++id) {
        const int s = std::popcount(id);
        for (int i = 0; i < M; ++i) {
            const std::uint64_t bit = std::uint64_t{1} << i;
            if (id & bit) continue;
            phi[static_cast<size_t>(i)] += coef[static_cast<size_t>(s)] * (val[id | bit] - val[id]);
        }
    }
    return phi;
}

Explanation explain(const ModelFn& model, const TrafficTensor& window, const LatticeGraph& graph,
                    const PlayerMap& map, int n_samples, std::uint64_t seed,
                    const TrafficTensor& baseline, int target_feature, int target_step,
                    int threads) {
    map.validate(window.num_nodes(), window.num_steps());
    if (window.num_nodes() != graph.num_nodes())
        throw InvalidDimensionError("window node count does not match the graph");
    const int M = map.num_players();
    if (M < 1) throw InvalidArgumentError("player map has no players");

    // Full enumeration when it is not more expensive than the sample budget.
    std::vector<Coalition> coalitions;
    if (M <= 22 && (std::uint64_t{1} << M) <= static_cast<std::uint64_t>(n_samples))
        coalitions = enumerate_coalitions(map);
    else
        coalitions = sample_coalitions(map, n_samples, seed);

    // Evaluate each distinct coalition once; rows keyed by first occurrence
    // so the result is identical for any worker count.
    std::map<std::vector<std::uint8_t>, int> unique_of;
    std::vector<int> row_unique(coalitions.size());
    std::vector<const Coalition*> uniques;
    std::vector<int> first_row;
    for (size_t r = 0; r < coalitions.size(); ++r) {
        auto [it, inserted] =
            unique_of.try_emplace(coalitions[r].z(), static_cast<int>(uniques.size()));
        if (inserted) {
            uniques.push_back(&coalitions[r]);
            first_row.push_back(static_cast<int>(r));
        }
        row_unique[r] = it->second;
    }

    std::vector<double> y(uniques.size());
    std::vector<std::exception_ptr> errors(uniques.size());
    auto eval_one = [&](size_t u) {
        try {
            const TrafficTensor masked = apply_mask(window, map, *uniques[u], baseline);
            const double v = model(masked);
            if (!std::isfinite(v))
                throw EvaluationError("model returned a non-finite value for coalition " +
                                          std::to_string(first_row[static_cast<size_t>(u)]),
                                      first_row[static_cast<size_t>(u)]);
            y[u] = v;
        } catch (...) {
            errors[u] = std::current_exception();
        }
    };

    const int workers = std::max(1, threads);
    if (workers == 1 || uniques.size() < 2) {
        for (size_t u = 0; u < uniques.size(); ++u) eval_one(u);
    } else {
        std::vector<std::thread> pool;
        const int n_threads = std::min<int>(workers, static_cast<int>(uniques.size()));
        pool.reserve(static_cast<size_t>(n_threads));
        for (int w = 0; w < n_threads; ++w)
            pool.emplace_back([&, w] {
                for (size_t u = static_cast<size_t>(w); u < uniques.size();
                     u += static_cast<size_t>(n_threads))
                    eval_one(u);
            });
        for (std::thread& t : pool) t.join();
    }
    for (size_t u = 0; u < errors.size(); ++u)
        if (errors[u]) std::rethrow_exception(errors[u]);

    CoalitionDataset data;
    data.num_players = M;
    data.rows.reserve(coalitions.size());
    bool have_empty = false, have_full = false;
    for (size_t r = 0; r < coalitions.size(); ++r) {
        CoalitionRow row;
        row.z = coalitions[r].z();
        row.y = y[static_cast<size_t>(row_unique[r])];
        if (coalitions[r].all_off() && !have_empty) {
            data.f_empty = row.y;
            have_empty = true;
        }
        if (coalitions[r].all_on() && !have_full) {
            data.f_full = row.y;
            have_full = true;
        }
        data.rows.push_back(std::move(row));
    }

    Explanation e = fit_wlr(data);
    e.target = ExplanationTarget{map.explained_node, target_feature, target_step};
    e.player_coords.clear();
    e.player_coords.reserve(static_cast<size_t>(M));
    for (int node : map.spatial_players) {
        const auto [lane, cell] = graph.node_coords(node);
        e.player_coords.push_back(PlayerCoord{PlayerKind::Spatial, lane, cell, 0});
    }
    for (int step : map.temporal_players)
        e.player_coords.push_back(
            PlayerCoord{PlayerKind::Temporal, -1, -1, step - window.num_steps()});
    return e;
}

std::vector<RankedPlayer> rank_players(const Explanation& e, int k) {
    const int M = static_cast<int>(e.phi.size());
    if (k < 0 || k > M)
        throw InvalidArgumentError("rank count must be between 0 and the player count");
    std::vector<int> order(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const double fa = std::fabs(e.phi[static_cast<size_t>(a)]);
        const double fb = std::fabs(e.phi[static_cast<size_t>(b)]);
        if (fa != fb) return fa > fb;
        return a < b;
    });
    std::vector<RankedPlayer> out;
    out.reserve(static_cast<size_t>(k));
    for (int r = 0; r < k; ++r) {
        const int i = order[static_cast<size_t>(r)];
        RankedPlayer rp;
        rp.player = i;
        if (!e.player_coords.empty()) rp.coords = e.player_coords[static_cast<size_t>(i)];
        rp.phi = e.phi[static_cast<size_t>(i)];
        out.push_back(rp);
    }
    return out;
}

void save_explanation_json(const Explanation& e, const std::string& path) {
    json j;
    j["target"] = {{"node", e.target.node},
                   {"feature", e.target.feature},
                   {"step", e.target.step}};
    j["phi0"] = e.phi0;
    json players = json::array();
    for (size_t i = 0; i < e.phi.size(); ++i) {
        PlayerCoord c;
        if (i < e.player_coords.size()) c = e.player_coords[i];
        players.push_back({{"kind", c.kind == PlayerKind::Spatial ? "spatial" : "temporal"},
                           {"lane", c.lane},
                           {"cell", c.cell},
                           {"time_offset", c.time_offset},
                           {"phi", e.phi[i]}});
    }
    j["players"] = std::move(players);
    j["diagnostics"] = {{"n_samples", e.diagnostics.n_samples},
                        {"condition_number", e.diagnostics.condition_number},
                        {"residual_norm", e.diagnostics.residual_norm}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

Eigen::MatrixXd spatial_phi_matrix(const Explanation& e, const LatticeGraph& graph) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(graph.num_lanes, graph.num_cells);
    for (size_t i = 0; i < e.phi.size() && i < e.player_coords.size(); ++i) {
        const PlayerCoord& c = e.player_coords[i];
        if (c.kind == PlayerKind::Spatial) m(c.lane, c.cell) = e.phi[i];
    }
    return m;
}

void write_heatmap_csv(const Explanation& e, const LatticeGraph& graph, const std::string& path) {
    const Eigen::MatrixXd m = spatial_phi_matrix(e, graph);
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "lane,cell,phi\n";
    char buf[40];
    for (int lane = 0; lane < graph.num_lanes; ++lane)
        for (int cell = 0; cell < graph.num_cells; ++cell) {
            std::snprintf(buf, sizeof(buf), "%.9g", m(lane, cell));
            out << lane << ',' << cell << ',' << buf << "\n";
        }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace stga
