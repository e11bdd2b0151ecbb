#include "stga/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "stga/data_io.hpp"
#include "stga/errors.hpp"
#include "stga/graph.hpp"
#include "stga/masking.hpp"
#include "stga/shapley.hpp"
#include "stga/stgcn.hpp"

namespace stga {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;  // map-backed: keys sort, output is stable

fs::path ensure_out_dir(const RunConfig& config) {
    fs::path dir(config.paths.out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string());
    return dir;
}

// report.json accumulates one object per command so a pipeline run ends with
// a single merged report; rewriting a section is idempotent.
void update_report(const fs::path& dir, const std::string& section, const json& payload) {
    const fs::path path = dir / "report.json";
    json report = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        try {
            report = json::parse(in);
            if (!report.is_object()) report = json::object();
        } catch (const json::parse_error&) {
            report = json::object();
        }
    }
    report[section] = payload;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << report.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path.string());
}

int resolve_threads(int configured) {
    if (configured > 0) return configured;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

struct LoadedModel {
    StgcnParams params;
    TrafficTensor tensor;
    LatticeGraph graph;
    SpectralOperators ops;
    int num_cells = 0;
};

LoadedModel load_model_and_tensor(const RunConfig& config, const fs::path& dir) {
    const fs::path params_path = dir / "params.json";
    const fs::path tensor_path = dir / "tensor.csv";
    if (!fs::exists(params_path))
        throw IoError(params_path.string() + " not found; run the train command first");
    if (!fs::exists(tensor_path))
        throw IoError(tensor_path.string() + " not found; run ingest or synth first");

    LoadedModel m;
    m.params = load_params_json(params_path.string());
    m.tensor = read_tensor_csv(tensor_path.string());
    const int lanes = config.grid.num_lanes;
    if (m.tensor.num_nodes() % lanes != 0)
        throw ConfigError("tensor has " + std::to_string(m.tensor.num_nodes()) +
                          " nodes, not divisible by " + std::to_string(lanes) + " lanes");
    m.num_cells = m.tensor.num_nodes() / lanes;
    m.graph = build_lattice_graph(lanes, m.num_cells, config.grid.lateral_edges);
    m.ops = spectral_operators(m.graph);
    return m;
}

struct ExplainSetup {
    TrafficTensor window;
    TrafficTensor baseline;
    PlayerMap map;
    ModelFn model;
    int window_start = 0;
};

ExplainSetup prepare_explain(const RunConfig& config, const LoadedModel& m) {
    const auto& e = config.explainer;
    const StgcnHyper& hyper = m.params.hyper;
    if (e.target_node >= m.tensor.num_nodes())
        throw ConfigError("explainer.target_node outside the tensor");
    if (e.target_feature >= hyper.features)
        throw ConfigError("explainer.target_feature out of range for the trained model");
    if (e.target_step >= hyper.horizon)
        throw ConfigError("explainer.target_step out of range for the trained model");

    const int last_start = m.tensor.num_steps() - hyper.window;
    if (last_start < 0)
        throw ConfigError("tensor is shorter than the model's input window");
    const int w0 = e.window_start < 0 ? last_start : e.window_start;
    if (w0 > last_start)
        throw ConfigError("explainer.window_start leaves fewer than " +
                          std::to_string(hyper.window) + " steps");

    ExplainSetup s;
    s.window_start = w0;
    s.window = m.tensor.slice_steps(w0, hyper.window);
    if (e.baseline == "mean") {
        s.baseline = s.window.zeros_like();
        for (int i = 0; i < s.baseline.num_nodes(); ++i)
            for (int t = 0; t < s.baseline.num_steps(); ++t)
                for (int f = 0; f < s.baseline.num_features(); ++f)
                    s.baseline.at(i, t, f) = m.params.scaler.mean[static_cast<size_t>(f)];
    } else {
        s.baseline = s.window.zeros_like();
    }
    s.map = make_player_map(m.graph, e.target_node, e.hops, hyper.window,
                            e.exempt_final_step, e.max_temporal_players);
    if (s.map.num_players() < 1)
        throw ConfigError("player map is empty; increase explainer.hops");

    const StgcnParams& params = m.params;
    const SpectralOperators& ops = m.ops;
    const int node = e.target_node, feature = e.target_feature, step = e.target_step;
    s.model = [&params, &ops, node, feature, step](const TrafficTensor& masked) {
        return predict_node(params, masked, ops, node, feature, step);
    };
    return s;
}

int auto_samples(int configured, int num_players) {
    if (configured > 0) return configured;
    if (num_players < 31 && (1 << num_players) <= 2048) return 1 << num_players;
    return 2048;
}

json coords_json(const PlayerCoord& c, double phi) {
    return json{{"kind", c.kind == PlayerKind::Spatial ? "spatial" : "temporal"},
                {"lane", c.lane},
                {"cell", c.cell},
                {"time_offset", c.time_offset},
                {"phi", phi}};
}

}  // namespace

void cmd_ingest(const RunConfig& config) {
    validate_config(config);
    if (config.paths.input_csv.empty())
        throw ConfigError("paths.input_csv is required for ingest");

    const LoadResult loaded = load_rds_csv(config.paths.input_csv);

    GridExtent extent = extent_of(loaded.records);
    extent.num_lanes = config.grid.num_lanes;
    if (!std::isnan(config.grid.milepost_min)) extent.milepost_min = config.grid.milepost_min;
    if (!std::isnan(config.grid.milepost_max)) extent.milepost_max = config.grid.milepost_max;
    if (!std::isnan(config.grid.time_min)) extent.time_min = config.grid.time_min;
    if (!std::isnan(config.grid.time_max)) extent.time_max = config.grid.time_max;

    BinningOptions opts;
    opts.cell_miles = config.grid.cell_miles;
    opts.dt_seconds = config.grid.dt_seconds;

    const GriddedField field = bin_to_grid(loaded.records, extent, opts);
    const TrafficTensor tensor = asm_interpolate(field, config.asm_params);

    const fs::path dir = ensure_out_dir(config);
    write_tensor_csv(tensor, (dir / "tensor.csv").string());
    update_report(dir, "ingest",
                  json{{"rows_read", loaded.rows_read},
                       {"rows_dropped", loaded.rows_dropped},
                       {"records_outside_extent", field.skipped_records},
                       {"bins_observed", field.num_observed()},
                       {"bins_filled", field.num_missing()},
                       {"num_lanes", field.num_lanes},
                       {"num_cells", field.num_cells},
                       {"num_nodes", tensor.num_nodes()},
                       {"num_steps", tensor.num_steps()}});
    save_config_json(config, (dir / "config.used.json").string());

    std::cout << "ingest: " << loaded.rows_read << " rows read, " << loaded.rows_dropped
              << " dropped, " << field.skipped_records << " outside extent\n"
              << "ingest: grid " << field.num_lanes << " lanes x " << field.num_cells
              << " cells x " << tensor.num_steps() << " steps (" << tensor.num_nodes()
              << " nodes), " << field.num_missing() << " bins filled\n";
}

void cmd_train(const RunConfig& config) {
    validate_config(config);
    const fs::path dir(config.paths.out_dir);
    const fs::path tensor_path = dir / "tensor.csv";
    if (!fs::exists(tensor_path))
        throw IoError(tensor_path.string() + " not found; run ingest or synth first");

    const TrafficTensor tensor = read_tensor_csv(tensor_path.string());
    const int lanes = config.grid.num_lanes;
    if (tensor.num_nodes() % lanes != 0)
        throw ConfigError("tensor has " + std::to_string(tensor.num_nodes()) +
                          " nodes, not divisible by " + std::to_string(lanes) + " lanes");
    const int cells = tensor.num_nodes() / lanes;
    const LatticeGraph graph = build_lattice_graph(lanes, cells, config.grid.lateral_edges);

    const std::vector<WindowPair> pairs = make_training_pairs(tensor, config.hyper);
    // Hold out the final fifth chronologically when there is enough data.
    const size_t val_count = pairs.size() >= 10 ? pairs.size() / 5 : 0;
    const std::vector<WindowPair> train_pairs(pairs.begin(),
                                              pairs.end() - static_cast<long>(val_count));
    const std::vector<WindowPair> val_pairs(pairs.end() - static_cast<long>(val_count),
                                            pairs.end());

    const TrainResult result = train(train_pairs, graph, config.hyper, config.train);

    const SpectralOperators ops = spectral_operators(graph);
    auto model_mse = [&](const std::vector<WindowPair>& set) {
        double acc = 0.0;
        for (const WindowPair& p : set)
            acc += mse_loss(p.target, forward(result.params, p.window, ops));
        return acc / static_cast<double>(set.size());
    };

    const double mse_train = model_mse(train_pairs);
    const double pers_train = persistence_mse(train_pairs);
    const bool has_val = !val_pairs.empty();
    const double mse_val = has_val ? model_mse(val_pairs) : 0.0;
    const double pers_val = has_val ? persistence_mse(val_pairs) : 0.0;
    const double ratio = has_val ? mse_val / pers_val : mse_train / pers_train;

    ensure_out_dir(config);
    save_params_json(result.params, (dir / "params.json").string());
    {
        std::ofstream out(dir / "loss.csv");
        if (!out) throw IoError("cannot open " + (dir / "loss.csv").string() + " for writing");
        out << "epoch,loss\n";
        char buf[40];
        for (size_t ep = 0; ep < result.epoch_loss.size(); ++ep) {
            std::snprintf(buf, sizeof(buf), "%.9g", result.epoch_loss[ep]);
            out << ep << ',' << buf << "\n";
        }
        if (!out) throw IoError("failed writing loss.csv");
    }
    json payload{{"epochs", static_cast<int>(result.epoch_loss.size())},
                 {"final_epoch_loss", result.epoch_loss.back()},
                 {"mse_train", mse_train},
                 {"persistence_mse_train", pers_train},
                 {"ratio", ratio}};
    payload["mse_validation"] = has_val ? json(mse_val) : json(nullptr);
    payload["persistence_mse_validation"] = has_val ? json(pers_val) : json(nullptr);
    update_report(dir, "train", payload);
    save_config_json(config, (dir / "config.used.json").string());

    std::cout << "train: final epoch loss (standardized) " << result.epoch_loss.back() << "\n"
              << "train: MSE " << mse_train << " vs persistence " << pers_train << " (train)\n";
    if (has_val)
        std::cout << "train: MSE " << mse_val << " vs persistence " << pers_val
                  << " (validation)\n";
    std::cout << "train: model/persistence ratio " << ratio << "\n";
}

void cmd_explain(const RunConfig& config) {
    validate_config(config);
    const fs::path dir(config.paths.out_dir);
    const LoadedModel m = load_model_and_tensor(config, dir);
    const ExplainSetup s = prepare_explain(config, m);

    const int n = auto_samples(config.explainer.n_samples, s.map.num_players());
    const Explanation e =
        explain(s.model, s.window, m.graph, s.map, n, config.explainer.seed, s.baseline,
                config.explainer.target_feature, config.explainer.target_step,
                resolve_threads(config.threads));

    const int k = std::min(config.explainer.top_k, s.map.num_players());
    const std::vector<RankedPlayer> top = rank_players(e, k);

    ensure_out_dir(config);
    save_explanation_json(e, (dir / "explanation.json").string());
    write_heatmap_csv(e, m.graph, (dir / "heatmap.csv").string());

    json top_json = json::array();
    for (const RankedPlayer& rp : top) top_json.push_back(coords_json(rp.coords, rp.phi));
    double phi_sum = e.phi0;
    for (double p : e.phi) phi_sum += p;
    update_report(dir, "explain",
                  json{{"target",
                        {{"node", e.target.node},
                         {"feature", e.target.feature},
                         {"step", e.target.step}}},
                       {"window_start", s.window_start},
                       {"players", s.map.num_players()},
                       {"n_samples", e.diagnostics.n_samples},
                       {"phi0", e.phi0},
                       {"prediction", phi_sum},
                       {"condition_number", e.diagnostics.condition_number},
                       {"residual_norm", e.diagnostics.residual_norm},
                       {"top", top_json}});
    save_config_json(config, (dir / "config.used.json").string());

    std::cout << "explain: node " << e.target.node << " feature " << e.target.feature
              << " step " << e.target.step << ", " << s.map.num_players() << " players, "
              << e.diagnostics.n_samples << " samples\n"
              << "explain: phi0 " << e.phi0 << ", full prediction " << phi_sum << "\n";
    for (size_t r = 0; r < top.size(); ++r) {
        const RankedPlayer& rp = top[r];
        std::cout << "explain: #" << (r + 1) << " ";
        if (rp.coords.kind == PlayerKind::Spatial)
            std::cout << "node(lane " << rp.coords.lane << ", cell " << rp.coords.cell << ")";
        else
            std::cout << "step(offset " << rp.coords.time_offset << ")";
        std::cout << " phi " << rp.phi << "\n";
    }
}

void cmd_oracle_check(const RunConfig& config) {
    validate_config(config);
    const fs::path dir(config.paths.out_dir);
    const LoadedModel m = load_model_and_tensor(config, dir);
    const ExplainSetup s = prepare_explain(config, m);

    const int M = s.map.num_players();
    if (M > 12)
        throw TooLargeError(
            "oracle check needs S + T <= 12 players, got " + std::to_string(M) +
            "; reduce explainer.hops or set explainer.max_temporal_players");

    const int S = s.map.num_spatial();
    const auto value = [&](const std::vector<std::uint8_t>& z) {
        Coalition c;
        c.spatial_mask.assign(z.begin(), z.begin() + S);
        c.temporal_mask.assign(z.begin() + S, z.end());
        return s.model(apply_mask(s.window, s.map, c, s.baseline));
    };
    const std::vector<double> exact = exact_shapley(value, M);

    const Explanation fitted =
        explain(s.model, s.window, m.graph, s.map, 1 << M, config.explainer.seed, s.baseline,
                config.explainer.target_feature, config.explainer.target_step,
                resolve_threads(config.threads));

    double deviation = 0.0;
    for (int i = 0; i < M; ++i)
        deviation = std::max(deviation,
                             std::fabs(exact[static_cast<size_t>(i)] -
                                       fitted.phi[static_cast<size_t>(i)]));
    const double tolerance = 1e-8;
    const bool pass = deviation < tolerance;

    ensure_out_dir(config);
    update_report(dir, "oracle_check",
                  json{{"players", M},
                       {"max_abs_deviation", deviation},
                       {"tolerance", tolerance},
                       {"pass", pass}});
    save_config_json(config, (dir / "config.used.json").string());

    std::cout << "oracle-check: " << M << " players, max |exact - fitted| = " << deviation
              << (pass ? " (pass)" : " (FAIL)") << "\n";
    if (!pass)
        throw Error(ErrorKind::Numeric, "weighted regression deviates from exact enumeration by " +
                                            std::to_string(deviation));
}

void cmd_synth(const RunConfig& config) {
    validate_config(config);
    const SynthConfig sc = effective_synth(config);
    sc.validate();

    const SynthResult result = synth_breakdown(sc);

    const fs::path dir = ensure_out_dir(config);
    write_tensor_csv(result.tensor, (dir / "tensor.csv").string());
    update_report(dir, "synth",
                  json{{"trigger",
                        {{"lane", result.trigger.lane},
                         {"cell", result.trigger.cell},
                         {"step", result.trigger.step},
                         {"v_min", result.trigger.v_min}}},
                       {"num_lanes", sc.num_lanes},
                       {"num_cells", sc.num_cells},
                       {"num_nodes", result.tensor.num_nodes()},
                       {"num_steps", result.tensor.num_steps()},
                       {"seed", sc.seed}});
    save_config_json(config, (dir / "config.used.json").string());

    std::cout << "synth: " << sc.num_lanes << " lanes x " << sc.num_cells << " cells x "
              << sc.num_steps << " steps, trigger at (lane " << result.trigger.lane << ", cell "
              << result.trigger.cell << ", step " << result.trigger.step << ")\n";
}

}  // namespace stga
