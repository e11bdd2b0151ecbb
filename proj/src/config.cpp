#include "stga/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "stga/errors.hpp"

namespace stga {

namespace {

using json = nlohmann::ordered_json;

// Read j[key] into field when present; otherwise keep the default.
template <class T>
void get_if(const json& j, const char* key, T& field) {
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
}

void get_nullable(const json& j, const char* key, double& field) {
    if (!j.contains(key)) return;
    if (j.at(key).is_null()) {
        field = std::numeric_limits<double>::quiet_NaN();
        return;
    }
    get_if(j, key, field);
}

json nullable(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

}  // namespace

RunConfig config_from_json(const json& j) {
    RunConfig c;
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");

    if (j.contains("grid")) {
        const json& g = j.at("grid");
        get_if(g, "num_lanes", c.grid.num_lanes);
        get_if(g, "num_cells", c.grid.num_cells);
        get_if(g, "cell_miles", c.grid.cell_miles);
        get_if(g, "dt_seconds", c.grid.dt_seconds);
        get_if(g, "lateral_edges", c.grid.lateral_edges);
        get_nullable(g, "milepost_min", c.grid.milepost_min);
        get_nullable(g, "milepost_max", c.grid.milepost_max);
        get_nullable(g, "time_min", c.grid.time_min);
        get_nullable(g, "time_max", c.grid.time_max);
    }
    if (j.contains("predictor")) {
        const json& p = j.at("predictor");
        if (p.contains("hyper")) {
            const json& h = p.at("hyper");
            get_if(h, "cheb_order", c.hyper.cheb_order);
            get_if(h, "temporal_kernel", c.hyper.temporal_kernel);
            get_if(h, "hidden_channels", c.hyper.hidden_channels);
            get_if(h, "window", c.hyper.window);
            get_if(h, "horizon", c.hyper.horizon);
            get_if(h, "features", c.hyper.features);
        }
        if (p.contains("train")) {
            const json& t = p.at("train");
            get_if(t, "learning_rate", c.train.learning_rate);
            get_if(t, "epochs", c.train.epochs);
            get_if(t, "batch", c.train.batch);
            get_if(t, "seed", c.train.seed);
            if (t.contains("precision")) {
                int bits = 64;
                get_if(t, "precision", bits);
                if (bits == 32)
                    c.train.precision = Precision::f32;
                else if (bits == 64)
                    c.train.precision = Precision::f64;
                else
                    throw ConfigError("predictor.train.precision must be 32 or 64");
            }
            if (t.contains("optimizer")) {
                std::string name;
                get_if(t, "optimizer", name);
                if (name == "adam")
                    c.train.optimizer = TrainConfig::Optimizer::Adam;
                else if (name == "gd")
                    c.train.optimizer = TrainConfig::Optimizer::GradientDescent;
                else
                    throw ConfigError("predictor.train.optimizer must be 'adam' or 'gd'");
            }
        }
    }
    if (j.contains("explainer")) {
        const json& e = j.at("explainer");
        get_if(e, "n_samples", c.explainer.n_samples);
        get_if(e, "seed", c.explainer.seed);
        get_if(e, "baseline", c.explainer.baseline);
        get_if(e, "target_node", c.explainer.target_node);
        get_if(e, "target_feature", c.explainer.target_feature);
        get_if(e, "target_step", c.explainer.target_step);
        get_if(e, "hops", c.explainer.hops);
        get_if(e, "max_temporal_players", c.explainer.max_temporal_players);
        get_if(e, "window_start", c.explainer.window_start);
        get_if(e, "exempt_final_step", c.explainer.exempt_final_step);
        get_if(e, "top_k", c.explainer.top_k);
    }
    if (j.contains("asm")) {
        const json& a = j.at("asm");
        get_if(a, "c_free", c.asm_params.c_free);
        get_if(a, "c_cong", c.asm_params.c_cong);
        get_if(a, "sigma", c.asm_params.sigma);
        get_if(a, "tau_smooth", c.asm_params.tau_smooth);
        get_if(a, "v_crit", c.asm_params.v_crit);
        get_if(a, "delta_v", c.asm_params.delta_v);
    }
    if (j.contains("synth")) {
        const json& s = j.at("synth");
        get_if(s, "num_steps", c.synth.num_steps);
        get_if(s, "trigger_lane", c.synth.trigger_lane);
        get_if(s, "trigger_cell", c.synth.trigger_cell);
        get_if(s, "trigger_step", c.synth.trigger_step);
        get_if(s, "seed", c.synth.seed);
        get_if(s, "v_free", c.synth.v_free);
        get_if(s, "v_min", c.synth.v_min);
        get_if(s, "noise", c.synth.noise);
        get_if(s, "wave_steps_per_cell", c.synth.wave_steps_per_cell);
        get_if(s, "rise_steps", c.synth.rise_steps);
        get_if(s, "recovery_steps", c.synth.recovery_steps);
        get_if(s, "decay_cells", c.synth.decay_cells);
        get_if(s, "lane_decay", c.synth.lane_decay);
        get_if(s, "rho_jam", c.synth.rho_jam);
        get_if(s, "v_ref", c.synth.v_ref);
    }
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        get_if(p, "input_csv", c.paths.input_csv);
        get_if(p, "out_dir", c.paths.out_dir);
    }
    get_if(j, "threads", c.threads);
    return c;
}

json config_to_json(const RunConfig& c) {
    json j;
    j["grid"] = {{"num_lanes", c.grid.num_lanes},
                 {"num_cells", c.grid.num_cells},
                 {"cell_miles", c.grid.cell_miles},
                 {"dt_seconds", c.grid.dt_seconds},
                 {"lateral_edges", c.grid.lateral_edges},
                 {"milepost_min", nullable(c.grid.milepost_min)},
                 {"milepost_max", nullable(c.grid.milepost_max)},
                 {"time_min", nullable(c.grid.time_min)},
                 {"time_max", nullable(c.grid.time_max)}};
    j["predictor"] = {
        {"hyper",
         {{"cheb_order", c.hyper.cheb_order},
          {"temporal_kernel", c.hyper.temporal_kernel},
          {"hidden_channels", c.hyper.hidden_channels},
          {"window", c.hyper.window},
          {"horizon", c.hyper.horizon},
          {"features", c.hyper.features}}},
        {"train",
         {{"learning_rate", c.train.learning_rate},
          {"epochs", c.train.epochs},
          {"batch", c.train.batch},
          {"seed", c.train.seed},
          {"precision", c.train.precision == Precision::f32 ? 32 : 64},
          {"optimizer",
           c.train.optimizer == TrainConfig::Optimizer::Adam ? "adam" : "gd"}}}};
    j["explainer"] = {{"n_samples", c.explainer.n_samples},
                      {"seed", c.explainer.seed},
                      {"baseline", c.explainer.baseline},
                      {"target_node", c.explainer.target_node},
                      {"target_feature", c.explainer.target_feature},
                      {"target_step", c.explainer.target_step},
                      {"hops", c.explainer.hops},
                      {"max_temporal_players", c.explainer.max_temporal_players},
                      {"window_start", c.explainer.window_start},
                      {"exempt_final_step", c.explainer.exempt_final_step},
                      {"top_k", c.explainer.top_k}};
    j["asm"] = {{"c_free", c.asm_params.c_free},   {"c_cong", c.asm_params.c_cong},
                {"sigma", c.asm_params.sigma},     {"tau_smooth", c.asm_params.tau_smooth},
                {"v_crit", c.asm_params.v_crit},   {"delta_v", c.asm_params.delta_v}};
    j["synth"] = {{"num_steps", c.synth.num_steps},
                  {"trigger_lane", c.synth.trigger_lane},
                  {"trigger_cell", c.synth.trigger_cell},
                  {"trigger_step", c.synth.trigger_step},
                  {"seed", c.synth.seed},
                  {"v_free", c.synth.v_free},
                  {"v_min", c.synth.v_min},
                  {"noise", c.synth.noise},
                  {"wave_steps_per_cell", c.synth.wave_steps_per_cell},
                  {"rise_steps", c.synth.rise_steps},
                  {"recovery_steps", c.synth.recovery_steps},
                  {"decay_cells", c.synth.decay_cells},
                  {"lane_decay", c.synth.lane_decay},
                  {"rho_jam", c.synth.rho_jam},
                  {"v_ref", c.synth.v_ref}};
    j["paths"] = {{"input_csv", c.paths.input_csv}, {"out_dir", c.paths.out_dir}};
    j["threads"] = c.threads;
    return j;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

void apply_override(RunConfig& config, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key.path=value (got '" + assignment + "')");
    const std::string key = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);

    std::string pointer = "/";
    for (char ch : key) pointer += ch == '.' ? '/' : ch;

    json j = config_to_json(config);
    const json::json_pointer ptr(pointer);
    if (!j.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
    json& slot = j.at(ptr);
    if (slot.is_object() || slot.is_array())
        throw ConfigError("config key '" + key + "' is not a scalar field");

    if (slot.is_string()) {
        slot = value;
    } else {
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::parse_error&) {
            throw ConfigError("value '" + value + "' for key '" + key + "' is not valid");
        }
        const bool ok = (slot.is_number() && parsed.is_number()) ||
                        (slot.is_boolean() && parsed.is_boolean()) ||
                        (slot.is_null() && (parsed.is_number() || parsed.is_null()));
        if (!ok)
            throw ConfigError("value '" + value + "' does not match the type of key '" + key +
                              "'");
        slot = parsed;
    }
    config = config_from_json(j);
}

void validate_config(const RunConfig& c) {
    if (c.grid.num_lanes < 1 || c.grid.num_cells < 1)
        throw ConfigError("grid must have at least one lane and one cell");
    if (!(c.grid.cell_miles > 0.0) || !(c.grid.dt_seconds > 0.0))
        throw ConfigError("grid cell_miles and dt_seconds must be positive");
    c.hyper.validate();
    if (c.train.learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
    if (c.train.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.train.batch < 1) throw ConfigError("batch must be >= 1");
    const auto& e = c.explainer;
    if (e.baseline != "zero" && e.baseline != "mean")
        throw ConfigError("explainer.baseline must be 'zero' or 'mean'");
    if (e.n_samples != 0 && e.n_samples < 2)
        throw ConfigError("explainer.n_samples must be 0 (auto) or >= 2");
    if (e.target_node < 0) throw ConfigError("explainer.target_node must be >= 0");
    if (e.target_feature < 0 || e.target_feature >= c.hyper.features)
        throw ConfigError("explainer.target_feature out of range");
    if (e.target_step < 0 || e.target_step >= c.hyper.horizon)
        throw ConfigError("explainer.target_step out of range");
    if (e.hops < -1) throw ConfigError("explainer.hops must be >= -1");
    if (e.max_temporal_players < 0)
        throw ConfigError("explainer.max_temporal_players must be >= 0");
    if (e.window_start < -1) throw ConfigError("explainer.window_start must be >= -1");
    if (e.top_k < 0) throw ConfigError("explainer.top_k must be >= 0");
    c.asm_params.validate();
    // Synth trigger bounds depend on the grid actually used; cmd_synth
    // validates the assembled SynthConfig before computing anything.
    if (c.threads < 0) throw ConfigError("threads must be >= 0");
}

void save_config_json(const RunConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << config_to_json(config).dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

SynthConfig effective_synth(const RunConfig& config) {
    SynthConfig s = config.synth;
    s.num_lanes = config.grid.num_lanes;
    s.num_cells = config.grid.num_cells;
    return s;
}

}  // namespace stga
