#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "stga/config.hpp"
#include "stga/errors.hpp"

using namespace stga;

TEST_CASE("config: JSON round trip preserves every field") {
    RunConfig c;
    c.grid.num_lanes = 3;
    c.grid.milepost_min = 48.0;
    c.hyper.hidden_channels = 8;
    c.train.learning_rate = 0.05;
    c.train.precision = Precision::f32;
    c.train.optimizer = TrainConfig::Optimizer::GradientDescent;
    c.explainer.baseline = "mean";
    c.explainer.hops = -1;
    c.asm_params.sigma = 0.25;
    c.synth.trigger_cell = 7;
    c.paths.input_csv = "in.csv";
    c.threads = 3;

    RunConfig back = config_from_json(config_to_json(c));
    CHECK(back.grid.num_lanes == 3);
    CHECK(back.grid.milepost_min == 48.0);
    CHECK(std::isnan(back.grid.milepost_max));  // auto stays auto
    CHECK(back.hyper.hidden_channels == 8);
    CHECK(back.train.learning_rate == 0.05);
    CHECK(back.train.precision == Precision::f32);
    CHECK(back.train.optimizer == TrainConfig::Optimizer::GradientDescent);
    CHECK(back.explainer.baseline == "mean");
    CHECK(back.explainer.hops == -1);
    CHECK(back.asm_params.sigma == 0.25);
    CHECK(back.synth.trigger_cell == 7);
    CHECK(back.paths.input_csv == "in.csv");
    CHECK(back.threads == 3);
    CHECK(config_to_json(back) == config_to_json(c));
}

TEST_CASE("config: partial files keep defaults for everything else") {
    RunConfig c = config_from_json(nlohmann::ordered_json::parse(R"({
        "predictor": {"train": {"epochs": 7}},
        "explainer": {"seed": 99}
    })"));
    CHECK(c.train.epochs == 7);
    CHECK(c.explainer.seed == 99);
    CHECK(c.grid.num_lanes == 4);           // untouched default
    CHECK(c.hyper.hidden_channels == 16);   // untouched default
    CHECK(c.explainer.baseline == "zero");  // untouched default
}

TEST_CASE("config: file loading errors carry the right category") {
    CHECK_THROWS_AS(load_config("missing_config.json"), IoError);
    const std::string path = "bad_config_test.json";
    {
        std::ofstream out(path);
        out << "{ nope";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    std::remove(path.c_str());

    RunConfig c;
    save_config_json(c, path);
    RunConfig back = load_config(path);
    CHECK(config_to_json(back) == config_to_json(c));
    std::remove(path.c_str());
}

TEST_CASE("config: dotted-path overrides hit numbers, bools and strings") {
    RunConfig c;
    apply_override(c, "explainer.seed=7");
    CHECK(c.explainer.seed == 7);
    apply_override(c, "predictor.train.learning_rate=0.5");
    CHECK(c.train.learning_rate == 0.5);
    apply_override(c, "grid.lateral_edges=false");
    CHECK(c.grid.lateral_edges == false);
    apply_override(c, "paths.out_dir=elsewhere");
    CHECK(c.paths.out_dir == "elsewhere");
    apply_override(c, "explainer.baseline=mean");
    CHECK(c.explainer.baseline == "mean");
    apply_override(c, "predictor.train.precision=32");
    CHECK(c.train.precision == Precision::f32);
    apply_override(c, "grid.milepost_min=12.5");  // null (auto) slot accepts a number
    CHECK(c.grid.milepost_min == 12.5);
}

TEST_CASE("config: malformed overrides are configuration errors") {
    RunConfig c;
    CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "unknown.key=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "explainer.bogus=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(c, "grid.num_lanes=true"), ConfigError);   // type mismatch
    CHECK_THROWS_AS(apply_override(c, "grid.lateral_edges=3"), ConfigError);  // type mismatch
    CHECK_THROWS_AS(apply_override(c, "predictor=7"), ConfigError);           // not a scalar
    // failed overrides must not partially mutate the config
    CHECK(c.grid.num_lanes == 4);
    CHECK(c.grid.lateral_edges == true);
}

TEST_CASE("config: validation rejects out-of-contract values") {
    RunConfig ok;
    CHECK_NOTHROW(validate_config(ok));

    RunConfig c;
    c.grid.num_lanes = 0;
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = RunConfig{};
    c.train.learning_rate = -1.0;
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = RunConfig{};
    c.train.learning_rate = 0.0;  // allowed: freezes the initialization
    CHECK_NOTHROW(validate_config(c));
    c = RunConfig{};
    c.explainer.baseline = "purple";
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = RunConfig{};
    c.explainer.target_feature = 3;
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = RunConfig{};
    c.explainer.n_samples = 1;  // below the two mandatory anchors
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = RunConfig{};
    c.hyper.window = 4;  // collapses to nothing with temporal_kernel 3
    CHECK_THROWS_AS(validate_config(c), ConfigError);
    c = RunConfig{};
    c.threads = -1;
    CHECK_THROWS_AS(validate_config(c), ConfigError);
}

TEST_CASE("config: synth inherits the grid dimensions") {
    RunConfig c;
    c.grid.num_lanes = 2;
    c.grid.num_cells = 50;
    c.synth.trigger_cell = 40;
    SynthConfig s = effective_synth(c);
    CHECK(s.num_lanes == 2);
    CHECK(s.num_cells == 50);
    CHECK(s.trigger_cell == 40);
}
