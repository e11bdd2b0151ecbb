#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stga/commands.hpp"
#include "stga/config.hpp"
#include "stga/errors.hpp"

namespace {

int exit_code_for(stga::ErrorKind kind) {
    switch (kind) {
        case stga::ErrorKind::Config: return 2;
        case stga::ErrorKind::Data: return 3;
        case stga::ErrorKind::Numeric: return 4;
        case stga::ErrorKind::Io: return 5;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lane-cell traffic predictor with Shapley-based attribution"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    int threads = -1;
    std::string out_dir;
    app.add_option("--config", config_path, "Run configuration JSON file");
    app.add_option("--set", overrides, "Override a config field, e.g. explainer.seed=7");
    app.add_option("--threads", threads, "Worker cap for coalition evaluation");
    app.add_option("--out", out_dir, "Output directory (overrides paths.out_dir)");

    CLI::App* ingest = app.add_subcommand("ingest", "Bin and interpolate a measurement CSV");
    CLI::App* train = app.add_subcommand("train", "Train the predictor on tensor.csv");
    CLI::App* explain_cmd =
        app.add_subcommand("explain", "Attribute one node's prediction to its neighbors");
    CLI::App* oracle =
        app.add_subcommand("oracle-check", "Compare the fitted attribution to exact enumeration");
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic breakdown tensor");
    for (CLI::App* sub : {ingest, train, explain_cmd, oracle, synth}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        stga::RunConfig config;
        if (!config_path.empty()) config = stga::load_config(config_path);
        for (const std::string& kv : overrides) stga::apply_override(config, kv);
        if (threads >= 0) config.threads = threads;
        if (!out_dir.empty()) config.paths.out_dir = out_dir;

        if (ingest->parsed())
            stga::cmd_ingest(config);
        else if (train->parsed())
            stga::cmd_train(config);
        else if (explain_cmd->parsed())
            stga::cmd_explain(config);
        else if (oracle->parsed())
            stga::cmd_oracle_check(config);
        else if (synth->parsed())
            stga::cmd_synth(config);
        return 0;
    } catch (const stga::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
