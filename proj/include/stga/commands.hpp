#pragma once

#include "stga/config.hpp"

namespace stga {

// Each command validates its inputs, computes, then writes its artifacts
// into paths.out_dir (fixed layout: tensor.csv, params.json, loss.csv,
// explanation.json, heatmap.csv, report.json, config.used.json).

void cmd_ingest(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_explain(const RunConfig& config);
void cmd_oracle_check(const RunConfig& config);
void cmd_synth(const RunConfig& config);

}  // namespace stga
