#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "stga/tensor.hpp"

namespace stga {

/// One detector report: lane-level speed/volume/occupancy at a milepost.
struct RawMeasurement {
    double timestamp = 0.0;  // seconds since epoch
    double milepost = 0.0;   // miles
    int lane = 1;            // 1-based
    double speed = 0.0;      // mph
    double volume = 0.0;     // vehicles per reporting interval
    double occupancy = 0.0;  // fraction in [0, 1]
};

struct LoadResult {
    std::vector<RawMeasurement> records;
    long rows_read = 0;
    long rows_dropped = 0;  // failed parsing or invariants
};

/// Columns timestamp,milepost,lane,speed,volume,occupancy located by header
/// name (any order, extra columns ignored). Invalid rows are dropped and
/// counted, never fatal; an empty valid set is.
LoadResult load_rds_csv(const std::string& path);

struct GridExtent {
    double milepost_min = 0.0;
    double milepost_max = 0.0;  // miles, exclusive edge
    double time_min = 0.0;
    double time_max = 0.0;  // seconds, exclusive edge
    int num_lanes = 0;
};

/// Tight extent covering every record (half-open edges nudged to include
/// the extreme measurements).
GridExtent extent_of(const std::vector<RawMeasurement>& records);

struct BinningOptions {
    double cell_miles = 0.1;
    double dt_seconds = 10.0;
    double record_seconds = 30.0;         // reporting interval behind each volume count
    double min_speed_for_density = 1.0;   // mph; below this, use occupancy
    double jam_density = 211.0;           // vehicles/mile at occupancy 1
};

/// Binned grid with gaps: per-bin means plus an observation mask. Node
/// ordering matches the lattice graph (node = lane * num_cells + cell).
struct GriddedField {
    TrafficTensor tensor;
    std::vector<std::uint8_t> observed;  // per (node, step), node-major
    std::vector<double> volume_sum;      // raw per-bin vehicle count totals
    std::vector<int> sample_count;       // records contributing per bin
    long skipped_records = 0;            // outside the extent
    int num_lanes = 0;
    int num_cells = 0;
    double cell_miles = 0.1;
    double dt_seconds = 10.0;

    bool is_observed(int node, int step) const {
        return observed[static_cast<size_t>(node) * tensor.num_steps() + step] != 0;
    }
    long num_observed() const;
    long num_missing() const;
};

GriddedField bin_to_grid(const std::vector<RawMeasurement>& records, const GridExtent& extent,
                         const BinningOptions& opts = {});

/// Adaptive-smoothing parameters: two characteristic speeds and kernel widths.
struct AsmParams {
    double c_free = 50.0;      // mph, forward free-flow characteristic
    double c_cong = -10.0;     // mph, backward congested wave
    double sigma = 0.4;        // miles, spatial kernel width
    double tau_smooth = 60.0;  // seconds, temporal kernel width
    double v_crit = 37.0;      // mph, regime transition center
    double delta_v = 12.0;     // mph, transition width
    void validate() const;
};

/// Fill every bin per lane by blending two anisotropic kernel averages of
/// the observed bins; the congested field wins at low smoothed speeds.
TrafficTensor asm_interpolate(const GriddedField& field, const AsmParams& params);

/// Synthetic traffic-breakdown scenario: free flow everywhere, a speed drop
/// injected at the trigger that propagates upstream and recovers.
struct SynthConfig {
    int num_lanes = 4;
    int num_cells = 30;
    int num_steps = 360;
    int trigger_lane = 1;  // 0-based
    int trigger_cell = 20;
    int trigger_step = 60;
    std::uint64_t seed = 7;
    double v_free = 70.0;  // mph
    double v_min = 20.0;   // mph at the trigger peak
    double noise = 0.5;    // uniform +/- mph added to speed
    double wave_steps_per_cell = 3.0;
    double rise_steps = 6.0;       // onset time constant
    double recovery_steps = 40.0;  // dissipation time constant
    double decay_cells = 15.0;     // upstream amplitude decay length
    double lane_decay = 0.6;       // per-lane attenuation factor
    double rho_jam = 211.0;        // vehicles/mile for the density closure
    double v_ref = 75.0;           // mph, zero-density speed
    void validate() const;
};

struct TriggerRecord {
    int lane = 0;
    int cell = 0;
    int step = 0;
    double v_min = 0.0;
};

struct SynthResult {
    TrafficTensor tensor;
    TriggerRecord trigger;
};

SynthResult synth_breakdown(const SynthConfig& config);
SynthResult synth_breakdown(int num_lanes, int num_cells, int num_steps, std::uint64_t seed,
                            int trigger_lane, int trigger_cell, int trigger_step);

/// 2-D CSV with a column-label header row and row labels; values at 9
/// significant digits, lossless round-trip with read_heatmap.
void export_heatmap(const Eigen::MatrixXd& field, const std::string& path);
Eigen::MatrixXd read_heatmap(const std::string& path);

/// Long-form tensor CSV: node,step,flow,density,speed in node-major order.
void write_tensor_csv(const TrafficTensor& tensor, const std::string& path);
TrafficTensor read_tensor_csv(const std::string& path);

}  // namespace stga
