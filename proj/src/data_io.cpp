#include "stga/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "stga/errors.hpp"

namespace stga {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    size_t b = s.find_last_not_of(" \t");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

bool parse_double(const std::string& s, double& out) {
    const std::string t = trim(s);
    if (t.empty()) return false;
    char* end = nullptr;
    out = std::strtod(t.c_str(), &end);
    return end == t.c_str() + t.size();
}

// Number of bins covering [0, range) at the given width; the epsilon keeps
// ranges that are an exact multiple of the width (up to float noise, e.g.
// 17.1 / 0.1) from spilling into a spurious extra bin.
int bin_count(double range, double width) {
    return static_cast<int>(std::ceil(range / width - 1e-9));
}

double next_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

LoadResult load_rds_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": missing header row");

    const std::vector<std::string> header = split_csv_line(line);
    const char* needed[] = {"timestamp", "milepost", "lane", "speed", "volume", "occupancy"};
    int col[6];
    for (int c = 0; c < 6; ++c) {
        col[c] = -1;
        for (size_t j = 0; j < header.size(); ++j)
            if (trim(header[j]) == needed[c]) {
                col[c] = static_cast<int>(j);
                break;
            }
        if (col[c] < 0)
            throw SchemaError(path + ": missing required column '" + std::string(needed[c]) + "'");
    }

    LoadResult result;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        ++result.rows_read;
        const std::vector<std::string> fields = split_csv_line(line);
        double v[6];
        bool ok = true;
        for (int c = 0; c < 6 && ok; ++c) {
            if (static_cast<size_t>(col[c]) >= fields.size() ||
                !parse_double(fields[static_cast<size_t>(col[c])], v[c]) || !std::isfinite(v[c]))
                ok = false;
        }
        if (ok) {
            ok = v[3] >= 0.0 && v[4] >= 0.0 && v[5] >= 0.0 && v[5] <= 1.0 && v[2] >= 1.0 &&
                 v[2] == std::floor(v[2]);
        }
        if (!ok) {
            ++result.rows_dropped;
            continue;
        }
        RawMeasurement m;
        m.timestamp = v[0];
        m.milepost = v[1];
        m.lane = static_cast<int>(v[2]);
        m.speed = v[3];
        m.volume = v[4];
        m.occupancy = v[5];
        result.records.push_back(m);
    }
    if (result.records.empty())
        throw EmptyDataError(path + ": no valid measurement rows (" +
                             std::to_string(result.rows_dropped) + " dropped)");
    return result;
}

GridExtent extent_of(const std::vector<RawMeasurement>& records) {
    if (records.empty()) throw EmptyDataError("no records to take an extent of");
    GridExtent e;
    e.milepost_min = e.milepost_max = records.front().milepost;
    e.time_min = e.time_max = records.front().timestamp;
    e.num_lanes = records.front().lane;
    for (const RawMeasurement& m : records) {
        e.milepost_min = std::min(e.milepost_min, m.milepost);
        e.milepost_max = std::max(e.milepost_max, m.milepost);
        e.time_min = std::min(e.time_min, m.timestamp);
        e.time_max = std::max(e.time_max, m.timestamp);
        e.num_lanes = std::max(e.num_lanes, m.lane);
    }
    // Edges are exclusive; nudge them past the extreme records.
    e.milepost_max = std::nextafter(e.milepost_max, std::numeric_limits<double>::infinity());
    e.time_max = std::nextafter(e.time_max, std::numeric_limits<double>::infinity());
    return e;
}

long GriddedField::num_observed() const {
    long acc = 0;
    for (std::uint8_t b : observed) acc += b != 0;
    return acc;
}

long GriddedField::num_missing() const {
    return static_cast<long>(observed.size()) - num_observed();
}

GriddedField bin_to_grid(const std::vector<RawMeasurement>& records, const GridExtent& extent,
                         const BinningOptions& opts) {
    if (!(extent.milepost_max > extent.milepost_min) || !(extent.time_max > extent.time_min))
        throw InvalidArgumentError("grid extent is empty");
    if (extent.num_lanes < 1) throw InvalidArgumentError("extent must cover at least one lane");
    if (!(opts.cell_miles > 0.0) || !(opts.dt_seconds > 0.0) || !(opts.record_seconds > 0.0))
        throw InvalidArgumentError("bin widths must be positive");

    const int num_cells = bin_count(extent.milepost_max - extent.milepost_min, opts.cell_miles);
    const int num_steps = bin_count(extent.time_max - extent.time_min, opts.dt_seconds);
    const int num_nodes = extent.num_lanes * num_cells;

    GriddedField field;
    field.num_lanes = extent.num_lanes;
    field.num_cells = num_cells;
    field.cell_miles = opts.cell_miles;
    field.dt_seconds = opts.dt_seconds;
    field.tensor = TrafficTensor(num_nodes, num_steps, 3);
    field.tensor.cell_miles = opts.cell_miles;
    field.tensor.dt_seconds = opts.dt_seconds;
    const size_t bins = static_cast<size_t>(num_nodes) * num_steps;
    field.observed.assign(bins, 0);
    field.volume_sum.assign(bins, 0.0);
    field.sample_count.assign(bins, 0);

    std::vector<double> speed_sum(bins, 0.0), occ_sum(bins, 0.0);
    for (const RawMeasurement& m : records) {
        if (m.lane < 1 || m.lane > extent.num_lanes || m.milepost < extent.milepost_min ||
            m.milepost >= extent.milepost_max || m.timestamp < extent.time_min ||
            m.timestamp >= extent.time_max) {
            ++field.skipped_records;
            continue;
        }
        int cell = static_cast<int>((m.milepost - extent.milepost_min) / opts.cell_miles);
        int step = static_cast<int>((m.timestamp - extent.time_min) / opts.dt_seconds);
        cell = std::min(cell, num_cells - 1);
        step = std::min(step, num_steps - 1);
        const size_t bin =
            (static_cast<size_t>(m.lane - 1) * num_cells + cell) * num_steps + step;
        speed_sum[bin] += m.speed;
        field.volume_sum[bin] += m.volume;
        occ_sum[bin] += m.occupancy;
        field.sample_count[bin] += 1;
    }
    if (field.skipped_records == static_cast<long>(records.size()))
        throw EmptyDataError("no measurement falls inside the grid extent");

    for (int node = 0; node < num_nodes; ++node)
        for (int step = 0; step < num_steps; ++step) {
            const size_t bin = static_cast<size_t>(node) * num_steps + step;
            const int n = field.sample_count[bin];
            if (n == 0) continue;
            field.observed[bin] = 1;
            const double speed = speed_sum[bin] / n;
            const double volume = field.volume_sum[bin] / n;
            const double occupancy = occ_sum[bin] / n;
            const double flow = volume * 3600.0 / opts.record_seconds;
            const double density = speed > opts.min_speed_for_density
                                       ? flow / speed
                                       : occupancy * opts.jam_density;
            field.tensor.at(node, step, 0) = flow;
            field.tensor.at(node, step, 1) = density;
            field.tensor.at(node, step, 2) = speed;
        }
    return field;
}

void AsmParams::validate() const {
    if (!(c_free > 0.0)) throw ConfigError("free-flow characteristic speed must be positive");
    if (!(c_cong < 0.0)) throw ConfigError("congested wave speed must be negative");
    if (!(sigma > 0.0)) throw ConfigError("spatial kernel width must be positive");
    if (!(tau_smooth > 0.0)) throw ConfigError("temporal kernel width must be positive");
    if (!(delta_v > 0.0)) throw ConfigError("transition width must be positive");
}

namespace {

struct LaneObs {
    int cell;
    int step;
    double value[3];
};

// exp(-|dx - c dt|/sigma - |dt|/tau) with dx in miles, dt in seconds, c in mph.
double asm_kernel(double dx_miles, double dt_seconds, double c_mph, double sigma, double tau) {
    const double shifted = dx_miles - c_mph * dt_seconds / 3600.0;
    return std::exp(-std::fabs(shifted) / sigma - std::fabs(dt_seconds) / tau);
}

}  // namespace

TrafficTensor asm_interpolate(const GriddedField& field, const AsmParams& params) {
    params.validate();
    const int num_cells = field.num_cells;
    const int num_lanes = field.num_lanes;
    const int num_steps = field.tensor.num_steps();

    std::vector<std::vector<LaneObs>> by_lane(static_cast<size_t>(num_lanes));
    for (int lane = 0; lane < num_lanes; ++lane)
        for (int cell = 0; cell < num_cells; ++cell) {
            const int node = lane * num_cells + cell;
            for (int step = 0; step < num_steps; ++step) {
                if (!field.is_observed(node, step)) continue;
                LaneObs o;
                o.cell = cell;
                o.step = step;
                for (int f = 0; f < 3; ++f) o.value[f] = field.tensor.at(node, step, f);
                by_lane[static_cast<size_t>(lane)].push_back(o);
            }
        }
    for (int lane = 0; lane < num_lanes; ++lane)
        if (by_lane[static_cast<size_t>(lane)].empty())
            throw LaneDataError("lane " + std::to_string(lane + 1) +
                                " has no observed bins; cannot interpolate");

    // Beyond ~14 temporal widths the kernel is below 1e-6 of its peak;
    // truncating there bounds the per-bin work. Observations are grid-
    // aligned, so both kernels reduce to lookup tables over (dcell, dstep).
    const int max_ds = std::min(
        num_steps - 1,
        static_cast<int>(std::ceil(14.0 * params.tau_smooth / field.dt_seconds)));
    const int span_c = num_cells - 1;
    const int span_s = max_ds;
    const size_t table_w = static_cast<size_t>(2 * span_s + 1);
    std::vector<double> k_free(static_cast<size_t>(2 * span_c + 1) * table_w);
    std::vector<double> k_cong(k_free.size());
    for (int dc = -span_c; dc <= span_c; ++dc)
        for (int ds = -span_s; ds <= span_s; ++ds) {
            const double dx = dc * field.cell_miles;
            const double dt = ds * field.dt_seconds;
            const size_t idx = static_cast<size_t>(dc + span_c) * table_w +
                               static_cast<size_t>(ds + span_s);
            k_free[idx] = asm_kernel(dx, dt, params.c_free, params.sigma, params.tau_smooth);
            k_cong[idx] = asm_kernel(dx, dt, params.c_cong, params.sigma, params.tau_smooth);
        }

    TrafficTensor out = field.tensor.zeros_like();
    out.cell_miles = field.cell_miles;
    out.dt_seconds = field.dt_seconds;

    for (int lane = 0; lane < num_lanes; ++lane) {
        const std::vector<LaneObs>& obs = by_lane[static_cast<size_t>(lane)];
        // Observations sorted by step for the truncation window.
        std::vector<const LaneObs*> by_step(obs.size());
        for (size_t i = 0; i < obs.size(); ++i) by_step[i] = &obs[i];
        std::stable_sort(by_step.begin(), by_step.end(),
                         [](const LaneObs* a, const LaneObs* b) { return a->step < b->step; });

        for (int cell = 0; cell < num_cells; ++cell) {
            const int node = lane * num_cells + cell;
            for (int step = 0; step < num_steps; ++step) {
                double zf = 0.0, zc = 0.0, vf[3] = {0, 0, 0}, vc[3] = {0, 0, 0};

                auto lo = std::lower_bound(
                    by_step.begin(), by_step.end(), step - span_s,
                    [](const LaneObs* o, int s) { return o->step < s; });
                for (auto it = lo; it != by_step.end() && (*it)->step <= step + span_s; ++it) {
                    const LaneObs& o = **it;
                    const size_t idx = static_cast<size_t>(cell - o.cell + span_c) * table_w +
                                       static_cast<size_t>(step - o.step + span_s);
                    const double kf = k_free[idx];
                    const double kc = k_cong[idx];
                    zf += kf;
                    zc += kc;
                    for (int f = 0; f < 3; ++f) {
                        vf[f] += kf * o.value[f];
                        vc[f] += kc * o.value[f];
                    }
                }

                if (zf <= 0.0 || zc <= 0.0) {
                    // No observation survived truncation/underflow: fall back
                    // to the nearest observation in kernel distance.
                    double best = std::numeric_limits<double>::infinity();
                    const LaneObs* nearest = &obs.front();
                    for (const LaneObs& o : obs) {
                        const double d =
                            std::fabs((cell - o.cell) * field.cell_miles) / params.sigma +
                            std::fabs((step - o.step) * field.dt_seconds) / params.tau_smooth;
                        if (d < best) {
                            best = d;
                            nearest = &o;
                        }
                    }
                    for (int f = 0; f < 3; ++f) out.at(node, step, f) = nearest->value[f];
                    continue;
                }

                const double v_cong = vc[2] / zc;
                const double w =
                    0.5 * (1.0 + std::tanh((params.v_crit - v_cong) / params.delta_v));
                for (int f = 0; f < 3; ++f) {
                    const double blended = w * (vc[f] / zc) + (1.0 - w) * (vf[f] / zf);
                    out.at(node, step, f) = std::max(0.0, blended);
                }
            }
        }
    }
    return out;
}

void SynthConfig::validate() const {
    if (num_lanes < 1 || num_cells < 1) throw InvalidArgumentError("grid must be non-empty");
    if (num_steps < 20) throw InvalidArgumentError("at least 20 steps required");
    if (trigger_lane < 0 || trigger_lane >= num_lanes || trigger_cell < 0 ||
        trigger_cell >= num_cells || trigger_step < 0 || trigger_step >= num_steps)
        throw InvalidArgumentError("trigger (lane, cell, step) outside the grid");
    if (!(v_free > 0.0) || !(v_min > 0.0) || !(v_min < v_free))
        throw InvalidArgumentError("speeds must satisfy 0 < v_min < v_free");
    if (!(v_ref > v_free)) throw InvalidArgumentError("v_ref must exceed v_free");
    if (noise < 0.0) throw InvalidArgumentError("noise amplitude must be non-negative");
    if (!(wave_steps_per_cell > 0.0) || !(rise_steps > 0.0) || !(recovery_steps > 0.0) ||
        !(decay_cells > 0.0))
        throw InvalidArgumentError("wave and decay constants must be positive");
    if (!(lane_decay > 0.0) || lane_decay > 1.0)
        throw InvalidArgumentError("lane decay must be in (0, 1]");
    if (!(rho_jam > 0.0)) throw InvalidArgumentError("jam density must be positive");
}

SynthResult synth_breakdown(const SynthConfig& config) {
    config.validate();
    const int N = config.num_lanes * config.num_cells;
    TrafficTensor tensor(N, config.num_steps, 3);

    const double dv = config.v_free - config.v_min;
    std::mt19937_64 rng(config.seed);

    for (int lane = 0; lane < config.num_lanes; ++lane) {
        const double lane_att =
            std::pow(config.lane_decay, std::abs(lane - config.trigger_lane));
        for (int cell = 0; cell < config.num_cells; ++cell) {
            const int node = lane * config.num_cells + cell;
            const int dist = config.trigger_cell - cell;  // >= 0 means upstream
            const double cell_att =
                dist >= 0 ? std::exp(-static_cast<double>(dist) / config.decay_cells) : 0.0;
            const double arrival =
                config.trigger_step + config.wave_steps_per_cell * std::max(dist, 0);
            for (int step = 0; step < config.num_steps; ++step) {
                double drop = 0.0;
                if (dist >= 0) {
                    const double u = step - arrival;
                    const double onset = u < 0.0 ? std::exp(u / config.rise_steps)
                                                 : std::exp(-u / config.recovery_steps);
                    drop = dv * onset * cell_att * lane_att;
                }
                const double eps = config.noise * (2.0 * next_double(rng) - 1.0);
                const double speed = std::max(0.0, config.v_free - drop + eps);
                const double density = config.rho_jam * (1.0 - speed / config.v_ref);
                tensor.at(node, step, 0) = density * speed;  // flow, vehicles/hour
                tensor.at(node, step, 1) = density;
                tensor.at(node, step, 2) = speed;
            }
        }
    }

    SynthResult result;
    result.tensor = std::move(tensor);
    result.trigger = TriggerRecord{config.trigger_lane, config.trigger_cell,
                                   config.trigger_step, config.v_min};
    return result;
}

SynthResult synth_breakdown(int num_lanes, int num_cells, int num_steps, std::uint64_t seed,
                            int trigger_lane, int trigger_cell, int trigger_step) {
    SynthConfig cfg;
    cfg.num_lanes = num_lanes;
    cfg.num_cells = num_cells;
    cfg.num_steps = num_steps;
    cfg.seed = seed;
    cfg.trigger_lane = trigger_lane;
    cfg.trigger_cell = trigger_cell;
    cfg.trigger_step = trigger_step;
    return synth_breakdown(cfg);
}

void export_heatmap(const Eigen::MatrixXd& field, const std::string& path) {
    if (!field.allFinite()) throw InvalidArgumentError("heatmap contains non-finite values");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    char buf[40];
    for (int c = 0; c < field.cols(); ++c) out << ',' << c;
    out << "\n";
    for (int r = 0; r < field.rows(); ++r) {
        out << r;
        for (int c = 0; c < field.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.9g", field(r, c));
            out << ',' << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

Eigen::MatrixXd read_heatmap(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": missing header row");
    const size_t cols = split_csv_line(line).size() - 1;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != cols + 1)
            throw SchemaError(path + ": inconsistent column count on row " +
                              std::to_string(rows.size() + 1));
        std::vector<double> vals(cols);
        for (size_t c = 0; c < cols; ++c)
            if (!parse_double(fields[c + 1], vals[c]))
                throw SchemaError(path + ": unparsable value on row " +
                                  std::to_string(rows.size() + 1));
        rows.push_back(std::move(vals));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (size_t r = 0; r < rows.size(); ++r)
        for (size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
}

void write_tensor_csv(const TrafficTensor& tensor, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "node,step,flow,density,speed\n";
    char buf[40];
    for (int i = 0; i < tensor.num_nodes(); ++i)
        for (int t = 0; t < tensor.num_steps(); ++t) {
            out << i << ',' << t;
            for (int f = 0; f < tensor.num_features(); ++f) {
                std::snprintf(buf, sizeof(buf), "%.9g", tensor.at(i, t, f));
                out << ',' << buf;
            }
            out << "\n";
        }
    if (!out) throw IoError("failed writing " + path);
}

TrafficTensor read_tensor_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw SchemaError(path + ": missing header row");
    {
        const std::vector<std::string> header = split_csv_line(line);
        const std::vector<std::string> want = {"node", "step", "flow", "density", "speed"};
        bool ok = header.size() == want.size();
        for (size_t j = 0; ok && j < want.size(); ++j) ok = trim(header[j]) == want[j];
        if (!ok) throw SchemaError(path + ": expected header node,step,flow,density,speed");
    }

    struct Row {
        int node, step;
        double v[3];
    };
    std::vector<Row> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != 5)
            throw SchemaError(path + ": wrong field count on data row " +
                              std::to_string(rows.size() + 1));
        double raw[5];
        for (int c = 0; c < 5; ++c)
            if (!parse_double(fields[static_cast<size_t>(c)], raw[c]) || !std::isfinite(raw[c]))
                throw SchemaError(path + ": non-finite or unparsable value on data row " +
                                  std::to_string(rows.size() + 1));
        Row r;
        r.node = static_cast<int>(raw[0]);
        r.step = static_cast<int>(raw[1]);
        for (int f = 0; f < 3; ++f) r.v[f] = raw[f + 2];
        rows.push_back(r);
    }
    if (rows.empty()) throw EmptyDataError(path + ": no data rows");

    const int num_nodes = rows.back().node + 1;
    const int num_steps = rows.back().step + 1;
    if (static_cast<long>(rows.size()) != static_cast<long>(num_nodes) * num_steps)
        throw SchemaError(path + ": incomplete grid (" + std::to_string(rows.size()) +
                          " rows for " + std::to_string(num_nodes) + "x" +
                          std::to_string(num_steps) + ")");
    TrafficTensor tensor(num_nodes, num_steps, 3);
    for (size_t r = 0; r < rows.size(); ++r) {
        const int node = static_cast<int>(r) / num_steps;
        const int step = static_cast<int>(r) % num_steps;
        if (rows[r].node != node || rows[r].step != step)
            throw SchemaError(path + ": rows must be ordered by (node, step); row " +
                              std::to_string(r + 1) + " is out of place");
        for (int f = 0; f < 3; ++f) tensor.at(node, step, f) = rows[r].v[f];
    }
    return tensor;
}

}  // namespace stga
