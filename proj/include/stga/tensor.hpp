#pragma once

#include <string>
#include <vector>

#include "stga/errors.hpp"

namespace stga {

/// Dense (node, time, feature) array of macroscopic traffic measurements.
///
/// Values are stored row-major as (i * num_steps + t) * num_features + f.
/// The default feature order is flow [veh/h], density [veh/mi], speed [mph].
class TrafficTensor {
  public:
    TrafficTensor() = default;
    TrafficTensor(int num_nodes, int num_steps, int num_features)
        : num_nodes_(num_nodes), num_steps_(num_steps), num_features_(num_features) {
        if (num_nodes < 1 || num_steps < 1 || num_features < 1)
            throw InvalidDimensionError("TrafficTensor dimensions must be positive");
        values_.assign(static_cast<size_t>(num_nodes) * num_steps * num_features, 0.0);
    }

    int num_nodes() const { return num_nodes_; }
    int num_steps() const { return num_steps_; }
    int num_features() const { return num_features_; }
    size_t size() const { return values_.size(); }

    double& at(int i, int t, int f) { return values_[index(i, t, f)]; }
    double at(int i, int t, int f) const { return values_[index(i, t, f)]; }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    std::vector<std::string> feature_names = {"flow", "density", "speed"};
    double dt_seconds = 10.0;
    double cell_miles = 0.1;

    bool same_shape(const TrafficTensor& o) const {
        return num_nodes_ == o.num_nodes_ && num_steps_ == o.num_steps_ &&
               num_features_ == o.num_features_;
    }

    /// Copy of steps [t0, t0 + len).
    TrafficTensor slice_steps(int t0, int len) const {
        if (t0 < 0 || len < 1 || t0 + len > num_steps_)
            throw InvalidDimensionError("slice_steps out of range");
        TrafficTensor out(num_nodes_, len, num_features_);
        out.feature_names = feature_names;
        out.dt_seconds = dt_seconds;
        out.cell_miles = cell_miles;
        for (int i = 0; i < num_nodes_; ++i)
            for (int t = 0; t < len; ++t)
                for (int f = 0; f < num_features_; ++f) out.at(i, t, f) = at(i, t0 + t, f);
        return out;
    }

    TrafficTensor zeros_like() const {
        TrafficTensor out(num_nodes_, num_steps_, num_features_);
        out.feature_names = feature_names;
        out.dt_seconds = dt_seconds;
        out.cell_miles = cell_miles;
        return out;
    }

    int feature_index(const std::string& name) const {
        for (size_t f = 0; f < feature_names.size(); ++f)
            if (feature_names[f] == name) return static_cast<int>(f);
        throw InvalidArgumentError("unknown feature: " + name);
    }

  private:
    size_t index(int i, int t, int f) const {
        return (static_cast<size_t>(i) * num_steps_ + t) * num_features_ + f;
    }

    int num_nodes_ = 0;
    int num_steps_ = 0;
    int num_features_ = 0;
    std::vector<double> values_;
};

}  // namespace stga
