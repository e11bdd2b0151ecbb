#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stga/graph.hpp"
#include "stga/tensor.hpp"

namespace stga {

/// Fixed architecture: temporal conv (width K_t, F -> C_h, ReLU) ->
/// Chebyshev graph conv (order K, C_h -> C_h, ReLU) -> temporal conv
/// (width K_t, C_h -> C_h, ReLU) -> linear projection collapsing the
/// remaining temporal width to `horizon` steps of all features.
struct StgcnHyper {
    int cheb_order = 3;        // K
    int temporal_kernel = 3;   // K_t
    int hidden_channels = 16;  // C_h
    int window = 12;           // tau, input steps
    int horizon = 1;           // h, predicted steps
    int features = 3;          // F

    // Temporal width left after both valid convolutions.
    int collapsed_width() const { return window - 2 * (temporal_kernel - 1); }
    void validate() const;
};

/// Per-feature standardization fitted on training data; stored with the
/// parameters and inverted at prediction output.
struct FeatureScaler {
    std::vector<double> mean;
    std::vector<double> stdev;
};

/// Learnable weights, one flat row-major array per layer.
struct StgcnWeights {
    std::vector<double> t1_w;   // [C][F][Kt]
    std::vector<double> t1_b;   // [C]
    std::vector<double> theta;  // [K][C][C]  (order, in channel, out channel)
    std::vector<double> sp_b;   // [C]
    std::vector<double> t2_w;   // [C][C][Kt] (out, in, tap)
    std::vector<double> t2_b;   // [C]
    std::vector<double> out_w;  // [h][F][T2][C]
    std::vector<double> out_b;  // [h][F]

    std::array<std::vector<double>*, 8> blocks();
    std::array<const std::vector<double>*, 8> blocks() const;
};

struct StgcnParams {
    StgcnHyper hyper;
    FeatureScaler scaler;
    std::uint64_t seed = 0;
    StgcnWeights weights;
};

enum class Precision { f32, f64 };

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 1;
    int batch = 8;  // window pairs per optimizer step
    std::uint64_t seed = 42;
    Precision precision = Precision::f64;
    enum class Optimizer { GradientDescent, Adam } optimizer = Optimizer::Adam;
};

struct WindowPair {
    TrafficTensor window;  // (N, tau, F)
    TrafficTensor target;  // (N, h, F)
};

/// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero,
/// neutral scaler (mean 0, stdev 1).
StgcnParams init_params(const StgcnHyper& hyper, std::uint64_t seed);

/// Prediction for the next `horizon` steps, raw units, shape (N, h, F).
TrafficTensor forward(const StgcnParams& params, const TrafficTensor& window,
                      const SpectralOperators& ops, Precision precision = Precision::f64);

/// Scalar component of forward() at (node, step, feature); the value
/// function probed by the explainer.
double predict_node(const StgcnParams& params, const TrafficTensor& window,
                    const SpectralOperators& ops, int node, int feature, int step,
                    Precision precision = Precision::f64);

/// ||truth - pred||^2 / (N * T), summing over nodes, steps and features.
double mse_loss(const TrafficTensor& truth, const TrafficTensor& pred);

/// The training objective: MSE between network output and target in
/// standardized feature space. backward() returns its exact gradient.
double training_loss(const StgcnParams& params, const TrafficTensor& window,
                     const TrafficTensor& truth, const SpectralOperators& ops,
                     Precision precision = Precision::f64);

struct BackwardResult {
    double loss = 0.0;
    StgcnWeights grad;
};

BackwardResult backward(const StgcnParams& params, const TrafficTensor& window,
                        const TrafficTensor& truth, const SpectralOperators& ops,
                        Precision precision = Precision::f64);

struct TrainResult {
    StgcnParams params;
    std::vector<double> epoch_loss;  // training objective per epoch
};

TrainResult train(const std::vector<WindowPair>& data, const LatticeGraph& graph,
                  const StgcnHyper& hyper, const TrainConfig& config);

/// Sliding (window, target) pairs from a full series, chronological order.
std::vector<WindowPair> make_training_pairs(const TrafficTensor& series, const StgcnHyper& hyper,
                                            int stride = 1);

/// MSE of the forecaster that repeats the last observed step.
double persistence_mse(const std::vector<WindowPair>& pairs);

void save_params_json(const StgcnParams& params, const std::string& path);
StgcnParams load_params_json(const std::string& path);

}  // namespace stga
