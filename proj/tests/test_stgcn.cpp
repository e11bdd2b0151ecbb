#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "stga/errors.hpp"
#include "stga/graph.hpp"
#include "stga/stgcn.hpp"

using namespace stga;

namespace {

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor); the floor turns the metric
// absolute for near-zero components so finite-difference noise cannot fail
// a structurally tiny gradient.
double max_rel_err(const StgcnWeights& a, const StgcnWeights& b, double floor = 1e-2) {
    auto ab = a.blocks();
    auto bb = b.blocks();
    double worst = 0.0;
    for (size_t k = 0; k < ab.size(); ++k) {
        REQUIRE(ab[k]->size() == bb[k]->size());
        for (size_t i = 0; i < ab[k]->size(); ++i) {
            const double x = (*ab[k])[i];
            const double y = (*bb[k])[i];
            const double denom = std::max({std::abs(x), std::abs(y), floor});
            worst = std::max(worst, std::abs(x - y) / denom);
        }
    }
    return worst;
}

StgcnHyper small_hyper() {
    StgcnHyper h;
    h.cheb_order = 3;
    h.temporal_kernel = 3;
    h.hidden_channels = 4;
    h.window = 5;
    h.horizon = 1;
    h.features = 3;
    return h;
}

// K_t=1, K=1, C_h=F, unit kernels on the diagonal, projection selecting the
// last remaining step: the network reduces to "copy the last input step".
StgcnParams identity_params(int features, int window) {
    StgcnHyper h;
    h.cheb_order = 1;
    h.temporal_kernel = 1;
    h.hidden_channels = features;
    h.window = window;
    h.horizon = 1;
    h.features = features;
    StgcnParams p = init_params(h, 0);
    for (auto* block : p.weights.blocks()) std::fill(block->begin(), block->end(), 0.0);
    const int c = features;
    for (int i = 0; i < c; ++i) {
        p.weights.t1_w[size_t(i) * c + i] = 1.0;   // [C][F][1]
        p.weights.theta[size_t(i) * c + i] = 1.0;  // [1][C][C]
        p.weights.t2_w[size_t(i) * c + i] = 1.0;   // [C][C][1]
    }
    const int t2 = h.collapsed_width();
    for (int f = 0; f < features; ++f) {
        // out_w[h][F][T2][C], select step t2-1, channel f
        p.weights.out_w[((size_t(f) * t2) + (t2 - 1)) * c + f] = 1.0;
    }
    return p;
}

}  // namespace

TEST_CASE("hyper validation rejects inconsistent shapes") {
    StgcnHyper h = small_hyper();
    CHECK_NOTHROW(h.validate());
    h.window = 4;  // collapsed width would be 0
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = small_hyper();
    h.cheb_order = 0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = small_hyper();
    h.horizon = 0;
    CHECK_THROWS_AS(h.validate(), ConfigError);
    h = small_hyper();
    h.features = -1;
    CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("init: seeded, bounded by fan-in, zero biases, neutral scaler") {
    StgcnHyper h = small_hyper();
    StgcnParams a = init_params(h, 9);
    StgcnParams b = init_params(h, 9);
    StgcnParams c = init_params(h, 10);
    CHECK(a.weights.t1_w == b.weights.t1_w);
    CHECK(a.weights.out_w == b.weights.out_w);
    CHECK(a.weights.theta != c.weights.theta);

    const double bound1 = 1.0 / std::sqrt(double(h.features * h.temporal_kernel));
    for (double w : a.weights.t1_w) CHECK(std::abs(w) <= bound1);
    for (double bias : a.weights.t1_b) CHECK(bias == 0.0);
    for (double bias : a.weights.out_b) CHECK(bias == 0.0);
    for (double m : a.scaler.mean) CHECK(m == 0.0);
    for (double s : a.scaler.stdev) CHECK(s == 1.0);
}

TEST_CASE("forward: zero weights give zero output; runs are bit-identical") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnHyper h = small_hyper();
    StgcnParams p = init_params(h, 4);
    std::mt19937_64 rng(21);
    TrafficTensor window = oracle::random_tensor(g.num_nodes(), h.window, h.features, rng);

    StgcnParams zero = p;
    for (auto* block : zero.weights.blocks()) std::fill(block->begin(), block->end(), 0.0);
    TrafficTensor out0 = forward(zero, window, ops);
    CHECK(out0.num_nodes() == g.num_nodes());
    CHECK(out0.num_steps() == h.horizon);
    CHECK(out0.num_features() == h.features);
    for (double v : out0.values()) CHECK(v == 0.0);

    TrafficTensor y1 = forward(p, window, ops);
    TrafficTensor y2 = forward(p, window, ops);
    CHECK(y1.values() == y2.values());
}

TEST_CASE("forward: hand-built identity configuration copies the last step") {
    LatticeGraph g = build_lattice_graph(2, 4, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnParams p = identity_params(3, 6);
    std::mt19937_64 rng(33);
    TrafficTensor window = oracle::random_tensor(g.num_nodes(), 6, 3, rng, 0.0, 5.0);
    TrafficTensor out = forward(p, window, ops);
    for (int i = 0; i < g.num_nodes(); ++i) {
        for (int f = 0; f < 3; ++f) {
            CHECK(out.at(i, 0, f) == doctest::Approx(window.at(i, 5, f)).epsilon(1e-12));
            CHECK(predict_node(p, window, ops, i, f, 0) ==
                  doctest::Approx(window.at(i, 5, f)).epsilon(1e-12));
        }
    }
    CHECK_THROWS_AS(predict_node(p, window, ops, g.num_nodes(), 0, 0), InvalidArgumentError);
    CHECK_THROWS_AS(predict_node(p, window, ops, 0, 3, 0), InvalidArgumentError);
    CHECK_THROWS_AS(predict_node(p, window, ops, 0, 0, 1), InvalidArgumentError);
}

TEST_CASE("forward: permutation equivariance of node relabeling") {
    LatticeGraph g = build_lattice_graph(2, 5, true);
    SpectralOperators ops = spectral_operators(g);
    const int n = g.num_nodes();
    StgcnHyper h = small_hyper();
    StgcnParams p = init_params(h, 12);
    std::mt19937_64 rng(40);
    TrafficTensor window = oracle::random_tensor(n, h.window, h.features, rng);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);

    SpectralOperators pops = ops;  // same lambda_max; relabel rows/cols
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            pops.laplacian(perm[i], perm[j]) = ops.laplacian(i, j);
            pops.scaled_laplacian(perm[i], perm[j]) = ops.scaled_laplacian(i, j);
        }
        pops.degree(perm[i]) = ops.degree(i);
    }
    TrafficTensor pwindow(n, h.window, h.features);
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < h.window; ++t)
            for (int f = 0; f < h.features; ++f) pwindow.at(perm[i], t, f) = window.at(i, t, f);

    TrafficTensor out = forward(p, window, ops);
    TrafficTensor pout = forward(p, pwindow, pops);
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
        for (int f = 0; f < h.features; ++f)
            worst = std::max(worst, std::abs(pout.at(perm[i], 0, f) - out.at(i, 0, f)));
    CHECK(worst < 1e-10);
}

TEST_CASE("mse_loss: closed forms and naive-loop oracle") {
    TrafficTensor a(2, 3, 1), b(2, 3, 1);
    for (double& v : a.values()) v = 1.0;
    CHECK(mse_loss(a, a) == 0.0);
    CHECK(mse_loss(a, b) == doctest::Approx(6.0 / (2.0 * 3.0)));

    std::mt19937_64 rng(8);
    TrafficTensor x = oracle::random_tensor(4, 5, 3, rng);
    TrafficTensor y = oracle::random_tensor(4, 5, 3, rng);
    double naive = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int t = 0; t < 5; ++t)
            for (int f = 0; f < 3; ++f) {
                double d = x.at(i, t, f) - y.at(i, t, f);
                naive += d * d;
            }
    naive /= 4.0 * 5.0;
    CHECK(mse_loss(x, y) == doctest::Approx(naive).epsilon(1e-12));
    CHECK_THROWS_AS(mse_loss(a, TrafficTensor(2, 3, 2)), InvalidDimensionError);
}

TEST_CASE("backward: zero residual gives zero gradients") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnHyper h = small_hyper();
    StgcnParams p = init_params(h, 3);
    std::mt19937_64 rng(14);
    TrafficTensor window = oracle::random_tensor(g.num_nodes(), h.window, h.features, rng);
    TrafficTensor truth = forward(p, window, ops);
    BackwardResult r = backward(p, window, truth, ops);
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-18));
    for (auto* block : r.grad.blocks())
        for (double v : *block) CHECK(v == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("backward: matches central finite differences") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnHyper h = small_hyper();
    REQUIRE(g.num_nodes() == 6);
    std::mt19937_64 rng(77);
    for (uint64_t seed : {101ull, 102ull}) {
        StgcnParams p = init_params(h, seed);
        TrafficTensor window = oracle::random_tensor(6, h.window, h.features, rng);
        TrafficTensor truth = oracle::random_tensor(6, h.horizon, h.features, rng);
        BackwardResult r = backward(p, window, truth, ops);
        CHECK(r.loss == doctest::Approx(training_loss(p, window, truth, ops)).epsilon(1e-14));
        StgcnWeights fd = oracle::fd_gradient(p, window, truth, ops);
        CHECK(max_rel_err(r.grad, fd) < 1e-6);
    }
}

TEST_CASE("backward: float32 gradients agree with the float64 oracle loosely") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnHyper h = small_hyper();
    std::mt19937_64 rng(78);
    StgcnParams p = init_params(h, 200);
    TrafficTensor window = oracle::random_tensor(6, h.window, h.features, rng);
    TrafficTensor truth = oracle::random_tensor(6, h.horizon, h.features, rng);
    BackwardResult r32 = backward(p, window, truth, ops, Precision::f32);
    StgcnWeights fd = oracle::fd_gradient(p, window, truth, ops);
    CHECK(max_rel_err(r32.grad, fd) < 1e-3);
}

TEST_CASE("backward: structurally dead upstream parameters get zero gradient") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnHyper h = small_hyper();
    StgcnParams p = init_params(h, 5);
    std::fill(p.weights.out_w.begin(), p.weights.out_w.end(), 0.0);
    std::mt19937_64 rng(15);
    TrafficTensor window = oracle::random_tensor(6, h.window, h.features, rng);
    TrafficTensor truth = oracle::random_tensor(6, h.horizon, h.features, rng);
    BackwardResult r = backward(p, window, truth, ops);
    for (auto* block : {&r.grad.t1_w, &r.grad.t1_b, &r.grad.theta, &r.grad.sp_b, &r.grad.t2_w,
                        &r.grad.t2_b})
        for (double v : *block) CHECK(v == 0.0);
    // the output layer itself still learns
    double norm = 0.0;
    for (double v : r.grad.out_b) norm += std::abs(v);
    CHECK(norm > 0.0);
}

TEST_CASE("train: constant series is learned to tiny loss within 200 epochs") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    StgcnHyper h = small_hyper();
    h.window = 6;
    TrafficTensor series(6, 30, 3);
    for (int i = 0; i < 6; ++i)
        for (int t = 0; t < 30; ++t)
            for (int f = 0; f < 3; ++f) series.at(i, t, f) = 10.0 * (f + 1);
    auto pairs = make_training_pairs(series, h);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 1e-2;
    TrainResult res = train(pairs, g, h, cfg);
    CHECK(res.epoch_loss.size() == 200);
    CHECK(res.epoch_loss.back() < 1e-4);
}

TEST_CASE("train: fixed seed reproduces parameters bit-for-bit") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    StgcnHyper h = small_hyper();
    h.window = 6;
    std::mt19937_64 rng(91);
    TrafficTensor series = oracle::random_tensor(6, 24, 3, rng, 0.0, 60.0);
    auto pairs = make_training_pairs(series, h);
    TrainConfig cfg;
    cfg.epochs = 5;
    TrainResult a = train(pairs, g, h, cfg);
    TrainResult b = train(pairs, g, h, cfg);
    for (size_t k = 0; k < 8; ++k)
        CHECK(*a.params.weights.blocks()[k] == *b.params.weights.blocks()[k]);
    CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("train: zero learning rate leaves the initialization untouched") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    StgcnHyper h = small_hyper();
    h.window = 6;
    std::mt19937_64 rng(92);
    TrafficTensor series = oracle::random_tensor(6, 20, 3, rng);
    auto pairs = make_training_pairs(series, h);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.learning_rate = 0.0;
    TrainResult res = train(pairs, g, h, cfg);
    StgcnParams fresh = init_params(h, cfg.seed);
    for (size_t k = 0; k < 8; ++k)
        CHECK(*res.params.weights.blocks()[k] == *fresh.weights.blocks()[k]);
}

TEST_CASE("train: exploding step reports divergence with the epoch") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    StgcnHyper h = small_hyper();
    h.window = 6;
    std::mt19937_64 rng(93);
    TrafficTensor series = oracle::random_tensor(6, 20, 3, rng, 0.0, 100.0);
    auto pairs = make_training_pairs(series, h);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 1e12;
    cfg.optimizer = TrainConfig::Optimizer::GradientDescent;
    CHECK_THROWS_AS(train(pairs, g, h, cfg), DivergenceError);
}

TEST_CASE("train: empty dataset is rejected") {
    LatticeGraph g = build_lattice_graph(2, 3, true);
    CHECK_THROWS_AS(train({}, g, small_hyper(), TrainConfig{}), InvalidArgumentError);
}

TEST_CASE("training pairs: count, stride and chronology") {
    std::mt19937_64 rng(94);
    TrafficTensor series = oracle::random_tensor(4, 20, 3, rng);
    StgcnHyper h;
    h.window = 12;
    h.horizon = 1;
    auto pairs = make_training_pairs(series, h);
    CHECK(pairs.size() == 8);  // 20 - 13 + 1
    CHECK(pairs[0].window.num_steps() == 12);
    CHECK(pairs[0].target.num_steps() == 1);
    for (int t = 0; t < 12; ++t)
        CHECK(pairs[0].window.at(2, t, 1) == series.at(2, t, 1));
    CHECK(pairs[3].target.at(1, 0, 0) == series.at(1, 15, 0));
    CHECK(make_training_pairs(series, h, 2).size() == 4);
    StgcnHyper big = h;
    big.window = 30;
    CHECK_THROWS_AS(make_training_pairs(series, big), InvalidArgumentError);
}

TEST_CASE("persistence baseline: repeats the last window step") {
    TrafficTensor window(1, 3, 1), target(1, 1, 1);
    window.at(0, 0, 0) = 1.0;
    window.at(0, 1, 0) = 2.0;
    window.at(0, 2, 0) = 3.0;
    target.at(0, 0, 0) = 5.0;
    std::vector<WindowPair> pairs{{window, target}};
    CHECK(persistence_mse(pairs) == doctest::Approx(4.0));  // (5-3)^2 / (1*1)
}

TEST_CASE("params file: round trip is bit-exact, corruption is a schema error") {
    StgcnHyper h = small_hyper();
    StgcnParams p = init_params(h, 31);
    p.scaler.mean = {1.0, 2.0, 3.0};
    p.scaler.stdev = {4.0, 5.0, 6.0};
    const std::string path = "params_roundtrip_test.json";
    save_params_json(p, path);
    StgcnParams q = load_params_json(path);
    CHECK(q.hyper.cheb_order == h.cheb_order);
    CHECK(q.hyper.window == h.window);
    CHECK(q.seed == p.seed);
    CHECK(q.scaler.mean == p.scaler.mean);
    CHECK(q.scaler.stdev == p.scaler.stdev);
    for (size_t k = 0; k < 8; ++k)
        CHECK(*q.weights.blocks()[k] == *p.weights.blocks()[k]);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_params_json("does_not_exist.json"), IoError);
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{ not json", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(load_params_json(path), SchemaError);
    std::remove(path.c_str());
}

TEST_CASE("precision: float32 forward tracks float64 to about single precision") {
    LatticeGraph g = build_lattice_graph(2, 4, true);
    SpectralOperators ops = spectral_operators(g);
    StgcnHyper h = small_hyper();
    StgcnParams p = init_params(h, 55);
    std::mt19937_64 rng(56);
    TrafficTensor window = oracle::random_tensor(g.num_nodes(), h.window, h.features, rng);
    TrafficTensor y64 = forward(p, window, ops, Precision::f64);
    TrafficTensor y32 = forward(p, window, ops, Precision::f32);
    for (size_t i = 0; i < y64.values().size(); ++i) {
        double denom = std::max(std::abs(y64.values()[i]), 1e-2);
        CHECK(std::abs(y64.values()[i] - y32.values()[i]) / denom < 1e-3);
    }
}
