#include "stga/stgcn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "json.hpp"
#include "stga/errors.hpp"

namespace stga {

namespace {

using json = nlohmann::ordered_json;

// --- templated numeric core (S = float or double) ---------------------------

// Compressed-sparse-row copy of the scaled Laplacian. Lattice rows have at
// most five nonzeros, so the dense matvec would waste almost all its work.
template <class S>
struct Csr {
    int n = 0;
    std::vector<int> ptr;
    std::vector<int> col;
    std::vector<S> val;

    // y = M x
    void mul(const S* x, S* y) const {
        for (int i = 0; i < n; ++i) {
            S acc = 0;
            for (int k = ptr[i]; k < ptr[i + 1]; ++k) acc += val[k] * x[col[k]];
            y[i] = acc;
        }
    }
};

template <class S>
Csr<S> csr_from_dense(const Eigen::MatrixXd& m) {
    Csr<S> out;
    out.n = static_cast<int>(m.rows());
    out.ptr.assign(out.n + 1, 0);
    for (int i = 0; i < out.n; ++i) {
        for (int j = 0; j < out.n; ++j) {
            if (m(i, j) != 0.0) {
                out.col.push_back(j);
                out.val.push_back(static_cast<S>(m(i, j)));
            }
        }
        out.ptr[i + 1] = static_cast<int>(out.col.size());
    }
    return out;
}

template <class S>
struct WeightsT {
    std::vector<S> t1_w, t1_b, theta, sp_b, t2_w, t2_b, out_w, out_b;
};

template <class S>
WeightsT<S> cast_weights(const StgcnWeights& w) {
    WeightsT<S> out;
    auto cp = [](const std::vector<double>& src, std::vector<S>& dst) {
        dst.assign(src.begin(), src.end());
    };
    cp(w.t1_w, out.t1_w);
    cp(w.t1_b, out.t1_b);
    cp(w.theta, out.theta);
    cp(w.sp_b, out.sp_b);
    cp(w.t2_w, out.t2_w);
    cp(w.t2_b, out.t2_b);
    cp(w.out_w, out.out_w);
    cp(w.out_b, out.out_b);
    return out;
}

// Intermediate activations kept for the backward pass. Channel-time planes
// are stored as [(t*C + c)*N + i] so node loops hit contiguous memory.
template <class S>
struct Cache {
    std::vector<S> a0;                  // scaled input [(t*F + f)*N + i]
    std::vector<S> z1, h1;              // after temporal conv 1, [T1][C][N]
    std::vector<std::vector<S>> basis;  // Chebyshev basis per order, [T1][C][N]
    std::vector<S> z2, h2;              // after graph conv, [T1][C][N]
    std::vector<S> z3, h3;              // after temporal conv 2, [T2][C][N]
    std::vector<S> y;                   // output [(s*F + f)*N + i]
};

template <class S>
void forward_core(const StgcnHyper& hp, const WeightsT<S>& w, const FeatureScaler& sc,
                  const TrafficTensor& window, const Csr<S>& lap, Cache<S>& c) {
    const int N = window.num_nodes();
    const int F = hp.features;
    const int Kt = hp.temporal_kernel;
    const int K = hp.cheb_order;
    const int C = hp.hidden_channels;
    const int tau = hp.window;
    const int T1 = tau - (Kt - 1);
    const int T2 = T1 - (Kt - 1);
    const int h = hp.horizon;

    c.a0.assign(static_cast<size_t>(tau) * F * N, 0);
    for (int t = 0; t < tau; ++t)
        for (int f = 0; f < F; ++f) {
            const S mu = static_cast<S>(sc.mean[f]);
            const S inv = static_cast<S>(1.0 / sc.stdev[f]);
            S* dst = c.a0.data() + (static_cast<size_t>(t) * F + f) * N;
            for (int i = 0; i < N; ++i)
                dst[i] = (static_cast<S>(window.at(i, t, f)) - mu) * inv;
        }

    // temporal conv 1: valid convolution over time, F -> C channels
    c.z1.assign(static_cast<size_t>(T1) * C * N, 0);
    for (int t = 0; t < T1; ++t)
        for (int ch = 0; ch < C; ++ch) {
            S* dst = c.z1.data() + (static_cast<size_t>(t) * C + ch) * N;
            std::fill(dst, dst + N, w.t1_b[ch]);
            for (int f = 0; f < F; ++f)
                for (int q = 0; q < Kt; ++q) {
                    const S coef = w.t1_w[(static_cast<size_t>(ch) * F + f) * Kt + q];
                    const S* src = c.a0.data() + (static_cast<size_t>(t + q) * F + f) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * src[i];
                }
        }
    c.h1 = c.z1;
    for (S& v : c.h1) v = v > 0 ? v : 0;

    // Chebyshev basis: B[0] = H, B[1] = L~ H, B[k] = 2 L~ B[k-1] - B[k-2]
    c.basis.assign(K, {});
    c.basis[0] = c.h1;
    const int planes = T1 * C;
    if (K > 1) {
        c.basis[1].assign(c.h1.size(), 0);
        for (int p = 0; p < planes; ++p)
            lap.mul(c.basis[0].data() + static_cast<size_t>(p) * N,
                    c.basis[1].data() + static_cast<size_t>(p) * N);
    }
    std::vector<S> tmp(static_cast<size_t>(N));
    for (int k = 2; k < K; ++k) {
        c.basis[k].assign(c.h1.size(), 0);
        for (int p = 0; p < planes; ++p) {
            const S* prev1 = c.basis[k - 1].data() + static_cast<size_t>(p) * N;
            const S* prev2 = c.basis[k - 2].data() + static_cast<size_t>(p) * N;
            S* dst = c.basis[k].data() + static_cast<size_t>(p) * N;
            lap.mul(prev1, tmp.data());
            for (int i = 0; i < N; ++i) dst[i] = 2 * tmp[i] - prev2[i];
        }
    }

    // graph conv combine: mixes channels across all orders
    c.z2.assign(c.h1.size(), 0);
    for (int t = 0; t < T1; ++t)
        for (int d = 0; d < C; ++d) {
            S* dst = c.z2.data() + (static_cast<size_t>(t) * C + d) * N;
            std::fill(dst, dst + N, w.sp_b[d]);
            for (int k = 0; k < K; ++k)
                for (int ch = 0; ch < C; ++ch) {
                    const S coef = w.theta[(static_cast<size_t>(k) * C + ch) * C + d];
                    const S* src = c.basis[k].data() + (static_cast<size_t>(t) * C + ch) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * src[i];
                }
        }
    c.h2 = c.z2;
    for (S& v : c.h2) v = v > 0 ? v : 0;

    // temporal conv 2: C -> C
    c.z3.assign(static_cast<size_t>(T2) * C * N, 0);
    for (int t = 0; t < T2; ++t)
        for (int d = 0; d < C; ++d) {
            S* dst = c.z3.data() + (static_cast<size_t>(t) * C + d) * N;
            std::fill(dst, dst + N, w.t2_b[d]);
            for (int ch = 0; ch < C; ++ch)
                for (int q = 0; q < Kt; ++q) {
                    const S coef = w.t2_w[(static_cast<size_t>(d) * C + ch) * Kt + q];
                    const S* src = c.h2.data() + (static_cast<size_t>(t + q) * C + ch) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * src[i];
                }
        }
    c.h3 = c.z3;
    for (S& v : c.h3) v = v > 0 ? v : 0;

    // output projection: collapse remaining width to horizon steps
    c.y.assign(static_cast<size_t>(h) * F * N, 0);
    for (int s = 0; s < h; ++s)
        for (int f = 0; f < F; ++f) {
            S* dst = c.y.data() + (static_cast<size_t>(s) * F + f) * N;
            std::fill(dst, dst + N, w.out_b[static_cast<size_t>(s) * F + f]);
            for (int t = 0; t < T2; ++t)
                for (int ch = 0; ch < C; ++ch) {
                    const S coef =
                        w.out_w[((static_cast<size_t>(s) * F + f) * T2 + t) * C + ch];
                    const S* src = c.h3.data() + (static_cast<size_t>(t) * C + ch) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * src[i];
                }
        }
}

// Loss in standardized space against the cached forward output.
template <class S>
double loss_from_cache(const StgcnHyper& hp, const FeatureScaler& sc, const Cache<S>& c,
                       const TrafficTensor& truth) {
    const int N = truth.num_nodes();
    const int F = hp.features;
    const int h = hp.horizon;
    double acc = 0.0;
    for (int s = 0; s < h; ++s)
        for (int f = 0; f < F; ++f) {
            const double mu = sc.mean[f];
            const double inv = 1.0 / sc.stdev[f];
            const S* yp = c.y.data() + (static_cast<size_t>(s) * F + f) * N;
            for (int i = 0; i < N; ++i) {
                const double d = static_cast<double>(yp[i]) - (truth.at(i, s, f) - mu) * inv;
                acc += d * d;
            }
        }
    return acc / (static_cast<double>(N) * h);
}

template <class S>
void backward_core(const StgcnHyper& hp, const WeightsT<S>& w, const FeatureScaler& sc,
                   const TrafficTensor& truth, const Csr<S>& lap, const Cache<S>& c,
                   StgcnWeights& g) {
    const int N = truth.num_nodes();
    const int F = hp.features;
    const int Kt = hp.temporal_kernel;
    const int K = hp.cheb_order;
    const int C = hp.hidden_channels;
    const int tau = hp.window;
    const int T1 = tau - (Kt - 1);
    const int T2 = T1 - (Kt - 1);
    const int h = hp.horizon;

    // dLoss/dy, standardized space, mean over N*h
    std::vector<S> dy(c.y.size());
    const S scale = static_cast<S>(2.0 / (static_cast<double>(N) * h));
    for (int s = 0; s < h; ++s)
        for (int f = 0; f < F; ++f) {
            const S mu = static_cast<S>(sc.mean[f]);
            const S inv = static_cast<S>(1.0 / sc.stdev[f]);
            const S* yp = c.y.data() + (static_cast<size_t>(s) * F + f) * N;
            S* dp = dy.data() + (static_cast<size_t>(s) * F + f) * N;
            for (int i = 0; i < N; ++i) {
                const S ts = (static_cast<S>(truth.at(i, s, f)) - mu) * inv;
                dp[i] = scale * (yp[i] - ts);
            }
        }

    // output projection
    std::vector<S> dh3(c.h3.size(), 0);
    for (int s = 0; s < h; ++s)
        for (int f = 0; f < F; ++f) {
            const S* dp = dy.data() + (static_cast<size_t>(s) * F + f) * N;
            S bacc = 0;
            for (int i = 0; i < N; ++i) bacc += dp[i];
            g.out_b[static_cast<size_t>(s) * F + f] += static_cast<double>(bacc);
            for (int t = 0; t < T2; ++t)
                for (int ch = 0; ch < C; ++ch) {
                    const S* hp3 = c.h3.data() + (static_cast<size_t>(t) * C + ch) * N;
                    S wacc = 0;
                    for (int i = 0; i < N; ++i) wacc += dp[i] * hp3[i];
                    g.out_w[((static_cast<size_t>(s) * F + f) * T2 + t) * C + ch] +=
                        static_cast<double>(wacc);
                    const S coef =
                        w.out_w[((static_cast<size_t>(s) * F + f) * T2 + t) * C + ch];
                    S* dst = dh3.data() + (static_cast<size_t>(t) * C + ch) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * dp[i];
                }
        }

    // ReLU 3
    std::vector<S>& dz3 = dh3;
    for (size_t i = 0; i < dz3.size(); ++i)
        if (c.z3[i] <= 0) dz3[i] = 0;

    // temporal conv 2
    std::vector<S> dh2(c.h2.size(), 0);
    for (int t = 0; t < T2; ++t)
        for (int d = 0; d < C; ++d) {
            const S* dp = dz3.data() + (static_cast<size_t>(t) * C + d) * N;
            S bacc = 0;
            for (int i = 0; i < N; ++i) bacc += dp[i];
            g.t2_b[d] += static_cast<double>(bacc);
            for (int ch = 0; ch < C; ++ch)
                for (int q = 0; q < Kt; ++q) {
                    const S* src = c.h2.data() + (static_cast<size_t>(t + q) * C + ch) * N;
                    S wacc = 0;
                    for (int i = 0; i < N; ++i) wacc += dp[i] * src[i];
                    g.t2_w[(static_cast<size_t>(d) * C + ch) * Kt + q] +=
                        static_cast<double>(wacc);
                    const S coef = w.t2_w[(static_cast<size_t>(d) * C + ch) * Kt + q];
                    S* dst = dh2.data() + (static_cast<size_t>(t + q) * C + ch) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * dp[i];
                }
        }

    // ReLU 2
    std::vector<S>& dz2 = dh2;
    for (size_t i = 0; i < dz2.size(); ++i)
        if (c.z2[i] <= 0) dz2[i] = 0;

    // graph conv combine; db[k] = gradient w.r.t. Chebyshev basis k
    std::vector<std::vector<S>> db(K);
    for (int k = 0; k < K; ++k) db[k].assign(c.h1.size(), 0);
    for (int t = 0; t < T1; ++t)
        for (int d = 0; d < C; ++d) {
            const S* dp = dz2.data() + (static_cast<size_t>(t) * C + d) * N;
            S bacc = 0;
            for (int i = 0; i < N; ++i) bacc += dp[i];
            g.sp_b[d] += static_cast<double>(bacc);
            for (int k = 0; k < K; ++k)
                for (int ch = 0; ch < C; ++ch) {
                    const S* src = c.basis[k].data() + (static_cast<size_t>(t) * C + ch) * N;
                    S wacc = 0;
                    for (int i = 0; i < N; ++i) wacc += dp[i] * src[i];
                    g.theta[(static_cast<size_t>(k) * C + ch) * C + d] +=
                        static_cast<double>(wacc);
                    const S coef = w.theta[(static_cast<size_t>(k) * C + ch) * C + d];
                    S* dst = db[k].data() + (static_cast<size_t>(t) * C + ch) * N;
                    for (int i = 0; i < N; ++i) dst[i] += coef * dp[i];
                }
        }

    // Adjoint of the three-term recursion, using L~^T = L~ (symmetric):
    // for k = K-1..2:  db[k-1] += 2 L~ db[k];  db[k-2] -= db[k]
    // then            db[0]   += L~ db[1]
    const int planes = T1 * C;
    std::vector<S> tmp(static_cast<size_t>(N));
    for (int k = K - 1; k >= 2; --k) {
        for (int p = 0; p < planes; ++p) {
            const S* src = db[k].data() + static_cast<size_t>(p) * N;
            S* d1 = db[k - 1].data() + static_cast<size_t>(p) * N;
            S* d2 = db[k - 2].data() + static_cast<size_t>(p) * N;
            lap.mul(src, tmp.data());
            for (int i = 0; i < N; ++i) {
                d1[i] += 2 * tmp[i];
                d2[i] -= src[i];
            }
        }
    }
    if (K > 1) {
        for (int p = 0; p < planes; ++p) {
            const S* src = db[1].data() + static_cast<size_t>(p) * N;
            S* dst = db[0].data() + static_cast<size_t>(p) * N;
            lap.mul(src, tmp.data());
            for (int i = 0; i < N; ++i) dst[i] += tmp[i];
        }
    }
    std::vector<S>& dh1 = db[0];

    // ReLU 1
    std::vector<S>& dz1 = dh1;
    for (size_t i = 0; i < dz1.size(); ++i)
        if (c.z1[i] <= 0) dz1[i] = 0;

    // temporal conv 1
    for (int t = 0; t < T1; ++t)
        for (int ch = 0; ch < C; ++ch) {
            const S* dp = dz1.data() + (static_cast<size_t>(t) * C + ch) * N;
            S bacc = 0;
            for (int i = 0; i < N; ++i) bacc += dp[i];
            g.t1_b[ch] += static_cast<double>(bacc);
            for (int f = 0; f < F; ++f)
                for (int q = 0; q < Kt; ++q) {
                    const S* src = c.a0.data() + (static_cast<size_t>(t + q) * F + f) * N;
                    S wacc = 0;
                    for (int i = 0; i < N; ++i) wacc += dp[i] * src[i];
                    g.t1_w[(static_cast<size_t>(ch) * F + f) * Kt + q] +=
                        static_cast<double>(wacc);
                }
        }
}

// --- shared helpers ----------------------------------------------------------

void check_window_shape(const StgcnHyper& hp, const TrafficTensor& window, int n_ops) {
    if (window.num_nodes() != n_ops)
        throw InvalidDimensionError("window has " + std::to_string(window.num_nodes()) +
                                    " nodes but operators were built for " +
                                    std::to_string(n_ops));
    if (window.num_steps() != hp.window)
        throw InvalidDimensionError("window length " + std::to_string(window.num_steps()) +
                                    " does not match configured input width " +
                                    std::to_string(hp.window));
    if (window.num_features() != hp.features)
        throw InvalidDimensionError("window feature count mismatch");
}

void check_target_shape(const StgcnHyper& hp, const TrafficTensor& target, int n) {
    if (target.num_nodes() != n || target.num_steps() != hp.horizon ||
        target.num_features() != hp.features)
        throw InvalidDimensionError("target tensor shape does not match (nodes, horizon, features)");
}

void check_scaler(const StgcnParams& p) {
    const size_t f = static_cast<size_t>(p.hyper.features);
    if (p.scaler.mean.size() != f || p.scaler.stdev.size() != f)
        throw InvalidDimensionError("feature scaler size does not match feature count");
    for (double s : p.scaler.stdev)
        if (!(s > 0.0)) throw InvalidArgumentError("feature scaler stdev must be positive");
}

StgcnWeights zeros_like_weights(const StgcnHyper& hp) {
    const size_t C = hp.hidden_channels, F = hp.features, Kt = hp.temporal_kernel;
    const size_t K = hp.cheb_order, T2 = hp.collapsed_width(), h = hp.horizon;
    StgcnWeights w;
    w.t1_w.assign(C * F * Kt, 0.0);
    w.t1_b.assign(C, 0.0);
    w.theta.assign(K * C * C, 0.0);
    w.sp_b.assign(C, 0.0);
    w.t2_w.assign(C * C * Kt, 0.0);
    w.t2_b.assign(C, 0.0);
    w.out_w.assign(h * F * T2 * C, 0.0);
    w.out_b.assign(h * F, 0.0);
    return w;
}

void check_weight_shapes(const StgcnParams& p) {
    const StgcnWeights ref = zeros_like_weights(p.hyper);
    auto a = p.weights.blocks();
    StgcnWeights tmp = ref;
    auto b = tmp.blocks();
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i]->size() != b[i]->size())
            throw InvalidDimensionError("parameter block size does not match architecture");
}

template <class S>
BackwardResult backward_impl(const StgcnParams& params, const TrafficTensor& window,
                             const TrafficTensor& truth, const SpectralOperators& ops) {
    const auto w = cast_weights<S>(params.weights);
    const auto lap = csr_from_dense<S>(ops.scaled_laplacian);
    Cache<S> cache;
    forward_core<S>(params.hyper, w, params.scaler, window, lap, cache);
    BackwardResult out;
    out.loss = loss_from_cache<S>(params.hyper, params.scaler, cache, truth);
    out.grad = zeros_like_weights(params.hyper);
    backward_core<S>(params.hyper, w, params.scaler, truth, lap, cache, out.grad);
    return out;
}

// Deterministic uniform double in [0, 1) from the raw engine; avoids the
// implementation-defined std distributions.
double next_double(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace

// --- public API --------------------------------------------------------------

void StgcnHyper::validate() const {
    if (cheb_order < 1) throw ConfigError("chebyshev order must be >= 1");
    if (temporal_kernel < 1) throw ConfigError("temporal kernel width must be >= 1");
    if (hidden_channels < 1) throw ConfigError("hidden channel count must be >= 1");
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (features < 1) throw ConfigError("feature count must be >= 1");
    if (collapsed_width() < 1)
        throw ConfigError("input window of " + std::to_string(window) +
                          " steps is too short for two temporal convolutions of width " +
                          std::to_string(temporal_kernel));
}

std::array<std::vector<double>*, 8> StgcnWeights::blocks() {
    return {&t1_w, &t1_b, &theta, &sp_b, &t2_w, &t2_b, &out_w, &out_b};
}

std::array<const std::vector<double>*, 8> StgcnWeights::blocks() const {
    return {&t1_w, &t1_b, &theta, &sp_b, &t2_w, &t2_b, &out_w, &out_b};
}

StgcnParams init_params(const StgcnHyper& hyper, std::uint64_t seed) {
    hyper.validate();
    StgcnParams p;
    p.hyper = hyper;
    p.seed = seed;
    p.scaler.mean.assign(hyper.features, 0.0);
    p.scaler.stdev.assign(hyper.features, 1.0);
    p.weights = zeros_like_weights(hyper);

    std::mt19937_64 rng(seed);
    auto fill = [&rng](std::vector<double>& block, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : block) v = (2.0 * next_double(rng) - 1.0) * bound;
    };
    fill(p.weights.t1_w, hyper.features * hyper.temporal_kernel);
    fill(p.weights.theta, hyper.hidden_channels * hyper.cheb_order);
    fill(p.weights.t2_w, hyper.hidden_channels * hyper.temporal_kernel);
    fill(p.weights.out_w, hyper.collapsed_width() * hyper.hidden_channels);
    return p;
}

TrafficTensor forward(const StgcnParams& params, const TrafficTensor& window,
                      const SpectralOperators& ops, Precision precision) {
    params.hyper.validate();
    check_scaler(params);
    check_weight_shapes(params);
    check_window_shape(params.hyper, window, static_cast<int>(ops.scaled_laplacian.rows()));

    const int N = window.num_nodes();
    const int F = params.hyper.features;
    const int h = params.hyper.horizon;
    TrafficTensor out(N, h, F);

    auto unscale = [&](const auto& cache) {
        for (int s = 0; s < h; ++s)
            for (int f = 0; f < F; ++f) {
                const double mu = params.scaler.mean[f];
                const double sd = params.scaler.stdev[f];
                const auto* yp = cache.y.data() + (static_cast<size_t>(s) * F + f) * N;
                for (int i = 0; i < N; ++i)
                    out.at(i, s, f) = static_cast<double>(yp[i]) * sd + mu;
            }
    };

    if (precision == Precision::f32) {
        const auto w = cast_weights<float>(params.weights);
        const auto lap = csr_from_dense<float>(ops.scaled_laplacian);
        Cache<float> cache;
        forward_core<float>(params.hyper, w, params.scaler, window, lap, cache);
        unscale(cache);
    } else {
        const auto w = cast_weights<double>(params.weights);
        const auto lap = csr_from_dense<double>(ops.scaled_laplacian);
        Cache<double> cache;
        forward_core<double>(params.hyper, w, params.scaler, window, lap, cache);
        unscale(cache);
    }
    return out;
}

double predict_node(const StgcnParams& params, const TrafficTensor& window,
                    const SpectralOperators& ops, int node, int feature, int step,
                    Precision precision) {
    if (node < 0 || node >= window.num_nodes())
        throw InvalidArgumentError("node index out of range");
    if (feature < 0 || feature >= params.hyper.features)
        throw InvalidArgumentError("feature index out of range");
    if (step < 0 || step >= params.hyper.horizon)
        throw InvalidArgumentError("horizon step out of range");
    return forward(params, window, ops, precision).at(node, step, feature);
}

double mse_loss(const TrafficTensor& truth, const TrafficTensor& pred) {
    if (!truth.same_shape(pred))
        throw InvalidDimensionError("loss requires tensors of identical shape");
    const double* a = truth.values().data();
    const double* b = pred.values().data();
    double acc = 0.0;
    for (size_t i = 0; i < truth.values().size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / (static_cast<double>(truth.num_nodes()) * truth.num_steps());
}

double training_loss(const StgcnParams& params, const TrafficTensor& window,
                     const TrafficTensor& truth, const SpectralOperators& ops,
                     Precision precision) {
    params.hyper.validate();
    check_scaler(params);
    check_weight_shapes(params);
    check_window_shape(params.hyper, window, static_cast<int>(ops.scaled_laplacian.rows()));
    check_target_shape(params.hyper, truth, window.num_nodes());

    if (precision == Precision::f32) {
        const auto w = cast_weights<float>(params.weights);
        const auto lap = csr_from_dense<float>(ops.scaled_laplacian);
        Cache<float> cache;
        forward_core<float>(params.hyper, w, params.scaler, window, lap, cache);
        return loss_from_cache<float>(params.hyper, params.scaler, cache, truth);
    }
    const auto w = cast_weights<double>(params.weights);
    const auto lap = csr_from_dense<double>(ops.scaled_laplacian);
    Cache<double> cache;
    forward_core<double>(params.hyper, w, params.scaler, window, lap, cache);
    return loss_from_cache<double>(params.hyper, params.scaler, cache, truth);
}

BackwardResult backward(const StgcnParams& params, const TrafficTensor& window,
                        const TrafficTensor& truth, const SpectralOperators& ops,
                        Precision precision) {
    params.hyper.validate();
    check_scaler(params);
    check_weight_shapes(params);
    check_window_shape(params.hyper, window, static_cast<int>(ops.scaled_laplacian.rows()));
    check_target_shape(params.hyper, truth, window.num_nodes());
    return precision == Precision::f32 ? backward_impl<float>(params, window, truth, ops)
                                       : backward_impl<double>(params, window, truth, ops);
}

TrainResult train(const std::vector<WindowPair>& data, const LatticeGraph& graph,
                  const StgcnHyper& hyper, const TrainConfig& config) {
    hyper.validate();
    if (data.empty()) throw InvalidArgumentError("training set is empty");
    if (config.learning_rate < 0.0) throw ConfigError("learning rate must be non-negative");
    if (config.epochs < 1) throw ConfigError("epoch count must be >= 1");
    if (config.batch < 1) throw ConfigError("batch size must be >= 1");

    const int N = graph.num_nodes();
    for (const WindowPair& p : data) {
        check_window_shape(hyper, p.window, N);
        check_target_shape(hyper, p.target, N);
    }

    // Standardization statistics over every training window entry.
    FeatureScaler sc;
    sc.mean.assign(hyper.features, 0.0);
    sc.stdev.assign(hyper.features, 0.0);
    {
        std::vector<double> sum(hyper.features, 0.0), sq(hyper.features, 0.0);
        size_t count = 0;
        for (const WindowPair& p : data) {
            for (int i = 0; i < N; ++i)
                for (int t = 0; t < hyper.window; ++t)
                    for (int f = 0; f < hyper.features; ++f) {
                        const double v = p.window.at(i, t, f);
                        sum[f] += v;
                        sq[f] += v * v;
                    }
            count += static_cast<size_t>(N) * hyper.window;
        }
        for (int f = 0; f < hyper.features; ++f) {
            sc.mean[f] = sum[f] / static_cast<double>(count);
            const double var =
                std::max(0.0, sq[f] / static_cast<double>(count) - sc.mean[f] * sc.mean[f]);
            sc.stdev[f] = std::sqrt(var);
            if (sc.stdev[f] < 1e-12) sc.stdev[f] = 1.0;  // constant feature
        }
    }

    StgcnParams params = init_params(hyper, config.seed);
    params.scaler = sc;

    const SpectralOperators ops = spectral_operators(graph);

    StgcnWeights m = zeros_like_weights(hyper);  // Adam first moment
    StgcnWeights v = zeros_like_weights(hyper);  // Adam second moment
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;

    TrainResult result;
    result.epoch_loss.reserve(static_cast<size_t>(config.epochs));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_sum = 0.0;
        int batches = 0;
        for (size_t start = 0; start < data.size(); start += static_cast<size_t>(config.batch)) {
            const size_t stop = std::min(data.size(), start + static_cast<size_t>(config.batch));
            StgcnWeights grad = zeros_like_weights(hyper);
            double batch_loss = 0.0;
            for (size_t idx = start; idx < stop; ++idx) {
                BackwardResult br =
                    config.precision == Precision::f32
                        ? backward_impl<float>(params, data[idx].window, data[idx].target, ops)
                        : backward_impl<double>(params, data[idx].window, data[idx].target, ops);
                batch_loss += br.loss;
                auto gsrc = br.grad.blocks();
                auto gdst = grad.blocks();
                for (size_t b = 0; b < gsrc.size(); ++b)
                    for (size_t j = 0; j < gsrc[b]->size(); ++j)
                        (*gdst[b])[j] += (*gsrc[b])[j];
            }
            const double inv_n = 1.0 / static_cast<double>(stop - start);
            batch_loss *= inv_n;

            auto gb = grad.blocks();
            auto pb = params.weights.blocks();
            if (config.optimizer == TrainConfig::Optimizer::Adam) {
                ++step;
                auto mb = m.blocks();
                auto vb = v.blocks();
                const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
                const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
                for (size_t b = 0; b < gb.size(); ++b)
                    for (size_t j = 0; j < gb[b]->size(); ++j) {
                        const double gj = (*gb[b])[j] * inv_n;
                        double& mj = (*mb[b])[j];
                        double& vj = (*vb[b])[j];
                        mj = beta1 * mj + (1.0 - beta1) * gj;
                        vj = beta2 * vj + (1.0 - beta2) * gj * gj;
                        (*pb[b])[j] -= config.learning_rate * (mj / bc1) /
                                       (std::sqrt(vj / bc2) + eps);
                    }
            } else {
                for (size_t b = 0; b < gb.size(); ++b)
                    for (size_t j = 0; j < gb[b]->size(); ++j)
                        (*pb[b])[j] -= config.learning_rate * (*gb[b])[j] * inv_n;
            }

            epoch_sum += batch_loss;
            ++batches;
        }
        const double epoch_loss = epoch_sum / static_cast<double>(batches);
        if (!std::isfinite(epoch_loss))
            throw DivergenceError("training loss became non-finite at epoch " +
                                      std::to_string(epoch) + "; lower the learning rate",
                                  epoch);
        result.epoch_loss.push_back(epoch_loss);
    }

    result.params = std::move(params);
    return result;
}

std::vector<WindowPair> make_training_pairs(const TrafficTensor& series, const StgcnHyper& hyper,
                                            int stride) {
    hyper.validate();
    if (stride < 1) throw InvalidArgumentError("stride must be >= 1");
    if (series.num_features() != hyper.features)
        throw InvalidDimensionError("series feature count does not match configuration");
    const int need = hyper.window + hyper.horizon;
    if (series.num_steps() < need)
        throw InvalidArgumentError("series has " + std::to_string(series.num_steps()) +
                                   " steps; at least " + std::to_string(need) + " required");
    std::vector<WindowPair> out;
    for (int t0 = 0; t0 + need <= series.num_steps(); t0 += stride) {
        WindowPair p{series.slice_steps(t0, hyper.window),
                     series.slice_steps(t0 + hyper.window, hyper.horizon)};
        out.push_back(std::move(p));
    }
    return out;
}

double persistence_mse(const std::vector<WindowPair>& pairs) {
    if (pairs.empty()) throw InvalidArgumentError("no window pairs given");
    double acc = 0.0;
    for (const WindowPair& p : pairs) {
        TrafficTensor pred = p.target.zeros_like();
        const int last = p.window.num_steps() - 1;
        for (int i = 0; i < pred.num_nodes(); ++i)
            for (int s = 0; s < pred.num_steps(); ++s)
                for (int f = 0; f < pred.num_features(); ++f)
                    pred.at(i, s, f) = p.window.at(i, last, f);
        acc += mse_loss(p.target, pred);
    }
    return acc / static_cast<double>(pairs.size());
}

namespace {

constexpr int kParamsFormatVersion = 1;

json hyper_to_json(const StgcnHyper& h) {
    json j;
    j["cheb_order"] = h.cheb_order;
    j["temporal_kernel"] = h.temporal_kernel;
    j["hidden_channels"] = h.hidden_channels;
    j["window"] = h.window;
    j["horizon"] = h.horizon;
    j["features"] = h.features;
    return j;
}

StgcnHyper hyper_from_json(const json& j) {
    StgcnHyper h;
    h.cheb_order = j.at("cheb_order").get<int>();
    h.temporal_kernel = j.at("temporal_kernel").get<int>();
    h.hidden_channels = j.at("hidden_channels").get<int>();
    h.window = j.at("window").get<int>();
    h.horizon = j.at("horizon").get<int>();
    h.features = j.at("features").get<int>();
    return h;
}

}  // namespace

void save_params_json(const StgcnParams& params, const std::string& path) {
    check_weight_shapes(params);
    json j;
    j["format_version"] = kParamsFormatVersion;
    j["hyper"] = hyper_to_json(params.hyper);
    j["seed"] = params.seed;
    j["scaler"] = {{"mean", params.scaler.mean}, {"stdev", params.scaler.stdev}};
    json w;
    w["t1_w"] = params.weights.t1_w;
    w["t1_b"] = params.weights.t1_b;
    w["theta"] = params.weights.theta;
    w["sp_b"] = params.weights.sp_b;
    w["t2_w"] = params.weights.t2_w;
    w["t2_b"] = params.weights.t2_b;
    w["out_w"] = params.weights.out_w;
    w["out_b"] = params.weights.out_b;
    j["weights"] = std::move(w);

    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

StgcnParams load_params_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError("parameter file " + path + " is not valid JSON: " + e.what());
    }
    try {
        if (!j.contains("format_version"))
            throw SchemaError("parameter file missing format_version");
        if (j.at("format_version").get<int>() != kParamsFormatVersion)
            throw SchemaError("unsupported parameter file version");
        StgcnParams p;
        p.hyper = hyper_from_json(j.at("hyper"));
        p.hyper.validate();
        p.seed = j.at("seed").get<std::uint64_t>();
        p.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
        p.scaler.stdev = j.at("scaler").at("stdev").get<std::vector<double>>();
        const json& w = j.at("weights");
        p.weights.t1_w = w.at("t1_w").get<std::vector<double>>();
        p.weights.t1_b = w.at("t1_b").get<std::vector<double>>();
        p.weights.theta = w.at("theta").get<std::vector<double>>();
        p.weights.sp_b = w.at("sp_b").get<std::vector<double>>();
        p.weights.t2_w = w.at("t2_w").get<std::vector<double>>();
        p.weights.t2_b = w.at("t2_b").get<std::vector<double>>();
        p.weights.out_w = w.at("out_w").get<std::vector<double>>();
        p.weights.out_b = w.at("out_b").get<std::vector<double>>();
        check_scaler(p);
        check_weight_shapes(p);
        return p;
    } catch (const json::exception& e) {
        throw SchemaError("parameter file " + path + " has unexpected layout: " + e.what());
    } catch (const SchemaError&) {
        throw;
    } catch (const Error& e) {
        // Structurally valid JSON describing an inconsistent model is still
        // a malformed input file, not a caller configuration mistake.
        throw SchemaError("parameter file " + path + " is inconsistent: " + e.what());
    }
}

}  // namespace stga
