#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <stdexcept>

#include "stga/data_io.hpp"
#include "stga/errors.hpp"
#include "stga/graph.hpp"
#include "stga/masking.hpp"
#include "stga/shapley.hpp"
#include "stga/stgcn.hpp"

namespace py = pybind11;
using namespace stga;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

TrafficTensor tensor_from_array(const DoubleArray& arr) {
    if (arr.ndim() != 3)
        throw InvalidDimensionError("expected a (nodes, steps, features) array, got " +
                                    std::to_string(arr.ndim()) + " dimensions");
    TrafficTensor t(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
                    static_cast<int>(arr.shape(2)));
    std::memcpy(t.values().data(), arr.data(), sizeof(double) * t.size());
    return t;
}

py::array_t<double> array_from_tensor(const TrafficTensor& t) {
    py::array_t<double> arr({t.num_nodes(), t.num_steps(), t.num_features()});
    std::memcpy(arr.mutable_data(), t.values().data(), sizeof(double) * t.size());
    return arr;
}

StgcnHyper hyper_from_kwargs(int cheb_order, int temporal_kernel, int hidden_channels, int window,
                             int horizon, int features) {
    StgcnHyper h;
    h.cheb_order = cheb_order;
    h.temporal_kernel = temporal_kernel;
    h.hidden_channels = hidden_channels;
    h.window = window;
    h.horizon = horizon;
    h.features = features;
    h.validate();
    return h;
}

/// A trained predictor bound to its lattice: everything needed to forward,
/// probe single outputs, and drive the explainer without re-deriving the
/// spectral operators each call.
struct Model {
    StgcnParams params;
    LatticeGraph graph;
    SpectralOperators ops;
    std::vector<double> epoch_loss;

    py::array_t<double> run(const DoubleArray& window) const {
        const TrafficTensor w = tensor_from_array(window);
        py::gil_scoped_release release;
        const TrafficTensor y = forward(params, w, ops);
        py::gil_scoped_acquire acquire;
        return array_from_tensor(y);
    }

    double predict(const DoubleArray& window, int node, int feature, int step) const {
        const TrafficTensor w = tensor_from_array(window);
        py::gil_scoped_release release;
        return predict_node(params, w, ops, node, feature, step);
    }
};

Model make_model(const StgcnParams& params, int num_lanes, int num_cells, bool lateral_edges) {
    Model m;
    m.params = params;
    m.graph = build_lattice_graph(num_lanes, num_cells, lateral_edges);
    m.ops = spectral_operators(m.graph);
    return m;
}

py::dict explanation_to_dict(const Explanation& e) {
    py::dict out;
    out["phi0"] = e.phi0;
    py::array_t<double> phi(static_cast<py::ssize_t>(e.phi.size()));
    std::memcpy(phi.mutable_data(), e.phi.data(), sizeof(double) * e.phi.size());
    out["phi"] = phi;
    py::list coords;
    for (const PlayerCoord& c : e.player_coords) {
        py::dict item;
        item["kind"] = c.kind == PlayerKind::Spatial ? "spatial" : "temporal";
        item["lane"] = c.lane;
        item["cell"] = c.cell;
        item["time_offset"] = c.time_offset;
        coords.append(item);
    }
    out["players"] = coords;
    py::dict target;
    target["node"] = e.target.node;
    target["feature"] = e.target.feature;
    target["step"] = e.target.step;
    out["target"] = target;
    py::dict diag;
    diag["n_samples"] = e.diagnostics.n_samples;
    diag["condition_number"] = e.diagnostics.condition_number;
    diag["residual_norm"] = e.diagnostics.residual_norm;
    out["diagnostics"] = diag;
    return out;
}

}  // namespace

PYBIND11_MODULE(stga, m) {
    m.doc() = "Lane-cell traffic prediction with Shapley-based attribution";

    static py::exception<Error> base_error(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            switch (e.kind()) {
                case ErrorKind::Config: PyErr_SetString(PyExc_ValueError, e.what()); break;
                case ErrorKind::Data: PyErr_SetString(PyExc_ValueError, e.what()); break;
                case ErrorKind::Io: PyErr_SetString(PyExc_OSError, e.what()); break;
                case ErrorKind::Numeric:
                default: py::set_error(base_error, e.what()); break;
            }
        }
    });

    py::class_<LatticeGraph>(m, "Graph", "Lane-cell lattice over a road segment")
        .def(py::init([](int num_lanes, int num_cells, bool lateral_edges) {
                 return build_lattice_graph(num_lanes, num_cells, lateral_edges);
             }),
             py::arg("num_lanes"), py::arg("num_cells"), py::arg("lateral_edges") = true)
        .def_property_readonly("num_lanes", [](const LatticeGraph& g) { return g.num_lanes; })
        .def_property_readonly("num_cells", [](const LatticeGraph& g) { return g.num_cells; })
        .def_property_readonly("num_nodes", &LatticeGraph::num_nodes)
        .def_property_readonly("adjacency", [](const LatticeGraph& g) { return g.adjacency; })
        .def("node_index", &LatticeGraph::node_index, py::arg("lane"), py::arg("cell"))
        .def("node_coords", &LatticeGraph::node_coords, py::arg("index"))
        .def("neighbors_within",
             [](const LatticeGraph& g, int node, int hops) {
                 return neighbors_within(g, node, hops);
             },
             py::arg("node"), py::arg("hops"))
        .def("hop_distance",
             [](const LatticeGraph& g, int a, int b) { return hop_distance(g, a, b); },
             py::arg("from_node"), py::arg("to_node"));

    m.def("normalized_laplacian",
          py::overload_cast<const Eigen::MatrixXd&>(&normalized_laplacian), py::arg("adjacency"),
          "I - D^-1/2 A D^-1/2 with identity rows for isolated nodes");
    m.def("max_eigenvalue", &max_eigenvalue, py::arg("matrix"), py::arg("tol") = 1e-9,
          py::arg("max_iter") = 10000, "Largest eigenvalue by power iteration");
    m.def("scaled_laplacian", &scaled_laplacian, py::arg("laplacian"), py::arg("lambda_max"),
          "(2 / lambda_max) L - I");
    m.def(
        "chebyshev_apply",
        [](const Eigen::MatrixXd& scaled_lap, const Eigen::VectorXd& x,
           const std::vector<double>& theta) { return chebyshev_apply(scaled_lap, x, theta); },
        py::arg("scaled_laplacian"), py::arg("x"), py::arg("theta"),
        "sum_k theta_k T_k(L~) x via the three-term recursion");

    m.def(
        "synth_breakdown",
        [](int num_lanes, int num_cells, int num_steps, int trigger_lane, int trigger_cell,
           int trigger_step, std::uint64_t seed, double v_free, double v_min, double noise) {
            SynthConfig c;
            c.num_lanes = num_lanes;
            c.num_cells = num_cells;
            c.num_steps = num_steps;
            c.trigger_lane = trigger_lane;
            c.trigger_cell = trigger_cell;
            c.trigger_step = trigger_step;
            c.seed = seed;
            c.v_free = v_free;
            c.v_min = v_min;
            c.noise = noise;
            const SynthResult r = synth_breakdown(c);
            py::dict trigger;
            trigger["lane"] = r.trigger.lane;
            trigger["cell"] = r.trigger.cell;
            trigger["step"] = r.trigger.step;
            trigger["v_min"] = r.trigger.v_min;
            return py::make_tuple(array_from_tensor(r.tensor), trigger);
        },
        py::arg("num_lanes") = 4, py::arg("num_cells") = 30, py::arg("num_steps") = 360,
        py::arg("trigger_lane") = 1, py::arg("trigger_cell") = 20, py::arg("trigger_step") = 60,
        py::arg("seed") = 7, py::arg("v_free") = 70.0, py::arg("v_min") = 20.0,
        py::arg("noise") = 0.5,
        "Seeded synthetic breakdown scenario; returns (tensor, trigger)");

    m.def(
        "asm_interpolate",
        [](const DoubleArray& tensor, py::array_t<bool, py::array::c_style> observed,
           int num_lanes, double cell_miles, double dt_seconds) {
            const TrafficTensor t = tensor_from_array(tensor);
            if (t.num_nodes() % num_lanes != 0)
                throw InvalidArgumentError("node count not divisible by num_lanes");
            if (observed.ndim() != 2 || observed.shape(0) != t.num_nodes() ||
                observed.shape(1) != t.num_steps())
                throw InvalidDimensionError("observed mask must be (nodes, steps)");
            GriddedField field;
            field.tensor = t;
            field.tensor.cell_miles = cell_miles;
            field.tensor.dt_seconds = dt_seconds;
            field.num_lanes = num_lanes;
            field.num_cells = t.num_nodes() / num_lanes;
            field.cell_miles = cell_miles;
            field.dt_seconds = dt_seconds;
            field.observed.assign(static_cast<size_t>(t.num_nodes()) * t.num_steps(), 0);
            const bool* src = observed.data();
            for (size_t i = 0; i < field.observed.size(); ++i) field.observed[i] = src[i] ? 1 : 0;
            field.volume_sum.assign(field.observed.size(), 0.0);
            field.sample_count.assign(field.observed.size(), 1);
            py::gil_scoped_release release;
            const TrafficTensor out = asm_interpolate(field, AsmParams{});
            py::gil_scoped_acquire acquire;
            return array_from_tensor(out);
        },
        py::arg("tensor"), py::arg("observed"), py::arg("num_lanes"),
        py::arg("cell_miles") = 0.1, py::arg("dt_seconds") = 10.0,
        "Fill unobserved (node, step) bins by adaptive anisotropic smoothing");

    py::class_<Model>(m, "Model", "Trained predictor bound to its lattice")
        .def_property_readonly("epoch_loss",
                               [](const Model& m_) { return m_.epoch_loss; })
        .def_property_readonly("graph", [](const Model& m_) { return m_.graph; })
        .def_property_readonly("window", [](const Model& m_) { return m_.params.hyper.window; })
        .def_property_readonly("horizon", [](const Model& m_) { return m_.params.hyper.horizon; })
        .def_property_readonly("features",
                               [](const Model& m_) { return m_.params.hyper.features; })
        .def("forward", &Model::run, py::arg("window"),
             "Predict the next horizon steps from a (nodes, window, features) array")
        .def("predict", &Model::predict, py::arg("window"), py::arg("node"), py::arg("feature"),
             py::arg("step"), "One scalar component of forward()")
        .def("save", [](const Model& m_, const std::string& path) {
            save_params_json(m_.params, path);
        }, py::arg("path"));

    m.def(
        "train",
        [](const DoubleArray& tensor, int num_lanes, bool lateral_edges, int cheb_order,
           int temporal_kernel, int hidden_channels, int window, int horizon, double learning_rate,
           int epochs, int batch, std::uint64_t seed, const std::string& optimizer) {
            const TrafficTensor t = tensor_from_array(tensor);
            if (t.num_nodes() % num_lanes != 0)
                throw InvalidArgumentError("node count not divisible by num_lanes");
            const StgcnHyper hyper = hyper_from_kwargs(cheb_order, temporal_kernel,
                                                       hidden_channels, window, horizon,
                                                       t.num_features());
            TrainConfig tc;
            tc.learning_rate = learning_rate;
            tc.epochs = epochs;
            tc.batch = batch;
            tc.seed = seed;
            if (optimizer == "adam")
                tc.optimizer = TrainConfig::Optimizer::Adam;
            else if (optimizer == "gd")
                tc.optimizer = TrainConfig::Optimizer::GradientDescent;
            else
                throw InvalidArgumentError("optimizer must be 'adam' or 'gd'");
            py::gil_scoped_release release;
            Model model;
            model.graph = build_lattice_graph(num_lanes, t.num_nodes() / num_lanes, lateral_edges);
            model.ops = spectral_operators(model.graph);
            const std::vector<WindowPair> pairs = make_training_pairs(t, hyper);
            TrainResult r = train(pairs, model.graph, hyper, tc);
            model.params = std::move(r.params);
            model.epoch_loss = std::move(r.epoch_loss);
            return model;
        },
        py::arg("tensor"), py::arg("num_lanes"), py::arg("lateral_edges") = true,
        py::arg("cheb_order") = 3, py::arg("temporal_kernel") = 3,
        py::arg("hidden_channels") = 16, py::arg("window") = 12, py::arg("horizon") = 1,
        py::arg("learning_rate") = 1e-3, py::arg("epochs") = 1, py::arg("batch") = 8,
        py::arg("seed") = 42, py::arg("optimizer") = "adam",
        "Train on a (nodes, steps, features) series with sliding windows");

    m.def(
        "load_model",
        [](const std::string& path, int num_lanes, int num_cells, bool lateral_edges) {
            return make_model(load_params_json(path), num_lanes, num_cells, lateral_edges);
        },
        py::arg("path"), py::arg("num_lanes"), py::arg("num_cells"),
        py::arg("lateral_edges") = true);

    m.def(
        "explain",
        [](const Model& model, const DoubleArray& window, int node, int feature, int step,
           int hops, int max_temporal_players, bool exempt_final_step, int n_samples,
           std::uint64_t seed, const std::string& baseline, int threads) {
            const TrafficTensor w = tensor_from_array(window);
            const PlayerMap map = make_player_map(model.graph, node, hops, w.num_steps(),
                                                  exempt_final_step, max_temporal_players);
            TrafficTensor base = w.zeros_like();
            if (baseline == "mean") {
                for (int i = 0; i < base.num_nodes(); ++i)
                    for (int t = 0; t < base.num_steps(); ++t)
                        for (int f = 0; f < base.num_features(); ++f)
                            base.at(i, t, f) =
                                model.params.scaler.mean[static_cast<size_t>(f)];
            } else if (baseline != "zero") {
                throw InvalidArgumentError("baseline must be 'zero' or 'mean'");
            }
            const StgcnParams& params = model.params;
            const SpectralOperators& ops = model.ops;
            const ModelFn fn = [&params, &ops, node, feature, step](const TrafficTensor& x) {
                return predict_node(params, x, ops, node, feature, step);
            };
            py::gil_scoped_release release;
            const Explanation e =
                explain(fn, w, model.graph, map, n_samples, seed, base, feature, step, threads);
            py::gil_scoped_acquire acquire;
            return explanation_to_dict(e);
        },
        py::arg("model"), py::arg("window"), py::arg("node"), py::arg("feature") = 2,
        py::arg("step") = 0, py::arg("hops") = 2, py::arg("max_temporal_players") = 0,
        py::arg("exempt_final_step") = true, py::arg("n_samples") = 1024, py::arg("seed") = 1,
        py::arg("baseline") = "zero", py::arg("threads") = 1,
        "Attribute one scalar prediction to maskable nodes and window steps");

    m.def("shapley_kernel_weight", &shapley_kernel_weight, py::arg("num_players"),
          py::arg("coalition_size"));

    m.def(
        "exact_shapley",
        [](const py::function& value, int num_players) {
            const CoalitionValueFn fn = [&value](const std::vector<std::uint8_t>& z) {
                py::array_t<std::uint8_t> arr(static_cast<py::ssize_t>(z.size()));
                std::memcpy(arr.mutable_data(), z.data(), z.size());
                return value(arr).cast<double>();
            };
            return exact_shapley(fn, num_players);
        },
        py::arg("value"), py::arg("num_players"),
        "Exact values by enumerating all 2^M coalitions of a Python game");

    m.def(
        "fit_wlr",
        [](const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& Z,
           const DoubleArray& y, double f_empty, double f_full) {
            if (Z.ndim() != 2 || y.ndim() != 1 || Z.shape(0) != y.shape(0))
                throw InvalidDimensionError("Z must be (rows, players) with matching y");
            CoalitionDataset data;
            data.num_players = static_cast<int>(Z.shape(1));
            data.f_empty = f_empty;
            data.f_full = f_full;
            const std::uint8_t* zp = Z.data();
            const double* yp = y.data();
            for (py::ssize_t r = 0; r < Z.shape(0); ++r) {
                CoalitionRow row;
                row.z.assign(zp + r * Z.shape(1), zp + (r + 1) * Z.shape(1));
                row.y = yp[r];
                data.rows.push_back(std::move(row));
            }
            return explanation_to_dict(fit_wlr(data));
        },
        py::arg("Z"), py::arg("y"), py::arg("f_empty"), py::arg("f_full"),
        "Kernel-weighted least squares over explicit coalition rows");
}
