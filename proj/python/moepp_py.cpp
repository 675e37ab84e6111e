// Python bindings: formulas, routing, one MoE++ layer and a training entry point.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "moepp/config.hpp"
#include "moepp/moe_layer.hpp"
#include "moepp/run.hpp"
#include "moepp/sim.hpp"

namespace py = pybind11;
using namespace moepp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() != 2) throw ArgumentError("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
  return Tensor({rows, cols}, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
  Array out({t.rows(), t.cols()});
  auto src = t.data();
  std::copy(src.begin(), src.end(), out.mutable_data());
  return out;
}

// A single layer with its own parameters, for experimenting from Python.
class PyLayer {
 public:
  PyLayer(LayerConfig cfg, std::size_t hidden, std::size_t intermediate, std::uint64_t seed, bool with_residual)
      : cfg_(std::move(cfg)), rng_(seed) {
    cfg_.validate();
    params_ = make_layer_params(cfg_, hidden, intermediate, with_residual, rng_);
  }

  py::dict forward(const Array& x, std::optional<Array> prev) const {
    std::optional<Tensor> p;
    if (prev) p = to_tensor(*prev);
    auto out = layer_forward(to_tensor(x), p, cfg_, params_);
    py::dict d;
    d["y"] = to_array(out.y);
    d["logits"] = to_array(out.routing.logits);
    d["gates"] = to_array(out.routing.gates);
    d["selected"] = out.routing.selected;
    d["capacity"] = out.plan.capacity;
    d["dropped_pairs"] = out.plan.dropped_pairs();
    d["f"] = out.stats.f;
    d["p"] = out.stats.p;
    d["lb"] = load_balance_loss(out.stats, cfg_).item();
    return d;
  }

  Array router_weight() const { return to_array(params_.router.w); }

 private:
  LayerConfig cfg_;
  std::mt19937_64 rng_;
  LayerParams params_;
};

py::dict metrics_dict(const StepMetrics& m) {
  py::dict d;
  d["step"] = m.step;
  d["ce"] = m.ce;
  d["lb"] = m.lb;
  d["loss"] = m.loss;
  d["drop_rate"] = m.drop_rate;
  d["lr"] = m.lr;
  d["grad_norm"] = m.grad_norm;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "MoE++ layer, formulas and a tiny trainer";

  static py::exception<NumericalError> numerical(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const NumericalError& e) {
      numerical(e.what());
    }
  });

  py::class_<LayerConfig>(m, "LayerConfig")
      .def(py::init<>())
      .def_readwrite("n_ffn", &LayerConfig::n_ffn)
      .def_readwrite("n_zero", &LayerConfig::n_zero)
      .def_readwrite("n_copy", &LayerConfig::n_copy)
      .def_readwrite("n_const", &LayerConfig::n_const)
      .def_readwrite("k", &LayerConfig::k)
      .def_readwrite("tau", &LayerConfig::tau)
      .def_readwrite("gamma", &LayerConfig::gamma)
      .def_property(
          "ffn_activation", [](const LayerConfig& c) { return std::string(to_string(c.ffn_activation)); },
          [](LayerConfig& c, const std::string& name) { c.ffn_activation = activation_from_string(name); })
      .def_readwrite("residuals_enabled", &LayerConfig::residuals_enabled)
      .def_readwrite("renormalize_gates", &LayerConfig::renormalize_gates)
      .def_property_readonly("n_zc", &LayerConfig::n_zc)
      .def_property_readonly("n_experts", &LayerConfig::n_experts)
      .def("validate", &LayerConfig::validate)
      .def_static("vanilla", &LayerConfig::vanilla, py::arg("n_ffn"), py::arg("k") = 2)
      .def("__repr__", [](const LayerConfig& c) { return "LayerConfig(" + to_json(c).dump() + ")"; });

  m.def("capacity", &capacity, py::arg("cfg"), py::arg("tokens"), "Per-expert capacity for `tokens` routed slots");
  m.def("complexity_ratio", py::overload_cast<const LayerConfig&>(&complexity_ratio), py::arg("cfg"));
  m.def("complexity_ratio", py::overload_cast<double, std::size_t, std::size_t>(&complexity_ratio), py::arg("tau"),
        py::arg("n_ffn"), py::arg("n_zc"));
  m.def("adaptive_constant_count", &adaptive_constant_count, py::arg("n_ffn"), py::arg("n_zero"), py::arg("n_copy"));
  m.def(
      "tau_sweep",
      [](const LayerConfig& cfg, const std::vector<double>& taus) {
        py::list rows;
        for (const auto& r : tau_sweep(cfg, taus)) {
          py::dict d;
          d["tau"] = r.tau;
          d["ratio"] = r.ratio;
          d["predicted_speedup_pct"] = r.predicted_speedup_pct;
          d["measured_increase_pct"] = r.measured_increase_pct;
          rows.append(d);
        }
        return rows;
      },
      py::arg("cfg"), py::arg("taus"));

  m.def(
      "route",
      [](const Array& x, const Array& w, std::size_t k, std::optional<Array> prev, std::optional<Array> w_g) {
        RouterParams params{to_tensor(w), std::nullopt};
        std::optional<Tensor> p;
        if (prev) p = to_tensor(*prev);
        if (w_g) params.w_g = to_tensor(*w_g);
        auto r = route(to_tensor(x), p, params, RouterOptions{k});
        py::dict d;
        d["logits"] = to_array(r.logits);
        d["probs"] = to_array(r.probs);
        d["gates"] = to_array(r.gates);
        d["selected"] = r.selected;
        return d;
      },
      py::arg("x"), py::arg("w"), py::arg("k") = 2, py::arg("prev") = py::none(), py::arg("w_g") = py::none());

  py::class_<PyLayer>(m, "Layer")
      .def(py::init<LayerConfig, std::size_t, std::size_t, std::uint64_t, bool>(), py::arg("cfg"), py::arg("hidden"),
           py::arg("intermediate"), py::arg("seed") = 0, py::arg("with_residual") = false)
      .def("forward", &PyLayer::forward, py::arg("x"), py::arg("prev") = py::none())
      .def_property_readonly("router_weight", &PyLayer::router_weight);

  m.def(
      "train",
      [](const std::string& config_json) {
        RunConfig cfg = run_config_from_json(nlohmann::json::parse(config_json));
        py::list out;
        auto run = train_run(cfg);
        for (const auto& s : run.metrics) out.append(metrics_dict(s));
        return out;
      },
      py::arg("config_json"), "Train from a JSON run configuration; returns per-step metrics");
}
