#include "moepp/config.hpp"

#include <fstream>
#include <set>

namespace moepp {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects whatever is left.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_, "expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    seen_.insert(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
        if (!it->is_number_unsigned()) throw ConfigError(path(key), "expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError(path(key), "expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(path(key), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!it->is_string()) throw ConfigError(path(key), "expected a string");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path(key), e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(path(it.key()), "unknown key");
    }
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

template <class F>
void checked(const std::string& where, F&& f) {
  try {
    f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where, e.what());
  }
}

void read_model_fields(Section& s, ModelConfig& m) {
  s.get("vocab", m.vocab);
  s.get("hidden", m.hidden);
  s.get("intermediate", m.intermediate);
  s.get("layers", m.layers);
  s.get("heads", m.heads);
  s.get("head_dim", m.head_dim);
  s.get("seq_len", m.seq_len);
}

json model_fields(const ModelConfig& m) {
  return {{"vocab", m.vocab},   {"hidden", m.hidden},     {"intermediate", m.intermediate}, {"layers", m.layers},
          {"heads", m.heads}, {"head_dim", m.head_dim}, {"seq_len", m.seq_len}};
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

json to_json(const LayerConfig& c) {
  return {{"n_ffn", c.n_ffn},
          {"n_zero", c.n_zero},
          {"n_copy", c.n_copy},
          {"n_const", c.n_const},
          {"k", c.k},
          {"tau", c.tau},
          {"gamma", c.gamma},
          {"ffn_activation", std::string(to_string(c.ffn_activation))},
          {"residuals", c.residuals_enabled},
          {"renormalize_gates", c.renormalize_gates},
          {"detach_residual", c.detach_residual},
          {"count_dropped_in_load", c.count_dropped_in_load}};
}

LayerConfig layer_config_from_json(const json& j, const std::string& where) {
  LayerConfig c;
  Section s(j, where);
  s.get("n_ffn", c.n_ffn);
  s.get("n_zero", c.n_zero);
  s.get("n_copy", c.n_copy);
  bool auto_const = false;
  if (const json* nc = s.child("n_const")) {
    if (nc->is_string()) {
      if (nc->get<std::string>() != "auto") throw ConfigError(s.path("n_const"), "expected an integer or \"auto\"");
      auto_const = true;
    } else if (nc->is_number_unsigned()) {
      c.n_const = nc->get<std::size_t>();
    } else {
      throw ConfigError(s.path("n_const"), "expected an integer or \"auto\"");
    }
  }
  s.get("k", c.k);
  s.get("tau", c.tau);
  s.get("gamma", c.gamma);
  std::string act(to_string(c.ffn_activation));
  s.get("ffn_activation", act);
  if (act != "gelu" && act != "relu") throw ConfigError(s.path("ffn_activation"), "expected \"gelu\" or \"relu\"");
  c.ffn_activation = activation_from_string(act);
  s.get("residuals", c.residuals_enabled);
  s.get("renormalize_gates", c.renormalize_gates);
  s.get("detach_residual", c.detach_residual);
  s.get("count_dropped_in_load", c.count_dropped_in_load);
  s.finish();
  if (auto_const) c.n_const = adaptive_constant_count(c.n_ffn, c.n_zero, c.n_copy);
  checked(where, [&] { c.validate(); });
  return c;
}

json to_json(const ModelConfig& m) {
  json j = model_fields(m);
  j["layer"] = to_json(m.layer);
  return j;
}

ModelConfig model_config_from_json(const json& j, const std::string& where) {
  ModelConfig m;
  Section s(j, where);
  read_model_fields(s, m);
  if (const json* l = s.child("layer")) m.layer = layer_config_from_json(*l, s.path("layer"));
  s.finish();
  checked(where, [&] { m.validate(); });
  return m;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  Section top(j, "");
  if (const json* m = top.child("model")) {
    Section s(*m, "model");
    read_model_fields(s, cfg.model);
    s.finish();
  }
  if (const json* l = top.child("layer")) cfg.model.layer = layer_config_from_json(*l, "layer");
  if (const json* t = top.child("train")) {
    Section s(*t, "train");
    auto& tr = cfg.train;
    s.get("steps", tr.steps);
    s.get("batch", tr.batch);
    s.get("beta", tr.beta);
    s.get("seed", tr.seed);
    s.get("lr", tr.optim.lr);
    s.get("adam_beta1", tr.optim.beta1);
    s.get("adam_beta2", tr.optim.beta2);
    s.get("weight_decay", tr.optim.weight_decay);
    s.get("clip_norm", tr.optim.clip_norm);
    s.get("warmup_steps", tr.optim.warmup_steps);
    s.get("final_lr_ratio", tr.optim.final_lr_ratio);
    if (const json* c = s.child("corpus")) {
      Section cs(*c, "train.corpus");
      cs.get("kind", cfg.corpus.kind);
      cs.get("path", cfg.corpus.path);
      cs.get("length", cfg.corpus.length);
      cs.get("eval_fraction", cfg.corpus.eval_fraction);
      cs.finish();
    }
    s.finish();
    if (tr.steps == 0) throw ConfigError("train.steps", "must be >= 1");
    if (tr.batch == 0) throw ConfigError("train.batch", "must be >= 1");
    if (tr.beta < 0.0) throw ConfigError("train.beta", "must be >= 0");
    if (!(tr.optim.lr > 0.0)) throw ConfigError("train.lr", "must be > 0");
  }
  cfg.train.optim.total_steps = cfg.train.steps;
  const std::set<std::string> kinds{"pattern", "random-walk", "uniform", "file"};
  if (!kinds.count(cfg.corpus.kind)) {
    throw ConfigError("train.corpus.kind", "expected pattern, random-walk, uniform or file, got '" + cfg.corpus.kind + "'");
  }
  if (cfg.corpus.kind == "file" && cfg.corpus.path.empty()) throw ConfigError("train.corpus.path", "required for kind 'file'");
  if (!(cfg.corpus.eval_fraction > 0.0 && cfg.corpus.eval_fraction < 1.0)) {
    throw ConfigError("train.corpus.eval_fraction", "must lie in (0, 1)");
  }
  if (const json* sim = top.child("sim")) {
    Section s(*sim, "sim");
    s.get("devices", cfg.sim.devices);
    s.get("tau_sweep", cfg.sim.tau_sweep);
    s.finish();
    if (cfg.sim.devices == 0) throw ConfigError("sim.devices", "must be >= 1");
    for (double t : cfg.sim.tau_sweep)
      if (!(t > 0.0)) throw ConfigError("sim.tau_sweep", "values must be > 0");
  }
  if (const json* io = top.child("io")) {
    Section s(*io, "io");
    s.get("output_dir", cfg.io.output_dir);
    s.get("trace_batches", cfg.io.trace_batches);
    s.finish();
  }
  top.finish();
  checked("model", [&] { cfg.model.validate(); });
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot read " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("parse error in ") + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& cfg) {
  const auto& tr = cfg.train;
  return {{"model", model_fields(cfg.model)},
          {"layer", to_json(cfg.model.layer)},
          {"train",
           {{"steps", tr.steps},
            {"batch", tr.batch},
            {"beta", tr.beta},
            {"seed", tr.seed},
            {"lr", tr.optim.lr},
            {"adam_beta1", tr.optim.beta1},
            {"adam_beta2", tr.optim.beta2},
            {"weight_decay", tr.optim.weight_decay},
            {"clip_norm", tr.optim.clip_norm},
            {"warmup_steps", tr.optim.warmup_steps},
            {"final_lr_ratio", tr.optim.final_lr_ratio},
            {"corpus",
             {{"kind", cfg.corpus.kind},
              {"path", cfg.corpus.path},
              {"length", cfg.corpus.length},
              {"eval_fraction", cfg.corpus.eval_fraction}}}}},
          {"sim", {{"devices", cfg.sim.devices}, {"tau_sweep", cfg.sim.tau_sweep}}},
          {"io", {{"output_dir", cfg.io.output_dir}, {"trace_batches", cfg.io.trace_batches}}}};
}

}  // namespace moepp
