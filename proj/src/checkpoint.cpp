#include "moepp/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "moepp/config.hpp"

namespace moepp {

using nlohmann::json;

namespace {
constexpr const char* kMagic = "MOEPP-CHECKPOINT";

void require_little_endian() {
  if constexpr (std::endian::native != std::endian::little) {
    throw std::runtime_error("checkpoint I/O requires a little-endian host");
  }
}
}  // namespace

void save_checkpoint(const std::string& path, const Model& model, Trainer* trainer) {
  require_little_endian();
  std::vector<std::pair<std::string, std::span<const double>>> arrays;
  std::vector<Shape> shapes;
  auto params = model.named_parameters();
  for (auto& [name, t] : params) {
    arrays.emplace_back(name, t.data());
    shapes.push_back(t.shape());
  }
  if (trainer) {
    auto& m = trainer->optimizer().first_moments();
    auto& v = trainer->optimizer().second_moments();
    if (m.size() != params.size()) throw ArgumentError("save_checkpoint: trainer does not belong to this model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      arrays.emplace_back("adam.m." + params[i].first, m[i]);
      shapes.push_back(params[i].second.shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      arrays.emplace_back("adam.v." + params[i].first, v[i]);
      shapes.push_back(params[i].second.shape());
    }
  }

  json header{{"format_version", kCheckpointVersion}, {"model", to_json(model.config())}};
  header["step"] = trainer ? trainer->steps_done() : 0;
  header["seed"] = trainer ? trainer->config().seed : 0;
  if (trainer) {
    std::ostringstream rng;
    rng << trainer->rng();
    header["rng_state"] = rng.str();
  }
  json list = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    list.push_back({{"name", arrays[i].first}, {"shape", shapes[i]}, {"offset", offset}});
    offset += arrays[i].second.size();
  }
  header["arrays"] = list;
  header["payload_doubles"] = offset;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << kMagic << ' ' << kCheckpointVersion << '\n' << header.dump() << '\n';
  for (auto& [name, data] : arrays) {
    out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("short write to checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  require_little_endian();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot read checkpoint: " + path);
  std::string magic_line, header_line;
  std::getline(in, magic_line);
  std::istringstream ml(magic_line);
  std::string magic;
  int version = 0;
  ml >> magic >> version;
  if (magic != kMagic) throw ArgumentError(path + " is not a checkpoint");
  if (version != kCheckpointVersion) throw ArgumentError("unsupported checkpoint version " + std::to_string(version));
  std::getline(in, header_line);
  json header = json::parse(header_line);

  Checkpoint ck;
  ck.model = model_config_from_json(header.at("model"), "checkpoint.model");
  ck.step = header.at("step").get<std::size_t>();
  ck.seed = header.at("seed").get<std::uint64_t>();
  if (header.contains("rng_state")) ck.rng_state = header["rng_state"].get<std::string>();

  const auto total = header.at("payload_doubles").get<std::size_t>();
  std::vector<double> payload(total);
  in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(total * sizeof(double)));
  if (in.gcount() != std::streamsize(total * sizeof(double))) throw ArgumentError("truncated checkpoint: " + path);

  for (const auto& a : header.at("arrays")) {
    Shape shape = a.at("shape").get<Shape>();
    auto offset = a.at("offset").get<std::size_t>();
    auto n = shape_numel(shape);
    if (offset + n > total) throw ArgumentError("checkpoint array out of bounds: " + a.at("name").get<std::string>());
    ck.arrays.emplace(a.at("name").get<std::string>(),
                      Tensor(shape, std::vector<double>(payload.begin() + offset, payload.begin() + offset + n)));
  }
  return ck;
}

void load_parameters(const Checkpoint& ckpt, Model& model) {
  for (auto& [name, t] : model.named_parameters()) {
    auto it = ckpt.arrays.find(name);
    if (it == ckpt.arrays.end()) throw ArgumentError("checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape()) throw DimensionError("checkpoint shape mismatch for " + name);
    auto src = it->second.data();
    std::copy(src.begin(), src.end(), t.mutable_data().begin());
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.model, 0);
  load_parameters(ckpt, model);
  return model;
}

void restore_trainer(const Checkpoint& ckpt, Trainer& trainer, const Model& model) {
  auto params = model.named_parameters();
  auto& m = trainer.optimizer().first_moments();
  auto& v = trainer.optimizer().second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto mi = ckpt.arrays.find("adam.m." + params[i].first);
    auto vi = ckpt.arrays.find("adam.v." + params[i].first);
    if (mi == ckpt.arrays.end() || vi == ckpt.arrays.end()) {
      throw ArgumentError("checkpoint lacks optimizer state for " + params[i].first);
    }
    auto ms = mi->second.data();
    auto vs = vi->second.data();
    m[i].assign(ms.begin(), ms.end());
    v[i].assign(vs.begin(), vs.end());
  }
  trainer.optimizer().set_steps_taken(ckpt.step);
  if (!ckpt.rng_state.empty()) {
    std::istringstream rng(ckpt.rng_state);
    rng >> trainer.rng();
  }
}

}  // namespace moepp
