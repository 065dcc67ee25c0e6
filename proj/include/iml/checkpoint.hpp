#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "iml/model.hpp"
#include "iml/optim.hpp"
#include "iml/version.hpp"

namespace iml {

// Checkpoint layout (little-endian host assumed):
//   line 1: "IMLCKPT1"
//   line 2: JSON header {version, dtype, step, vocab_hash, config,
//           params: [{name, shape}], optimizer: null | {kind, step_count,
//           config, slots: [{m,v,row,col shapes, -1 dims for absent}]}}
//   then the raw parameter payload in param_refs() order, followed by the
//   optimizer slot tensors (m, v, row, col order, present ones only).

namespace ckpt_detail {

inline nlohmann::ordered_json model_config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["d_model"] = c.d_model;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["max_context_length"] = c.max_context_length;
  j["positional"] = c.positional == Positional::rotary ? "rotary" : "learned_absolute";
  j["init_scale"] = c.init_scale;
  j["ln_eps"] = c.ln_eps;
  j["precision"] = c.precision;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_context_length = j.at("max_context_length").get<int>();
  std::string pos = j.at("positional").get<std::string>();
  check(pos == "rotary" || pos == "learned_absolute", "bad positional scheme '" + pos + "'");
  c.positional = pos == "rotary" ? Positional::rotary : Positional::learned_absolute;
  c.init_scale = j.at("init_scale").get<double>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.precision = j.at("precision").get<std::string>();
  return c;
}

inline nlohmann::ordered_json optim_config_json(const OptimConfig& c) {
  nlohmann::ordered_json j;
  j["kind"] = c.kind;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["eps1"] = c.eps1;
  j["eps2"] = c.eps2;
  j["clip_threshold"] = c.clip_threshold;
  j["decay_exponent"] = c.decay_exponent;
  j["relative_step"] = c.relative_step;
  j["scale_parameter"] = c.scale_parameter;
  return j;
}

inline OptimConfig optim_config_from_json(const nlohmann::json& j) {
  OptimConfig c;
  c.kind = j.at("kind").get<std::string>();
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.eps1 = j.at("eps1").get<double>();
  c.eps2 = j.at("eps2").get<double>();
  c.clip_threshold = j.at("clip_threshold").get<double>();
  c.decay_exponent = j.at("decay_exponent").get<double>();
  c.relative_step = j.at("relative_step").get<bool>();
  c.scale_parameter = j.at("scale_parameter").get<bool>();
  return c;
}

template <typename T>
void write_tensor(std::ofstream& out, const Tensor<T>& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(T))));
}

template <typename T>
void read_tensor(std::ifstream& in, Tensor<T>& t) {
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size() * static_cast<int64_t>(sizeof(T))));
  check(in.good(), "checkpoint: truncated payload");
}

inline nlohmann::ordered_json shape_json(const Shape& s) {
  nlohmann::ordered_json a = nlohmann::ordered_json::array();
  for (auto d : s) a.push_back(d);
  return a;
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path, const ModelState<T>& model, uint64_t vocab_hash,
                     const Optimizer<T>* optimizer = nullptr) {
  using ckpt_detail::shape_json;
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot write " + path);
  nlohmann::ordered_json header;
  header["version"] = kVersion;
  header["dtype"] = sizeof(T) == 4 ? "f32" : "f64";
  header["step"] = model.step;
  header["vocab_hash"] = hex64(vocab_hash);
  header["config"] = ckpt_detail::model_config_json(model.config);
  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const auto& [name, p] : model.param_refs())
    params.push_back({{"name", name}, {"shape", shape_json(p->shape())}});
  header["params"] = std::move(params);
  if (optimizer != nullptr) {
    nlohmann::ordered_json opt;
    opt["kind"] = optimizer->config().kind;
    opt["step_count"] = optimizer->step_count();
    opt["config"] = ckpt_detail::optim_config_json(optimizer->config());
    nlohmann::ordered_json slots = nlohmann::ordered_json::array();
    for (const auto& s : optimizer->slots()) {
      slots.push_back({{"m", shape_json(s.m.shape())},
                       {"v", shape_json(s.v.shape())},
                       {"row", shape_json(s.row.shape())},
                       {"col", shape_json(s.col.shape())}});
    }
    opt["slots"] = std::move(slots);
    header["optimizer"] = std::move(opt);
  } else {
    header["optimizer"] = nullptr;
  }
  out << "IMLCKPT1\n" << header.dump() << "\n";
  for (const auto& [name, p] : model.param_refs()) ckpt_detail::write_tensor(out, *p);
  if (optimizer != nullptr) {
    for (const auto& s : optimizer->slots()) {
      for (const Tensor<T>* t : {&s.m, &s.v, &s.row, &s.col})
        if (t->size() > 0) ckpt_detail::write_tensor(out, *t);
    }
  }
  check(out.good(), "save_checkpoint: write failed for " + path);
}

template <typename T>
struct LoadedCheckpoint {
  ModelState<T> model;
  uint64_t vocab_hash = 0;
  std::optional<Optimizer<T>> optimizer;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open " + path);
  std::string magic;
  check(static_cast<bool>(std::getline(in, magic)) && magic == "IMLCKPT1",
        "load_checkpoint: " + path + " is not a checkpoint file");
  std::string header_line;
  check(static_cast<bool>(std::getline(in, header_line)), "load_checkpoint: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw error("load_checkpoint: bad header in " + path + ": " + e.what());
  }
  const std::string dtype = header.at("dtype").get<std::string>();
  check(dtype == (sizeof(T) == 4 ? "f32" : "f64"),
        "load_checkpoint: checkpoint dtype is " + dtype);

  LoadedCheckpoint<T> out;
  ModelConfig cfg = ckpt_detail::model_config_from_json(header.at("config"));
  out.model = init_model<T>(cfg, 0);
  out.model.step = header.at("step").get<int64_t>();
  out.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
  auto refs = out.model.param_refs();
  const auto& params = header.at("params");
  check(params.size() == refs.size(), "load_checkpoint: parameter count mismatch");
  for (size_t i = 0; i < refs.size(); ++i) {
    check(params[i].at("name").get<std::string>() == refs[i].first,
          "load_checkpoint: parameter order mismatch at " + refs[i].first);
    ckpt_detail::read_tensor(in, *refs[i].second);
  }
  if (!header.at("optimizer").is_null()) {
    const auto& oj = header.at("optimizer");
    OptimConfig oc = ckpt_detail::optim_config_from_json(oj.at("config"));
    Optimizer<T> opt(oc, out.model);
    opt.set_step_count(oj.at("step_count").get<int64_t>());
    for (auto& s : opt.slots()) {
      for (Tensor<T>* t : {&s.m, &s.v, &s.row, &s.col})
        if (t->size() > 0) ckpt_detail::read_tensor(in, *t);
    }
    out.optimizer = std::move(opt);
  }
  return out;
}

}  // namespace iml
