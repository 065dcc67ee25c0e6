#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iml/checkpoint.hpp"
#include "iml/forge/bundle.hpp"
#include "iml/text.hpp"

namespace iml {

/// A complete, reproducible experiment description: forge parameters, model
/// and optimizer configuration, the training protocol, analysis toggles and
/// the seed list. The hash of the canonical serialization is embedded in
/// every output file.
struct ExperimentConfig {
  std::string run_id = "experiment";
  std::vector<uint64_t> seeds = {0};
  std::string out_dir = "runs/experiment";

  forge::ForgeSpec forge;  // forge.seed is overridden by the per-run seed
  ModelConfig model;       // model.vocab_size is filled in after the vocab is built
  OptimConfig optimizer;

  std::string protocol = "two_stage";  // two_stage | joint | x1_only | batch_size_sweep
  int stage1_epochs = 1;
  int stage2_epochs = 1;
  int batch_size = 1;
  bool eval_every_epoch = true;
  std::vector<int> sweep_sizes;  // batch_size_sweep; 0 means "full batch"
  int sweep_max_epochs = 300;

  std::vector<std::string> alignment_subsets = {"D5cons", "D6cons"};
  std::vector<std::string> alignment_metrics = {"inner_product", "cosine", "squared_l2"};
  std::string align_at = "stage1_end";  // none | stage1_end
  std::vector<std::string> probe_tasks = {"tag_prediction"};
  int probe_layer = -1;  // -1 = after the last block
  std::string probe_question_kind = "membership";

  void validate() const {
    forge.validate();
    optimizer.validate();
    check(protocol == "two_stage" || protocol == "joint" || protocol == "x1_only" ||
              protocol == "batch_size_sweep",
          "config: unknown protocol '" + protocol + "'");
    check(stage1_epochs >= 1 && stage2_epochs >= 1 && batch_size >= 1,
          "config: epochs and batch_size must be positive");
    check(align_at == "none" || align_at == "stage1_end",
          "config: align_at must be none or stage1_end");
    for (const auto& s : alignment_subsets) forge::subset_from(s);
    for (const auto& m : alignment_metrics) align_metric_from(m);
    for (const auto& t : probe_tasks)
      check(t == "tag_prediction" || t == "definition_presence",
            "config: unknown probe task '" + t + "'");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id;
    j["seeds"] = seeds;
    j["out_dir"] = out_dir;
    j["forge"] = forge.to_json();
    j["model"] = ckpt_detail::model_config_json(model);
    j["optimizer"] = ckpt_detail::optim_config_json(optimizer);
    j["training"] = {{"protocol", protocol},
                     {"stage1_epochs", stage1_epochs},
                     {"stage2_epochs", stage2_epochs},
                     {"batch_size", batch_size},
                     {"eval_every_epoch", eval_every_epoch},
                     {"sweep_sizes", sweep_sizes},
                     {"sweep_max_epochs", sweep_max_epochs}};
    j["analysis"] = {{"alignment_subsets", alignment_subsets},
                     {"alignment_metrics", alignment_metrics},
                     {"align_at", align_at},
                     {"probe_tasks", probe_tasks},
                     {"probe_layer", probe_layer},
                     {"probe_question_kind", probe_question_kind}};
    return j;
  }

  uint64_t hash() const { return fnv1a(to_json().dump()); }

  std::string provenance(uint64_t seed) const {
    return "config_hash=" + hex64(hash()) + " seed=" + std::to_string(seed) + " version=" +
           kVersion;
  }
};

namespace config_detail {

template <typename F>
auto field(const char* path, F f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw error(std::string("invalid config field ") + path + ": " + e.what());
  }
}

inline forge::ForgeSpec forge_from_json(const nlohmann::json& j) {
  forge::ForgeSpec s;
  s.source = field("forge.source", [&] { return j.at("source").get<std::string>(); });
  s.variant = field("forge.variant", [&] { return j.at("variant").get<std::string>(); });
  s.alpha = field("forge.alpha", [&] { return j.at("alpha").get<double>(); });
  s.word_order = forge::word_order_from(
      field("forge.word_order", [&] { return j.at("word_order").get<std::string>(); }));
  s.seed = field("forge.seed", [&] { return j.value("seed", uint64_t{0}); });
  s.input_path = field("forge.input_path", [&] { return j.at("input_path").get<std::string>(); });
  s.entity_count = field("forge.entity_count", [&] { return j.at("entity_count").get<int>(); });
  const auto& si = j.at("set_inclusion");
  s.set_inclusion.variable_count =
      field("forge.set_inclusion.variable_count", [&] { return si.at("variable_count").get<int>(); });
  s.set_inclusion.list_length =
      field("forge.set_inclusion.list_length", [&] { return si.at("list_length").get<int>(); });
  s.set_inclusion.value_range =
      field("forge.set_inclusion.value_range", [&] { return si.at("value_range").get<int>(); });
  s.set_inclusion.train_qa_per_variable = field("forge.set_inclusion.train_qa_per_variable", [&] {
    return si.at("train_qa_per_variable").get<int>();
  });
  s.set_inclusion.val_questions_per_variable =
      field("forge.set_inclusion.val_questions_per_variable",
            [&] { return si.at("val_questions_per_variable").get<int>(); });
  s.set_inclusion.test_questions_per_variable =
      field("forge.set_inclusion.test_questions_per_variable",
            [&] { return si.at("test_questions_per_variable").get<int>(); });
  s.surface_length = field("forge.surface_length", [&] { return j.at("surface_length").get<int>(); });
  s.alphabet = field("forge.alphabet", [&] { return j.at("alphabet").get<std::string>(); });
  s.definition_template = field("forge.definition_template",
                                [&] { return j.at("definition_template").get<std::string>(); });
  if (j.contains("attribution_templates")) {
    s.attribution_templates.clear();
    for (const auto& tj : j.at("attribution_templates"))
      for (auto it = tj.begin(); it != tj.end(); ++it)
        s.attribution_templates.push_back({it.key(), it.value().get<std::string>()});
  }
  return s;
}

}  // namespace config_detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using config_detail::field;
  ExperimentConfig c;
  c.run_id = field("run_id", [&] { return j.at("run_id").get<std::string>(); });
  c.seeds = field("seeds", [&] { return j.at("seeds").get<std::vector<uint64_t>>(); });
  c.out_dir = field("out_dir", [&] { return j.at("out_dir").get<std::string>(); });
  c.forge = config_detail::forge_from_json(j.at("forge"));
  c.model = field("model", [&] { return ckpt_detail::model_config_from_json(j.at("model")); });
  c.optimizer =
      field("optimizer", [&] { return ckpt_detail::optim_config_from_json(j.at("optimizer")); });
  const auto& t = j.at("training");
  c.protocol = field("training.protocol", [&] { return t.at("protocol").get<std::string>(); });
  c.stage1_epochs = field("training.stage1_epochs", [&] { return t.at("stage1_epochs").get<int>(); });
  c.stage2_epochs = field("training.stage2_epochs", [&] { return t.at("stage2_epochs").get<int>(); });
  c.batch_size = field("training.batch_size", [&] { return t.at("batch_size").get<int>(); });
  c.eval_every_epoch =
      field("training.eval_every_epoch", [&] { return t.at("eval_every_epoch").get<bool>(); });
  c.sweep_sizes =
      field("training.sweep_sizes", [&] { return t.at("sweep_sizes").get<std::vector<int>>(); });
  c.sweep_max_epochs =
      field("training.sweep_max_epochs", [&] { return t.at("sweep_max_epochs").get<int>(); });
  const auto& a = j.at("analysis");
  c.alignment_subsets = field("analysis.alignment_subsets", [&] {
    return a.at("alignment_subsets").get<std::vector<std::string>>();
  });
  c.alignment_metrics = field("analysis.alignment_metrics", [&] {
    return a.at("alignment_metrics").get<std::vector<std::string>>();
  });
  c.align_at = field("analysis.align_at", [&] { return a.at("align_at").get<std::string>(); });
  c.probe_tasks = field("analysis.probe_tasks",
                        [&] { return a.at("probe_tasks").get<std::vector<std::string>>(); });
  c.probe_layer = field("analysis.probe_layer", [&] { return a.at("probe_layer").get<int>(); });
  c.probe_question_kind = field("analysis.probe_question_kind", [&] {
    return a.at("probe_question_kind").get<std::string>();
  });
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw error("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write config file: " + path);
  out << c.to_json().dump(2) << "\n";
}

/// Named experiment presets.
inline std::vector<std::pair<std::string, ExperimentConfig>> make_preset(const std::string& name) {
  auto desk = [] {
    ExperimentConfig c;
    c.run_id = "set-inclusion-desk";
    c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    c.forge.source = "set_inclusion";
    c.forge.set_inclusion.variable_count = 2000;
    c.model.n_layers = 2;
    c.model.n_heads = 4;
    c.model.d_model = 128;
    c.model.d_ff = 512;
    c.model.max_context_length = 16;
    c.optimizer.kind = "adafactor";
    c.protocol = "two_stage";
    c.stage1_epochs = 50;
    c.stage2_epochs = 20;
    c.batch_size = 256;
    return c;
  };

  std::vector<std::pair<std::string, ExperimentConfig>> out;
  if (name == "set-inclusion-desk") {
    out.emplace_back("", desk());
  } else if (name == "set-inclusion-paper") {
    ExperimentConfig c = desk();
    c.run_id = "set-inclusion-paper";
    c.seeds.clear();
    for (uint64_t s = 0; s < 50; ++s) c.seeds.push_back(s);
    c.forge.set_inclusion.variable_count = 8000;
    c.model.n_layers = 6;
    c.model.n_heads = 8;
    c.model.d_model = 512;
    c.model.d_ff = 2048;
    c.stage1_epochs = 100;
    c.stage2_epochs = 40;
    c.batch_size = 512;
    out.emplace_back("", c);
  } else if (name == "alpha-sweep") {
    for (double alpha : {0.5, 0.75, 0.9, 0.95, 1.0}) {
      ExperimentConfig c = desk();
      c.run_id = "alpha-sweep-" + format_double(alpha);
      c.forge.variant = "alpha";
      c.forge.alpha = alpha;
      c.seeds = {0, 1, 2, 3, 4};
      out.emplace_back("alpha_" + format_double(alpha), c);
    }
  } else if (name == "word-order-sweep") {
    for (int o = 0; o <= static_cast<int>(forge::WordOrder::eta); ++o) {
      auto order = static_cast<forge::WordOrder>(o);
      ExperimentConfig c = desk();
      c.run_id = "word-order-" + forge::word_order_name(order);
      c.forge.variant = "word_order";
      c.forge.word_order = order;
      c.seeds = {0, 1, 2, 3, 4};
      out.emplace_back("order_" + forge::word_order_name(order), c);
    }
  } else if (name == "batch-size-sweep") {
    ExperimentConfig c = desk();
    c.run_id = "batch-size-sweep";
    c.forge.set_inclusion.variable_count = 500;
    c.protocol = "batch_size_sweep";
    c.sweep_sizes = {32, 256, 0};  // 0 = full batch
    c.sweep_max_epochs = 120;
    c.seeds = {0, 1, 2, 3, 4};
    out.emplace_back("", c);
  } else if (name == "in-context-control") {
    ExperimentConfig c = desk();
    c.run_id = "in-context-control";
    c.forge.variant = "in_context";
    c.protocol = "x1_only";
    c.seeds = {0, 1, 2, 3, 4};
    out.emplace_back("", c);
  } else {
    throw error("unknown preset '" + name +
                "' (expected set-inclusion-desk, set-inclusion-paper, alpha-sweep, "
                "word-order-sweep, batch-size-sweep, in-context-control)");
  }
  for (auto& [suffix, c] : out) c.validate();
  return out;
}

}  // namespace iml
