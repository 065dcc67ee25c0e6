#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iml/analysis.hpp"
#include "iml/checkpoint.hpp"
#include "iml/config.hpp"
#include "iml/csv.hpp"
#include "iml/forge/io.hpp"
#include "iml/report.hpp"
#include "iml/train.hpp"

namespace iml {

// Subcommand implementations shared by the CLI. Each writes only inside the
// given run directory; every artifact embeds (config hash, seed, version).

namespace run_detail {

inline constexpr uint64_t kModelSeedStream = 11;
inline constexpr uint64_t kShuffleSeedStream = 12;
inline constexpr uint64_t kProbeSplitStream = 13;
inline constexpr uint64_t kProbeBalanceStream = 14;

inline std::string bundle_path(const std::string& dir) { return dir + "/bundle.jsonl"; }

inline Vocab build_vocab(const ExperimentConfig& config, const forge::DatasetBundle& bundle) {
  if (config.forge.source == "set_inclusion") return build_set_inclusion_vocab(bundle);
  return build_word_vocab(bundle);
}

inline void write_predictions(const std::string& path, const std::vector<Prediction>& preds,
                              const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write predictions file " + path);
  nlohmann::ordered_json head;
  head["provenance"] = provenance;
  out << head.dump() << "\n";
  for (const auto& p : preds) {
    nlohmann::ordered_json j;
    j["prompt"] = p.prompt;
    j["prediction"] = p.prediction;
    j["gold_answers"] = p.gold_answers;
    j["correct"] = p.correct;
    out << j.dump() << "\n";
  }
}

inline void write_metrics_csv(const std::string& path, const ExperimentConfig& config,
                              uint64_t seed, const std::vector<MetricRow>& rows) {
  CsvWriter csv(path, config.provenance(seed),
                {"run_id", "seed", "stage", "epoch", "subset", "question_family", "metric",
                 "value", "n"});
  for (const auto& r : rows)
    csv.row({config.run_id, std::to_string(seed), r.stage, std::to_string(r.epoch), r.subset,
             r.family, r.metric, format_double(r.value), std::to_string(r.n)});
}

template <typename T>
void write_alignment_csv(const std::string& path, const ExperimentConfig& config, uint64_t seed,
                         const ModelState<T>& model, const Vocab& vocab,
                         const forge::DatasetBundle& bundle, int epoch) {
  // Analysis runs in 64-bit regardless of the training precision.
  ModelState<double> model64 = model.template cast<double>();
  CsvWriter csv(path, config.provenance(seed),
                {"run_id", "seed", "epoch", "subset", "metric", "n", "k", "value"});
  std::vector<AlignMetric> metrics;
  for (const auto& m : config.alignment_metrics) metrics.push_back(align_metric_from(m));
  for (const auto& subset_name_str : config.alignment_subsets) {
    auto reports =
        alignment(model64, vocab, bundle, forge::subset_from(subset_name_str), metrics, epoch);
    for (const auto& r : reports)
      csv.row({config.run_id, std::to_string(seed), std::to_string(r.epoch),
               forge::subset_name(r.subset), align_metric_name(r.metric), std::to_string(r.n),
               std::to_string(r.k), format_double(r.mean)});
  }
}

/// Activation rows for a probe task over held-out questions.
template <typename T>
ProbeData build_probe_data(const ModelState<T>& model, const Vocab& vocab,
                           const forge::DatasetBundle& bundle, const std::string& task, int layer,
                           const std::string& question_kind, uint64_t seed) {
  // Candidate questions grouped by entity, with the task label per subset.
  struct Row {
    int entity_id;
    int label;
    const forge::Document* doc;
  };
  std::vector<Row> rows;
  for (const auto& d : bundle.docs) {
    if (d.split == forge::Split::train || d.question_kind != question_kind) continue;
    const auto& spec = bundle.spec_of(d.subset);
    if (!spec.alias_replaced) continue;
    if (task == "tag_prediction") {
      if (!spec.has_defs || !spec.tag_kind) continue;
      if (*spec.tag_kind == forge::TagKind::dot)
        rows.push_back({d.entity_id, 1, &d});
      else if (*spec.tag_kind == forge::TagKind::bar)
        rows.push_back({d.entity_id, 0, &d});
    } else {  // definition_presence
      rows.push_back({d.entity_id, spec.has_defs ? 1 : 0, &d});
    }
  }
  check(!rows.empty(), "probe: no candidate questions for task " + task);

  // Balance classes by entity, then make an alias-disjoint 50/50 split.
  std::map<int, int> entity_label;
  for (const auto& r : rows) entity_label[r.entity_id] = r.label;
  std::vector<int> class0, class1;
  for (const auto& [id, label] : entity_label) (label ? class1 : class0).push_back(id);
  check(!class0.empty() && !class1.empty(), "probe: task " + task + " has a single class only");
  Rng balance_rng(mix_seed(seed, kProbeBalanceStream));
  balance_rng.shuffle(class0);
  balance_rng.shuffle(class1);
  const size_t per_class = std::min(class0.size(), class1.size());
  class0.resize(per_class);
  class1.resize(per_class);

  std::set<int> test_entities;
  Rng split_rng(mix_seed(seed, kProbeSplitStream));
  for (auto* cls : {&class0, &class1}) {
    std::sort(cls->begin(), cls->end());
    split_rng.shuffle(*cls);
    for (size_t i = cls->size() / 2; i < cls->size(); ++i) test_entities.insert((*cls)[i]);
  }
  std::set<int> kept(class0.begin(), class0.end());
  kept.insert(class1.begin(), class1.end());

  std::vector<const Row*> selected;
  for (const auto& r : rows)
    if (kept.count(r.entity_id)) selected.push_back(&r);

  const int use_layer = layer < 0 ? model.config.n_layers : layer;
  ProbeData data;
  data.features = Tensor<double>({static_cast<int64_t>(selected.size()), model.config.d_model});
  for (size_t i = 0; i < selected.size(); ++i) {
    const Row& r = *selected[i];
    auto ids = vocab.encode_tokens(vocab.tokenize(r.doc->text));
    auto act = extract_activations(model, ids, use_layer, static_cast<int64_t>(ids.size()) - 1);
    for (int64_t j = 0; j < model.config.d_model; ++j)
      data.features.at(static_cast<int64_t>(i), j) = static_cast<double>(act[static_cast<size_t>(j)]);
    data.labels.push_back(r.label);
    data.alias_ids.push_back(r.entity_id);
    data.in_test.push_back(test_entities.count(r.entity_id) ? 1 : 0);
  }
  return data;
}

template <typename T>
void write_probe_csv(const std::string& path, const ExperimentConfig& config, uint64_t seed,
                     const ModelState<T>& model, const Vocab& vocab,
                     const forge::DatasetBundle& bundle) {
  ModelState<double> model64 = model.template cast<double>();
  CsvWriter csv(path, config.provenance(seed),
                {"run_id", "seed", "task", "layer", "train_acc", "test_acc", "n_train", "n_test"});
  for (const auto& task : config.probe_tasks) {
    const int layer = config.probe_layer < 0 ? model.config.n_layers : config.probe_layer;
    ProbeData data = build_probe_data(model64, vocab, bundle, task, config.probe_layer,
                                      config.probe_question_kind, seed);
    ProbeReport rep = train_probe(data, task, layer);
    csv.row({config.run_id, std::to_string(seed), rep.task, std::to_string(rep.layer),
             format_double(rep.train_acc), format_double(rep.test_acc),
             std::to_string(rep.n_train), std::to_string(rep.n_test)});
  }
}

inline StageSpec make_stage_spec(const ExperimentConfig& config, uint64_t seed,
                                 const forge::DatasetBundle& bundle, forge::Stage stage,
                                 const std::string& name, int epochs) {
  StageSpec s;
  s.stage = stage;
  s.name = name;
  s.epochs = epochs;
  s.batch_size = config.batch_size;
  s.shuffle_seed = mix_seed(seed, kShuffleSeedStream, stage == forge::Stage::x1 ? 1 : 2);
  s.eval_every_epoch = config.eval_every_epoch;
  for (const auto& sub : bundle.subsets)
    if (sub.stage == stage) s.train_subsets.push_back(sub.id);
  return s;
}

template <typename T>
void run_training(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                  const forge::DatasetBundle& bundle, const Vocab& vocab) {
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  mc.precision = sizeof(T) == 4 ? "f32" : "f64";
  auto model = init_model<T>(mc, mix_seed(seed, kModelSeedStream));
  const std::string prov = config.provenance(seed);

  std::vector<MetricRow> all_rows;
  std::map<std::string, std::vector<Prediction>> predictions;
  auto eval_sets = build_eval_sets(bundle);

  auto stage1_end_hook = [&](const std::string& stage, int epoch, int final_epoch) {
    if (stage != "stage1" || epoch != final_epoch) return;
    save_checkpoint(dir + "/ckpt_stage1.bin", model, vocab.hash());
    if (config.align_at == "stage1_end")
      write_alignment_csv(dir + "/alignment.csv", config, seed, model, vocab, bundle, epoch);
    if (!config.probe_tasks.empty())
      write_probe_csv(dir + "/probe.csv", config, seed, model, vocab, bundle);
  };

  if (config.protocol == "two_stage") {
    StageSpec s1 = make_stage_spec(config, seed, bundle, forge::Stage::x1, "stage1",
                                   config.stage1_epochs);
    StageSpec s2 = make_stage_spec(config, seed, bundle, forge::Stage::x2, "stage2",
                                   config.stage2_epochs);
    auto result = run_two_stage(model, config.optimizer, bundle, vocab, s1, s2, eval_sets,
                                [&](const std::string& st, int e) {
                                  stage1_end_hook(st, e, config.stage1_epochs);
                                });
    all_rows = result.stage1.rows;
    all_rows.insert(all_rows.end(), result.stage2.rows.begin(), result.stage2.rows.end());
    predictions = std::move(result.predictions);
    save_checkpoint(dir + "/ckpt_stage2.bin", model, vocab.hash());
  } else if (config.protocol == "joint") {
    StageSpec s = make_stage_spec(config, seed, bundle, forge::Stage::x1, "joint",
                                  config.stage1_epochs);
    for (const auto& sub : bundle.subsets)
      if (sub.stage == forge::Stage::x2) s.train_subsets.push_back(sub.id);
    auto result = run_joint(model, config.optimizer, bundle, vocab, s, eval_sets);
    all_rows = result.stage1.rows;
    predictions = std::move(result.predictions);
    save_checkpoint(dir + "/ckpt_final.bin", model, vocab.hash());
  } else if (config.protocol == "x1_only") {
    StageSpec s = make_stage_spec(config, seed, bundle, forge::Stage::x1, "stage1",
                                  config.stage1_epochs);
    auto docs = encode_stage_train_docs(bundle, vocab, mc.max_context_length, forge::Stage::x1);
    Optimizer<T> opt(config.optimizer, model);
    EvalReport rep = run_stage(model, opt, docs, s, eval_sets, vocab, &predictions,
                               [&](int e) { stage1_end_hook("stage1", e, config.stage1_epochs); });
    all_rows = rep.rows;
  } else if (config.protocol == "batch_size_sweep") {
    std::vector<int> sizes = config.sweep_sizes;
    auto x1 = encode_stage_train_docs(bundle, vocab, mc.max_context_length, forge::Stage::x1);
    auto x2 = encode_stage_train_docs(bundle, vocab, mc.max_context_length, forge::Stage::x2);
    const int corpus = static_cast<int>(x1.size() + x2.size());
    for (auto& s : sizes)
      if (s == 0) s = corpus;
    auto reports = batch_size_sweep<T>(mc, mix_seed(seed, kModelSeedStream), config.optimizer,
                                       bundle, vocab, sizes, eval_sets,
                                       mix_seed(seed, kShuffleSeedStream), config.sweep_max_epochs);
    for (auto& [size, rep] : reports)
      all_rows.insert(all_rows.end(), rep.rows.begin(), rep.rows.end());
  } else {
    throw error("unknown protocol " + config.protocol);
  }

  write_metrics_csv(dir + "/metrics.csv", config, seed, all_rows);
  for (const auto& [key, preds] : predictions)
    write_predictions(dir + "/predictions_" + key + ".jsonl", preds, prov);
}

}  // namespace run_detail

inline void cmd_forge(const ExperimentConfig& config, uint64_t seed, const std::string& dir) {
  std::filesystem::create_directories(dir);
  forge::ForgeSpec spec = config.forge;
  spec.seed = seed;
  std::vector<forge::EntityRecord> entities;
  if (spec.source == "cvdb") {
    check(!spec.input_path.empty(), "forge: cvdb needs forge.input_path");
    entities = forge::ingest_cvdb(forge::read_cvdb_rows(spec.input_path), spec.entity_count);
  } else if (spec.source == "trex") {
    check(!spec.input_path.empty(), "forge: trex needs forge.input_path");
    entities = forge::ingest_trex(forge::read_trex_triplets(spec.input_path), spec.entity_count);
  }
  forge::DatasetBundle bundle = forge::build_bundle(spec, std::move(entities));
  forge::serialize_bundle(bundle, run_detail::bundle_path(dir));
  ExperimentConfig resolved = config;
  resolved.forge.seed = seed;
  save_config(resolved, dir + "/config.json");
}

inline void cmd_train(const ExperimentConfig& config, uint64_t seed, const std::string& dir) {
  const std::string bpath = run_detail::bundle_path(dir);
  check(std::filesystem::exists(bpath), "train: bundle not found at " + bpath +
                                            " (run the forge subcommand first)");
  forge::DatasetBundle bundle = forge::load_bundle(bpath);
  Vocab vocab = run_detail::build_vocab(config, bundle);
  vocab.save(dir + "/vocab.jsonl");
  if (config.model.precision == "f64")
    run_detail::run_training<double>(config, seed, dir, bundle, vocab);
  else
    run_detail::run_training<float>(config, seed, dir, bundle, vocab);
}

template <typename T>
void cmd_eval_impl(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                   const std::string& ckpt_path) {
  forge::DatasetBundle bundle = forge::load_bundle(run_detail::bundle_path(dir));
  Vocab vocab = run_detail::build_vocab(config, bundle);
  auto loaded = load_checkpoint<T>(ckpt_path);
  check(loaded.vocab_hash == vocab.hash(),
        "eval: checkpoint vocabulary hash does not match this bundle");
  auto eval_sets = build_eval_sets(bundle);
  std::vector<MetricRow> rows;
  for (const auto& set : eval_sets) {
    std::vector<Prediction> preds;
    double em = eval_subset(loaded.model, vocab, set, &preds);
    rows.push_back({"eval", 0, forge::subset_name(set.subset), set.family, "em", em,
                    static_cast<int64_t>(set.items.size())});
    run_detail::write_predictions(
        dir + "/eval_predictions_" + forge::subset_name(set.subset) + "_" + set.family + ".jsonl",
        preds, config.provenance(seed));
  }
  run_detail::write_metrics_csv(dir + "/eval_metrics.csv", config, seed, rows);
}

inline void cmd_eval(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                     const std::string& ckpt_path) {
  if (config.model.precision == "f64")
    cmd_eval_impl<double>(config, seed, dir, ckpt_path);
  else
    cmd_eval_impl<float>(config, seed, dir, ckpt_path);
}

template <typename T>
void cmd_align_impl(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                    const std::string& ckpt_path) {
  forge::DatasetBundle bundle = forge::load_bundle(run_detail::bundle_path(dir));
  Vocab vocab = run_detail::build_vocab(config, bundle);
  auto loaded = load_checkpoint<T>(ckpt_path);
  check(loaded.vocab_hash == vocab.hash(),
        "align: checkpoint vocabulary hash does not match this bundle");
  run_detail::write_alignment_csv(dir + "/alignment.csv", config, seed, loaded.model, vocab,
                                  bundle, 0);
}

inline void cmd_align(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                      const std::string& ckpt_path) {
  if (config.model.precision == "f64")
    cmd_align_impl<double>(config, seed, dir, ckpt_path);
  else
    cmd_align_impl<float>(config, seed, dir, ckpt_path);
}

template <typename T>
void cmd_probe_impl(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                    const std::string& ckpt_path) {
  forge::DatasetBundle bundle = forge::load_bundle(run_detail::bundle_path(dir));
  Vocab vocab = run_detail::build_vocab(config, bundle);
  auto loaded = load_checkpoint<T>(ckpt_path);
  check(loaded.vocab_hash == vocab.hash(),
        "probe: checkpoint vocabulary hash does not match this bundle");
  run_detail::write_probe_csv(dir + "/probe.csv", config, seed, loaded.model, vocab, bundle);
}

inline void cmd_probe(const ExperimentConfig& config, uint64_t seed, const std::string& dir,
                      const std::string& ckpt_path) {
  if (config.model.precision == "f64")
    cmd_probe_impl<double>(config, seed, dir, ckpt_path);
  else
    cmd_probe_impl<float>(config, seed, dir, ckpt_path);
}

/// Aggregates seed*/metrics.csv under a run root into summary tables and
/// charts. Idempotent: re-running over the same inputs rewrites identical
/// bytes.
inline void cmd_report(const std::string& run_root) {
  namespace fs = std::filesystem;
  std::vector<std::string> metric_files;
  std::vector<fs::path> seed_dirs;
  for (const auto& e : fs::directory_iterator(run_root))
    if (e.is_directory() && e.path().filename().string().rfind("seed", 0) == 0)
      seed_dirs.push_back(e.path());
  std::sort(seed_dirs.begin(), seed_dirs.end());
  std::vector<SeedMetricRow> rows;
  std::string provenance;
  for (const auto& d : seed_dirs) {
    fs::path mpath = d / "metrics.csv";
    if (!fs::exists(mpath)) continue;
    CsvTable t = read_csv(mpath.string());
    if (provenance.empty()) provenance = t.provenance;
    for (size_t r = 0; r < t.rows.size(); ++r) {
      SeedMetricRow row;
      row.seed = static_cast<uint64_t>(parse_int(t.cell(r, "seed")));
      row.stage = t.cell(r, "stage");
      row.epoch = static_cast<int>(parse_int(t.cell(r, "epoch")));
      row.subset = t.cell(r, "subset");
      row.family = t.cell(r, "question_family");
      row.metric = t.cell(r, "metric");
      row.value = parse_double(t.cell(r, "value"));
      row.n = parse_int(t.cell(r, "n"));
      rows.push_back(std::move(row));
    }
  }
  check(!rows.empty(), "report: no seed*/metrics.csv under " + run_root);
  emit_report(rows, run_root, provenance);

  // Alignment aggregation, when present.
  std::map<std::tuple<std::string, std::string>, std::vector<double>> align_groups;
  std::string align_prov;
  for (const auto& d : seed_dirs) {
    fs::path apath = d / "alignment.csv";
    if (!fs::exists(apath)) continue;
    CsvTable t = read_csv(apath.string());
    if (align_prov.empty()) align_prov = t.provenance;
    for (size_t r = 0; r < t.rows.size(); ++r)
      align_groups[{t.cell(r, "subset"), t.cell(r, "metric")}].push_back(
          parse_double(t.cell(r, "value")));
  }
  if (!align_groups.empty()) {
    CsvWriter csv(run_root + "/alignment_summary.csv", align_prov,
                  {"subset", "metric", "mean", "ci95", "n_seeds"});
    for (const auto& [key, values] : align_groups) {
      SeedStats s = seed_stats(values);
      csv.row({std::get<0>(key), std::get<1>(key), format_double(s.mean), format_double(s.ci95),
               std::to_string(s.n)});
    }
  }
}

}  // namespace iml
