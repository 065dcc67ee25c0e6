#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iml/forge/types.hpp"
#include "iml/model.hpp"
#include "iml/optim.hpp"
#include "iml/rng.hpp"
#include "iml/tokenizer.hpp"

namespace iml {

/// One training stage: which subsets' train documents, for how long.
struct StageSpec {
  std::vector<forge::SubsetId> train_subsets;
  forge::Stage stage = forge::Stage::x1;
  std::string name = "stage1";
  int epochs = 1;
  int batch_size = 1;
  uint64_t shuffle_seed = 0;
  bool eval_every_epoch = true;

  void validate() const {
    check(epochs >= 1, "StageSpec: epochs must be >= 1");
    check(batch_size >= 1, "StageSpec: batch_size must be >= 1");
  }
};

struct EvalItem {
  std::string prompt;
  std::vector<std::string> gold_answers;
  int entity_id = -1;
};

/// One evaluation family: the (subset, question-kind) group of held-out
/// prompts evaluated together.
struct EvalSet {
  forge::SubsetId subset = forge::SubsetId::d1_cons_qa1;
  std::string family;
  std::vector<EvalItem> items;
};

struct MetricRow {
  std::string stage;
  int epoch = 0;
  std::string subset;
  std::string family;
  std::string metric;  // em | train_loss_qa | train_loss_def
  double value = 0.0;
  int64_t n = 0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
};

struct Prediction {
  std::string prompt;
  std::string prediction;
  std::vector<std::string> gold_answers;
  bool correct = false;
};

/// Whitespace-trimmed, case-sensitive match against any gold answer.
inline bool exact_match(const std::string& predicted, const std::vector<std::string>& gold) {
  const std::string p = trim(predicted);
  for (const auto& g : gold)
    if (p == trim(g)) return true;
  return false;
}

/// Greedy-decodes every prompt of an eval set and scores exact match.
template <typename T>
double eval_subset(const ModelState<T>& model, const Vocab& vocab, const EvalSet& set,
                   std::vector<Prediction>* out_predictions = nullptr, int max_new = 8) {
  check(!set.items.empty(), "eval_subset: empty eval set for " + subset_name(set.subset));
  int64_t correct = 0;
  for (const auto& item : set.items) {
    auto prompt_ids = vocab.encode_tokens(vocab.tokenize(item.prompt));
    check(!prompt_ids.empty(), "eval_subset: empty prompt");
    auto generated = generate_greedy(model, prompt_ids, max_new, kEod);
    std::string prediction = vocab.decode(generated);
    bool ok = exact_match(prediction, item.gold_answers);
    correct += ok ? 1 : 0;
    if (out_predictions)
      out_predictions->push_back({item.prompt, prediction, item.gold_answers, ok});
  }
  return static_cast<double>(correct) / static_cast<double>(set.items.size());
}

/// Groups a bundle's val/test documents into eval sets keyed by
/// (subset, question_kind).
inline std::vector<EvalSet> build_eval_sets(const forge::DatasetBundle& bundle) {
  std::map<std::pair<forge::SubsetId, std::string>, EvalSet> grouped;
  for (const auto& d : bundle.docs) {
    if (d.split == forge::Split::train) continue;
    auto key = std::make_pair(d.subset, d.question_kind);
    auto& set = grouped[key];
    set.subset = d.subset;
    set.family = d.question_kind;
    set.items.push_back({d.text, d.gold_answers, d.entity_id});
  }
  std::vector<EvalSet> out;
  for (auto& [k, v] : grouped) out.push_back(std::move(v));
  return out;
}

namespace train_detail {

/// Mean per-document training loss accumulated by (subset, doc kind).
struct LossAccum {
  std::map<std::pair<forge::SubsetId, bool>, std::pair<double, int64_t>> sums;
  void add(forge::SubsetId s, bool is_def, double v) {
    auto& [sum, n] = sums[{s, is_def}];
    sum += v;
    n += 1;
  }
};

}  // namespace train_detail

/// Epoch loop with seeded shuffling, per-document-mean batch gradients and
/// per-epoch evaluation. Returns metric rows; optionally captures greedy
/// predictions for the final epoch's evaluations.
template <typename T>
EvalReport run_stage(ModelState<T>& model, Optimizer<T>& optimizer,
                     const std::vector<TokenizedDoc>& train_docs, const StageSpec& spec,
                     const std::vector<EvalSet>& eval_sets, const Vocab& vocab,
                     std::map<std::string, std::vector<Prediction>>* final_predictions = nullptr,
                     const std::function<void(int)>& after_epoch = nullptr) {
  spec.validate();
  for (const auto& d : train_docs)
    check(d.split == forge::Split::train, "run_stage: non-train document in the batch stream");

  EvalReport report;
  std::vector<size_t> order(train_docs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(spec.shuffle_seed, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    train_detail::LossAccum losses;

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(spec.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(spec.batch_size));
      const int64_t B = static_cast<int64_t>(end - start);
      int64_t L = 0;
      for (size_t i = start; i < end; ++i)
        L = std::max<int64_t>(L, train_docs[order[i]].content_len);

      std::vector<int32_t> ids(static_cast<size_t>(B * L), kPad);
      std::vector<int32_t> targets(static_cast<size_t>(B * L), 0);
      std::vector<T> weights(static_cast<size_t>(B * L), T{0});
      for (int64_t b = 0; b < B; ++b) {
        const TokenizedDoc& doc = train_docs[order[start + static_cast<size_t>(b)]];
        const int64_t n_pred = doc.content_len - 1;
        check(n_pred > 0, "run_stage: document with nothing to predict");
        const T w = T{1} / (static_cast<T>(B) * static_cast<T>(n_pred));
        for (int64_t t = 0; t < doc.content_len; ++t)
          ids[static_cast<size_t>(b * L + t)] = doc.ids[static_cast<size_t>(t)];
        for (int64_t t = 0; t + 1 < doc.content_len; ++t) {
          targets[static_cast<size_t>(b * L + t)] = doc.ids[static_cast<size_t>(t + 1)];
          weights[static_cast<size_t>(b * L + t)] = w;
        }
      }

      Tape<T> tape;
      auto bound = bind_model(tape, model, true);
      auto fwd = model_forward(tape, bound, ids, B, L);
      std::vector<T> nll;
      VarId loss = cross_entropy_weighted(tape, fwd.logits, targets, weights, &nll);
      tape.backward(loss);
      std::vector<Tensor<T>> grads;
      grads.reserve(bound.params.size());
      for (VarId p : bound.params) grads.push_back(std::move(tape.grad(p)));
      optimizer.step(model, grads);

      for (int64_t b = 0; b < B; ++b) {
        const TokenizedDoc& doc = train_docs[order[start + static_cast<size_t>(b)]];
        double doc_loss = 0.0;
        for (int64_t t = 0; t + 1 < doc.content_len; ++t)
          doc_loss += static_cast<double>(nll[static_cast<size_t>(b * L + t)]);
        doc_loss /= static_cast<double>(doc.content_len - 1);
        losses.add(doc.subset, doc.is_definition, doc_loss);
      }
    }

    for (const auto& [key, sum_n] : losses.sums) {
      report.rows.push_back({spec.name, epoch, subset_name(key.first), "all",
                             key.second ? "train_loss_def" : "train_loss_qa",
                             sum_n.first / static_cast<double>(sum_n.second), sum_n.second});
    }

    if (spec.eval_every_epoch || epoch == spec.epochs) {
      std::map<forge::SubsetId, std::pair<int64_t, int64_t>> subset_qa_totals;
      for (const auto& set : eval_sets) {
        const bool capture = final_predictions != nullptr && epoch == spec.epochs;
        std::vector<Prediction> preds;
        double em = eval_subset(model, vocab, set, capture ? &preds : nullptr);
        report.rows.push_back({spec.name, epoch, subset_name(set.subset), set.family, "em", em,
                               static_cast<int64_t>(set.items.size())});
        if (set.family.rfind("attr_", 0) != 0) {
          auto& [corr, tot] = subset_qa_totals[set.subset];
          corr += static_cast<int64_t>(
              std::llround(em * static_cast<double>(set.items.size())));
          tot += static_cast<int64_t>(set.items.size());
        }
        if (capture)
          (*final_predictions)[spec.name + "_" + subset_name(set.subset) + "_" + set.family] =
              std::move(preds);
      }
      for (const auto& [subset, corr_tot] : subset_qa_totals) {
        report.rows.push_back({spec.name, epoch, subset_name(subset), "all", "em",
                               static_cast<double>(corr_tot.first) /
                                   static_cast<double>(corr_tot.second),
                               corr_tot.second});
      }
    }
    if (after_epoch) after_epoch(epoch);
  }
  return report;
}

/// Tokenizes a bundle's training documents for one stage.
inline std::vector<TokenizedDoc> encode_stage_train_docs(const forge::DatasetBundle& bundle,
                                                         const Vocab& vocab, int max_len,
                                                         forge::Stage stage) {
  std::set<std::string> tag_surfaces;
  for (const auto& t : bundle.tags) tag_surfaces.insert(t.surface);
  std::vector<TokenizedDoc> out;
  for (const auto& d : bundle.docs)
    if (d.split == forge::Split::train && d.stage == stage)
      out.push_back(encode_doc(vocab, d, max_len, tag_surfaces));
  return out;
}

struct TwoStageResult {
  EvalReport stage1, stage2;
  std::map<std::string, std::vector<Prediction>> predictions;  // final epoch of each stage
};

/// First trains on the X1 documents, then continues from the resulting
/// weights on the X2 documents with a fresh optimizer state. X2 training
/// must contain definitions only; evaluation covers the same eval sets in
/// both stages.
template <typename T>
TwoStageResult run_two_stage(ModelState<T>& model, const OptimConfig& opt_config,
                             const forge::DatasetBundle& bundle, const Vocab& vocab,
                             StageSpec stage1, StageSpec stage2,
                             const std::vector<EvalSet>& eval_sets,
                             const std::function<void(const std::string&, int)>& after_epoch =
                                 nullptr) {
  const int max_len = model.config.max_context_length;
  auto x1_docs = encode_stage_train_docs(bundle, vocab, max_len, forge::Stage::x1);
  auto x2_docs = encode_stage_train_docs(bundle, vocab, max_len, forge::Stage::x2);
  check(!x1_docs.empty(), "run_two_stage: bundle has no X1 training documents");
  check(!x2_docs.empty(), "run_two_stage: bundle has no X2 training documents");
  for (const auto& d : x2_docs)
    check(d.is_definition, "run_two_stage: stage 2 must train on definitions only");

  TwoStageResult result;
  stage1.name = "stage1";
  stage2.name = "stage2";
  {
    Optimizer<T> opt(opt_config, model);
    result.stage1 = run_stage(model, opt, x1_docs, stage1, eval_sets, vocab, &result.predictions,
                              after_epoch ? std::function<void(int)>([&](int e) {
                                after_epoch("stage1", e);
                              })
                                          : std::function<void(int)>());
  }
  {
    Optimizer<T> opt(opt_config, model);  // fresh accumulators for the new distribution
    result.stage2 = run_stage(model, opt, x2_docs, stage2, eval_sets, vocab, &result.predictions,
                              after_epoch ? std::function<void(int)>([&](int e) {
                                after_epoch("stage2", e);
                              })
                                          : std::function<void(int)>());
  }
  return result;
}

/// Single-stage training over the union of both stages' train documents.
template <typename T>
TwoStageResult run_joint(ModelState<T>& model, const OptimConfig& opt_config,
                         const forge::DatasetBundle& bundle, const Vocab& vocab, StageSpec spec,
                         const std::vector<EvalSet>& eval_sets) {
  const int max_len = model.config.max_context_length;
  auto docs = encode_stage_train_docs(bundle, vocab, max_len, forge::Stage::x1);
  auto x2 = encode_stage_train_docs(bundle, vocab, max_len, forge::Stage::x2);
  docs.insert(docs.end(), x2.begin(), x2.end());
  check(!docs.empty(), "run_joint: bundle has no training documents");
  TwoStageResult result;
  spec.name = "joint";
  Optimizer<T> opt(opt_config, model);
  result.stage1 = run_stage(model, opt, docs, spec, eval_sets, vocab, &result.predictions);
  return result;
}

/// Joint runs at several batch sizes, each trained to convergence: stop when
/// the epoch-mean train loss improves by less than 1e-4 over a 5-epoch
/// window, with a hard cap of `max_epochs`.
template <typename T>
std::vector<std::pair<int, EvalReport>> batch_size_sweep(
    const ModelConfig& model_config, uint64_t model_seed, const OptimConfig& opt_config,
    const forge::DatasetBundle& bundle, const Vocab& vocab, const std::vector<int>& sizes,
    const std::vector<EvalSet>& eval_sets, uint64_t shuffle_seed, int max_epochs = 300) {
  std::vector<std::pair<int, EvalReport>> out;
  for (int size : sizes) {
    auto model = init_model<T>(model_config, model_seed);
    const int max_len = model.config.max_context_length;
    auto docs = encode_stage_train_docs(bundle, vocab, max_len, forge::Stage::x1);
    auto x2 = encode_stage_train_docs(bundle, vocab, max_len, forge::Stage::x2);
    docs.insert(docs.end(), x2.begin(), x2.end());
    check(size >= 1 && size <= static_cast<int>(docs.size()),
          "batch_size_sweep: batch size " + std::to_string(size) + " exceeds corpus size " +
              std::to_string(docs.size()));
    Optimizer<T> opt(opt_config, model);
    EvalReport all;
    std::vector<double> recent;
    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
      StageSpec one;
      one.stage = forge::Stage::x1;
      one.name = "joint_bs" + std::to_string(size);
      one.epochs = 1;
      one.batch_size = size;
      one.shuffle_seed = mix_seed(shuffle_seed, static_cast<uint64_t>(epoch));
      one.eval_every_epoch = true;
      EvalReport r = run_stage(model, opt, docs, one, eval_sets, vocab);
      double train_loss = 0.0;
      int64_t n = 0;
      for (auto& row : r.rows) {
        row.epoch = epoch;
        if (row.metric.rfind("train_loss", 0) == 0) {
          train_loss += row.value * static_cast<double>(row.n);
          n += row.n;
        }
      }
      all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
      train_loss /= static_cast<double>(n);
      recent.push_back(train_loss);
      if (recent.size() >= 6) {
        double prev = recent[recent.size() - 6];
        if (prev - train_loss < 1e-4) break;
      }
    }
    out.emplace_back(size, std::move(all));
  }
  return out;
}

}  // namespace iml
