#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "iml/forge/types.hpp"
#include "iml/model.hpp"
#include "iml/rng.hpp"
#include "iml/tensor.hpp"
#include "iml/tokenizer.hpp"

namespace iml {

enum class AlignMetric { inner_product, cosine, squared_l2 };

inline std::string align_metric_name(AlignMetric m) {
  switch (m) {
    case AlignMetric::inner_product: return "inner_product";
    case AlignMetric::cosine: return "cosine";
    case AlignMetric::squared_l2: return "squared_l2";
  }
  throw error("bad alignment metric");
}

inline AlignMetric align_metric_from(const std::string& s) {
  for (auto m : {AlignMetric::inner_product, AlignMetric::cosine, AlignMetric::squared_l2})
    if (align_metric_name(m) == s) return m;
  throw error("unknown alignment metric '" + s + "'");
}

inline double align_value(AlignMetric m, const std::vector<double>& a,
                          const std::vector<double>& b) {
  check(a.size() == b.size(), "alignment: gradient length mismatch");
  double inner = 0.0, na = 0.0, nb = 0.0, dist = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    inner += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
    double d = a[i] - b[i];
    dist += d * d;
  }
  switch (m) {
    case AlignMetric::inner_product: return inner;
    case AlignMetric::cosine: return inner / (std::sqrt(na) * std::sqrt(nb));
    case AlignMetric::squared_l2: return dist;
  }
  throw error("bad alignment metric");
}

/// Mean pairwise metric between each definition's document gradient and the
/// gradients of its k held-out questions: (1/n) sum_i (1/k) sum_j
/// rho(grad(Def_i), grad(QA_ij)).
struct AlignmentReport {
  forge::SubsetId subset = forge::SubsetId::d5_cons;
  AlignMetric metric = AlignMetric::cosine;
  int64_t n = 0;  // definitions
  int64_t k = 0;  // questions per definition
  double mean = 0.0;
  std::vector<double> raw;  // n*k pair values, definition-major order
  int epoch = 0;
};

/// Computes the requested metrics in one streaming pass: at any moment only
/// one definition gradient and one question gradient are resident.
/// X2 subsets use their held-out test questions, which the model never
/// trained on.
template <typename T>
std::vector<AlignmentReport> alignment(const ModelState<T>& model, const Vocab& vocab,
                                       const forge::DatasetBundle& bundle, forge::SubsetId subset,
                                       const std::vector<AlignMetric>& metrics, int epoch = 0) {
  std::set<std::string> tag_surfaces;
  for (const auto& t : bundle.tags) tag_surfaces.insert(t.surface);
  const int max_len = model.config.max_context_length;

  std::map<int, const forge::Document*> defs;
  std::map<int, std::vector<const forge::Document*>> questions;
  for (const auto& d : bundle.docs) {
    if (d.subset != subset) continue;
    if (d.is_definition()) {
      defs[d.entity_id] = &d;
    } else if (d.split != forge::Split::train && d.question_kind.rfind("attr_", 0) != 0) {
      questions[d.entity_id].push_back(&d);
    }
  }
  check(!defs.empty(), "alignment: subset " + subset_name(subset) + " has no definitions");
  int64_t k = -1;
  for (const auto& [id, def] : defs) {
    auto it = questions.find(id);
    check(it != questions.end() && !it->second.empty(),
          "alignment: definition entity " + std::to_string(id) + " has no held-out questions");
    if (k < 0) k = static_cast<int64_t>(it->second.size());
    check(k == static_cast<int64_t>(it->second.size()),
          "alignment: question count varies across definitions (expected fixed k)");
  }

  auto doc_gradient = [&](const forge::Document& doc, bool with_answer) {
    forge::Document full = doc;
    if (with_answer) {
      check(!doc.gold_answers.empty(), "alignment: eval question lacks gold answers");
      full.text = doc.text + " " + doc.gold_answers[0];
      full.gold_answers.clear();
    }
    TokenizedDoc enc = encode_doc(vocab, full, max_len, tag_surfaces);
    std::vector<int32_t> ids(enc.ids.begin(), enc.ids.begin() + enc.content_len);
    std::vector<uint8_t> mask(static_cast<size_t>(enc.content_len), 1);
    return doc_grad(model, ids, mask);
  };

  std::vector<AlignmentReport> reports;
  for (AlignMetric m : metrics)
    reports.push_back({subset, m, static_cast<int64_t>(defs.size()), k, 0.0, {}, epoch});

  for (const auto& [id, def] : defs) {
    auto g_def = doc_gradient(*def, false);
    for (const forge::Document* q : questions.at(id)) {
      auto g_qa = doc_gradient(*q, true);
      for (auto& rep : reports) rep.raw.push_back(align_value(rep.metric, g_def, g_qa));
    }
  }
  for (auto& rep : reports) {
    double mean = 0.0;
    for (size_t i = 0; i < rep.raw.size(); ++i) {
      // definition-major: average over k within a definition, then over n.
      mean += rep.raw[i];
    }
    rep.mean = mean / (static_cast<double>(rep.n) * static_cast<double>(rep.k));
  }
  return reports;
}

/// Per-document L2 gradient norms.
template <typename T>
std::vector<double> grad_norms(const ModelState<T>& model, const Vocab& vocab,
                               const forge::DatasetBundle& bundle,
                               const std::vector<const forge::Document*>& docs) {
  std::set<std::string> tag_surfaces;
  for (const auto& t : bundle.tags) tag_surfaces.insert(t.surface);
  std::vector<double> out;
  for (const forge::Document* d : docs) {
    forge::Document full = *d;
    if (!d->gold_answers.empty() && !d->is_definition()) {
      full.text = d->text + " " + d->gold_answers[0];
      full.gold_answers.clear();
    }
    TokenizedDoc enc = encode_doc(vocab, full, model.config.max_context_length, tag_surfaces);
    std::vector<int32_t> ids(enc.ids.begin(), enc.ids.begin() + enc.content_len);
    std::vector<uint8_t> mask(static_cast<size_t>(enc.content_len), 1);
    auto g = doc_grad(model, ids, mask);
    double acc = 0.0;
    for (double v : g) acc += v * v;
    out.push_back(std::sqrt(acc));
  }
  return out;
}

/// Trace of the gradient covariance, computed two independent ways:
/// the sum of per-column population variances, and the pairwise form
/// (1/(2 m^2)) sum_jk ||G_j - G_k||^2. Both are returned; they must agree.
struct TraceCov {
  double via_variance = 0.0;
  double via_pairwise = 0.0;
};

inline TraceCov trace_cov(const Tensor<double>& g) {
  check(g.rank() == 2 && g.rows() >= 1, "trace_cov: need an m x p matrix with m >= 1");
  const int64_t m = g.rows(), p = g.cols();
  TraceCov out;
  for (int64_t j = 0; j < p; ++j) {
    double mean = 0.0;
    for (int64_t i = 0; i < m; ++i) mean += g.at(i, j);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t i = 0; i < m; ++i) {
      double c = g.at(i, j) - mean;
      var += c * c;
    }
    out.via_variance += var / static_cast<double>(m);
  }
  double pair_sum = 0.0;
  for (int64_t a = 0; a < m; ++a)
    for (int64_t b = 0; b < m; ++b) {
      double d2 = 0.0;
      for (int64_t j = 0; j < p; ++j) {
        double d = g.at(a, j) - g.at(b, j);
        d2 += d * d;
      }
      pair_sum += d2;
    }
  out.via_pairwise = pair_sum / (2.0 * static_cast<double>(m) * static_cast<double>(m));
  double scale = std::max({1e-30, std::abs(out.via_variance), std::abs(out.via_pairwise)});
  check(std::abs(out.via_variance - out.via_pairwise) / scale < 1e-9,
        "trace_cov: the two formulas disagree");
  return out;
}

/// Inputs to the linear probe: one row per question, the activation vector,
/// a binary label, the alias id (for the disjointness check) and the split.
struct ProbeData {
  Tensor<double> features;  // (n, d)
  std::vector<int> labels;  // 0/1
  std::vector<int> alias_ids;
  std::vector<uint8_t> in_test;
};

struct ProbeReport {
  std::string task;
  int layer = 0;
  double train_acc = 0.0;
  double test_acc = 0.0;
  int64_t n_train = 0;
  int64_t n_test = 0;
};

/// Binary logistic regression by full-batch gradient descent with an L2
/// penalty, on features standardized by the train-split statistics.
/// The train and test alias sets must be disjoint and both classes must be
/// present in the train split.
inline ProbeReport train_probe(const ProbeData& data, const std::string& task, int layer,
                               double l2 = 1e-3, int steps = 2000, double lr = 0.1) {
  const int64_t n = data.features.rows(), d = data.features.cols();
  check(static_cast<int64_t>(data.labels.size()) == n &&
            static_cast<int64_t>(data.alias_ids.size()) == n &&
            static_cast<int64_t>(data.in_test.size()) == n,
        "train_probe: field lengths disagree");
  std::set<int> train_aliases, test_aliases;
  std::vector<int64_t> train_idx, test_idx;
  for (int64_t i = 0; i < n; ++i) {
    if (data.in_test[static_cast<size_t>(i)]) {
      test_aliases.insert(data.alias_ids[static_cast<size_t>(i)]);
      test_idx.push_back(i);
    } else {
      train_aliases.insert(data.alias_ids[static_cast<size_t>(i)]);
      train_idx.push_back(i);
    }
  }
  for (int a : test_aliases)
    check(!train_aliases.count(a),
          "train_probe: alias " + std::to_string(a) + " appears in both splits");
  check(!train_idx.empty() && !test_idx.empty(), "train_probe: both splits must be nonempty");
  bool has0 = false, has1 = false;
  for (int64_t i : train_idx) (data.labels[static_cast<size_t>(i)] ? has1 : has0) = true;
  check(has0 && has1, "train_probe: a class is absent from the train split");

  // Standardize with train statistics.
  std::vector<double> mean(static_cast<size_t>(d), 0.0), inv_std(static_cast<size_t>(d), 0.0);
  for (int64_t i : train_idx)
    for (int64_t j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += data.features.at(i, j);
  for (auto& v : mean) v /= static_cast<double>(train_idx.size());
  for (int64_t i : train_idx)
    for (int64_t j = 0; j < d; ++j) {
      double c = data.features.at(i, j) - mean[static_cast<size_t>(j)];
      inv_std[static_cast<size_t>(j)] += c * c;
    }
  for (auto& v : inv_std) v = 1.0 / std::sqrt(v / static_cast<double>(train_idx.size()) + 1e-12);

  auto feature = [&](int64_t i, int64_t j) {
    return (data.features.at(i, j) - mean[static_cast<size_t>(j)]) * inv_std[static_cast<size_t>(j)];
  };

  std::vector<double> w(static_cast<size_t>(d), 0.0);
  double bias = 0.0;
  std::vector<double> grad_w(static_cast<size_t>(d));
  const double inv_m = 1.0 / static_cast<double>(train_idx.size());
  for (int step = 0; step < steps; ++step) {
    std::fill(grad_w.begin(), grad_w.end(), 0.0);
    double grad_b = 0.0;
    for (int64_t i : train_idx) {
      double z = bias;
      for (int64_t j = 0; j < d; ++j) z += w[static_cast<size_t>(j)] * feature(i, j);
      double p = 1.0 / (1.0 + std::exp(-z));
      double delta = p - static_cast<double>(data.labels[static_cast<size_t>(i)]);
      grad_b += delta;
      for (int64_t j = 0; j < d; ++j) grad_w[static_cast<size_t>(j)] += delta * feature(i, j);
    }
    for (int64_t j = 0; j < d; ++j)
      w[static_cast<size_t>(j)] -=
          lr * (grad_w[static_cast<size_t>(j)] * inv_m + l2 * w[static_cast<size_t>(j)]);
    bias -= lr * grad_b * inv_m;
  }

  auto accuracy = [&](const std::vector<int64_t>& idx) {
    int64_t correct = 0;
    for (int64_t i : idx) {
      double z = bias;
      for (int64_t j = 0; j < d; ++j) z += w[static_cast<size_t>(j)] * feature(i, j);
      int pred = z > 0.0 ? 1 : 0;
      if (pred == data.labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };

  ProbeReport rep;
  rep.task = task;
  rep.layer = layer;
  rep.train_acc = accuracy(train_idx);
  rep.test_acc = accuracy(test_idx);
  rep.n_train = static_cast<int64_t>(train_idx.size());
  rep.n_test = static_cast<int64_t>(test_idx.size());
  return rep;
}

/// Mean, normal-approximation 95% confidence interval, and a paired
/// one-sided sign-flip permutation test for "mean(diffs) > 0": exact
/// enumeration up to 20 seeds, otherwise 1e5 seeded resamples.
struct SeedStats {
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, 1.96 * sem
  int64_t n = 0;
};

inline SeedStats seed_stats(const std::vector<double>& values) {
  check(values.size() >= 1, "seed_stats: no values");
  SeedStats s;
  s.n = static_cast<int64_t>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n >= 2) {
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    var /= static_cast<double>(s.n - 1);
    s.ci95 = 1.96 * std::sqrt(var / static_cast<double>(s.n));
  }
  return s;
}

inline double paired_permutation_p(const std::vector<double>& diffs, uint64_t seed = 12345) {
  const size_t n = diffs.size();
  check(n >= 2, "paired_permutation_p: need at least 2 seeds");
  double observed = 0.0;
  for (double d : diffs) observed += d;
  observed /= static_cast<double>(n);

  auto flipped_mean = [&](uint64_t bits) {
    double m = 0.0;
    for (size_t i = 0; i < n; ++i) m += (bits >> i) & 1 ? -diffs[i] : diffs[i];
    return m / static_cast<double>(n);
  };

  if (n <= 20) {
    const uint64_t total = 1ULL << n;
    uint64_t at_least = 0;
    for (uint64_t bits = 0; bits < total; ++bits)
      if (flipped_mean(bits) >= observed) ++at_least;
    return static_cast<double>(at_least) / static_cast<double>(total);
  }
  Rng rng(seed);
  const int resamples = 100000;
  int at_least = 0;
  for (int r = 0; r < resamples; ++r) {
    uint64_t bits = rng.next_u64();
    if (n > 64) throw error("paired_permutation_p: too many seeds");
    if (flipped_mean(bits & ((n == 64) ? ~0ULL : ((1ULL << n) - 1))) >= observed) ++at_least;
  }
  return static_cast<double>(at_least) / static_cast<double>(resamples);
}

}  // namespace iml
