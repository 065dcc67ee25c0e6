#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "iml/analysis.hpp"
#include "iml/forge/bundle.hpp"

using namespace iml;

TEST_CASE("trace_cov: single column {1,2,3} gives exactly 2/3 both ways") {
  Tensor<double> g({3, 1}, {1.0, 2.0, 3.0});
  TraceCov t = trace_cov(g);
  CHECK(t.via_variance == 2.0 / 3.0);
  CHECK(t.via_pairwise == 2.0 / 3.0);
}

TEST_CASE("trace_cov: identical rows and single-row matrices give zero") {
  Tensor<double> same({4, 3}, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  TraceCov t = trace_cov(same);
  CHECK(t.via_variance == 0.0);
  CHECK(t.via_pairwise == 0.0);
  Tensor<double> one({1, 5}, {9, 8, 7, 6, 5});
  TraceCov t1 = trace_cov(one);
  CHECK(t1.via_variance == 0.0);
  CHECK(t1.via_pairwise == 0.0);
}

TEST_CASE("trace_cov: the two formulas agree on random matrices") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    int m = 2 + (int)rng.below(20);
    int p = 1 + (int)rng.below(40);
    Tensor<double> g({m, p});
    for (int64_t i = 0; i < g.size(); ++i) g[i] = rng.normal() * 3.0;
    TraceCov t = trace_cov(g);
    double scale = std::max(std::abs(t.via_variance), std::abs(t.via_pairwise));
    CHECK(std::abs(t.via_variance - t.via_pairwise) / scale < 1e-10);
  }
}

TEST_CASE("alignment metric values match hand computations") {
  std::vector<double> a{1.0, 1.0}, b{1.0, 0.0};
  CHECK(std::abs(align_value(AlignMetric::cosine, a, b) - 0.70710678) < 1e-8);
  CHECK(std::abs(align_value(AlignMetric::cosine, a, a) - 1.0) < 1e-12);
  std::vector<double> e1{1.0, 0.0}, e2{0.0, 2.0};
  CHECK(align_value(AlignMetric::inner_product, e1, e2) == 0.0);
  // squared L2 identity against the other two metrics
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(16), y(16);
    double nx = 0, ny = 0;
    for (size_t i = 0; i < 16; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    double lhs = align_value(AlignMetric::squared_l2, x, y);
    double rhs = nx + ny - 2.0 * align_value(AlignMetric::inner_product, x, y);
    CHECK(std::abs(lhs - rhs) / std::max(1.0, std::abs(lhs)) < 1e-12);
  }
}

TEST_CASE("alignment streams definition/question gradients over a bundle") {
  forge::ForgeSpec fs;
  fs.source = "set_inclusion";
  fs.seed = 21;
  fs.set_inclusion.variable_count = 30;
  auto bundle = forge::build_bundle(fs);
  Vocab vocab = build_set_inclusion_vocab(bundle);
  ModelConfig mc;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_model = 16;
  mc.d_ff = 32;
  mc.vocab_size = vocab.size();
  mc.max_context_length = 16;
  auto model = init_model<double>(mc, 5);

  auto reports = alignment(model, vocab, bundle, forge::SubsetId::d5_cons,
                           {AlignMetric::inner_product, AlignMetric::cosine,
                            AlignMetric::squared_l2},
                           7);
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) {
    CHECK(r.n == 3);  // 10% of 30 variables
    CHECK(r.k == 6);  // test questions per X2 variable
    CHECK(r.raw.size() == (size_t)(r.n * r.k));
    CHECK(r.epoch == 7);
    // the mean is the double average of the raw values
    double mean = 0;
    for (double v : r.raw) mean += v;
    mean /= (double)r.raw.size();
    CHECK(std::abs(mean - r.mean) < 1e-12);
  }
  // cosine values are in [-1, 1]
  for (double v : reports[1].raw) CHECK((v >= -1.0 && v <= 1.0));
}

TEST_CASE("grad_norms matches an independent recomputation") {
  forge::ForgeSpec fs;
  fs.source = "set_inclusion";
  fs.seed = 23;
  fs.set_inclusion.variable_count = 20;
  auto bundle = forge::build_bundle(fs);
  Vocab vocab = build_set_inclusion_vocab(bundle);
  ModelConfig mc;
  mc.n_layers = 1;
  mc.n_heads = 2;
  mc.d_model = 16;
  mc.d_ff = 32;
  mc.vocab_size = vocab.size();
  mc.max_context_length = 16;
  auto model = init_model<double>(mc, 6);

  std::vector<const forge::Document*> defs;
  for (const auto& d : bundle.docs)
    if (d.is_definition() && defs.size() < 4) defs.push_back(&d);
  auto norms = grad_norms(model, vocab, bundle, defs);
  REQUIRE(norms.size() == 4);
  std::set<std::string> tags;
  for (const auto& t : bundle.tags) tags.insert(t.surface);
  for (size_t i = 0; i < defs.size(); ++i) {
    TokenizedDoc enc = encode_doc(vocab, *defs[i], 16, tags);
    std::vector<int32_t> ids(enc.ids.begin(), enc.ids.begin() + enc.content_len);
    auto g = doc_grad(model, ids, std::vector<uint8_t>((size_t)enc.content_len, 1));
    double acc = 0;
    for (double v : g) acc += v * v;
    CHECK(std::abs(norms[i] - std::sqrt(acc)) < 1e-12);
    CHECK(norms[i] > 0.0);
  }
}

TEST_CASE("probe separates linearly separable activations") {
  Rng rng(41);
  const int n = 400, d = 8;
  ProbeData data;
  data.features = Tensor<double>({n, d});
  for (int i = 0; i < n; ++i) {
    int label = i % 2;
    data.labels.push_back(label);
    data.alias_ids.push_back(i);
    data.in_test.push_back(i >= n / 2 ? 1 : 0);
    for (int j = 0; j < d; ++j)
      data.features.at(i, j) = (label ? 1.0 : -1.0) * (j == 0 ? 2.0 : 0.3) + rng.normal() * 0.05;
  }
  ProbeReport rep = train_probe(data, "tag_prediction", 1);
  CHECK(rep.test_acc >= 0.99);
  CHECK(rep.train_acc >= 0.99);
  CHECK(rep.n_train == 200);
  CHECK(rep.n_test == 200);
}

TEST_CASE("probe stays near chance on label-permuted data") {
  Rng rng(43);
  const int n = 1000, d = 8;
  ProbeData data;
  data.features = Tensor<double>({n, d});
  for (int i = 0; i < n; ++i) {
    data.labels.push_back((int)rng.below(2));  // labels independent of features
    data.alias_ids.push_back(i);
    data.in_test.push_back(i >= n / 2 ? 1 : 0);
    for (int j = 0; j < d; ++j) data.features.at(i, j) = rng.normal();
  }
  ProbeReport rep = train_probe(data, "tag_prediction", 1);
  CHECK(rep.test_acc >= 0.4);
  CHECK(rep.test_acc <= 0.6);
}

TEST_CASE("probe rejects alias overlap and single-class train splits") {
  ProbeData data;
  data.features = Tensor<double>({4, 2}, {1, 0, 0, 1, 1, 1, 0, 0});
  data.labels = {0, 1, 0, 1};
  data.alias_ids = {1, 2, 1, 3};  // alias 1 in both splits
  data.in_test = {0, 0, 1, 1};
  CHECK_THROWS_WITH(train_probe(data, "t", 0), Catch::Matchers::ContainsSubstring("both splits"));
  data.alias_ids = {1, 2, 3, 4};
  data.labels = {0, 0, 1, 1};  // train split has only class 0
  CHECK_THROWS_WITH(train_probe(data, "t", 0), Catch::Matchers::ContainsSubstring("absent"));
}

TEST_CASE("seed_stats: constant scores give zero-width intervals") {
  SeedStats s = seed_stats({0.7, 0.7, 0.7, 0.7});
  CHECK(s.mean == 0.7);
  CHECK(s.ci95 == 0.0);
  SeedStats m = seed_stats({0.4, 0.6});
  CHECK(m.mean == 0.5);
}

TEST_CASE("paired sign-flip test: all-positive differences over 10 seeds give p = 2^-10") {
  std::vector<double> diffs(10, 0.02);
  CHECK(paired_permutation_p(diffs) == std::pow(2.0, -10));
  // flipping one difference negative weakens but keeps significance
  diffs[0] = -0.001;
  double p = paired_permutation_p(diffs);
  CHECK(p > std::pow(2.0, -10));
  CHECK(p < 0.05);
}
