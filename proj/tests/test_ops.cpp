#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "iml/ops.hpp"
#include "iml/rng.hpp"
#include "fd.hpp"

using namespace iml;

namespace {

// Builds a scalar loss from an op applied to leaf inputs, returns the
// analytic gradient of the chosen input, and an fd-compatible forward.
struct OpCheck {
  std::vector<Tensor<double>> inputs;
  std::function<VarId(Tape<double>&, const std::vector<VarId>&)> build;
  std::vector<double> loss_weights;

  double forward_at(size_t which, const Tensor<double>& replaced) const {
    Tape<double> tape;
    std::vector<VarId> ids;
    for (size_t i = 0; i < inputs.size(); ++i)
      ids.push_back(tape.leaf(i == which ? replaced : inputs[i], false));
    VarId out = build(tape, ids);
    double acc = 0.0;
    const Tensor<double>& v = tape.val(out);
    for (int64_t i = 0; i < v.size(); ++i) acc += v[i] * loss_weights[static_cast<size_t>(i)];
    return acc;
  }

  // Gradient of the weighted-sum loss w.r.t. input `which`.
  Tensor<double> analytic(size_t which) const {
    Tape<double> tape;
    tape.check_finite = true;
    std::vector<VarId> ids;
    for (const auto& in : inputs) ids.push_back(tape.leaf(in, true));
    VarId out = build(tape, ids);
    VarId loss = weighted_sum(tape, out, loss_weights);
    tape.backward(loss);
    return tape.grad(ids[which]);
  }

  void check_all(double tol = 1e-4) {
    for (size_t w = 0; w < inputs.size(); ++w) {
      Tensor<double> grad = analytic(w);
      Tensor<double> x = inputs[w];
      double err = fd::max_rel_error(
          x, grad, [&](const Tensor<double>& rep) { return forward_at(w, rep); });
      INFO("input " << w);
      CHECK(err < tol);
    }
  }
};

OpCheck make_check(std::vector<Tensor<double>> inputs,
                   std::function<VarId(Tape<double>&, const std::vector<VarId>&)> build,
                   Rng& rng) {
  OpCheck c{std::move(inputs), std::move(build), {}};
  Tape<double> probe;
  std::vector<VarId> ids;
  for (const auto& in : c.inputs) ids.push_back(probe.leaf(in, false));
  VarId out = c.build(probe, ids);
  c.loss_weights = fd::random_weights(probe.val(out).size(), rng);
  return c;
}

}  // namespace

TEST_CASE("add gradients match finite differences") {
  Rng rng(11);
  auto c = make_check({fd::random_tensor({3, 4}, rng), fd::random_tensor({3, 4}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return add(t, in[0], in[1]);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("add rejects mismatched shapes naming the op") {
  Tape<double> t;
  VarId a = t.leaf(Tensor<double>({2, 3}), false);
  VarId b = t.leaf(Tensor<double>({3, 2}), false);
  CHECK_THROWS_WITH(add(t, a, b), Catch::Matchers::ContainsSubstring("add"));
}

TEST_CASE("add_rowvec gradients match finite differences") {
  Rng rng(12);
  auto c = make_check({fd::random_tensor({5, 3}, rng), fd::random_tensor({3}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return add_rowvec(t, in[0], in[1]);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("scale gradients match finite differences") {
  Rng rng(13);
  auto c = make_check({fd::random_tensor({4, 2}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return scale(t, in[0], 2.75);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(14);
  auto c = make_check({fd::random_tensor({4, 3}, rng), fd::random_tensor({3, 5}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return matmul(t, in[0], in[1]);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("matmul shape mismatch error names op and shapes") {
  Tape<double> t;
  VarId a = t.leaf(Tensor<double>({2, 3}), false);
  VarId b = t.leaf(Tensor<double>({2, 3}), false);
  CHECK_THROWS_WITH(matmul(t, a, b), Catch::Matchers::ContainsSubstring("matmul") &&
                                         Catch::Matchers::ContainsSubstring("(2,3)"));
}

TEST_CASE("embedding_rows gradients match finite differences") {
  Rng rng(15);
  auto c = make_check({fd::random_tensor({6, 4}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return embedding_rows(t, in[0], {0, 3, 3, 5, 1});
                      },
                      rng);
  c.check_all();
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(16);
  Tensor<double> x = fd::random_tensor({7, 9}, rng, 3.0);
  Tape<double> t;
  VarId y = softmax_rows(t, t.leaf(x, false));
  for (int64_t i = 0; i < 7; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 9; ++j) s += t.val(y).at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("softmax gradients match finite differences") {
  Rng rng(17);
  auto c = make_check({fd::random_tensor({3, 6}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return softmax_rows(t, in[0]);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("sum of softmax has zero gradient") {
  Rng rng(18);
  Tensor<double> x = fd::random_tensor({2, 5}, rng);
  Tape<double> t;
  VarId xv = t.leaf(x, true);
  VarId y = softmax_rows(t, xv);
  VarId loss = weighted_sum(t, y, std::vector<double>(10, 1.0));
  t.backward(loss);
  for (int64_t i = 0; i < 10; ++i) CHECK(std::abs(t.grad(xv)[i]) < 1e-12);
}

TEST_CASE("causal_mask zeroes future attention after softmax") {
  Rng rng(19);
  Tensor<double> x = fd::random_tensor({4, 4}, rng);
  Tape<double> t;
  VarId y = softmax_rows(t, causal_mask(t, t.leaf(x, false)));
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = i + 1; j < 4; ++j) CHECK(t.val(y).at(i, j) == 0.0);
}

TEST_CASE("causal_mask gradients match finite differences") {
  Rng rng(20);
  // Compose with softmax so masked entries feed a real loss path.
  auto c = make_check({fd::random_tensor({4, 4}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return softmax_rows(t, causal_mask(t, in[0]));
                      },
                      rng);
  c.check_all();
}

TEST_CASE("layer_norm normalizes rows pre-affine") {
  Rng rng(21);
  Tensor<double> x = fd::random_tensor({5, 16}, rng, 4.0);
  Tensor<double> gamma({16});
  gamma.fill(1.0);
  Tensor<double> beta({16});
  Tape<double> t;
  VarId y = layer_norm(t, t.leaf(x, false), t.leaf(gamma, false), t.leaf(beta, false), 0.0);
  for (int64_t i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < 16; ++j) mean += t.val(y).at(i, j);
    mean /= 16;
    for (int64_t j = 0; j < 16; ++j) var += std::pow(t.val(y).at(i, j) - mean, 2);
    var /= 16;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(22);
  auto c = make_check({fd::random_tensor({4, 8}, rng), fd::random_tensor({8}, rng),
                       fd::random_tensor({8}, rng)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return layer_norm(t, in[0], in[1], in[2], 1e-5);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("gelu gradients match finite differences") {
  Rng rng(23);
  auto c = make_check({fd::random_tensor({3, 7}, rng, 2.0)},
                      [](Tape<double>& t, const std::vector<VarId>& in) {
                        return gelu(t, in[0]);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("cross entropy with all-false mask gives zero loss and gradients") {
  Rng rng(24);
  Tensor<double> logits = fd::random_tensor({4, 5}, rng);
  Tape<double> t;
  VarId lv = t.leaf(logits, true);
  VarId loss = cross_entropy_masked(t, lv, {1, 2, 3, 4}, {0, 0, 0, 0});
  CHECK(t.val(loss)[0] == 0.0);
  t.backward(loss);
  for (int64_t i = 0; i < logits.size(); ++i) CHECK(t.grad(lv)[i] == 0.0);
}

TEST_CASE("cross entropy gradients match finite differences") {
  Rng rng(25);
  std::vector<int32_t> targets{2, 0, 4, 1};
  std::vector<uint8_t> mask{1, 1, 0, 1};
  auto c = make_check({fd::random_tensor({4, 5}, rng)},
                      [targets, mask](Tape<double>& t, const std::vector<VarId>& in) {
                        return cross_entropy_masked(t, in[0], targets, mask);
                      },
                      rng);
  c.check_all();
}

TEST_CASE("weighted cross entropy matches hand-computed value") {
  // Two rows, two classes, logits chosen so softmax is easy to evaluate.
  Tensor<double> logits({2, 2}, {std::log(3.0), 0.0, 0.0, std::log(1.0)});
  Tape<double> t;
  VarId loss = cross_entropy_weighted(t, t.leaf(logits, false), {0, 1},
                                      std::vector<double>{0.5, 0.5});
  // Row 0: p(class 0) = 3/4 -> nll = log(4/3). Row 1: p = 1/2 -> nll = log 2.
  double expect = 0.5 * std::log(4.0 / 3.0) + 0.5 * std::log(2.0);
  CHECK(std::abs(t.val(loss)[0] - expect) < 1e-12);
}

TEST_CASE("causal self attention gradients match finite differences") {
  Rng rng(26);
  const int64_t B = 2, L = 4, H = 2, d = 8;
  for (bool rotary : {false, true}) {
    auto c = make_check({fd::random_tensor({B * L, 3 * d}, rng)},
                        [=](Tape<double>& t, const std::vector<VarId>& in) {
                          return causal_self_attention(t, in[0], B, L, H, rotary);
                        },
                        rng);
    INFO("rotary " << rotary);
    c.check_all();
  }
}

TEST_CASE("fused attention matches unfused primitive composition") {
  // Single head: the fused op must equal matmul + causal_mask + softmax +
  // matmul built from the primitive ops.
  Rng rng(27);
  const int64_t L = 5, d = 6;
  Tensor<double> qkv = fd::random_tensor({L, 3 * d}, rng);
  Tape<double> t;
  VarId fused = causal_self_attention(t, t.leaf(qkv, false), 1, L, 1, false);

  Tensor<double> q({L, d}), k({L, d}), v({L, d});
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < d; ++j) {
      q.at(i, j) = qkv.at(i, j);
      k.at(i, j) = qkv.at(i, d + j);
      v.at(i, j) = qkv.at(i, 2 * d + j);
    }
  Tape<double> t2;
  VarId qv = t2.leaf(q, false), kvv = t2.leaf(k, false), vv = t2.leaf(v, false);
  // scores = q k^T / sqrt(d)
  Tensor<double> kT({d, L});
  for (int64_t i = 0; i < L; ++i)
    for (int64_t j = 0; j < d; ++j) kT.at(j, i) = k.at(i, j);
  VarId scores = scale(t2, matmul(t2, qv, t2.leaf(kT, false)), 1.0 / std::sqrt(double(d)));
  VarId probs = softmax_rows(t2, causal_mask(t2, scores));
  VarId out = matmul(t2, probs, vv);
  (void)kvv;

  for (int64_t i = 0; i < L * d; ++i)
    CHECK(std::abs(t.val(fused)[i] - t2.val(out)[i]) < 1e-10);
}

TEST_CASE("three layer MLP gradients match finite differences") {
  Rng rng(28);
  auto c = make_check(
      {fd::random_tensor({3, 4}, rng), fd::random_tensor({4, 8}, rng),
       fd::random_tensor({8}, rng), fd::random_tensor({8, 8}, rng), fd::random_tensor({8}, rng),
       fd::random_tensor({8, 2}, rng), fd::random_tensor({2}, rng)},
      [](Tape<double>& t, const std::vector<VarId>& in) {
        VarId h1 = gelu(t, add_rowvec(t, matmul(t, in[0], in[1]), in[2]));
        VarId h2 = gelu(t, add_rowvec(t, matmul(t, h1, in[3]), in[4]));
        return add_rowvec(t, matmul(t, h2, in[5]), in[6]);
      },
      rng);
  c.check_all();
}

TEST_CASE("backward of x squared") {
  Tape<double> t;
  VarId x = t.leaf(Tensor<double>({1, 1}, {3.0}), true);
  VarId y = matmul(t, x, x);
  t.backward(y);
  CHECK(t.grad(x)[0] == 6.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tape<double> t;
  VarId x = t.leaf(Tensor<double>({2, 2}), true);
  CHECK_THROWS_WITH(t.backward(x), Catch::Matchers::ContainsSubstring("scalar"));
}

TEST_CASE("concat_flat concatenates in order") {
  Tensor<double> a({3}, {1, 2, 3});
  Tensor<double> b({2, 2}, {4, 5, 6, 7});
  auto flat = concat_flat<double>({&a, &b});
  CHECK(flat == std::vector<double>{1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("identical inputs give bit-identical forward and backward") {
  Rng rng(29);
  Tensor<double> x = fd::random_tensor({6, 6}, rng);
  Tensor<double> w = fd::random_tensor({6, 6}, rng);
  auto run = [&]() {
    Tape<double> t;
    VarId xv = t.leaf(x, true);
    VarId wv = t.leaf(w, true);
    VarId y = softmax_rows(t, causal_mask(t, matmul(t, xv, wv)));
    VarId loss = weighted_sum(t, y, std::vector<double>(36, 0.5));
    t.backward(loss);
    std::vector<double> out{t.val(loss)[0]};
    for (int64_t i = 0; i < 36; ++i) out.push_back(t.grad(xv)[i]);
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("non-finite forward value raises a diagnostic naming the op") {
  Tape<double> t;
  t.check_finite = true;
  Tensor<double> x({1, 2}, {1e308, 1e308});
  VarId xv = t.leaf(x, false);
  CHECK_THROWS_WITH(add(t, xv, xv), Catch::Matchers::ContainsSubstring("add"));
}
