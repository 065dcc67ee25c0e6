#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "iml/autodiff.hpp"
#include "iml/tensor.hpp"

namespace iml {

// Differentiable operation set: the constituents of a decoder-only
// transformer plus the reductions the analysis layer needs. Every op has a
// hand-written backward rule; the finite-difference suite in the tests
// checks each rule in 64-bit. All reductions run in fixed index order.
//
// Node ids are sequential, so an op can name its own output id before
// pushing the node and capture it in the backward closure.

namespace ops_detail {

template <typename T>
inline bool any_grad(Tape<T>& t, std::initializer_list<VarId> ins) {
  for (VarId v : ins)
    if (t.requires_grad(v)) return true;
  return false;
}

template <typename T>
inline VarId next_id(Tape<T>& t) {
  return VarId{static_cast<int32_t>(t.node_count())};
}

/// In-place rotary position embedding on per-head rows (row index is the
/// position). sign = -1 applies the inverse rotation (used on gradients).
template <typename Mat, typename T>
inline void apply_rotary(Mat& m, int64_t dh, T sign) {
  for (int64_t t = 0; t < m.rows(); ++t) {
    for (int64_t c = 0; c < dh / 2; ++c) {
      double theta = static_cast<double>(t) *
                     std::pow(10000.0, -2.0 * static_cast<double>(c) / static_cast<double>(dh));
      T cs = static_cast<T>(std::cos(theta)), sn = static_cast<T>(std::sin(theta)) * sign;
      T a = m(t, c), b = m(t, c + dh / 2);
      m(t, c) = a * cs - b * sn;
      m(t, c + dh / 2) = b * cs + a * sn;
    }
  }
}

}  // namespace ops_detail

/// Elementwise sum of two same-shape tensors.
template <typename T>
VarId add(Tape<T>& tape, VarId a, VarId b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  check(av.same_shape(bv),
        "add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor<T> out(av.shape());
  out.vec() = av.vec() + bv.vec();
  bool rg = ops_detail::any_grad(tape, {a, b});
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [a, b, out_id](Tape<T>& t) {
      const Tensor<T>& g = t.grad(out_id);
      if (t.requires_grad(a)) t.grad(a).vec() += g.vec();
      if (t.requires_grad(b)) t.grad(b).vec() += g.vec();
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "add");
}

/// (n,d) + broadcast row vector (d): the bias pattern.
template <typename T>
VarId add_rowvec(Tape<T>& tape, VarId x, VarId bias) {
  const Tensor<T>& xv = tape.val(x);
  const Tensor<T>& bv = tape.val(bias);
  check(xv.rank() == 2 && bv.size() == xv.cols(),
        "add_rowvec: shape mismatch " + shape_str(xv.shape()) + " vs " + shape_str(bv.shape()));
  Tensor<T> out(xv.shape());
  out.mat() = xv.mat().rowwise() + bv.vec().transpose();
  bool rg = ops_detail::any_grad(tape, {x, bias});
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [x, bias, out_id](Tape<T>& t) {
      const Tensor<T>& g = t.grad(out_id);
      if (t.requires_grad(x)) t.grad(x).vec() += g.vec();
      if (t.requires_grad(bias)) t.grad(bias).vec() += g.mat().colwise().sum().transpose();
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "add_rowvec");
}

/// Multiply by a compile-time constant scalar.
template <typename T>
VarId scale(Tape<T>& tape, VarId x, T c) {
  Tensor<T> out(tape.val(x).shape());
  out.vec() = tape.val(x).vec() * c;
  bool rg = tape.requires_grad(x);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [x, c, out_id](Tape<T>& t) { t.grad(x).vec() += t.grad(out_id).vec() * c; };
  }
  return tape.push(std::move(out), rg, std::move(fn), "scale");
}

/// C = A (m,k) * B (k,n). The GEMM itself is delegated to Eigen; the
/// single-threaded product has a fixed reduction order, which the
/// determinism guarantees rely on.
template <typename T>
VarId matmul(Tape<T>& tape, VarId a, VarId b) {
  const Tensor<T>& av = tape.val(a);
  const Tensor<T>& bv = tape.val(b);
  check(av.rank() == 2 && bv.rank() == 2 && av.cols() == bv.rows(),
        "matmul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  Tensor<T> out(Shape{av.rows(), bv.cols()});
  out.mat().noalias() = av.mat() * bv.mat();
  bool rg = ops_detail::any_grad(tape, {a, b});
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [a, b, out_id](Tape<T>& t) {
      const Tensor<T>& g = t.grad(out_id);
      if (t.requires_grad(a)) t.grad(a).mat().noalias() += g.mat() * t.val(b).mat().transpose();
      if (t.requires_grad(b)) t.grad(b).mat().noalias() += t.val(a).mat().transpose() * g.mat();
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "matmul");
}

/// Gathers rows of an embedding table: out.row(i) = table.row(ids[i]).
/// Backward scatter-adds in index order i = 0..n-1.
template <typename T>
VarId embedding_rows(Tape<T>& tape, VarId table, std::vector<int32_t> ids) {
  const Tensor<T>& tv = tape.val(table);
  check(tv.rank() == 2, "embedding_rows: table must be rank 2");
  const int64_t vocab = tv.rows();
  for (int32_t id : ids)
    check(id >= 0 && id < vocab, "embedding_rows: id " + std::to_string(id) +
                                     " out of range [0," + std::to_string(vocab) + ")");
  Tensor<T> out(Shape{static_cast<int64_t>(ids.size()), tv.cols()});
  for (size_t i = 0; i < ids.size(); ++i) out.mat().row(static_cast<int64_t>(i)) = tv.mat().row(ids[i]);
  bool rg = tape.requires_grad(table);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    auto ids_ptr = std::make_shared<std::vector<int32_t>>(std::move(ids));
    fn = [table, out_id, ids_ptr](Tape<T>& t) {
      const Tensor<T>& g = t.grad(out_id);
      Tensor<T>& tg = t.grad(table);
      for (size_t i = 0; i < ids_ptr->size(); ++i)
        tg.mat().row((*ids_ptr)[i]) += g.mat().row(static_cast<int64_t>(i));
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "embedding_rows");
}

/// Row-wise softmax with the usual max-shift stabilization.
template <typename T>
VarId softmax_rows(Tape<T>& tape, VarId x) {
  const Tensor<T>& xv = tape.val(x);
  check(xv.rank() == 2, "softmax_rows: input must be rank 2");
  Tensor<T> out(xv.shape());
  const int64_t n = xv.rows(), d = xv.cols();
  for (int64_t i = 0; i < n; ++i) {
    T m = xv.at(i, 0);
    for (int64_t j = 1; j < d; ++j) m = std::max(m, xv.at(i, j));
    T sum{0};
    for (int64_t j = 0; j < d; ++j) {
      T e = std::exp(xv.at(i, j) - m);
      out.at(i, j) = e;
      sum += e;
    }
    for (int64_t j = 0; j < d; ++j) out.at(i, j) /= sum;
  }
  bool rg = tape.requires_grad(x);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [x, out_id](Tape<T>& t) {
      const Tensor<T>& y = t.val(out_id);
      const Tensor<T>& g = t.grad(out_id);
      Tensor<T>& gx = t.grad(x);
      const int64_t n = y.rows(), d = y.cols();
      for (int64_t i = 0; i < n; ++i) {
        T dot{0};
        for (int64_t j = 0; j < d; ++j) dot += g.at(i, j) * y.at(i, j);
        for (int64_t j = 0; j < d; ++j) gx.at(i, j) += (g.at(i, j) - dot) * y.at(i, j);
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "softmax_rows");
}

inline constexpr double kCausalMaskValue = 1e9;

/// Additive causal mask on a square score matrix: entries above the
/// diagonal get -1e9 so a following row softmax zeroes them out.
template <typename T>
VarId causal_mask(Tape<T>& tape, VarId x) {
  const Tensor<T>& xv = tape.val(x);
  check(xv.rank() == 2 && xv.rows() == xv.cols(), "causal_mask: input must be square");
  Tensor<T> out = xv;
  const int64_t n = xv.rows();
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) out.at(i, j) -= static_cast<T>(kCausalMaskValue);
  bool rg = tape.requires_grad(x);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [x, out_id](Tape<T>& t) { t.grad(x).vec() += t.grad(out_id).vec(); };
  }
  return tape.push(std::move(out), rg, std::move(fn), "causal_mask");
}

/// Row-wise layer normalization with affine parameters.
/// Per row: y = (x - mean) / sqrt(var + eps) * gamma + beta, population var.
template <typename T>
VarId layer_norm(Tape<T>& tape, VarId x, VarId gamma, VarId beta, T eps) {
  const Tensor<T>& xv = tape.val(x);
  const Tensor<T>& gv = tape.val(gamma);
  const Tensor<T>& bv = tape.val(beta);
  check(xv.rank() == 2 && gv.size() == xv.cols() && bv.size() == xv.cols(),
        "layer_norm: shape mismatch " + shape_str(xv.shape()));
  const int64_t n = xv.rows(), d = xv.cols();
  Tensor<T> out(xv.shape());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  auto means = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    T mu{0};
    for (int64_t j = 0; j < d; ++j) mu += xv.at(i, j);
    mu /= static_cast<T>(d);
    T var{0};
    for (int64_t j = 0; j < d; ++j) {
      T c = xv.at(i, j) - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    T s = T{1} / std::sqrt(var + eps);
    (*means)[static_cast<size_t>(i)] = mu;
    (*inv_std)[static_cast<size_t>(i)] = s;
    for (int64_t j = 0; j < d; ++j) out.at(i, j) = (xv.at(i, j) - mu) * s * gv[j] + bv[j];
  }
  bool rg = ops_detail::any_grad(tape, {x, gamma, beta});
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [x, gamma, beta, out_id, inv_std, means](Tape<T>& t) {
      const Tensor<T>& xv = t.val(x);
      const Tensor<T>& gv = t.val(gamma);
      const Tensor<T>& g = t.grad(out_id);
      const int64_t n = xv.rows(), d = xv.cols();
      const bool need_x = t.requires_grad(x);
      const bool need_g = t.requires_grad(gamma);
      const bool need_b = t.requires_grad(beta);
      for (int64_t i = 0; i < n; ++i) {
        const T mu = (*means)[static_cast<size_t>(i)];
        const T s = (*inv_std)[static_cast<size_t>(i)];
        T mean_dxhat{0}, mean_dxhat_xhat{0};
        for (int64_t j = 0; j < d; ++j) {
          T xhat = (xv.at(i, j) - mu) * s;
          T dxhat = g.at(i, j) * gv[j];
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat;
          if (need_g) t.grad(gamma)[j] += g.at(i, j) * xhat;
          if (need_b) t.grad(beta)[j] += g.at(i, j);
        }
        if (!need_x) continue;
        mean_dxhat /= static_cast<T>(d);
        mean_dxhat_xhat /= static_cast<T>(d);
        for (int64_t j = 0; j < d; ++j) {
          T xhat = (xv.at(i, j) - mu) * s;
          T dxhat = g.at(i, j) * gv[j];
          t.grad(x).at(i, j) += s * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "layer_norm");
}

/// Exact (erf-based) GELU.
template <typename T>
VarId gelu(Tape<T>& tape, VarId x) {
  const Tensor<T>& xv = tape.val(x);
  Tensor<T> out(xv.shape());
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (int64_t i = 0; i < xv.size(); ++i) {
    double v = static_cast<double>(xv[i]);
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  bool rg = tape.requires_grad(x);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [x, out_id](Tape<T>& t) {
      const Tensor<T>& xv = t.val(x);
      const Tensor<T>& g = t.grad(out_id);
      Tensor<T>& gx = t.grad(x);
      constexpr double inv_sqrt2 = 0.70710678118654752440;
      constexpr double inv_sqrt2pi = 0.39894228040143267794;
      for (int64_t i = 0; i < xv.size(); ++i) {
        double v = static_cast<double>(xv[i]);
        double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * static_cast<T>(cdf + v * pdf);
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "gelu");
}

/// Scalar dot product against a constant weight vector; the reduction used
/// by tests to collapse an op output into a checkable scalar.
template <typename T>
VarId weighted_sum(Tape<T>& tape, VarId x, std::vector<T> weights) {
  const Tensor<T>& xv = tape.val(x);
  check(static_cast<int64_t>(weights.size()) == xv.size(), "weighted_sum: weight length mismatch");
  T acc{0};
  for (int64_t i = 0; i < xv.size(); ++i) acc += xv[i] * weights[static_cast<size_t>(i)];
  bool rg = tape.requires_grad(x);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    auto w = std::make_shared<std::vector<T>>(std::move(weights));
    fn = [x, out_id, w](Tape<T>& t) {
      const T g = t.grad(out_id)[0];
      Tensor<T>& gx = t.grad(x);
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += g * (*w)[static_cast<size_t>(i)];
    };
  }
  return tape.push(Tensor<T>::scalar(acc), rg, std::move(fn), "weighted_sum");
}

/// Weighted token-level cross entropy over already-flattened positions.
/// loss = sum_i w_i * (logsumexp(logits_i) - logits_i[target_i]); rows with
/// w_i == 0 are skipped entirely (their targets may be padding).
template <typename T>
VarId cross_entropy_weighted(Tape<T>& tape, VarId logits, std::vector<int32_t> targets,
                             std::vector<T> weights, std::vector<T>* out_nll = nullptr) {
  const Tensor<T>& lv = tape.val(logits);
  check(lv.rank() == 2, "cross_entropy: logits must be rank 2");
  const int64_t n = lv.rows(), vocab = lv.cols();
  check(static_cast<int64_t>(targets.size()) == n && static_cast<int64_t>(weights.size()) == n,
        "cross_entropy: target/weight length mismatch");
  auto lse = std::make_shared<std::vector<T>>(static_cast<size_t>(n), T{0});
  if (out_nll) out_nll->assign(static_cast<size_t>(n), T{0});
  T loss{0};
  for (int64_t i = 0; i < n; ++i) {
    if (weights[static_cast<size_t>(i)] == T{0} && !out_nll) continue;
    int32_t tgt = targets[static_cast<size_t>(i)];
    check(tgt >= 0 && tgt < vocab, "cross_entropy: target out of range at row " + std::to_string(i));
    T m = lv.at(i, 0);
    for (int64_t j = 1; j < vocab; ++j) m = std::max(m, lv.at(i, j));
    T sum{0};
    for (int64_t j = 0; j < vocab; ++j) sum += std::exp(lv.at(i, j) - m);
    T l = m + std::log(sum);
    (*lse)[static_cast<size_t>(i)] = l;
    T nll = l - lv.at(i, tgt);
    if (out_nll) (*out_nll)[static_cast<size_t>(i)] = nll;
    loss += weights[static_cast<size_t>(i)] * nll;
  }
  bool rg = tape.requires_grad(logits);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    auto tgt_ptr = std::make_shared<std::vector<int32_t>>(std::move(targets));
    auto w_ptr = std::make_shared<std::vector<T>>(std::move(weights));
    fn = [logits, out_id, tgt_ptr, w_ptr, lse](Tape<T>& t) {
      const T g = t.grad(out_id)[0];
      const Tensor<T>& lv = t.val(logits);
      Tensor<T>& gl = t.grad(logits);
      const int64_t n = lv.rows(), vocab = lv.cols();
      for (int64_t i = 0; i < n; ++i) {
        const T w = (*w_ptr)[static_cast<size_t>(i)];
        if (w == T{0}) continue;
        const T l = (*lse)[static_cast<size_t>(i)];
        const T gw = g * w;
        for (int64_t j = 0; j < vocab; ++j) gl.at(i, j) += gw * std::exp(lv.at(i, j) - l);
        gl.at(i, (*tgt_ptr)[static_cast<size_t>(i)]) -= gw;
      }
    };
  }
  return tape.push(Tensor<T>::scalar(loss), rg, std::move(fn), "cross_entropy");
}

/// Mean cross entropy over positions where mask is true. An all-false mask
/// yields loss 0 with zero gradients.
template <typename T>
VarId cross_entropy_masked(Tape<T>& tape, VarId logits, const std::vector<int32_t>& targets,
                           const std::vector<uint8_t>& mask, std::vector<T>* out_nll = nullptr) {
  check(targets.size() == mask.size(), "cross_entropy: target/mask length mismatch");
  int64_t n_masked = 0;
  for (uint8_t m : mask) n_masked += m ? 1 : 0;
  std::vector<T> weights(mask.size(), T{0});
  if (n_masked > 0) {
    T w = T{1} / static_cast<T>(n_masked);
    for (size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) weights[i] = w;
  }
  std::vector<int32_t> safe_targets = targets;
  for (size_t i = 0; i < mask.size(); ++i)
    if (!mask[i]) safe_targets[i] = 0;
  return cross_entropy_weighted(tape, logits, std::move(safe_targets), std::move(weights), out_nll);
}

/// Fused multi-head causal self-attention.
///
/// qkv is (batch*seq, 3*d_model) laid out [Q | K | V]; the op handles head
/// splitting, optional rotary position embedding of Q and K, scaled scores,
/// causal row softmax and the value mix, returning (batch*seq, d_model).
/// Attention probabilities are kept for the backward pass.
template <typename T>
VarId causal_self_attention(Tape<T>& tape, VarId qkv, int64_t batch, int64_t seq, int64_t heads,
                            bool rotary = false) {
  const Tensor<T>& in = tape.val(qkv);
  check(in.rank() == 2 && in.rows() == batch * seq && in.cols() % 3 == 0,
        "attention: qkv must be (batch*seq, 3*d_model)");
  const int64_t d = in.cols() / 3;
  check(d % heads == 0, "attention: d_model not divisible by heads");
  const int64_t dh = d / heads;
  check(!rotary || dh % 2 == 0, "attention: rotary needs even head dim");
  const T scale_f = T{1} / static_cast<T>(std::sqrt(static_cast<double>(dh)));

  using Mat = typename Tensor<T>::Mat;
  Tensor<T> out(Shape{batch * seq, d});
  // probs[b*heads + h] is a (seq, seq) row-softmax matrix, zero above diag.
  auto probs = std::make_shared<std::vector<Mat>>(static_cast<size_t>(batch * heads));

  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t h = 0; h < heads; ++h) {
      Mat q = in.mat().block(b * seq, h * dh, seq, dh);
      Mat k = in.mat().block(b * seq, d + h * dh, seq, dh);
      Mat v = in.mat().block(b * seq, 2 * d + h * dh, seq, dh);
      if (rotary) {
        ops_detail::apply_rotary(q, dh, T{1});
        ops_detail::apply_rotary(k, dh, T{1});
      }
      Mat s = q * k.transpose() * scale_f;
      Mat p = Mat::Zero(seq, seq);
      for (int64_t t = 0; t < seq; ++t) {
        T m = s(t, 0);
        for (int64_t j = 1; j <= t; ++j) m = std::max(m, s(t, j));
        T sum{0};
        for (int64_t j = 0; j <= t; ++j) {
          T e = std::exp(s(t, j) - m);
          p(t, j) = e;
          sum += e;
        }
        for (int64_t j = 0; j <= t; ++j) p(t, j) /= sum;
      }
      out.mat().block(b * seq, h * dh, seq, dh).noalias() = p * v;
      (*probs)[static_cast<size_t>(b * heads + h)] = std::move(p);
    }
  }

  bool rg = tape.requires_grad(qkv);
  VarId out_id = ops_detail::next_id(tape);
  typename Tape<T>::BackwardFn fn;
  if (rg) {
    fn = [qkv, out_id, probs, batch, seq, heads, d, dh, scale_f, rotary](Tape<T>& t) {
      const Tensor<T>& in = t.val(qkv);
      const Tensor<T>& gout = t.grad(out_id);
      Tensor<T>& gin = t.grad(qkv);
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
          const Mat& p = (*probs)[static_cast<size_t>(b * heads + h)];
          Mat q = in.mat().block(b * seq, h * dh, seq, dh);
          Mat k = in.mat().block(b * seq, d + h * dh, seq, dh);
          Mat v = in.mat().block(b * seq, 2 * d + h * dh, seq, dh);
          if (rotary) {
            ops_detail::apply_rotary(q, dh, T{1});
            ops_detail::apply_rotary(k, dh, T{1});
          }
          Mat go = gout.mat().block(b * seq, h * dh, seq, dh);
          Mat gp = go * v.transpose();
          Mat gv = p.transpose() * go;
          // softmax backward per row, restricted to the causal prefix.
          Mat gs = Mat::Zero(seq, seq);
          for (int64_t tt = 0; tt < seq; ++tt) {
            T dot{0};
            for (int64_t j = 0; j <= tt; ++j) dot += gp(tt, j) * p(tt, j);
            for (int64_t j = 0; j <= tt; ++j) gs(tt, j) = (gp(tt, j) - dot) * p(tt, j);
          }
          Mat gq = gs * k * scale_f;
          Mat gk = gs.transpose() * q * scale_f;
          if (rotary) {
            ops_detail::apply_rotary(gq, dh, T{-1});
            ops_detail::apply_rotary(gk, dh, T{-1});
          }
          gin.mat().block(b * seq, h * dh, seq, dh) += gq;
          gin.mat().block(b * seq, d + h * dh, seq, dh) += gk;
          gin.mat().block(b * seq, 2 * d + h * dh, seq, dh) += gv;
        }
      }
    };
  }
  return tape.push(std::move(out), rg, std::move(fn), "causal_self_attention");
}

/// Concatenates tensors into a single flat vector in the given order.
template <typename T>
std::vector<T> concat_flat(const std::vector<const Tensor<T>*>& tensors) {
  int64_t total = 0;
  for (const Tensor<T>* t : tensors) {
    check(t != nullptr && t->size() > 0, "concat_flat: missing tensor");
    total += t->size();
  }
  std::vector<T> out;
  out.reserve(static_cast<size_t>(total));
  for (const Tensor<T>* t : tensors) out.insert(out.end(), t->data(), t->data() + t->size());
  return out;
}

}  // namespace iml
