#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "iml/error.hpp"
#include "iml/tensor.hpp"

namespace iml {

struct VarId {
  int32_t idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode tape. Operations push one node per result in execution
/// order; backward() replays the nodes in exact reverse order, which is a
/// valid reverse topological order of the recorded graph. All gradient
/// accumulation happens in fixed loops, so repeated runs are bit-identical.
///
/// Lifetime contract: one tape per training step (or per analysis pass).
/// Tensors are copied in when bound as leaves; mutating the source tensor
/// while the tape is alive does not affect recorded values.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  /// When set, every op output is scanned and a non-finite value raises an
  /// error naming the op. Enabled by analysis paths and tests.
  bool check_finite = false;

  VarId leaf(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr, "leaf");
  }
  VarId leaf(const Tensor<T>& value) { return leaf(value, value.requires_grad); }

  VarId push(Tensor<T> value, bool requires_grad, BackwardFn fn, const char* op_name) {
    if (check_finite) scan_finite(value, op_name);
    VarId id{static_cast<int32_t>(vars_.size())};
    vars_.push_back(Var{std::move(value), Tensor<T>(), requires_grad, std::move(fn)});
    return id;
  }

  const Tensor<T>& val(VarId id) const { return vars_[static_cast<size_t>(id.idx)].value; }
  bool requires_grad(VarId id) const { return vars_[static_cast<size_t>(id.idx)].requires_grad; }

  /// Gradient accumulator, allocated (zero) on first access.
  Tensor<T>& grad(VarId id) {
    Var& v = vars_[static_cast<size_t>(id.idx)];
    if (v.grad.size() == 0) v.grad = Tensor<T>::zeros(v.value.shape());
    return v.grad;
  }
  bool has_grad(VarId id) const { return vars_[static_cast<size_t>(id.idx)].grad.size() != 0; }

  void backward(VarId loss) {
    check(loss.valid(), "backward: invalid loss var");
    check(val(loss).size() == 1, "backward: loss must be a scalar, got shape " +
                                     shape_str(val(loss).shape()));
    grad(loss)[0] = T{1};
    for (size_t i = vars_.size(); i-- > 0;) {
      Var& v = vars_[i];
      if (v.backward_fn && v.grad.size() != 0) v.backward_fn(*this);
    }
  }

  size_t node_count() const { return vars_.size(); }

 private:
  struct Var {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward_fn;
  };

  static void scan_finite(const Tensor<T>& t, const char* op_name) {
    for (int64_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(static_cast<double>(t[i]))) {
        throw error(std::string("non-finite value produced by op '") + op_name + "'");
      }
    }
  }

  std::vector<Var> vars_;
};

}  // namespace iml
