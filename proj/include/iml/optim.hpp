#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "iml/model.hpp"
#include "iml/tensor.hpp"

namespace iml {

/// Optimizer selection and hyperparameters. Adafactor defaults follow the
/// original recipe: factored second moments for matrices, update clipping at
/// threshold 1, relative step size min(1e-2, 1/sqrt(t)) scaled by the
/// parameter RMS, and decay beta2_t = 1 - t^-0.8.
struct OptimConfig {
  std::string kind = "adafactor";  // sgd | adamw | adafactor
  double lr = 0.0;                 // required for sgd/adamw; 0 = pure relative step for adafactor
  double weight_decay = 0.0;
  // adamw
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // adafactor
  double eps1 = 1e-30;
  double eps2 = 1e-3;
  double clip_threshold = 1.0;
  double decay_exponent = 0.8;
  bool relative_step = true;
  bool scale_parameter = true;

  void validate() const {
    check(kind == "sgd" || kind == "adamw" || kind == "adafactor",
          "OptimConfig: unknown kind '" + kind + "'");
    if (kind != "adafactor") check(lr > 0.0, "OptimConfig: " + kind + " needs a learning rate");
  }
};

/// Per-parameter auxiliary state. adamw uses m/v; adafactor uses row/col for
/// factored matrices and v otherwise; sgd keeps nothing.
template <typename T>
struct OptimSlot {
  Tensor<T> m, v, row, col;
};

template <typename T>
inline bool adafactor_factored(const Tensor<T>& p) {
  return p.rank() == 2 && p.rows() > 1 && p.cols() > 1;
}

// Weight decay is decoupled and applied multiplicatively before the
// gradient term, so a zero-gradient step shrinks parameters by exactly
// (1 - lr * weight_decay).
template <typename T>
void sgd_update(Tensor<T>& p, const Tensor<T>& g, const OptimConfig& cfg) {
  const T lr = static_cast<T>(cfg.lr);
  const T shrink = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  for (int64_t j = 0; j < p.size(); ++j) p[j] = p[j] * shrink - lr * g[j];
}

template <typename T>
void adamw_update(Tensor<T>& p, const Tensor<T>& g, OptimSlot<T>& s, int64_t t,
                  const OptimConfig& cfg) {
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(cfg.lr);
  const T eps = static_cast<T>(cfg.eps);
  const T shrink = static_cast<T>(1.0 - cfg.lr * cfg.weight_decay);
  for (int64_t j = 0; j < p.size(); ++j) {
    s.m[j] = b1 * s.m[j] + (T{1} - b1) * g[j];
    s.v[j] = b2 * s.v[j] + (T{1} - b2) * g[j] * g[j];
    T mhat = s.m[j] / bc1;
    T vhat = s.v[j] / bc2;
    p[j] = p[j] * shrink - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

template <typename T>
void adafactor_update(Tensor<T>& p, const Tensor<T>& g, OptimSlot<T>& s, int64_t t,
                      const OptimConfig& cfg) {
  const double beta2t = 1.0 - std::pow(static_cast<double>(t), -cfg.decay_exponent);
  const double eps1 = cfg.eps1;

  double rms_p = 0.0;
  for (int64_t j = 0; j < p.size(); ++j) rms_p += static_cast<double>(p[j]) * p[j];
  rms_p = std::sqrt(rms_p / static_cast<double>(p.size()));
  double rho = cfg.relative_step ? std::min(1e-2, 1.0 / std::sqrt(static_cast<double>(t)))
                                 : cfg.lr;
  if (cfg.relative_step && cfg.lr > 0.0) rho *= cfg.lr;
  const double alpha = (cfg.scale_parameter ? std::max(cfg.eps2, rms_p) : 1.0) * rho;

  Tensor<T> update(p.shape());
  if (adafactor_factored(p)) {
    const int64_t R = p.rows(), C = p.cols();
    for (int64_t r = 0; r < R; ++r) {
      double acc = 0.0;
      for (int64_t c = 0; c < C; ++c) acc += static_cast<double>(g.at(r, c)) * g.at(r, c) + eps1;
      s.row[r] = static_cast<T>(beta2t * s.row[r] + (1.0 - beta2t) * (acc / static_cast<double>(C)));
    }
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t r = 0; r < R; ++r) acc += static_cast<double>(g.at(r, c)) * g.at(r, c) + eps1;
      s.col[c] = static_cast<T>(beta2t * s.col[c] + (1.0 - beta2t) * (acc / static_cast<double>(R)));
    }
    double row_mean = 0.0;
    for (int64_t r = 0; r < R; ++r) row_mean += static_cast<double>(s.row[r]);
    row_mean /= static_cast<double>(R);
    for (int64_t r = 0; r < R; ++r) {
      const double rf = 1.0 / std::sqrt(static_cast<double>(s.row[r]) / row_mean);
      for (int64_t c = 0; c < C; ++c) {
        const double cf = 1.0 / std::sqrt(static_cast<double>(s.col[c]));
        update.at(r, c) = static_cast<T>(static_cast<double>(g.at(r, c)) * rf * cf);
      }
    }
  } else {
    for (int64_t j = 0; j < p.size(); ++j) {
      s.v[j] = static_cast<T>(beta2t * s.v[j] +
                              (1.0 - beta2t) * (static_cast<double>(g[j]) * g[j] + eps1));
      update[j] =
          static_cast<T>(static_cast<double>(g[j]) / std::sqrt(static_cast<double>(s.v[j])));
    }
  }

  double rms_u = 0.0;
  for (int64_t j = 0; j < update.size(); ++j) rms_u += static_cast<double>(update[j]) * update[j];
  rms_u = std::sqrt(rms_u / static_cast<double>(update.size()));
  const double denom = std::max(1.0, rms_u / cfg.clip_threshold);
  const T factor = static_cast<T>(alpha / denom);
  const T shrink = static_cast<T>(1.0 - alpha * cfg.weight_decay);
  for (int64_t j = 0; j < p.size(); ++j) p[j] = p[j] * shrink - factor * update[j];
}

/// Applies one of the three update rules across all model parameters.
/// grads must line up with model.param_refs(); a non-finite gradient raises
/// an error naming the parameter before anything is mutated.
template <typename T>
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimConfig config, ModelState<T>& model) : config_(config) {
    config_.validate();
    for (auto& [name, p] : model.param_refs()) {
      OptimSlot<T> s;
      if (config_.kind == "adamw") {
        s.m = Tensor<T>(p->shape());
        s.v = Tensor<T>(p->shape());
      } else if (config_.kind == "adafactor") {
        if (adafactor_factored(*p)) {
          s.row = Tensor<T>({p->rows()});
          s.col = Tensor<T>({p->cols()});
        } else {
          s.v = Tensor<T>(p->shape());
        }
      }
      slots_.push_back(std::move(s));
    }
  }

  const OptimConfig& config() const { return config_; }
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t t) { step_count_ = t; }
  std::vector<OptimSlot<T>>& slots() { return slots_; }
  const std::vector<OptimSlot<T>>& slots() const { return slots_; }

  void step(ModelState<T>& model, const std::vector<Tensor<T>>& grads) {
    auto refs = model.param_refs();
    check(grads.size() == refs.size(), "Optimizer::step: gradient count mismatch");
    check(slots_.size() == refs.size(), "Optimizer::step: state built for a different model");
    for (size_t i = 0; i < refs.size(); ++i) {
      check(grads[i].same_shape(*refs[i].second),
            "Optimizer::step: gradient shape mismatch for " + refs[i].first);
      for (int64_t j = 0; j < grads[i].size(); ++j)
        if (!std::isfinite(static_cast<double>(grads[i][j])))
          throw error("Optimizer::step: non-finite gradient in parameter " + refs[i].first);
    }
    ++step_count_;
    for (size_t i = 0; i < refs.size(); ++i) {
      if (config_.kind == "sgd")
        sgd_update(*refs[i].second, grads[i], config_);
      else if (config_.kind == "adamw")
        adamw_update(*refs[i].second, grads[i], slots_[i], step_count_, config_);
      else
        adafactor_update(*refs[i].second, grads[i], slots_[i], step_count_, config_);
    }
    model.step += 1;
  }

 private:
  OptimConfig config_;
  int64_t step_count_ = 0;
  std::vector<OptimSlot<T>> slots_;
};

}  // namespace iml
