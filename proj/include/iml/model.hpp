#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iml/ops.hpp"
#include "iml/rng.hpp"

namespace iml {

enum class Positional { learned_absolute, rotary };

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int vocab_size = 0;
  int max_context_length = 16;
  Positional positional = Positional::learned_absolute;
  double init_scale = 1.0;
  double ln_eps = 1e-5;
  std::string precision = "f32";

  void validate() const {
    check(n_layers >= 1 && n_heads >= 1 && d_model >= 1 && d_ff >= 1,
          "ModelConfig: dimensions must be positive");
    check(d_model % n_heads == 0, "ModelConfig: d_model must be divisible by n_heads");
    check(vocab_size > 0, "ModelConfig: vocab_size must be set");
    check(max_context_length >= 2, "ModelConfig: max_context_length too small");
    check(positional != Positional::rotary || (d_model / n_heads) % 2 == 0,
          "ModelConfig: rotary positions need an even head dim");
    check(precision == "f32" || precision == "f64", "ModelConfig: precision must be f32 or f64");
  }
};

template <typename T>
struct LayerParams {
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> w_qkv, b_qkv;
  Tensor<T> w_attn_out, b_attn_out;
  Tensor<T> ln2_gamma, ln2_beta;
  Tensor<T> w_mlp_in, b_mlp_in;
  Tensor<T> w_mlp_out, b_mlp_out;
};

/// Pre-norm decoder-only transformer state. The flattened parameter order
/// (used by checkpoints, doc_grad and the optimizer) is exactly the order
/// param_refs() yields:
///   tok_embedding, [pos_embedding,] per layer {ln1_gamma, ln1_beta, w_qkv,
///   b_qkv, w_attn_out, b_attn_out, ln2_gamma, ln2_beta, w_mlp_in, b_mlp_in,
///   w_mlp_out, b_mlp_out}, lnf_gamma, lnf_beta, w_unembed.
template <typename T>
struct ModelState {
  ModelConfig config;
  Tensor<T> tok_embedding;
  Tensor<T> pos_embedding;  // absent under rotary positions
  std::vector<LayerParams<T>> layers;
  Tensor<T> lnf_gamma, lnf_beta;
  Tensor<T> w_unembed;
  int64_t step = 0;

  std::vector<std::pair<std::string, Tensor<T>*>> param_refs() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    out.emplace_back("tok_embedding", &tok_embedding);
    if (config.positional == Positional::learned_absolute)
      out.emplace_back("pos_embedding", &pos_embedding);
    for (size_t l = 0; l < layers.size(); ++l) {
      auto& lp = layers[l];
      std::string p = "layer" + std::to_string(l) + ".";
      out.emplace_back(p + "ln1_gamma", &lp.ln1_gamma);
      out.emplace_back(p + "ln1_beta", &lp.ln1_beta);
      out.emplace_back(p + "w_qkv", &lp.w_qkv);
      out.emplace_back(p + "b_qkv", &lp.b_qkv);
      out.emplace_back(p + "w_attn_out", &lp.w_attn_out);
      out.emplace_back(p + "b_attn_out", &lp.b_attn_out);
      out.emplace_back(p + "ln2_gamma", &lp.ln2_gamma);
      out.emplace_back(p + "ln2_beta", &lp.ln2_beta);
      out.emplace_back(p + "w_mlp_in", &lp.w_mlp_in);
      out.emplace_back(p + "b_mlp_in", &lp.b_mlp_in);
      out.emplace_back(p + "w_mlp_out", &lp.w_mlp_out);
      out.emplace_back(p + "b_mlp_out", &lp.b_mlp_out);
    }
    out.emplace_back("lnf_gamma", &lnf_gamma);
    out.emplace_back("lnf_beta", &lnf_beta);
    out.emplace_back("w_unembed", &w_unembed);
    return out;
  }

  std::vector<std::pair<std::string, const Tensor<T>*>> param_refs() const {
    auto mut = const_cast<ModelState*>(this)->param_refs();
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    out.reserve(mut.size());
    for (auto& [n, p] : mut) out.emplace_back(n, p);
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (auto& [name, p] : param_refs()) n += p->size();
    return n;
  }

  template <typename U>
  ModelState<U> cast() const {
    ModelState<U> out;
    out.config = config;
    out.config.precision = sizeof(U) == 4 ? "f32" : "f64";
    out.step = step;
    out.tok_embedding = tok_embedding.template cast<U>();
    out.pos_embedding = pos_embedding.template cast<U>();
    out.lnf_gamma = lnf_gamma.template cast<U>();
    out.lnf_beta = lnf_beta.template cast<U>();
    out.w_unembed = w_unembed.template cast<U>();
    for (const auto& lp : layers) {
      LayerParams<U> o;
      o.ln1_gamma = lp.ln1_gamma.template cast<U>();
      o.ln1_beta = lp.ln1_beta.template cast<U>();
      o.w_qkv = lp.w_qkv.template cast<U>();
      o.b_qkv = lp.b_qkv.template cast<U>();
      o.w_attn_out = lp.w_attn_out.template cast<U>();
      o.b_attn_out = lp.b_attn_out.template cast<U>();
      o.ln2_gamma = lp.ln2_gamma.template cast<U>();
      o.ln2_beta = lp.ln2_beta.template cast<U>();
      o.w_mlp_in = lp.w_mlp_in.template cast<U>();
      o.b_mlp_in = lp.b_mlp_in.template cast<U>();
      o.w_mlp_out = lp.w_mlp_out.template cast<U>();
      o.b_mlp_out = lp.b_mlp_out.template cast<U>();
      out.layers.push_back(std::move(o));
    }
    return out;
  }
};

/// Weight matrices and embeddings draw from normal(0, init_scale/sqrt(d_model));
/// biases and LN betas start at zero, LN gammas at one. Each tensor uses its
/// own RNG stream derived from (seed, tensor index), so the draw is
/// independent of construction order.
template <typename T>
ModelState<T> init_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelState<T> state;
  state.config = config;
  const int d = config.d_model;
  state.tok_embedding = Tensor<T>({config.vocab_size, d});
  if (config.positional == Positional::learned_absolute)
    state.pos_embedding = Tensor<T>({config.max_context_length, d});
  state.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& lp : state.layers) {
    lp.ln1_gamma = Tensor<T>({d});
    lp.ln1_beta = Tensor<T>({d});
    lp.w_qkv = Tensor<T>({d, 3 * d});
    lp.b_qkv = Tensor<T>({3 * d});
    lp.w_attn_out = Tensor<T>({d, d});
    lp.b_attn_out = Tensor<T>({d});
    lp.ln2_gamma = Tensor<T>({d});
    lp.ln2_beta = Tensor<T>({d});
    lp.w_mlp_in = Tensor<T>({d, config.d_ff});
    lp.b_mlp_in = Tensor<T>({config.d_ff});
    lp.w_mlp_out = Tensor<T>({config.d_ff, d});
    lp.b_mlp_out = Tensor<T>({d});
  }
  state.lnf_gamma = Tensor<T>({d});
  state.lnf_beta = Tensor<T>({d});
  state.w_unembed = Tensor<T>({d, config.vocab_size});

  const double sigma = config.init_scale / std::sqrt(static_cast<double>(d));
  auto refs = state.param_refs();
  for (size_t i = 0; i < refs.size(); ++i) {
    auto& [name, p] = refs[i];
    bool is_gamma = name.find("gamma") != std::string::npos;
    bool is_bias_or_beta =
        name.find("beta") != std::string::npos || name.find(".b_") != std::string::npos;
    if (is_gamma) {
      p->fill(T{1});
    } else if (is_bias_or_beta) {
      p->fill(T{0});
    } else {
      Rng rng(mix_seed(seed, i));
      for (int64_t j = 0; j < p->size(); ++j)
        (*p)[j] = static_cast<T>(rng.normal() * sigma);
    }
  }
  return state;
}

/// Parameter VarIds for one tape pass, in param_refs() order.
template <typename T>
struct BoundModel {
  std::vector<VarId> params;
  const ModelState<T>* state = nullptr;
};

template <typename T>
BoundModel<T> bind_model(Tape<T>& tape, const ModelState<T>& state, bool requires_grad) {
  BoundModel<T> bound;
  bound.state = &state;
  for (auto& [name, p] : state.param_refs()) bound.params.push_back(tape.leaf(*p, requires_grad));
  return bound;
}

template <typename T>
struct ForwardResult {
  VarId logits;
  /// residuals[0] is the embedding(+position) output; residuals[l] the
  /// stream after block l. Entries line up with extract_activations layers.
  std::vector<VarId> residuals;
  VarId final_norm;
};

/// Runs the causal transformer over a flattened (batch*seq) token matrix.
/// Logits at a position depend only on positions <= it within its document.
template <typename T>
ForwardResult<T> model_forward(Tape<T>& tape, const BoundModel<T>& bound,
                               const std::vector<int32_t>& ids, int64_t batch, int64_t seq) {
  const ModelConfig& cfg = bound.state->config;
  check(static_cast<int64_t>(ids.size()) == batch * seq, "forward: ids size mismatch");
  check(seq <= cfg.max_context_length,
        "forward: sequence length " + std::to_string(seq) + " exceeds max_context_length " +
            std::to_string(cfg.max_context_length));
  size_t pi = 0;
  auto next = [&]() { return bound.params[pi++]; };

  ForwardResult<T> out;
  VarId tok_emb = next();
  VarId h = embedding_rows(tape, tok_emb, ids);
  if (cfg.positional == Positional::learned_absolute) {
    VarId pos_emb = next();
    std::vector<int32_t> pos_ids(static_cast<size_t>(batch * seq));
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t t = 0; t < seq; ++t)
        pos_ids[static_cast<size_t>(b * seq + t)] = static_cast<int32_t>(t);
    h = add(tape, h, embedding_rows(tape, pos_emb, pos_ids));
  }
  out.residuals.push_back(h);

  const T eps = static_cast<T>(cfg.ln_eps);
  const bool rotary = cfg.positional == Positional::rotary;
  for (int l = 0; l < cfg.n_layers; ++l) {
    VarId ln1_g = next(), ln1_b = next(), w_qkv = next(), b_qkv = next();
    VarId w_ao = next(), b_ao = next(), ln2_g = next(), ln2_b = next();
    VarId w_fc = next(), b_fc = next(), w_pr = next(), b_pr = next();
    VarId a = layer_norm(tape, h, ln1_g, ln1_b, eps);
    VarId qkv = add_rowvec(tape, matmul(tape, a, w_qkv), b_qkv);
    VarId attn = causal_self_attention(tape, qkv, batch, seq, cfg.n_heads, rotary);
    h = add(tape, h, add_rowvec(tape, matmul(tape, attn, w_ao), b_ao));
    VarId m = layer_norm(tape, h, ln2_g, ln2_b, eps);
    VarId f = gelu(tape, add_rowvec(tape, matmul(tape, m, w_fc), b_fc));
    h = add(tape, h, add_rowvec(tape, matmul(tape, f, w_pr), b_pr));
    out.residuals.push_back(h);
  }
  VarId lnf_g = next(), lnf_b = next(), w_unemb = next();
  out.final_norm = layer_norm(tape, h, lnf_g, lnf_b, eps);
  out.logits = matmul(tape, out.final_norm, w_unemb);
  return out;
}

/// Plain inference logits for one document.
template <typename T>
Tensor<T> forward_logits(const ModelState<T>& state, const std::vector<int32_t>& ids) {
  Tape<T> tape;
  BoundModel<T> bound = bind_model(tape, state, false);
  auto res = model_forward(tape, bound, ids, 1, static_cast<int64_t>(ids.size()));
  return tape.val(res.logits);
}

/// Gradient of the mean per-token loss over unmasked positions of a single
/// document, flattened in param_refs() order. mask[i] marks whether token i
/// is a real (non-pad) token; position 0 is never a prediction target.
template <typename T>
std::vector<T> doc_grad(const ModelState<T>& state, const std::vector<int32_t>& ids,
                        const std::vector<uint8_t>& mask) {
  const int64_t L = static_cast<int64_t>(ids.size());
  check(static_cast<int64_t>(mask.size()) == L, "doc_grad: mask length mismatch");
  int64_t n_pred = 0;
  for (int64_t i = 1; i < L; ++i) n_pred += mask[static_cast<size_t>(i)] ? 1 : 0;
  check(n_pred > 0, "doc_grad: document has no unmasked prediction targets");

  Tape<T> tape;
  BoundModel<T> bound = bind_model(tape, state, true);
  auto res = model_forward(tape, bound, ids, 1, L);
  std::vector<int32_t> targets(static_cast<size_t>(L), 0);
  std::vector<T> weights(static_cast<size_t>(L), T{0});
  const T w = T{1} / static_cast<T>(n_pred);
  for (int64_t i = 0; i + 1 < L; ++i) {
    if (mask[static_cast<size_t>(i + 1)]) {
      targets[static_cast<size_t>(i)] = ids[static_cast<size_t>(i + 1)];
      weights[static_cast<size_t>(i)] = w;
    }
  }
  VarId loss = cross_entropy_weighted(tape, res.logits, std::move(targets), std::move(weights));
  tape.backward(loss);

  std::vector<const Tensor<T>*> grads;
  for (VarId p : bound.params) grads.push_back(&tape.grad(p));
  return concat_flat(grads);
}

/// Residual-stream vector after `layer` (0 = embedding output) at `position`.
template <typename T>
std::vector<T> extract_activations(const ModelState<T>& state, const std::vector<int32_t>& ids,
                                   int layer, int64_t position) {
  check(layer >= 0 && layer <= state.config.n_layers,
        "extract_activations: layer " + std::to_string(layer) + " out of range [0," +
            std::to_string(state.config.n_layers) + "]");
  check(position >= 0 && position < static_cast<int64_t>(ids.size()),
        "extract_activations: position out of range");
  Tape<T> tape;
  BoundModel<T> bound = bind_model(tape, state, false);
  auto res = model_forward(tape, bound, ids, 1, static_cast<int64_t>(ids.size()));
  const Tensor<T>& h = tape.val(res.residuals[static_cast<size_t>(layer)]);
  std::vector<T> out(static_cast<size_t>(h.cols()));
  for (int64_t j = 0; j < h.cols(); ++j) out[static_cast<size_t>(j)] = h.at(position, j);
  return out;
}

/// Greedy decoding: argmax over logits with ties broken toward the lowest
/// token id; stops at stop_id (excluded from the result) or after max_new
/// tokens, or when the context window fills up.
template <typename T>
std::vector<int32_t> generate_greedy(const ModelState<T>& state, std::vector<int32_t> prompt,
                                     int max_new, int32_t stop_id) {
  check(static_cast<int64_t>(prompt.size()) <= state.config.max_context_length,
        "generate_greedy: prompt does not fit the context window");
  check(!prompt.empty(), "generate_greedy: empty prompt");
  std::vector<int32_t> generated;
  for (int step = 0; step < max_new; ++step) {
    if (static_cast<int64_t>(prompt.size()) > state.config.max_context_length) break;
    Tensor<T> logits = forward_logits(state, prompt);
    const int64_t last = logits.rows() - 1;
    int32_t best = 0;
    T best_v = logits.at(last, 0);
    for (int64_t j = 1; j < logits.cols(); ++j) {
      if (logits.at(last, j) > best_v) {
        best_v = logits.at(last, j);
        best = static_cast<int32_t>(j);
      }
    }
    if (best == stop_id) break;
    generated.push_back(best);
    prompt.push_back(best);
    if (static_cast<int64_t>(prompt.size()) >= state.config.max_context_length) break;
  }
  return generated;
}

}  // namespace iml
