#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/masks.hpp"
#include "duconte/params.hpp"
#include "duconte/rng.hpp"
#include "duconte/tape.hpp"
#include "duconte/tensor.hpp"

namespace duconte {

/// Fixed sinusoidal positional table: pe(pos, 2i) = sin(pos / 10000^(2i/d)),
/// pe(pos, 2i+1) = cos of the same argument.
inline Tensor2 sinusoidal_positions(int max_len, int d_model) {
  check_arg(max_len >= 1 && d_model >= 1, "sinusoidal_positions: bad shape");
  Tensor2 pe(max_len, d_model);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; 2 * i < d_model; ++i) {
      const double angle = pos / std::pow(10000.0, (2.0 * i) / d_model);
      pe(pos, 2 * i) = std::sin(angle);
      if (2 * i + 1 < d_model) pe(pos, 2 * i + 1) = std::cos(angle);
    }
  }
  return pe;
}

/// Masked scaled-dot-product attention on plain tensors:
/// softmax(Q K^T / sqrt(d_k) + M) V with M additive (0 / -inf) or null.
inline Tensor2 masked_attention(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                                const Tensor2* additive, double d_k) {
  check_arg(q.cols() == k.cols(), "masked_attention: Q/K width mismatch");
  check_arg(k.rows() == v.rows(), "masked_attention: K/V row mismatch");
  check_arg(d_k > 0.0, "masked_attention: d_k must be positive");
  if (additive) {
    check_arg(additive->rows() == q.rows() && additive->cols() == k.rows(),
              "masked_attention: mask must be queries x keys");
  }
  Tensor2 logits(q.rows(), k.rows());
  matmul_nt_acc(logits, q, k, 1.0 / std::sqrt(d_k));
  Tensor2 probs = softmax_rows_masked(logits, additive);
  return matmul(probs, v);
}

/// Attention weights only (row-stochastic over unmasked keys).
inline Tensor2 attention_weights(const Tensor2& q, const Tensor2& k, const Tensor2* additive,
                                 double d_k) {
  Tensor2 logits(q.rows(), k.rows());
  matmul_nt_acc(logits, q, k, 1.0 / std::sqrt(d_k));
  return softmax_rows_masked(logits, additive);
}

// ---------------------------------------------------------------------------
// Transformer encoder
// ---------------------------------------------------------------------------

/// Store indices for one pre-norm encoder layer. Attention and feed-forward
/// projections carry no bias; the two layer norms have gain and bias.
struct AttentionLayerRefs {
  int wq, wk, wv, wo;
  int ffn_w1, ffn_w2;
  int ln1_g, ln1_b, ln2_g, ln2_b;
};

/// One encoder stack: optional token embedding table, a fixed sinusoidal
/// positional table, and per-layer projection weights.
struct EncoderParams {
  int embedding = -1;  // store index; -1 when the encoder consumes vectors directly
  std::vector<AttentionLayerRefs> layers;
  int num_heads = 1;
  int d_model = 0;
  int d_ff = 0;
  Tensor2 positions;
};

inline EncoderParams make_encoder(ParamStore& store, const std::string& prefix, int d_model,
                                  int d_ff, int num_layers, int num_heads, int vocab_size,
                                  int max_len, Rng& rng) {
  check_arg(d_model >= 1 && d_ff >= 1 && num_layers >= 0 && num_heads >= 1,
            "make_encoder: bad dimensions");
  check_arg(d_model % num_heads == 0, "make_encoder: head count ", num_heads,
            " must divide d_model ", d_model);
  EncoderParams enc;
  enc.num_heads = num_heads;
  enc.d_model = d_model;
  enc.d_ff = d_ff;
  enc.positions = sinusoidal_positions(max_len, d_model);
  if (vocab_size > 0) {
    enc.embedding = store.add(prefix + ".embed", uniform_init(vocab_size, d_model, rng));
  }
  for (int l = 0; l < num_layers; ++l) {
    const std::string lp = prefix + ".L" + std::to_string(l);
    AttentionLayerRefs refs;
    refs.wq = store.add(lp + ".wq", uniform_init(d_model, d_model, rng));
    refs.wk = store.add(lp + ".wk", uniform_init(d_model, d_model, rng));
    refs.wv = store.add(lp + ".wv", uniform_init(d_model, d_model, rng));
    refs.wo = store.add(lp + ".wo", uniform_init(d_model, d_model, rng));
    refs.ffn_w1 = store.add(lp + ".ffn.w1", uniform_init(d_model, d_ff, rng));
    refs.ffn_w2 = store.add(lp + ".ffn.w2", uniform_init(d_ff, d_model, rng));
    refs.ln1_g = store.add(lp + ".ln1.g", Tensor2::filled(1, d_model, 1.0));
    refs.ln1_b = store.add(lp + ".ln1.b", Tensor2(1, d_model));
    refs.ln2_g = store.add(lp + ".ln2.g", Tensor2::filled(1, d_model, 1.0));
    refs.ln2_b = store.add(lp + ".ln2.b", Tensor2(1, d_model));
    enc.layers.push_back(refs);
  }
  return enc;
}

/// Multi-head attention: heads split the model width evenly, every head sees
/// the same visibility mask, head outputs are concatenated and projected.
inline Var multi_head_attention(Tape& t, ParamBinder& bind, const AttentionLayerRefs& refs,
                                int num_heads, Var x,
                                const std::shared_ptr<const Tensor2>& additive) {
  const int d_model = t.val(x).cols();
  check_arg(d_model % num_heads == 0, "multi_head_attention: head count must divide width");
  const int d_head = d_model / num_heads;
  Var q = t.matmul(x, bind(refs.wq));
  Var k = t.matmul(x, bind(refs.wk));
  Var v = t.matmul(x, bind(refs.wv));
  std::vector<Var> heads;
  heads.reserve(num_heads);
  for (int h = 0; h < num_heads; ++h) {
    const int c0 = h * d_head, c1 = (h + 1) * d_head;
    heads.push_back(t.masked_attention(t.slice_cols(q, c0, c1), t.slice_cols(k, c0, c1),
                                       t.slice_cols(v, c0, c1), additive,
                                       static_cast<double>(d_head)));
  }
  Var cat = num_heads == 1 ? heads[0] : t.concat_cols(heads);
  return t.matmul(cat, bind(refs.wo));
}

/// Pre-norm layer: x + MHA(LN(x)), then + FFN(LN(.)) with ReLU.
inline Var encoder_layer(Tape& t, ParamBinder& bind, const AttentionLayerRefs& refs, int num_heads,
                         Var x, const std::shared_ptr<const Tensor2>& additive) {
  Var attn_in = t.layer_norm(x, bind(refs.ln1_g), bind(refs.ln1_b));
  Var a = t.add(x, multi_head_attention(t, bind, refs, num_heads, attn_in, additive));
  Var ffn_in = t.layer_norm(a, bind(refs.ln2_g), bind(refs.ln2_b));
  Var ffn = t.matmul(t.relu(t.matmul(ffn_in, bind(refs.ffn_w1))), bind(refs.ffn_w2));
  return t.add(a, ffn);
}

/// Runs the encoder stack. With use_embedding the input is a token-id
/// sequence looked up in the embedding table; otherwise `x` is consumed as a
/// (seq_len x d_model) matrix directly. The same mask is applied at every
/// layer and head; null mask means unrestricted attention.
inline Var encoder_forward(Tape& t, ParamBinder& bind, const EncoderParams& enc,
                           const std::vector<int>* token_ids, Var x, const MaskMatrix* mask,
                           bool use_embedding, bool use_positions) {
  int seq_len = 0;
  Var h;
  if (use_embedding) {
    check_arg(enc.embedding >= 0, "encoder_forward: encoder has no embedding table");
    check_arg(token_ids != nullptr && !token_ids->empty(), "encoder_forward: no token ids");
    seq_len = static_cast<int>(token_ids->size());
    h = t.select_rows(bind(enc.embedding), *token_ids);
  } else {
    check_arg(x.valid(), "encoder_forward: no input vectors");
    h = x;
    seq_len = t.val(h).rows();
  }
  if (use_positions) {
    check_arg(seq_len <= enc.positions.rows(), "encoder_forward: sequence length ", seq_len,
              " exceeds positional table of ", enc.positions.rows());
    Tensor2 pos(seq_len, enc.d_model);
    for (int r = 0; r < seq_len; ++r) {
      for (int c = 0; c < enc.d_model; ++c) pos(r, c) = enc.positions(r, c);
    }
    h = t.add(h, t.constant(std::move(pos)));
  }
  std::shared_ptr<const Tensor2> additive;
  if (mask) {
    check_arg(mask->n == seq_len, "encoder_forward: mask side ", mask->n, " != sequence length ",
              seq_len);
    additive = std::make_shared<const Tensor2>(to_additive(*mask));
  }
  for (const auto& refs : enc.layers) {
    h = encoder_layer(t, bind, refs, enc.num_heads, h, additive);
  }
  return h;
}

/// Plain-tensor encoder pass (no gradients).
inline Tensor2 encoder_forward_plain(const ParamStore& store, const EncoderParams& enc,
                                     const std::vector<int>* token_ids, const Tensor2* x,
                                     const MaskMatrix* mask, bool use_embedding,
                                     bool use_positions) {
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, store);
  Var xv{};
  if (x) xv = t.constant(*x);
  return t.val(encoder_forward(t, bind, enc, token_ids, xv, mask, use_embedding, use_positions));
}

/// Plain multi-head pass for a single layer (no gradients, no residual).
inline Tensor2 multi_head_plain(const ParamStore& store, const AttentionLayerRefs& refs,
                                int num_heads, const Tensor2& x, const Tensor2* additive) {
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, store);
  std::shared_ptr<const Tensor2> mask;
  if (additive) mask = std::make_shared<const Tensor2>(*additive);
  return t.val(multi_head_attention(t, bind, refs, num_heads, t.constant(x), mask));
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

using LossFn = std::function<Var(Tape&, ParamBinder&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  int worst_flat_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int checked_entries = 0;
};

inline double evaluate_loss(const ParamStore& store, const LossFn& loss_fn) {
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, store);
  const double v = t.val(loss_fn(t, bind)).item();
  check_state(std::isfinite(v), "gradcheck: non-finite loss");
  return v;
}

/// Central finite differences against reverse-mode gradients over every
/// listed parameter entry. Relative error is |a - n| / max(|a|, |n|, 1e-8).
inline GradCheckReport gradcheck(ParamStore& store, const std::vector<int>& trainable,
                                 const LossFn& loss_fn, double epsilon = 1e-5) {
  check_arg(epsilon >= 1e-6 && epsilon <= 1e-4, "gradcheck: epsilon must lie in [1e-6, 1e-4]");
  auto grads = make_grad_buffers(store);
  {
    Tape t;
    ParamBinder bind(t, store, trainable_mask(store, trainable));
    Var loss = loss_fn(t, bind);
    check_state(std::isfinite(t.val(loss).item()), "gradcheck: non-finite loss");
    t.backward(loss);
    bind.add_grads(grads);
  }
  GradCheckReport rep;
  for (int idx : trainable) {
    Tensor2& p = store.value(idx);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double orig = p.data()[k];
      p.data()[k] = orig + epsilon;
      const double f_plus = evaluate_loss(store, loss_fn);
      p.data()[k] = orig - epsilon;
      const double f_minus = evaluate_loss(store, loss_fn);
      p.data()[k] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
      const double analytic = grads[idx].empty() ? 0.0 : grads[idx].data()[k];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      ++rep.checked_entries;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = store.name(idx);
        rep.worst_flat_index = static_cast<int>(k);
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// GraphSAGE
// ---------------------------------------------------------------------------

/// Mean-aggregator GraphSAGE. Per layer:
///   out = act(x W_self + mean_nbr(x) W_neigh + b)
/// with ReLU between layers and a linear final layer. Isolated nodes
/// aggregate the zero vector.
struct SageParams {
  struct Layer {
    int w_self, w_neigh, b;
  };
  std::vector<Layer> layers;
};

inline SageParams make_sage(ParamStore& store, const std::string& prefix,
                            const std::vector<int>& dims, Rng& rng) {
  check_arg(dims.size() >= 2, "make_sage: need at least input and output dims");
  SageParams sp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::string lp = prefix + ".L" + std::to_string(l);
    SageParams::Layer layer;
    layer.w_self = store.add(lp + ".self", uniform_init(dims[l], dims[l + 1], rng));
    layer.w_neigh = store.add(lp + ".neigh", uniform_init(dims[l], dims[l + 1], rng));
    layer.b = store.add(lp + ".b", Tensor2(1, dims[l + 1]));
    sp.layers.push_back(layer);
  }
  return sp;
}

inline Var sage_forward(Tape& t, ParamBinder& bind, const SageParams& sp, Var features,
                        const TextAttributedGraph& graph) {
  check_arg(!sp.layers.empty(), "sage_forward: no layers");
  Var h = features;
  for (std::size_t l = 0; l < sp.layers.size(); ++l) {
    const auto& layer = sp.layers[l];
    Var m = t.neighbor_mean(h, graph);
    Var z = t.add_row_broadcast(
        t.add(t.matmul(h, bind(layer.w_self)), t.matmul(m, bind(layer.w_neigh))), bind(layer.b));
    h = (l + 1 < sp.layers.size()) ? t.relu(z) : z;
  }
  return h;
}

inline Tensor2 sage_forward_plain(const ParamStore& store, const SageParams& sp,
                                  const Tensor2& features, const TextAttributedGraph& graph) {
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, store);
  return t.val(sage_forward(t, bind, sp, t.constant(features), graph));
}

// ---------------------------------------------------------------------------
// Plain loss entry points
// ---------------------------------------------------------------------------

struct CrossEntropyResult {
  double loss;
  Tensor2 probs;
};

inline CrossEntropyResult cross_entropy(const Tensor2& logits, int label) {
  auto [loss, probs] = cross_entropy_with_probs(logits, label);
  return {loss, std::move(probs)};
}

inline double bce_with_logits(double score, double target) {
  return bce_with_logits_value(score, target);
}

}  // namespace duconte
