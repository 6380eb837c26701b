#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/masks.hpp"
#include "duconte/nn.hpp"
#include "duconte/params.hpp"
#include "duconte/preprocess.hpp"
#include "duconte/rng.hpp"
#include "duconte/tape.hpp"

namespace duconte {

/// Model variants. Full is the complete pipeline; the rest switch off one
/// mechanism each:
///   NoDual         word-token granularity only (o = z)
///   NoMaskT/D/Both unrestricted attention in the word / node / both encoders
///   MeanPool       composer replaced by per-span mean pooling
///   CenterOnly     beta forced to 1 (center-context importance only)
///   NeighOnly      beta forced to 0 (neighborhood-context importance only)
///   UnifiedContext single pooled importance without the center/neighbor split
enum class Variant {
  kFull,
  kNoDual,
  kNoMaskT,
  kNoMaskD,
  kNoMaskBoth,
  kMeanPool,
  kCenterOnly,
  kNeighOnly,
  kUnifiedContext,
};

inline const std::vector<std::pair<Variant, const char*>>& variant_names() {
  static const std::vector<std::pair<Variant, const char*>> names = {
      {Variant::kFull, "Full"},
      {Variant::kNoDual, "NoDual"},
      {Variant::kNoMaskT, "NoMaskT"},
      {Variant::kNoMaskD, "NoMaskD"},
      {Variant::kNoMaskBoth, "NoMaskBoth"},
      {Variant::kMeanPool, "MeanPool"},
      {Variant::kCenterOnly, "CenterOnly"},
      {Variant::kNeighOnly, "NeighOnly"},
      {Variant::kUnifiedContext, "UnifiedContext"},
  };
  return names;
}

inline const char* to_string(Variant v) {
  for (const auto& [variant, name] : variant_names()) {
    if (variant == v) return name;
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (const auto& [variant, name] : variant_names()) {
    if (s == name) return variant;
  }
  check_arg(false, "unknown variant '", s, "'");
  return Variant::kFull;  // unreachable
}

/// Normalization direction for the composer's attention weights a[p][q]
/// (query position p, target-token key q). over_queries normalizes each
/// key's column over all queries; over_keys normalizes each query's row.
enum class NormDirection { kOverQueries, kOverKeys };

inline const char* to_string(NormDirection d) {
  return d == NormDirection::kOverQueries ? "over_queries" : "over_keys";
}

inline NormDirection norm_direction_from_string(const std::string& s) {
  if (s == "over_queries") return NormDirection::kOverQueries;
  if (s == "over_keys") return NormDirection::kOverKeys;
  check_arg(false, "unknown normalization direction '", s, "'");
  return NormDirection::kOverQueries;  // unreachable
}

struct ModelConfig {
  int d_model = 32;
  int d_ff = 64;
  int word_layers = 2;
  int node_layers = 2;
  int heads = 4;
  int context_limit = 512;
  int hops = 2;
  int neighbor_cap = 39;
  double alpha = 0.7;  // first-stage weight in o = alpha*z + (1-alpha)*e
  double beta = 0.7;   // center-context weight inside the composer
  Variant variant = Variant::kFull;
  NormDirection norm_direction = NormDirection::kOverQueries;

  void validate() const {
    check_arg(d_model >= 1 && d_ff >= 1, "model: dimensions must be positive");
    check_arg(word_layers >= 0 && node_layers >= 0, "model: negative layer count");
    check_arg(heads >= 1 && d_model % heads == 0, "model: heads must divide d_model");
    check_arg(alpha >= 0.0 && alpha <= 1.0, "model: alpha must lie in [0, 1]");
    check_arg(beta >= 0.0 && beta <= 1.0, "model: beta must lie in [0, 1]");
    check_arg(hops >= 1, "model: hops must be >= 1");
    check_arg(neighbor_cap >= 0, "model: neighbor_cap must be >= 0");
    check_arg(context_limit >= 64, "model: context_limit must be >= 64");
    check_arg(context_limit >= 2 * (neighbor_cap + 1),
              "model: context_limit ", context_limit, " cannot fit ", neighbor_cap + 1,
              " nodes (needs at least ", 2 * (neighbor_cap + 1), ")");
  }
};

/// Composer projections: W_Q / W_K drive the dual-context importance of the
/// target's tokens, w_a scores neighbor tokens for local attention pooling.
struct ComposerParams {
  int wq = -1;
  int wk = -1;
  int wa = -1;
};

struct ClassifierRefs {
  int w = -1;  // d_model x num_classes
  int b = -1;  // 1 x num_classes
};

/// All learnable state of the two-encoder model plus the classifier heads
/// used by the two training stages.
struct DuconteModel {
  ModelConfig config;
  int num_classes = 0;
  int vocab_size = 0;
  ParamStore store;
  EncoderParams word_encoder;
  EncoderParams node_encoder;
  ComposerParams composer;
  ClassifierRefs cls1;
  ClassifierRefs cls2;

  static DuconteModel init(const ModelConfig& cfg, int vocab_size, int num_classes,
                           std::uint64_t seed) {
    cfg.validate();
    check_arg(vocab_size >= Vocabulary::kFirstContentId + 1, "model: vocab_size too small");
    check_arg(num_classes >= 2, "model: need at least two classes");
    DuconteModel m;
    m.config = cfg;
    m.num_classes = num_classes;
    m.vocab_size = vocab_size;
    Rng rng(seed);
    m.word_encoder = make_encoder(m.store, "word", cfg.d_model, cfg.d_ff, cfg.word_layers,
                                  cfg.heads, vocab_size, cfg.context_limit, rng);
    m.node_encoder = make_encoder(m.store, "node", cfg.d_model, cfg.d_ff, cfg.node_layers,
                                  cfg.heads, /*vocab_size=*/0, cfg.neighbor_cap + 1, rng);
    m.composer.wq = m.store.add("composer.wq", uniform_init(cfg.d_model, cfg.d_model, rng));
    m.composer.wk = m.store.add("composer.wk", uniform_init(cfg.d_model, cfg.d_model, rng));
    m.composer.wa = m.store.add("composer.wa", uniform_init(cfg.d_model, 1, rng));
    m.cls1.w = m.store.add("cls1.w", uniform_init(cfg.d_model, num_classes, rng));
    m.cls1.b = m.store.add("cls1.b", Tensor2(1, num_classes));
    m.cls2.w = m.store.add("cls2.w", uniform_init(cfg.d_model, num_classes, rng));
    m.cls2.b = m.store.add("cls2.b", Tensor2(1, num_classes));
    return m;
  }

  /// Word-token encoder, target composer, and first-stage classifier.
  std::vector<int> stage1_params() const {
    std::vector<int> out = encoder_param_indices(word_encoder);
    out.push_back(composer.wq);
    out.push_back(composer.wk);
    out.push_back(cls1.w);
    out.push_back(cls1.b);
    return out;
  }

  /// Node encoder, neighbor pooling vector, and second-stage classifier.
  std::vector<int> stage2_params() const {
    std::vector<int> out = encoder_param_indices(node_encoder);
    out.push_back(composer.wa);
    out.push_back(cls2.w);
    out.push_back(cls2.b);
    return out;
  }

 private:
  static std::vector<int> encoder_param_indices(const EncoderParams& enc) {
    std::vector<int> out;
    if (enc.embedding >= 0) out.push_back(enc.embedding);
    for (const auto& l : enc.layers) {
      for (int idx : {l.wq, l.wk, l.wv, l.wo, l.ffn_w1, l.ffn_w2, l.ln1_g, l.ln1_b, l.ln2_g, l.ln2_b}) {
        out.push_back(idx);
      }
    }
    return out;
  }
};

/// Position bookkeeping for the composer: which sequence positions are the
/// target's tokens, which belong to neighbors, and which are queries at all
/// (separators are excluded from queries and keys).
struct ComposeLayout {
  std::vector<int> query_positions;   // all non-SEP positions, sequence order
  std::vector<int> target_positions;  // target span positions
  int target_query_begin = 0;         // index of the target block inside query_positions
};

inline ComposeLayout make_compose_layout(const AssembledSequence& seq) {
  ComposeLayout layout;
  for (int p = 0; p < seq.length(); ++p) {
    if (!seq.is_sep(p)) layout.query_positions.push_back(p);
  }
  auto [tb, te] = seq.node_spans.back();
  check_arg(te > tb, "composer: empty target span");
  layout.target_query_begin = static_cast<int>(layout.query_positions.size()) -
                              (te - tb);  // target tokens are the last non-SEP block
  for (int p = tb; p < te; ++p) layout.target_positions.push_back(p);
  return layout;
}

/// Intermediate composer quantities, exposed for verification.
struct ComposerOutputs {
  Var z;            // 1 x d target representation
  Var mu;           // 1 x L_t fused importance
  Var mu_cen;       // 1 x L_t
  Var mu_neigh;     // 1 x L_t
  Var alpha_cen;    // 1 x L_t raw center-context mass per key
  Var alpha_neigh;  // 1 x L_t raw neighborhood mass per key
};

namespace detail {

/// Attention weights a[p][q] between every non-SEP query position p and every
/// target-token key q, normalized along the configured direction.
inline Var composer_attention(Tape& t, Var queries, Var keys, int d_model, NormDirection dir) {
  Var raw = t.scale(t.matmul(queries, t.transpose(keys)), 1.0 / std::sqrt(static_cast<double>(d_model)));
  if (dir == NormDirection::kOverKeys) {
    return t.softmax_rows(raw);  // each query row sums to 1 over keys
  }
  // over_queries: each key's column sums to 1; softmax along columns.
  return t.transpose(t.softmax_rows(t.transpose(raw)));
}

inline Tensor2 block_indicator(const ComposeLayout& layout, bool target_block) {
  const int n_queries = static_cast<int>(layout.query_positions.size());
  Tensor2 ind(1, n_queries);
  for (int i = 0; i < n_queries; ++i) {
    const bool in_target = i >= layout.target_query_begin;
    ind(0, i) = (in_target == target_block) ? 1.0 : 0.0;
  }
  return ind;
}

}  // namespace detail

/// Target-node composer f1. Queries are the projections of every non-SEP
/// token in the assembled sequence; keys are the target's own tokens. Each
/// key's attention mass is split into a center component (queries from the
/// target) and a neighborhood component (queries from neighbors), the two are
/// softmax-normalized over the target's tokens and fused with beta, and the
/// result weights the target's token embeddings.
inline ComposerOutputs compose_target(Tape& t, ParamBinder& bind, const ComposerParams& cp,
                                      Var hidden, const AssembledSequence& seq, double beta,
                                      NormDirection dir, int d_model) {
  check_arg(beta >= 0.0 && beta <= 1.0, "compose_target: beta must lie in [0, 1]");
  const ComposeLayout layout = make_compose_layout(seq);
  Var h_queries = t.select_rows(hidden, layout.query_positions);
  Var h_target = t.select_rows(hidden, layout.target_positions);
  Var q = t.matmul(h_queries, bind(cp.wq));
  Var k = t.matmul(h_target, bind(cp.wk));
  Var attn = detail::composer_attention(t, q, k, d_model, dir);  // n_queries x L_t

  ComposerOutputs out;
  out.alpha_cen = t.matmul(t.constant(detail::block_indicator(layout, true)), attn);
  out.alpha_neigh = t.matmul(t.constant(detail::block_indicator(layout, false)), attn);
  out.mu_cen = t.softmax_rows(out.alpha_cen);
  out.mu_neigh = t.softmax_rows(out.alpha_neigh);
  out.mu = t.add_scaled(out.mu_cen, out.mu_neigh, beta, 1.0 - beta);
  out.z = t.matmul(out.mu, h_target);
  return out;
}

/// Single-pool importance: total attention mass on each target token from
/// all queries, softmax-normalized over the target tokens.
inline Var unified_context_importance(Tape& t, ParamBinder& bind, const ComposerParams& cp,
                                      Var hidden, const AssembledSequence& seq, NormDirection dir,
                                      int d_model) {
  const ComposeLayout layout = make_compose_layout(seq);
  Var h_queries = t.select_rows(hidden, layout.query_positions);
  Var h_target = t.select_rows(hidden, layout.target_positions);
  Var q = t.matmul(h_queries, bind(cp.wq));
  Var k = t.matmul(h_target, bind(cp.wk));
  Var attn = detail::composer_attention(t, q, k, d_model, dir);
  Tensor2 ones(1, static_cast<int>(layout.query_positions.size()));
  ones.fill(1.0);
  Var total = t.matmul(t.constant(std::move(ones)), attn);  // 1 x L_t
  return t.softmax_rows(total);
}

/// Neighbor composer f2: local attention pooling of one node's token block
/// with the scoring vector w_a.
inline Var compose_neighbor(Tape& t, ParamBinder& bind, int wa_index, Var h_block) {
  check_arg(t.val(h_block).rows() >= 1, "compose_neighbor: empty span");
  Var scores = t.matmul(h_block, bind(wa_index));            // L_j x 1
  Var pi = t.softmax_rows(t.transpose(scores));              // 1 x L_j
  return t.matmul(pi, h_block);                              // 1 x d
}

/// Target row of Z under the configured variant: f1 with the effective beta,
/// the unified single-pool importance, or a plain span mean.
inline Var compose_target_variant(Tape& t, ParamBinder& bind, const ComposerParams& cp, Var hidden,
                                  const AssembledSequence& seq, const ModelConfig& cfg) {
  auto [b, e] = seq.node_spans.back();
  check_arg(e > b, "composer: empty target span");
  std::vector<int> span(static_cast<std::size_t>(e - b));
  for (int p = b; p < e; ++p) span[p - b] = p;
  Var h_target = t.select_rows(hidden, span);
  switch (cfg.variant) {
    case Variant::kMeanPool:
      return t.mean_rows(h_target);
    case Variant::kUnifiedContext: {
      Var mu = unified_context_importance(t, bind, cp, hidden, seq, cfg.norm_direction, cfg.d_model);
      return t.matmul(mu, h_target);
    }
    default: {
      double beta = cfg.beta;
      if (cfg.variant == Variant::kCenterOnly) beta = 1.0;
      if (cfg.variant == Variant::kNeighOnly) beta = 0.0;
      return compose_target(t, bind, cp, hidden, seq, beta, cfg.norm_direction, cfg.d_model).z;
    }
  }
}

/// Builds the first-stage representation matrix Z: one row per node of the
/// ordered set S (neighbors first, target last). Neighbors use f2, the
/// target uses f1; MeanPool and UnifiedContext variants swap the composer.
inline Var compose_all(Tape& t, ParamBinder& bind, const ComposerParams& cp, Var hidden,
                       const AssembledSequence& seq, const ModelConfig& cfg) {
  std::vector<Var> rows;
  rows.reserve(seq.node_spans.size());
  const std::size_t target_index = seq.node_spans.size() - 1;
  for (std::size_t i = 0; i < seq.node_spans.size(); ++i) {
    if (i == target_index) {
      rows.push_back(compose_target_variant(t, bind, cp, hidden, seq, cfg));
      continue;
    }
    auto [b, e] = seq.node_spans[i];
    check_arg(e > b, "compose_all: empty span for node ", i);
    std::vector<int> span(static_cast<std::size_t>(e - b));
    for (int p = b; p < e; ++p) span[p - b] = p;
    Var h_block = t.select_rows(hidden, span);
    if (cfg.variant == Variant::kMeanPool) {
      rows.push_back(t.mean_rows(h_block));
    } else {
      rows.push_back(compose_neighbor(t, bind, cp.wa, h_block));
    }
  }
  return t.concat_rows(rows);
}

/// One full forward pass for a target node, differentiable end to end.
struct ForwardResult {
  Neighborhood neighborhood;
  AssembledSequence sequence;
  Var hidden;    // word-encoder output, L x d
  Var z_matrix;  // first-stage representations, |S| x d
  Var e_matrix;  // second-stage representations, |S| x d
  Var z_target;  // 1 x d
  Var e_target;  // 1 x d
  Var o;         // 1 x d fused target representation
  double alpha_effective = 0.0;
};

/// Pipeline: sample -> assemble -> word encoder under the word-token mask ->
/// composer -> node encoder under the node mask (embeddings bypassed,
/// positions on) -> alpha-fusion of the target's two representations.
/// NoMask variants replace the corresponding mask with all-ones; NoDual
/// forces the fusion onto the first-stage representation (o = z).
inline ForwardResult duconte_forward(Tape& t, ParamBinder& bind, const DuconteModel& model,
                                     const TextAttributedGraph& graph, int v,
                                     const TfidfScorer& scorer, std::uint64_t sample_seed) {
  const ModelConfig& cfg = model.config;
  ForwardResult r;
  r.neighborhood = sample_neighborhood(graph, v, cfg.hops, cfg.neighbor_cap, sample_seed);
  const int budget = token_budget(r.neighborhood.group_size(), cfg.context_limit);
  r.sequence = assemble_sequence(r.neighborhood, graph, budget, scorer);

  MaskMatrix word_mask;
  if (cfg.variant == Variant::kNoMaskT || cfg.variant == Variant::kNoMaskBoth) {
    word_mask = all_ones_mask(r.sequence.length(), MaskGranularity::kWord);
  } else {
    word_mask = build_word_mask(r.sequence, graph);
  }
  r.hidden = encoder_forward(t, bind, model.word_encoder, &r.sequence.tokens, Var{}, &word_mask,
                             /*use_embedding=*/true, /*use_positions=*/true);

  r.z_matrix = compose_all(t, bind, model.composer, r.hidden, r.sequence, cfg);

  MaskMatrix node_mask;
  if (cfg.variant == Variant::kNoMaskD || cfg.variant == Variant::kNoMaskBoth) {
    node_mask = all_ones_mask(r.neighborhood.group_size(), MaskGranularity::kNode);
  } else {
    node_mask = build_node_mask(r.neighborhood, graph);
  }
  r.e_matrix = encoder_forward(t, bind, model.node_encoder, nullptr, r.z_matrix, &node_mask,
                               /*use_embedding=*/false, /*use_positions=*/true);

  const int last = r.neighborhood.group_size() - 1;
  r.z_target = t.select_rows(r.z_matrix, {last});
  r.e_target = t.select_rows(r.e_matrix, {last});
  r.alpha_effective = cfg.variant == Variant::kNoDual ? 1.0 : cfg.alpha;
  r.o = t.add_scaled(r.z_target, r.e_target, r.alpha_effective, 1.0 - r.alpha_effective);
  return r;
}

/// Value-level bundle of one node's representations (inference only).
struct NodeBundle {
  Tensor2 z_matrix;  // |S| x d
  Tensor2 e_matrix;  // |S| x d
  Tensor2 z_target;  // 1 x d
  Tensor2 e_target;  // 1 x d
  Tensor2 o;         // 1 x d
  double alpha = 0.0;
};

inline NodeBundle duconte_embed(const DuconteModel& model, const TextAttributedGraph& graph, int v,
                                const TfidfScorer& scorer, std::uint64_t sample_seed) {
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, model.store);
  auto r = duconte_forward(t, bind, model, graph, v, scorer, sample_seed);
  NodeBundle b;
  b.z_matrix = t.val(r.z_matrix);
  b.e_matrix = t.val(r.e_matrix);
  b.z_target = t.val(r.z_target);
  b.e_target = t.val(r.e_target);
  b.o = t.val(r.o);
  b.alpha = r.alpha_effective;
  return b;
}

}  // namespace duconte
