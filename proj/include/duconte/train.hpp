#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/model.hpp"
#include "duconte/nn.hpp"
#include "duconte/params.hpp"
#include "duconte/preprocess.hpp"

namespace duconte {

namespace seeds {

// Distinct derived-seed streams so that node sampling, epoch shuffles,
// negative sampling and parameter init never reuse randomness.
inline std::uint64_t neighborhood(std::uint64_t run_seed, int node) {
  return derive_seed(run_seed ^ 0x6e6268736e626873ull, static_cast<std::uint64_t>(node));
}
inline std::uint64_t shuffle(std::uint64_t run_seed, int stage, int epoch) {
  return derive_seed(run_seed ^ 0x7368756673687566ull,
                     static_cast<std::uint64_t>(stage) * 1000003ull + epoch);
}
inline std::uint64_t negatives(std::uint64_t run_seed, int stage, int epoch) {
  return derive_seed(run_seed ^ 0x6e65676e65676e65ull,
                     static_cast<std::uint64_t>(stage) * 1000033ull + epoch);
}
inline std::uint64_t model_init(std::uint64_t run_seed) {
  return derive_seed(run_seed ^ 0x696e6974696e6974ull, 1);
}
inline std::uint64_t gnn_init(std::uint64_t run_seed) {
  return derive_seed(run_seed ^ 0x676e6e73676e6e73ull, 2);
}

}  // namespace seeds

struct GnnConfig {
  int hidden = 64;
  double lr = 1e-2;
  int max_epochs = 500;
  int patience = 20;

  void validate() const {
    check_arg(hidden >= 1, "gnn: hidden must be >= 1");
    check_arg(lr > 0.0, "gnn: learning rate must be positive");
    check_arg(max_epochs >= 1, "gnn: max_epochs must be >= 1");
    check_arg(patience >= 1, "gnn: patience must be >= 1");
  }
};

struct TrainConfig {
  int stage1_epochs = 8;
  int stage2_epochs = 8;
  double lr_stage1 = 1e-3;
  double lr_stage2 = 1e-3;
  int batch_size = 8;
  GnnConfig gnn;
  std::uint64_t seed = 0;

  void validate() const {
    check_arg(stage1_epochs >= 1 && stage2_epochs >= 1, "train: epochs must be >= 1");
    check_arg(lr_stage1 > 0.0 && lr_stage2 > 0.0, "train: learning rates must be positive");
    check_arg(batch_size >= 1, "train: batch_size must be >= 1");
    gnn.validate();
  }
};

struct TrainTrace {
  std::vector<double> train_loss;
  std::vector<double> val_metric;
  std::vector<double> seconds;

  int epochs() const { return static_cast<int>(train_loss.size()); }

  std::string to_csv() const {
    std::string out = "epoch,train_loss,val_metric,seconds\n";
    char buf[128];
    for (int e = 0; e < epochs(); ++e) {
      std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.6f\n", e, train_loss[e], val_metric[e],
                    seconds[e]);
      out += buf;
    }
    return out;
  }
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline int argmax_row(const Tensor2& m, int row) {
  int best = 0;
  for (int c = 1; c < m.cols(); ++c) {
    if (m(row, c) > m(row, best)) best = c;
  }
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward helpers shared by training, evaluation, and gradient verification
// ---------------------------------------------------------------------------

struct Stage1Forward {
  Neighborhood neighborhood;
  AssembledSequence sequence;
  Var z;  // 1 x d first-stage target representation
};

/// Word-encoder half of the pipeline only: enough to produce the target's
/// first-stage representation. The node encoder and the neighbor composer
/// are not touched.
inline Stage1Forward stage1_forward(Tape& t, ParamBinder& bind, const DuconteModel& model,
                                    const TextAttributedGraph& graph, int v,
                                    const TfidfScorer& scorer, std::uint64_t run_seed) {
  const ModelConfig& cfg = model.config;
  Stage1Forward r;
  r.neighborhood =
      sample_neighborhood(graph, v, cfg.hops, cfg.neighbor_cap, seeds::neighborhood(run_seed, v));
  const int budget = token_budget(r.neighborhood.group_size(), cfg.context_limit);
  r.sequence = assemble_sequence(r.neighborhood, graph, budget, scorer);
  MaskMatrix word_mask;
  if (cfg.variant == Variant::kNoMaskT || cfg.variant == Variant::kNoMaskBoth) {
    word_mask = all_ones_mask(r.sequence.length(), MaskGranularity::kWord);
  } else {
    word_mask = build_word_mask(r.sequence, graph);
  }
  Var hidden = encoder_forward(t, bind, model.word_encoder, &r.sequence.tokens, Var{}, &word_mask,
                               /*use_embedding=*/true, /*use_positions=*/true);
  r.z = compose_target_variant(t, bind, model.composer, hidden, r.sequence, cfg);
  return r;
}

inline Var classifier_logits(Tape& t, ParamBinder& bind, const ClassifierRefs& cls, Var rep) {
  return t.add(t.matmul(rep, bind(cls.w)), bind(cls.b));
}

/// Full-pipeline forward with the run's neighborhood seed stream.
inline ForwardResult duconte_forward_seeded(Tape& t, ParamBinder& bind, const DuconteModel& model,
                                            const TextAttributedGraph& graph, int v,
                                            const TfidfScorer& scorer, std::uint64_t run_seed) {
  return duconte_forward(t, bind, model, graph, v, scorer, seeds::neighborhood(run_seed, v));
}

inline Var stage1_loss(Tape& t, ParamBinder& bind, const DuconteModel& model,
                       const TextAttributedGraph& graph, int v, const TfidfScorer& scorer,
                       std::uint64_t run_seed) {
  Var z = stage1_forward(t, bind, model, graph, v, scorer, run_seed).z;
  return t.cross_entropy_logits(classifier_logits(t, bind, model.cls1, z), graph.label(v));
}

inline Var stage2_loss(Tape& t, ParamBinder& bind, const DuconteModel& model,
                       const TextAttributedGraph& graph, int v, const TfidfScorer& scorer,
                       std::uint64_t run_seed) {
  auto fwd = duconte_forward_seeded(t, bind, model, graph, v, scorer, run_seed);
  return t.cross_entropy_logits(classifier_logits(t, bind, model.cls2, fwd.o), graph.label(v));
}

inline double stage1_accuracy(const DuconteModel& model, const TextAttributedGraph& graph,
                              const std::vector<int>& nodes, const TfidfScorer& scorer,
                              std::uint64_t run_seed) {
  if (nodes.empty()) return 0.0;
  int correct = 0;
  for (int v : nodes) {
    Tape t;
    ParamBinder bind = ParamBinder::frozen(t, model.store);
    Var z = stage1_forward(t, bind, model, graph, v, scorer, run_seed).z;
    const Tensor2& logits = t.val(classifier_logits(t, bind, model.cls1, z));
    if (detail::argmax_row(logits, 0) == graph.label(v)) ++correct;
  }
  return static_cast<double>(correct) / nodes.size();
}

inline double stage2_accuracy(const DuconteModel& model, const TextAttributedGraph& graph,
                              const std::vector<int>& nodes, const TfidfScorer& scorer,
                              std::uint64_t run_seed) {
  if (nodes.empty()) return 0.0;
  int correct = 0;
  for (int v : nodes) {
    Tape t;
    ParamBinder bind = ParamBinder::frozen(t, model.store);
    auto fwd = duconte_forward_seeded(t, bind, model, graph, v, scorer, run_seed);
    const Tensor2& logits = t.val(classifier_logits(t, bind, model.cls2, fwd.o));
    if (detail::argmax_row(logits, 0) == graph.label(v)) ++correct;
  }
  return static_cast<double>(correct) / nodes.size();
}

// ---------------------------------------------------------------------------
// Two-stage node-classification training
// ---------------------------------------------------------------------------

namespace detail {

/// Shared mini-batch trainer for the two stages. Selection: best validation
/// accuracy, ties resolved to the earlier epoch; the chosen epoch's
/// parameters are restored at the end. With an empty validation set the
/// final parameters are kept.
template <typename SampleLossFn, typename ValMetricFn>
TrainTrace run_stage(DuconteModel& model, const std::vector<int>& train_nodes, int epochs,
                     double lr, int batch_size, std::uint64_t run_seed, int stage_tag,
                     const std::vector<int>& trainable, SampleLossFn&& sample_loss,
                     ValMetricFn&& val_metric) {
  check_arg(!train_nodes.empty(), "training: empty train split");
  const auto mask = trainable_mask(model.store, trainable);
  Adam opt(model.store, trainable, lr);
  auto grads = make_grad_buffers(model.store);

  TrainTrace trace;
  double best_val = -1.0;
  std::vector<Tensor2> best_snapshot;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Stopwatch timer;
    std::vector<int> order = train_nodes;
    Rng shuffle_rng(seeds::shuffle(run_seed, stage_tag, epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t batch_end = std::min(order.size(), at + batch_size);
      const double inv_batch = 1.0 / static_cast<double>(batch_end - at);
      zero_grad_buffers(grads);
      for (; at < batch_end; ++at) {
        Tape t;
        ParamBinder bind(t, model.store, mask);
        Var loss = sample_loss(t, bind, order[at]);
        loss_sum += t.val(loss).item();
        t.backward(loss);
        bind.add_grads(grads, inv_batch);
      }
      opt.step(grads);
    }

    const double val = val_metric();
    trace.train_loss.push_back(loss_sum / train_nodes.size());
    trace.val_metric.push_back(val);
    trace.seconds.push_back(timer.seconds());
    if (val > best_val) {
      best_val = val;
      best_snapshot = model.store.snapshot(trainable);
    }
  }
  if (!best_snapshot.empty() && best_val > 0.0) {
    model.store.restore(trainable, best_snapshot);
  }
  return trace;
}

}  // namespace detail

/// Stage 1: trains the word-token encoder, the target composer projections,
/// and the first-stage classifier on the cross-entropy of z. The node
/// encoder and neighbor pooling stay untouched.
inline TrainTrace train_stage1(DuconteModel& model, const TextAttributedGraph& graph,
                               const NodeSplit& split, const TfidfScorer& scorer,
                               const TrainConfig& cfg) {
  cfg.validate();
  return detail::run_stage(
      model, split.train, cfg.stage1_epochs, cfg.lr_stage1, cfg.batch_size, cfg.seed, 1,
      model.stage1_params(),
      [&](Tape& t, ParamBinder& bind, int v) {
        return stage1_loss(t, bind, model, graph, v, scorer, cfg.seed);
      },
      [&] { return stage1_accuracy(model, graph, split.val, scorer, cfg.seed); });
}

/// Stage 2: freezes everything from stage 1 and trains the node encoder, the
/// neighbor pooling vector, and the second-stage classifier on the
/// cross-entropy of o.
inline TrainTrace train_stage2(DuconteModel& model, const TextAttributedGraph& graph,
                               const NodeSplit& split, const TfidfScorer& scorer,
                               const TrainConfig& cfg) {
  cfg.validate();
  return detail::run_stage(
      model, split.train, cfg.stage2_epochs, cfg.lr_stage2, cfg.batch_size, cfg.seed, 2,
      model.stage2_params(),
      [&](Tape& t, ParamBinder& bind, int v) {
        return stage2_loss(t, bind, model, graph, v, scorer, cfg.seed);
      },
      [&] { return stage2_accuracy(model, graph, split.val, scorer, cfg.seed); });
}

/// Final o vectors for every node, as rows of an N x d matrix.
inline Tensor2 export_embeddings(const DuconteModel& model, const TextAttributedGraph& graph,
                                 const TfidfScorer& scorer, std::uint64_t run_seed) {
  Tensor2 out(graph.num_nodes(), model.config.d_model);
  for (int v = 0; v < graph.num_nodes(); ++v) {
    auto bundle = duconte_embed(model, graph, v, scorer, seeds::neighborhood(run_seed, v));
    for (int c = 0; c < model.config.d_model; ++c) out(v, c) = bundle.o(0, c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Downstream GraphSAGE
// ---------------------------------------------------------------------------

struct GnnResult {
  ParamStore store;
  SageParams params;
  TrainTrace trace;
  int best_epoch = -1;
  double best_val = 0.0;
};

/// Full-batch GraphSAGE training with early stopping on validation accuracy
/// (patience epochs without strict improvement) and best-checkpoint
/// restoration.
inline GnnResult train_gnn(const Tensor2& embeddings, const TextAttributedGraph& graph,
                           const NodeSplit& split, const GnnConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  check_arg(!split.train.empty(), "train_gnn: empty train split");
  check_arg(embeddings.rows() == graph.num_nodes(), "train_gnn: embeddings rows != num_nodes");

  GnnResult result;
  Rng rng(seeds::gnn_init(run_seed));
  result.params = make_sage(result.store, "sage", {embeddings.cols(), cfg.hidden, graph.num_classes()}, rng);
  std::vector<int> trainable(result.store.size());
  std::iota(trainable.begin(), trainable.end(), 0);
  Adam opt(result.store, trainable, cfg.lr);
  auto grads = make_grad_buffers(result.store);

  double best_val = -1.0;
  std::vector<Tensor2> best_snapshot;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    detail::Stopwatch timer;
    double train_loss = 0.0;
    {
      Tape t;
      ParamBinder bind(t, result.store);
      Var logits = sage_forward(t, bind, result.params, t.constant(embeddings), graph);
      Var loss = t.mean_cross_entropy_rows(logits, graph.labels(), split.train);
      train_loss = t.val(loss).item();
      t.backward(loss);
      zero_grad_buffers(grads);
      bind.add_grads(grads);
      opt.step(grads);
    }
    double val_acc = 0.0;
    if (!split.val.empty()) {
      const Tensor2 logits = sage_forward_plain(result.store, result.params, embeddings, graph);
      int correct = 0;
      for (int v : split.val) {
        if (detail::argmax_row(logits, v) == graph.label(v)) ++correct;
      }
      val_acc = static_cast<double>(correct) / split.val.size();
    }
    result.trace.train_loss.push_back(train_loss);
    result.trace.val_metric.push_back(val_acc);
    result.trace.seconds.push_back(timer.seconds());

    if (val_acc > best_val) {
      best_val = val_acc;
      best_snapshot = result.store.snapshot(trainable);
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (!split.val.empty() && since_best >= cfg.patience) break;
    }
  }
  if (!best_snapshot.empty()) result.store.restore(trainable, best_snapshot);
  result.best_val = best_val;
  return result;
}

inline std::vector<int> gnn_predictions(const GnnResult& gnn, const Tensor2& embeddings,
                                        const TextAttributedGraph& graph) {
  const Tensor2 logits = sage_forward_plain(gnn.store, gnn.params, embeddings, graph);
  std::vector<int> pred(graph.num_nodes());
  for (int v = 0; v < graph.num_nodes(); ++v) pred[v] = detail::argmax_row(logits, v);
  return pred;
}

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

inline double evaluate_accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
  check_arg(!truth.empty(), "evaluate_accuracy: empty evaluation set");
  check_arg(predictions.size() == truth.size(), "evaluate_accuracy: size mismatch");
  int correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predictions[i] == truth[i]) ++correct;
  }
  return static_cast<double>(correct) / truth.size();
}

/// Rank-based (Mann-Whitney) AUC with average ranks for ties, so tied
/// positive/negative pairs earn exactly half credit.
inline double evaluate_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_arg(!scores.empty(), "evaluate_auc: empty evaluation set");
  check_arg(scores.size() == labels.size(), "evaluate_auc: size mismatch");
  std::size_t n_pos = 0;
  for (int l : labels) {
    check_arg(l == 0 || l == 1, "evaluate_auc: labels must be 0 or 1");
    if (l == 1) ++n_pos;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  check_arg(n_pos > 0 && n_neg > 0, "evaluate_auc: need both classes in the truth");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] < scores[b]; });

  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double u = pos_rank_sum - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Link prediction
// ---------------------------------------------------------------------------

struct EdgeSplit {
  std::vector<std::pair<int, int>> train;
  std::vector<std::pair<int, int>> val;
  std::vector<std::pair<int, int>> test;
};

inline EdgeSplit split_edges(const TextAttributedGraph& g, const std::array<double, 3>& fractions,
                             std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    check_arg(f >= 0.0, "split_edges: negative fraction");
    total += f;
  }
  check_arg(std::abs(total - 1.0) <= 1e-9, "split_edges: fractions must sum to 1");
  check_arg(g.num_edges() >= 3, "split_edges: need at least 3 edges");

  std::vector<std::pair<int, int>> edges = g.edges();
  Rng rng(seed);
  rng.shuffle(edges);
  const int n = static_cast<int>(edges.size());
  int n_train = static_cast<int>(fractions[0] * n);
  int n_val = static_cast<int>(fractions[1] * n);
  int n_test = static_cast<int>(fractions[2] * n);
  n_train += n - (n_train + n_val + n_test);

  EdgeSplit split;
  split.train.assign(edges.begin(), edges.begin() + n_train);
  split.val.assign(edges.begin() + n_train, edges.begin() + n_train + n_val);
  split.test.assign(edges.begin() + n_train + n_val, edges.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

/// Graph restricted to the given edge subset (same nodes, texts, labels).
/// Used as the message graph during link training so held-out edges never
/// influence sampling or masks.
inline TextAttributedGraph restrict_to_edges(const TextAttributedGraph& g,
                                             const std::vector<std::pair<int, int>>& edges) {
  return TextAttributedGraph::build(g.num_nodes(), edges, g.texts(), g.labels(), g.num_classes(),
                                    g.vocab_size());
}

/// Uniform negative endpoint for (i, *): k != i and (i, k) not an edge of
/// the exclusion graph.
inline int sample_negative_endpoint(const TextAttributedGraph& exclusion, int i, Rng& rng) {
  for (int tries = 0; tries < 10000; ++tries) {
    const int k = static_cast<int>(rng.below(exclusion.num_nodes()));
    if (k != i && !exclusion.connected(i, k)) return k;
  }
  check_state(false, "negative sampling: graph too dense around node ", i);
  return -1;
}

inline std::vector<std::pair<int, int>> sample_negative_pairs(const TextAttributedGraph& exclusion,
                                                              std::size_t count,
                                                              std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<int, int>> out;
  out.reserve(count);
  while (out.size() < count) {
    const int u = static_cast<int>(rng.below(exclusion.num_nodes()));
    const int k = sample_negative_endpoint(exclusion, u, rng);
    out.emplace_back(u, k);
  }
  return out;
}

/// Dot-product link scores between target representations; stage 1 scores
/// first-stage vectors z, stage 2 the fused vectors o.
inline double link_score(const DuconteModel& model, const TextAttributedGraph& message_graph,
                         const TfidfScorer& scorer, int i, int j, int stage,
                         std::uint64_t run_seed) {
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, model.store);
  Var ri, rj;
  if (stage == 1) {
    ri = stage1_forward(t, bind, model, message_graph, i, scorer, run_seed).z;
    rj = stage1_forward(t, bind, model, message_graph, j, scorer, run_seed).z;
  } else {
    ri = duconte_forward_seeded(t, bind, model, message_graph, i, scorer, run_seed).o;
    rj = duconte_forward_seeded(t, bind, model, message_graph, j, scorer, run_seed).o;
  }
  return t.val(t.dot(ri, rj)).item();
}

inline std::vector<double> link_scores(const DuconteModel& model,
                                       const TextAttributedGraph& message_graph,
                                       const TfidfScorer& scorer,
                                       const std::vector<std::pair<int, int>>& pairs, int stage,
                                       std::uint64_t run_seed) {
  std::vector<double> out;
  out.reserve(pairs.size());
  for (auto [i, j] : pairs) out.push_back(link_score(model, message_graph, scorer, i, j, stage, run_seed));
  return out;
}

/// AUC over positive pairs vs. an equal number of sampled negatives.
inline double link_auc(const DuconteModel& model, const TextAttributedGraph& message_graph,
                       const TextAttributedGraph& exclusion, const TfidfScorer& scorer,
                       const std::vector<std::pair<int, int>>& positives, int stage,
                       std::uint64_t run_seed, std::uint64_t negative_seed) {
  check_arg(!positives.empty(), "link_auc: no positive pairs");
  auto negatives = sample_negative_pairs(exclusion, positives.size(), negative_seed);
  std::vector<double> scores = link_scores(model, message_graph, scorer, positives, stage, run_seed);
  std::vector<int> labels(positives.size(), 1);
  auto neg_scores = link_scores(model, message_graph, scorer, negatives, stage, run_seed);
  scores.insert(scores.end(), neg_scores.begin(), neg_scores.end());
  labels.insert(labels.end(), negatives.size(), 0);
  return evaluate_auc(scores, labels);
}

/// One stage of link-prediction training: binary cross-entropy on dot-product
/// scores of train edges against per-epoch resampled negatives. Stage 1
/// trains the word encoder + target composer; stage 2 freezes them and
/// trains the node encoder + neighbor pooling. Validation metric is AUC on
/// the held-out validation edges with fixed negatives.
inline TrainTrace train_link_stage(DuconteModel& model, const TextAttributedGraph& message_graph,
                                   const TextAttributedGraph& exclusion, const EdgeSplit& edges,
                                   const TfidfScorer& scorer, const TrainConfig& cfg, int stage) {
  cfg.validate();
  check_arg(stage == 1 || stage == 2, "train_link_stage: stage must be 1 or 2");
  check_arg(!edges.train.empty(), "train_link_stage: empty train edge set");

  const std::vector<int> trainable = stage == 1 ? model.stage1_params() : model.stage2_params();
  const auto mask = trainable_mask(model.store, trainable);
  const int epochs = stage == 1 ? cfg.stage1_epochs : cfg.stage2_epochs;
  const double lr = stage == 1 ? cfg.lr_stage1 : cfg.lr_stage2;
  Adam opt(model.store, trainable, lr);
  auto grads = make_grad_buffers(model.store);

  auto edge_rep = [&](Tape& t, ParamBinder& bind, int node) {
    if (stage == 1) return stage1_forward(t, bind, model, message_graph, node, scorer, cfg.seed).z;
    return duconte_forward_seeded(t, bind, model, message_graph, node, scorer, cfg.seed).o;
  };

  TrainTrace trace;
  double best_val = -1.0;
  std::vector<Tensor2> best_snapshot;
  const std::uint64_t val_negative_seed = seeds::negatives(cfg.seed, stage, 999983);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    detail::Stopwatch timer;
    std::vector<std::pair<int, int>> order = edges.train;
    Rng shuffle_rng(seeds::shuffle(cfg.seed, 10 + stage, epoch));
    shuffle_rng.shuffle(order);
    Rng negative_rng(seeds::negatives(cfg.seed, stage, epoch));

    double loss_sum = 0.0;
    std::size_t at = 0;
    while (at < order.size()) {
      const std::size_t batch_end = std::min(order.size(), at + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(batch_end - at);
      zero_grad_buffers(grads);
      for (; at < batch_end; ++at) {
        const auto [i, j] = order[at];
        const int k = sample_negative_endpoint(exclusion, i, negative_rng);
        Tape t;
        ParamBinder bind(t, model.store, mask);
        Var ri = edge_rep(t, bind, i);
        Var rj = edge_rep(t, bind, j);
        Var rk = edge_rep(t, bind, k);
        Var loss = t.add(t.bce_with_logits(t.dot(ri, rj), 1.0),
                         t.bce_with_logits(t.dot(ri, rk), 0.0));
        loss_sum += t.val(loss).item();
        t.backward(loss);
        bind.add_grads(grads, inv_batch);
      }
      opt.step(grads);
    }

    double val = 0.0;
    if (!edges.val.empty()) {
      val = link_auc(model, message_graph, exclusion, scorer, edges.val, stage, cfg.seed,
                     val_negative_seed);
    }
    trace.train_loss.push_back(loss_sum / edges.train.size());
    trace.val_metric.push_back(val);
    trace.seconds.push_back(timer.seconds());
    if (val > best_val) {
      best_val = val;
      best_snapshot = model.store.snapshot(trainable);
    }
  }
  if (!best_snapshot.empty() && best_val > 0.0) model.store.restore(trainable, best_snapshot);
  return trace;
}

}  // namespace duconte
