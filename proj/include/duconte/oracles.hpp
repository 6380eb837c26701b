#pragma once

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/masks.hpp"
#include "duconte/model.hpp"
#include "duconte/nn.hpp"
#include "duconte/preprocess.hpp"
#include "duconte/rng.hpp"
#include "duconte/train.hpp"

// Brute-force reference implementations, deliberately written as plain
// scalar loops that share no code with the production paths they check.
// The CLI `oracle` subcommand and the test suites both run them.

namespace duconte::oracles {

inline TextAttributedGraph random_tag(Rng& rng, int num_nodes, int max_text_len, double edge_prob,
                                      int num_classes, int vocab_size) {
  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < num_nodes; ++u) {
    for (int v = u + 1; v < num_nodes; ++v) {
      if (rng.bernoulli(edge_prob)) edges.emplace_back(u, v);
    }
  }
  std::vector<std::vector<int>> texts(num_nodes);
  std::vector<int> labels(num_nodes);
  for (int v = 0; v < num_nodes; ++v) {
    const int len = 1 + static_cast<int>(rng.below(max_text_len));
    for (int i = 0; i < len; ++i) {
      texts[v].push_back(Vocabulary::kFirstContentId +
                         static_cast<int>(rng.below(vocab_size - Vocabulary::kFirstContentId)));
    }
    labels[v] = static_cast<int>(rng.below(num_classes));
  }
  return TextAttributedGraph::build(num_nodes, edges, std::move(texts), std::move(labels),
                                    num_classes, vocab_size);
}

/// Distance-limited breadth-first search.
inline std::vector<int> bfs_reference(const TextAttributedGraph& g, int source, int k) {
  std::vector<int> dist(g.num_nodes(), -1);
  dist[source] = 0;
  std::deque<int> queue{source};
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (dist[u] == k) continue;
    for (int w : g.neighbors(u)) {
      if (dist[w] < 0) {
        dist[w] = dist[u] + 1;
        queue.push_back(w);
      }
    }
  }
  std::vector<int> out;
  for (int v = 0; v < g.num_nodes(); ++v) {
    if (v != source && dist[v] >= 1) out.push_back(v);
  }
  return out;
}

/// Clause-by-clause word-token visibility: separator, same node, adjacency.
inline MaskMatrix word_mask_reference(const AssembledSequence& seq, const TextAttributedGraph& g) {
  MaskMatrix m(seq.length(), MaskGranularity::kWord);
  for (int p = 0; p < seq.length(); ++p) {
    for (int q = 0; q < seq.length(); ++q) {
      std::uint8_t bit = 0;
      if (seq.is_sep(p) || seq.is_sep(q)) {
        bit = 1;
      } else if (seq.owner[p] == seq.owner[q]) {
        bit = 1;
      } else if (g.connected(seq.owner[p], seq.owner[q])) {
        bit = 1;
      }
      m.set(p, q, bit);
    }
  }
  return m;
}

inline MaskMatrix node_mask_reference(const Neighborhood& nbh, const TextAttributedGraph& g) {
  const auto s = nbh.ordered_set();
  MaskMatrix m(static_cast<int>(s.size()), MaskGranularity::kNode);
  for (std::size_t a = 0; a < s.size(); ++a) {
    for (std::size_t b = 0; b < s.size(); ++b) {
      m.set(static_cast<int>(a), static_cast<int>(b),
            (s[a] == s[b] || g.connected(s[a], s[b])) ? 1 : 0);
    }
  }
  return m;
}

/// Unmasked scaled-dot-product attention with per-row stabilized softmax.
inline Tensor2 attention_reference_unmasked(const Tensor2& q, const Tensor2& k, const Tensor2& v,
                                            double d_k) {
  const int nq = q.rows(), nk = k.rows(), d = q.cols(), dv = v.cols();
  Tensor2 out(nq, dv);
  const double inv = 1.0 / std::sqrt(d_k);
  for (int i = 0; i < nq; ++i) {
    std::vector<double> logits(nk, 0.0);
    for (int j = 0; j < nk; ++j) {
      double acc = 0.0;
      for (int c = 0; c < d; ++c) acc += q(i, c) * k(j, c);
      logits[j] = acc * inv;
    }
    double m = logits[0];
    for (int j = 1; j < nk; ++j) m = std::max(m, logits[j]);
    double sum = 0.0;
    std::vector<double> w(nk);
    for (int j = 0; j < nk; ++j) {
      w[j] = std::exp(logits[j] - m);
      sum += w[j];
    }
    for (int j = 0; j < nk; ++j) {
      const double p = w[j] / sum;
      for (int c = 0; c < dv; ++c) out(i, c) += p * v(j, c);
    }
  }
  return out;
}

/// Per-pair enumeration of the target composer: projections, scaled scores,
/// softmax along the configured direction, context masses, and the fused
/// importance-weighted sum.
struct ComposerReference {
  std::vector<double> alpha_cen, alpha_neigh;
  std::vector<double> mu_cen, mu_neigh, mu;
  std::vector<double> z;
};

namespace detail {

inline std::vector<double> softmax_vec(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double sum = 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace detail

inline ComposerReference composer_reference(const Tensor2& hidden, const AssembledSequence& seq,
                                            const Tensor2& wq, const Tensor2& wk, double beta,
                                            NormDirection dir, int d_model) {
  std::vector<int> queries;
  for (int p = 0; p < seq.length(); ++p) {
    if (!seq.is_sep(p)) queries.push_back(p);
  }
  const auto [tb, te] = seq.node_spans.back();
  const int n_keys = te - tb;
  const int n_queries = static_cast<int>(queries.size());

  auto project = [&](int pos, const Tensor2& w, std::vector<double>& out) {
    out.assign(d_model, 0.0);
    for (int c = 0; c < d_model; ++c) {
      double acc = 0.0;
      for (int k = 0; k < d_model; ++k) acc += hidden(pos, k) * w(k, c);
      out[c] = acc;
    }
  };

  std::vector<std::vector<double>> qv(n_queries), kv(n_keys);
  for (int p = 0; p < n_queries; ++p) project(queries[p], wq, qv[p]);
  for (int q = 0; q < n_keys; ++q) project(tb + q, wk, kv[q]);

  const double inv = 1.0 / std::sqrt(static_cast<double>(d_model));
  std::vector<std::vector<double>> raw(n_queries, std::vector<double>(n_keys));
  for (int p = 0; p < n_queries; ++p) {
    for (int q = 0; q < n_keys; ++q) {
      double acc = 0.0;
      for (int c = 0; c < d_model; ++c) acc += qv[p][c] * kv[q][c];
      raw[p][q] = acc * inv;
    }
  }

  std::vector<std::vector<double>> a(n_queries, std::vector<double>(n_keys));
  if (dir == NormDirection::kOverQueries) {
    for (int q = 0; q < n_keys; ++q) {
      std::vector<double> col(n_queries);
      for (int p = 0; p < n_queries; ++p) col[p] = raw[p][q];
      auto sm = detail::softmax_vec(col);
      for (int p = 0; p < n_queries; ++p) a[p][q] = sm[p];
    }
  } else {
    for (int p = 0; p < n_queries; ++p) a[p] = detail::softmax_vec(raw[p]);
  }

  ComposerReference ref;
  ref.alpha_cen.assign(n_keys, 0.0);
  ref.alpha_neigh.assign(n_keys, 0.0);
  for (int p = 0; p < n_queries; ++p) {
    const bool in_target = queries[p] >= tb && queries[p] < te;
    for (int q = 0; q < n_keys; ++q) {
      (in_target ? ref.alpha_cen[q] : ref.alpha_neigh[q]) += a[p][q];
    }
  }
  ref.mu_cen = detail::softmax_vec(ref.alpha_cen);
  ref.mu_neigh = detail::softmax_vec(ref.alpha_neigh);
  ref.mu.resize(n_keys);
  for (int q = 0; q < n_keys; ++q) ref.mu[q] = beta * ref.mu_cen[q] + (1.0 - beta) * ref.mu_neigh[q];
  ref.z.assign(d_model, 0.0);
  for (int q = 0; q < n_keys; ++q) {
    for (int c = 0; c < d_model; ++c) ref.z[c] += ref.mu[q] * hidden(tb + q, c);
  }
  return ref;
}

/// Single-pool importance reference: total column mass then softmax.
inline std::vector<double> unified_importance_reference(const Tensor2& hidden,
                                                        const AssembledSequence& seq,
                                                        const Tensor2& wq, const Tensor2& wk,
                                                        NormDirection dir, int d_model) {
  auto ref = composer_reference(hidden, seq, wq, wk, 0.5, dir, d_model);
  std::vector<double> total(ref.alpha_cen.size());
  for (std::size_t q = 0; q < total.size(); ++q) total[q] = ref.alpha_cen[q] + ref.alpha_neigh[q];
  return detail::softmax_vec(total);
}

/// O(n^2) pairwise AUC: wins plus half-credit ties over all (pos, neg) pairs.
inline double auc_pairwise_reference(const std::vector<double>& scores,
                                     const std::vector<int>& labels) {
  double wins = 0.0;
  double ties = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++n_pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        ties += 1.0;
      }
    }
  }
  for (int l : labels) {
    if (l != 1) ++n_neg;
  }
  check_arg(n_pos > 0 && n_neg > 0, "auc_pairwise_reference: need both classes");
  return (wins + 0.5 * ties) / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

// ---------------------------------------------------------------------------
// Gradient-check fixtures
// ---------------------------------------------------------------------------

struct ToyInstance {
  TextAttributedGraph graph;
  DuconteModel model;
  TfidfScorer scorer;
};

/// Three-node path with small texts and a deliberately tiny model
/// (d_model 8, one layer, two heads) so that full central-difference
/// verification stays fast.
inline ToyInstance make_gradcheck_instance(std::uint64_t seed = 7) {
  auto graph = TextAttributedGraph::build(
      3, {{0, 1}, {1, 2}}, {{2, 3}, {4, 5, 6}, {7, 8}}, {0, 1, 2}, 3, 12);
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  cfg.word_layers = 1;
  cfg.node_layers = 1;
  cfg.heads = 2;
  cfg.context_limit = 64;
  cfg.hops = 1;
  cfg.neighbor_cap = 16;
  cfg.alpha = 0.7;
  cfg.beta = 0.7;
  ToyInstance inst{graph, DuconteModel::init(cfg, graph.vocab_size(), graph.num_classes(), seed),
                   TfidfScorer{}};
  inst.scorer.fit(inst.graph, {0, 1, 2});
  return inst;
}

/// Full-model gradient verification for one training stage's loss on the toy
/// instance: every parameter the loss touches, checked entry by entry. The
/// default epsilon sits at the top of the admissible range where central
/// differences are least noisy for this loss scale.
inline GradCheckReport gradcheck_full_model(int stage, std::uint64_t seed = 7,
                                            double epsilon = 5e-5) {
  check_arg(stage == 1 || stage == 2, "gradcheck_full_model: stage must be 1 or 2");
  ToyInstance inst = make_gradcheck_instance(seed);
  const int target = 1;
  if (stage == 1) {
    return gradcheck(inst.model.store, inst.model.stage1_params(),
                     [&](Tape& t, ParamBinder& bind) {
                       return stage1_loss(t, bind, inst.model, inst.graph, target, inst.scorer, 0);
                     },
                     epsilon);
  }
  // Stage-2 loss touches the stage-1 parameters too (z feeds o), so check
  // gradients through the whole model with the second-stage classifier.
  std::vector<int> all = inst.model.stage1_params();
  // cls1 never enters the stage-2 loss; drop it to keep every checked entry
  // on an active path.
  all.resize(all.size() - 2);
  for (int idx : inst.model.stage2_params()) all.push_back(idx);
  return gradcheck(inst.model.store, all,
                   [&](Tape& t, ParamBinder& bind) {
                     return stage2_loss(t, bind, inst.model, inst.graph, target, inst.scorer, 0);
                   },
                   epsilon);
}

// ---------------------------------------------------------------------------
// Oracle suite
// ---------------------------------------------------------------------------

struct OracleOptions {
  std::uint64_t seed = 0;
  bool inject_mask_fault = false;  // flips one mask bit to prove the suite can fail
};

struct OracleResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline bool all_passed(const std::vector<OracleResult>& results) {
  for (const auto& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

inline std::vector<OracleResult> run_oracle_suite(const OracleOptions& opt = {}) {
  std::vector<OracleResult> results;
  char detail[256];

  // k-hop neighborhoods against plain BFS.
  {
    Rng rng(derive_seed(opt.seed, 1));
    int mismatches = 0, checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
      auto g = random_tag(rng, 2 + static_cast<int>(rng.below(7)), 4, 0.35, 3, 16);
      for (int v = 0; v < g.num_nodes(); ++v) {
        for (int k = 1; k <= 3; ++k) {
          ++checked;
          if (k_hop_neighbors(g, v, k) != bfs_reference(g, v, k)) ++mismatches;
        }
      }
    }
    std::snprintf(detail, sizeof(detail), "%d neighborhoods checked, %d mismatches", checked,
                  mismatches);
    results.push_back({"bfs-neighborhoods", mismatches == 0, detail});
  }

  // Mask builders against clause-by-clause evaluation, 200 random graphs.
  {
    Rng rng(derive_seed(opt.seed, 2));
    int bad_word = 0, bad_node = 0;
    for (int trial = 0; trial < 200; ++trial) {
      auto g = random_tag(rng, 2 + static_cast<int>(rng.below(7)), 4, rng.uniform(0.1, 0.7), 3, 16);
      std::vector<int> all(g.num_nodes());
      for (int v = 0; v < g.num_nodes(); ++v) all[v] = v;
      TfidfScorer scorer;
      scorer.fit(g, all);
      const int target = static_cast<int>(rng.below(g.num_nodes()));
      auto nbh = sample_neighborhood(g, target, 2, 39, derive_seed(opt.seed, 1000 + trial));
      auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);
      auto word = build_word_mask(seq, g);
      auto node = build_node_mask(nbh, g);
      if (opt.inject_mask_fault && trial == 0) {
        word.set(0, word.n - 1, word.at(0, word.n - 1) ? 0 : 1);
      }
      if (word.bits != word_mask_reference(seq, g).bits) ++bad_word;
      if (node.bits != node_mask_reference(nbh, g).bits) ++bad_node;
    }
    std::snprintf(detail, sizeof(detail), "200 graphs, %d word-mask and %d node-mask mismatches",
                  bad_word, bad_node);
    results.push_back({"mask-clauses", bad_word == 0 && bad_node == 0, detail});
  }

  // Masked attention with an all-ones mask against the unmasked reference,
  // plus the exact-zero property at masked keys.
  {
    Rng rng(derive_seed(opt.seed, 3));
    double worst = 0.0;
    bool exact_zero = true;
    for (int trial = 0; trial < 50; ++trial) {
      const int nq = 1 + static_cast<int>(rng.below(6));
      const int nk = 1 + static_cast<int>(rng.below(6));
      const int d = 1 + static_cast<int>(rng.below(8));
      const int dv = 1 + static_cast<int>(rng.below(8));
      Tensor2 q(nq, d), k(nk, d), v(nk, dv);
      for (auto* m : {&q, &k, &v}) {
        for (std::size_t i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-2.0, 2.0);
      }
      Tensor2 ones_mask(nq, nk);  // additive zeros == fully open
      worst = std::max(worst, max_abs_diff(masked_attention(q, k, v, &ones_mask, d),
                                           attention_reference_unmasked(q, k, v, d)));

      Tensor2 masked(nq, nk);
      for (int r = 0; r < nq; ++r) {
        for (int c = 1; c < nk; ++c) {
          if (rng.bernoulli(0.5)) masked(r, c) = -std::numeric_limits<double>::infinity();
        }
      }
      Tensor2 logits(nq, nk);
      matmul_nt_acc(logits, q, k, 1.0 / std::sqrt(static_cast<double>(d)));
      Tensor2 weights = softmax_rows_masked(logits, &masked);
      for (int r = 0; r < nq; ++r) {
        for (int c = 0; c < nk; ++c) {
          if (masked(r, c) < 0.0 && weights(r, c) != 0.0) exact_zero = false;
        }
      }
    }
    std::snprintf(detail, sizeof(detail), "max |diff| vs reference %.3e, masked weights exact-zero: %s",
                  worst, exact_zero ? "yes" : "no");
    results.push_back({"attention-reference", worst <= 1e-12 && exact_zero, detail});
  }

  // Composer against the per-pair enumeration, both normalization directions.
  {
    Rng rng(derive_seed(opt.seed, 4));
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
      auto g = random_tag(rng, 2 + static_cast<int>(rng.below(5)), 4, 0.5, 2, 16);
      std::vector<int> all(g.num_nodes());
      for (int v = 0; v < g.num_nodes(); ++v) all[v] = v;
      TfidfScorer scorer;
      scorer.fit(g, all);
      const int target = static_cast<int>(rng.below(g.num_nodes()));
      auto nbh = sample_neighborhood(g, target, 1, 39, derive_seed(opt.seed, 2000 + trial));
      auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);

      const int d = 6;
      Tensor2 hidden(seq.length(), d), wq(d, d), wk(d, d);
      for (auto* m : {&hidden, &wq, &wk}) {
        for (std::size_t i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-1.5, 1.5);
      }
      const double beta = rng.uniform(0.0, 1.0);
      for (NormDirection dir : {NormDirection::kOverQueries, NormDirection::kOverKeys}) {
        ParamStore store;
        ComposerParams cp;
        cp.wq = store.add("wq", wq);
        cp.wk = store.add("wk", wk);
        cp.wa = store.add("wa", Tensor2(d, 1));
        Tape t;
        ParamBinder bind = ParamBinder::frozen(t, store);
        auto got = compose_target(t, bind, cp, t.constant(hidden), seq, beta, dir, d);
        auto ref = composer_reference(hidden, seq, wq, wk, beta, dir, d);
        for (std::size_t q = 0; q < ref.mu.size(); ++q) {
          worst = std::max(worst, std::abs(t.val(got.mu)(0, static_cast<int>(q)) - ref.mu[q]));
          worst = std::max(worst,
                           std::abs(t.val(got.alpha_cen)(0, static_cast<int>(q)) - ref.alpha_cen[q]));
          worst = std::max(
              worst, std::abs(t.val(got.alpha_neigh)(0, static_cast<int>(q)) - ref.alpha_neigh[q]));
        }
        for (int c = 0; c < d; ++c) {
          worst = std::max(worst, std::abs(t.val(got.z)(0, c) - ref.z[c]));
        }
      }
    }
    std::snprintf(detail, sizeof(detail), "max |diff| vs enumeration %.3e", worst);
    results.push_back({"composer-enumeration", worst <= 1e-12, detail});
  }

  // Rank-based AUC against the pairwise count, exact equality.
  {
    Rng rng(derive_seed(opt.seed, 5));
    int mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const int n = 2 + static_cast<int>(rng.below(60));
      std::vector<double> scores(n);
      std::vector<int> labels(n);
      bool has0 = false, has1 = false;
      for (int i = 0; i < n; ++i) {
        scores[i] = static_cast<double>(rng.below(8));  // coarse grid forces ties
        labels[i] = rng.bernoulli(0.5) ? 1 : 0;
        (labels[i] ? has1 : has0) = true;
      }
      if (!has0 || !has1) {
        labels[0] = 0;
        labels[n - 1] = 1;
      }
      if (evaluate_auc(scores, labels) != auc_pairwise_reference(scores, labels)) ++mismatches;
    }
    std::snprintf(detail, sizeof(detail), "100 score sets, %d mismatches", mismatches);
    results.push_back({"auc-pairwise", mismatches == 0, detail});
  }

  // Gradient check: attention alone, then the full model under both stages.
  {
    Rng rng(derive_seed(opt.seed, 6));
    ParamStore store;
    Tensor2 q(4, 6), k(5, 6), v(5, 4);
    for (auto* m : {&q, &k, &v}) {
      for (std::size_t i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-1.0, 1.0);
    }
    const int qi = store.add("q", q), ki = store.add("k", k), vi = store.add("v", v);
    auto mask = std::make_shared<Tensor2>(Tensor2::zeros(4, 5));
    for (int r = 0; r < 4; ++r) {
      for (int c = 1; c < 5; ++c) {
        if (rng.bernoulli(0.4)) (*mask)(r, c) = -std::numeric_limits<double>::infinity();
      }
    }
    auto rep = gradcheck(store, {qi, ki, vi}, [&](Tape& t, ParamBinder& bind) {
      Var out = t.masked_attention(bind(qi), bind(ki), bind(vi), mask, 6.0);
      Var sq = t.hadamard(out, out);
      Var m = t.mean_rows(sq);
      return t.matmul(m, t.constant(Tensor2::filled(t.val(m).cols(), 1, 1.0)));
    });
    std::snprintf(detail, sizeof(detail), "max rel error %.3e over %d entries", rep.max_rel_error,
                  rep.checked_entries);
    results.push_back({"gradcheck-attention", rep.max_rel_error <= 1e-5, detail});
  }
  {
    auto rep1 = gradcheck_full_model(1);
    std::snprintf(detail, sizeof(detail), "max rel error %.3e over %d entries (worst %s)",
                  rep1.max_rel_error, rep1.checked_entries, rep1.worst_param.c_str());
    results.push_back({"gradcheck-model-stage1", rep1.max_rel_error <= 1e-4, detail});
    auto rep2 = gradcheck_full_model(2);
    std::snprintf(detail, sizeof(detail), "max rel error %.3e over %d entries (worst %s)",
                  rep2.max_rel_error, rep2.checked_entries, rep2.worst_param.c_str());
    results.push_back({"gradcheck-model-stage2", rep2.max_rel_error <= 1e-4, detail});
  }

  return results;
}

}  // namespace duconte::oracles
