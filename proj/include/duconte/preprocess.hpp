#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/rng.hpp"

namespace duconte {

/// A target node together with its sampled neighbor list. The ordered set
/// S = [neighbors ascending, target last] fixes the row order used by the
/// sequence assembly and by the node-granularity encoder.
struct Neighborhood {
  int target = -1;
  std::vector<int> neighbors;  // ascending ids, no duplicates, target excluded

  int group_size() const { return static_cast<int>(neighbors.size()) + 1; }

  std::vector<int> ordered_set() const {
    std::vector<int> s = neighbors;
    s.push_back(target);
    return s;
  }
};

/// Samples the k-hop neighborhood of v, capped at `cap` nodes. When the hop
/// set exceeds the cap, closer hops take priority; the overflowing hop tier
/// is uniformly subsampled with the given seed. Output neighbors are sorted
/// ascending.
inline Neighborhood sample_neighborhood(const TextAttributedGraph& g, int v, int hops, int cap,
                                        std::uint64_t seed) {
  check_arg(hops >= 1, "sample_neighborhood: hops must be >= 1");
  check_arg(cap >= 0, "sample_neighborhood: cap must be >= 0");
  check_arg(v >= 0 && v < g.num_nodes(), "sample_neighborhood: node ", v, " out of range");

  // BFS by tiers so subsampling can respect hop distance.
  std::vector<int> dist(g.num_nodes(), -1);
  dist[v] = 0;
  std::vector<std::vector<int>> tiers;
  std::vector<int> frontier{v};
  for (int hop = 1; hop <= hops && !frontier.empty(); ++hop) {
    std::vector<int> next;
    for (int u : frontier) {
      for (int w : g.neighbors(u)) {
        if (dist[w] < 0) {
          dist[w] = hop;
          next.push_back(w);
        }
      }
    }
    std::sort(next.begin(), next.end());
    frontier = next;  // BFS always explores the full tier; the cap only limits what is kept
    tiers.push_back(std::move(next));
  }

  Neighborhood nbh;
  nbh.target = v;
  int remaining = cap;
  Rng rng(seed);
  for (const auto& tier : tiers) {
    if (remaining <= 0) break;
    if (static_cast<int>(tier.size()) <= remaining) {
      nbh.neighbors.insert(nbh.neighbors.end(), tier.begin(), tier.end());
      remaining -= static_cast<int>(tier.size());
    } else {
      auto picked = rng.sample_without_replacement(tier, static_cast<std::size_t>(remaining));
      nbh.neighbors.insert(nbh.neighbors.end(), picked.begin(), picked.end());
      remaining = 0;
    }
  }
  std::sort(nbh.neighbors.begin(), nbh.neighbors.end());
  return nbh;
}

/// Per-node token budget B = floor(context_limit / group_size) - 1, so that
/// (B + 1) * group_size <= context_limit leaves room for one separator per
/// node. Errors when the context cannot fit one token plus separator per node.
inline int token_budget(int group_size, int context_limit) {
  check_arg(group_size >= 1, "token_budget: group_size must be >= 1");
  check_arg(context_limit >= 2 * group_size,
            "token_budget: context limit ", context_limit, " too small for group of ", group_size,
            " (needs at least ", 2 * group_size, ")");
  return context_limit / group_size - 1;
}

/// Token importance scorer: smoothed TF-IDF fitted on a document corpus.
/// score(token) = tf_in_text * log(1 + N_docs / df). Tokens never seen during
/// fitting are treated as having df = 1 (maximally rare).
class TfidfScorer {
 public:
  TfidfScorer() = default;

  void fit(const std::vector<std::vector<int>>& docs, int vocab_size) {
    check_arg(!docs.empty(), "TfidfScorer::fit: empty corpus");
    check_arg(vocab_size >= 1, "TfidfScorer::fit: vocab_size must be >= 1");
    std::vector<int> df(vocab_size, 0);
    std::vector<int> mark(vocab_size, -1);
    for (std::size_t d = 0; d < docs.size(); ++d) {
      for (int t : docs[d]) {
        check_arg(t >= 0 && t < vocab_size, "TfidfScorer::fit: token id ", t, " out of range");
        if (mark[t] != static_cast<int>(d)) {
          mark[t] = static_cast<int>(d);
          ++df[t];
        }
      }
    }
    const double n_docs = static_cast<double>(docs.size());
    idf_.assign(vocab_size, 0.0);
    for (int t = 0; t < vocab_size; ++t) {
      const double df_eff = df[t] > 0 ? static_cast<double>(df[t]) : 1.0;
      idf_[t] = std::log(1.0 + n_docs / df_eff);
    }
    fitted_ = true;
  }

  /// Fit on the texts of the given node ids (typically the training split).
  void fit(const TextAttributedGraph& g, const std::vector<int>& node_ids) {
    check_arg(!node_ids.empty(), "TfidfScorer::fit: empty node set");
    std::vector<std::vector<int>> docs;
    docs.reserve(node_ids.size());
    for (int v : node_ids) docs.push_back(g.text(v));
    fit(docs, g.vocab_size());
  }

  bool fitted() const { return fitted_; }

  /// Per-position importance scores for a text; finite and non-negative.
  std::vector<double> score(const std::vector<int>& text) const {
    check_state(fitted_, "TfidfScorer: score() called before fit()");
    std::vector<double> scores(text.size(), 0.0);
    // Term frequency within this text.
    std::vector<std::pair<int, int>> counts;
    for (int t : text) {
      check_arg(t >= 0 && t < static_cast<int>(idf_.size()), "TfidfScorer: token id ", t, " out of range");
      auto it = std::find_if(counts.begin(), counts.end(), [t](auto& p) { return p.first == t; });
      if (it == counts.end()) {
        counts.emplace_back(t, 1);
      } else {
        ++it->second;
      }
    }
    for (std::size_t i = 0; i < text.size(); ++i) {
      const int t = text[i];
      auto it = std::find_if(counts.begin(), counts.end(), [t](auto& p) { return p.first == t; });
      scores[i] = static_cast<double>(it->second) * idf_[t];
    }
    return scores;
  }

 private:
  std::vector<double> idf_;
  bool fitted_ = false;
};

inline std::vector<double> score_tokens(const std::vector<int>& text, const TfidfScorer& scorer) {
  return scorer.score(text);
}

/// Keeps the top-`budget` positions by score (ties: earlier position wins)
/// and emits the survivors in their original order.
inline std::vector<int> truncate_preserve_order(const std::vector<int>& text,
                                                const std::vector<double>& scores, int budget) {
  check_arg(budget >= 1, "truncate_preserve_order: budget must be >= 1");
  check_arg(scores.size() == text.size(), "truncate_preserve_order: scores/text length mismatch");
  if (static_cast<int>(text.size()) <= budget) return text;

  std::vector<int> order(text.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  order.resize(budget);
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  out.reserve(budget);
  for (int pos : order) out.push_back(text[pos]);
  return out;
}

/// The concatenated neighborhood input sequence:
///   [nbr_1 tokens; SEP; ...; nbr_m tokens; SEP; target tokens]
/// 'owner' maps each position to its node id, or -1 for separators.
/// 'node_spans' lists each node's [begin, end) token span in S order
/// (neighbors ascending, target last).
struct AssembledSequence {
  std::vector<int> tokens;
  std::vector<int> owner;
  std::vector<std::pair<int, int>> node_spans;

  int length() const { return static_cast<int>(tokens.size()); }
  bool is_sep(int pos) const { return owner[pos] < 0; }

  int sep_count() const {
    int n = 0;
    for (int o : owner) {
      if (o < 0) ++n;
    }
    return n;
  }
};

inline AssembledSequence assemble_sequence(const Neighborhood& nbh, const TextAttributedGraph& g,
                                           int budget, const TfidfScorer& scorer) {
  check_arg(budget >= 1, "assemble_sequence: budget must be >= 1");
  AssembledSequence seq;
  const auto ordered = nbh.ordered_set();
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const int node = ordered[i];
    const auto& text = g.text(node);
    const auto kept = truncate_preserve_order(text, scorer.score(text), budget);
    const int begin = seq.length();
    for (int t : kept) {
      seq.tokens.push_back(t);
      seq.owner.push_back(node);
    }
    seq.node_spans.emplace_back(begin, seq.length());
    const bool is_target = (i + 1 == ordered.size());
    if (!is_target) {
      seq.tokens.push_back(Vocabulary::kSepId);
      seq.owner.push_back(-1);
    }
  }
  return seq;
}

inline nlohmann::json sequence_to_json(const AssembledSequence& seq) {
  nlohmann::json spans = nlohmann::json::array();
  for (auto [b, e] : seq.node_spans) spans.push_back({b, e});
  return nlohmann::json{{"tokens", seq.tokens}, {"owner", seq.owner}, {"spans", spans}};
}

}  // namespace duconte
