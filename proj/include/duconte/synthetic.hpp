#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/rng.hpp"

namespace duconte {

/// Planted-homophily benchmark generator. Topology is a two-parameter
/// stochastic block model whose intra/inter edge probabilities are solved so
/// the expected label homophily hits `homophily` at the requested mean
/// degree. Texts carry a weak class signal: the first token of every node is
/// a class-pointer drawn from the node's own class pool with probability
/// p_self (otherwise from a uniformly random other class's pool), and the
/// remaining tokens are noise. At p_self = 1 the pointer always names the
/// true class; at p_self = 1/K it is uniform over classes and carries no
/// information.
struct SyntheticConfig {
  int num_nodes = 1000;
  int num_classes = 4;
  double homophily = 0.85;
  double mean_degree = 6.0;
  int vocab_size = 64;
  int class_pool_size = 4;
  double p_self = 0.55;
  double p_nbr = 0.55;  // neighborhood signal strength is induced via homophily
  int tokens_per_node = 4;
  std::uint64_t seed = 0;

  void validate() const {
    check_arg(num_classes >= 2, "synthetic: num_classes must be >= 2");
    check_arg(num_nodes >= num_classes, "synthetic: need at least one node per class");
    check_arg(homophily >= 0.0 && homophily <= 1.0, "synthetic: homophily must lie in [0, 1]");
    check_arg(mean_degree > 0.0, "synthetic: mean_degree must be positive");
    check_arg(p_self >= 0.0 && p_self <= 1.0, "synthetic: p_self must lie in [0, 1]");
    check_arg(p_nbr >= 0.0 && p_nbr <= 1.0, "synthetic: p_nbr must lie in [0, 1]");
    check_arg(tokens_per_node >= 1, "synthetic: tokens_per_node must be >= 1");
    check_arg(class_pool_size >= 1, "synthetic: class_pool_size must be >= 1");
    // Reserved ids + K class pools + a non-empty noise pool must fit.
    check_arg(vocab_size >= Vocabulary::kFirstContentId + num_classes * class_pool_size + 1,
              "synthetic: vocab_size ", vocab_size, " too small for ", num_classes, " pools of ",
              class_pool_size, " plus a noise pool");
  }

  int pool_begin(int cls) const { return Vocabulary::kFirstContentId + cls * class_pool_size; }
  int noise_begin() const { return Vocabulary::kFirstContentId + num_classes * class_pool_size; }
  int noise_size() const { return vocab_size - noise_begin(); }

  /// Class of a content token id, or -1 for noise tokens.
  int token_class(int token) const {
    if (token < Vocabulary::kFirstContentId || token >= noise_begin()) return -1;
    return (token - Vocabulary::kFirstContentId) / class_pool_size;
  }

  int label_of(int node) const { return node % num_classes; }
};

namespace detail {

struct SbmProbabilities {
  double p_intra;
  double p_inter;
};

inline SbmProbabilities solve_sbm(const SyntheticConfig& cfg) {
  const double n = cfg.num_nodes;
  // Round-robin labels: class sizes differ by at most one.
  std::vector<double> class_size(cfg.num_classes, 0.0);
  for (int v = 0; v < cfg.num_nodes; ++v) class_size[cfg.label_of(v)] += 1.0;
  double intra_pairs = 0.0;
  for (double s : class_size) intra_pairs += s * (s - 1.0) / 2.0;
  const double all_pairs = n * (n - 1.0) / 2.0;
  const double inter_pairs = all_pairs - intra_pairs;

  const double target_edges = n * cfg.mean_degree / 2.0;
  const double intra_edges = cfg.homophily * target_edges;
  const double inter_edges = (1.0 - cfg.homophily) * target_edges;

  check_arg(intra_edges == 0.0 || intra_pairs > 0.0,
            "synthetic: homophily ", cfg.homophily, " infeasible with no intra-class pairs");
  check_arg(inter_edges == 0.0 || inter_pairs > 0.0,
            "synthetic: homophily ", cfg.homophily, " infeasible with no inter-class pairs");
  SbmProbabilities p{};
  p.p_intra = intra_pairs > 0.0 ? intra_edges / intra_pairs : 0.0;
  p.p_inter = inter_pairs > 0.0 ? inter_edges / inter_pairs : 0.0;
  check_arg(p.p_intra <= 1.0, "synthetic: infeasible (homophily, degree) pair: intra probability ",
            p.p_intra, " > 1");
  check_arg(p.p_inter <= 1.0, "synthetic: infeasible (homophily, degree) pair: inter probability ",
            p.p_inter, " > 1");
  return p;
}

}  // namespace detail

inline TextAttributedGraph gen_synthetic_tag(const SyntheticConfig& cfg) {
  cfg.validate();
  const auto probs = detail::solve_sbm(cfg);
  Rng rng(cfg.seed);

  std::vector<int> labels(cfg.num_nodes);
  for (int v = 0; v < cfg.num_nodes; ++v) labels[v] = cfg.label_of(v);

  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < cfg.num_nodes; ++u) {
    for (int v = u + 1; v < cfg.num_nodes; ++v) {
      const double p = labels[u] == labels[v] ? probs.p_intra : probs.p_inter;
      if (p > 0.0 && rng.bernoulli(p)) edges.emplace_back(u, v);
    }
  }

  std::vector<std::vector<int>> texts(cfg.num_nodes);
  for (int v = 0; v < cfg.num_nodes; ++v) {
    // Class-pointer token first.
    int pointer_class = labels[v];
    if (!rng.bernoulli(cfg.p_self)) {
      const int shift = 1 + static_cast<int>(rng.below(cfg.num_classes - 1));
      pointer_class = (labels[v] + shift) % cfg.num_classes;
    }
    texts[v].push_back(cfg.pool_begin(pointer_class) +
                       static_cast<int>(rng.below(cfg.class_pool_size)));
    for (int i = 1; i < cfg.tokens_per_node; ++i) {
      texts[v].push_back(cfg.noise_begin() + static_cast<int>(rng.below(cfg.noise_size())));
    }
  }
  return TextAttributedGraph::build(cfg.num_nodes, edges, std::move(texts), std::move(labels),
                                    cfg.num_classes, cfg.vocab_size);
}

/// Best achievable accuracy of any classifier that sees only a node's own
/// tokens, estimated by Monte Carlo over the generative model with the exact
/// posterior. Ties earn fractional credit (1 / |argmax set|), which makes the
/// chance-level and fully-informative endpoints exact.
inline double bayes_self_only_accuracy(const SyntheticConfig& cfg, int mc_samples = 200000,
                                       std::uint64_t mc_seed = 0x62617965u) {
  cfg.validate();
  check_arg(mc_samples >= 100000, "bayes_self_only_accuracy: need at least 1e5 samples");
  Rng rng(mc_seed);

  std::vector<double> prior(cfg.num_classes, 0.0);
  for (int v = 0; v < cfg.num_nodes; ++v) prior[cfg.label_of(v)] += 1.0;
  for (auto& p : prior) p /= cfg.num_nodes;

  double credit = 0.0;
  std::vector<double> posterior(cfg.num_classes);
  for (int s = 0; s < mc_samples; ++s) {
    // Draw a node uniformly; its class follows the label assignment.
    const int node = static_cast<int>(rng.below(cfg.num_nodes));
    const int y = cfg.label_of(node);
    int pointer_class = y;
    if (!rng.bernoulli(cfg.p_self)) {
      const int shift = 1 + static_cast<int>(rng.below(cfg.num_classes - 1));
      pointer_class = (y + shift) % cfg.num_classes;
    }
    // Noise tokens have class-independent likelihood and cancel from the
    // posterior; only the pointer matters.
    for (int c = 0; c < cfg.num_classes; ++c) {
      const double like = c == pointer_class ? cfg.p_self : (1.0 - cfg.p_self) / (cfg.num_classes - 1);
      posterior[c] = prior[c] * like;
    }
    double best = posterior[0];
    for (double p : posterior) best = std::max(best, p);
    int n_arg = 0;
    bool y_in_argmax = false;
    for (int c = 0; c < cfg.num_classes; ++c) {
      if (posterior[c] == best) {
        ++n_arg;
        if (c == y) y_in_argmax = true;
      }
    }
    if (y_in_argmax) credit += 1.0 / n_arg;
  }
  return credit / mc_samples;
}

}  // namespace duconte
