#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "duconte/common.hpp"
#include "duconte/rng.hpp"

namespace duconte {

/// Bijective token-string <-> token-id mapping. Ids 0 and 1 are reserved for
/// the padding and separator tokens; content tokens start at id 2.
class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kSepId = 1;
  static constexpr int kFirstContentId = 2;

  Vocabulary() {
    add("[PAD]");
    add("[SEP]");
  }

  /// Registers a token and returns its id; re-adding returns the existing id.
  int add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    check_arg(it != index_.end(), "Vocabulary: unknown token '", token, "'");
    return it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  const std::string& token_of(int id) const {
    check_arg(id >= 0 && id < static_cast<int>(tokens_.size()), "Vocabulary: id ", id, " out of range");
    return tokens_[id];
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  /// Vocabulary with `size` total ids, content ids named tok2..tok<size-1>.
  static Vocabulary with_generic_tokens(int size) {
    check_arg(size >= kFirstContentId + 1, "Vocabulary: size must leave room for at least one content token");
    Vocabulary v;
    for (int i = kFirstContentId; i < size; ++i) v.add("tok" + std::to_string(i));
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Immutable text-attributed graph: undirected simple topology plus one
/// non-empty token sequence and one class label per node.
class TextAttributedGraph {
 public:
  static TextAttributedGraph build(int num_nodes,
                                   const std::vector<std::pair<int, int>>& edge_list,
                                   std::vector<std::vector<int>> texts,
                                   std::vector<int> labels,
                                   int num_classes,
                                   int vocab_size) {
    check_arg(num_nodes >= 1, "graph: num_nodes must be >= 1");
    check_arg(num_classes >= 1, "graph: num_classes must be >= 1");
    check_arg(vocab_size >= Vocabulary::kFirstContentId + 1, "graph: vocab_size too small for reserved ids");
    check_arg(static_cast<int>(texts.size()) == num_nodes,
              "graph: texts length ", texts.size(), " != num_nodes ", num_nodes);
    check_arg(static_cast<int>(labels.size()) == num_nodes,
              "graph: labels length ", labels.size(), " != num_nodes ", num_nodes);
    for (int v = 0; v < num_nodes; ++v) {
      check_arg(!texts[v].empty(), "graph: node ", v, " has an empty text");
      for (int t : texts[v]) {
        check_arg(t >= Vocabulary::kFirstContentId && t < vocab_size,
                  "graph: node ", v, " token id ", t, " outside content range [",
                  Vocabulary::kFirstContentId, ", ", vocab_size, ")");
      }
      check_arg(labels[v] >= 0 && labels[v] < num_classes,
                "graph: node ", v, " label ", labels[v], " outside [0, ", num_classes, ")");
    }

    // Symmetrize, drop self-loops, deduplicate.
    std::vector<std::pair<int, int>> canon;
    canon.reserve(edge_list.size());
    for (auto [u, v] : edge_list) {
      check_arg(u >= 0 && u < num_nodes, "graph: edge endpoint ", u, " out of range for ", num_nodes, " nodes");
      check_arg(v >= 0 && v < num_nodes, "graph: edge endpoint ", v, " out of range for ", num_nodes, " nodes");
      if (u == v) continue;  // self-loops silently dropped
      canon.emplace_back(std::min(u, v), std::max(u, v));
    }
    std::sort(canon.begin(), canon.end());
    canon.erase(std::unique(canon.begin(), canon.end()), canon.end());

    TextAttributedGraph g;
    g.num_nodes_ = num_nodes;
    g.num_classes_ = num_classes;
    g.vocab_size_ = vocab_size;
    g.edges_ = std::move(canon);
    g.texts_ = std::move(texts);
    g.labels_ = std::move(labels);
    g.adjacency_.assign(num_nodes, {});
    for (auto [u, v] : g.edges_) {
      g.adjacency_[u].push_back(v);
      g.adjacency_[v].push_back(u);
    }
    for (auto& nbrs : g.adjacency_) std::sort(nbrs.begin(), nbrs.end());
    return g;
  }

  int num_nodes() const { return num_nodes_; }
  int num_classes() const { return num_classes_; }
  int vocab_size() const { return vocab_size_; }
  std::size_t num_edges() const { return edges_.size(); }

  /// Canonical (u < v) deduplicated edge list, sorted.
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }

  /// Neighbors of v in ascending id order.
  const std::vector<int>& neighbors(int v) const {
    check_arg(v >= 0 && v < num_nodes_, "graph: node ", v, " out of range");
    return adjacency_[v];
  }

  int degree(int v) const { return static_cast<int>(neighbors(v).size()); }

  bool connected(int u, int v) const {
    check_arg(u >= 0 && u < num_nodes_ && v >= 0 && v < num_nodes_, "graph: node id out of range");
    const auto& nbrs = adjacency_[u];
    return std::binary_search(nbrs.begin(), nbrs.end(), v);
  }

  const std::vector<int>& text(int v) const {
    check_arg(v >= 0 && v < num_nodes_, "graph: node ", v, " out of range");
    return texts_[v];
  }

  const std::vector<std::vector<int>>& texts() const { return texts_; }

  int label(int v) const {
    check_arg(v >= 0 && v < num_nodes_, "graph: node ", v, " out of range");
    return labels_[v];
  }

  const std::vector<int>& labels() const { return labels_; }

 private:
  TextAttributedGraph() = default;

  int num_nodes_ = 0;
  int num_classes_ = 0;
  int vocab_size_ = 0;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<std::vector<int>> texts_;
  std::vector<int> labels_;
};

/// Fraction of edges whose endpoints share a label. Undefined (error) on an
/// empty edge set.
inline double homophily_ratio(const TextAttributedGraph& g) {
  check_arg(g.num_edges() >= 1, "homophily_ratio: graph has no edges");
  std::size_t same = 0;
  for (auto [u, v] : g.edges()) {
    if (g.label(u) == g.label(v)) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

/// All nodes at shortest-path distance in [1, k] from v, ascending id order.
inline std::vector<int> k_hop_neighbors(const TextAttributedGraph& g, int v, int k) {
  check_arg(v >= 0 && v < g.num_nodes(), "k_hop_neighbors: node ", v, " out of range");
  check_arg(k >= 1, "k_hop_neighbors: k must be >= 1");
  std::vector<int> dist(g.num_nodes(), -1);
  dist[v] = 0;
  std::vector<int> frontier{v};
  std::vector<int> result;
  for (int hop = 1; hop <= k && !frontier.empty(); ++hop) {
    std::vector<int> next;
    for (int u : frontier) {
      for (int w : g.neighbors(u)) {
        if (dist[w] < 0) {
          dist[w] = hop;
          next.push_back(w);
          result.push_back(w);
        }
      }
    }
    frontier = std::move(next);
  }
  std::sort(result.begin(), result.end());
  return result;
}

/// Disjoint train/val/test node-id sets; union covers all nodes.
struct NodeSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

/// Deterministic random split. Sizes are floor(n * fraction) with the
/// remainder assigned to train.
inline NodeSplit split_nodes(const TextAttributedGraph& g,
                             const std::array<double, 3>& fractions,
                             std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    check_arg(f >= 0.0, "split_nodes: negative fraction ", f);
    total += f;
  }
  check_arg(std::abs(total - 1.0) <= 1e-9, "split_nodes: fractions must sum to 1, got ", total);

  const int n = g.num_nodes();
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(seed);
  rng.shuffle(ids);

  int n_train = static_cast<int>(fractions[0] * n);
  int n_val = static_cast<int>(fractions[1] * n);
  int n_test = static_cast<int>(fractions[2] * n);
  n_train += n - (n_train + n_val + n_test);  // remainder goes to train

  NodeSplit split;
  split.train.assign(ids.begin(), ids.begin() + n_train);
  split.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  split.test.assign(ids.begin() + n_train + n_val, ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// JSON Lines graph format.
//
// Line 1 : {"num_nodes": N, "num_classes": K, "vocab_size": V}
// Then   : one {"id": i, "label": l, "tokens": [...]} object per node
// Then   : one {"edge": [u, v]} object per edge
//
// Token ids 0 and 1 are reserved (PAD, SEP); node texts use ids >= 2.
// ---------------------------------------------------------------------------

inline void save_graph_jsonl(const TextAttributedGraph& g, std::ostream& out) {
  nlohmann::json header = {
      {"num_nodes", g.num_nodes()}, {"num_classes", g.num_classes()}, {"vocab_size", g.vocab_size()}};
  out << header.dump() << "\n";
  for (int v = 0; v < g.num_nodes(); ++v) {
    nlohmann::json line = {{"id", v}, {"label", g.label(v)}, {"tokens", g.text(v)}};
    out << line.dump() << "\n";
  }
  for (auto [u, v] : g.edges()) {
    nlohmann::json line = {{"edge", {u, v}}};
    out << line.dump() << "\n";
  }
}

inline void save_graph_jsonl(const TextAttributedGraph& g, const std::string& path) {
  std::ofstream out(path);
  check_state(out.good(), "save_graph_jsonl: cannot open '", path, "' for writing");
  save_graph_jsonl(g, out);
  check_state(out.good(), "save_graph_jsonl: write to '", path, "' failed");
}

inline TextAttributedGraph load_graph_jsonl(std::istream& in) {
  auto parse_line = [](const std::string& line, int line_no) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      check_arg(false, "graph file line ", line_no, ": invalid JSON (", e.what(), ")");
      return nlohmann::json();  // unreachable
    }
  };

  std::string line;
  int line_no = 0;

  // Header.
  check_arg(static_cast<bool>(std::getline(in, line)), "graph file: empty input, missing header line");
  ++line_no;
  nlohmann::json header = parse_line(line, line_no);
  check_arg(header.is_object() && header.contains("num_nodes") && header.contains("num_classes") &&
                header.contains("vocab_size"),
            "graph file line 1: header must contain num_nodes, num_classes, vocab_size");
  const int num_nodes = header.at("num_nodes").get<int>();
  const int num_classes = header.at("num_classes").get<int>();
  const int vocab_size = header.at("vocab_size").get<int>();
  check_arg(num_nodes >= 1, "graph file line 1: num_nodes must be >= 1");

  std::vector<std::vector<int>> texts(num_nodes);
  std::vector<int> labels(num_nodes, -1);
  std::vector<bool> seen(num_nodes, false);
  std::vector<std::pair<int, int>> edges;
  bool in_edge_section = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = parse_line(line, line_no);
    check_arg(j.is_object(), "graph file line ", line_no, ": expected a JSON object");
    if (j.contains("edge")) {
      in_edge_section = true;
      const auto& e = j.at("edge");
      check_arg(e.is_array() && e.size() == 2, "graph file line ", line_no, ": edge must be a [u, v] pair");
      edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    } else if (j.contains("id")) {
      check_arg(!in_edge_section, "graph file line ", line_no, ": node line after edge section");
      check_arg(j.contains("label") && j.contains("tokens"),
                "graph file line ", line_no, ": node line must contain id, label, tokens");
      const int id = j.at("id").get<int>();
      check_arg(id >= 0 && id < num_nodes, "graph file line ", line_no, ": node id ", id, " out of range");
      check_arg(!seen[id], "graph file line ", line_no, ": duplicate node id ", id);
      seen[id] = true;
      labels[id] = j.at("label").get<int>();
      texts[id] = j.at("tokens").get<std::vector<int>>();
    } else {
      check_arg(false, "graph file line ", line_no, ": object is neither a node nor an edge line");
    }
  }
  for (int v = 0; v < num_nodes; ++v) {
    check_arg(seen[v], "graph file: node ", v, " missing");
  }
  return TextAttributedGraph::build(num_nodes, edges, std::move(texts), std::move(labels), num_classes,
                                    vocab_size);
}

inline TextAttributedGraph load_graph_jsonl(const std::string& path) {
  std::ifstream in(path);
  check_arg(in.good(), "load_graph_jsonl: cannot open '", path, "'");
  return load_graph_jsonl(in);
}

}  // namespace duconte
