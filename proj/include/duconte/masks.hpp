#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/preprocess.hpp"
#include "duconte/tensor.hpp"

namespace duconte {

enum class MaskGranularity { kWord, kNode };

inline const char* to_string(MaskGranularity g) {
  return g == MaskGranularity::kWord ? "word" : "node";
}

/// Square binary attention-visibility matrix. Entry 1 allows attention
/// between positions p and q. Always symmetric with a unit diagonal for
/// undirected topologies.
struct MaskMatrix {
  int n = 0;
  MaskGranularity granularity = MaskGranularity::kWord;
  std::vector<std::uint8_t> bits;  // n * n, row-major

  MaskMatrix() = default;
  MaskMatrix(int side, MaskGranularity g, std::uint8_t init = 0)
      : n(side), granularity(g), bits(static_cast<std::size_t>(side) * side, init) {
    check_arg(side >= 1, "MaskMatrix: side must be >= 1");
  }

  std::uint8_t at(int p, int q) const { return bits[static_cast<std::size_t>(p) * n + q]; }
  void set(int p, int q, std::uint8_t v) { bits[static_cast<std::size_t>(p) * n + q] = v; }
};

inline MaskMatrix all_ones_mask(int n, MaskGranularity g) { return MaskMatrix(n, g, 1); }

/// Word-token visibility: position pairs may attend iff either one is a
/// separator, or both belong to the same node, or their owner nodes are
/// adjacent in the graph.
inline MaskMatrix build_word_mask(const AssembledSequence& seq, const TextAttributedGraph& g) {
  const int n = seq.length();
  check_arg(n >= 1, "build_word_mask: empty sequence");
  for (int o : seq.owner) {
    check_arg(o < g.num_nodes(), "build_word_mask: owner node ", o, " missing from graph");
  }
  MaskMatrix mask(n, MaskGranularity::kWord);
  for (int p = 0; p < n; ++p) {
    for (int q = 0; q < n; ++q) {
      const int vp = seq.owner[p];
      const int vq = seq.owner[q];
      std::uint8_t visible = 0;
      if (vp < 0 || vq < 0) {
        visible = 1;  // separators see and are seen by everything
      } else if (vp == vq || g.connected(vp, vq)) {
        visible = 1;
      }
      mask.set(p, q, visible);
    }
  }
  return mask;
}

/// Node-granularity visibility over the ordered set S = [neighbors, target]:
/// rows m and n may attend iff they are the same node or adjacent nodes.
inline MaskMatrix build_node_mask(const Neighborhood& nbh, const TextAttributedGraph& g) {
  const auto ordered = nbh.ordered_set();
  const int n = static_cast<int>(ordered.size());
  check_arg(n >= 1, "build_node_mask: empty node set");
  MaskMatrix mask(n, MaskGranularity::kNode);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      const bool visible = ordered[a] == ordered[b] || g.connected(ordered[a], ordered[b]);
      mask.set(a, b, visible ? 1 : 0);
    }
  }
  return mask;
}

/// Converts the binary mask to its additive form: 1 -> 0.0, 0 -> -inf.
/// Attention kernels treat negative entries as excluded before
/// exponentiation, so masked positions receive weight exactly zero.
inline Tensor2 to_additive(const MaskMatrix& mask) {
  Tensor2 out(mask.n, mask.n);
  const double neg_inf = -std::numeric_limits<double>::infinity();
  for (int p = 0; p < mask.n; ++p) {
    for (int q = 0; q < mask.n; ++q) {
      out(p, q) = mask.at(p, q) ? 0.0 : neg_inf;
    }
  }
  return out;
}

/// Text dump: "granularity=<word|node> n=<n>" header, then one '0'/'1' row
/// per line.
inline std::string format_mask(const MaskMatrix& mask) {
  std::string out = "granularity=";
  out += to_string(mask.granularity);
  out += " n=" + std::to_string(mask.n) + "\n";
  for (int p = 0; p < mask.n; ++p) {
    for (int q = 0; q < mask.n; ++q) out += mask.at(p, q) ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace duconte
