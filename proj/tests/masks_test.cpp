#include "duconte/masks.hpp"

#include <gtest/gtest.h>

#include <numeric>

#include "test_util.hpp"

using namespace duconte;

namespace {

TfidfScorer fit_all(const TextAttributedGraph& g) {
  std::vector<int> all(g.num_nodes());
  std::iota(all.begin(), all.end(), 0);
  TfidfScorer s;
  s.fit(g, all);
  return s;
}

// Clause-by-clause visibility oracle for the word-token mask.
MaskMatrix word_mask_oracle(const AssembledSequence& seq, const TextAttributedGraph& g) {
  MaskMatrix m(seq.length(), MaskGranularity::kWord);
  for (int p = 0; p < seq.length(); ++p) {
    for (int q = 0; q < seq.length(); ++q) {
      if (seq.is_sep(p) || seq.is_sep(q)) {
        m.set(p, q, 1);
      } else if (seq.owner[p] == seq.owner[q]) {
        m.set(p, q, 1);
      } else if (g.connected(seq.owner[p], seq.owner[q])) {
        m.set(p, q, 1);
      } else {
        m.set(p, q, 0);
      }
    }
  }
  return m;
}

MaskMatrix node_mask_oracle(const Neighborhood& nbh, const TextAttributedGraph& g) {
  auto s = nbh.ordered_set();
  MaskMatrix m(static_cast<int>(s.size()), MaskGranularity::kNode);
  for (std::size_t a = 0; a < s.size(); ++a) {
    for (std::size_t b = 0; b < s.size(); ++b) {
      const bool vis = s[a] == s[b] || g.connected(s[a], s[b]);
      m.set(static_cast<int>(a), static_cast<int>(b), vis ? 1 : 0);
    }
  }
  return m;
}

TEST(WordMask, TwoConnectedNodesFullyVisible) {
  auto g = TextAttributedGraph::build(2, {{0, 1}}, {{7}, {5}}, {0, 0}, 1, 16);
  auto scorer = fit_all(g);
  auto seq = assemble_sequence(Neighborhood{0, {1}}, g, 4, scorer);
  auto mask = build_word_mask(seq, g);
  ASSERT_EQ(mask.n, 3);
  for (int p = 0; p < 3; ++p) {
    for (int q = 0; q < 3; ++q) EXPECT_EQ(mask.at(p, q), 1);
  }
}

TEST(WordMask, NonAdjacentNeighborsBlockedSepOpen) {
  // Path a-b-c with target b: sequence [a, SEP, c, SEP, b].
  auto g = TextAttributedGraph::build(3, {{0, 1}, {1, 2}}, {{5}, {6}, {7}}, {0, 0, 0}, 1, 16);
  auto scorer = fit_all(g);
  auto seq = assemble_sequence(Neighborhood{1, {0, 2}}, g, 4, scorer);
  ASSERT_EQ(seq.length(), 5);
  auto mask = build_word_mask(seq, g);
  const int pos_a = 0, pos_c = 2, pos_b = 4;
  EXPECT_EQ(mask.at(pos_a, pos_c), 0);
  EXPECT_EQ(mask.at(pos_c, pos_a), 0);
  EXPECT_EQ(mask.at(pos_a, pos_b), 1);
  EXPECT_EQ(mask.at(pos_c, pos_b), 1);
  for (int sep : {1, 3}) {
    for (int q = 0; q < 5; ++q) {
      EXPECT_EQ(mask.at(sep, q), 1);
      EXPECT_EQ(mask.at(q, sep), 1);
    }
  }
}

TEST(WordMask, MatchesClauseOracleOnRandomGraphs) {
  Rng rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    auto g = testutil::random_tag(rng, 8, 4, 0.35, 2, 16);
    auto scorer = fit_all(g);
    const int target = static_cast<int>(rng.below(g.num_nodes()));
    auto nbh = sample_neighborhood(g, target, 2, 39, trial);
    auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);
    auto mask = build_word_mask(seq, g);
    auto oracle = word_mask_oracle(seq, g);
    EXPECT_EQ(mask.bits, oracle.bits);
  }
}

TEST(WordMask, OwnerMissingFromGraphIsAnError) {
  auto g = TextAttributedGraph::build(2, {{0, 1}}, {{7}, {5}}, {0, 0}, 1, 16);
  AssembledSequence seq;
  seq.tokens = {5};
  seq.owner = {9};
  seq.node_spans = {{0, 1}};
  EXPECT_THROW(build_word_mask(seq, g), std::invalid_argument);
}

TEST(NodeMask, SingleNode) {
  auto g = TextAttributedGraph::build(1, {}, {{5}}, {0}, 1, 16);
  auto mask = build_node_mask(Neighborhood{0, {}}, g);
  ASSERT_EQ(mask.n, 1);
  EXPECT_EQ(mask.at(0, 0), 1);
}

TEST(NodeMask, PathBlocksEndpointPair) {
  // Path a-b-c, target b, S order [a, c, b].
  auto g = TextAttributedGraph::build(3, {{0, 1}, {1, 2}}, {{5}, {6}, {7}}, {0, 0, 0}, 1, 16);
  auto mask = build_node_mask(Neighborhood{1, {0, 2}}, g);
  ASSERT_EQ(mask.n, 3);
  EXPECT_EQ(mask.at(0, 1), 0);
  EXPECT_EQ(mask.at(1, 0), 0);
  EXPECT_EQ(mask.at(0, 2), 1);
  EXPECT_EQ(mask.at(1, 2), 1);
  EXPECT_EQ(mask.at(2, 2), 1);
}

TEST(NodeMask, CliqueNeighborhoodAllOnes) {
  auto g = TextAttributedGraph::build(3, {{0, 1}, {1, 2}, {0, 2}}, {{5}, {6}, {7}}, {0, 0, 0}, 1, 16);
  auto mask = build_node_mask(Neighborhood{1, {0, 2}}, g);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) EXPECT_EQ(mask.at(a, b), 1);
  }
}

TEST(NodeMask, MatchesOracleOnRandomGraphs) {
  Rng rng(37);
  for (int trial = 0; trial < 60; ++trial) {
    auto g = testutil::random_tag(rng, 8, 3, 0.3, 2, 16);
    const int target = static_cast<int>(rng.below(g.num_nodes()));
    auto nbh = sample_neighborhood(g, target, 2, 39, trial);
    auto mask = build_node_mask(nbh, g);
    EXPECT_EQ(mask.bits, node_mask_oracle(nbh, g).bits);
  }
}

TEST(Masks, SymmetricWithUnitDiagonal) {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    auto g = testutil::random_tag(rng, 7, 3, 0.4, 2, 16);
    auto scorer = fit_all(g);
    const int target = static_cast<int>(rng.below(g.num_nodes()));
    auto nbh = sample_neighborhood(g, target, 2, 39, trial);
    auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);
    for (const auto& mask : {build_word_mask(seq, g), build_node_mask(nbh, g)}) {
      for (int p = 0; p < mask.n; ++p) {
        EXPECT_EQ(mask.at(p, p), 1);
        for (int q = 0; q < mask.n; ++q) EXPECT_EQ(mask.at(p, q), mask.at(q, p));
      }
    }
  }
}

TEST(Masks, WordMaskConstantWithinNodePairBlocks) {
  Rng rng(43);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = testutil::random_tag(rng, 6, 4, 0.4, 2, 16);
    auto scorer = fit_all(g);
    const int target = static_cast<int>(rng.below(g.num_nodes()));
    auto nbh = sample_neighborhood(g, target, 2, 39, trial);
    auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);
    auto mask = build_word_mask(seq, g);
    auto ordered = nbh.ordered_set();
    for (std::size_t i = 0; i < ordered.size(); ++i) {
      for (std::size_t j = 0; j < ordered.size(); ++j) {
        if (i == j) continue;
        auto [bi, ei] = seq.node_spans[i];
        auto [bj, ej] = seq.node_spans[j];
        const std::uint8_t expected = mask.at(bi, bj);
        for (int p = bi; p < ei; ++p) {
          for (int q = bj; q < ej; ++q) EXPECT_EQ(mask.at(p, q), expected);
        }
      }
    }
  }
}

TEST(Masks, CompleteNeighborhoodGivesAllOnes) {
  // 4-clique: every sampled set is complete.
  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < 4; ++u) {
    for (int v = u + 1; v < 4; ++v) edges.emplace_back(u, v);
  }
  auto g = TextAttributedGraph::build(4, edges, {{5}, {6}, {7}, {8}}, {0, 0, 0, 0}, 1, 16);
  auto scorer = fit_all(g);
  auto nbh = sample_neighborhood(g, 2, 2, 39, 0);
  auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);
  auto wm = build_word_mask(seq, g);
  auto nm = build_node_mask(nbh, g);
  for (int p = 0; p < wm.n; ++p) {
    for (int q = 0; q < wm.n; ++q) EXPECT_EQ(wm.at(p, q), 1);
  }
  for (int p = 0; p < nm.n; ++p) {
    for (int q = 0; q < nm.n; ++q) EXPECT_EQ(nm.at(p, q), 1);
  }
}

TEST(ToAdditive, ZeroAndNegInfEncoding) {
  MaskMatrix one(1, MaskGranularity::kNode, 1);
  auto a = to_additive(one);
  EXPECT_EQ(a(0, 0), 0.0);

  MaskMatrix eye(2, MaskGranularity::kWord);
  eye.set(0, 0, 1);
  eye.set(1, 1, 1);
  auto b = to_additive(eye);
  EXPECT_EQ(b(0, 0), 0.0);
  EXPECT_EQ(b(1, 1), 0.0);
  EXPECT_TRUE(std::isinf(b(0, 1)) && b(0, 1) < 0);
  EXPECT_TRUE(std::isinf(b(1, 0)) && b(1, 0) < 0);

  // Sign pattern recovers the binary mask.
  for (int p = 0; p < 2; ++p) {
    for (int q = 0; q < 2; ++q) {
      EXPECT_EQ(eye.at(p, q), b(p, q) < 0 ? 0 : 1);
    }
  }
}

TEST(FormatMask, HeaderAndRows) {
  MaskMatrix m(2, MaskGranularity::kWord);
  m.set(0, 0, 1);
  m.set(1, 1, 1);
  EXPECT_EQ(format_mask(m), "granularity=word n=2\n10\n01\n");
  MaskMatrix n(1, MaskGranularity::kNode, 1);
  EXPECT_EQ(format_mask(n), "granularity=node n=1\n1\n");
}

}  // namespace
