#include <gtest/gtest.h>

#include <cmath>

#include "duconte/model.hpp"
#include "duconte/oracles.hpp"
#include "test_util.hpp"

using namespace duconte;

namespace {

struct ComposerFixture {
  ParamStore store;
  ComposerParams cp;
};

ComposerFixture make_composer(int d, Rng& rng, bool identity = false) {
  ComposerFixture f;
  Tensor2 wq = identity ? Tensor2(d, d) : uniform_init(d, d, rng);
  Tensor2 wk = identity ? Tensor2(d, d) : uniform_init(d, d, rng);
  if (identity) {
    for (int i = 0; i < d; ++i) wq(i, i) = wk(i, i) = 1.0;
  }
  f.cp.wq = f.store.add("wq", wq);
  f.cp.wk = f.store.add("wk", wk);
  f.cp.wa = f.store.add("wa", uniform_init(d, 1, rng));
  return f;
}

// Sequence with one 1-token neighbor and a 2-token target:
// [nbr, SEP, t0, t1].
AssembledSequence two_token_target_sequence() {
  AssembledSequence seq;
  seq.tokens = {5, Vocabulary::kSepId, 6, 7};
  seq.owner = {0, -1, 1, 1};
  seq.node_spans = {{0, 1}, {2, 4}};
  return seq;
}

AssembledSequence lone_target_sequence(int len) {
  AssembledSequence seq;
  for (int i = 0; i < len; ++i) {
    seq.tokens.push_back(5 + i);
    seq.owner.push_back(0);
  }
  seq.node_spans = {{0, len}};
  return seq;
}

TEST(ComposeTarget, SingleTokenNoNeighborsGivesUnitImportance) {
  Rng rng(1);
  auto f = make_composer(4, rng);
  Tensor2 hidden = uniform_init(1, 4, rng);
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  auto out = compose_target(t, bind, f.cp, t.constant(hidden), lone_target_sequence(1), 0.7,
                            NormDirection::kOverQueries, 4);
  EXPECT_DOUBLE_EQ(t.val(out.mu)(0, 0), 1.0);
  for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(t.val(out.z)(0, c), hidden(0, c));
}

TEST(ComposeTarget, HandComputedTwoTokenCase) {
  // W_Q = W_K = identity, beta = 0.7, over_queries normalization; expected
  // values frozen from an independent per-pair enumeration.
  Rng rng(2);
  auto f = make_composer(2, rng, /*identity=*/true);
  Tensor2 hidden(4, 2);
  hidden(0, 0) = 1.0;
  hidden(0, 1) = 0.0;  // neighbor token
  hidden(1, 0) = 9.0;
  hidden(1, 1) = 9.0;  // SEP row, must be ignored
  hidden(2, 0) = 0.0;
  hidden(2, 1) = 1.0;  // target token 0
  hidden(3, 0) = 1.0;
  hidden(3, 1) = 1.0;  // target token 1
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  auto out = compose_target(t, bind, f.cp, t.constant(hidden), two_token_target_sequence(), 0.7,
                            NormDirection::kOverQueries, 2);

  EXPECT_NEAR(t.val(out.alpha_cen)(0, 0), 0.8022241853595719, 1e-12);
  EXPECT_NEAR(t.val(out.alpha_cen)(0, 1), 0.7517449217422769, 1e-12);
  EXPECT_NEAR(t.val(out.alpha_neigh)(0, 0), 0.1977758146404282, 1e-12);
  EXPECT_NEAR(t.val(out.alpha_neigh)(0, 1), 0.2482550782577231, 1e-12);
  EXPECT_NEAR(t.val(out.mu)(0, 0), 0.505046854726121, 1e-12);
  EXPECT_NEAR(t.val(out.mu)(0, 1), 0.494953145273879, 1e-12);
  EXPECT_NEAR(t.val(out.z)(0, 0), 0.494953145273879, 1e-12);
  EXPECT_NEAR(t.val(out.z)(0, 1), 1.0, 1e-12);
}

TEST(ComposeTarget, MatchesEnumerationOracleOnRandomInstances) {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    auto g = testutil::random_tag(rng, 5, 4, 0.5, 2, 16);
    std::vector<int> ids(g.num_nodes());
    std::iota(ids.begin(), ids.end(), 0);
    TfidfScorer scorer;
    scorer.fit(g, ids);
    const int target = static_cast<int>(rng.below(g.num_nodes()));
    auto nbh = sample_neighborhood(g, target, 2, 39, trial);
    auto seq = assemble_sequence(nbh, g, token_budget(nbh.group_size(), 64), scorer);

    const int d = 5;
    auto f = make_composer(d, rng);
    Tensor2 hidden(seq.length(), d);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data()[i] = rng.uniform(-1.5, 1.5);
    const double beta = rng.uniform(0.0, 1.0);
    for (auto dir : {NormDirection::kOverQueries, NormDirection::kOverKeys}) {
      Tape t;
      ParamBinder bind = ParamBinder::frozen(t, f.store);
      auto got = compose_target(t, bind, f.cp, t.constant(hidden), seq, beta, dir, d);
      auto ref = oracles::composer_reference(hidden, seq, f.store.value(f.cp.wq),
                                             f.store.value(f.cp.wk), beta, dir, d);
      for (std::size_t q = 0; q < ref.mu.size(); ++q) {
        EXPECT_NEAR(t.val(got.mu)(0, static_cast<int>(q)), ref.mu[q], 1e-12);
      }
      for (int c = 0; c < d; ++c) EXPECT_NEAR(t.val(got.z)(0, c), ref.z[c], 1e-12);
    }
  }
}

TEST(ComposeTarget, ImportanceComponentsAreProbabilityVectors) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_target = 1 + static_cast<int>(rng.below(4));
    const int n_nbr = static_cast<int>(rng.below(3));
    AssembledSequence seq;
    int pos = 0;
    for (int n = 0; n < n_nbr; ++n) {
      seq.tokens.push_back(5);
      seq.owner.push_back(n + 1);
      seq.node_spans.emplace_back(pos, pos + 1);
      ++pos;
      seq.tokens.push_back(Vocabulary::kSepId);
      seq.owner.push_back(-1);
      ++pos;
    }
    for (int i = 0; i < n_target; ++i) {
      seq.tokens.push_back(6 + i);
      seq.owner.push_back(0);
    }
    seq.node_spans.emplace_back(pos, pos + n_target);

    const int d = 4;
    auto f = make_composer(d, rng);
    Tensor2 hidden(seq.length(), d);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data()[i] = rng.uniform(-2.0, 2.0);
    const double beta = rng.uniform(0.0, 1.0);
    Tape t;
    ParamBinder bind = ParamBinder::frozen(t, f.store);
    auto out = compose_target(t, bind, f.cp, t.constant(hidden), seq, beta,
                              NormDirection::kOverQueries, d);

    double sum_cen = 0.0, sum_nei = 0.0, sum_mu = 0.0;
    for (int q = 0; q < n_target; ++q) {
      sum_cen += t.val(out.mu_cen)(0, q);
      sum_nei += t.val(out.mu_neigh)(0, q);
      sum_mu += t.val(out.mu)(0, q);
      // Per-key mass splits exactly between the two query pools.
      EXPECT_NEAR(t.val(out.alpha_cen)(0, q) + t.val(out.alpha_neigh)(0, q), 1.0, 1e-12);
    }
    EXPECT_NEAR(sum_cen, 1.0, 1e-12);
    EXPECT_NEAR(sum_nei, 1.0, 1e-12);
    EXPECT_NEAR(sum_mu, 1.0, 1e-12);

    // z stays inside the coordinate-wise hull of the target token rows.
    auto [tb, te] = seq.node_spans.back();
    for (int c = 0; c < d; ++c) {
      double lo = hidden(tb, c), hi = hidden(tb, c);
      for (int p = tb; p < te; ++p) {
        lo = std::min(lo, hidden(p, c));
        hi = std::max(hi, hidden(p, c));
      }
      EXPECT_GE(t.val(out.z)(0, c), lo - 1e-12);
      EXPECT_LE(t.val(out.z)(0, c), hi + 1e-12);
    }
  }
}

TEST(ComposeTarget, BetaEndpointsMatchVariantFormulas) {
  Rng rng(5);
  auto f = make_composer(4, rng);
  auto seq = two_token_target_sequence();
  Tensor2 hidden = uniform_init(4, 4, rng);
  for (auto dir : {NormDirection::kOverQueries, NormDirection::kOverKeys}) {
    Tape t;
    ParamBinder bind = ParamBinder::frozen(t, f.store);
    Var h = t.constant(hidden);
    auto full1 = compose_target(t, bind, f.cp, h, seq, 1.0, dir, 4);
    auto full0 = compose_target(t, bind, f.cp, h, seq, 0.0, dir, 4);
    auto any = compose_target(t, bind, f.cp, h, seq, 0.37, dir, 4);
    // beta = 1 reproduces the center-only importance bitwise; beta = 0 the
    // neighborhood-only importance.
    EXPECT_EQ(t.val(full1.mu), t.val(full1.mu_cen));
    EXPECT_EQ(t.val(full0.mu), t.val(full0.mu_neigh));
    EXPECT_EQ(t.val(full1.mu_cen), t.val(any.mu_cen));
  }
}

TEST(ComposeNeighbor, SingleTokenReturnsItsRow) {
  Rng rng(6);
  auto f = make_composer(4, rng);
  Tensor2 block = uniform_init(1, 4, rng);
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  Var z = compose_neighbor(t, bind, f.cp.wa, t.constant(block));
  for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(t.val(z)(0, c), block(0, c));
}

TEST(ComposeNeighbor, EqualScoresAverageTheRows) {
  Rng rng(7);
  auto f = make_composer(4, rng);
  Tensor2 block(2, 4);
  // Two rows with identical projection score: make row1 = row0 reversed and
  // w_a symmetric so the dot products coincide.
  Tensor2& wa = f.store.value(f.cp.wa);
  for (int c = 0; c < 4; ++c) wa(c, 0) = 0.25;
  block(0, 0) = 1.0;
  block(0, 1) = 2.0;
  block(0, 2) = 3.0;
  block(0, 3) = 4.0;
  block(1, 0) = 4.0;
  block(1, 1) = 3.0;
  block(1, 2) = 2.0;
  block(1, 3) = 1.0;
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  Var z = compose_neighbor(t, bind, f.cp.wa, t.constant(block));
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(t.val(z)(0, c), 0.5 * (block(0, c) + block(1, c)), 1e-14);
  }
}

TEST(ComposeNeighbor, MatchesDirectSoftmaxSumOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int len = 1 + static_cast<int>(rng.below(6));
    const int d = 3;
    auto f = make_composer(d, rng);
    Tensor2 block(len, d);
    for (std::size_t i = 0; i < block.size(); ++i) block.data()[i] = rng.uniform(-2.0, 2.0);
    Tape t;
    ParamBinder bind = ParamBinder::frozen(t, f.store);
    Var z = compose_neighbor(t, bind, f.cp.wa, t.constant(block));

    // Extended-precision direct evaluation.
    const Tensor2& wa = f.store.value(f.cp.wa);
    std::vector<long double> s(len);
    long double m = -1e30L;
    for (int p = 0; p < len; ++p) {
      long double acc = 0.0L;
      for (int c = 0; c < d; ++c) acc += static_cast<long double>(block(p, c)) * wa(c, 0);
      s[p] = acc;
      m = std::max(m, acc);
    }
    long double sum = 0.0L;
    for (auto& v : s) {
      v = std::exp(v - m);
      sum += v;
    }
    for (int c = 0; c < d; ++c) {
      long double acc = 0.0L;
      for (int p = 0; p < len; ++p) acc += (s[p] / sum) * block(p, c);
      EXPECT_NEAR(t.val(z)(0, c), static_cast<double>(acc), 1e-14);
    }
  }
}

TEST(UnifiedContext, SingleTargetTokenIsUnit) {
  Rng rng(9);
  auto f = make_composer(4, rng);
  Tensor2 hidden = uniform_init(1, 4, rng);
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  Var mu = unified_context_importance(t, bind, f.cp, t.constant(hidden), lone_target_sequence(1),
                                      NormDirection::kOverQueries, 4);
  EXPECT_DOUBLE_EQ(t.val(mu)(0, 0), 1.0);
}

TEST(UnifiedContext, OverQueriesNormalizationDegeneratesToUniform) {
  // Each key's column sums to one under over_queries, so the pooled mass is
  // constant across keys and the final softmax is exactly uniform.
  Rng rng(10);
  auto f = make_composer(4, rng);
  auto seq = two_token_target_sequence();
  Tensor2 hidden = uniform_init(4, 4, rng);
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  Var mu = unified_context_importance(t, bind, f.cp, t.constant(hidden), seq,
                                      NormDirection::kOverQueries, 4);
  EXPECT_NEAR(t.val(mu)(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(t.val(mu)(0, 1), 0.5, 1e-12);
}

TEST(UnifiedContext, OverKeysMatchesEnumerationOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto seq = two_token_target_sequence();
    const int d = 3;
    auto f = make_composer(d, rng);
    Tensor2 hidden(4, d);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden.data()[i] = rng.uniform(-1.0, 1.0);
    Tape t;
    ParamBinder bind = ParamBinder::frozen(t, f.store);
    Var mu = unified_context_importance(t, bind, f.cp, t.constant(hidden), seq,
                                        NormDirection::kOverKeys, d);
    auto ref = oracles::unified_importance_reference(hidden, seq, f.store.value(f.cp.wq),
                                                     f.store.value(f.cp.wk),
                                                     NormDirection::kOverKeys, d);
    for (std::size_t q = 0; q < ref.size(); ++q) {
      EXPECT_NEAR(t.val(mu)(0, static_cast<int>(q)), ref[q], 1e-12);
    }
  }
}

TEST(ComposeAll, RowOrderFollowsTheOrderedSet) {
  Rng rng(12);
  // Two neighbors (1 token each) and a 2-token target.
  AssembledSequence seq;
  seq.tokens = {5, Vocabulary::kSepId, 6, Vocabulary::kSepId, 7, 8};
  seq.owner = {2, -1, 3, -1, 0, 0};
  seq.node_spans = {{0, 1}, {2, 3}, {4, 6}};
  const int d = 4;
  auto f = make_composer(d, rng);
  Tensor2 hidden = uniform_init(6, d, rng);
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.heads = 1;

  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  Var h = t.constant(hidden);
  Var z_all = compose_all(t, bind, f.cp, h, seq, cfg);
  ASSERT_EQ(t.val(z_all).rows(), 3);

  // Rows 0 and 1 come from the neighbor composer, row 2 from the target
  // composer.
  Tensor2 row0(1, d), row1(1, d);
  for (int c = 0; c < d; ++c) {
    row0(0, c) = hidden(0, c);
    row1(0, c) = hidden(2, c);
  }
  for (int c = 0; c < d; ++c) {
    EXPECT_DOUBLE_EQ(t.val(z_all)(0, c), row0(0, c));  // single-token pooling is the row itself
    EXPECT_DOUBLE_EQ(t.val(z_all)(1, c), row1(0, c));
  }
  auto target = compose_target(t, bind, f.cp, h, seq, cfg.beta, cfg.norm_direction, d);
  for (int c = 0; c < d; ++c) EXPECT_DOUBLE_EQ(t.val(z_all)(2, c), t.val(target.z)(0, c));
}

TEST(ComposeAll, MeanPoolVariantAveragesEverySpan) {
  Rng rng(13);
  AssembledSequence seq;
  seq.tokens = {5, 6, Vocabulary::kSepId, 7, 8};
  seq.owner = {1, 1, -1, 0, 0};
  seq.node_spans = {{0, 2}, {3, 5}};
  const int d = 3;
  auto f = make_composer(d, rng);
  Tensor2 hidden = uniform_init(5, d, rng);
  ModelConfig cfg;
  cfg.d_model = d;
  cfg.heads = 1;
  cfg.variant = Variant::kMeanPool;

  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  Var z_all = compose_all(t, bind, f.cp, t.constant(hidden), seq, cfg);
  for (int c = 0; c < d; ++c) {
    EXPECT_NEAR(t.val(z_all)(0, c), 0.5 * (hidden(0, c) + hidden(1, c)), 1e-15);
    EXPECT_NEAR(t.val(z_all)(1, c), 0.5 * (hidden(3, c) + hidden(4, c)), 1e-15);
  }
}

TEST(ComposeTarget, EmptyTargetSpanIsAnError) {
  Rng rng(14);
  auto f = make_composer(3, rng);
  AssembledSequence seq;
  seq.tokens = {5};
  seq.owner = {0};
  seq.node_spans = {{0, 1}, {1, 1}};  // degenerate target span
  Tensor2 hidden = uniform_init(1, 3, rng);
  Tape t;
  ParamBinder bind = ParamBinder::frozen(t, f.store);
  EXPECT_THROW(
      compose_target(t, bind, f.cp, t.constant(hidden), seq, 0.5, NormDirection::kOverQueries, 3),
      std::invalid_argument);
}

}  // namespace
