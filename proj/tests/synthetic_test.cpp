#include "duconte/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace duconte;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.num_nodes = 200;
  cfg.num_classes = 4;
  cfg.homophily = 0.8;
  cfg.mean_degree = 6.0;
  cfg.vocab_size = 64;
  cfg.class_pool_size = 4;
  cfg.p_self = 0.55;
  cfg.tokens_per_node = 4;
  cfg.seed = 1;
  return cfg;
}

TEST(SyntheticConfig, ValidationCatchesBadSettings) {
  auto cfg = small_config();
  cfg.p_self = 1.2;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.vocab_size = 10;  // cannot fit 4 pools of 4 plus noise
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = small_config();
  cfg.num_classes = 1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(SyntheticConfig, InfeasibleHomophilyDegreePairIsAnError) {
  auto cfg = small_config();
  cfg.num_nodes = 10;
  cfg.num_classes = 2;
  cfg.homophily = 1.0;
  cfg.mean_degree = 9.5;  // needs more intra-class edges than pairs exist
  EXPECT_THROW(gen_synthetic_tag(cfg), std::invalid_argument);
}

TEST(Generator, FullHomophilyKeepsEveryEdgeIntraClass) {
  auto cfg = small_config();
  cfg.num_classes = 2;
  cfg.homophily = 1.0;
  auto g = gen_synthetic_tag(cfg);
  ASSERT_GE(g.num_edges(), 1u);
  EXPECT_DOUBLE_EQ(homophily_ratio(g), 1.0);
}

TEST(Generator, PlantedHomophilyIsRealizedWithinTolerance) {
  auto cfg = small_config();
  cfg.num_nodes = 2000;
  cfg.homophily = 0.8;
  cfg.mean_degree = 6.0;
  for (std::uint64_t seed : {0ull, 1ull}) {
    cfg.seed = seed;
    auto g = gen_synthetic_tag(cfg);
    EXPECT_NEAR(homophily_ratio(g), 0.8, 0.05);
    const double realized_degree = 2.0 * g.num_edges() / g.num_nodes();
    EXPECT_NEAR(realized_degree, 6.0, 1.2);
  }
}

TEST(Generator, DeterministicPerSeed) {
  auto cfg = small_config();
  auto a = gen_synthetic_tag(cfg);
  auto b = gen_synthetic_tag(cfg);
  EXPECT_EQ(a.edges(), b.edges());
  EXPECT_EQ(a.texts(), b.texts());
  cfg.seed = 2;
  auto c = gen_synthetic_tag(cfg);
  EXPECT_NE(a.edges(), c.edges());
}

TEST(Generator, TextLayoutPointerPlusNoise) {
  auto cfg = small_config();
  auto g = gen_synthetic_tag(cfg);
  for (int v = 0; v < g.num_nodes(); ++v) {
    const auto& text = g.text(v);
    ASSERT_EQ(static_cast<int>(text.size()), cfg.tokens_per_node);
    EXPECT_GE(cfg.token_class(text[0]), 0);  // first token always points at a class
    for (std::size_t i = 1; i < text.size(); ++i) {
      EXPECT_EQ(cfg.token_class(text[i]), -1) << "noise slot carries a class token";
    }
  }
}

TEST(Generator, FullSelfSignalMakesBagOfTokensPerfect) {
  auto cfg = small_config();
  cfg.p_self = 1.0;
  auto g = gen_synthetic_tag(cfg);
  int correct = 0;
  for (int v = 0; v < g.num_nodes(); ++v) {
    // Bag-of-tokens classifier: predict the class whose pool appears.
    int predicted = -1;
    int class_tokens = 0;
    for (int t : g.text(v)) {
      const int c = cfg.token_class(t);
      if (c >= 0) {
        predicted = c;
        ++class_tokens;
      }
    }
    EXPECT_GE(class_tokens, 1);
    if (predicted == g.label(v)) ++correct;
  }
  EXPECT_EQ(correct, g.num_nodes());
}

TEST(BayesBound, FullSignalIsExactlyOne) {
  auto cfg = small_config();
  cfg.p_self = 1.0;
  EXPECT_DOUBLE_EQ(bayes_self_only_accuracy(cfg, 100000), 1.0);
}

TEST(BayesBound, ChanceLevelSignalIsExactlyOneOverK) {
  auto cfg = small_config();
  cfg.p_self = 1.0 / cfg.num_classes;  // uniform pointer; num_nodes divisible by K
  EXPECT_DOUBLE_EQ(bayes_self_only_accuracy(cfg, 100000), 0.25);
}

TEST(BayesBound, ReferenceSignalSitsNearPSelf) {
  auto cfg = small_config();
  // One pointer token per node: the optimal self-only rule follows the
  // pointer, so the ceiling is p_self up to Monte Carlo noise.
  const double bound = bayes_self_only_accuracy(cfg, 200000);
  EXPECT_NEAR(bound, 0.55, 0.01);
}

TEST(BayesBound, DeterministicForFixedSeed) {
  auto cfg = small_config();
  EXPECT_DOUBLE_EQ(bayes_self_only_accuracy(cfg, 100000, 42),
                   bayes_self_only_accuracy(cfg, 100000, 42));
}

}  // namespace
