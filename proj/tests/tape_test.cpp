#include "duconte/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "duconte/nn.hpp"
#include "duconte/params.hpp"
#include "test_util.hpp"

using namespace duconte;

namespace {

Tensor2 random_tensor(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Tensor2 t(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) t(i, j) = rng.uniform(lo, hi);
  }
  return t;
}

// Reduce any tensor to a smooth scalar for finite-difference checks.
Var scalarize(Tape& t, Var x) {
  Var sq = t.hadamard(x, x);
  Var m = t.mean_rows(sq);
  return t.matmul(m, t.constant(Tensor2::filled(t.val(m).cols(), 1, 1.0)));
}

void expect_gradcheck_below(ParamStore& store, const std::vector<int>& idx, const LossFn& fn,
                            double bound) {
  auto rep = gradcheck(store, idx, fn, 1e-5);
  EXPECT_LE(rep.max_rel_error, bound)
      << "worst param " << rep.worst_param << "[" << rep.worst_flat_index << "] analytic "
      << rep.analytic << " numeric " << rep.numeric;
}

TEST(Tape, ValuesAndSimpleBackward) {
  Tape t;
  Var a = t.leaf(Tensor2::filled(2, 2, 3.0));
  Var b = t.leaf(Tensor2::filled(2, 2, 4.0));
  // scalarize = sum over columns of the row-mean of (a+b)^2 = 2 * 49.
  Var s = scalarize(t, t.add(a, b));
  EXPECT_DOUBLE_EQ(t.val(s).item(), 98.0);
  t.backward(s);
  // d/da = 2*(a+b)/rows = 7 per entry.
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(t.grad(a)(i, j), 7.0);
  }
}

TEST(Tape, ConstantsCarryNoGradients) {
  Tape t;
  Var a = t.leaf(Tensor2::filled(1, 2, 1.0));
  Var c = t.constant(Tensor2::filled(1, 2, 5.0));
  Var s = scalarize(t, t.hadamard(a, c));
  t.backward(s);
  EXPECT_FALSE(t.needs_grad(c));
  EXPECT_TRUE(t.needs_grad(a));
  EXPECT_THROW(t.grad(c), std::runtime_error);
}

TEST(Tape, ZeroScalePathGivesExactZeroGradients) {
  Tape t;
  Var a = t.leaf(Tensor2::filled(1, 3, 2.0));
  Var b = t.leaf(Tensor2::filled(1, 3, 7.0));
  Var o = t.add_scaled(a, b, 1.0, 0.0);
  Var s = scalarize(t, o);
  t.backward(s);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(t.grad(b)(0, j), 0.0);
}

TEST(Tape, MatmulTransposeHadamardGradcheck) {
  Rng rng(5);
  ParamStore store;
  const int a = store.add("a", random_tensor(rng, 3, 4));
  const int b = store.add("b", random_tensor(rng, 4, 2));
  const int c = store.add("c", random_tensor(rng, 2, 3));
  expect_gradcheck_below(store, {a, b, c}, [&](Tape& t, ParamBinder& bind) {
    Var m = t.matmul(bind(a), bind(b));           // 3x2
    Var w = t.hadamard(t.transpose(m), bind(c));  // 2x3
    return scalarize(t, w);
  }, 1e-7);
}

TEST(Tape, ElementwiseOpsGradcheck) {
  Rng rng(6);
  ParamStore store;
  const int a = store.add("a", random_tensor(rng, 2, 5, 0.2, 1.5));
  const int b = store.add("b", random_tensor(rng, 2, 5, 0.2, 1.5));
  expect_gradcheck_below(store, {a, b}, [&](Tape& t, ParamBinder& bind) {
    Var x = t.add_scaled(bind(a), bind(b), 0.3, 0.7);
    Var y = t.sub(t.scale(x, 2.0), bind(b));
    Var z = t.relu(y);
    return scalarize(t, z);
  }, 1e-7);
}

TEST(Tape, LayerNormGradcheck) {
  Rng rng(7);
  ParamStore store;
  const int x = store.add("x", random_tensor(rng, 3, 6));
  const int g = store.add("g", random_tensor(rng, 1, 6, 0.5, 1.5));
  const int b = store.add("b", random_tensor(rng, 1, 6));
  expect_gradcheck_below(store, {x, g, b}, [&](Tape& t, ParamBinder& bind) {
    return scalarize(t, t.layer_norm(bind(x), bind(g), bind(b)));
  }, 1e-6);
}

TEST(Tape, SelectRowsWithRepeatsGradcheck) {
  Rng rng(8);
  ParamStore store;
  const int table = store.add("table", random_tensor(rng, 5, 3));
  const std::vector<int> ids{1, 3, 1, 0, 1};  // repeats must accumulate
  expect_gradcheck_below(store, {table}, [&](Tape& t, ParamBinder& bind) {
    return scalarize(t, t.select_rows(bind(table), ids));
  }, 1e-7);
}

TEST(Tape, ConcatAndSliceGradcheck) {
  Rng rng(9);
  ParamStore store;
  const int a = store.add("a", random_tensor(rng, 2, 4));
  const int b = store.add("b", random_tensor(rng, 3, 4));
  const int c = store.add("c", random_tensor(rng, 5, 2));
  expect_gradcheck_below(store, {a, b, c}, [&](Tape& t, ParamBinder& bind) {
    Var rows = t.concat_rows({bind(a), bind(b)});              // 5x4
    Var cols = t.concat_cols({t.slice_cols(rows, 1, 3), bind(c)});  // 5x4
    return scalarize(t, t.slice_cols(cols, 0, 3));
  }, 1e-7);
}

TEST(Tape, MeanRowsAndBroadcastGradcheck) {
  Rng rng(10);
  ParamStore store;
  const int x = store.add("x", random_tensor(rng, 4, 3));
  const int r = store.add("r", random_tensor(rng, 1, 3));
  expect_gradcheck_below(store, {x, r}, [&](Tape& t, ParamBinder& bind) {
    Var y = t.add_row_broadcast(bind(x), bind(r));
    return scalarize(t, t.mean_rows(y));
  }, 1e-7);
}

TEST(Tape, SoftmaxRowsGradcheck) {
  Rng rng(11);
  ParamStore store;
  const int x = store.add("x", random_tensor(rng, 3, 5));
  expect_gradcheck_below(store, {x}, [&](Tape& t, ParamBinder& bind) {
    return scalarize(t, t.softmax_rows(bind(x)));
  }, 1e-6);
}

TEST(Tape, MaskedSoftmaxExactZerosAndRowSums) {
  Tensor2 logits(2, 4);
  logits(0, 0) = 5.0;
  logits(0, 1) = -2.0;
  logits(0, 2) = 100.0;  // masked out below
  logits(1, 3) = 1.0;
  Tensor2 additive = Tensor2::zeros(2, 4);
  additive(0, 2) = -std::numeric_limits<double>::infinity();
  auto p = softmax_rows_masked(logits, &additive);
  EXPECT_EQ(p(0, 2), 0.0);
  for (int r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += p(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Tape, FullyMaskedRowIsAnError) {
  Tensor2 logits(1, 2);
  Tensor2 additive(1, 2);
  additive(0, 0) = additive(0, 1) = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(softmax_rows_masked(logits, &additive), std::invalid_argument);
}

TEST(Tape, MaskedAttentionGradcheck) {
  Rng rng(12);
  ParamStore store;
  const int q = store.add("q", random_tensor(rng, 4, 6));
  const int k = store.add("k", random_tensor(rng, 5, 6));
  const int v = store.add("v", random_tensor(rng, 5, 3));
  // Random mask with at least one open key per query row.
  auto mask = std::make_shared<Tensor2>(Tensor2::zeros(4, 5));
  for (int r = 0; r < 4; ++r) {
    for (int c = 1; c < 5; ++c) {
      if (rng.bernoulli(0.4)) (*mask)(r, c) = -std::numeric_limits<double>::infinity();
    }
  }
  expect_gradcheck_below(store, {q, k, v}, [&](Tape& t, ParamBinder& bind) {
    return scalarize(t, t.masked_attention(bind(q), bind(k), bind(v), mask, 6.0));
  }, 1e-5);
}

TEST(Tape, CrossEntropyClosedForms) {
  Tensor2 equal = Tensor2::zeros(1, 5);
  auto r1 = cross_entropy(equal, 2);
  EXPECT_NEAR(r1.loss, std::log(5.0), 1e-12);

  Tensor2 dominant(1, 3);
  dominant(0, 1) = 60.0;
  auto r2 = cross_entropy(dominant, 1);
  EXPECT_LT(r2.loss, 1e-12);
  EXPECT_NEAR(r2.probs(0, 1), 1.0, 1e-12);
}

TEST(Tape, CrossEntropyMatchesExtendedPrecisionOracle) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(6));
    Tensor2 logits = random_tensor(rng, 1, k, -4.0, 4.0);
    const int label = static_cast<int>(rng.below(k));
    auto got = cross_entropy(logits, label);

    long double sum = 0.0L;
    for (int c = 0; c < k; ++c) sum += std::exp(static_cast<long double>(logits(0, c)));
    const long double expected = -std::log(std::exp(static_cast<long double>(logits(0, label))) / sum);
    EXPECT_NEAR(got.loss, static_cast<double>(expected), 1e-13);
  }
}

TEST(Tape, CrossEntropyGradcheck) {
  Rng rng(14);
  ParamStore store;
  const int x = store.add("x", random_tensor(rng, 1, 6));
  expect_gradcheck_below(store, {x}, [&](Tape& t, ParamBinder& bind) {
    return t.cross_entropy_logits(bind(x), 2);
  }, 1e-7);
}

TEST(Tape, MeanCrossEntropyRowsGradcheck) {
  Rng rng(15);
  ParamStore store;
  const int x = store.add("x", random_tensor(rng, 6, 4));
  const std::vector<int> labels{0, 1, 2, 3, 0, 1};
  const std::vector<int> rows{0, 2, 5};
  expect_gradcheck_below(store, {x}, [&](Tape& t, ParamBinder& bind) {
    return t.mean_cross_entropy_rows(bind(x), labels, rows);
  }, 1e-7);
}

TEST(Tape, BceClosedFormsAndOracle) {
  EXPECT_NEAR(bce_with_logits(0.0, 1.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(bce_with_logits(0.0, 0.0), std::log(2.0), 1e-15);

  Rng rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const double s = rng.uniform(-8.0, 8.0);
    const double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const long double ls = s;
    const long double p = 1.0L / (1.0L + std::exp(-ls));
    const long double expected = y > 0.5 ? -std::log(p) : -std::log(1.0L - p);
    EXPECT_NEAR(bce_with_logits(s, y), static_cast<double>(expected), 1e-12);
  }
}

TEST(Tape, BceGradcheck) {
  Rng rng(17);
  ParamStore store;
  const int x = store.add("x", random_tensor(rng, 1, 1));
  for (double target : {0.0, 1.0}) {
    expect_gradcheck_below(store, {x}, [&](Tape& t, ParamBinder& bind) {
      return t.bce_with_logits(bind(x), target);
    }, 1e-7);
  }
}

TEST(Tape, NeighborMeanValuesAndGradcheck) {
  Rng rng(18);
  // Path 0-1-2 plus isolated node 3.
  auto g = TextAttributedGraph::build(4, {{0, 1}, {1, 2}}, {{5}, {5}, {5}, {5}}, {0, 0, 0, 0}, 1, 16);
  Tensor2 x = random_tensor(rng, 4, 3);
  {
    Tape t;
    Var out = t.neighbor_mean(t.constant(x), g);
    for (int c = 0; c < 3; ++c) {
      EXPECT_NEAR(t.val(out)(1, c), 0.5 * (x(0, c) + x(2, c)), 1e-15);
      EXPECT_EQ(t.val(out)(3, c), 0.0);  // isolated node aggregates zero
    }
  }
  ParamStore store;
  const int xi = store.add("x", x);
  expect_gradcheck_below(store, {xi}, [&](Tape& t, ParamBinder& bind) {
    return scalarize(t, t.neighbor_mean(bind(x == x ? xi : xi), g));
  }, 1e-7);
}

TEST(Tape, BackwardRejectsNonFiniteLoss) {
  Tape t;
  Var a = t.leaf(Tensor2::scalar(std::numeric_limits<double>::quiet_NaN()));
  Var s = t.scale(a, 1.0);
  EXPECT_THROW(t.backward(s), std::runtime_error);
}

TEST(Tape, BackwardRequiresScalarRoot) {
  Tape t;
  Var a = t.leaf(Tensor2::filled(2, 2, 1.0));
  EXPECT_THROW(t.backward(a), std::invalid_argument);
}

}  // namespace
