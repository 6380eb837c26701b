#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/graph.hpp"
#include "duconte/tensor.hpp"

namespace duconte {

/// Row-wise softmax with an optional additive mask whose entries are 0.0
/// (valid) or -inf (excluded). Excluded entries never enter the
/// max-subtraction or the exponential sum, so their probability is exactly
/// zero. A row with no valid entry is an error.
inline Tensor2 softmax_rows_masked(const Tensor2& logits, const Tensor2* additive) {
  if (additive) {
    check_arg(additive->same_shape(logits), "softmax: mask shape ", additive->rows(), "x",
              additive->cols(), " does not match logits ", logits.rows(), "x", logits.cols());
  }
  auto valid = [&](int r, int c) { return !additive || !((*additive)(r, c) < 0.0); };
  Tensor2 probs(logits.rows(), logits.cols());
  for (int r = 0; r < logits.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (int c = 0; c < logits.cols(); ++c) {
      if (valid(r, c)) {
        any = true;
        m = std::max(m, logits(r, c));
      }
    }
    check_arg(any, "softmax: row ", r, " is fully masked");
    double sum = 0.0;
    for (int c = 0; c < logits.cols(); ++c) {
      if (valid(r, c)) {
        const double w = std::exp(logits(r, c) - m);
        probs(r, c) = w;
        sum += w;
      }
    }
    for (int c = 0; c < logits.cols(); ++c) {
      if (valid(r, c)) probs(r, c) /= sum;
    }
  }
  return probs;
}

/// loss = -log softmax(logits)[label], stabilized by max subtraction.
/// Also returns the softmax probabilities.
inline std::pair<double, Tensor2> cross_entropy_with_probs(const Tensor2& logits, int label) {
  check_arg(logits.rows() == 1, "cross_entropy: logits must be a 1xK row");
  check_arg(label >= 0 && label < logits.cols(), "cross_entropy: label ", label, " out of range");
  check_arg(logits.all_finite(), "cross_entropy: non-finite logits");
  double m = logits(0, 0);
  for (int c = 1; c < logits.cols(); ++c) m = std::max(m, logits(0, c));
  double sum = 0.0;
  Tensor2 probs(1, logits.cols());
  for (int c = 0; c < logits.cols(); ++c) {
    probs(0, c) = std::exp(logits(0, c) - m);
    sum += probs(0, c);
  }
  for (int c = 0; c < logits.cols(); ++c) probs(0, c) /= sum;
  const double loss = std::log(sum) + m - logits(0, label);
  return {loss, probs};
}

/// Binary cross-entropy on a raw score, in the stable log-sum-exp form.
inline double bce_with_logits_value(double score, double target) {
  check_arg(std::isfinite(score), "bce_with_logits: non-finite score");
  check_arg(target == 0.0 || target == 1.0, "bce_with_logits: target must be 0 or 1");
  return std::max(score, 0.0) - score * target + std::log1p(std::exp(-std::abs(score)));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Handle into a Tape node.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Reverse-mode differentiation over Tensor2-valued operations. Values are
/// computed eagerly; backward() replays recorded closures in reverse
/// creation order (which is a topological order, since ops only reference
/// earlier nodes). Nodes that no leaf feeds into carry no closure and are
/// skipped entirely.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor2 v) { return push(std::move(v), true); }
  Var constant(Tensor2 v) { return push(std::move(v), false); }
  Var constant_scalar(double v) { return constant(Tensor2::scalar(v)); }

  const Tensor2& val(Var v) const { return node(v).value; }

  /// Gradient of the last backward() root with respect to this node.
  const Tensor2& grad(Var v) const {
    const Node& n = node(v);
    check_state(n.needs_grad, "Tape::grad: node does not require gradients");
    check_state(!n.grad.empty(), "Tape::grad: call backward() first");
    return n.grad;
  }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  std::size_t size() const { return nodes_.size(); }

  // ---- elementwise / affine ----

  Var add(Var a, Var b) {
    Var o = push(duconte::add(val(a), val(b)), wants(a) || wants(b));
    attach(o, [o, a, b](Tape& t) {
      if (t.wants(a)) axpy(t.g(a), t.g(o));
      if (t.wants(b)) axpy(t.g(b), t.g(o));
    });
    return o;
  }

  Var sub(Var a, Var b) {
    Var o = push(duconte::sub(val(a), val(b)), wants(a) || wants(b));
    attach(o, [o, a, b](Tape& t) {
      if (t.wants(a)) axpy(t.g(a), t.g(o));
      if (t.wants(b)) axpy(t.g(b), t.g(o), -1.0);
    });
    return o;
  }

  /// sa * a + sb * b
  Var add_scaled(Var a, Var b, double sa, double sb) {
    check_arg(val(a).same_shape(val(b)), "add_scaled: shape mismatch");
    Tensor2 out = duconte::scale(val(a), sa);
    axpy(out, val(b), sb);
    Var o = push(std::move(out), wants(a) || wants(b));
    attach(o, [o, a, b, sa, sb](Tape& t) {
      if (t.wants(a)) axpy(t.g(a), t.g(o), sa);
      if (t.wants(b)) axpy(t.g(b), t.g(o), sb);
    });
    return o;
  }

  Var scale(Var a, double s) {
    Var o = push(duconte::scale(val(a), s), wants(a));
    attach(o, [o, a, s](Tape& t) {
      if (t.wants(a)) axpy(t.g(a), t.g(o), s);
    });
    return o;
  }

  Var hadamard(Var a, Var b) {
    Var o = push(duconte::hadamard(val(a), val(b)), wants(a) || wants(b));
    attach(o, [o, a, b](Tape& t) {
      if (t.wants(a)) {
        Tensor2 d = duconte::hadamard(t.g(o), t.val(b));
        axpy(t.g(a), d);
      }
      if (t.wants(b)) {
        Tensor2 d = duconte::hadamard(t.g(o), t.val(a));
        axpy(t.g(b), d);
      }
    });
    return o;
  }

  Var relu(Var a) {
    Tensor2 out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out.data()[i] < 0.0) out.data()[i] = 0.0;
    }
    Var o = push(std::move(out), wants(a));
    attach(o, [o, a](Tape& t) {
      if (!t.wants(a)) return;
      const Tensor2& x = t.val(a);
      const Tensor2& go = t.g(o);
      Tensor2& ga = t.g(a);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.data()[i] > 0.0) ga.data()[i] += go.data()[i];
      }
    });
    return o;
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    Var o = push(duconte::matmul(val(a), val(b)), wants(a) || wants(b));
    attach(o, [o, a, b](Tape& t) {
      if (t.wants(a)) matmul_nt_acc(t.g(a), t.g(o), t.val(b));
      if (t.wants(b)) matmul_tn_acc(t.g(b), t.val(a), t.g(o));
    });
    return o;
  }

  Var transpose(Var a) {
    Var o = push(duconte::transpose(val(a)), wants(a));
    attach(o, [o, a](Tape& t) {
      if (t.wants(a)) axpy(t.g(a), duconte::transpose(t.g(o)));
    });
    return o;
  }

  /// Row dot product of two 1xD vectors, as a 1x1 scalar.
  Var dot(Var a, Var b) { return matmul(a, transpose(b)); }

  // ---- shape ops ----

  Var select_rows(Var a, std::vector<int> rows) {
    const Tensor2& x = val(a);
    Tensor2 out(static_cast<int>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      check_arg(rows[i] >= 0 && rows[i] < x.rows(), "select_rows: row ", rows[i], " out of range");
      for (int c = 0; c < x.cols(); ++c) out(static_cast<int>(i), c) = x(rows[i], c);
    }
    Var o = push(std::move(out), wants(a));
    attach(o, [o, a, rows = std::move(rows)](Tape& t) {
      if (!t.wants(a)) return;
      const Tensor2& go = t.g(o);
      Tensor2& ga = t.g(a);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int c = 0; c < go.cols(); ++c) ga(rows[i], c) += go(static_cast<int>(i), c);
      }
    });
    return o;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    check_arg(!parts.empty(), "concat_rows: no inputs");
    const int cols = val(parts[0]).cols();
    int rows = 0;
    bool ng = false;
    for (Var p : parts) {
      check_arg(val(p).cols() == cols, "concat_rows: column mismatch");
      rows += val(p).rows();
      ng = ng || wants(p);
    }
    Tensor2 out(rows, cols);
    int at = 0;
    for (Var p : parts) {
      const Tensor2& x = val(p);
      for (int r = 0; r < x.rows(); ++r, ++at) {
        for (int c = 0; c < cols; ++c) out(at, c) = x(r, c);
      }
    }
    Var o = push(std::move(out), ng);
    attach(o, [o, parts](Tape& t) {
      const Tensor2& go = t.g(o);
      int at = 0;
      for (Var p : parts) {
        const int pr = t.val(p).rows();
        if (t.wants(p)) {
          Tensor2& gp = t.g(p);
          for (int r = 0; r < pr; ++r) {
            for (int c = 0; c < go.cols(); ++c) gp(r, c) += go(at + r, c);
          }
        }
        at += pr;
      }
    });
    return o;
  }

  Var slice_cols(Var a, int c0, int c1) {
    const Tensor2& x = val(a);
    check_arg(0 <= c0 && c0 < c1 && c1 <= x.cols(), "slice_cols: bad range [", c0, ", ", c1, ")");
    Tensor2 out(x.rows(), c1 - c0);
    for (int r = 0; r < x.rows(); ++r) {
      for (int c = c0; c < c1; ++c) out(r, c - c0) = x(r, c);
    }
    Var o = push(std::move(out), wants(a));
    attach(o, [o, a, c0](Tape& t) {
      if (!t.wants(a)) return;
      const Tensor2& go = t.g(o);
      Tensor2& ga = t.g(a);
      for (int r = 0; r < go.rows(); ++r) {
        for (int c = 0; c < go.cols(); ++c) ga(r, c0 + c) += go(r, c);
      }
    });
    return o;
  }

  Var concat_cols(const std::vector<Var>& parts) {
    check_arg(!parts.empty(), "concat_cols: no inputs");
    const int rows = val(parts[0]).rows();
    int cols = 0;
    bool ng = false;
    for (Var p : parts) {
      check_arg(val(p).rows() == rows, "concat_cols: row mismatch");
      cols += val(p).cols();
      ng = ng || wants(p);
    }
    Tensor2 out(rows, cols);
    int at = 0;
    for (Var p : parts) {
      const Tensor2& x = val(p);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < x.cols(); ++c) out(r, at + c) = x(r, c);
      }
      at += x.cols();
    }
    Var o = push(std::move(out), ng);
    attach(o, [o, parts](Tape& t) {
      const Tensor2& go = t.g(o);
      int at = 0;
      for (Var p : parts) {
        const int pc = t.val(p).cols();
        if (t.wants(p)) {
          Tensor2& gp = t.g(p);
          for (int r = 0; r < go.rows(); ++r) {
            for (int c = 0; c < pc; ++c) gp(r, c) += go(r, at + c);
          }
        }
        at += pc;
      }
    });
    return o;
  }

  /// Column-wise mean over rows: (n x d) -> (1 x d).
  Var mean_rows(Var a) {
    const Tensor2& x = val(a);
    check_arg(x.rows() >= 1, "mean_rows: empty input");
    Tensor2 out(1, x.cols());
    for (int r = 0; r < x.rows(); ++r) {
      for (int c = 0; c < x.cols(); ++c) out(0, c) += x(r, c);
    }
    const double inv = 1.0 / x.rows();
    for (int c = 0; c < x.cols(); ++c) out(0, c) *= inv;
    Var o = push(std::move(out), wants(a));
    attach(o, [o, a, inv](Tape& t) {
      if (!t.wants(a)) return;
      const Tensor2& go = t.g(o);
      Tensor2& ga = t.g(a);
      for (int r = 0; r < ga.rows(); ++r) {
        for (int c = 0; c < ga.cols(); ++c) ga(r, c) += inv * go(0, c);
      }
    });
    return o;
  }

  /// x + row broadcast over every row of x; row is 1 x d.
  Var add_row_broadcast(Var x, Var row) {
    const Tensor2& xv = val(x);
    const Tensor2& rv = val(row);
    check_arg(rv.rows() == 1 && rv.cols() == xv.cols(), "add_row_broadcast: row shape mismatch");
    Tensor2 out = xv;
    for (int r = 0; r < out.rows(); ++r) {
      for (int c = 0; c < out.cols(); ++c) out(r, c) += rv(0, c);
    }
    Var o = push(std::move(out), wants(x) || wants(row));
    attach(o, [o, x, row](Tape& t) {
      const Tensor2& go = t.g(o);
      if (t.wants(x)) axpy(t.g(x), go);
      if (t.wants(row)) {
        Tensor2& gr = t.g(row);
        for (int r = 0; r < go.rows(); ++r) {
          for (int c = 0; c < go.cols(); ++c) gr(0, c) += go(r, c);
        }
      }
    });
    return o;
  }

  // ---- normalization / attention ----

  /// Row-wise layer normalization with learnable gain and bias (each 1 x d).
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-9) {
    const Tensor2& xv = val(x);
    const Tensor2& gv = val(gain);
    const Tensor2& bv = val(bias);
    check_arg(gv.rows() == 1 && gv.cols() == xv.cols(), "layer_norm: gain shape mismatch");
    check_arg(bv.rows() == 1 && bv.cols() == xv.cols(), "layer_norm: bias shape mismatch");
    const int n = xv.rows(), d = xv.cols();
    Tensor2 xhat(n, d);
    std::vector<double> inv_std(n);
    for (int r = 0; r < n; ++r) {
      double mu = 0.0;
      for (int c = 0; c < d; ++c) mu += xv(r, c);
      mu /= d;
      double var = 0.0;
      for (int c = 0; c < d; ++c) {
        const double dv = xv(r, c) - mu;
        var += dv * dv;
      }
      var /= d;
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[r] = inv;
      for (int c = 0; c < d; ++c) xhat(r, c) = (xv(r, c) - mu) * inv;
    }
    Tensor2 out(n, d);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < d; ++c) out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
    }
    Var o = push(std::move(out), wants(x) || wants(gain) || wants(bias));
    attach(o, [o, x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t) {
      const Tensor2& go = t.g(o);
      const Tensor2& gv = t.val(gain);
      const int n = go.rows(), d = go.cols();
      if (t.wants(gain)) {
        Tensor2& gg = t.g(gain);
        for (int r = 0; r < n; ++r) {
          for (int c = 0; c < d; ++c) gg(0, c) += go(r, c) * xhat(r, c);
        }
      }
      if (t.wants(bias)) {
        Tensor2& gb = t.g(bias);
        for (int r = 0; r < n; ++r) {
          for (int c = 0; c < d; ++c) gb(0, c) += go(r, c);
        }
      }
      if (t.wants(x)) {
        Tensor2& gx = t.g(x);
        for (int r = 0; r < n; ++r) {
          double h1 = 0.0, h2 = 0.0;
          for (int c = 0; c < d; ++c) {
            const double dxh = go(r, c) * gv(0, c);
            h1 += dxh;
            h2 += dxh * xhat(r, c);
          }
          h1 /= d;
          h2 /= d;
          for (int c = 0; c < d; ++c) {
            const double dxh = go(r, c) * gv(0, c);
            gx(r, c) += inv_std[r] * (dxh - h1 - xhat(r, c) * h2);
          }
        }
      }
    });
    return o;
  }

  Var softmax_rows(Var a) {
    Var o = push(softmax_rows_masked(val(a), nullptr), wants(a));
    attach(o, [o, a](Tape& t) {
      if (t.wants(a)) softmax_backward(t.val(o), t.g(o), t.g(a));
    });
    return o;
  }

  /// Fused scaled-dot-product attention: softmax(Q K^T / sqrt(d_k) + M) V.
  /// `additive` may be null (no mask); entries are 0 or -inf. Masked keys
  /// receive attention weight exactly zero.
  Var masked_attention(Var q, Var k, Var v, std::shared_ptr<const Tensor2> additive, double d_k) {
    const Tensor2& qv = val(q);
    const Tensor2& kv = val(k);
    const Tensor2& vv = val(v);
    check_arg(qv.cols() == kv.cols(), "masked_attention: Q/K width mismatch");
    check_arg(kv.rows() == vv.rows(), "masked_attention: K/V row mismatch");
    check_arg(d_k > 0.0, "masked_attention: d_k must be positive");
    if (additive) {
      check_arg(additive->rows() == qv.rows() && additive->cols() == kv.rows(),
                "masked_attention: mask must be queries x keys");
    }
    const double inv_scale = 1.0 / std::sqrt(d_k);
    Tensor2 logits(qv.rows(), kv.rows());
    matmul_nt_acc(logits, qv, kv, inv_scale);
    Tensor2 probs = softmax_rows_masked(logits, additive.get());
    Tensor2 out = duconte::matmul(probs, vv);
    Var o = push(std::move(out), wants(q) || wants(k) || wants(v));
    attach(o, [o, q, k, v, probs = std::move(probs), inv_scale](Tape& t) {
      const Tensor2& go = t.g(o);
      if (t.wants(v)) matmul_tn_acc(t.g(v), probs, go);
      if (!t.wants(q) && !t.wants(k)) return;
      Tensor2 dprobs(probs.rows(), probs.cols());
      matmul_nt_acc(dprobs, go, t.val(v));
      Tensor2 dlogits(probs.rows(), probs.cols());
      softmax_backward(probs, dprobs, dlogits);
      if (t.wants(q)) matmul_nn_acc(t.g(q), dlogits, t.val(k), inv_scale);
      if (t.wants(k)) matmul_tn_acc(t.g(k), dlogits, t.val(q), inv_scale);
    });
    return o;
  }

  // ---- losses ----

  Var cross_entropy_logits(Var logits, int label) {
    auto [loss, probs] = cross_entropy_with_probs(val(logits), label);
    Var o = push(Tensor2::scalar(loss), wants(logits));
    attach(o, [o, logits, label, probs = std::move(probs)](Tape& t) {
      if (!t.wants(logits)) return;
      const double gs = t.g(o).item();
      Tensor2& gl = t.g(logits);
      for (int c = 0; c < probs.cols(); ++c) {
        gl(0, c) += gs * (probs(0, c) - (c == label ? 1.0 : 0.0));
      }
    });
    return o;
  }

  /// Mean cross-entropy over a subset of rows of an (N x K) logit matrix.
  Var mean_cross_entropy_rows(Var logits, const std::vector<int>& labels,
                              const std::vector<int>& rows) {
    const Tensor2& lv = val(logits);
    check_arg(!rows.empty(), "mean_cross_entropy_rows: empty row subset");
    check_arg(static_cast<int>(labels.size()) == lv.rows(),
              "mean_cross_entropy_rows: labels length mismatch");
    Tensor2 probs(static_cast<int>(rows.size()), lv.cols());
    std::vector<std::pair<int, int>> row_label;
    row_label.reserve(rows.size());
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int r = rows[i];
      check_arg(r >= 0 && r < lv.rows(), "mean_cross_entropy_rows: row ", r, " out of range");
      Tensor2 one(1, lv.cols());
      for (int c = 0; c < lv.cols(); ++c) one(0, c) = lv(r, c);
      auto [loss, p] = cross_entropy_with_probs(one, labels[r]);
      total += loss;
      for (int c = 0; c < lv.cols(); ++c) probs(static_cast<int>(i), c) = p(0, c);
      row_label.emplace_back(r, labels[r]);
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    Var o = push(Tensor2::scalar(total * inv), wants(logits));
    attach(o, [o, logits, probs = std::move(probs), row_label = std::move(row_label), inv](Tape& t) {
      if (!t.wants(logits)) return;
      const double gs = t.g(o).item() * inv;
      Tensor2& gl = t.g(logits);
      for (std::size_t i = 0; i < row_label.size(); ++i) {
        const auto [r, y] = row_label[i];
        for (int c = 0; c < gl.cols(); ++c) {
          gl(r, c) += gs * (probs(static_cast<int>(i), c) - (c == y ? 1.0 : 0.0));
        }
      }
    });
    return o;
  }

  Var bce_with_logits(Var score, double target) {
    const double s = val(score).item();
    Var o = push(Tensor2::scalar(bce_with_logits_value(s, target)), wants(score));
    attach(o, [o, score, s, target](Tape& t) {
      if (!t.wants(score)) return;
      t.g(score)(0, 0) += t.g(o).item() * (sigmoid(s) - target);
    });
    return o;
  }

  // ---- graph aggregation ----

  /// Per-node mean of neighbor feature rows; isolated nodes get a zero row.
  /// The graph must outlive the tape.
  Var neighbor_mean(Var x, const TextAttributedGraph& graph) {
    const Tensor2& xv = val(x);
    check_arg(xv.rows() == graph.num_nodes(), "neighbor_mean: feature rows != num_nodes");
    Tensor2 out(xv.rows(), xv.cols());
    for (int v = 0; v < graph.num_nodes(); ++v) {
      const auto& nbrs = graph.neighbors(v);
      if (nbrs.empty()) continue;
      const double inv = 1.0 / static_cast<double>(nbrs.size());
      for (int u : nbrs) {
        for (int c = 0; c < xv.cols(); ++c) out(v, c) += xv(u, c);
      }
      for (int c = 0; c < xv.cols(); ++c) out(v, c) *= inv;
    }
    Var o = push(std::move(out), wants(x));
    const TextAttributedGraph* gp = &graph;
    attach(o, [o, x, gp](Tape& t) {
      if (!t.wants(x)) return;
      const Tensor2& go = t.g(o);
      Tensor2& gx = t.g(x);
      for (int v = 0; v < gp->num_nodes(); ++v) {
        const auto& nbrs = gp->neighbors(v);
        if (nbrs.empty()) continue;
        const double inv = 1.0 / static_cast<double>(nbrs.size());
        for (int u : nbrs) {
          for (int c = 0; c < go.cols(); ++c) gx(u, c) += inv * go(v, c);
        }
      }
    });
    return o;
  }

  // ---- reverse pass ----

  void backward(Var root) {
    Node& rn = node_mut(root);
    check_arg(rn.value.rows() == 1 && rn.value.cols() == 1, "backward: root must be a scalar");
    check_state(std::isfinite(rn.value.item()), "backward: non-finite loss value");
    check_state(rn.needs_grad, "backward: root does not depend on any leaf");
    for (int i = 0; i <= root.idx; ++i) {
      Node& nd = nodes_[i];
      if (nd.needs_grad) nd.grad = Tensor2(nd.value.rows(), nd.value.cols());
    }
    rn.grad(0, 0) = 1.0;
    for (int i = root.idx; i >= 0; --i) {
      Node& nd = nodes_[i];
      if (nd.needs_grad && nd.back) nd.back(*this);
    }
  }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  static void softmax_backward(const Tensor2& probs, const Tensor2& dprobs, Tensor2& dlogits) {
    for (int r = 0; r < probs.rows(); ++r) {
      double inner = 0.0;
      for (int c = 0; c < probs.cols(); ++c) inner += probs(r, c) * dprobs(r, c);
      for (int c = 0; c < probs.cols(); ++c) {
        dlogits(r, c) += probs(r, c) * (dprobs(r, c) - inner);
      }
    }
  }

  const Node& node(Var v) const {
    check_arg(v.valid() && v.idx < static_cast<int>(nodes_.size()), "Tape: invalid Var");
    return nodes_[v.idx];
  }

  Node& node_mut(Var v) {
    check_arg(v.valid() && v.idx < static_cast<int>(nodes_.size()), "Tape: invalid Var");
    return nodes_[v.idx];
  }

  bool wants(Var v) const { return nodes_[v.idx].needs_grad; }

  Tensor2& g(Var v) { return nodes_[v.idx].grad; }

  Var push(Tensor2 value, bool needs_grad) {
    Var v{static_cast<int>(nodes_.size())};
    nodes_.push_back(Node{std::move(value), {}, needs_grad, nullptr});
    return v;
  }

  template <typename Fn>
  void attach(Var v, Fn&& fn) {
    if (nodes_[v.idx].needs_grad) nodes_[v.idx].back = std::forward<Fn>(fn);
  }

  std::vector<Node> nodes_;
};

}  // namespace duconte
