#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/rng.hpp"

namespace duconte {

/// Dense row-major matrix of doubles. The only numeric container in the
/// library; vectors are 1xN or Nx1 tensors.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(int rows, int cols) : rows_(rows), cols_(cols), data_(check_size(rows, cols), 0.0) {}
  Tensor2(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_arg(data_.size() == check_size(rows, cols), "Tensor2: data length does not match shape");
  }

  static Tensor2 zeros(int rows, int cols) { return Tensor2(rows, cols); }

  static Tensor2 filled(int rows, int cols, double v) {
    Tensor2 t(rows, cols);
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor2 scalar(double v) { return filled(1, 1, v); }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double& at(int r, int c) {
    check_arg(r >= 0 && r < rows_ && c >= 0 && c < cols_, "Tensor2::at out of range");
    return (*this)(r, c);
  }
  double at(int r, int c) const {
    check_arg(r >= 0 && r < rows_ && c >= 0 && c < cols_, "Tensor2::at out of range");
    return (*this)(r, c);
  }

  std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double item() const {
    check_arg(rows_ == 1 && cols_ == 1, "Tensor2::item requires a 1x1 tensor");
    return data_[0];
  }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  bool operator==(const Tensor2& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  static std::size_t check_size(int rows, int cols) {
    check_arg(rows >= 0 && cols >= 0, "Tensor2: negative dimension");
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline Tensor2 transpose(const Tensor2& a) {
  Tensor2 out(a.cols(), a.rows());
  for (int r = 0; r < a.rows(); ++r) {
    for (int c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
  }
  return out;
}

/// c = a * b
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  check_arg(a.cols() == b.rows(), "matmul: inner dimensions differ (", a.cols(), " vs ", b.rows(), ")");
  Tensor2 c(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* crow = c.data() + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      const double av = a(i, kk);
      if (av == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

/// dst += scale * (a * b)
inline void matmul_nn_acc(Tensor2& dst, const Tensor2& a, const Tensor2& b, double scale = 1.0) {
  check_arg(a.cols() == b.rows() && dst.rows() == a.rows() && dst.cols() == b.cols(),
            "matmul_nn_acc: shape mismatch");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* drow = dst.data() + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      const double av = scale * a(i, kk);
      if (av == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) drow[j] += av * brow[j];
    }
  }
}

/// dst += scale * (a * b^T)
inline void matmul_nt_acc(Tensor2& dst, const Tensor2& a, const Tensor2& b, double scale = 1.0) {
  check_arg(a.cols() == b.cols() && dst.rows() == a.rows() && dst.cols() == b.rows(),
            "matmul_nt_acc: shape mismatch");
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    double* drow = dst.data() + static_cast<std::size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = b.data() + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      drow[j] += scale * acc;
    }
  }
}

/// dst += scale * (a^T * b)
inline void matmul_tn_acc(Tensor2& dst, const Tensor2& a, const Tensor2& b, double scale = 1.0) {
  check_arg(a.rows() == b.rows() && dst.rows() == a.cols() && dst.cols() == b.cols(),
            "matmul_tn_acc: shape mismatch");
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    const double* brow = b.data() + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      const double av = scale * arow[kk];
      if (av == 0.0) continue;
      double* drow = dst.data() + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) drow[j] += av * brow[j];
    }
  }
}

inline Tensor2 add(const Tensor2& a, const Tensor2& b) {
  check_arg(a.same_shape(b), "add: shape mismatch");
  Tensor2 c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline Tensor2 sub(const Tensor2& a, const Tensor2& b) {
  check_arg(a.same_shape(b), "sub: shape mismatch");
  Tensor2 c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

inline Tensor2 scale(const Tensor2& a, double s) {
  Tensor2 c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
  return c;
}

inline Tensor2 hadamard(const Tensor2& a, const Tensor2& b) {
  check_arg(a.same_shape(b), "hadamard: shape mismatch");
  Tensor2 c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

/// dst += scale * src
inline void axpy(Tensor2& dst, const Tensor2& src, double scale = 1.0) {
  check_arg(dst.same_shape(src), "axpy: shape mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += scale * src.data()[i];
}

inline double max_abs_diff(const Tensor2& a, const Tensor2& b) {
  check_arg(a.same_shape(b), "max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

/// Symmetric uniform init scaled by 1/sqrt(fan_in); fan_in is the row count
/// under the x*W row-vector convention.
inline Tensor2 uniform_init(int rows, int cols, Rng& rng) {
  Tensor2 t(rows, cols);
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) t(r, c) = rng.uniform(-bound, bound);
  }
  return t;
}

}  // namespace duconte
