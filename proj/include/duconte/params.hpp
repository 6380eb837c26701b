#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "duconte/common.hpp"
#include "duconte/tape.hpp"
#include "duconte/tensor.hpp"

namespace duconte {

/// Flat ordered collection of named parameter tensors. Index order is
/// creation order and is the canonical iteration order everywhere
/// (optimizer, gradient buffers, checkpoints), which keeps runs
/// deterministic.
class ParamStore {
 public:
  int add(const std::string& name, Tensor2 init) {
    check_arg(!index_.count(name), "ParamStore: duplicate parameter '", name, "'");
    const int idx = static_cast<int>(values_.size());
    names_.push_back(name);
    values_.push_back(std::move(init));
    index_.emplace(name, idx);
    return idx;
  }

  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    check_arg(it != index_.end(), "ParamStore: unknown parameter '", name, "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  int size() const { return static_cast<int>(values_.size()); }

  const std::string& name(int idx) const {
    check_arg(idx >= 0 && idx < size(), "ParamStore: index out of range");
    return names_[idx];
  }

  Tensor2& value(int idx) {
    check_arg(idx >= 0 && idx < size(), "ParamStore: index out of range");
    return values_[idx];
  }

  const Tensor2& value(int idx) const {
    check_arg(idx >= 0 && idx < size(), "ParamStore: index out of range");
    return values_[idx];
  }

  /// Snapshot / restore of a parameter subset (used for best-epoch rollback).
  std::vector<Tensor2> snapshot(const std::vector<int>& indices) const {
    std::vector<Tensor2> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(value(i));
    return out;
  }

  void restore(const std::vector<int>& indices, const std::vector<Tensor2>& snap) {
    check_arg(indices.size() == snap.size(), "ParamStore::restore: size mismatch");
    for (std::size_t i = 0; i < indices.size(); ++i) value(indices[i]) = snap[i];
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor2> values_;
  std::unordered_map<std::string, int> index_;
};

/// Binds store parameters into a tape on demand. Trainable parameters become
/// leaves (gradients tracked); everything else enters as a constant, so the
/// reverse pass never touches frozen weights. An empty mask means
/// "all trainable"; use ParamBinder::frozen for pure inference.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store, std::vector<bool> trainable = {})
      : tape_(&tape), store_(&store), trainable_(std::move(trainable)), bound_(store.size(), Var{}) {
    check_arg(trainable_.empty() || static_cast<int>(trainable_.size()) == store.size(),
              "ParamBinder: trainable mask size mismatch");
  }

  static ParamBinder frozen(Tape& tape, const ParamStore& store) {
    return ParamBinder(tape, store, std::vector<bool>(store.size(), false));
  }

  Var operator()(int idx) {
    check_arg(idx >= 0 && idx < static_cast<int>(bound_.size()), "ParamBinder: index out of range");
    if (!bound_[idx].valid()) {
      const bool train = trainable_.empty() || trainable_[idx];
      bound_[idx] = train ? tape_->leaf(store_->value(idx)) : tape_->constant(store_->value(idx));
    }
    return bound_[idx];
  }

  /// Accumulates d(loss)/d(param) into `acc` (aligned with the store) for
  /// every trainable parameter that was bound. Call after Tape::backward.
  void add_grads(std::vector<Tensor2>& acc, double scale = 1.0) const {
    check_arg(static_cast<int>(acc.size()) == store_->size(), "ParamBinder::add_grads: buffer size mismatch");
    for (int i = 0; i < static_cast<int>(bound_.size()); ++i) {
      if (!bound_[i].valid() || !tape_->needs_grad(bound_[i])) continue;
      if (acc[i].empty()) acc[i] = Tensor2(store_->value(i).rows(), store_->value(i).cols());
      axpy(acc[i], tape_->grad(bound_[i]), scale);
    }
  }

 private:
  Tape* tape_;
  const ParamStore* store_;
  std::vector<bool> trainable_;
  std::vector<Var> bound_;
};

inline std::vector<bool> trainable_mask(const ParamStore& store, const std::vector<int>& indices) {
  std::vector<bool> mask(store.size(), false);
  for (int i : indices) {
    check_arg(i >= 0 && i < store.size(), "trainable_mask: index out of range");
    mask[i] = true;
  }
  return mask;
}

inline std::vector<Tensor2> make_grad_buffers(const ParamStore& store) {
  return std::vector<Tensor2>(static_cast<std::size_t>(store.size()));
}

inline void zero_grad_buffers(std::vector<Tensor2>& grads) {
  for (auto& g : grads) {
    if (!g.empty()) g.fill(0.0);
  }
}

/// Adam with bias correction. Only the listed parameter indices are updated;
/// everything else in the store stays bit-identical.
class Adam {
 public:
  Adam(ParamStore& store, std::vector<int> trainable, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : store_(&store),
        trainable_(std::move(trainable)),
        lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    check_arg(lr > 0.0, "Adam: learning rate must be positive");
    m_.reserve(trainable_.size());
    v_.reserve(trainable_.size());
    for (int idx : trainable_) {
      const Tensor2& p = store.value(idx);
      m_.emplace_back(p.rows(), p.cols());
      v_.emplace_back(p.rows(), p.cols());
    }
  }

  const std::vector<int>& trainable() const { return trainable_; }

  /// One update from a store-aligned gradient buffer. Throws on non-finite
  /// gradients.
  void step(const std::vector<Tensor2>& grads) {
    check_arg(static_cast<int>(grads.size()) == store_->size(), "Adam::step: gradient buffer size mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < trainable_.size(); ++i) {
      const int idx = trainable_[i];
      const Tensor2& g = grads[idx];
      if (g.empty()) continue;  // parameter not touched by this batch
      Tensor2& p = store_->value(idx);
      check_arg(g.same_shape(p), "Adam::step: gradient shape mismatch for '", store_->name(idx), "'");
      check_state(g.all_finite(), "Adam::step: non-finite gradient for '", store_->name(idx), "'");
      Tensor2& m = m_[i];
      Tensor2& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = g.data()[k];
        m.data()[k] = beta1_ * m.data()[k] + (1.0 - beta1_) * gk;
        v.data()[k] = beta2_ * v.data()[k] + (1.0 - beta2_) * gk * gk;
        const double mhat = m.data()[k] / bc1;
        const double vhat = v.data()[k] / bc2;
        p.data()[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  ParamStore* store_;
  std::vector<int> trainable_;
  double lr_, beta1_, beta2_, eps_;
  std::vector<Tensor2> m_, v_;
  long t_ = 0;
};

}  // namespace duconte
