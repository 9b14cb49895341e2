#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stcat/tensor/ops.hpp"
#include "stcat/tensor/tape.hpp"

namespace stcat {

struct ParamId {
  std::size_t index = 0;
};

/// Named, ordered collection of learnable tensors with gradient buffers.
template <typename S>
class ParameterStore {
 public:
  ParamId add(const std::string& name, Tensor<S> value) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
    index_[name] = names_.size();
    names_.push_back(name);
    grads_.push_back(Tensor<S>::zeros(value.shape));
    values_.push_back(std::move(value));
    return ParamId{names_.size() - 1};
  }

  std::size_t size() const { return values_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<ParamId> find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return ParamId{it->second};
  }

  Tensor<S>& value(ParamId id) { return values_.at(id.index); }
  const Tensor<S>& value(ParamId id) const { return values_.at(id.index); }
  Tensor<S>& value(const std::string& name) { return values_.at(require(name).index); }
  Tensor<S>& grad(ParamId id) { return grads_.at(id.index); }
  const Tensor<S>& grad(ParamId id) const { return grads_.at(id.index); }

  std::vector<Tensor<S>>& values() { return values_; }
  const std::vector<Tensor<S>>& values() const { return values_; }
  std::vector<Tensor<S>>& grads() { return grads_; }

  void zero_grad() {
    for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), S(0));
  }

  /// Same names and shapes, values converted to another scalar type.
  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  ParamId require(const std::string& name) const {
    auto id = find(name);
    if (!id) throw std::out_of_range("unknown parameter: " + name);
    return *id;
  }

  std::vector<std::string> names_;
  std::vector<Tensor<S>> values_;
  std::vector<Tensor<S>> grads_;
  std::map<std::string, std::size_t> index_;
};

/// Seeded initializer. Xavier-uniform for matrices, zeros for biases.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename S>
  Tensor<S> xavier(std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<S> t(Shape{fan_in, fan_out});
    for (auto& v : t.data) v = static_cast<S>(dist(rng_));
    return t;
  }

  template <typename S>
  Tensor<S> normal(Shape shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor<S> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<S>(dist(rng_));
    return t;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Binds store parameters onto one tape for a single forward pass.
template <typename S>
class Graph {
 public:
  Graph(Tape<S>& tape, const ParameterStore<S>& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable), bound_(store.size()) {}

  Tape<S>& tape() { return tape_; }
  bool trainable() const { return trainable_; }

  Var<S> param(ParamId id) {
    auto& slot = bound_.at(id.index);
    if (!slot) {
      slot = trainable_ ? tape_.variable(store_.value(id)) : tape_.constant(store_.value(id));
    }
    return *slot;
  }

  Var<S> constant(Tensor<S> t) { return tape_.constant(std::move(t)); }

  /// Adds the tape gradients of every bound parameter into `store`'s buffers.
  void accumulate_grads(ParameterStore<S>& store) const {
    for (std::size_t i = 0; i < bound_.size(); ++i) {
      if (!bound_[i]) continue;
      const auto& g = tape_.output_grad(bound_[i]->id());
      if (g.empty()) continue;
      auto& dst = store.grad(ParamId{i}).data;
      for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
    }
  }

  /// Dropout with probability p; identity when p == 0 or not trainable.
  Var<S> dropout(Var<S> x, double p) {
    if (p <= 0.0 || !trainable_ || !dropout_rng_) return x;
    std::bernoulli_distribution keep(1.0 - p);
    Tensor<S> mask(x.shape());
    for (auto& m : mask.data) m = keep(*dropout_rng_) ? static_cast<S>(1.0 / (1.0 - p)) : S(0);
    return mul(x, constant(std::move(mask)));
  }

  void set_dropout_rng(std::mt19937_64* rng) { dropout_rng_ = rng; }

 private:
  Tape<S>& tape_;
  const ParameterStore<S>& store_;
  bool trainable_;
  std::vector<std::optional<Var<S>>> bound_;
  std::mt19937_64* dropout_rng_ = nullptr;
};

}  // namespace stcat
