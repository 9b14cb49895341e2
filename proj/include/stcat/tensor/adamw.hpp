#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "stcat/tensor/tensor.hpp"

namespace stcat {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// First and second moments per parameter plus the shared step counter.
template <typename S>
struct AdamWState {
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;
  std::size_t step = 0;

  void init(std::span<const Tensor<S>> params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.push_back(Tensor<S>::zeros(p.shape));
      v.push_back(Tensor<S>::zeros(p.shape));
    }
    step = 0;
  }
};

/// One AdamW update with decoupled weight decay: p <- p * (1 - lr * wd),
/// then p <- p - lr * m_hat / (sqrt(v_hat) + eps).
template <typename S>
void adamw_step(std::span<Tensor<S>* const> params, std::span<const Tensor<S>* const> grads,
                AdamWState<S>& state, const AdamWConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeError("adamw_step: " + std::to_string(params.size()) + " params but " +
                     std::to_string(grads.size()) + " grads");
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto* p : params) {
      state.m.push_back(Tensor<S>::zeros(p->shape));
      state.v.push_back(Tensor<S>::zeros(p->shape));
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const S decay = static_cast<S>(1.0 - cfg.lr * cfg.weight_decay);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S step_size = static_cast<S>(cfg.lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(cfg.eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<S>& p = *params[k];
    const Tensor<S>& g = *grads[k];
    if (p.shape != g.shape || state.m[k].shape != p.shape) {
      throw ShapeError("adamw_step: parameter " + std::to_string(k) + " shape " + to_string(p.shape) +
                       " vs gradient " + to_string(g.shape));
    }
    auto& m = state.m[k].data;
    auto& v = state.v[k].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (S(1) - b1) * g[i];
      v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
      p[i] *= decay;
      p[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

}  // namespace stcat
