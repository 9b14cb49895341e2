#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "stcat/model.hpp"

namespace stcat::io {

struct GradientAudit {
  double worst = 0;        // max |analytic - fd| / max(|analytic|, |fd|, floor)
  std::string worst_at;    // "name[index]"
  double analytic = 0, numeric = 0;
  std::size_t coordinates = 0;
};

/// Full-model check of d total_loss / d theta against central differences
/// over every parameter coordinate, in double precision. Zero-initialized
/// tensors are perturbed first so no gradient path is trivially zero.
inline GradientAudit audit_model_gradients(const ModelConfig& cfg, double eps = 1e-6, double floor = 1e-3) {
  StcatModel<double> model(cfg);
  std::mt19937_64 rng(cfg.seed + 3);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for (auto& v : model.params().values())
    for (auto& x : v.data)
      if (x == 0.0) x = jitter(rng);

  VideoClip clip(cfg.T_sampled, cfg.H, cfg.W);
  std::uniform_real_distribution<float> unit(0.f, 1.f);
  for (auto& p : clip.pixels) p = unit(rng);
  QueryTokens q{{2, 4, 7, 10, 12}, cfg.vocab_size};
  for (auto& id : q.ids) id %= static_cast<int>(cfg.vocab_size);
  const std::size_t T = cfg.T_sampled;
  SegmentTarget target{T, T / 4, std::max(T / 4, T / 2), {}};
  for (std::size_t t = target.start; t <= target.end; ++t) {
    target.boxes.push_back(Box{0.4 + 0.02 * t, 0.5, 0.2 + 0.01 * t, 0.3});
  }

  auto eval = [&](bool with_grad) {
    Tape<double> tape(false);
    Graph<double> g(tape, model.params(), with_grad);
    const auto out = model.forward(g, clip, q);
    const auto l = model.loss(g, out, target);
    if (with_grad) {
      model.params().zero_grad();
      tape.backward(l.total);
      g.accumulate_grads(model.params());
    }
    return l.total.value().item();
  };
  eval(true);

  GradientAudit r;
  for (std::size_t p = 0; p < model.params().size(); ++p) {
    auto& v = model.params().values()[p];
    const auto& grad = model.params().grads()[p];
    for (std::size_t i = 0; i < v.size(); ++i, ++r.coordinates) {
      const double orig = v[i];
      v[i] = orig + eps;
      const double up = eval(false);
      v[i] = orig - eps;
      const double down = eval(false);
      v[i] = orig;
      const double fd = (up - down) / (2 * eps);
      const double err = std::abs(grad[i] - fd) / std::max({std::abs(grad[i]), std::abs(fd), floor});
      if (err > r.worst) {
        r.worst = err;
        r.worst_at = model.params().name(p) + "[" + std::to_string(i) + "]";
        r.analytic = grad[i];
        r.numeric = fd;
      }
    }
  }
  return r;
}

}  // namespace stcat::io
