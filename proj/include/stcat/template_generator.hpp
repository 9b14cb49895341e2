#pragma once

#include <utility>

#include "stcat/config.hpp"
#include "stcat/encoder.hpp"
#include "stcat/nn/layers.hpp"

namespace stcat {

/// Video-level query prior: one content vector shared by every frame and one
/// (x, y, w, h) anchor per frame.
template <typename S>
struct Template {
  Var<S> q_c;  // [C]
  Var<S> q_p;  // [T, 4], entries in (0, 1)
};

template <typename S>
class TemplateGenerator {
 public:
  TemplateGenerator() = default;
  TemplateGenerator(ParameterStore<S>& store, Initializer& init, const ModelConfig& cfg)
      : C_(cfg.C), use_global_(!cfg.no_global_template), use_local_(!cfg.no_local_template) {
    content_ = Linear<S>::create(store, init, "template.content", cfg.C, cfg.C);
    gamma_ = Linear<S>::create(store, init, "template.gamma", cfg.C, cfg.C);
    beta_ = Linear<S>::create(store, init, "template.beta", cfg.C, cfg.C);
    position_ = Linear<S>::create(store, init, "template.position", cfg.C, 4);
    shared_position_ = store.add("template.shared_position", Tensor<S>::zeros(Shape{4}));
  }

  /// q_c = W_c p_g + b_c
  Var<S> content_term(Graph<S>& g, Var<S> p_g) const { return content_(g, p_g); }

  /// (gamma, beta) = (tanh(W_gamma p_g + b_gamma), tanh(W_beta p_g + b_beta))
  std::pair<Var<S>, Var<S>> modulation_vectors(Graph<S>& g, Var<S> p_g) const {
    return {tanh(gamma_(g, p_g)), tanh(beta_(g, p_g))};
  }

  /// q_p^t = sigmoid(f_p(gamma * p_l^t + beta)), row-wise over frames.
  Var<S> position_term(Graph<S>& g, Var<S> p_l, Var<S> gamma, Var<S> beta) const {
    return sigmoid(position_(g, add(mul(p_l, gamma), beta)));
  }

  Template<S> generate(Graph<S>& g, const EncodedContext<S>& ctx) const {
    const std::size_t T = ctx.p_l.dim(0);
    Template<S> tpl;
    tpl.q_c = use_global_ ? content_term(g, ctx.p_g) : g.constant(Tensor<S>::zeros(Shape{C_}));
    if (use_local_) {
      auto [gamma, beta] = modulation_vectors(g, ctx.p_g);
      tpl.q_p = position_term(g, ctx.p_l, gamma, beta);
    } else {
      auto shared = sigmoid(reshape(g.param(shared_position_), Shape{1, 4}));
      tpl.q_p = broadcast_to(shared, Shape{T, 4});
    }
    return tpl;
  }

  const Linear<S>& content_layer() const { return content_; }
  const Linear<S>& gamma_layer() const { return gamma_; }
  const Linear<S>& beta_layer() const { return beta_; }
  const Linear<S>& position_layer() const { return position_; }

 private:
  std::size_t C_ = 0;
  bool use_global_ = true, use_local_ = true;
  Linear<S> content_, gamma_, beta_, position_;
  ParamId shared_position_;
};

}  // namespace stcat
