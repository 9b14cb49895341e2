#pragma once

#include <string>

#include "stcat/nn/parameters.hpp"
#include "stcat/tensor/attention.hpp"
#include "stcat/tensor/ops.hpp"

namespace stcat {

template <typename S>
struct Linear {
  ParamId weight;
  ParamId bias;
  std::size_t in = 0, out = 0;

  static Linear create(ParameterStore<S>& store, Initializer& init, const std::string& name,
                       std::size_t in, std::size_t out) {
    Linear l;
    l.in = in;
    l.out = out;
    l.weight = store.add(name + ".weight", init.xavier<S>(in, out));
    l.bias = store.add(name + ".bias", Tensor<S>::zeros(Shape{out}));
    return l;
  }

  Var<S> operator()(Graph<S>& g, Var<S> x) const { return linear(x, g.param(weight), g.param(bias)); }
};

template <typename S>
struct LayerNorm {
  ParamId gain;
  ParamId bias;

  static LayerNorm create(ParameterStore<S>& store, const std::string& name, std::size_t dim) {
    LayerNorm l;
    l.gain = store.add(name + ".gain", Tensor<S>::filled(Shape{dim}, S(1)));
    l.bias = store.add(name + ".bias", Tensor<S>::zeros(Shape{dim}));
    return l;
  }

  Var<S> operator()(Graph<S>& g, Var<S> x) const { return layer_norm(x, g.param(gain), g.param(bias)); }
};

/// Three linear layers with ReLU between them.
template <typename S>
struct Mlp3 {
  Linear<S> l1, l2, l3;

  static Mlp3 create(ParameterStore<S>& store, Initializer& init, const std::string& name,
                     std::size_t in, std::size_t hidden, std::size_t out) {
    return Mlp3{Linear<S>::create(store, init, name + ".0", in, hidden),
                Linear<S>::create(store, init, name + ".1", hidden, hidden),
                Linear<S>::create(store, init, name + ".2", hidden, out)};
  }

  Var<S> operator()(Graph<S>& g, Var<S> x) const { return l3(g, relu(l2(g, relu(l1(g, x))))); }
};

template <typename S>
struct FeedForward {
  Linear<S> up, down;

  static FeedForward create(ParameterStore<S>& store, Initializer& init, const std::string& name,
                            std::size_t dim, std::size_t hidden) {
    return FeedForward{Linear<S>::create(store, init, name + ".up", dim, hidden),
                       Linear<S>::create(store, init, name + ".down", hidden, dim)};
  }

  Var<S> operator()(Graph<S>& g, Var<S> x) const { return down(g, relu(up(g, x))); }
};

/// Multi-head attention with learned q/k/v/output projections. Positional
/// terms, when given, are added to queries and keys before projection.
/// Inputs are [B, L, C] (or [L, C], treated as B = 1).
template <typename S>
struct MultiHeadAttention {
  Linear<S> q_proj, k_proj, v_proj, out_proj;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore<S>& store, Initializer& init, const std::string& name,
                                   std::size_t dim, std::size_t heads) {
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError("attention '" + name + "': channels " + std::to_string(dim) +
                        " not divisible by heads " + std::to_string(heads));
    }
    MultiHeadAttention m;
    m.q_proj = Linear<S>::create(store, init, name + ".q", dim, dim);
    m.k_proj = Linear<S>::create(store, init, name + ".k", dim, dim);
    m.v_proj = Linear<S>::create(store, init, name + ".v", dim, dim);
    m.out_proj = Linear<S>::create(store, init, name + ".out", dim, dim);
    m.heads = heads;
    return m;
  }

  AttentionResult<S> operator()(Graph<S>& g, Var<S> query, Var<S> key, Var<S> value,
                                Var<S> query_pos = {}, Var<S> key_pos = {}) const {
    const bool flat = query.shape().size() == 2;
    if (flat) {
      query = reshape(query, Shape{1, query.dim(0), query.dim(1)});
      key = reshape(key, Shape{1, key.dim(0), key.dim(1)});
      value = reshape(value, Shape{1, value.dim(0), value.dim(1)});
      if (query_pos.valid()) query_pos = reshape(query_pos, query.shape());
      if (key_pos.valid()) key_pos = reshape(key_pos, key.shape());
    }
    if (query_pos.valid()) query = add(query, query_pos);
    if (key_pos.valid()) key = add(key, key_pos);
    auto core = scaled_dot_attention(q_proj(g, query), k_proj(g, key), v_proj(g, value), heads);
    auto out = out_proj(g, core.output);
    if (flat) out = reshape(out, Shape{out.dim(1), out.dim(2)});
    return {out, core.weights};
  }
};

/// Post-norm transformer encoder layer: attention, add & norm, FFN, add & norm.
template <typename S>
struct EncoderLayer {
  MultiHeadAttention<S> attn;
  LayerNorm<S> norm1, norm2;
  FeedForward<S> ffn;
  double dropout = 0.0;

  static EncoderLayer create(ParameterStore<S>& store, Initializer& init, const std::string& name,
                             std::size_t dim, std::size_t heads, std::size_t ffn_dim, double dropout) {
    EncoderLayer l;
    l.attn = MultiHeadAttention<S>::create(store, init, name + ".attn", dim, heads);
    l.norm1 = LayerNorm<S>::create(store, name + ".norm1", dim);
    l.ffn = FeedForward<S>::create(store, init, name + ".ffn", dim, ffn_dim);
    l.norm2 = LayerNorm<S>::create(store, name + ".norm2", dim);
    l.dropout = dropout;
    return l;
  }

  Var<S> operator()(Graph<S>& g, Var<S> x, Var<S> pos = {}) const {
    auto a = attn(g, x, x, x, pos, pos).output;
    x = norm1(g, add(x, g.dropout(a, dropout)));
    auto f = ffn(g, x);
    return norm2(g, add(x, g.dropout(f, dropout)));
  }
};

}  // namespace stcat
