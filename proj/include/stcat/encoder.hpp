#pragma once

#include <stdexcept>
#include <vector>

#include "stcat/config.hpp"
#include "stcat/nn/layers.hpp"
#include "stcat/nn/positional.hpp"

namespace stcat {

/// Token states threaded through the encoder blocks.
template <typename S>
struct EncoderState {
  Var<S> p_v;          // [T, N_v, C]
  Var<S> p_s;          // [N_s, C], one copy shared by all frames
  Var<S> p_l;          // [T, C]
  Var<S> p_g;          // [C]
  Var<S> text_frames;  // [T, N_s, C] per-frame text states of the last spatial layer
};

template <typename S>
struct EncodedContext {
  Var<S> F_vl;  // [T, N_v + N_s, C]
  Var<S> p_g;   // [C]
  Var<S> p_l;   // [T, C]
};

/// Positional terms for the [visual, text] tokens of every frame:
/// 2-D sinusoidal for the patch grid, 1-D for the words. [T, N_v + N_s, C].
template <typename S>
Tensor<S> memory_position(std::size_t frames, std::size_t grid_h, std::size_t grid_w,
                          std::size_t words, std::size_t dim) {
  const auto vis = sine_encoding_2d<S>(grid_h, grid_w, dim);
  const auto txt = sine_encoding_1d<S>(words, dim);
  const std::size_t nv = grid_h * grid_w, len = nv + words;
  Tensor<S> pos(Shape{frames, len, dim});
  for (std::size_t t = 0; t < frames; ++t) {
    std::copy(vis.data.begin(), vis.data.end(), pos.data.begin() + static_cast<std::ptrdiff_t>(t * len * dim));
    std::copy(txt.data.begin(), txt.data.end(),
              pos.data.begin() + static_cast<std::ptrdiff_t>((t * len + nv) * dim));
  }
  return pos;
}

/// M blocks of (spatial interaction layer, temporal interaction layer).
template <typename S>
class CrossModalEncoder {
 public:
  CrossModalEncoder() = default;
  CrossModalEncoder(ParameterStore<S>& store, Initializer& init, const ModelConfig& cfg)
      : C_(cfg.C), grid_h_(cfg.grid_h()), grid_w_(cfg.grid_w()), temporal_(!cfg.no_temporal_layer) {
    if (cfg.M == 0) throw ConfigError("encoder: M must be >= 1");
    local_token_ = store.add("encoder.local_token", init.normal<S>(Shape{cfg.C}, 1.0));
    global_token_ = store.add("encoder.global_token", init.normal<S>(Shape{cfg.C}, 1.0));
    for (std::size_t m = 0; m < cfg.M; ++m) {
      spatial_.push_back(EncoderLayer<S>::create(store, init, "encoder.spatial." + std::to_string(m), cfg.C,
                                                 cfg.heads, cfg.ffn_dim(), cfg.dropout));
      if (temporal_) {
        temporal_layers_.push_back(EncoderLayer<S>::create(store, init, "encoder.temporal." + std::to_string(m),
                                                           cfg.C, cfg.heads, cfg.ffn_dim(), cfg.dropout));
      }
    }
  }

  std::size_t blocks() const { return spatial_.size(); }
  bool has_temporal_layer() const { return temporal_; }

  /// p_l is the learned local token replicated once per frame.
  EncoderState<S> initial_state(Graph<S>& g, Var<S> p_v, Var<S> p_s) const {
    check_inputs(p_v, p_s);
    const std::size_t T = p_v.dim(0);
    EncoderState<S> st;
    st.p_v = p_v;
    st.p_s = p_s;
    st.p_l = broadcast_to(reshape(g.param(local_token_), Shape{1, C_}), Shape{T, C_});
    st.p_g = g.param(global_token_);
    return st;
  }

  /// x_t = [p_l^t, visual tokens of frame t, text tokens]: [1 + N_v + N_s, C].
  Var<S> build_spatial_input(const EncoderState<S>& st, std::size_t t) const {
    const std::size_t T = st.p_v.dim(0);
    if (t >= T) {
      throw std::out_of_range("spatial input: frame " + std::to_string(t) + " >= T=" + std::to_string(T));
    }
    return concat({slice(st.p_l, 0, t, t + 1), select(st.p_v, 0, t), st.p_s}, 0);
  }

  /// Positional terms matching build_spatial_input, stacked for all frames.
  Tensor<S> spatial_position(std::size_t frames, std::size_t words) const {
    const auto mem = memory_position<S>(frames, grid_h_, grid_w_, words, C_);
    const std::size_t len = mem.dim(1);
    Tensor<S> pos(Shape{frames, len + 1, C_});
    for (std::size_t t = 0; t < frames; ++t) {
      std::copy_n(mem.data.begin() + static_cast<std::ptrdiff_t>(t * len * C_), len * C_,
                  pos.data.begin() + static_cast<std::ptrdiff_t>((t * (len + 1) + 1) * C_));
    }
    return pos;
  }

  /// One spatial interaction layer applied to every frame with shared weights.
  /// Text states are averaged over frames back into the shared p_s.
  void spatial_layer(Graph<S>& g, std::size_t block, EncoderState<S>& st) const {
    const std::size_t T = st.p_v.dim(0), nv = st.p_v.dim(1), ns = st.p_s.dim(0);
    auto x = concat({reshape(st.p_l, Shape{T, 1, C_}), st.p_v,
                     broadcast_to(reshape(st.p_s, Shape{1, ns, C_}), Shape{T, ns, C_})},
                    1);
    x = spatial_.at(block)(g, x, g.constant(spatial_position(T, ns)));
    st.p_l = reshape(slice(x, 1, 0, 1), Shape{T, C_});
    st.p_v = slice(x, 1, 1, 1 + nv);
    st.text_frames = slice(x, 1, 1 + nv, 1 + nv + ns);
    st.p_s = mean_axis(st.text_frames, 0);
  }

  /// x_g = [p_g, p_l^1 + PE(1), ..., p_l^T + PE(T)]: [1 + T, C].
  Var<S> build_temporal_input(Graph<S>& g, Var<S> p_g, Var<S> p_l) const {
    const std::size_t T = p_l.dim(0);
    auto frames = add(p_l, g.constant(sine_encoding_1d<S>(T, C_)));
    return concat({reshape(p_g, Shape{1, C_}), frames}, 0);
  }

  /// Temporal interaction layer, or mean pooling of p_l into p_g when ablated.
  void temporal_layer(Graph<S>& g, std::size_t block, EncoderState<S>& st) const {
    const std::size_t T = st.p_l.dim(0);
    if (!temporal_) {
      st.p_g = mean_axis(st.p_l, 0);
      return;
    }
    auto x = reshape(build_temporal_input(g, st.p_g, st.p_l), Shape{1, T + 1, C_});
    x = temporal_layers_.at(block)(g, x);
    st.p_g = reshape(slice(x, 1, 0, 1), Shape{C_});
    st.p_l = reshape(slice(x, 1, 1, T + 1), Shape{T, C_});
  }

  EncodedContext<S> encode(Graph<S>& g, Var<S> p_v, Var<S> p_s) const {
    auto st = initial_state(g, p_v, p_s);
    for (std::size_t m = 0; m < blocks(); ++m) {
      spatial_layer(g, m, st);
      temporal_layer(g, m, st);
    }
    return {concat({st.p_v, st.text_frames}, 1), st.p_g, st.p_l};
  }

 private:
  void check_inputs(Var<S> p_v, Var<S> p_s) const {
    const Shape& vs = p_v.shape();
    const Shape& ss = p_s.shape();
    if (vs.size() != 3 || vs[1] != grid_h_ * grid_w_ || vs[2] != C_ || ss.size() != 2 || ss[1] != C_) {
      throw ShapeError("encoder: unexpected inputs " + to_string(vs) + " and " + to_string(ss));
    }
  }

  std::size_t C_ = 0, grid_h_ = 0, grid_w_ = 0;
  bool temporal_ = true;
  ParamId local_token_, global_token_;
  std::vector<EncoderLayer<S>> spatial_;
  std::vector<EncoderLayer<S>> temporal_layers_;
};

}  // namespace stcat
