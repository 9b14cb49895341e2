#pragma once

#include <vector>

#include "stcat/config.hpp"
#include "stcat/encoder.hpp"
#include "stcat/nn/layers.hpp"
#include "stcat/template_generator.hpp"

namespace stcat {

/// One object query per frame: content C_t, positional P_t and the (x, y, w, h)
/// anchor P_t was generated from.
template <typename S>
struct ObjectQueries {
  Var<S> content;   // [T, C]
  Var<S> position;  // [T, C]
  Var<S> anchors;   // [T, 4]
};

enum class Branch { kBox, kTime };

template <typename S>
struct DecoderOutput {
  Var<S> bbox_feats;  // [T, C]
  Var<S> time_feats;  // [T, C]
  Var<S> anchors;     // [T, 4] reference anchors of the final box prediction
  std::vector<Var<S>> box_layer_feats;
  std::vector<Var<S>> box_layer_anchors;  // reference anchor entering each box layer
  std::vector<Var<S>> time_layer_feats;
  std::vector<Tensor<S>> box_attention;   // per layer [T, N_v + N_s], averaged over heads
  std::vector<Tensor<S>> time_attention;
};

/// anchor + delta clamped to [0, 1], or sigmoid(logit(anchor) + delta) in logit mode.
template <typename S>
Var<S> refine_anchors(Var<S> anchors, Var<S> delta, bool logit_space) {
  if (logit_space) return sigmoid(add(logit(anchors), delta));
  return clamp(add(anchors, delta), S(0), S(1));
}

template <typename S>
struct DecoderBlock {
  MultiHeadAttention<S> self_attn, cross_attn;
  LayerNorm<S> norm1, norm2, norm3;
  FeedForward<S> ffn;
  double dropout = 0.0;

  static DecoderBlock create(ParameterStore<S>& store, Initializer& init, const std::string& name,
                             const ModelConfig& cfg) {
    DecoderBlock b;
    b.self_attn = MultiHeadAttention<S>::create(store, init, name + ".self_attn", cfg.C, cfg.heads);
    b.norm1 = LayerNorm<S>::create(store, name + ".norm1", cfg.C);
    b.cross_attn = MultiHeadAttention<S>::create(store, init, name + ".cross_attn", cfg.C, cfg.heads);
    b.norm2 = LayerNorm<S>::create(store, name + ".norm2", cfg.C);
    b.ffn = FeedForward<S>::create(store, init, name + ".ffn", cfg.C, cfg.ffn_dim());
    b.norm3 = LayerNorm<S>::create(store, name + ".norm3", cfg.C);
    b.dropout = cfg.dropout;
    return b;
  }
};

/// Dual decoder: a box branch with layer-wise anchor refinement and a time
/// branch, both started from the same template queries.
template <typename S>
class TubeDecoder {
 public:
  struct BlockResult {
    ObjectQueries<S> queries;
    Tensor<S> attention;  // [T, N_v + N_s]
  };

  TubeDecoder() = default;
  TubeDecoder(ParameterStore<S>& store, Initializer& init, const ModelConfig& cfg)
      : C_(cfg.C),
        grid_h_(cfg.grid_h()),
        grid_w_(cfg.grid_w()),
        self_attention_(cfg.decoder_self_attention),
        logit_space_(cfg.anchor_logit_space) {
    if (cfg.M == 0) throw ConfigError("decoder: M must be >= 1");
    anchor_proj_ = Linear<S>::create(store, init, "decoder.anchor_proj", 2 * cfg.C, cfg.C);
    for (std::size_t m = 0; m < cfg.M; ++m) {
      box_.push_back(DecoderBlock<S>::create(store, init, "decoder.box." + std::to_string(m), cfg));
      time_.push_back(DecoderBlock<S>::create(store, init, "decoder.time." + std::to_string(m), cfg));
    }
  }

  std::size_t layers() const { return box_.size(); }

  /// P_t = Linear(PE(anchor_t)); each of the 4 coordinates gets C/2 channels.
  Var<S> anchor_position(Graph<S>& g, Var<S> anchors) const {
    return anchor_proj_(g, sine_embed(anchors, C_ / 2));
  }

  /// C_t = q_c for every frame, P_t from q_p^t, anchor = q_p^t.
  ObjectQueries<S> init_queries(Graph<S>& g, const Template<S>& tpl) const {
    const std::size_t T = tpl.q_p.dim(0);
    ObjectQueries<S> q;
    q.content = broadcast_to(reshape(tpl.q_c, Shape{1, C_}), Shape{T, C_});
    q.anchors = tpl.q_p;
    q.position = anchor_position(g, tpl.q_p);
    return q;
  }

  /// Self-attention over frames (with time encoding), per-frame cross-attention
  /// into F_vl, FFN; the box branch then refines anchors with `regressor`
  /// when `refine` is set.
  BlockResult block(Graph<S>& g, Branch branch, std::size_t index, const ObjectQueries<S>& in, Var<S> F_vl,
                    Var<S> memory_pos, const Mlp3<S>& regressor, bool refine) const {
    const DecoderBlock<S>& blk = branch == Branch::kBox ? box_.at(index) : time_.at(index);
    const std::size_t T = in.content.dim(0);
    if (F_vl.shape().size() != 3 || F_vl.dim(0) != T || F_vl.dim(2) != C_) {
      throw ShapeError("decoder: F_vl " + to_string(F_vl.shape()) + " does not match " + std::to_string(T) +
                       " queries of width " + std::to_string(C_));
    }
    Var<S> c = in.content;
    if (self_attention_) {
      auto te = g.constant(sine_encoding_1d<S>(T, C_));
      auto sa = blk.self_attn(g, c, c, c, te, te).output;
      c = blk.norm1(g, add(c, g.dropout(sa, blk.dropout)));
    }
    auto ca = blk.cross_attn(g, reshape(c, Shape{T, 1, C_}), F_vl, F_vl, reshape(in.position, Shape{T, 1, C_}),
                             memory_pos);
    c = blk.norm2(g, add(c, g.dropout(reshape(ca.output, Shape{T, C_}), blk.dropout)));
    c = blk.norm3(g, add(c, g.dropout(blk.ffn(g, c), blk.dropout)));

    BlockResult r;
    r.queries = {c, in.position, in.anchors};
    r.attention = average_heads(*ca.weights);
    if (branch == Branch::kBox && refine) {
      r.queries.anchors = refine_anchors(in.anchors, regressor(g, c), logit_space_);
      r.queries.position = anchor_position(g, r.queries.anchors);
    }
    return r;
  }

  DecoderOutput<S> decode(Graph<S>& g, const Template<S>& tpl, const EncodedContext<S>& ctx,
                          const Mlp3<S>& regressor) const {
    const std::size_t T = ctx.F_vl.dim(0), len = ctx.F_vl.dim(1);
    const std::size_t words = len - grid_h_ * grid_w_;
    auto mem_pos = g.constant(memory_position<S>(T, grid_h_, grid_w_, words, C_));
    const auto start = init_queries(g, tpl);

    DecoderOutput<S> out;
    auto box_q = start;
    for (std::size_t m = 0; m < layers(); ++m) {
      out.box_layer_anchors.push_back(box_q.anchors);
      // The last layer's refinement is the final box head itself.
      auto r = block(g, Branch::kBox, m, box_q, ctx.F_vl, mem_pos, regressor, m + 1 < layers());
      out.box_layer_feats.push_back(r.queries.content);
      out.box_attention.push_back(std::move(r.attention));
      box_q = r.queries;
    }
    auto time_q = start;
    for (std::size_t m = 0; m < layers(); ++m) {
      auto r = block(g, Branch::kTime, m, time_q, ctx.F_vl, mem_pos, regressor, false);
      out.time_layer_feats.push_back(r.queries.content);
      out.time_attention.push_back(std::move(r.attention));
      time_q = r.queries;
    }
    out.bbox_feats = box_q.content;
    out.anchors = out.box_layer_anchors.back();
    out.time_feats = time_q.content;
    return out;
  }

  bool logit_space() const { return logit_space_; }

 private:
  static Tensor<S> average_heads(const Tensor<S>& w) {
    // [B, heads, 1, L] -> [B, L]
    const std::size_t B = w.dim(0), H = w.dim(1), L = w.dim(3);
    Tensor<S> out(Shape{B, L});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t l = 0; l < L; ++l) out.at(b, l) += w[(b * H + h) * L + l] / static_cast<S>(H);
    return out;
  }

  std::size_t C_ = 0, grid_h_ = 0, grid_w_ = 0;
  bool self_attention_ = true, logit_space_ = false;
  Linear<S> anchor_proj_;
  std::vector<DecoderBlock<S>> box_, time_;
};

}  // namespace stcat
