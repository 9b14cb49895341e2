#pragma once

#include <utility>
#include <vector>

#include "stcat/config.hpp"
#include "stcat/decoder.hpp"
#include "stcat/embedder.hpp"
#include "stcat/encoder.hpp"
#include "stcat/objectives.hpp"
#include "stcat/template_generator.hpp"

namespace stcat {

template <typename S>
struct ModelOutputs {
  EncodedContext<S> ctx;
  Template<S> tpl;
  DecoderOutput<S> dec;
  Var<S> boxes;       // [T, 4]
  Var<S> p_start;     // [T]
  Var<S> p_end;       // [T]
  Var<S> seg_logits;  // [T]
};

/// The full grounding network: embed, encode, template, dual decode, heads.
template <typename S>
class StcatModel {
 public:
  explicit StcatModel(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Initializer init(cfg_.seed);
    embedder_ = Embedder<S>(params_, init, cfg_);
    encoder_ = CrossModalEncoder<S>(params_, init, cfg_);
    template_ = TemplateGenerator<S>(params_, init, cfg_);
    decoder_ = TubeDecoder<S>(params_, init, cfg_);
    heads_ = PredictionHeads<S>(params_, init, cfg_);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<S>& params() { return params_; }
  const ParameterStore<S>& params() const { return params_; }

  const Embedder<S>& embedder() const { return embedder_; }
  const CrossModalEncoder<S>& encoder() const { return encoder_; }
  const TemplateGenerator<S>& template_generator() const { return template_; }
  const TubeDecoder<S>& decoder() const { return decoder_; }
  const PredictionHeads<S>& heads() const { return heads_; }

  /// Copies every tensor of `other` into this model; names and shapes must match.
  template <typename U>
  void load_parameters(const ParameterStore<U>& other) {
    if (other.size() != params_.size()) {
      throw ConfigError("parameters: expected " + std::to_string(params_.size()) + " tensors, got " +
                        std::to_string(other.size()));
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const auto id = other.find(params_.name(i));
      if (!id) throw ConfigError("parameters: missing tensor '" + params_.name(i) + "'");
      const auto& src = other.value(*id);
      auto& dst = params_.value(ParamId{i});
      if (src.shape != dst.shape) {
        throw ConfigError("parameters: tensor '" + params_.name(i) + "' has shape " + to_string(src.shape) +
                          ", model expects " + to_string(dst.shape));
      }
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<S>(src[k]);
    }
  }

  template <typename U>
  StcatModel<U> cast() const {
    StcatModel<U> out(cfg_);
    out.load_parameters(params_);
    return out;
  }

  ModelOutputs<S> forward(Graph<S>& g, const VideoClip& clip, const QueryTokens& tokens) const {
    if (clip.H != cfg_.H || clip.W != cfg_.W) {
      throw ConfigError("model: clip is " + std::to_string(clip.H) + "x" + std::to_string(clip.W) +
                        " but config has H=" + std::to_string(cfg_.H) + ", W=" + std::to_string(cfg_.W));
    }
    if (clip.T == 0 || clip.T > cfg_.max_frames) {
      throw ConfigError("model: clip has " + std::to_string(clip.T) + " frames, limit is max_frames=" +
                        std::to_string(cfg_.max_frames));
    }
    if (tokens.vocab_size != cfg_.vocab_size) {
      throw ConfigError("model: query vocabulary " + std::to_string(tokens.vocab_size) +
                        " differs from config vocab_size=" + std::to_string(cfg_.vocab_size));
    }
    ModelOutputs<S> out;
    auto [p_v, p_s] = embedder_.project(g, embedder_.patch_embed(g, clip), embedder_.embed_tokens(g, tokens));
    out.ctx = encoder_.encode(g, p_v, p_s);
    out.tpl = template_.generate(g, out.ctx);
    out.dec = decoder_.decode(g, out.tpl, out.ctx, heads_.box_regressor());
    out.boxes = heads_.box_head(g, out.dec.bbox_feats, out.dec.anchors);
    std::tie(out.p_start, out.p_end) = heads_.temporal_head(g, out.dec.time_feats);
    out.seg_logits = heads_.segment_head(g, out.dec.time_feats);
    return out;
  }

  /// Weighted training loss. With aux_loss set, every intermediate decoder
  /// layer contributes the same terms, summed into each part.
  LossTerms<S> loss(Graph<S>& g, const ModelOutputs<S>& out, const SegmentTarget& target) const {
    target.validate();
    const std::size_t T = out.boxes.dim(0);
    if (target.frames != T) {
      throw ShapeError("loss: target covers " + std::to_string(target.frames) + " frames, model produced " +
                       std::to_string(T));
    }
    const double sigma = cfg_.heatmap_sigma(T);
    const auto pi_s = gaussian_heatmap(target.start, T, sigma);
    const auto pi_e = gaussian_heatmap(target.end, T, sigma);

    LossTerms<S> terms;
    std::tie(terms.l1, terms.giou) = bbox_loss(out.boxes, target);
    terms.temp = temporal_loss(out.p_start, out.p_end, pi_s, pi_e);
    terms.seg = segment_loss(out.seg_logits, target.start, target.end);
    if (cfg_.aux_loss) {
      const std::size_t M = out.dec.box_layer_feats.size();
      for (std::size_t m = 0; m + 1 < M; ++m) {
        auto [l1, gi] = bbox_loss(out.dec.box_layer_anchors[m + 1], target);
        terms.l1 = add(terms.l1, l1);
        terms.giou = add(terms.giou, gi);
        auto [ps, pe] = heads_.temporal_head(g, out.dec.time_layer_feats[m]);
        terms.temp = add(terms.temp, temporal_loss(ps, pe, pi_s, pi_e));
        terms.seg = add(terms.seg,
                        segment_loss(heads_.segment_head(g, out.dec.time_layer_feats[m]), target.start, target.end));
      }
    }
    terms.total = weighted_total(terms.l1, terms.giou, terms.temp, terms.seg, LossWeights::from(cfg_));
    return terms;
  }

 private:
  ModelConfig cfg_;
  ParameterStore<S> params_;
  Embedder<S> embedder_;
  CrossModalEncoder<S> encoder_;
  TemplateGenerator<S> template_;
  TubeDecoder<S> decoder_;
  PredictionHeads<S> heads_;
};

}  // namespace stcat
