#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stcat/box.hpp"
#include "stcat/config.hpp"
#include "stcat/decoder.hpp"
#include "stcat/nn/layers.hpp"

namespace stcat {

/// Box regression, start/end and in-segment heads on the decoder outputs.
template <typename S>
class PredictionHeads {
 public:
  PredictionHeads() = default;
  PredictionHeads(ParameterStore<S>& store, Initializer& init, const ModelConfig& cfg)
      : logit_space_(cfg.anchor_logit_space) {
    box_ = Mlp3<S>::create(store, init, "heads.box", cfg.C, cfg.C, 4);
    // Zero offsets at initialization: the first predictions are the anchors.
    store.value(box_.l3.weight) = Tensor<S>::zeros(Shape{cfg.C, 4});
    temporal_ = Mlp3<S>::create(store, init, "heads.temporal", cfg.C, cfg.C, 2);
    segment_ = Mlp3<S>::create(store, init, "heads.segment", cfg.C, cfg.C, 1);
  }

  /// Shared with the decoder for layer-wise anchor refinement.
  const Mlp3<S>& box_regressor() const { return box_; }
  const Mlp3<S>& temporal_mlp() const { return temporal_; }
  const Mlp3<S>& segment_mlp() const { return segment_; }

  /// [T, 4] boxes: anchor plus predicted offset, clamped to [0, 1].
  Var<S> box_head(Graph<S>& g, Var<S> feats, Var<S> anchors) const {
    return refine_anchors(anchors, box_(g, feats), logit_space_);
  }

  /// Start and end distributions over frames, each [T].
  std::pair<Var<S>, Var<S>> temporal_head(Graph<S>& g, Var<S> feats) const {
    const std::size_t T = feats.dim(0);
    auto logits = temporal_(g, feats);
    return {softmax(reshape(slice(logits, 1, 0, 1), Shape{T}), 0),
            softmax(reshape(slice(logits, 1, 1, 2), Shape{T}), 0)};
  }

  /// Per-frame in-segment logits [T].
  Var<S> segment_head(Graph<S>& g, Var<S> feats) const {
    return reshape(segment_(g, feats), Shape{feats.dim(0)});
  }

 private:
  bool logit_space_ = false;
  Mlp3<S> box_, temporal_, segment_;
};

// ---------------------------------------------------------------------------
// supervision targets in sampled-frame space

/// Ground truth for one clip as seen by the model: an inclusive segment
/// [start, end] over `frames` sampled frames and one box per segment frame.
struct SegmentTarget {
  std::size_t frames = 0;
  std::size_t start = 0, end = 0;
  std::vector<Box> boxes;

  void validate() const {
    if (boxes.empty()) throw std::invalid_argument("target: empty ground-truth segment");
    if (start > end || end >= frames) {
      throw std::invalid_argument("target: segment [" + std::to_string(start) + "," + std::to_string(end) +
                                  "] outside " + std::to_string(frames) + " frames");
    }
    if (boxes.size() != end - start + 1) {
      throw std::invalid_argument("target: " + std::to_string(boxes.size()) + " boxes for segment of length " +
                                  std::to_string(end - start + 1));
    }
  }
};

/// Normalized discrete Gaussian over frames 0..T-1.
inline std::vector<double> gaussian_heatmap(std::size_t center, std::size_t frames, double sigma) {
  if (center >= frames) {
    throw std::out_of_range("heatmap: center " + std::to_string(center) + " outside " + std::to_string(frames) +
                            " frames");
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("heatmap: sigma must be positive");
  std::vector<double> p(frames);
  double z = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    const double d = static_cast<double>(t) - static_cast<double>(center);
    p[t] = std::exp(-d * d / (2.0 * sigma * sigma));
    z += p[t];
  }
  for (auto& v : p) v /= z;
  return p;
}

/// KL(target || predicted) with both probabilities floored at 1e-12 inside the log.
inline double kl_divergence(std::span<const double> target, std::span<const double> predicted) {
  double kl = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    kl += target[i] * (std::log(std::max(target[i], 1e-12)) - std::log(std::max(predicted[i], 1e-12)));
  }
  return kl;
}

// ---------------------------------------------------------------------------
// differentiable loss terms

/// GIoU of paired boxes a[K, 4], b[K, 4] in (cx, cy, w, h) form -> [K].
template <typename S>
Var<S> giou(Var<S> a, Var<S> b) {
  if (a.shape() != b.shape() || a.shape().size() != 2 || a.dim(1) != 4) {
    throw ShapeError(detail::shapes_msg("giou", a.shape(), b.shape()));
  }
  auto& tape = a.tape();
  const std::size_t K = a.dim(0);
  auto col = [K](Var<S> x, std::size_t i) { return reshape(slice(x, 1, i, i + 1), Shape{K}); };
  auto corners = [&](Var<S> x) {
    auto cx = col(x, 0), cy = col(x, 1);
    auto hw = scale(col(x, 2), S(0.5)), hh = scale(col(x, 3), S(0.5));
    return std::array<Var<S>, 4>{sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
  };
  const auto ca = corners(a), cb = corners(b);
  auto tiny = tape.constant(Tensor<S>::scalar(S(1e-12)));
  auto iw = relu(sub(minimum(ca[2], cb[2]), maximum(ca[0], cb[0])));
  auto ih = relu(sub(minimum(ca[3], cb[3]), maximum(ca[1], cb[1])));
  auto inter = mul(iw, ih);
  auto area_a = mul(relu(sub(ca[2], ca[0])), relu(sub(ca[3], ca[1])));
  auto area_b = mul(relu(sub(cb[2], cb[0])), relu(sub(cb[3], cb[1])));
  auto uni = sub(add(area_a, area_b), inter);
  auto iou = div(inter, maximum(uni, tiny));
  auto ew = sub(maximum(ca[2], cb[2]), minimum(ca[0], cb[0]));
  auto eh = sub(maximum(ca[3], cb[3]), minimum(ca[1], cb[1]));
  auto enc = mul(ew, eh);
  return sub(iou, div(sub(enc, uni), maximum(enc, tiny)));
}

template <typename S>
Tensor<S> boxes_tensor(std::span<const Box> boxes) {
  Tensor<S> t(Shape{boxes.size(), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto a = boxes[i].as_array();
    for (std::size_t k = 0; k < 4; ++k) t.at(i, k) = static_cast<S>(a[k]);
  }
  return t;
}

/// (smooth-L1, 1 - GIoU) over frames of the ground-truth segment only.
/// Smooth-L1 is summed over the 4 coordinates; both terms average over frames.
template <typename S>
std::pair<Var<S>, Var<S>> bbox_loss(Var<S> pred, const SegmentTarget& gt) {
  gt.validate();
  if (pred.shape() != Shape{gt.frames, 4}) {
    throw ShapeError(detail::shapes_msg("bbox_loss", pred.shape(), Shape{gt.frames, 4}));
  }
  auto& tape = pred.tape();
  const S k = static_cast<S>(gt.boxes.size());
  auto seg = slice(pred, 0, gt.start, gt.end + 1);
  auto target = tape.constant(boxes_tensor<S>(gt.boxes));
  auto l1 = scale(sum(smooth_l1(sub(seg, target), S(1))), S(1) / k);
  auto g = giou(seg, target);
  auto giou_term = scale(sum(add_scalar(scale(g, S(-1)), S(1))), S(1) / k);
  return {l1, giou_term};
}

/// KL(pi_s || p_s) + KL(pi_e || p_e), summed per frame as pi * (log pi - log p)
/// with both probabilities floored at 1e-12, so p == pi gives exactly 0.
template <typename S>
Var<S> temporal_loss(Var<S> p_start, Var<S> p_end, std::span<const double> pi_start,
                     std::span<const double> pi_end) {
  auto& tape = p_start.tape();
  const S floor = S(1e-12);
  auto term = [&](Var<S> p, std::span<const double> pi) {
    if (p.size() != pi.size()) {
      throw ShapeError(detail::shapes_msg("temporal_loss", p.shape(), Shape{pi.size()}));
    }
    Tensor<S> w(p.shape()), log_pi(p.shape());
    for (std::size_t i = 0; i < pi.size(); ++i) {
      w[i] = static_cast<S>(pi[i]);
      log_pi[i] = std::log(w[i] > floor ? w[i] : floor);
    }
    auto ratio = sub(tape.constant(std::move(log_pi)), log(p, floor));
    return sum(mul(tape.constant(std::move(w)), ratio));
  };
  return add(term(p_start, pi_start), term(p_end, pi_end));
}

/// Mean BCE over all frames; label 1 inside [start, end].
template <typename S>
Var<S> segment_loss(Var<S> logits, std::size_t start, std::size_t end) {
  const std::size_t T = logits.size();
  Tensor<S> labels(logits.shape());
  for (std::size_t t = 0; t < T; ++t) labels[t] = (t >= start && t <= end) ? S(1) : S(0);
  return mean(bce_with_logits(logits, labels));
}

struct LossWeights {
  double l1 = 5.0, giou = 3.0, temp = 10.0, seg = 2.0;

  static LossWeights from(const ModelConfig& c) { return {c.lambda_l1, c.lambda_giou, c.lambda_temp, c.lambda_seg}; }

  void validate() const {
    if (l1 < 0 || giou < 0 || temp < 0 || seg < 0) throw ConfigError("loss weights must be non-negative");
  }
};

struct LossBreakdown {
  double l1 = 0, giou = 0, temp = 0, seg = 0, total = 0;
  LossWeights weights;
};

/// total = w.l1 * l1 + w.giou * giou + w.temp * temp + w.seg * seg
inline LossBreakdown total_loss(double l1, double giou_term, double temp, double seg, const LossWeights& w) {
  w.validate();
  LossBreakdown b{l1, giou_term, temp, seg, 0.0, w};
  b.total = w.l1 * l1 + w.giou * giou_term + w.temp * temp + w.seg * seg;
  return b;
}

template <typename S>
struct LossTerms {
  Var<S> l1, giou, temp, seg, total;

  /// Parts as recorded; the total is recomposed in double precision.
  LossBreakdown breakdown(const LossWeights& w) const {
    return total_loss(l1.value().item(), giou.value().item(), temp.value().item(), seg.value().item(), w);
  }
};

template <typename S>
Var<S> weighted_total(Var<S> l1, Var<S> giou_term, Var<S> temp, Var<S> seg, const LossWeights& w) {
  w.validate();
  return add(add(scale(l1, static_cast<S>(w.l1)), scale(giou_term, static_cast<S>(w.giou))),
             add(scale(temp, static_cast<S>(w.temp)), scale(seg, static_cast<S>(w.seg))));
}

}  // namespace stcat
