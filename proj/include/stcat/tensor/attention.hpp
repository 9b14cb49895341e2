#pragma once

#include <cmath>
#include <memory>

#include "stcat/tensor/ops.hpp"

namespace stcat {

/// Output of the attention core. `weights` has shape [B, heads, Lq, Lk] and
/// holds the post-softmax attention of every head.
template <typename S>
struct AttentionResult {
  Var<S> output;
  std::shared_ptr<const Tensor<S>> weights;
};

/// Batched multi-head scaled dot-product attention over already projected
/// inputs: q [B, Lq, C], k [B, Lk, C], v [B, Lk, C]. Channels are split
/// into `heads` contiguous groups of C / heads.
template <typename S>
AttentionResult<S> scaled_dot_attention(Var<S> q, Var<S> k, Var<S> v, std::size_t heads) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  if (qs.size() != 3 || ks.size() != 3 || qs[0] != ks[0] || qs[2] != ks[2]) {
    throw ShapeError(detail::shapes_msg("attention(q,k)", qs, ks));
  }
  if (v.shape() != ks) throw ShapeError(detail::shapes_msg("attention(k,v)", ks, v.shape()));
  const std::size_t B = qs[0], Lq = qs[1], Lk = ks[1], C = qs[2];
  if (heads == 0 || C % heads != 0) {
    throw ConfigError("attention: channels " + std::to_string(C) + " not divisible by heads " +
                      std::to_string(heads));
  }
  const std::size_t dh = C / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

  using Strided = Eigen::Map<const detail::RowMat<S>, 0, Eigen::OuterStride<>>;
  using StridedMut = Eigen::Map<detail::RowMat<S>, 0, Eigen::OuterStride<>>;
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(C));

  auto probs = std::make_shared<Tensor<S>>(Shape{B, heads, Lq, Lk});
  Tensor<S> out(Shape{B, Lq, C});
  const S* qd = q.value().data.data();
  const S* kd = k.value().data.data();
  const S* vd = v.value().data.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      Strided Q(qd + b * Lq * C + h * dh, Lq, dh, stride);
      Strided K(kd + b * Lk * C + h * dh, Lk, dh, stride);
      Strided V(vd + b * Lk * C + h * dh, Lk, dh, stride);
      detail::MapMat<S> P(probs->data.data() + (b * heads + h) * Lq * Lk, Lq, Lk);
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < P.rows(); ++r) {
        auto row = P.row(r);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      StridedMut O(out.data.data() + b * Lq * C + h * dh, Lq, dh, stride);
      O.noalias() = P * V;
    }
  }

  const std::size_t qi = q.id(), ki = k.id(), vi = v.id();
  auto node = q.tape().record(
      "attention", std::move(out), {q, k, v},
      [qi, ki, vi, probs, B, Lq, Lk, C, heads, dh, inv_sqrt](Tape<S>& t, std::size_t self) {
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(C));
        const S* g = t.output_grad(self).data();
        const S* qd = t.value(qi).data.data();
        const S* kd = t.value(ki).data.data();
        const S* vd = t.value(vi).data.data();
        S* gq = t.grad_buffer(qi);
        S* gk = t.grad_buffer(ki);
        S* gv = t.grad_buffer(vi);
        detail::RowMat<S> dP(Lq, Lk);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            Strided dO(g + b * Lq * C + h * dh, Lq, dh, stride);
            Strided Q(qd + b * Lq * C + h * dh, Lq, dh, stride);
            Strided K(kd + b * Lk * C + h * dh, Lk, dh, stride);
            Strided V(vd + b * Lk * C + h * dh, Lk, dh, stride);
            detail::CMapMat<S> P(probs->data.data() + (b * heads + h) * Lq * Lk, Lq, Lk);
            if (gv) {
              StridedMut(gv + b * Lk * C + h * dh, Lk, dh, stride).noalias() += P.transpose() * dO;
            }
            if (!gq && !gk) continue;
            dP.noalias() = dO * V.transpose();
            // softmax backward: dS = P * (dP - rowsum(dP * P))
            const Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (dP.array() * P.array()).rowwise().sum();
            dP = (P.array() * (dP.colwise() - dots).array()) * inv_sqrt;
            if (gq) StridedMut(gq + b * Lq * C + h * dh, Lq, dh, stride).noalias() += dP * K;
            if (gk) StridedMut(gk + b * Lk * C + h * dh, Lk, dh, stride).noalias() += dP.transpose() * Q;
          }
        }
      });
  return {node, probs};
}

}  // namespace stcat
