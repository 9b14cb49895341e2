#pragma once

// Differentiable primitives. Every op computes its forward value eagerly and
// registers a backward closure on the operand's tape.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "stcat/tensor/tape.hpp"
#include "stcat/tensor/tensor.hpp"

namespace stcat {

namespace detail {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<RowMat<S>>;
template <typename S>
using CMapMat = Eigen::Map<const RowMat<S>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline std::string shapes_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b);
}

/// outer / extent / inner decomposition of a shape around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) throw ShapeError(shapes_msg(op, a, b));
    out[i] = std::max(da, db);
  }
  return out;
}

/// Flat source index for every element of `to`, broadcasting `from` numpy-style.
inline std::vector<std::size_t> broadcast_index(const Shape& from, const Shape& to) {
  const std::size_t r = to.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t acc = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    const std::size_t ti = i + (r - from.size());
    stride[ti] = from[i] == 1 ? 0 : acc;
    acc *= from[i];
  }
  std::vector<std::size_t> idx(numel(to));
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < idx.size(); ++flat) {
    idx[flat] = src;
    for (std::size_t d = r; d-- > 0;) {
      ++counter[d];
      src += stride[d];
      if (counter[d] < to[d]) break;
      src -= stride[d] * counter[d];
      counter[d] = 0;
    }
  }
  return idx;
}

template <typename S, typename F, typename DF>
Var<S> unary(const char* op, Var<S> x, F f, DF df) {
  const auto& xv = x.value();
  Tensor<S> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  return x.tape().record(op, std::move(out), {x}, [xi, df](Tape<S>& t, std::size_t self) {
    S* gx = t.grad_buffer(xi);
    const auto& g = t.output_grad(self);
    const auto& xv = t.value(xi);
    const auto& yv = t.value(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// shape manipulation

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  detail::require(numel(shape) == x.size(),
                  detail::shapes_msg("reshape", x.shape(), shape));
  Tensor<S> out(std::move(shape), x.value().data);
  const std::size_t xi = x.id();
  return x.tape().record("reshape", std::move(out), {x}, [xi](Tape<S>& t, std::size_t self) {
    S* gx = t.grad_buffer(xi);
    const auto& g = t.output_grad(self);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename S>
Var<S> broadcast_to(Var<S> x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape target = detail::broadcast_shape("broadcast_to", x.shape(), shape);
  detail::require(target == shape, detail::shapes_msg("broadcast_to", x.shape(), shape));
  auto idx = detail::broadcast_index(x.shape(), shape);
  Tensor<S> out(shape);
  const auto& xv = x.value();
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = xv[idx[i]];
  const std::size_t xi = x.id();
  return x.tape().record("broadcast_to", std::move(out), {x},
                         [xi, idx = std::move(idx)](Tape<S>& t, std::size_t self) {
                           S* gx = t.grad_buffer(xi);
                           const auto& g = t.output_grad(self);
                           for (std::size_t i = 0; i < g.size(); ++i) gx[idx[i]] += g[i];
                         });
}

template <typename S>
Var<S> concat(std::span<const Var<S>> parts, std::size_t axis) {
  detail::require(!parts.empty(), "concat: no operands");
  const Shape& first = parts[0].shape();
  detail::require(axis < first.size(), "concat: axis out of range for " + to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw ShapeError(detail::shapes_msg("concat", first, s));
    out_shape[axis] += s[axis];
  }
  const auto split = detail::split_at(out_shape, axis);
  Tensor<S> out(out_shape);
  std::vector<std::size_t> ids, offsets, exts;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.shape()[axis];
    const auto& pv = p.value();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(pv.data.begin() + o * ext * split.inner, ext * split.inner,
                  out.data.begin() + (o * split.extent + off) * split.inner);
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    exts.push_back(ext);
    off += ext;
  }
  return parts[0].tape().record(
      "concat", std::move(out), parts,
      [ids, offsets, exts, split](Tape<S>& t, std::size_t self) {
        const auto& g = t.output_grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          S* gp = t.grad_buffer(ids[k]);
          if (!gp) continue;
          const std::size_t ext = exts[k];
          for (std::size_t o = 0; o < split.outer; ++o) {
            const S* src = g.data() + (o * split.extent + offsets[k]) * split.inner;
            S* dst = gp + o * ext * split.inner;
            for (std::size_t i = 0; i < ext * split.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

template <typename S>
Var<S> concat(std::initializer_list<Var<S>> parts, std::size_t axis) {
  return concat(std::span<const Var<S>>(parts.begin(), parts.size()), axis);
}

/// Elements [begin, end) along one axis.
template <typename S>
Var<S> slice(Var<S> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  detail::require(axis < s.size() && begin < end && end <= s[axis],
                  "slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                      ") invalid on axis " + std::to_string(axis) + " of " + to_string(s));
  const auto split = detail::split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t len = (end - begin) * split.inner;
  Tensor<S> out(out_shape);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(xv.data.begin() + (o * split.extent + begin) * split.inner, len,
                out.data.begin() + o * len);
  }
  const std::size_t xi = x.id();
  return x.tape().record("slice", std::move(out), {x},
                         [xi, split, begin, len](Tape<S>& t, std::size_t self) {
                           S* gx = t.grad_buffer(xi);
                           const auto& g = t.output_grad(self);
                           for (std::size_t o = 0; o < split.outer; ++o) {
                             S* dst = gx + (o * split.extent + begin) * split.inner;
                             const S* src = g.data() + o * len;
                             for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                           }
                         });
}

/// Removes the sliced axis: x[..., index, ...].
template <typename S>
Var<S> select(Var<S> x, std::size_t axis, std::size_t index) {
  Shape s = x.shape();
  auto y = slice(x, axis, index, index + 1);
  s.erase(s.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(y, s);
}

// ---------------------------------------------------------------------------
// elementwise binary ops with numpy broadcasting

namespace detail {

template <typename S, typename F, typename DA, typename DB>
Var<S> binary(const char* op, Var<S> a, Var<S> b, F f, DA da, DB db) {
  if (a.shape() != b.shape()) {
    const Shape s = broadcast_shape(op, a.shape(), b.shape());
    a = broadcast_to(a, s);
    b = broadcast_to(b, s);
  }
  const auto& av = a.value();
  const auto& bv = b.value();
  Tensor<S> out(av.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(op, std::move(out), {a, b}, [ai, bi, da, db](Tape<S>& t, std::size_t self) {
    const auto& g = t.output_grad(self);
    const auto& av = t.value(ai);
    const auto& bv = t.value(bi);
    if (S* ga = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[i]);
    }
    if (S* gb = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(av[i], bv[i]);
    }
  });
}

}  // namespace detail

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  return detail::binary(
      "add", a, b, [](S x, S y) { return x + y; }, [](S, S) { return S(1); },
      [](S, S) { return S(1); });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  return detail::binary(
      "sub", a, b, [](S x, S y) { return x - y; }, [](S, S) { return S(1); },
      [](S, S) { return S(-1); });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  return detail::binary(
      "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y) { return y; },
      [](S x, S) { return x; });
}

template <typename S>
Var<S> div(Var<S> a, Var<S> b) {
  return detail::binary(
      "div", a, b, [](S x, S y) { return x / y; }, [](S, S y) { return S(1) / y; },
      [](S x, S y) { return -x / (y * y); });
}

/// Ties route the gradient to the first operand.
template <typename S>
Var<S> minimum(Var<S> a, Var<S> b) {
  return detail::binary(
      "minimum", a, b, [](S x, S y) { return x <= y ? x : y; },
      [](S x, S y) { return x <= y ? S(1) : S(0); }, [](S x, S y) { return x <= y ? S(0) : S(1); });
}

template <typename S>
Var<S> maximum(Var<S> a, Var<S> b) {
  return detail::binary(
      "maximum", a, b, [](S x, S y) { return x >= y ? x : y; },
      [](S x, S y) { return x >= y ? S(1) : S(0); }, [](S x, S y) { return x >= y ? S(0) : S(1); });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S>
Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S>
Var<S> operator/(Var<S> a, Var<S> b) { return div(a, b); }

// ---------------------------------------------------------------------------
// elementwise unary ops

template <typename S>
Var<S> scale(Var<S> x, S c) {
  return detail::unary("scale", x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <typename S>
Var<S> add_scalar(Var<S> x, S c) {
  return detail::unary("add_scalar", x, [c](S v) { return v + c; }, [](S, S) { return S(1); });
}

template <typename S>
Var<S> tanh(Var<S> x) {
  return detail::unary("tanh", x, [](S v) { return std::tanh(v); },
                       [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> sigmoid(Var<S> x) {
  return detail::unary(
      "sigmoid", x,
      [](S v) {
        if (v >= 0) return S(1) / (S(1) + std::exp(-v));
        const S e = std::exp(v);
        return e / (S(1) + e);
      },
      [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> relu(Var<S> x) {
  return detail::unary("relu", x, [](S v) { return v > 0 ? v : S(0); },
                       [](S v, S) { return v > 0 ? S(1) : S(0); });
}

template <typename S>
Var<S> exp(Var<S> x) {
  return detail::unary("exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}

/// Natural log of max(x, floor). Gradient is zero where the floor is active.
template <typename S>
Var<S> log(Var<S> x, S floor = S(0)) {
  return detail::unary(
      "log", x, [floor](S v) { return std::log(v > floor ? v : floor); },
      [floor](S v, S) { return v > floor ? S(1) / v : S(0); });
}

/// Gradient passes where lo < x < hi and is zero where the clamp is active.
template <typename S>
Var<S> clamp(Var<S> x, S lo, S hi) {
  return detail::unary(
      "clamp", x, [lo, hi](S v) { return std::clamp(v, lo, hi); },
      [lo, hi](S v, S) { return (v > lo && v < hi) ? S(1) : S(0); });
}

/// log(x / (1 - x)) with x clamped into [eps, 1 - eps].
template <typename S>
Var<S> logit(Var<S> x, S eps = S(1e-5)) {
  return detail::unary(
      "logit", x,
      [eps](S v) {
        const S c = std::clamp(v, eps, S(1) - eps);
        return std::log(c / (S(1) - c));
      },
      [eps](S v, S) { return (v > eps && v < S(1) - eps) ? S(1) / (v * (S(1) - v)) : S(0); });
}

/// Huber-style smooth L1 with transition point beta.
template <typename S>
Var<S> smooth_l1(Var<S> x, S beta = S(1)) {
  return detail::unary(
      "smooth_l1", x,
      [beta](S v) {
        const S a = std::abs(v);
        return a < beta ? S(0.5) * v * v / beta : a - S(0.5) * beta;
      },
      [beta](S v, S) {
        if (std::abs(v) < beta) return v / beta;
        return v > 0 ? S(1) : S(-1);
      });
}

/// Elementwise binary cross-entropy on logits against fixed targets.
template <typename S>
Var<S> bce_with_logits(Var<S> logits, const Tensor<S>& targets) {
  detail::require(logits.shape() == targets.shape,
                  detail::shapes_msg("bce_with_logits", logits.shape(), targets.shape));
  const auto& xv = logits.value();
  Tensor<S> out(xv.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S x = xv[i];
    out[i] = std::max(x, S(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const std::size_t xi = logits.id();
  return logits.tape().record(
      "bce_with_logits", std::move(out), {logits}, [xi, targets](Tape<S>& t, std::size_t self) {
        S* gx = t.grad_buffer(xi);
        const auto& g = t.output_grad(self);
        const auto& xv = t.value(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const S x = xv[i];
          const S p = x >= 0 ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
          gx[i] += g[i] * (p - targets[i]);
        }
      });
}

// ---------------------------------------------------------------------------
// reductions

template <typename S>
Var<S> sum(Var<S> x) {
  S acc = 0;
  for (S v : x.value().data) acc += v;
  const std::size_t xi = x.id();
  return x.tape().record("sum", Tensor<S>::scalar(acc), {x}, [xi](Tape<S>& t, std::size_t self) {
    S* gx = t.grad_buffer(xi);
    const S g = t.output_grad(self)[0];
    const std::size_t n = t.value(xi).size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

template <typename S>
Var<S> mean(Var<S> x) {
  return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

/// Sum over one axis; the axis is removed from the result shape.
template <typename S>
Var<S> sum_axis(Var<S> x, std::size_t axis) {
  detail::require(axis < x.shape().size(), "sum_axis: axis out of range for " + to_string(x.shape()));
  const auto split = detail::split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<S> out(out_shape);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t e = 0; e < split.extent; ++e)
      for (std::size_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += xv[(o * split.extent + e) * split.inner + i];
  const std::size_t xi = x.id();
  return x.tape().record("sum_axis", std::move(out), {x}, [xi, split](Tape<S>& t, std::size_t self) {
    S* gx = t.grad_buffer(xi);
    const auto& g = t.output_grad(self);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t e = 0; e < split.extent; ++e)
        for (std::size_t i = 0; i < split.inner; ++i)
          gx[(o * split.extent + e) * split.inner + i] += g[o * split.inner + i];
  });
}

template <typename S>
Var<S> mean_axis(Var<S> x, std::size_t axis) {
  const S n = static_cast<S>(x.shape().at(axis));
  return scale(sum_axis(x, axis), S(1) / n);
}

// ---------------------------------------------------------------------------
// normalization

template <typename S>
Var<S> softmax(Var<S> x, std::size_t axis) {
  detail::require(axis < x.shape().size(), "softmax: axis " + std::to_string(axis) +
                                                " out of range for " + to_string(x.shape()));
  const auto split = detail::split_at(x.shape(), axis);
  const auto& xv = x.value();
  Tensor<S> out(xv.shape);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.extent * split.inner + i;
      S mx = xv[base];
      for (std::size_t e = 1; e < split.extent; ++e) mx = std::max(mx, xv[base + e * split.inner]);
      S z = 0;
      for (std::size_t e = 0; e < split.extent; ++e) {
        const S v = std::exp(xv[base + e * split.inner] - mx);
        out[base + e * split.inner] = v;
        z += v;
      }
      for (std::size_t e = 0; e < split.extent; ++e) out[base + e * split.inner] /= z;
    }
  }
  const std::size_t xi = x.id();
  return x.tape().record("softmax", std::move(out), {x}, [xi, split](Tape<S>& t, std::size_t self) {
    S* gx = t.grad_buffer(xi);
    const auto& g = t.output_grad(self);
    const auto& y = t.value(self);
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t i = 0; i < split.inner; ++i) {
        const std::size_t base = o * split.extent * split.inner + i;
        S dot = 0;
        for (std::size_t e = 0; e < split.extent; ++e) {
          const std::size_t k = base + e * split.inner;
          dot += g[k] * y[k];
        }
        for (std::size_t e = 0; e < split.extent; ++e) {
          const std::size_t k = base + e * split.inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

/// Layer normalization over the last axis with affine gain and bias.
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  const Shape& s = x.shape();
  detail::require(!s.empty(), "layer_norm: scalar input");
  const std::size_t d = s.back();
  detail::require(gain.shape() == Shape{d} && bias.shape() == Shape{d},
                  detail::shapes_msg("layer_norm", s, gain.shape()));
  const std::size_t rows = x.size() / d;
  const auto& xv = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  Tensor<S> out(s);
  std::vector<S> xhat(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const S* row = xv.data.data() + r * d;
    S mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<S>(d);
    S var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const S h = (row[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id(), gi = gain.id(), bi = bias.id();
  return x.tape().record(
      "layer_norm", std::move(out), {x, gain, bias},
      [xi, gi, bi, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<S>& t, std::size_t self) {
        const auto& g = t.output_grad(self);
        const auto& gv = t.value(gi);
        if (S* gg = t.grad_buffer(gi)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (S* gb = t.grad_buffer(bi)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (S* gx = t.grad_buffer(xi)) {
          const S inv_d = S(1) / static_cast<S>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            S m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < d; ++j) {
              const S dh = g[r * d + j] * gv[j];
              m1 += dh;
              m2 += dh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const S dh = g[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// linear algebra

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw ShapeError(detail::shapes_msg("matmul", as, bs));
  }
  const std::size_t m = as[0], k = as[1], n = bs[1];
  Tensor<S> out(Shape{m, n});
  detail::MapMat<S>(out.data.data(), m, n).noalias() =
      detail::CMapMat<S>(a.value().data.data(), m, k) * detail::CMapMat<S>(b.value().data.data(), k, n);
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record("matmul", std::move(out), {a, b}, [ai, bi, m, k, n](Tape<S>& t, std::size_t self) {
    detail::CMapMat<S> g(t.output_grad(self).data(), m, n);
    if (S* ga = t.grad_buffer(ai)) {
      detail::MapMat<S>(ga, m, k).noalias() += g * detail::CMapMat<S>(t.value(bi).data.data(), k, n).transpose();
    }
    if (S* gb = t.grad_buffer(bi)) {
      detail::MapMat<S>(gb, k, n).noalias() += detail::CMapMat<S>(t.value(ai).data.data(), m, k).transpose() * g;
    }
  });
}

/// x[..., in] · W[in, out] + b[out]. `bias` may be an invalid Var for no bias.
template <typename S>
Var<S> linear(Var<S> x, Var<S> weight, Var<S> bias = {}) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.empty() || ws.size() != 2 || xs.back() != ws[0]) {
    throw ShapeError(detail::shapes_msg("linear", xs, ws));
  }
  const std::size_t in = ws[0], outd = ws[1], rows = x.size() / in;
  if (bias.valid() && bias.shape() != Shape{outd}) {
    throw ShapeError(detail::shapes_msg("linear(bias)", ws, bias.shape()));
  }
  Shape out_shape = xs;
  out_shape.back() = outd;
  Tensor<S> out(out_shape);
  detail::MapMat<S> y(out.data.data(), rows, outd);
  y.noalias() = detail::CMapMat<S>(x.value().data.data(), rows, in) *
                detail::CMapMat<S>(weight.value().data.data(), in, outd);
  if (bias.valid()) {
    y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(bias.value().data.data(), outd);
  }
  const std::size_t xi = x.id(), wi = weight.id();
  const bool has_bias = bias.valid();
  const std::size_t bi = has_bias ? bias.id() : 0;
  auto fn = [xi, wi, bi, has_bias, rows, in, outd](Tape<S>& t, std::size_t self) {
    detail::CMapMat<S> g(t.output_grad(self).data(), rows, outd);
    if (S* gx = t.grad_buffer(xi)) {
      detail::MapMat<S>(gx, rows, in).noalias() +=
          g * detail::CMapMat<S>(t.value(wi).data.data(), in, outd).transpose();
    }
    if (S* gw = t.grad_buffer(wi)) {
      detail::MapMat<S>(gw, in, outd).noalias() +=
          detail::CMapMat<S>(t.value(xi).data.data(), rows, in).transpose() * g;
    }
    if (has_bias) {
      if (S* gb = t.grad_buffer(bi)) {
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(gb, outd) += g.colwise().sum();
      }
    }
  };
  if (has_bias) return x.tape().record("linear", std::move(out), {x, weight, bias}, fn);
  return x.tape().record("linear", std::move(out), {x, weight}, fn);
}

// ---------------------------------------------------------------------------
// lookups and encodings

/// Rows of `table` [V, D] selected by `ids`.
template <typename S>
Var<S> embedding(Var<S> table, std::span<const int> ids) {
  detail::require(table.shape().size() == 2, "embedding: table must be 2-D, got " + to_string(table.shape()));
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  detail::require(!ids.empty(), "embedding: empty id list");
  Tensor<S> out(Shape{ids.size(), d});
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding: token id " + std::to_string(ids[i]) +
                              " out of range for vocabulary of size " + std::to_string(vocab));
    }
    std::copy_n(tv.data.begin() + ids[i] * d, d, out.data.begin() + i * d);
  }
  const std::size_t ti = table.id();
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape().record("embedding", std::move(out), {table},
                             [ti, d, idv = std::move(idv)](Tape<S>& t, std::size_t self) {
                               S* gt = t.grad_buffer(ti);
                               const auto& g = t.output_grad(self);
                               for (std::size_t i = 0; i < idv.size(); ++i)
                                 for (std::size_t j = 0; j < d; ++j) gt[idv[i] * d + j] += g[i * d + j];
                             });
}

/// Sinusoidal encoding of each coordinate of x[..., K] into `dim` channels
/// (sin/cos interleaved), concatenated to [..., K*dim]. Values are scaled by
/// 2*pi so unit-interval coordinates span a full period at the lowest band.
template <typename S>
Var<S> sine_embed(Var<S> x, std::size_t dim, S temperature = S(10000)) {
  detail::require(dim % 2 == 0 && dim > 0, "sine_embed: dim must be even and positive");
  const Shape& s = x.shape();
  detail::require(!s.empty(), "sine_embed: scalar input");
  const std::size_t k = s.back(), rows = x.size() / k;
  std::vector<S> freq(dim / 2);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    freq[i] = S(2) * std::numbers::pi_v<S> /
              std::pow(temperature, static_cast<S>(2 * i) / static_cast<S>(dim));
  }
  Shape out_shape = s;
  out_shape.back() = k * dim;
  Tensor<S> out(out_shape);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < k; ++c)
      for (std::size_t i = 0; i < dim / 2; ++i) {
        const S a = xv[r * k + c] * freq[i];
        S* o = out.data.data() + (r * k + c) * dim + 2 * i;
        o[0] = std::sin(a);
        o[1] = std::cos(a);
      }
  const std::size_t xi = x.id();
  return x.tape().record("sine_embed", std::move(out), {x},
                         [xi, rows, k, dim, freq = std::move(freq)](Tape<S>& t, std::size_t self) {
                           S* gx = t.grad_buffer(xi);
                           const auto& g = t.output_grad(self);
                           const auto& y = t.value(self);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < k; ++c) {
                               S acc = 0;
                               for (std::size_t i = 0; i < dim / 2; ++i) {
                                 const std::size_t o = (r * k + c) * dim + 2 * i;
                                 acc += freq[i] * (g[o] * y[o + 1] - g[o + 1] * y[o]);
                               }
                               gx[r * k + c] += acc;
                             }
                         });
}

}  // namespace stcat
