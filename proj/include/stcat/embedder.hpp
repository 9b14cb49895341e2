#pragma once

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "stcat/config.hpp"
#include "stcat/nn/layers.hpp"
#include "stcat/nn/positional.hpp"

namespace stcat {

/// T x H x W x 3 pixels in [0, 1], row-major.
struct VideoClip {
  std::size_t T = 0, H = 0, W = 0;
  std::vector<float> pixels;

  VideoClip() = default;
  VideoClip(std::size_t t, std::size_t h, std::size_t w)
      : T(t), H(h), W(w), pixels(t * h * w * 3, 0.0f) {}

  float& at(std::size_t t, std::size_t y, std::size_t x, std::size_t ch) {
    return pixels[((t * H + y) * W + x) * 3 + ch];
  }
  float at(std::size_t t, std::size_t y, std::size_t x, std::size_t ch) const {
    return pixels[((t * H + y) * W + x) * 3 + ch];
  }

  /// Frames picked by `indices`, in order.
  VideoClip frames(std::span<const int> indices) const {
    VideoClip out(indices.size(), H, W);
    const std::size_t fsz = H * W * 3;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[i] * fsz), fsz,
                  out.pixels.begin() + static_cast<std::ptrdiff_t>(i * fsz));
    }
    return out;
  }
};

struct QueryTokens {
  std::vector<int> ids;
  std::size_t vocab_size = 0;

  void validate() const {
    if (ids.empty()) throw std::invalid_argument("query: empty token list");
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw std::out_of_range("query: token id " + std::to_string(id) + " outside vocabulary of size " +
                                std::to_string(vocab_size));
      }
    }
  }
};

/// Rearranges a clip into per-frame patch rows: [T, (H/P)*(W/P), P*P*3].
/// Patches are ordered row-major over the grid; each row is (py, px, ch).
template <typename S>
Tensor<S> patchify(const VideoClip& clip, std::size_t patch) {
  if (patch == 0 || clip.H % patch != 0 || clip.W % patch != 0) {
    throw ConfigError("patch_embed: frame " + std::to_string(clip.H) + "x" + std::to_string(clip.W) +
                      " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t gh = clip.H / patch, gw = clip.W / patch, d = patch * patch * 3;
  Tensor<S> out(Shape{clip.T, gh * gw, d});
  for (std::size_t t = 0; t < clip.T; ++t)
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        S* row = out.data.data() + ((t * gh + gy) * gw + gx) * d;
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            for (std::size_t ch = 0; ch < 3; ++ch)
              *row++ = static_cast<S>(clip.at(t, gy * patch + py, gx * patch + px, ch));
      }
  return out;
}

/// Toy visual and text encoders plus the projection into the shared width C.
template <typename S>
class Embedder {
 public:
  Embedder() = default;
  Embedder(ParameterStore<S>& store, Initializer& init, const ModelConfig& cfg)
      : patch_(cfg.patch), text_dim_(cfg.text_dim()) {
    patch_proj_ = Linear<S>::create(store, init, "embed.patch", cfg.patch * cfg.patch * 3, cfg.visual_dim());
    token_table_ = store.add("embed.tokens", init.normal<S>(Shape{cfg.vocab_size, cfg.text_dim()}, 1.0));
    visual_proj_ = Linear<S>::create(store, init, "embed.visual_proj", cfg.visual_dim(), cfg.C);
    text_proj_ = Linear<S>::create(store, init, "embed.text_proj", cfg.text_dim(), cfg.C);
  }

  /// [T, N_v, C_v]; frame t depends only on frame t's pixels.
  Var<S> patch_embed(Graph<S>& g, const VideoClip& clip) const {
    return patch_proj_(g, g.constant(patchify<S>(clip, patch_)));
  }

  /// [N, C_s]: token embedding plus 1-D sinusoidal position term.
  Var<S> embed_tokens(Graph<S>& g, const QueryTokens& tokens) const {
    tokens.validate();
    auto rows = embedding(g.param(token_table_), std::span<const int>(tokens.ids));
    return add(rows, g.constant(sine_encoding_1d<S>(tokens.ids.size(), text_dim_)));
  }

  std::pair<Var<S>, Var<S>> project(Graph<S>& g, Var<S> visual, Var<S> text) const {
    return {visual_proj_(g, visual), text_proj_(g, text)};
  }

  const Linear<S>& visual_projection() const { return visual_proj_; }
  const Linear<S>& text_projection() const { return text_proj_; }
  const Linear<S>& patch_projection() const { return patch_proj_; }

 private:
  std::size_t patch_ = 8;
  std::size_t text_dim_ = 0;
  Linear<S> patch_proj_;
  ParamId token_table_;
  Linear<S> visual_proj_, text_proj_;
};

}  // namespace stcat
