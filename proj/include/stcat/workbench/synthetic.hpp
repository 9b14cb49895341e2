#pragma once

// Procedural "moving shapes" clips with templated grounding queries.
//
// Every shape moves on an integer pixel lattice with integer velocity and
// reflects off the frame borders, so ground-truth boxes follow exactly from
// the motion parameters. One target shape carries an event (it appears, it
// reverses direction, or it overlaps another shape) over a contiguous
// segment; the query names its color, its shape and the event.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stcat/embedder.hpp"
#include "stcat/grounding.hpp"

namespace stcat::synth {

enum class ShapeKind { kSquare, kCircle, kTriangle };
enum class Color { kRed, kGreen, kBlue };
enum class EventKind { kAppears, kChangesDirection, kOverlaps };

inline constexpr std::array<const char*, 40> kVocabulary = {
    "<pad>", "<unk>",  "the",     "a",      "red",     "green",   "blue",    "square",  "circle",  "triangle",
    "that",  "which",  "appears", "changes", "direction", "overlaps", "another", "shape", "turns",  "around",
    "touches", "is",   "visible", "briefly", "moving",  "object",  "in",      "video",   "left",    "right",
    "up",    "down",   "small",   "large",   "yellow",  "white",   "and",     "then",    "it",      "."};

inline std::size_t vocabulary_size() { return kVocabulary.size(); }

inline int token_id(const std::string& word) {
  for (std::size_t i = 0; i < kVocabulary.size(); ++i) {
    if (word == kVocabulary[i]) return static_cast<int>(i);
  }
  return 1;  // <unk>
}

/// Whitespace tokenizer over the closed vocabulary.
inline QueryTokens tokenize(const std::string& text) {
  QueryTokens q;
  q.vocab_size = kVocabulary.size();
  std::istringstream is(text);
  std::string w;
  while (is >> w) q.ids.push_back(token_id(w));
  return q;
}

inline std::string detokenize(const QueryTokens& q) {
  std::string s;
  for (int id : q.ids) {
    if (!s.empty()) s += ' ';
    s += kVocabulary.at(static_cast<std::size_t>(id));
  }
  return s;
}

inline const char* color_name(Color c) {
  switch (c) {
    case Color::kRed: return "red";
    case Color::kGreen: return "green";
    case Color::kBlue: return "blue";
  }
  return "?";
}

inline const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "?";
}

inline const char* event_phrase(EventKind e) {
  switch (e) {
    case EventKind::kAppears: return "appears";
    case EventKind::kChangesDirection: return "changes direction";
    case EventKind::kOverlaps: return "overlaps another shape";
  }
  return "?";
}

/// Motion is defined by the unfolded trajectory u(t) = start + v*t, reversed
/// once after `turn_frame` (if >= 0), then folded into [0, extent - size].
struct MovingShape {
  ShapeKind kind = ShapeKind::kSquare;
  Color color = Color::kRed;
  int size = 8;
  int x0 = 0, y0 = 0;  // top-left corner at frame 0
  int vx = 0, vy = 0;
  int turn_frame = -1;
  int visible_from = 0, visible_to = 0;  // inclusive
};

struct Scene {
  int frames = 16, height = 32, width = 32;
  std::vector<MovingShape> shapes;
  std::size_t target = 0;
  EventKind event = EventKind::kAppears;
  int t_start = 0, t_end = 0;
};

struct GeneratorConfig {
  int frames = 16;
  int height = 32;
  int width = 32;
  int min_size = 6;
  int max_size = 10;
  int max_retries = 2000;
};

/// Folds an unfolded coordinate into [0, span] by reflection.
inline int reflect(int u, int span) {
  if (span == 0) return 0;
  const int period = 2 * span;
  int m = u % period;
  if (m < 0) m += period;
  return m <= span ? m : period - m;
}

inline int unfolded(int start, int v, int turn, int t) {
  if (turn < 0 || t <= turn) return start + v * t;
  return start + v * turn - v * (t - turn);
}

/// Top-left corner of a shape at frame t, in closed form.
inline std::pair<int, int> position_at(const MovingShape& s, int t, int height, int width) {
  return {reflect(unfolded(s.x0, s.vx, s.turn_frame, t), width - s.size),
          reflect(unfolded(s.y0, s.vy, s.turn_frame, t), height - s.size)};
}

inline Box box_at(const MovingShape& s, int t, int height, int width) {
  const auto [x, y] = position_at(s, t, height, width);
  return Box{(x + s.size / 2.0) / width, (y + s.size / 2.0) / height, static_cast<double>(s.size) / width,
             static_cast<double>(s.size) / height};
}

/// Pixel-space axis-aligned overlap of two shapes' boxes at frame t.
inline bool overlapping(const MovingShape& a, const MovingShape& b, int t, int height, int width) {
  const auto [ax, ay] = position_at(a, t, height, width);
  const auto [bx, by] = position_at(b, t, height, width);
  return ax < bx + b.size && bx < ax + a.size && ay < by + b.size && by < ay + a.size;
}

/// Whether the shape's trajectory reflects off a border within the clip.
inline bool bounces(const MovingShape& s, int frames, int height, int width) {
  for (int t = 0; t < frames; ++t) {
    const int ux = unfolded(s.x0, s.vx, s.turn_frame, t);
    const int uy = unfolded(s.y0, s.vy, s.turn_frame, t);
    if (ux < 0 || ux > width - s.size || uy < 0 || uy > height - s.size) return true;
  }
  return false;
}

inline std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::kRed: return {1.f, 0.f, 0.f};
    case Color::kGreen: return {0.f, 1.f, 0.f};
    case Color::kBlue: return {0.f, 0.f, 1.f};
  }
  return {1.f, 1.f, 1.f};
}

/// Pixel (px, py) relative to the shape's top-left corner is covered.
inline bool covers(const MovingShape& s, int px, int py) {
  const double half = s.size / 2.0;
  const double dx = px + 0.5 - half, dy = py + 0.5 - half;
  switch (s.kind) {
    case ShapeKind::kSquare: return true;
    case ShapeKind::kCircle: return dx * dx + dy * dy <= half * half;
    case ShapeKind::kTriangle: return std::abs(dx) <= (py + 1.0) * half / s.size;
  }
  return false;
}

inline VideoClip render(const Scene& scene) {
  VideoClip clip(static_cast<std::size_t>(scene.frames), static_cast<std::size_t>(scene.height),
                 static_cast<std::size_t>(scene.width));
  for (int t = 0; t < scene.frames; ++t) {
    for (const auto& s : scene.shapes) {
      if (t < s.visible_from || t > s.visible_to) continue;
      const auto [x, y] = position_at(s, t, scene.height, scene.width);
      const auto col = rgb(s.color);
      for (int py = 0; py < s.size; ++py)
        for (int px = 0; px < s.size; ++px) {
          if (!covers(s, px, py)) continue;
          for (std::size_t ch = 0; ch < 3; ++ch)
            clip.at(static_cast<std::size_t>(t), static_cast<std::size_t>(y + py), static_cast<std::size_t>(x + px),
                    ch) = col[ch];
        }
    }
  }
  return clip;
}

/// Ground-truth tube of the scene's target over its event segment.
inline Tube ground_truth(const Scene& scene) {
  Tube tube;
  tube.t_start = scene.t_start;
  tube.t_end = scene.t_end;
  const auto& s = scene.shapes.at(scene.target);
  for (int t = scene.t_start; t <= scene.t_end; ++t) tube.boxes.push_back(box_at(s, t, scene.height, scene.width));
  return tube;
}

struct Sample {
  std::string id;
  VideoClip video;
  QueryTokens tokens;
  std::string text;
  Tube gt;
  std::uint64_t seed = 0;
  Scene scene;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  bool coin() { return uniform(0, 1) == 1; }

 private:
  std::mt19937_64 gen_;
};

inline MovingShape random_shape(Rng& rng, const GeneratorConfig& g, int max_speed) {
  MovingShape s;
  s.kind = static_cast<ShapeKind>(rng.uniform(0, 2));
  s.color = static_cast<Color>(rng.uniform(0, 2));
  s.size = rng.uniform(g.min_size, g.max_size);
  s.x0 = rng.uniform(0, g.width - s.size);
  s.y0 = rng.uniform(0, g.height - s.size);
  do {
    s.vx = rng.uniform(-max_speed, max_speed);
    s.vy = rng.uniform(-max_speed, max_speed);
  } while (s.vx == 0 && s.vy == 0);
  s.visible_from = 0;
  s.visible_to = g.frames - 1;
  return s;
}

/// Draws a start coordinate whose unfolded path stays inside [0, span];
/// returns false when the path is longer than the span.
inline bool fit_start(Rng& rng, int v, int turn, int frames, int span, int& start) {
  int lo = 0, hi = 0;
  for (int t = 0; t < frames; ++t) {
    const int u = unfolded(0, v, turn, t);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  if (hi - lo > span) return false;
  start = rng.uniform(-lo, span - hi);
  return true;
}

inline bool any_pair_overlaps(const Scene& sc, std::size_t a, std::size_t b) {
  for (int t = 0; t < sc.frames; ++t) {
    if (overlapping(sc.shapes[a], sc.shapes[b], t, sc.height, sc.width)) return true;
  }
  return false;
}

/// Tries one random layout; returns false when the constraints fail.
inline bool try_scene(Rng& rng, const GeneratorConfig& g, EventKind event, Scene& sc) {
  sc = Scene{};
  sc.frames = g.frames;
  sc.height = g.height;
  sc.width = g.width;
  sc.event = event;
  const int count = rng.uniform(2, 4);
  // Border reflections would read as direction changes, so those scenes
  // move slowly enough to never touch a border.
  const int max_speed = event == EventKind::kChangesDirection ? 1 : 2;
  for (int i = 0; i < count; ++i) sc.shapes.push_back(random_shape(rng, g, max_speed));
  sc.target = static_cast<std::size_t>(rng.uniform(0, count - 1));
  auto& target = sc.shapes[sc.target];

  // A distractor shares the target's color or its shape.
  const std::size_t twin = (sc.target + 1) % sc.shapes.size();
  if (rng.coin()) {
    sc.shapes[twin].color = target.color;
  } else {
    sc.shapes[twin].kind = target.kind;
  }

  const int T = g.frames;
  switch (sc.event) {
    case EventKind::kAppears: {
      const int len = rng.uniform(std::min(3, T), std::max(std::min(3, T), T - 4));
      sc.t_start = rng.uniform(0, T - len);
      sc.t_end = sc.t_start + len - 1;
      if (sc.t_start == 0 && sc.t_end == T - 1) return false;
      target.visible_from = sc.t_start;
      target.visible_to = sc.t_end;
      break;
    }
    case EventKind::kChangesDirection: {
      if (T < 4) return false;
      target.turn_frame = rng.uniform(2, T - 3);
      sc.t_start = target.turn_frame;
      sc.t_end = T - 1;
      for (auto& s : sc.shapes) {
        if (!fit_start(rng, s.vx, s.turn_frame, T, g.width - s.size, s.x0) ||
            !fit_start(rng, s.vy, s.turn_frame, T, g.height - s.size, s.y0)) {
          return false;
        }
      }
      break;
    }
    case EventKind::kOverlaps: {
      std::vector<int> hits;
      const auto& partner = sc.shapes[twin];
      for (int t = 0; t < T; ++t) {
        if (overlapping(target, partner, t, g.height, g.width)) hits.push_back(t);
      }
      if (hits.size() < 2 || static_cast<int>(hits.size()) == T) return false;
      if (hits.back() - hits.front() + 1 != static_cast<int>(hits.size())) return false;
      sc.t_start = hits.front();
      sc.t_end = hits.back();
      break;
    }
  }
  // Only the target performs the event: no other pair overlaps at any time.
  for (std::size_t a = 0; a < sc.shapes.size(); ++a)
    for (std::size_t b = a + 1; b < sc.shapes.size(); ++b) {
      const bool event_pair = sc.event == EventKind::kOverlaps &&
                              ((a == sc.target && b == twin) || (b == sc.target && a == twin));
      if (!event_pair && any_pair_overlaps(sc, a, b)) return false;
    }
  return sc.t_end - sc.t_start + 1 >= 2;
}

}  // namespace detail

/// Deterministic in (seed, config).
inline Sample generate_sample(std::uint64_t seed, const GeneratorConfig& g = {}, const std::string& id = {}) {
  if (g.frames < 2 || g.height < g.max_size || g.width < g.max_size || g.min_size < 2 || g.min_size > g.max_size) {
    throw GenerationError("generator: unsatisfiable geometry for seed " + std::to_string(seed));
  }
  detail::Rng rng(seed);
  const auto event = static_cast<EventKind>(rng.uniform(0, 2));
  Scene scene;
  bool ok = false;
  for (int attempt = 0; attempt < g.max_retries && !ok; ++attempt) ok = detail::try_scene(rng, g, event, scene);
  if (!ok) {
    throw GenerationError("generator: constraints not met after " + std::to_string(g.max_retries) +
                          " attempts for seed " + std::to_string(seed));
  }
  const auto& target = scene.shapes[scene.target];
  Sample s;
  s.id = id.empty() ? "seed_" + std::to_string(seed) : id;
  s.seed = seed;
  s.text = std::string(rng.coin() ? "the " : "a ") + color_name(target.color) + " " + shape_name(target.kind) +
           (rng.coin() ? " that " : " which ") + event_phrase(scene.event);
  s.tokens = tokenize(s.text);
  s.video = render(scene);
  s.gt = ground_truth(scene);
  s.scene = std::move(scene);
  return s;
}

/// Per-sample seed for the i-th sample of a dataset generated from `seed`.
inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace stcat::synth
