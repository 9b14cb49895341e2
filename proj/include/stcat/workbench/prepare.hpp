#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "stcat/config.hpp"
#include "stcat/grounding.hpp"
#include "stcat/objectives.hpp"
#include "stcat/workbench/dataset_io.hpp"

namespace stcat::io {

/// A sample downsampled to the model's frame budget, with its ground truth
/// expressed in sampled frame indices.
struct PreparedSample {
  std::string id;
  VideoClip clip;             // sampled frames only
  QueryTokens tokens;
  std::vector<int> sampling;  // sampled index -> original frame
  std::size_t original_frames = 0;
  SegmentTarget target;
  Tube gt;                    // original frame indices
};

/// The manifest's stored map when it fits `cfg`, a fresh uniform map otherwise.
inline std::vector<int> sampling_for(const ManifestEntry& e, const ModelConfig& cfg) {
  const std::size_t n = std::min(e.frames, cfg.T_sampled);
  if (e.sampling.size() == n) return e.sampling;
  return uniform_sampling(e.frames, cfg.T_sampled);
}

/// Sampled frames inside the gt span define the target segment; if the span
/// falls between two samples, the sample nearest its midpoint is used.
inline SegmentTarget sampled_target(const Tube& gt, std::span<const int> sampling) {
  SegmentTarget t;
  t.frames = sampling.size();
  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < sampling.size(); ++i) {
    if (sampling[i] >= gt.t_start && sampling[i] <= gt.t_end) inside.push_back(i);
  }
  if (inside.empty()) {
    const double mid = 0.5 * (gt.t_start + gt.t_end);
    std::size_t best = 0;
    for (std::size_t i = 1; i < sampling.size(); ++i) {
      if (std::abs(sampling[i] - mid) < std::abs(sampling[best] - mid)) best = i;
    }
    const int f = std::clamp(sampling[best], gt.t_start, gt.t_end);
    t.start = t.end = best;
    t.boxes.push_back(gt.box_at(f));
    return t;
  }
  t.start = inside.front();
  t.end = inside.back();
  for (std::size_t i = t.start; i <= t.end; ++i) t.boxes.push_back(gt.box_at(sampling[i]));
  return t;
}

inline PreparedSample prepare_sample(const LoadedSample& s, const ModelConfig& cfg) {
  PreparedSample p;
  p.id = s.meta.id;
  p.sampling = sampling_for(s.meta, cfg);
  p.clip = s.video.frames(p.sampling);
  p.tokens = s.tokens();
  p.original_frames = s.meta.frames;
  p.gt = s.meta.gt;
  p.target = sampled_target(p.gt, p.sampling);
  return p;
}

/// Throws ConfigError naming the fields that disagree.
inline void check_compatible(const ManifestEntry& e, const ModelConfig& cfg) {
  std::string bad;
  if (e.height != cfg.H) bad += " height=" + std::to_string(e.height) + " vs H=" + std::to_string(cfg.H);
  if (e.width != cfg.W) bad += " width=" + std::to_string(e.width) + " vs W=" + std::to_string(cfg.W);
  if (synth::vocabulary_size() != cfg.vocab_size) {
    bad += " vocabulary=" + std::to_string(synth::vocabulary_size()) + " vs vocab_size=" +
           std::to_string(cfg.vocab_size);
  }
  if (!bad.empty()) throw ConfigError("sample '" + e.id + "' incompatible with config:" + bad);
}

}  // namespace stcat::io
