#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "stcat/box.hpp"

namespace stcat {

/// Inclusive frame segment [t_start, t_end] with one box per frame.
struct Tube {
  int t_start = 0;
  int t_end = 0;
  std::vector<Box> boxes;

  std::size_t length() const { return static_cast<std::size_t>(t_end - t_start + 1); }
  const Box& box_at(int frame) const { return boxes.at(static_cast<std::size_t>(frame - t_start)); }

  /// Throws unless 0 <= t_start <= t_end < frames and boxes match the span.
  void validate(std::size_t frames) const {
    if (t_start < 0 || t_start > t_end || static_cast<std::size_t>(t_end) >= frames) {
      throw std::invalid_argument("tube: segment [" + std::to_string(t_start) + "," + std::to_string(t_end) +
                                  "] invalid for " + std::to_string(frames) + " frames");
    }
    if (boxes.size() != length()) {
      throw std::invalid_argument("tube: " + std::to_string(boxes.size()) + " boxes for " +
                                  std::to_string(length()) + " frames");
    }
  }
};

/// Pair (s, e), s <= e, maximizing p_start[s] * p_end[e]. Ties go to the
/// smallest s, then the smallest e.
inline std::pair<std::size_t, std::size_t> select_segment(std::span<const double> p_start,
                                                          std::span<const double> p_end) {
  if (p_start.empty() || p_start.size() != p_end.size()) {
    throw std::invalid_argument("select_segment: distributions must be non-empty and equal length");
  }
  std::size_t prefix_best = 0;
  std::size_t best_s = 0, best_e = 0;
  double best = -1.0;
  for (std::size_t e = 0; e < p_end.size(); ++e) {
    if (p_start[e] > p_start[prefix_best]) prefix_best = e;
    // With zero end mass every start scores 0, so the smallest start wins.
    const std::size_t s = p_end[e] > 0.0 ? prefix_best : 0;
    const double v = p_start[s] * p_end[e];
    if (v > best || (v == best && s < best_s)) {
      best = v;
      best_s = s;
      best_e = e;
    }
  }
  return {best_s, best_e};
}

/// Coordinate-wise linear interpolation of sampled boxes onto every frame in
/// [0, frames); frames outside the sampled range take the nearest sample.
inline std::map<int, Box> interpolate_boxes(const std::map<int, Box>& sampled, std::size_t frames) {
  if (sampled.empty()) throw std::invalid_argument("interpolate_boxes: no sampled boxes");
  for (const auto& [f, _] : sampled) {
    if (f < 0 || static_cast<std::size_t>(f) >= frames) {
      throw std::out_of_range("interpolate_boxes: sampled frame " + std::to_string(f) + " outside " +
                              std::to_string(frames) + " frames");
    }
  }
  std::map<int, Box> out;
  for (int t = 0; t < static_cast<int>(frames); ++t) {
    auto hi = sampled.lower_bound(t);
    if (hi != sampled.end() && hi->first == t) {
      out[t] = hi->second;
    } else if (hi == sampled.begin()) {
      out[t] = hi->second;
    } else if (hi == sampled.end()) {
      out[t] = std::prev(hi)->second;
    } else {
      auto lo = std::prev(hi);
      const double a = static_cast<double>(t - lo->first) / static_cast<double>(hi->first - lo->first);
      const Box& p = lo->second;
      const Box& q = hi->second;
      out[t] = Box{p.cx + a * (q.cx - p.cx), p.cy + a * (q.cy - p.cy), p.w + a * (q.w - p.w),
                   p.h + a * (q.h - p.h)};
    }
  }
  return out;
}

/// Original frame index of each of `sampled` uniformly spaced frames.
inline std::vector<int> uniform_sampling(std::size_t original, std::size_t sampled) {
  if (original == 0) throw std::invalid_argument("uniform_sampling: empty video");
  const std::size_t n = std::min(original, sampled);
  std::vector<int> map(n);
  for (std::size_t i = 0; i < n; ++i) map[i] = static_cast<int>(i * original / n);
  return map;
}

/// Maps a sampled-space segment to original frames and fills every original
/// frame in the span by interpolating the sampled boxes inside the segment.
inline Tube assemble_tube(std::span<const Box> sampled_boxes, std::pair<std::size_t, std::size_t> segment,
                          std::span<const int> sampling, std::size_t original_frames) {
  const auto [s, e] = segment;
  if (s > e) {
    throw std::invalid_argument("assemble_tube: inverted segment (" + std::to_string(s) + "," + std::to_string(e) +
                                ")");
  }
  if (e >= sampling.size() || sampled_boxes.size() != sampling.size()) {
    throw std::invalid_argument("assemble_tube: segment or boxes inconsistent with sampling map");
  }
  std::map<int, Box> nodes;
  for (std::size_t i = s; i <= e; ++i) nodes[sampling[i]] = sampled_boxes[i];
  const auto dense = interpolate_boxes(nodes, original_frames);
  Tube tube;
  tube.t_start = sampling[s];
  tube.t_end = sampling[e];
  for (int t = tube.t_start; t <= tube.t_end; ++t) tube.boxes.push_back(dense.at(t));
  return tube;
}

/// |frames in both| / |frames in either|, segments inclusive.
inline double tiou(const Tube& pred, const Tube& gt) {
  const int inter = std::max(0, std::min(pred.t_end, gt.t_end) - std::max(pred.t_start, gt.t_start) + 1);
  const int uni = static_cast<int>(pred.length() + gt.length()) - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Sum of per-frame IoU over shared frames, divided by the union frame count.
inline double viou(const Tube& pred, const Tube& gt) {
  const int lo = std::max(pred.t_start, gt.t_start);
  const int hi = std::min(pred.t_end, gt.t_end);
  double acc = 0;
  int inter = 0;
  for (int t = lo; t <= hi; ++t, ++inter) acc += box_iou(pred.box_at(t), gt.box_at(t));
  const int uni = static_cast<int>(pred.length() + gt.length()) - inter;
  return acc / static_cast<double>(uni);
}

struct MetricsReport {
  double m_vIoU = 0;
  double m_tIoU = 0;
  std::map<double, double> vIoU_at;  // threshold R -> share of samples with vIoU > R
  std::size_t count = 0;
};

inline MetricsReport aggregate(std::span<const double> vious, std::span<const double> tious,
                               std::span<const double> thresholds = std::vector<double>{0.3, 0.5}) {
  if (vious.empty() || vious.size() != tious.size()) {
    throw std::invalid_argument("aggregate: need a non-empty, equal number of vIoU and tIoU values");
  }
  MetricsReport r;
  r.count = vious.size();
  for (std::size_t i = 0; i < vious.size(); ++i) {
    r.m_vIoU += vious[i];
    r.m_tIoU += tious[i];
  }
  r.m_vIoU /= static_cast<double>(r.count);
  r.m_tIoU /= static_cast<double>(r.count);
  for (double R : thresholds) {
    const auto hits = std::count_if(vious.begin(), vious.end(), [R](double v) { return v > R; });
    r.vIoU_at[R] = static_cast<double>(hits) / static_cast<double>(r.count);
  }
  return r;
}

inline double round6(double v) {
  const double r = std::round(v * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no "-0"
}

inline std::string threshold_key(double R) {
  std::string s = std::to_string(R);
  s.erase(s.find_last_not_of('0') + 1);
  if (!s.empty() && s.back() == '.') s.push_back('0');
  return "vIoU@" + s;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["count"] = r.count;
  j["m_vIoU"] = r.m_vIoU;
  j["m_tIoU"] = r.m_tIoU;
  for (const auto& [R, v] : r.vIoU_at) j[threshold_key(R)] = v;
  return j;
}

/// One JSONL record: {sample_id, t_start, t_end, boxes: [[frame, cx, cy, w, h], ...]}.
inline nlohmann::json tube_to_json(const std::string& sample_id, const Tube& tube) {
  nlohmann::json boxes = nlohmann::json::array();
  for (int t = tube.t_start; t <= tube.t_end; ++t) {
    const Box& b = tube.box_at(t);
    boxes.push_back({t, round6(b.cx), round6(b.cy), round6(b.w), round6(b.h)});
  }
  return {{"sample_id", sample_id}, {"t_start", tube.t_start}, {"t_end", tube.t_end}, {"boxes", boxes}};
}

inline std::pair<std::string, Tube> tube_from_json(const nlohmann::json& j) {
  Tube tube;
  tube.t_start = j.at("t_start").get<int>();
  tube.t_end = j.at("t_end").get<int>();
  int expect = tube.t_start;
  for (const auto& row : j.at("boxes")) {
    if (row.size() != 5 || row[0].get<int>() != expect) {
      throw std::invalid_argument("tube json: boxes must list frames t_start..t_end in order");
    }
    tube.boxes.push_back(Box{row[1].get<double>(), row[2].get<double>(), row[3].get<double>(), row[4].get<double>()});
    ++expect;
  }
  return {j.at("sample_id").get<std::string>(), tube};
}

}  // namespace stcat
