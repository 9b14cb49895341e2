#pragma once

#include <cstdio>
#include <ostream>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stcat/model.hpp"
#include "stcat/workbench/prepare.hpp"

namespace stcat::io {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write
/// results into slot i, so merge order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Prediction {
  Tube tube;
  std::pair<std::size_t, std::size_t> segment;  // sampled indices
  std::vector<double> p_start, p_end;
  std::vector<Box> sampled_boxes;
  std::vector<Tensor<float>> box_attention;  // per decoder layer [T, N_v + N_s]
};

template <typename S>
Prediction predict(const StcatModel<S>& model, const PreparedSample& s) {
  Tape<S> tape(false);
  Graph<S> g(tape, model.params(), false);
  const auto out = model.forward(g, s.clip, s.tokens);
  Prediction p;
  const std::size_t T = out.boxes.dim(0);
  for (std::size_t t = 0; t < T; ++t) {
    p.p_start.push_back(static_cast<double>(out.p_start.value()[t]));
    p.p_end.push_back(static_cast<double>(out.p_end.value()[t]));
    const auto& b = out.boxes.value();
    p.sampled_boxes.push_back(Box{static_cast<double>(b.at(t, 0)), static_cast<double>(b.at(t, 1)),
                                  static_cast<double>(b.at(t, 2)), static_cast<double>(b.at(t, 3))});
  }
  p.segment = select_segment(p.p_start, p.p_end);
  p.tube = assemble_tube(p.sampled_boxes, p.segment, s.sampling, s.original_frames);
  for (const auto& a : out.dec.box_attention) p.box_attention.push_back(a.template cast<float>());
  return p;
}

struct EvalRecord {
  std::string id;
  Tube tube;
  double viou = 0, tiou = 0;
};

/// Per-sample tubes and metrics. With `oracle_gt`, the ground truth is
/// scored as the prediction.
template <typename S>
std::vector<EvalRecord> evaluate(const StcatModel<S>& model, const std::vector<PreparedSample>& data,
                                 bool oracle_gt = false, std::size_t threads = 1) {
  std::vector<EvalRecord> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto& s = data[i];
    EvalRecord r;
    r.id = s.id;
    r.tube = oracle_gt ? s.gt : predict(model, s).tube;
    r.tube.validate(s.original_frames);
    r.viou = viou(r.tube, s.gt);
    r.tiou = tiou(r.tube, s.gt);
    out[i] = std::move(r);
  });
  return out;
}

inline MetricsReport summarize(const std::vector<EvalRecord>& records) {
  std::vector<double> v, t;
  for (const auto& r : records) {
    v.push_back(r.viou);
    t.push_back(r.tiou);
  }
  return aggregate(v, t);
}

inline nlohmann::json record_to_json(const EvalRecord& r) {
  auto j = tube_to_json(r.id, r.tube);
  j["vIoU"] = r.viou;
  j["tIoU"] = r.tiou;
  return j;
}

/// CSV rows "layer,frame,token,weight"; each (layer, frame) group sums to 1.
inline void write_attention_csv(std::ostream& os, const std::vector<Tensor<float>>& layers) {
  os << "layer,frame,token,weight\n";
  char buf[32];
  for (std::size_t m = 0; m < layers.size(); ++m) {
    const auto& a = layers[m];
    for (std::size_t t = 0; t < a.dim(0); ++t)
      for (std::size_t k = 0; k < a.dim(1); ++k) {
        std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(a.at(t, k)));
        os << m << ',' << t << ',' << k << ',' << buf << '\n';
      }
  }
}

}  // namespace stcat::io
