// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <unistd.h>

#include "oracles.hpp"
#include "stcat/workbench/evaluator.hpp"
#include "stcat/workbench/gradient_audit.hpp"
#include "stcat/workbench/trainer.hpp"

using namespace stcat;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void report(int n, const std::string& name, const std::function<void(Verdict&)>& body) {
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  if (!v.pass) ++failures;
  std::printf("CRITERION %d %s: %s;%s\n", n, v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.str().c_str());
  std::fflush(stdout);
}

Box lattice_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, 512);
  int x1, x2, y1, y2;
  do {
    x1 = d(rng), x2 = d(rng), y1 = d(rng), y2 = d(rng);
  } while (x1 == x2 || y1 == y2);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return Box{(x1 + x2) / 1024.0, (y1 + y2) / 1024.0, (x2 - x1) / 512.0, (y2 - y1) / 512.0};
}

oracle::Corners corners(const Box& b) { return oracle::corners(b.cx, b.cy, b.w, b.h); }

std::vector<io::PreparedSample> synthetic_split(std::uint64_t seed, std::size_t count, const ModelConfig& cfg) {
  std::vector<io::PreparedSample> out;
  char id[16];
  for (std::size_t i = 0; i < count; ++i) {
    std::snprintf(id, sizeof id, "s%05zu", i);
    auto s = synth::generate_sample(synth::sample_seed(seed, i), synth::GeneratorConfig{}, id);
    io::LoadedSample loaded{io::describe(s, cfg.T_sampled), s.video};
    io::check_compatible(loaded.meta, cfg);
    out.push_back(io::prepare_sample(loaded, cfg));
  }
  return out;
}

ModelConfig desk_config() {
  std::ifstream is(STCAT_DESK_CONFIG);
  if (!is) throw std::runtime_error("cannot open " STCAT_DESK_CONFIG);
  return config_from_json(nlohmann::json::parse(is));
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return files;
}

int run(const std::string& cmd) { return std::system((std::string(STCAT_CLI) + " " + cmd + " >/dev/null").c_str()); }

// Shared with criterion 7, which inspects the trained model's outputs.
std::unique_ptr<io::Trainer> overfit_trainer;
std::vector<io::PreparedSample> overfit_data;

}  // namespace

int main() {
  report(1, "full-model gradient vs central differences (micro config, float64)", [](Verdict& v) {
    const auto t0 = Clock::now();
    const auto audit = io::audit_model_gradients(micro_config());
    const double secs = seconds_since(t0);
    v.detail << " coordinates=" << audit.coordinates << " max_rel_err=" << audit.worst << " at " << audit.worst_at
             << " seconds=" << secs;
    v.check(audit.worst <= 1e-4, "error > 1e-4");
    v.check(secs <= 120, "runtime > 120 s");
  });

  report(2, "IoU/GIoU vs 512x512 raster oracle", [](Verdict& v) {
    const oracle::Raster r;
    std::mt19937_64 rng(20240);
    double worst = 0;
    int contained = 0, disjoint = 0;
    for (int i = 0; i < 1000; ++i) {
      Box a = lattice_box(rng), b = lattice_box(rng);
      if (i % 10 == 0) {
        b = Box{a.cx, a.cy, std::max(2.0 / 512, std::round(a.w * 256) / 512),
                std::max(2.0 / 512, std::round(a.h * 256) / 512)};
        b.cx = a.x1() + b.w / 2;
        b.cy = a.y1() + b.h / 2;
      }
      const auto ca = corners(a), cb = corners(b);
      contained += ca.x1 <= cb.x1 && cb.x2 <= ca.x2 && ca.y1 <= cb.y1 && cb.y2 <= ca.y2;
      disjoint += intersection_area(a, b) == 0;
      worst = std::max({worst, std::abs(box_iou(a, b) - r.iou(ca, cb)), std::abs(giou(a, b) - r.giou(ca, cb))});
    }
    const Box odd{0.123456789, 0.7, 0.0987654321, 0.3};
    const double g1 = giou(Box{0.1, 0.1, 0.2, 0.2}, Box{0.9, 0.9, 0.2, 0.2});
    const double g2 = giou(Box{0.25, 0.25, 0.5, 0.5}, Box{0.75, 0.75, 0.5, 0.5});
    v.detail << " pairs=1000 contained=" << contained << " disjoint=" << disjoint << " max_abs_diff=" << worst
             << " giou_examples=" << g1 << "," << g2;
    v.check(worst <= 2e-3, "raster disagreement");
    v.check(contained > 0 && disjoint > 0, "missing containment/disjoint cases");
    v.check(giou(odd, odd) == 1.0, "GIoU(identical) != 1");
    v.check(std::abs(g1 + 0.92) < 1e-12 && std::abs(g2 + 0.5) < 1e-12, "worked examples");
  });

  report(3, "tIoU/vIoU/aggregate vs frame-set oracle", [](Verdict& v) {
    std::mt19937_64 rng(31337);
    std::uniform_int_distribution<int> frame(0, 31);
    std::uniform_real_distribution<double> pos(0.1, 0.9), size(0.05, 0.5);
    auto make = [&](int s, int e) {
      Tube t{s, e, {}};
      oracle::FrameSetTube o;
      for (int f = s; f <= e; ++f) {
        const Box b{pos(rng), pos(rng), size(rng), size(rng)};
        t.boxes.push_back(b);
        o.frames.insert(f);
        o.boxes.push_back({f, corners(b)});
      }
      return std::make_pair(t, o);
    };
    double worst = 0;
    std::vector<double> vs, ts, ovs, ots;
    for (int i = 0; i < 100; ++i) {
      int a = frame(rng), b = frame(rng), c = frame(rng), d = frame(rng);
      if (a > b) std::swap(a, b);
      if (c > d) std::swap(c, d);
      const auto [p, po] = make(a, b);
      const auto [g, go] = make(c, d);
      vs.push_back(viou(p, g));
      ts.push_back(tiou(p, g));
      ovs.push_back(oracle::viou(po, go));
      ots.push_back(oracle::tiou(po, go));
      worst = std::max({worst, std::abs(vs.back() - ovs.back()), std::abs(ts.back() - ots.back())});
    }
    const auto rep = aggregate(vs, ts);
    double om = 0, ot = 0, o3 = 0, o5 = 0;
    for (std::size_t i = 0; i < ovs.size(); ++i) {
      om += ovs[i] / 100, ot += ots[i] / 100;
      o3 += ovs[i] > 0.3 ? 0.01 : 0.0;
      o5 += ovs[i] > 0.5 ? 0.01 : 0.0;
    }
    worst = std::max({worst, std::abs(rep.m_vIoU - om), std::abs(rep.m_tIoU - ot), std::abs(rep.vIoU_at.at(0.3) - o3),
                      std::abs(rep.vIoU_at.at(0.5) - o5)});
    const Box b{0.5, 0.5, 0.2, 0.2};
    auto tube = [&](int s, int e) { return Tube{s, e, std::vector<Box>(static_cast<std::size_t>(e - s + 1), b)}; };
    const double t_ex = tiou(tube(0, 3), tube(0, 1));
    const double v_ex = viou(tube(0, 3), tube(2, 5));
    v.detail << " pairs=100 max_abs_diff=" << worst << " tIoU_example=" << t_ex << " vIoU_example=" << v_ex;
    v.check(worst <= 1e-9, "oracle disagreement");
    v.check(t_ex == 0.5 && v_ex == 2.0 / 6.0, "worked examples");
  });

  report(4, "select_segment vs exhaustive argmax", [](Verdict& v) {
    std::mt19937_64 rng(4444);
    std::uniform_int_distribution<std::size_t> len(1, 32);
    int mismatches = 0, ties = 0;
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n = len(rng);
      std::vector<double> ps(n), pe(n);
      if (i % 4 == 0) {  // coarse values: many ties
        std::uniform_int_distribution<int> d(1, 3);
        for (auto* p : {&ps, &pe})
          for (auto& x : *p) x = d(rng);
        ++ties;
      } else {
        std::gamma_distribution<double> gm(0.5, 1.0);
        for (auto* p : {&ps, &pe})
          for (auto& x : *p) x = gm(rng) + 1e-12;
      }
      for (auto* p : {&ps, &pe}) {
        double z = 0;
        for (double x : *p) z += x;
        for (auto& x : *p) x /= z;
      }
      mismatches += select_segment(ps, pe) != oracle::best_segment(ps, pe);
    }
    v.detail << " cases=1000 tie_heavy=" << ties << " mismatches=" << mismatches;
    v.check(mismatches == 0, "mismatch");
  });

  report(5, "overfit 8 samples (desk config), held-out 32", [](Verdict& v) {
    const auto cfg = desk_config();
    overfit_data = synthetic_split(2024, 8, cfg);
    const auto held_out = synthetic_split(777, 32, cfg);
    const auto t0 = Clock::now();
    overfit_trainer = std::make_unique<io::Trainer>(cfg, overfit_data);
    overfit_trainer->run(cfg.steps);
    const double secs = seconds_since(t0);
    const auto train = io::summarize(io::evaluate(overfit_trainer->model(), overfit_data));
    const auto held = io::summarize(io::evaluate(overfit_trainer->model(), held_out));
    v.detail << " steps=" << cfg.steps << " lr=" << cfg.lr << " train_seconds=" << secs
             << " train_m_vIoU=" << train.m_vIoU << " train_m_tIoU=" << train.m_tIoU
             << " heldout_m_vIoU=" << held.m_vIoU << " heldout_m_tIoU=" << held.m_tIoU;
    v.check(cfg.steps <= 3000, "more than 3000 steps");
    v.check(train.m_vIoU >= 0.8, "train m_vIoU < 0.8");
    v.check(train.m_tIoU >= 0.9, "train m_tIoU < 0.9");
    v.check(secs <= 1800, "runtime > 30 min");
    v.check(held.m_vIoU >= 0.4, "held-out m_vIoU < 0.4");
  });

  report(6, "frame-shared content queries and ablation variants", [](Verdict& v) {
    int checked = 0;
    for (const auto& base : {micro_config(), desk_config()})
      for (int variant = 0; variant < 3; ++variant) {
        auto cfg = base;
        cfg.no_global_template = variant == 1;
        cfg.no_local_template = variant == 2;
        StcatModel<float> model(cfg);
        // Move the zero-initialized heads off their starting point.
        std::mt19937_64 rng(variant);
        std::normal_distribution<float> n(0.f, 0.05f);
        for (auto& t : model.params().values())
          for (auto& x : t.data) x += n(rng);
        VideoClip clip(cfg.T_sampled, cfg.H, cfg.W);
        std::uniform_real_distribution<float> u(0.f, 1.f);
        for (auto& p : clip.pixels) p = u(rng);
        Tape<float> tape(false);
        Graph<float> g(tape, model.params(), false);
        const auto out = model.forward(g, clip, QueryTokens{{2, 4, 7, 10, 12}, cfg.vocab_size});
        const auto q = model.decoder().init_queries(g, out.tpl);
        const auto& c = q.content.value();
        const auto& a = q.anchors.value();
        const std::size_t T = c.dim(0), C = c.dim(1);
        bool shared = true, zero = true, anchors_equal = true;
        for (std::size_t t = 0; t < T; ++t) {
          for (std::size_t k = 0; k < C; ++k) {
            shared &= c.at(t, k) == c.at(0, k);
            zero &= c.at(t, k) == 0.f;
          }
          for (std::size_t k = 0; k < 4; ++k) anchors_equal &= a.at(t, k) == a.at(0, k);
        }
        v.check(shared, "content differs across frames");
        if (variant == 1) v.check(zero, "no-global-template content not zero");
        if (variant == 2) v.check(anchors_equal, "no-local-template anchors differ");
        if (variant == 0) v.check(!anchors_equal, "full model anchors unexpectedly identical");
        ++checked;
      }
    v.detail << " configurations=" << checked;
  });

  report(7, "loss composition and normalization", [](Verdict& v) {
    double worst_total = 0, worst_sum = 0, kl_self = 0;
    auto row_sums = [&](const Tensor<float>& t) {
      for (std::size_t r = 0; r < t.dim(0); ++r) {
        double s = 0;
        for (std::size_t k = 0; k < t.dim(1); ++k) s += t.at(r, k);
        worst_sum = std::max(worst_sum, std::abs(s - 1));
      }
    };
    auto vec_sum = [&](const std::vector<double>& p) {
      double s = 0;
      for (double x : p) s += x;
      worst_sum = std::max(worst_sum, std::abs(s - 1));
    };
    std::vector<StcatModel<float>> models;
    if (overfit_trainer) models.push_back(overfit_trainer->model());
    models.emplace_back(desk_config());
    auto data = overfit_data.empty() ? synthetic_split(2024, 8, desk_config()) : overfit_data;
    const LossWeights w;
    v.check(w.l1 == 5 && w.giou == 3 && w.temp == 10 && w.seg == 2, "default weights");
    for (const auto& model : models) {
      v.check(LossWeights::from(model.config()).l1 == 5 && LossWeights::from(model.config()).seg == 2, "config weights");
      for (const auto& s : data) {
        Tape<float> tape(false);
        Graph<float> g(tape, model.params(), false);
        const auto out = model.forward(g, s.clip, s.tokens);
        const auto terms = model.loss(g, out, s.target);
        const auto b = terms.breakdown(LossWeights::from(model.config()));
        worst_total = std::max(worst_total, std::abs(b.total - (5 * b.l1 + 3 * b.giou + 10 * b.temp + 2 * b.seg)));
        const auto p = io::predict(model, s);
        vec_sum(p.p_start);
        vec_sum(p.p_end);
        for (const auto& a : out.dec.box_attention) row_sums(a);
        for (const auto& a : out.dec.time_attention) row_sums(a);
        const double sigma = model.config().heatmap_sigma(s.target.frames);
        const auto pi_s = gaussian_heatmap(s.target.start, s.target.frames, sigma);
        const auto pi_e = gaussian_heatmap(s.target.end, s.target.frames, sigma);
        vec_sum(pi_s);
        vec_sum(pi_e);
        Tape<double> t64;
        auto ps = t64.constant(Tensor<double>(Shape{pi_s.size()}, pi_s));
        auto pe = t64.constant(Tensor<double>(Shape{pi_e.size()}, pi_e));
        kl_self = std::max(kl_self, std::abs(temporal_loss(ps, pe, pi_s, pi_e).value().item()));
      }
    }
    v.detail << " models=" << models.size() << " samples=" << data.size() << " max|total-weighted|=" << worst_total
               << " max|sum-1|=" << worst_sum << " temporal_loss(pi,pi)=" << kl_self;
    v.check(worst_total <= 1e-6, "total != weighted sum");
    v.check(worst_sum <= 1e-6, "distribution does not sum to 1");
    v.check(kl_self == 0.0, "temporal_loss(pi, pi) != 0");
  });

  report(8, "gen-data/train/eval bitwise reproducible", [](Verdict& v) {
    const auto root = fs::temp_directory_path() / ("stcat_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    std::vector<std::map<std::string, std::string>> runs;
    for (int r = 0; r < 2; ++r) {
      const auto dir = root / ("run" + std::to_string(r));
      fs::create_directories(dir);
      const auto d = dir.string();
      v.check(run("gen-data --out " + d + "/data --count 4 --seed 99") == 0, "gen-data exit");
      v.check(run("train --data " + d + "/data --config " STCAT_DESK_CONFIG " --out " + d + "/ckpt --steps 25") == 0,
              "train exit");
      v.check(run("eval --ckpt " + d + "/ckpt --data " + d + "/data --out " + d + "/report.json --tubes " + d +
                  "/tubes.jsonl") == 0,
              "eval exit");
      runs.push_back(snapshot(dir));
    }
    std::size_t bytes = 0;
    for (const auto& [name, content] : runs[0]) bytes += content.size();
    v.detail << " files=" << runs[0].size() << " bytes=" << bytes;
    v.check(!runs[0].empty() && runs[0] == runs[1], "outputs differ between runs");
    for (const auto* f : {"ckpt/tensors.bin", "ckpt/index.json", "tubes.jsonl", "report.json", "data/manifest.jsonl"})
      v.check(runs[0].count(f) == 1, std::string("missing ") + f);
    fs::remove_all(root);
  });

  return failures == 0 ? 0 : 1;
}
