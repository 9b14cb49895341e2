// stcat: dataset generation, training, evaluation and inspection.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>
#include <json.hpp>

#include "stcat/model.hpp"
#include "stcat/workbench/checkpoint.hpp"
#include "stcat/workbench/dataset_io.hpp"
#include "stcat/workbench/evaluator.hpp"
#include "stcat/workbench/gradient_audit.hpp"
#include "stcat/workbench/prepare.hpp"
#include "stcat/workbench/synthetic.hpp"
#include "stcat/workbench/trainer.hpp"

using namespace stcat;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json read_json_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw io::DataError(p, "cannot open for reading");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw io::DataError(p, e.what());
  }
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw io::DataError(p, "cannot open for writing");
  os << s;
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("--size must look like HxW, got '" + s + "'");
  return {std::stoul(m[1]), std::stoul(m[2])};
}

std::vector<io::PreparedSample> prepare_all(const std::vector<io::LoadedSample>& data, const ModelConfig& cfg) {
  std::vector<io::PreparedSample> out;
  for (const auto& s : data) {
    io::check_compatible(s.meta, cfg);
    out.push_back(io::prepare_sample(s, cfg));
  }
  return out;
}

StcatModel<float> model_from(const io::Checkpoint& ck) {
  StcatModel<float> model(ck.config);
  model.load_parameters(ck.params);
  return model;
}

int gen_data(const fs::path& out, std::size_t count, std::uint64_t seed, int frames, const std::string& size,
             std::size_t sampled, std::size_t threads) {
  const auto [h, w] = parse_size(size);
  synth::GeneratorConfig g;
  g.frames = frames;
  g.height = static_cast<int>(h);
  g.width = static_cast<int>(w);
  std::vector<synth::Sample> samples(count);
  io::parallel_for(count, threads, [&](std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "s%05zu", i);
    samples[i] = synth::generate_sample(synth::sample_seed(seed, i), g, id);
  });
  io::write_dataset(out, samples, sampled);
  std::cout << nlohmann::json{{"samples", count}, {"out", out.string()}}.dump() << '\n';
  return 0;
}

int train(const fs::path& data_dir, const fs::path& config_path, const fs::path& out, std::optional<std::size_t> steps,
          bool no_local, bool no_global, bool no_temporal, bool aux) {
  ModelConfig cfg = config_from_json(read_json_file(config_path));
  if (steps) cfg.steps = *steps;
  cfg.no_local_template |= no_local;
  cfg.no_global_template |= no_global;
  cfg.no_temporal_layer |= no_temporal;
  cfg.aux_loss |= aux;
  cfg.validate();

  io::Trainer trainer(cfg, prepare_all(io::read_dataset(data_dir), cfg));
  fs::create_directories(out);
  std::ofstream log(out / "train_log.jsonl", std::ios::trunc);
  if (!log) throw io::DataError(out / "train_log.jsonl", "cannot open for writing");
  trainer.run(cfg.steps, [&](const io::StepLog& s) {
    log << to_json(s).dump() << '\n';
    if (cfg.checkpoint_every > 0 && (s.step + 1) % cfg.checkpoint_every == 0 && s.step + 1 < cfg.steps) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%07zu", s.step + 1);
      io::save_checkpoint(out / name, trainer.checkpoint());
    }
  });
  io::save_checkpoint(out, trainer.checkpoint());
  std::cout << nlohmann::json{{"steps", trainer.step()}, {"checkpoint", out.string()}}.dump() << '\n';
  return 0;
}

int eval(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report_path, const fs::path& tubes_path,
         bool oracle_gt, std::size_t threads) {
  const auto ck = io::load_checkpoint(ckpt);
  const auto model = model_from(ck);
  const auto data = prepare_all(io::read_dataset(data_dir), ck.config);
  const auto records = io::evaluate(model, data, oracle_gt, threads);
  std::string tubes;
  for (const auto& r : records) tubes += io::record_to_json(r).dump() + "\n";
  write_text(tubes_path, tubes);
  const auto report = to_json(io::summarize(records));
  write_text(report_path, report.dump(2) + "\n");
  std::cout << report.dump() << '\n';
  return 0;
}

int ground(const fs::path& ckpt, const std::string& sample_id, const fs::path& data_dir, const std::string& csv) {
  const auto ck = io::load_checkpoint(ckpt);
  const auto model = model_from(ck);
  for (const auto& e : io::read_manifest(data_dir)) {
    if (e.id != sample_id) continue;
    io::check_compatible(e, ck.config);
    const auto s = io::prepare_sample(io::load_sample(data_dir, e), ck.config);
    const auto pred = io::predict(model, s);
    pred.tube.validate(s.original_frames);
    if (!csv.empty()) {
      std::ofstream os(csv, std::ios::trunc);
      if (!os) throw io::DataError(csv, "cannot open for writing");
      io::write_attention_csv(os, pred.box_attention);
    }
    std::cout << tube_to_json(s.id, pred.tube).dump() << '\n';
    return 0;
  }
  throw io::DataError(io::manifest_path(data_dir), "no sample with id '" + sample_id + "'");
}

int grad_check(const std::string& config_path) {
  ModelConfig cfg = micro_config();
  if (!config_path.empty()) cfg = config_from_json(read_json_file(config_path), cfg);
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = io::audit_model_gradients(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool ok = r.worst <= 1e-4;
  std::cout << nlohmann::json{{"coordinates", r.coordinates}, {"max_rel_error", r.worst}, {"worst_at", r.worst_at},
                              {"analytic", r.analytic},       {"numeric", r.numeric},  {"seconds", secs},
                              {"pass", ok}}
                   .dump()
            << '\n';
  return ok ? 0 : 1;
}

int fail(const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatio-temporal video grounding workbench"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic moving-shapes dataset");
  std::string gen_out, gen_size = "32x32";
  std::size_t gen_count = 0, gen_sampled = 16, gen_threads = 1;
  std::uint64_t gen_seed = 0;
  int gen_frames = 16;
  gen->add_option("--out", gen_out)->required();
  gen->add_option("--count", gen_count)->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed)->required();
  gen->add_option("--frames", gen_frames)->check(CLI::Range(2, 4096));
  gen->add_option("--size", gen_size);
  gen->add_option("--sampled", gen_sampled, "model frame budget recorded in the sampling map")
      ->check(CLI::PositiveNumber);
  gen->add_option("--threads", gen_threads)->check(CLI::PositiveNumber);

  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_config, tr_out;
  std::optional<std::size_t> tr_steps;
  bool tr_no_local = false, tr_no_global = false, tr_no_temporal = false, tr_aux = false;
  tr->add_option("--data", tr_data)->required();
  tr->add_option("--config", tr_config)->required();
  tr->add_option("--out", tr_out)->required();
  tr->add_option("--steps", tr_steps);
  tr->add_flag("--no-local-template", tr_no_local);
  tr->add_flag("--no-global-template", tr_no_global);
  tr->add_flag("--no-temporal-layer", tr_no_temporal);
  tr->add_flag("--aux-loss", tr_aux);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_out, ev_tubes;
  bool ev_oracle = false;
  std::size_t ev_threads = 1;
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--data", ev_data)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--tubes", ev_tubes)->required();
  ev->add_flag("--oracle-gt", ev_oracle, "score ground truth as the prediction");
  ev->add_option("--threads", ev_threads)->check(CLI::PositiveNumber);

  auto* gr = app.add_subcommand("ground", "ground one sample");
  std::string gr_ckpt, gr_sample, gr_data, gr_csv;
  gr->add_option("--ckpt", gr_ckpt)->required();
  gr->add_option("--sample", gr_sample)->required();
  gr->add_option("--data", gr_data)->required();
  gr->add_option("--dump-attention", gr_csv);

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of all model gradients");
  std::string gc_config;
  gc->add_option("--micro-config", gc_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  }

  try {
    if (*gen) return gen_data(gen_out, gen_count, gen_seed, gen_frames, gen_size, gen_sampled, gen_threads);
    if (*tr) return train(tr_data, tr_config, tr_out, tr_steps, tr_no_local, tr_no_global, tr_no_temporal, tr_aux);
    if (*ev) return eval(ev_ckpt, ev_data, ev_out, ev_tubes, ev_oracle, ev_threads);
    if (*gr) return ground(gr_ckpt, gr_sample, gr_data, gr_csv);
    if (*gc) return grad_check(gc_config);
  } catch (const UsageError& e) {
    std::cerr << nlohmann::json{{"error", "UsageError"}, {"message", e.what()}}.dump() << '\n';
    return 2;
  } catch (const io::DataError& e) {
    return fail("DataError", e.what());
  } catch (const ConfigError& e) {
    return fail("ConfigError", e.what());
  } catch (const io::TrainingError& e) {
    return fail("TrainingError", e.what());
  } catch (const synth::GenerationError& e) {
    return fail("GenerationError", e.what());
  } catch (const std::exception& e) {
    return fail("Error", e.what());
  }
  return 2;
}
