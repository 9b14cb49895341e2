#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "stcat/model.hpp"
#include "stcat/workbench/checkpoint.hpp"
#include "stcat/workbench/prepare.hpp"

namespace stcat::io {

struct StepLog {
  std::size_t step = 0;
  double lr = 0;
  LossBreakdown loss;
  double grad_norm = 0;
};

inline nlohmann::json to_json(const StepLog& s) {
  return {{"step", s.step},         {"lr", s.lr},     {"total", s.loss.total}, {"l1", s.loss.l1},
          {"giou", s.loss.giou},   {"temp", s.loss.temp}, {"seg", s.loss.seg},  {"grad_norm", s.grad_norm}};
}

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss and breakdown of one sample under `model`, without touching gradients.
template <typename S>
LossBreakdown evaluate_loss(const StcatModel<S>& model, const PreparedSample& s) {
  Tape<S> tape(false);
  Graph<S> g(tape, model.params(), false);
  const auto out = model.forward(g, s.clip, s.tokens);
  return model.loss(g, out, s.target).breakdown(LossWeights::from(model.config()));
}

/// Sequential AdamW training over a fixed sample list, one sample per
/// micro-step, `grad_accum` micro-steps per update.
class Trainer {
 public:
  using Callback = std::function<void(const StepLog&)>;

  Trainer(const ModelConfig& cfg, std::vector<PreparedSample> data)
      : cfg_(cfg), model_(cfg), data_(std::move(data)), order_rng_(cfg.seed ^ 0x5eedull), dropout_rng_(cfg.seed + 1) {
    if (data_.empty()) throw TrainingError("train: dataset is empty");
  }

  /// Continues from a checkpoint's parameters, moments and step count.
  void restore(const Checkpoint& ck) {
    model_.load_parameters(ck.params);
    opt_ = ck.optimizer;
    step_ = ck.step;
  }

  StcatModel<float>& model() { return model_; }
  std::size_t step() const { return step_; }

  double learning_rate(std::size_t step) const {
    if (cfg_.lr_decay_step == 0) return cfg_.lr;
    return cfg_.lr * std::pow(cfg_.lr_decay_factor, static_cast<double>(step / cfg_.lr_decay_step));
  }

  Checkpoint checkpoint() const { return Checkpoint{cfg_, step_, model_.params().cast<float>(), opt_}; }

  /// One optimizer update. Throws TrainingError on a non-finite loss.
  StepLog train_step() {
    auto& params = model_.params();
    params.zero_grad();
    const auto weights = LossWeights::from(cfg_);
    LossBreakdown sum;
    for (std::size_t k = 0; k < cfg_.grad_accum; ++k) {
      const auto& sample = data_[next_index()];
      Tape<float> tape(false);
      Graph<float> g(tape, params, true);
      g.set_dropout_rng(&dropout_rng_);
      const auto out = model_.forward(g, sample.clip, sample.tokens);
      const auto terms = model_.loss(g, out, sample.target);
      const auto b = terms.breakdown(weights);
      if (!std::isfinite(b.total)) {
        std::ostringstream os;
        os << "train: non-finite loss at step " << step_ << " (sample '" << sample.id << "'; last breakdown total="
           << last_.loss.total << " l1=" << last_.loss.l1 << " giou=" << last_.loss.giou
           << " temp=" << last_.loss.temp << " seg=" << last_.loss.seg << ")";
        throw TrainingError(os.str());
      }
      tape.backward(terms.total);
      g.accumulate_grads(params);
      sum.l1 += b.l1;
      sum.giou += b.giou;
      sum.temp += b.temp;
      sum.seg += b.seg;
    }
    const double inv = 1.0 / static_cast<double>(cfg_.grad_accum);
    StepLog log;
    log.loss = total_loss(sum.l1 * inv, sum.giou * inv, sum.temp * inv, sum.seg * inv, weights);
    double sq = 0;
    for (auto& g : params.grads()) {
      for (auto& v : g.data) {
        v = static_cast<float>(v * inv);
        sq += static_cast<double>(v) * v;
      }
    }
    log.grad_norm = std::sqrt(sq);
    if (cfg_.clip_max_norm > 0 && log.grad_norm > cfg_.clip_max_norm) {
      const float f = static_cast<float>(cfg_.clip_max_norm / (log.grad_norm + 1e-6));
      for (auto& g : params.grads())
        for (auto& v : g.data) v *= f;
    }
    log.step = step_;
    log.lr = learning_rate(step_);
    AdamWConfig ac{log.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay};
    std::vector<Tensor<float>*> p;
    std::vector<const Tensor<float>*> gr;
    for (std::size_t i = 0; i < params.size(); ++i) {
      p.push_back(&params.value(ParamId{i}));
      gr.push_back(&params.grad(ParamId{i}));
    }
    adamw_step<float>(p, gr, opt_, ac);
    ++step_;
    last_ = log;
    return log;
  }

  /// Runs until `steps` updates have been made in total.
  void run(std::size_t steps, const Callback& on_step = {}) {
    while (step_ < steps) {
      const auto log = train_step();
      if (on_step) on_step(log);
    }
  }

 private:
  std::size_t next_index() {
    if (cursor_ >= order_.size()) {
      order_.resize(data_.size());
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      std::shuffle(order_.begin(), order_.end(), order_rng_);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

  ModelConfig cfg_;
  StcatModel<float> model_;
  std::vector<PreparedSample> data_;
  AdamWState<float> opt_;
  std::size_t step_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::mt19937_64 order_rng_, dropout_rng_;
  StepLog last_;
};

}  // namespace stcat::io
