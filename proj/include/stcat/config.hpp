#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>

#include <json.hpp>

#include "stcat/tensor/tensor.hpp"

namespace stcat {

/// Model and training configuration. Serialized as a flat JSON object whose
/// keys are the field names below.
struct ModelConfig {
  std::size_t T_sampled = 16;
  std::size_t H = 32;
  std::size_t W = 32;
  std::size_t patch = 8;
  std::size_t C = 64;
  std::size_t C_v = 0;  // 0 -> C
  std::size_t C_s = 0;  // 0 -> C
  std::size_t M = 2;
  std::size_t heads = 4;
  std::size_t ffn = 0;  // 0 -> 4 * C
  std::size_t vocab_size = 40;
  std::size_t max_frames = 64;
  double sigma = 0.0;  // heatmap width in frames; 0 -> max(1, 0.05 * T)
  double dropout = 0.0;

  double lambda_l1 = 5.0;
  double lambda_giou = 3.0;
  double lambda_temp = 10.0;
  double lambda_seg = 2.0;

  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_max_norm = 0.0;  // 0 disables gradient clipping
  std::size_t lr_decay_step = 0;  // 0 disables the step decay
  double lr_decay_factor = 0.1;
  std::size_t grad_accum = 1;
  std::size_t steps = 1000;
  std::size_t checkpoint_every = 0;
  std::uint64_t seed = 0;

  bool no_local_template = false;
  bool no_global_template = false;
  bool no_temporal_layer = false;
  bool aux_loss = false;
  bool anchor_logit_space = false;
  bool decoder_self_attention = true;

  std::size_t visual_dim() const { return C_v ? C_v : C; }
  std::size_t text_dim() const { return C_s ? C_s : C; }
  std::size_t ffn_dim() const { return ffn ? ffn : 4 * C; }
  std::size_t grid_h() const { return H / patch; }
  std::size_t grid_w() const { return W / patch; }
  std::size_t visual_tokens() const { return grid_h() * grid_w(); }

  double heatmap_sigma(std::size_t frames) const {
    if (sigma > 0.0) return sigma;
    return std::max(1.0, 0.05 * static_cast<double>(frames));
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (C == 0 || heads == 0 || C % heads != 0) {
      fail("C=" + std::to_string(C) + " not divisible by heads=" + std::to_string(heads));
    }
    if (C % 4 != 0) fail("C=" + std::to_string(C) + " must be a multiple of 4 for anchor encodings");
    if (patch == 0 || H % patch != 0 || W % patch != 0) {
      fail("H=" + std::to_string(H) + ", W=" + std::to_string(W) + " not divisible by patch=" +
           std::to_string(patch));
    }
    if (M == 0) fail("M must be >= 1");
    if (T_sampled == 0 || T_sampled > max_frames) fail("T_sampled must be in [1, max_frames]");
    if (vocab_size == 0) fail("vocab_size must be positive");
    if (lambda_l1 < 0 || lambda_giou < 0 || lambda_temp < 0 || lambda_seg < 0) {
      fail("loss weights must be non-negative");
    }
    if (dropout < 0 || dropout >= 1) fail("dropout must be in [0, 1)");
    if (sigma < 0) fail("sigma must be non-negative");
    if (grad_accum == 0) fail("grad_accum must be >= 1");
    if (lr <= 0) fail("lr must be positive");
  }
};

#define STCAT_CONFIG_FIELDS(X)                                                                   \
  X(T_sampled) X(H) X(W) X(patch) X(C) X(C_v) X(C_s) X(M) X(heads) X(ffn) X(vocab_size)          \
  X(max_frames) X(sigma) X(dropout) X(lambda_l1) X(lambda_giou) X(lambda_temp) X(lambda_seg)     \
  X(lr) X(weight_decay) X(beta1) X(beta2) X(adam_eps) X(clip_max_norm) X(lr_decay_step)          \
  X(lr_decay_factor) X(grad_accum) X(steps) X(checkpoint_every) X(seed) X(no_local_template)     \
  X(no_global_template) X(no_temporal_layer) X(aux_loss) X(anchor_logit_space)                   \
  X(decoder_self_attention)

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
#define STCAT_TO_JSON(name) j[#name] = c.name;
  STCAT_CONFIG_FIELDS(STCAT_TO_JSON)
#undef STCAT_TO_JSON
  return j;
}

/// Overlays keys from `j` onto `base`. Unknown keys and wrong types are errors.
inline ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  std::set<std::string> known;
#define STCAT_FROM_JSON(name)                                                              \
  known.insert(#name);                                                                     \
  if (j.contains(#name)) {                                                                 \
    try {                                                                                  \
      j.at(#name).get_to(base.name);                                                       \
    } catch (const nlohmann::json::exception&) {                                           \
      throw ConfigError("config: field '" #name "' has the wrong type");                   \
    }                                                                                      \
  }
  STCAT_CONFIG_FIELDS(STCAT_FROM_JSON)
#undef STCAT_FROM_JSON
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("config: unknown field '" + key + "'");
  }
  return base;
}

/// The smallest configuration used for full-model gradient verification.
inline ModelConfig micro_config() {
  ModelConfig c;
  c.T_sampled = 4;
  c.H = 16;
  c.W = 16;
  c.patch = 4;
  c.C = 16;
  c.M = 2;
  c.heads = 2;
  c.vocab_size = 40;
  c.seed = 7;
  return c;
}

}  // namespace stcat
