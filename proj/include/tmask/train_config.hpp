#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "json.hpp"
#include "tmask/error.hpp"
#include "tmask/temporal_mask.hpp"

namespace tmask {

enum class MaskMode { kNone, kTMask, kRandom };

inline std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::kNone: return "none";
    case MaskMode::kTMask: return "tmask";
    case MaskMode::kRandom: return "random";
  }
  return "none";
}

inline MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "none") return MaskMode::kNone;
  if (s == "tmask") return MaskMode::kTMask;
  if (s == "random") return MaskMode::kRandom;
  fail(ErrorCode::kConfig, "unknown mask mode '" + s + "' (expected none|tmask|random)");
}

struct MaskSettings {
  MaskMode mode = MaskMode::kNone;
  std::optional<double> tau;  // unset: estimated from training-view videos
  ThresholdConfig threshold;
  DiffNorm norm = DiffNorm::kMeanDim;
  double random_fraction = 0.2;

  void validate() const {
    threshold.validate();
    if (tau) require(*tau >= 0.0, ErrorCode::kConfig, "mask threshold must be >= 0");
    require(random_fraction >= 0.0 && random_fraction < 1.0, ErrorCode::kConfig,
            "random mask fraction must be in [0, 1)");
  }
};

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double weight_decay = 0.05;
  std::uint64_t seed = 0;
  std::size_t frames_per_clip = 16;
  MaskSettings mask;
  std::optional<std::size_t> max_steps;
  std::size_t threads = 1;

  void validate() const {
    require(epochs >= 1, ErrorCode::kConfig, "epochs must be >= 1");
    require(batch_size >= 1, ErrorCode::kConfig, "batch_size must be >= 1");
    require(learning_rate > 0.0, ErrorCode::kConfig, "learning_rate must be > 0");
    require(weight_decay >= 0.0, ErrorCode::kConfig, "weight_decay must be >= 0");
    require(frames_per_clip >= 2, ErrorCode::kConfig, "frames_per_clip must be >= 2");
    require(threads >= 1, ErrorCode::kConfig, "threads must be >= 1");
    mask.validate();
  }
};

inline nlohmann::json mask_settings_to_json(const MaskSettings& m) {
  nlohmann::json j = {{"mode", to_string(m.mode)},
                      {"delta", m.threshold.delta},
                      {"bin_count", m.threshold.bin_count},
                      {"sample_budget", m.threshold.sample_budget},
                      {"norm", to_string(m.norm)},
                      {"random_fraction", m.random_fraction}};
  j["tau"] = m.tau ? nlohmann::json(*m.tau) : nlohmann::json(nullptr);
  return j;
}

inline MaskSettings mask_settings_from_json(const nlohmann::json& j, MaskSettings m = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") m.mode = mask_mode_from_string(value.get<std::string>());
    else if (key == "tau") m.tau = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
    else if (key == "delta") m.threshold.delta = value.get<double>();
    else if (key == "bin_count") m.threshold.bin_count = value.get<std::size_t>();
    else if (key == "sample_budget") m.threshold.sample_budget = value.get<std::size_t>();
    else if (key == "norm") m.norm = diff_norm_from_string(value.get<std::string>());
    else if (key == "random_fraction") m.random_fraction = value.get<double>();
    else fail(ErrorCode::kConfig, "mask: unknown key '" + key + "'");
  }
  m.validate();
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j = {{"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"learning_rate", c.learning_rate},
                      {"weight_decay", c.weight_decay},
                      {"seed", c.seed},
                      {"frames_per_clip", c.frames_per_clip},
                      {"threads", c.threads}};
  j["max_steps"] = c.max_steps ? nlohmann::json(*c.max_steps) : nlohmann::json(nullptr);
  return j;
}

/// Reads the train section; the mask section is parsed separately.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") c.epochs = value.get<std::size_t>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "weight_decay") c.weight_decay = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "frames_per_clip") c.frames_per_clip = value.get<std::size_t>();
    else if (key == "threads") c.threads = value.get<std::size_t>();
    else if (key == "max_steps")
      c.max_steps = value.is_null() ? std::nullopt : std::optional<std::size_t>(value.get<std::size_t>());
    else fail(ErrorCode::kConfig, "train: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

}  // namespace tmask
