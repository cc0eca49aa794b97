#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "protoscale/augment.hpp"
#include "protoscale/model.hpp"
#include "protoscale/objective.hpp"
#include "protoscale/optimizer.hpp"

namespace protoscale {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EmaSchedule { Constant, Cosine };

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double ema_momentum = 0.99;
  EmaSchedule ema_schedule = EmaSchedule::Constant;
  double lr_final_ratio = 0.01;
  std::size_t checkpoint_every = 500;
  std::size_t log_every = 50;
  std::uint64_t seed = 0;
};

/// Every tunable of a run. Text form is INI-like:
///
///   [grouping]
///   semantic_prototypes = 16
///   # comment
///
/// Keys outside a section may be written as section.key. Unknown keys,
/// duplicate keys and malformed values are errors.
struct RunConfig {
  ModelConfig model;
  AugmentConfig augment;
  LossWeights loss;
  OptimizerConfig optimizer;
  TrainConfig train;

  /// Throws ConfigError describing the first invalid setting.
  void validate() const;
  /// Canonical text with every key, in a form parse() accepts.
  std::string to_string() const;

  /// Applies one "section.key=value" override. Does not validate.
  void set(const std::string& assignment);

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace protoscale
