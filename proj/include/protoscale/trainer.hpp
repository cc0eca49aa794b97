#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "protoscale/checkpoint.hpp"
#include "protoscale/config.hpp"
#include "protoscale/image.hpp"
#include "protoscale/model.hpp"
#include "protoscale/objective.hpp"
#include "protoscale/optimizer.hpp"

namespace protoscale {

/// Raised when a loss term or gradient is not finite. The step is rolled
/// back before the error leaves train_step.
struct NonFiniteLossError : std::runtime_error {
  NonFiniteLossError(std::string term, const std::string& detail)
      : std::runtime_error("non-finite " + term + ": " + detail), term(std::move(term)) {}
  std::string term;
};

struct TrainState {
  Network student;
  Network teacher;
  OptimizerState optimizer;
  std::uint64_t step = 0;
};

/// Student from the run seed, teacher as an exact copy without grads.
TrainState init_state(const RunConfig& cfg);

/// t <- m t + (1 - m) s for every pair. Throws ContractError on mismatch.
void ema_update(const ParameterList& teacher, const ParameterList& student, double m);

/// Cosine decay from lr to lr * lr_final_ratio over the configured steps.
double learning_rate_at(const RunConfig& cfg, std::uint64_t step);
double ema_momentum_at(const RunConfig& cfg, std::uint64_t step);

/// Training-set indices used at `step`.
std::vector<std::size_t> batch_indices(const RunConfig& cfg, std::uint64_t step, std::size_t n_images);

/// One optimisation step on `images` (one view batch per image).
LossReport train_step(TrainState& state, const RunConfig& cfg, const std::vector<Image>& images);

std::vector<Record> state_records(const TrainState& state, const RunConfig& cfg);
void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& cfg);
/// Rebuilds a state for `cfg` and fills it from the file. Throws ConfigError
/// when the stored tensors do not fit the configured architecture.
TrainState load_checkpoint(const std::filesystem::path& path, const RunConfig& cfg);
/// Configuration text stored alongside the tensors.
std::string checkpoint_config_text(const std::vector<Record>& records);

inline constexpr const char* kMetricsHeader = "step,total,sem,inst,hier,sparsity,diversity,lr";

struct TrainSummary {
  std::uint64_t first_step = 0;
  std::uint64_t final_step = 0;
  std::vector<double> totals;  // per executed step
  std::filesystem::path latest;
};

using LogFn = std::function<void(const std::string&)>;

/// Trains on in-memory images, writing config.resolved, metrics.csv,
/// ckpt_<step>.bin and latest.bin under out_dir.
TrainSummary train_loop(const RunConfig& cfg, const std::vector<Image>& images, const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume = std::nullopt, const LogFn& log = {});
/// Same, reading the training split of a dataset directory.
TrainSummary train_loop(const RunConfig& cfg, const std::filesystem::path& data_dir,
                        const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume = std::nullopt, const LogFn& log = {});

}  // namespace protoscale
