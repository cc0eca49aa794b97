#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "protoscale/tensor.hpp"

namespace protoscale {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter moment buffers plus the step counter. Buffers are created
/// shape-matched to the parameter list handed to the constructor and must be
/// used with that same list (same order) afterwards.
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  OptimizerState() = default;
  OptimizerState(OptimizerConfig cfg, std::span<const Tensor> params);
};

/// Applies one update in place using the current grads. Grads are left
/// untouched; the caller zeroes them. Throws ContractError when a parameter
/// has no grad buffer or the list does not match the state.
void optimizer_step(std::span<Tensor> params, OptimizerState& state);

}  // namespace protoscale
