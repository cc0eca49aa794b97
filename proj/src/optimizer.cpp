#include "protoscale/optimizer.hpp"

#include <cmath>
#include <string>

namespace protoscale {

OptimizerState::OptimizerState(OptimizerConfig cfg, std::span<const Tensor> params) : config(cfg) {
  first_moment.reserve(params.size());
  second_moment.reserve(params.size());
  for (const auto& p : params) {
    first_moment.emplace_back(p.numel(), 0.0);
    second_moment.emplace_back(p.numel(), 0.0);
  }
}

void optimizer_step(std::span<Tensor> params, OptimizerState& state) {
  if (params.size() != state.first_moment.size()) {
    throw ContractError("optimizer_step: state tracks " + std::to_string(state.first_moment.size()) +
                        " parameters, given " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad() || !params[i].has_grad()) {
      throw ContractError("optimizer_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (params[i].numel() != state.first_moment[i].size()) {
      throw ContractError("optimizer_step: parameter " + std::to_string(i) + " shape changed");
    }
  }

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(c.beta1, t);
  const double bias2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    if (c.kind == OptimizerKind::Sgd) {
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= c.learning_rate * g[j];
      continue;
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      w[j] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace protoscale
