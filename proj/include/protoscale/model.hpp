#pragma once

#include <array>
#include <vector>

#include "protoscale/encoder.hpp"
#include "protoscale/grouping.hpp"

namespace protoscale {

struct ModelConfig {
  EncoderConfig encoder;
  GroupingConfig grouping;
  GaussianPrior prior;

  void validate() const;
};

struct NetworkOutput {
  FeaturePyramid features;
  std::vector<ScaleAttention> scales;  // finest (stride 4) first
};

/// Encoder plus one prototype bank per pyramid level.
class Network {
 public:
  Network() = default;
  Network(const ModelConfig& cfg, Rng& rng);

  /// images [B, 3, s, s].
  NetworkOutput forward(const Tensor& images) const;

  const ModelConfig& config() const { return cfg_; }
  Encoder& encoder() { return encoder_; }
  PrototypeBank& bank(std::size_t k) { return banks_[k]; }
  ParameterList parameters() const;

  /// Independent copy with its own storage.
  Network clone() const;
  /// Copies parameter values from a shape-identical network.
  void copy_from(const Network& other);

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  std::array<PrototypeBank, 3> banks_;
};

}  // namespace protoscale
