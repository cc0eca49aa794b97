#include "protoscale/model.hpp"

#include <algorithm>
#include <string>

namespace protoscale {

void ModelConfig::validate() const {
  encoder.validate();
  grouping.validate();
  if (encoder.dim != grouping.dim) {
    throw ParameterError("grouping dim " + std::to_string(grouping.dim) + " must equal encoder dim " +
                         std::to_string(encoder.dim));
  }
  if (prior.enabled && !(prior.sigma > 0.0)) throw ParameterError("prior sigma must be positive");
}

Network::Network(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = Encoder(cfg_.encoder, rng);
  for (auto& b : banks_) b = PrototypeBank(cfg_.grouping, rng);
}

NetworkOutput Network::forward(const Tensor& images) const {
  NetworkOutput out;
  out.features = encoder_.forward(images);
  for (std::size_t k = 0; k < 3; ++k) out.scales.push_back(banks_[k].forward(out.features.levels[k], cfg_.prior));
  return out;
}

ParameterList Network::parameters() const {
  ParameterList list;
  list.append("encoder.", encoder_.parameters());
  for (std::size_t k = 0; k < 3; ++k) list.append("bank" + std::to_string(k) + ".", banks_[k].parameters());
  return list;
}

Network Network::clone() const {
  Rng scratch(0);
  Network copy(cfg_, scratch);
  copy.copy_from(*this);
  return copy;
}

void Network::copy_from(const Network& other) {
  const ParameterList dst = parameters();
  const ParameterList src = other.parameters();
  if (dst.size() != src.size()) throw ContractError("copy_from: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    Tensor d = dst[i].tensor;
    const Tensor& s = src[i].tensor;
    if (d.shape() != s.shape() || dst[i].name != src[i].name) {
      throw ContractError("copy_from: " + dst[i].name + " does not match " + src[i].name);
    }
    std::ranges::copy(s.data(), d.mutable_data().begin());
  }
}

}  // namespace protoscale
