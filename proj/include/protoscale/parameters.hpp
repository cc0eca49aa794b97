#pragma once

#include <string>
#include <utility>
#include <vector>

#include "protoscale/tensor.hpp"

namespace protoscale {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered, named view of a model's trainable tensors. Entries share storage
/// with the model, so updates through the list are visible to the model.
class ParameterList {
 public:
  void add(std::string name, Tensor t) { items_.push_back({std::move(name), std::move(t)}); }
  void append(const std::string& prefix, const ParameterList& other) {
    for (const auto& item : other.items_) items_.push_back({prefix + item.name, item.tensor});
  }

  std::size_t size() const { return items_.size(); }
  const NamedTensor& operator[](std::size_t i) const { return items_[i]; }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& item : items_) out.push_back(item.tensor);
    return out;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& item : items_) n += item.tensor.numel();
    return n;
  }

 private:
  std::vector<NamedTensor> items_;
};

}  // namespace protoscale
