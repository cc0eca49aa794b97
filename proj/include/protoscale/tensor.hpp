#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace protoscale {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_str(const Shape& shape);

// Error vocabulary shared by every module.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DistributionError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

namespace detail {

// One recorded operation. `parents` are the operation inputs in call order;
// `backward` reads this node's grad and accumulates into the parents' grads.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

// Returns the parent's grad buffer, allocating zeros on first use.
std::span<double> grad_buffer(Node& node);

}  // namespace detail

/// Dense row-major array of doubles with optional participation in the
/// gradient tape. Copies share the underlying storage (handle semantics);
/// use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  /// Leaf with requires_grad set and a zeroed grad buffer.
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor from_node(std::shared_ptr<detail::Node> node);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  bool all_finite() const;
  /// Throws DistributionError naming `what` when a NaN/Inf is stored.
  void check_finite(const std::string& what) const;

  /// Same values, detached from the tape, independent storage.
  Tensor clone() const;
  /// Detached copy that never requires grad (stop-gradient).
  Tensor detach() const { return clone(); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Whether newly executed operations are recorded for backward.
bool grad_enabled();

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds an operation result. When recording is enabled and any input
/// requires grad the result joins the tape with `backward`.
Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
              std::function<void(detail::Node&)> backward);

/// Reverse pass from a scalar loss. Leaf grads accumulate across calls;
/// interior grads are recomputed each call.
void backward(const Tensor& loss);

}  // namespace protoscale
