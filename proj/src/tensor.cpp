#include "protoscale/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace protoscale {

namespace {
thread_local bool t_grad_enabled = true;
}

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {
std::span<double> grad_buffer(Node& node) {
  if (node.grad.size() != node.data.size()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}
}  // namespace detail

Tensor::Tensor(Shape shape, double fill) : node_(std::make_shared<detail::Node>()) {
  node_->data.assign(element_count(shape), fill);
  node_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : node_(std::make_shared<detail::Node>()) {
  if (values.size() != element_count(shape)) {
    throw DimensionError("tensor of shape " + shape_str(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  return t;
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }

std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->data.size(), 0.0);
  } else {
    node_->grad.clear();
  }
}

bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (!node_->requires_grad) throw ContractError("tensor does not require grad");
  return detail::grad_buffer(*node_);
}

void Tensor::zero_grad() {
  if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

bool Tensor::all_finite() const {
  return std::all_of(node_->data.begin(), node_->data.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(const std::string& what) const {
  if (!all_finite()) throw DistributionError(what + " holds a non-finite value");
}

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->data); }

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
              std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward_fn);
  }
  return Tensor::from_node(std::move(node));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) throw ContractError("backward on a loss that is not connected to the tape");

  // Iterative post-order DFS gives a topological order; replay it reversed.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !seen.count(parent)) {
        seen.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->leaf) node->grad.assign(node->data.size(), 0.0);
  }
  detail::grad_buffer(*loss.node())[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->leaf && node->backward) node->backward(*node);
  }
}

}  // namespace protoscale
