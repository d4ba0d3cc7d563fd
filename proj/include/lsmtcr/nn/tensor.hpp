#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lsmtcr::nn {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

/// Shape-tagged row-major array of doubles with an optional gradient slot.
///
/// Tensor is a shared handle: copies alias the same storage. Operations in
/// ops.hpp record a graph whenever an input requires a gradient and recording
/// is enabled (see NoGradGuard); nn::backward walks that graph.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// Direct write access, for initialization, optimizer updates and probes.
  std::span<double> mutable_values();
  /// Empty when no gradient has been accumulated.
  std::span<const double> grad() const;
  bool has_grad() const;
  void zero_grad();

  bool requires_grad() const;
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * shape().back() + c]; }

  /// True when both handles refer to the same storage.
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  /// A graph-free copy holding the same values.
  Tensor detach() const;

  /// Creates an operation result. The graph edge is recorded only when some
  /// parent requires a gradient and recording is enabled.
  static Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& parents,
                            std::function<void(detail::Node&)> backward);

  detail::Node& node() const;

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar. Accumulates into the grad slot of every
/// tensor in the graph that requires a gradient. Throws std::logic_error when
/// the argument carries no recorded computation.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace lsmtcr::nn
