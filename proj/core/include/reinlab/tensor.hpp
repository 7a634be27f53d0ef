#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "reinlab/scalar.hpp"

REINLAB_NAMESPACE_BEGIN

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t id = 0;

  // Returns the gradient buffer, allocating it zero-filled on first use.
  std::vector<Scalar>& grad_buffer();
};

std::uint64_t next_node_id();

}  // namespace detail

// Dense row-major tensor handle. Copies share storage; use clone() or
// detach() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor full(Shape shape, Scalar value);
  static Tensor scalar(Scalar value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;
  // Extents of a rank-2 tensor.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Scalar> data();
  std::span<const Scalar> data() const;
  Scalar at(std::size_t row, std::size_t col) const;
  Scalar item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void zero_grad();

  std::uint64_t id() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Deep copy of the values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Ordered record of differentiable operations. Constructing a Tape makes it
// the current tape of the calling thread until it is destroyed; operations on
// tensors that require gradients are recorded onto the current tape. Without
// a current tape, operations run without recording (inference mode).
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  struct Entry {
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id = 0;
    std::shared_ptr<detail::Node> output;
    BackwardFn backward;
  };

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::initializer_list<const Tensor*> inputs, const Tensor& output,
              BackwardFn backward);
  void record(const std::vector<const Tensor*>& inputs, const Tensor& output,
              BackwardFn backward);

  // Reverse sweep from a scalar root. Leaf gradients accumulate across calls;
  // intermediate gradients are reset at the start of every sweep.
  void backward(const Tensor& root);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

REINLAB_NAMESPACE_END
