#include "reinlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "reinlab/errors.hpp"

REINLAB_NAMESPACE_BEGIN

namespace {

thread_local Tape* g_current_tape = nullptr;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

std::vector<Scalar>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), Scalar(0));
  return grad;
}

std::uint64_t next_node_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace detail

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, bool requires_grad) {
  validate_shape(shape);
  node_ = std::make_shared<detail::Node>();
  node_->data.assign(shape_numel(shape), Scalar(0));
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
  node_->id = detail::next_node_id();
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
  node_->id = detail::next_node_id();
}

Tensor Tensor::full(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(Scalar value) { return Tensor({1}, {value}); }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::size() const { return shape_numel(shape()); }

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("expected a matrix, got " + shape_string(shape()));
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("expected a matrix, got " + shape_string(shape()));
  return node_->shape[1];
}

std::span<Scalar> Tensor::data() {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

std::span<const Scalar> Tensor::data() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->data;
}

Scalar Tensor::at(std::size_t row, std::size_t col) const {
  return node_->data[row * cols() + col];
}

Scalar Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  if (!node_) throw ContractError("use of an undefined tensor");
  if (!node_->leaf) throw ContractError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const Scalar> Tensor::grad() const {
  if (!node_) throw ContractError("use of an undefined tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

Tape::Tape() : previous_(g_current_tape) { g_current_tape = this; }

Tape::~Tape() { g_current_tape = previous_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(std::initializer_list<const Tensor*> inputs, const Tensor& output,
                  BackwardFn backward) {
  record(std::vector<const Tensor*>(inputs), output, std::move(backward));
}

void Tape::record(const std::vector<const Tensor*>& inputs, const Tensor& output,
                  BackwardFn backward) {
  Entry entry;
  entry.input_ids.reserve(inputs.size());
  for (const Tensor* t : inputs) entry.input_ids.push_back(t->id());
  entry.output_id = output.id();
  entry.output = output.node();
  entry.backward = std::move(backward);
  entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ContractError("backward requires a scalar root, got " +
                        (root.defined() ? shape_string(root.shape()) : std::string("undefined")));
  }
  auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                         [&](const Entry& e) { return e.output_id == root.id(); });
  if (it == entries_.rend()) {
    throw ContractError("backward root was not produced on this tape");
  }
  for (auto& entry : entries_) entry.output->grad.clear();
  root.node()->grad_buffer()[0] = Scalar(1);
  for (; it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;  // not on a path from the root
    it->backward();
  }
}

NoGradGuard::NoGradGuard() : saved_(g_current_tape) { g_current_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_current_tape = saved_; }

REINLAB_NAMESPACE_END
