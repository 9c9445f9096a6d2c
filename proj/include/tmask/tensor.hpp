#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tmask/error.hpp"

namespace tmask {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major tensor. Rank-1 tensors behave as a single row when an
/// operation asks for a matrix view.
template <class Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_size(shape_), Real(0)) {}

  BasicTensor(Shape shape, std::vector<Real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(), ErrorCode::kDimension,
            "tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + shape_string(shape_));
  }

  static BasicTensor filled(Shape shape, Real value) {
    BasicTensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const {
    return rank() <= 1 ? 1 : size() / shape_.back();
  }
  std::size_t cols() const { return rank() == 0 ? 1 : shape_.back(); }

  std::span<Real> data() noexcept { return data_; }
  std::span<const Real> data() const noexcept { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  const Real& operator[](std::size_t i) const { return data_[i]; }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  std::span<const Real> row(std::size_t r) const {
    return std::span<const Real>(data_).subspan(r * cols(), cols());
  }
  std::span<Real> row(std::size_t r) {
    return std::span<Real>(data_).subspan(r * cols(), cols());
  }

  void reshape(Shape shape) {
    require(shape_size(shape) == data_.size(), ErrorCode::kDimension,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    shape_ = std::move(shape);
  }

  bool requires_grad() const noexcept { return requires_grad_; }

  /// Enabling allocates a zeroed gradient buffer of identical shape.
  void set_requires_grad(bool flag) {
    requires_grad_ = flag;
    if (flag && !grad_) grad_.emplace(data_.size(), Real(0));
    if (!flag) grad_.reset();
  }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<Real> grad() { return grad_ ? std::span<Real>(*grad_) : std::span<Real>(); }
  std::span<const Real> grad() const {
    return grad_ ? std::span<const Real>(*grad_) : std::span<const Real>();
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
  }

  template <class Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return BasicTensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<Real> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<Real>> grad_;
};

using Tensor = BasicTensor<float>;

/// Handle to a value recorded on a ComputeTape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

/// Records differentiable operations in execution order and replays them in
/// reverse. A tape is single-use: backward() may run once.
template <class Real>
class ComputeTape {
 public:
  using TensorType = BasicTensor<Real>;
  using Backward = std::function<void(ComputeTape&, Var self)>;

  ComputeTape() = default;
  ComputeTape(const ComputeTape&) = delete;
  ComputeTape& operator=(const ComputeTape&) = delete;

  Var constant(TensorType value) { return push(std::move(value), false, {}, {}); }

  /// Leaf whose gradient is added to `param.grad()` when the parameter has
  /// requires_grad set; otherwise it is treated as a constant.
  Var parameter(TensorType& param) {
    const bool wants = param.requires_grad();
    TensorType copy(param.shape(), std::vector<Real>(param.data().begin(), param.data().end()));
    return push(std::move(copy), wants, {}, wants ? param.grad() : std::span<Real>());
  }

  /// Leaf whose gradient is added to an external buffer.
  Var parameter(const TensorType& param, std::span<Real> grad_sink) {
    require(grad_sink.size() == param.size(), ErrorCode::kDimension,
            "gradient sink length does not match parameter");
    TensorType copy(param.shape(), std::vector<Real>(param.data().begin(), param.data().end()));
    return push(std::move(copy), true, {}, grad_sink);
  }

  Var record(TensorType value, bool requires_grad, Backward backward) {
    return push(std::move(value), requires_grad, std::move(backward), {});
  }

  const TensorType& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v`, allocated zeroed on first access.
  std::span<Real> grad(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad.assign(n.value.size(), Real(0));
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v).grad.empty(); }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    require(!consumed_, ErrorCode::kTapeReused,
            "backward called twice on the same tape; record a new tape");
    require(value(loss).size() == 1, ErrorCode::kDimension,
            "backward requires a scalar loss, got " + shape_string(value(loss).shape()));
    consumed_ = true;
    grad(loss)[0] = Real(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      visited_.push_back(i);
      if (n.backward) n.backward(*this, Var{i});
      if (!n.sink.empty()) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.sink[k] += n.grad[k];
      }
    }
  }

  /// Node ids in the order backward() processed them.
  std::span<const std::size_t> visit_order() const noexcept { return visited_; }

 private:
  struct Node {
    TensorType value;
    std::vector<Real> grad;
    bool requires_grad = false;
    Backward backward;
    std::span<Real> sink;
  };

  Var push(TensorType value, bool requires_grad, Backward backward, std::span<Real> sink) {
    require(!consumed_, ErrorCode::kTapeReused, "cannot record on a consumed tape");
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backward), sink});
    return Var{nodes_.size() - 1};
  }

  Node& node(Var v) {
    require(v.id < nodes_.size(), ErrorCode::kInput, "unknown tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    require(v.id < nodes_.size(), ErrorCode::kInput, "unknown tape variable");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
  bool consumed_ = false;
};

}  // namespace tmask
