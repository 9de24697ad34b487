#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lsp/error.hpp"

namespace lsp {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

enum class Precision : std::uint8_t { kSingle = 0, kDouble = 1 };

template <typename Scalar>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<Scalar, float> || std::is_same_v<Scalar, double>);
  return std::is_same_v<Scalar, float> ? Precision::kSingle : Precision::kDouble;
}

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

template <typename Scalar>
class Tape;

/// N-dimensional row-major array. Values are immutable and shared between
/// copies; a tensor produced by an operation on a tracked input carries a
/// handle into the tape that recorded it.
template <typename Scalar>
class Tensor {
 public:
  using BufferType = Buffer<Scalar>;

  Tensor() : Tensor(Shape{0}, BufferType()) {}

  Tensor(Shape shape, BufferType values)
      : shape_(std::move(shape)), data_(std::make_shared<const BufferType>(std::move(values))) {
    for (Index extent : shape_) {
      if (extent < 0) throw Error(ErrorKind::kShapeMismatch, "negative extent in " + shape_string(shape_));
    }
    if (numel(shape_) != data_->size()) {
      throw Error(ErrorKind::kShapeMismatch, "shape " + shape_string(shape_) + " does not hold " +
                                                 std::to_string(data_->size()) + " elements");
    }
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), BufferType(Eigen::Map<const BufferType>(values.begin(), values.size()))) {}

  static Tensor zeros(Shape shape) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), BufferType::Zero(n));
  }
  static Tensor filled(Shape shape, Scalar value) {
    const Index n = numel(shape);
    return Tensor(std::move(shape), BufferType::Constant(n, value));
  }
  static Tensor scalar(Scalar value) { return Tensor(Shape{1}, BufferType::Constant(1, value)); }
  static Tensor vector(std::span<const Scalar> values) {
    return Tensor(Shape{static_cast<Index>(values.size())},
                  BufferType(Eigen::Map<const BufferType>(values.data(), values.size())));
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(axis < 0 ? shape_.size() + axis : axis); }
  Index size() const { return data_->size(); }

  const BufferType& values() const { return *data_; }
  Scalar operator[](Index i) const { return (*data_)[i]; }
  Scalar item() const {
    if (size() != 1) throw Error(ErrorKind::kNotScalar, "item() on shape " + shape_string(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return tape_ != nullptr; }
  Tape<Scalar>* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape handle.
  Tensor detach() const {
    Tensor out = *this;
    out.tape_ = nullptr;
    out.node_ = -1;
    return out;
  }

  /// Same values under a new shape (no tape handle); see lsp::reshape for the tracked version.
  Tensor with_shape(Shape shape) const {
    if (numel(shape) != size()) {
      throw Error(ErrorKind::kShapeMismatch, "cannot view " + shape_string(shape_) + " as " + shape_string(shape));
    }
    Tensor out;
    out.shape_ = std::move(shape);
    out.data_ = data_;
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_->template cast<Other>());
  }

 private:
  friend class Tape<Scalar>;

  Shape shape_;
  std::shared_ptr<const BufferType> data_;
  Tape<Scalar>* tape_ = nullptr;
  int node_ = -1;
};

/// Gradients produced by one backward pass, indexed by tape node.
template <typename Scalar>
class Gradients {
 public:
  Gradients(const Tape<Scalar>* tape, std::vector<Buffer<Scalar>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  /// Gradient with respect to a tracked tensor; zeros when the output does not depend on it.
  Tensor<Scalar> of(const Tensor<Scalar>& t) const {
    if (t.tape() != tape_ || t.node() < 0) {
      throw Error(ErrorKind::kDetachedOutput, "tensor is not tracked by the tape that produced these gradients");
    }
    const auto& g = grads_[t.node()];
    if (g.size() == 0) return Tensor<Scalar>::zeros(t.shape());
    return Tensor<Scalar>(t.shape(), g);
  }

  std::size_t node_count() const { return grads_.size(); }

 private:
  const Tape<Scalar>* tape_;
  std::vector<Buffer<Scalar>> grads_;
};

/// Define-by-run reverse-mode tape. Confined to one thread; rebuilt per forward pass.
template <typename Scalar>
class Tape {
 public:
  using BufferType = Buffer<Scalar>;
  /// Receives the output gradient and one accumulation slot per input; slots are
  /// null for inputs that are not tracked.
  using BackwardFn = std::function<void(const BufferType& grad_out, std::span<BufferType*> grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static constexpr Precision precision() { return precision_of<Scalar>(); }

  /// Registers a leaf; the returned tensor shares values with `value`.
  Tensor<Scalar> watch(const Tensor<Scalar>& value) {
    Tensor<Scalar> out = value;
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{"leaf", {}, nullptr, value.shape()});
    return out;
  }

  /// Appends an operation node. Inputs not tracked by this tape are recorded as constants.
  Tensor<Scalar> record(const char* kind, Shape shape, BufferType value,
                        std::initializer_list<const Tensor<Scalar>*> inputs, BackwardFn backward) {
    Tensor<Scalar> out(shape, std::move(value));
    Node node{kind, {}, std::move(backward), std::move(shape)};
    for (const Tensor<Scalar>* in : inputs) {
      node.inputs.push_back(in->tape_ == this ? in->node_ : -1);
    }
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return out;
  }

  Tensor<Scalar> record_many(const char* kind, Shape shape, BufferType value, const std::vector<Tensor<Scalar>>& inputs,
                             BackwardFn backward) {
    Tensor<Scalar> out(shape, std::move(value));
    Node node{kind, {}, std::move(backward), std::move(shape)};
    for (const Tensor<Scalar>& in : inputs) node.inputs.push_back(in.tape_ == this ? in.node_ : -1);
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(std::move(node));
    return out;
  }

  Gradients<Scalar> backward(const Tensor<Scalar>& output) const {
    if (output.size() != 1) {
      throw Error(ErrorKind::kNotScalar, "backward from shape " + shape_string(output.shape()));
    }
    if (output.tape() != this || output.node() < 0) {
      throw Error(ErrorKind::kDetachedOutput, "output was not recorded on this tape");
    }
    std::vector<BufferType> grads(nodes_.size());
    grads[output.node()] = BufferType::Ones(1);
    std::vector<BufferType*> slots;
    for (int id = output.node(); id >= 0; --id) {
      const Node& node = nodes_[id];
      if (grads[id].size() == 0 || !node.backward) continue;
      slots.assign(node.inputs.size(), nullptr);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const int in = node.inputs[k];
        if (in < 0) continue;
        if (grads[in].size() == 0) grads[in] = BufferType::Zero(numel(nodes_[in].shape));
        slots[k] = &grads[in];
      }
      node.backward(grads[id], slots);
    }
    return Gradients<Scalar>(this, std::move(grads));
  }

  std::size_t size() const { return nodes_.size(); }
  const char* kind(int node) const { return nodes_.at(node).kind; }

 private:
  struct Node {
    const char* kind;
    std::vector<int> inputs;
    BackwardFn backward;
    Shape shape;
  };
  std::vector<Node> nodes_;
};

/// Records an operation on the tape of the first tracked input, or returns an
/// untracked tensor when no input is tracked.
template <typename Scalar>
Tensor<Scalar> record_op(const char* kind, Shape shape, Buffer<Scalar> value,
                         std::initializer_list<const Tensor<Scalar>*> inputs,
                         typename Tape<Scalar>::BackwardFn backward) {
  for (const Tensor<Scalar>* in : inputs) {
    if (in->tape() != nullptr) {
      return in->tape()->record(kind, std::move(shape), std::move(value), inputs, std::move(backward));
    }
  }
  return Tensor<Scalar>(std::move(shape), std::move(value));
}

/// Ordered collection of named parameter arrays; the unit of checkpointing and optimization.
template <typename Scalar>
class ParameterSet {
 public:
  void add(std::string name, Tensor<Scalar> value);
  bool contains(const std::string& name) const;
  const Tensor<Scalar>& get(const std::string& name) const;
  void set(const std::string& name, Tensor<Scalar> value);

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor<Scalar>& at(std::size_t i) const { return entries_[i].second; }
  void set_at(std::size_t i, Tensor<Scalar> value);
  Index parameter_count() const;

  /// Watches every entry on `tape` and returns the tracked copies in order.
  ParameterSet watch(Tape<Scalar>& tape) const;

  template <typename Other>
  ParameterSet<Other> cast() const {
    ParameterSet<Other> out;
    for (const auto& [name, value] : entries_) out.add(name, value.template cast<Other>());
    return out;
  }

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
};

}  // namespace lsp
