#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace tslab {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
Shape strides_of(const Shape& shape);  // row-major

class Tape;

/// Dense n-dimensional array of 64-bit floats, row-major. Values share
/// storage on copy; treat a Tensor as immutable once it has been handed
/// to an op (parameter updates go through mutable_data on tensors the
/// caller exclusively owns).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> values);

  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor of(std::initializer_list<double> values);          // 1-d
  static Tensor of(Shape shape, std::initializer_list<double> values);

  bool defined() const { return store_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::int64_t size() const;
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }

  const double* data() const { return store_->data(); }
  double* mutable_data() { return store_->data(); }
  double value() const;                               // scalar tensors only
  double at(std::initializer_list<std::int64_t> idx) const;

  Tensor clone() const;       // deep copy, detached from any tape
  Tensor detached() const;    // shared storage, no tape node
  Tensor with_shape(Shape shape) const;  // shared storage, same numel, detached

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<std::vector<double>> store_;
  Shape shape_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

}  // namespace tslab
