#include "tslab/tensor.hpp"

#include <numeric>
#include <sstream>
#include <stdexcept>

namespace tslab {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Shape strides_of(const Shape& shape) {
  Shape s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
    s[i] = s[i + 1] * shape[i + 1];
  return s;
}

namespace {
void check_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] < 1)
      throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                  ": extent of axis " + std::to_string(i) +
                                  " must be >= 1");
}
}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  store_ = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)) {
  check_shape(shape_);
  if (static_cast<std::int64_t>(values.size()) != numel(shape_))
    throw std::invalid_argument(
        "tensor shape " + shape_str(shape_) + " wants " +
        std::to_string(numel(shape_)) + " values, got " +
        std::to_string(values.size()));
  store_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.store_->begin(), t.store_->end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

Tensor Tensor::of(std::initializer_list<double> values) {
  return Tensor(Shape{static_cast<std::int64_t>(values.size())},
                std::vector<double>(values));
}

Tensor Tensor::of(Shape shape, std::initializer_list<double> values) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

std::int64_t Tensor::size() const {
  return store_ ? static_cast<std::int64_t>(store_->size()) : 0;
}

double Tensor::value() const {
  if (!defined() || size() != 1)
    throw std::logic_error("value() needs a scalar tensor, have " +
                           shape_str(shape_));
  return (*store_)[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  if (idx.size() != shape_.size())
    throw std::invalid_argument("at(): rank mismatch");
  const Shape st = strides_of(shape_);
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : idx) {
    if (i < 0 || i >= shape_[k])
      throw std::out_of_range("at(): index " + std::to_string(i) +
                              " out of bounds on axis " + std::to_string(k));
    flat += i * st[k];
    ++k;
  }
  return (*store_)[static_cast<std::size_t>(flat)];
}

Tensor Tensor::clone() const {
  if (!defined()) return {};
  Tensor t;
  t.shape_ = shape_;
  t.store_ = std::make_shared<std::vector<double>>(*store_);
  return t;
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

Tensor Tensor::with_shape(Shape shape) const {
  if (numel(shape) != size())
    throw std::invalid_argument("with_shape: " + shape_str(shape_) + " -> " +
                                shape_str(shape) + " changes element count");
  Tensor t;
  t.store_ = store_;
  t.shape_ = std::move(shape);
  return t;
}

}  // namespace tslab
