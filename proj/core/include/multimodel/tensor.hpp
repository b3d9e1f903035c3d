#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Dense row-major f64 array. Values are immutable and shared between copies;
/// a tensor produced by an op on tracked inputs carries a node on its tape.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_ ? data_->size() : 0; }
  bool defined() const noexcept { return data_ != nullptr; }

  std::span<const double> values() const noexcept {
    return data_ ? std::span<const double>(*data_) : std::span<const double>();
  }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double item() const;

  const std::shared_ptr<const std::vector<double>>& storage() const noexcept { return data_; }

  bool tracked() const noexcept { return tape_ != nullptr; }
  Tape* tape() const noexcept { return tape_; }
  int node() const noexcept { return node_; }

  /// Same values, no differentiation record.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Throws NumericError naming `what` if any value is non-finite.
void check_finite(std::span<const double> values, const char* what);

}  // namespace mm
