#include "ssem/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "ssem/error.hpp"

namespace ssem {

std::size_t shape_product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ')';
  return out.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_product(shape_) != values_.size()) {
    throw DimensionError("tensor shape " + shape_to_string(shape_) + " does not hold " +
                         std::to_string(values_.size()) + " values");
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_product(shape) != values_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), values_);
}

Tensor Tensor::slice(std::size_t index) const {
  if (shape_.empty() || index >= shape_[0]) {
    throw DimensionError("slice " + std::to_string(index) + " out of range for " + shape_to_string(shape_));
  }
  Shape inner(shape_.begin() + 1, shape_.end());
  const std::size_t n = shape_product(inner);
  std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(index * n),
                        values_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor(std::move(inner), std::move(v));
}

Tensor Tensor::stack(std::span<const Tensor> samples) {
  if (samples.empty()) throw DimensionError("cannot stack an empty sample list");
  Shape shape = samples.front().shape();
  std::vector<double> v;
  v.reserve(samples.size() * samples.front().size());
  for (const auto& s : samples) {
    if (s.shape() != shape) {
      throw DimensionError("stack: sample shape " + shape_to_string(s.shape()) + " differs from " +
                           shape_to_string(shape));
    }
    v.insert(v.end(), s.values().begin(), s.values().end());
  }
  shape.insert(shape.begin(), samples.size());
  return Tensor(std::move(shape), std::move(v));
}

bool Tensor::all_finite() const noexcept {
  for (double x : values_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace ssem
