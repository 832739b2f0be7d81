#include "czsl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace czsl {

int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out << ",";
    out << s[i];
  }
  out << "]";
  return out.str();
}

Tensor Tensor::zeros(Shape shape) {
  for (int64_t d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
  }
  std::vector<double> data(static_cast<size_t>(shape_size(shape)), 0.0);
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> data) {
  Shape s{static_cast<int64_t>(data.size())};
  return Tensor(std::move(s), std::move(data));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::add_scaled(const Tensor& other, double a) {
  if (!same_shape(other)) {
    throw ShapeError("add_scaled: shape " + shape_str(shape_) + " vs " + shape_str(other.shape_));
  }
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += a * other.data_[i];
}

void Tensor::scale(double a) {
  for (double& v : data_) v *= a;
}

double Tensor::sum() const {
  double acc = 0.0;
  for (double v : data_) acc += v;
  return acc;
}

double Tensor::min_abs() const {
  double m = std::numeric_limits<double>::infinity();
  for (double v : data_) m = std::min(m, std::fabs(v));
  return m;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("max_abs_diff: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace czsl
