#include "sdp/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "sdp/errors.hpp"

namespace sdp {

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kData:
    case ErrorKind::kInput:
      return 3;
    case ErrorKind::kNumerical:
    case ErrorKind::kProtocol:
      return 4;
    default:
      return 2;
  }
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
  }
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_str(shape_) + " holds " +
                     std::to_string(shape_numel(shape_)) + " elements but " +
                     std::to_string(data_.size()) + " values were given");
  }
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw UsageError("item() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace sdp
