#include "vra/tensor.hpp"

#include <utility>

#include "vra/errors.hpp"

namespace vra {

int64_t shape_numel(const std::vector<int>& shape) {
  if (shape.empty()) return 0;
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<int> shape_in, std::vector<float> values_in)
    : shape(std::move(shape_in)), values(std::move(values_in)) {
  if (shape_numel(shape) != int64_t(values.size())) {
    throw ShapeError("tensor: shape " + shape_str() + " does not match " +
                     std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<int> shape_in) {
  int64_t n = shape_numel(shape_in);
  Tensor t;
  t.shape = std::move(shape_in);
  t.values.assign(size_t(n), 0.0f);
  return t;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace vra
