#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vra {

// Dense row-major float32 tensor. Values are IEEE-754 single precision; an
// injected execution may carry Inf/NaN, which all consumers must propagate
// rather than reject.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> values;

  Tensor() = default;
  Tensor(std::vector<int> shape_in, std::vector<float> values_in);

  static Tensor zeros(std::vector<int> shape_in);

  int64_t numel() const { return int64_t(values.size()); }
  int dim(int i) const { return shape[size_t(i)]; }

  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace vra
