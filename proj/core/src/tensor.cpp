#include "protostream/tensor.hpp"

#include <cmath>

#include "protostream/errors.hpp"

namespace protostream {

Tensor Tensor::zeros(std::vector<int> shape) {
  return full(std::move(shape), Real(0));
}

Tensor Tensor::full(std::vector<int> shape, Real value) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ConfigError("tensor dimension must be positive");
    n *= static_cast<size_t>(d);
  }
  Tensor t;
  t.shape = std::move(shape);
  t.v.assign(n, value);
  return t;
}

Tensor Tensor::from_vector(std::vector<Real> values) {
  Tensor t;
  t.shape = {static_cast<int>(values.size())};
  t.v = std::move(values);
  return t;
}

bool Tensor::all_finite() const {
  for (Real x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

}  // namespace protostream
