#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace protostream {

#ifdef PROTOSTREAM_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

// Dense row-major tensor. Rank 1 and 2 are all the project needs; a scalar
// is a rank-1 tensor of size 1.
struct Tensor {
  std::vector<int> shape;
  std::vector<Real> v;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<Real> values)
      : shape(std::move(s)), v(std::move(values)) {}

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, Real value);
  static Tensor scalar(Real value) { return Tensor({1}, {value}); }
  static Tensor from_vector(std::vector<Real> values);

  int numel() const {
    int n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  bool is_scalar() const { return numel() == 1; }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }

  Real& at(int i) { return v[i]; }
  Real at(int i) const { return v[i]; }
  Real& at(int r, int c) { return v[static_cast<size_t>(r) * cols() + c]; }
  Real at(int r, int c) const { return v[static_cast<size_t>(r) * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

}  // namespace protostream
