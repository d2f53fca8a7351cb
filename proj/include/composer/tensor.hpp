#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "composer/errors.hpp"

namespace composer {

/// Dense row-major tensor of 64-bit floats. Invariant: product(shape) == data.size().
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<int64_t>(data.size()))
      throw UsageError("tensor shape/data mismatch");
  }

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw UsageError("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> shape) {
    int64_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<double> v) {
    int n = static_cast<int>(v.size());
    return Tensor({n}, std::move(v));
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }

  double& at(int i) { return data[static_cast<size_t>(i)]; }
  double at(int i) const { return data[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data[static_cast<size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<size_t>(i) * shape[1] + j]; }

  double item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace composer
