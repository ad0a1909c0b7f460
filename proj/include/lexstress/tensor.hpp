#pragma once

// Dense row-major tensors, up to 4 dims. Real is float in production and
// double in gradient tests.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lexstress/util.hpp"

namespace lexstress::nn {

struct Shape {
  std::array<int, 4> d{1, 1, 1, 1};
  int nd = 0;

  Shape() = default;
  Shape(std::initializer_list<int> dims) {
    if (dims.size() > 4) throw ComputeError("tensors support at most 4 dims");
    nd = static_cast<int>(dims.size());
    int i = 0;
    for (int v : dims) d[i++] = v;
  }

  int64_t size() const {
    int64_t n = 1;
    for (int i = 0; i < nd; ++i) n *= d[i];
    return n;
  }

  int last() const { return nd == 0 ? 1 : d[nd - 1]; }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < nd; ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + "]";
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

template <class Real>
struct Tensor {
  Shape shape;
  std::vector<Real> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), v(static_cast<size_t>(s.size()), 0) {}
  Tensor(Shape s, std::vector<Real> values) : shape(s), v(std::move(values)) {
    if (static_cast<int64_t>(v.size()) != shape.size())
      throw ComputeError(cat("tensor value count ", v.size(),
                             " does not match shape ", shape.str()));
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int dim(int i) const { return shape.d[i]; }

  Real& at(int i) { return v[i]; }
  Real at(int i) const { return v[i]; }
  Real& at(int i, int j) { return v[static_cast<size_t>(i) * shape.d[1] + j]; }
  Real at(int i, int j) const {
    return v[static_cast<size_t>(i) * shape.d[1] + j];
  }
  Real& at(int i, int j, int k) {
    return v[(static_cast<size_t>(i) * shape.d[1] + j) * shape.d[2] + k];
  }
  Real at(int i, int j, int k) const {
    return v[(static_cast<size_t>(i) * shape.d[1] + j) * shape.d[2] + k];
  }

  bool all_finite() const {
    for (Real x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(Real x) { std::fill(v.begin(), v.end(), x); }

  template <class Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i)
      out.v[i] = static_cast<Other>(v[i]);
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class Real>
Tensor<Real> xavier_uniform(Shape s, int fan_in, int fan_out, Rng& rng) {
  Tensor<Real> t(s);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& x : t.v) x = static_cast<Real>(rng.uniform(-limit, limit));
  return t;
}

template <class Real>
Tensor<Real> randn(Shape s, Rng& rng, double sigma = 1.0) {
  Tensor<Real> t(s);
  for (auto& x : t.v) x = static_cast<Real>(rng.normal(0.0, sigma));
  return t;
}

}  // namespace lexstress::nn
