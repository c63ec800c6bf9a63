#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "xtra/error.hpp"
#include "xtra/rng.hpp"

namespace xtra {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major n-d array. Rank-0 (empty shape) is a scalar with one
// element. The element type selects precision: float for training, double
// for gradient checking.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
  }

  static TensorT zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return TensorT(std::move(s), std::vector<T>(n, T(0)));
  }

  static TensorT full(Shape s, T v) {
    std::size_t n = shape_numel(s);
    return TensorT(std::move(s), std::vector<T>(n, v));
  }

  static TensorT scalar(T v) { return TensorT({}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // Flat offset for a 2-d view over the last two dims.
  std::size_t last2_rows() const { return ndim() >= 2 ? shape[ndim() - 2] : 1; }
  std::size_t last2_cols() const { return ndim() >= 1 ? shape[ndim() - 1] : 1; }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  std::string shape_string() const { return shape_str(shape); }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename To, typename From>
TensorT<To> cast_tensor(const TensorT<From>& a) {
  TensorT<To> out = TensorT<To>::zeros(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    out.data[i] = static_cast<To>(a.data[i]);
  }
  return out;
}

// Normal(0, std) resampled until within +/- bound (default 2 std).
template <typename T>
TensorT<T> trunc_normal(Shape shape, T stddev, Rng& rng, T bound_sigmas = 2) {
  TensorT<T> out = TensorT<T>::zeros(std::move(shape));
  const double bound = static_cast<double>(bound_sigmas) * stddev;
  for (auto& v : out.data) {
    double x;
    do {
      x = rng.normal() * static_cast<double>(stddev);
    } while (std::abs(x) > bound);
    v = static_cast<T>(x);
  }
  return out;
}

template <typename T>
TensorT<T> uniform_tensor(Shape shape, T lo, T hi, Rng& rng) {
  TensorT<T> out = TensorT<T>::zeros(std::move(shape));
  for (auto& v : out.data) {
    v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  }
  return out;
}

}  // namespace xtra
