#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cdpad/error.hpp"

namespace cdpad {

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    require(d > 0, ErrorCode::ShapeMismatch, "dimension must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

/// Dense row-major n-dimensional array. The currency of every numeric
/// operation in the project; no views, no strides, values owned.
template <class T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;

  explicit TensorT(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)),
        data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

  TensorT(std::vector<int> s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    require(static_cast<std::int64_t>(data.size()) == shape_numel(shape),
            ErrorCode::ShapeMismatch,
            "data length does not match shape " + shape_string(shape));
  }

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

  static TensorT full(std::vector<int> s, T value) {
    return TensorT(std::move(s), value);
  }

  int rank() const { return static_cast<int>(shape.size()); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  T& at(int i) { return data[static_cast<std::size_t>(i)]; }
  const T& at(int i) const { return data[static_cast<std::size_t>(i)]; }

  T& at(int i, int j) {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }
  const T& at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }

  T& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  T& at(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) *
                    shape[3] +
                l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) *
                    shape[3] +
                l];
  }

  bool all_finite() const {
    for (const T& v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  void fill(T value) { std::fill(data.begin(), data.end(), value); }

  void add_scaled(const TensorT& other, T scale) {
    require(same_shape(other), ErrorCode::ShapeMismatch,
            "add_scaled shape mismatch");
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += scale * other.data[i];
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

}  // namespace cdpad
