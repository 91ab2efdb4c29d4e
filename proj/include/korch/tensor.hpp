#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "korch/error.hpp"

namespace korch {

using Shape = std::vector<int64_t>;

// Element count. Rank-0 shapes are scalars with one element.
inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (auto e : shape) {
    if (e < 1) throw ShapeError("non-positive extent " + std::to_string(e));
    if (n > std::numeric_limits<int64_t>::max() / e) throw ShapeError("element count overflows int64");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::vector<int64_t> row_major_strides(const Shape& shape) {
  std::vector<int64_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

// Named tensor port. dtype is fixed to float64.
struct TensorSpec {
  std::string name;
  Shape shape;
  std::string dtype = "f64";

  friend bool operator==(const TensorSpec&, const TensorSpec&) = default;
};

// Row-major float64 array.
struct DenseTensor {
  Shape shape;
  std::vector<double> data;

  DenseTensor() = default;
  DenseTensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
  }

  static DenseTensor filled(const Shape& s, double v) {
    return DenseTensor(s, std::vector<double>(static_cast<std::size_t>(numel(s)), v));
  }
  static DenseTensor zeros(const Shape& s) { return filled(s, 0.0); }

  template <class Rng>
  static DenseTensor random(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    DenseTensor t = zeros(s);
    for (auto& v : t.data) v = dist(rng);
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  friend bool operator==(const DenseTensor&, const DenseTensor&) = default;
};

}  // namespace korch
