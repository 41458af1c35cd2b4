#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "refinery/errors.hpp"

namespace refinery {

/// Dense row-major float tensor. The whole numerical core works on these;
/// shapes follow the NCHW convention for image batches.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0f);
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<std::size_t> s, float v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor from(std::vector<std::size_t> s, std::vector<float> values) {
    Tensor t;
    t.shape = std::move(s);
    if (count(t.shape) != values.size())
      throw InvalidInputError("tensor data length does not match shape");
    t.data = std::move(values);
    return t;
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t dim(std::size_t i) const {
    if (i >= shape.size()) throw InvalidInputError("tensor dim out of range");
    return shape[i];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // 4-D (NCHW) and 2-D accessors for the layer kernels.
  float& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[((n * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  float& at2(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  float at2(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void require_shape(const Tensor& t, const std::vector<std::size_t>& s,
                          const char* what) {
  if (t.shape != s)
    throw InvalidInputError(std::string(what) + ": expected shape mismatch, got " +
                            t.shape_str());
}

} // namespace refinery
