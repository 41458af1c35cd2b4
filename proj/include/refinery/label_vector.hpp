#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "refinery/errors.hpp"

namespace refinery {

/// A probability distribution over the K classes. Ground-truth labels are
/// one-hot instances; refined labels are full soft distributions.
struct LabelVector {
  std::vector<float> probs;

  LabelVector() = default;
  explicit LabelVector(std::vector<float> p) : probs(std::move(p)) {}

  std::size_t size() const { return probs.size(); }
  float operator[](std::size_t i) const { return probs[i]; }
  float& operator[](std::size_t i) { return probs[i]; }

  bool on_simplex(float tol = 1e-4f) const {
    double sum = 0.0;
    for (float v : probs) {
      if (!std::isfinite(v) || v < -1e-7f) return false;
      sum += v;
    }
    return std::fabs(sum - 1.0) <= tol;
  }

  static LabelVector uniform(std::size_t k) {
    LabelVector v;
    v.probs.assign(k, 1.0f / static_cast<float>(k));
    return v;
  }
};

inline LabelVector one_hot(std::size_t class_index, std::size_t num_classes) {
  if (class_index >= num_classes)
    throw InvalidInputError("one_hot: class index " + std::to_string(class_index) +
                            " out of range for K=" + std::to_string(num_classes));
  LabelVector v;
  v.probs.assign(num_classes, 0.0f);
  v.probs[class_index] = 1.0f;
  return v;
}

inline void require_simplex(const LabelVector& v, const char* what) {
  if (!v.on_simplex())
    throw InvalidInputError(std::string(what) + ": input is not a probability vector");
}

} // namespace refinery
