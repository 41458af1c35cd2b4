#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "refinery/errors.hpp"
#include "refinery/label_vector.hpp"

// Objectives for training a student against refined labels, each with its
// exact gradient with respect to the student's logits. All accumulate in
// double; log arguments are clamped at 1e-12 so hard one-hot teachers cannot
// produce infinities.

namespace refinery {

enum class LossKind {
  KlLabelToOutput,  // KL(label || output); the default objective
  KlOutputToLabel,  // KL(output || label)
  CrossEntropySoft, // -sum label * log(output); same gradient as the default
  L2Prob,           // squared distance between the probability vectors
};

inline const char* loss_kind_name(LossKind k) {
  switch (k) {
    case LossKind::KlLabelToOutput: return "kl_label_to_output";
    case LossKind::KlOutputToLabel: return "kl_output_to_label";
    case LossKind::CrossEntropySoft: return "cross_entropy_soft";
    case LossKind::L2Prob: return "l2_prob";
  }
  return "?";
}

inline LossKind loss_kind_from_name(const std::string& s) {
  if (s == "kl_label_to_output") return LossKind::KlLabelToOutput;
  if (s == "kl_output_to_label") return LossKind::KlOutputToLabel;
  if (s == "cross_entropy_soft") return LossKind::CrossEntropySoft;
  if (s == "l2_prob") return LossKind::L2Prob;
  throw ConfigError("unknown loss kind: " + s);
}

constexpr double kLogClamp = 1e-12;

namespace detail {
inline double clamped_log(double v) { return std::log(std::max(v, kLogClamp)); }

inline void check_pair(const LabelVector& p_prev, const LabelVector& p_cur,
                       const char* what) {
  require_simplex(p_prev, what);
  require_simplex(p_cur, what);
  if (p_prev.size() != p_cur.size())
    throw InvalidInputError(std::string(what) + ": length mismatch");
}
} // namespace detail

/// KL(p_prev || p_cur) = sum_c p_prev (log p_prev - log p_cur), 0 log 0 = 0.
inline double kl_label_to_output(const LabelVector& p_prev,
                                 const LabelVector& p_cur) {
  detail::check_pair(p_prev, p_cur, "kl_label_to_output");
  double acc = 0.0;
  for (std::size_t c = 0; c < p_prev.size(); ++c) {
    const double p = p_prev[c];
    if (p <= 0.0) continue;
    acc += p * (std::log(p) - detail::clamped_log(p_cur[c]));
  }
  return acc;
}

/// -sum_c p_prev log p_cur. Equals KL(p_prev||p_cur) + H(p_prev) identically.
inline double cross_entropy_soft(const LabelVector& p_prev,
                                 const LabelVector& p_cur) {
  detail::check_pair(p_prev, p_cur, "cross_entropy_soft");
  double acc = 0.0;
  for (std::size_t c = 0; c < p_prev.size(); ++c) {
    const double p = p_prev[c];
    if (p <= 0.0) continue;
    acc -= p * detail::clamped_log(p_cur[c]);
  }
  return acc;
}

/// KL(p_cur || p_prev) = sum_c p_cur (log p_cur - log p_prev).
inline double kl_output_to_label(const LabelVector& p_prev,
                                 const LabelVector& p_cur) {
  detail::check_pair(p_prev, p_cur, "kl_output_to_label");
  double acc = 0.0;
  for (std::size_t c = 0; c < p_prev.size(); ++c) {
    const double q = p_cur[c];
    if (q <= 0.0) continue;
    acc += q * (std::log(q) - detail::clamped_log(p_prev[c]));
  }
  return acc;
}

inline double l2_prob(const LabelVector& p_prev, const LabelVector& p_cur) {
  detail::check_pair(p_prev, p_cur, "l2_prob");
  double acc = 0.0;
  for (std::size_t c = 0; c < p_prev.size(); ++c) {
    const double d = static_cast<double>(p_prev[c]) - p_cur[c];
    acc += d * d;
  }
  return acc;
}

inline double entropy(const LabelVector& p) {
  double acc = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double v = p[c];
    if (v > 0.0) acc -= v * std::log(v);
  }
  return acc;
}

inline double loss_value(LossKind kind, const LabelVector& p_prev,
                         const LabelVector& p_cur) {
  switch (kind) {
    case LossKind::KlLabelToOutput: return kl_label_to_output(p_prev, p_cur);
    case LossKind::KlOutputToLabel: return kl_output_to_label(p_prev, p_cur);
    case LossKind::CrossEntropySoft: return cross_entropy_soft(p_prev, p_cur);
    case LossKind::L2Prob: return l2_prob(p_prev, p_cur);
  }
  throw InvalidInputError("loss_value: bad kind");
}

/// Softmax of a single logit row, double precision.
inline std::vector<double> softmax_row(const float* logits, std::size_t k) {
  double mx = logits[0];
  for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, double(logits[c]));
  std::vector<double> q(k);
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    q[c] = std::exp(double(logits[c]) - mx);
    sum += q[c];
  }
  for (std::size_t c = 0; c < k; ++c) q[c] /= sum;
  return q;
}

/// Exact gradient of the chosen loss with respect to one sample's logits.
/// For the default objective and soft cross entropy this is softmax - label;
/// the two coincide because the label-entropy term has zero logit gradient.
inline std::vector<float> loss_grad_wrt_logits(LossKind kind,
                                               const LabelVector& p_prev,
                                               const float* logits,
                                               std::size_t k) {
  require_simplex(p_prev, "loss_grad_wrt_logits");
  if (p_prev.size() != k)
    throw InvalidInputError("loss_grad_wrt_logits: label length mismatch");
  const std::vector<double> q = softmax_row(logits, k);
  std::vector<float> grad(k);
  switch (kind) {
    case LossKind::KlLabelToOutput:
      for (std::size_t c = 0; c < k; ++c)
        grad[c] = static_cast<float>(q[c] - p_prev[c]);
      break;
    case LossKind::CrossEntropySoft:
      for (std::size_t c = 0; c < k; ++c)
        grad[c] = static_cast<float>(q[c] - p_prev[c]);
      break;
    case LossKind::KlOutputToLabel: {
      // d/dz_k sum_c q_c (log q_c - log p_c) = q_k (r_k - sum_c q_c r_c)
      std::vector<double> r(k);
      double mean_r = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        r[c] = std::log(std::max(q[c], kLogClamp)) -
               detail::clamped_log(p_prev[c]);
        mean_r += q[c] * r[c];
      }
      for (std::size_t c = 0; c < k; ++c)
        grad[c] = static_cast<float>(q[c] * (r[c] - mean_r));
      break;
    }
    case LossKind::L2Prob: {
      // d/dz_k sum_c (p_c - q_c)^2 = 2 q_k ((q_k - p_k) - sum_c q_c (q_c - p_c))
      std::vector<double> e(k);
      double mean_e = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        e[c] = q[c] - p_prev[c];
        mean_e += q[c] * e[c];
      }
      for (std::size_t c = 0; c < k; ++c)
        grad[c] = static_cast<float>(2.0 * q[c] * (e[c] - mean_e));
      break;
    }
  }
  return grad;
}

} // namespace refinery
