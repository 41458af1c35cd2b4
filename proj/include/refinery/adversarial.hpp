#pragma once

#include <algorithm>
#include <optional>

#include "refinery/classifier.hpp"
#include "refinery/dataset.hpp"
#include "refinery/labels.hpp"
#include "refinery/losses.hpp"

// Adversarial jittering: move each crop one gradient-ascent step along the
// input gradient of the teacher-student KL divergence, so the pair disagrees
// more, then batch the jittered crops with their natural counterparts.

namespace refinery {

enum class ClipMode { None, InputRange };

struct AdversarialConfig {
  double eta = 1.0; // raw-gradient step size, defined on standardized inputs
  ClipMode clip = ClipMode::InputRange;
  int enabled_from_epoch = 0;

  /// Stage configuration requires a strictly positive step; jitter() itself
  /// also accepts eta == 0 and degenerates to the identity.
  void validate() const {
    if (eta <= 0.0) throw ConfigError("adversarial: eta must be positive");
    if (enabled_from_epoch < 0)
      throw ConfigError("adversarial: enabled_from_epoch must be >= 0");
  }
};

/// crop_batch + eta * d/dX sum_i KL(teacher(x_i) || student(x_i)), evaluated
/// with both networks in train mode on this batch. Uses the raw gradient, not
/// its sign. Neither model's parameters change; the student's running
/// statistics are left untouched by the extra pass.
inline Tensor jitter(Classifier& teacher, Classifier& student,
                     const Tensor& crop_batch, const AdversarialConfig& cfg,
                     const NormStats* norm = nullptr) {
  if (cfg.eta < 0.0) throw ConfigError("jitter: eta must be non-negative");
  if (cfg.eta == 0.0) return crop_batch;
  if (cfg.clip == ClipMode::InputRange && norm == nullptr)
    throw ConfigError("jitter: input-range clipping needs normalization stats");

  const std::vector<LabelVector> teacher_labels =
      generate_labels(teacher, crop_batch);

  const bool was_frozen = student.frozen;
  student.frozen = true; // shield running statistics from the extra pass
  ForwardState state;
  Tensor input_grad;
  try {
    forward(student, crop_batch, BnMode::Train, &state);
    const std::size_t n = crop_batch.dim(0);
    const std::size_t k = student.arch.num_classes;
    // Per-sample loss gradients, unscaled: Eq.-of-motion is per crop, so the
    // step size is not divided by the batch size.
    Tensor dlogits({n, k});
    for (std::size_t i = 0; i < n; ++i) {
      const std::vector<float> g =
          loss_grad_wrt_logits(LossKind::KlLabelToOutput, teacher_labels[i],
                               state.logits.data.data() + i * k, k);
      std::copy(g.begin(), g.end(), dlogits.data.begin() + i * k);
    }
    backward(student, state, dlogits, &input_grad);
  } catch (...) {
    student.frozen = was_frozen;
    throw;
  }
  student.frozen = was_frozen;

  Tensor out = crop_batch;
  const float eta = static_cast<float>(cfg.eta);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] += eta * input_grad.data[i];

  if (cfg.clip == ClipMode::InputRange) {
    const std::size_t channels = out.dim(1), plane = out.dim(2) * out.dim(3);
    for (std::size_t s = 0; s < out.dim(0); ++s)
      for (std::size_t c = 0; c < channels; ++c) {
        const float lo = norm->lo(c), hi = norm->hi(c);
        float* p = out.data.data() + ((s * channels + c)) * plane;
        for (std::size_t q = 0; q < plane; ++q) p[q] = std::clamp(p[q], lo, hi);
      }
  }
  return out;
}

/// Interleaves natural and adversarial crops: [nat0, adv0, nat1, adv1, ...].
inline Tensor compose_batch(const Tensor& natural, const Tensor& adversarial) {
  if (!natural.same_shape(adversarial))
    throw InvalidInputError("compose_batch: shape mismatch " +
                            natural.shape_str() + " vs " +
                            adversarial.shape_str());
  std::vector<std::size_t> shape = natural.shape;
  shape[0] *= 2;
  Tensor out(shape);
  const std::size_t row = natural.size() / natural.dim(0);
  for (std::size_t i = 0; i < natural.dim(0); ++i) {
    std::copy(natural.data.begin() + i * row, natural.data.begin() + (i + 1) * row,
              out.data.begin() + (2 * i) * row);
    std::copy(adversarial.data.begin() + i * row,
              adversarial.data.begin() + (i + 1) * row,
              out.data.begin() + (2 * i + 1) * row);
  }
  return out;
}

} // namespace refinery
