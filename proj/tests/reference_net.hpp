#pragma once

#include <cstdint>
#include <vector>

#include "refinery/classifier.hpp"

// Independent double-precision reference forward pass used as the oracle for
// gradient checks. Implemented with naive loops, no shared code with the
// production kernels. Alongside the probe objective it returns a hash of the
// discrete decisions taken (ReLU signs, pooling argmaxes): central
// differences are only meaningful when both evaluations stay on the same
// smooth piece, so coordinates whose perturbation flips a decision are
// masked, exactly as classic gradient checkers treat kinks.

namespace refinery::test {

struct RefEval {
  double objective = 0.0;       // sum(probe * logits)
  std::uint64_t signature = 0;  // hash of all discrete branch decisions
};

namespace ref_detail {
inline void mix(std::uint64_t& h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
}
} // namespace ref_detail

/// batch is NCHW in doubles; probe matches the logits shape [N,K].
inline RefEval ref_objective(const Classifier& model,
                             const std::vector<double>& batch, std::size_t n,
                             const Tensor& probe) {
  const ClassifierArch& arch = model.arch;
  std::size_t channels = 3;
  std::size_t spatial = arch.input_size;
  std::vector<double> x = batch;
  RefEval out;

  auto idx4 = [](std::size_t s, std::size_t c, std::size_t i, std::size_t j,
                 std::size_t C, std::size_t S) {
    return ((s * C + c) * S + i) * S + j;
  };

  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& spec = arch.layers[l];
    const LayerParams& p = model.params[l];
    switch (spec.kind) {
      case LayerKind::Conv3x3: {
        const std::size_t cout = spec.out, cin = channels, s = spatial;
        std::vector<double> y(n * cout * s * s, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t i = 0; i < s; ++i)
              for (std::size_t j = 0; j < s; ++j) {
                double acc = static_cast<double>(p.bias.data[co]);
                for (std::size_t ci = 0; ci < cin; ++ci)
                  for (int ki = -1; ki <= 1; ++ki)
                    for (int kj = -1; kj <= 1; ++kj) {
                      const int si = static_cast<int>(i) + ki;
                      const int sj = static_cast<int>(j) + kj;
                      if (si < 0 || sj < 0 || si >= static_cast<int>(s) ||
                          sj >= static_cast<int>(s))
                        continue;
                      const double w = p.weight.data
                          [((co * cin + ci) * 3 + static_cast<std::size_t>(ki + 1)) * 3 +
                           static_cast<std::size_t>(kj + 1)];
                      acc += w * x[idx4(b, ci, static_cast<std::size_t>(si),
                                        static_cast<std::size_t>(sj), cin, s)];
                    }
                y[idx4(b, co, i, j, cout, s)] = acc;
              }
        x = std::move(y);
        channels = cout;
        break;
      }
      case LayerKind::BatchNorm: {
        const std::size_t s = spatial, c = channels;
        const double m = static_cast<double>(n * s * s);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t q = 0; q < s * s; ++q)
              sum += x[(b * c + ch) * s * s + q];
          const double mean = sum / m;
          double sq = 0.0;
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t q = 0; q < s * s; ++q) {
              const double d = x[(b * c + ch) * s * s + q] - mean;
              sq += d * d;
            }
          const double inv = 1.0 / std::sqrt(sq / m + kBnEpsilon);
          const double g = p.weight.data[ch], beta = p.bias.data[ch];
          for (std::size_t b = 0; b < n; ++b)
            for (std::size_t q = 0; q < s * s; ++q) {
              double& v = x[(b * c + ch) * s * s + q];
              v = g * ((v - mean) * inv) + beta;
            }
        }
        break;
      }
      case LayerKind::Relu: {
        for (std::size_t i = 0; i < x.size(); ++i) {
          const bool on = x[i] > 0.0;
          ref_detail::mix(out.signature, on ? i * 2 + 1 : i * 2);
          if (!on) x[i] = 0.0;
        }
        break;
      }
      case LayerKind::MaxPool2x2: {
        const std::size_t s = spatial, c = channels, os = s / 2;
        std::vector<double> y(n * c * os * os);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < os; ++i)
              for (std::size_t j = 0; j < os; ++j) {
                const double* base =
                    &x[((b * c + ch) * s + 2 * i) * s + 2 * j];
                double best = base[0];
                std::size_t arg = 0;
                const double cand[3] = {base[1], base[s], base[s + 1]};
                for (std::size_t t = 0; t < 3; ++t)
                  if (cand[t] > best) {
                    best = cand[t];
                    arg = t + 1;
                  }
                ref_detail::mix(out.signature,
                                (((b * c + ch) * os + i) * os + j) * 4 + arg);
                y[((b * c + ch) * os + i) * os + j] = best;
              }
        x = std::move(y);
        spatial = os;
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const std::size_t s = spatial, c = channels;
        std::vector<double> y(n * c);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (std::size_t q = 0; q < s * s; ++q)
              sum += x[(b * c + ch) * s * s + q];
            y[b * c + ch] = sum / static_cast<double>(s * s);
          }
        x = std::move(y);
        spatial = 1;
        break;
      }
      case LayerKind::FullyConnected: {
        const std::size_t in = spec.in, of = spec.out;
        std::vector<double> y(n * of);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t o = 0; o < of; ++o) {
            double acc = static_cast<double>(p.bias.data[o]);
            for (std::size_t i = 0; i < in; ++i)
              acc += static_cast<double>(p.weight.data[o * in + i]) * x[b * in + i];
            y[b * of + o] = acc;
          }
        x = std::move(y);
        channels = of;
        break;
      }
    }
  }

  for (std::size_t i = 0; i < x.size(); ++i)
    out.objective += static_cast<double>(probe.data[i]) * x[i];
  return out;
}

} // namespace refinery::test
