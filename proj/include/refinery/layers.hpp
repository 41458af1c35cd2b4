#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "refinery/errors.hpp"
#include "refinery/tensor.hpp"

// Kernels for the fixed layer vocabulary: 3x3 stride-1 pad-1 convolution,
// batch normalization, ReLU, 2x2 max pooling, global average pooling and a
// fully connected head. Each kernel has an exact backward counterpart; there
// is no general autodiff graph.

namespace refinery {

using RowMajorMatrixf =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMajorMap = Eigen::Map<RowMajorMatrixf>;
using ConstRowMajorMap = Eigen::Map<const RowMajorMatrixf>;

// ---------------------------------------------------------------------------
// softmax

inline Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 2)
    throw InvalidInputError("softmax: expected a [N x K] tensor, got " +
                            logits.shape_str());
  if (!logits.all_finite())
    throw InvalidInputError("softmax: non-finite logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape);
  for (std::size_t r = 0; r < n; ++r) {
    const float* in = logits.data.data() + r * k;
    float* o = out.data.data() + r * k;
    float mx = in[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, in[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (std::size_t c = 0; c < k; ++c) o[c] *= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv 3x3, stride 1, pad 1 (same spatial size)

/// Unrolls x into a (Cin*9) x (N*H*W) patch matrix; column (n,i,j) holds the
/// 3x3 receptive field of output position (i,j) in sample n, zero padded.
inline void im2col_3x3(const Tensor& x, Eigen::MatrixXf& cols) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  cols.resize(static_cast<Eigen::Index>(c * 9),
              static_cast<Eigen::Index>(n * h * w));
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const Eigen::Index m = static_cast<Eigen::Index>((s * h + i) * w + j);
        float* col = cols.data() + static_cast<std::size_t>(m) * c * 9;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const float* plane = x.data.data() + ((s * c + ch) * h) * w;
          for (int ki = 0; ki < 3; ++ki) {
            const int si = static_cast<int>(i) + ki - 1;
            const bool row_ok = si >= 0 && si < static_cast<int>(h);
            const float* src = plane + static_cast<std::size_t>(si) * w;
            for (int kj = 0; kj < 3; ++kj) {
              const int sj = static_cast<int>(j) + kj - 1;
              const float v = (row_ok && sj >= 0 && sj < static_cast<int>(w))
                                  ? src[sj]
                                  : 0.0f;
              col[(ch * 3 + static_cast<std::size_t>(ki)) * 3 +
                  static_cast<std::size_t>(kj)] = v;
            }
          }
        }
      }
    }
  }
}

struct ConvCache {
  Eigen::MatrixXf cols;
};

inline Tensor conv3x3_forward(const Tensor& x, const Tensor& weight,
                              const Tensor& bias, ConvCache* cache) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0);
  if (weight.shape != std::vector<std::size_t>{cout, cin, 3, 3})
    throw InvalidInputError("conv3x3: weight shape mismatch " + weight.shape_str());

  Eigen::MatrixXf local;
  Eigen::MatrixXf& cols = cache ? cache->cols : local;
  im2col_3x3(x, cols);

  ConstRowMajorMap wmat(weight.data.data(), static_cast<Eigen::Index>(cout),
                        static_cast<Eigen::Index>(cin * 9));
  Eigen::MatrixXf y(static_cast<Eigen::Index>(cout), cols.cols());
  y.noalias() = wmat * cols;

  Tensor out({n, cout, h, w});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t co = 0; co < cout; ++co) {
      const float b = bias.data[co];
      float* dst = out.data.data() + ((s * cout + co) * h) * w;
      const std::size_t base = s * h * w;
      for (std::size_t m = 0; m < h * w; ++m)
        dst[m] = y(static_cast<Eigen::Index>(co),
                   static_cast<Eigen::Index>(base + m)) +
                 b;
    }
  return out;
}

/// dy: [N,Cout,H,W]. Produces dweight/dbias and, when dx != nullptr, the
/// gradient with respect to the layer input.
inline void conv3x3_backward(const Tensor& x, const Tensor& weight,
                             const ConvCache& cache, const Tensor& dy,
                             Tensor& dweight, Tensor& dbias, Tensor* dx) {
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0);
  const std::size_t m = n * h * w;

  // Gather dy into the (Cout x M) layout matching the forward GEMM.
  Eigen::MatrixXf dyv(static_cast<Eigen::Index>(cout),
                      static_cast<Eigen::Index>(m));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t co = 0; co < cout; ++co) {
      const float* src = dy.data.data() + ((s * cout + co) * h) * w;
      const std::size_t base = s * h * w;
      for (std::size_t p = 0; p < h * w; ++p)
        dyv(static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(base + p)) =
            src[p];
    }

  dweight = Tensor(weight.shape);
  RowMajorMap dwmat(dweight.data.data(), static_cast<Eigen::Index>(cout),
                    static_cast<Eigen::Index>(cin * 9));
  dwmat.noalias() = dyv * cache.cols.transpose();

  dbias = Tensor({cout});
  for (std::size_t co = 0; co < cout; ++co)
    dbias.data[co] = dyv.row(static_cast<Eigen::Index>(co)).sum();

  if (!dx) return;

  ConstRowMajorMap wmat(weight.data.data(), static_cast<Eigen::Index>(cout),
                        static_cast<Eigen::Index>(cin * 9));
  Eigen::MatrixXf dcols(static_cast<Eigen::Index>(cin * 9),
                        static_cast<Eigen::Index>(m));
  dcols.noalias() = wmat.transpose() * dyv;

  *dx = Tensor(x.shape);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t col = (s * h + i) * w + j;
        const float* src = dcols.data() + col * cin * 9;
        for (std::size_t ch = 0; ch < cin; ++ch) {
          float* plane = dx->data.data() + ((s * cin + ch) * h) * w;
          for (int ki = 0; ki < 3; ++ki) {
            const int si = static_cast<int>(i) + ki - 1;
            if (si < 0 || si >= static_cast<int>(h)) continue;
            for (int kj = 0; kj < 3; ++kj) {
              const int sj = static_cast<int>(j) + kj - 1;
              if (sj < 0 || sj >= static_cast<int>(w)) continue;
              plane[static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)] +=
                  src[(ch * 3 + static_cast<std::size_t>(ki)) * 3 +
                      static_cast<std::size_t>(kj)];
            }
          }
        }
      }
}

// ---------------------------------------------------------------------------
// batch normalization (per channel over N,H,W)

enum class BnMode { Train, Eval };

struct BnCache {
  Tensor xhat;
  std::vector<float> inv_std; // per channel
  BnMode mode = BnMode::Eval;
  std::size_t count = 0; // elements per channel used for the statistics
};

/// Normalizes with batch statistics (Train) or running statistics (Eval).
/// Running statistics are written back only when `persist_stats` is set;
/// frozen teachers run in Train mode without persisting.
inline Tensor batchnorm_forward(const Tensor& x, const Tensor& gamma,
                                const Tensor& beta, Tensor& running_mean,
                                Tensor& running_var, float momentum, float eps,
                                BnMode mode, bool persist_stats, BnCache* cache) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t per_channel = n * h * w;
  if (mode == BnMode::Train && n < 2)
    throw DegenerateBatchError(
        "batchnorm: train mode needs a batch of at least 2 samples");

  Tensor out(x.shape);
  if (cache) {
    cache->xhat = Tensor(x.shape);
    cache->inv_std.assign(c, 0.0f);
    cache->mode = mode;
    cache->count = per_channel;
  }

  for (std::size_t ch = 0; ch < c; ++ch) {
    float mean, var;
    if (mode == BnMode::Train) {
      double sum = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const float* plane = x.data.data() + ((s * c + ch) * h) * w;
        for (std::size_t p = 0; p < h * w; ++p) sum += plane[p];
      }
      mean = static_cast<float>(sum / static_cast<double>(per_channel));
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const float* plane = x.data.data() + ((s * c + ch) * h) * w;
        for (std::size_t p = 0; p < h * w; ++p) {
          const double d = static_cast<double>(plane[p]) - mean;
          sq += d * d;
        }
      }
      var = static_cast<float>(sq / static_cast<double>(per_channel));
      if (persist_stats) {
        // Unbiased variance feeds the running estimate, matching common
        // deep-learning framework semantics.
        const float unbiased =
            static_cast<float>(sq / static_cast<double>(per_channel - 1));
        running_mean.data[ch] = (1.0f - momentum) * running_mean.data[ch] +
                                momentum * mean;
        running_var.data[ch] = (1.0f - momentum) * running_var.data[ch] +
                               momentum * unbiased;
      }
    } else {
      mean = running_mean.data[ch];
      var = running_var.data[ch];
    }

    const float inv_std = 1.0f / std::sqrt(var + eps);
    const float g = gamma.data[ch], b = beta.data[ch];
    if (cache) cache->inv_std[ch] = inv_std;
    for (std::size_t s = 0; s < n; ++s) {
      const float* src = x.data.data() + ((s * c + ch) * h) * w;
      float* dst = out.data.data() + ((s * c + ch) * h) * w;
      float* xh = cache ? cache->xhat.data.data() + ((s * c + ch) * h) * w : nullptr;
      for (std::size_t p = 0; p < h * w; ++p) {
        const float normalized = (src[p] - mean) * inv_std;
        if (xh) xh[p] = normalized;
        dst[p] = g * normalized + b;
      }
    }
  }
  return out;
}

inline void batchnorm_backward(const Tensor& gamma, const BnCache& cache,
                               const Tensor& dy, Tensor& dgamma, Tensor& dbeta,
                               Tensor* dx) {
  const std::size_t n = dy.dim(0), c = dy.dim(1), h = dy.dim(2), w = dy.dim(3);
  const double m = static_cast<double>(cache.count);

  dgamma = Tensor({c});
  dbeta = Tensor({c});
  if (dx) *dx = Tensor(dy.shape);

  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      const float* dyp = dy.data.data() + ((s * c + ch) * h) * w;
      const float* xh = cache.xhat.data.data() + ((s * c + ch) * h) * w;
      for (std::size_t p = 0; p < h * w; ++p) {
        sum_dy += dyp[p];
        sum_dy_xhat += static_cast<double>(dyp[p]) * xh[p];
      }
    }
    dgamma.data[ch] = static_cast<float>(sum_dy_xhat);
    dbeta.data[ch] = static_cast<float>(sum_dy);
    if (!dx) continue;

    const float g = gamma.data[ch];
    const float inv_std = cache.inv_std[ch];
    if (cache.mode == BnMode::Train) {
      // Exact gradient through the batch statistics.
      const float k1 = static_cast<float>(sum_dy / m);
      const float k2 = static_cast<float>(sum_dy_xhat / m);
      for (std::size_t s = 0; s < n; ++s) {
        const float* dyp = dy.data.data() + ((s * c + ch) * h) * w;
        const float* xh = cache.xhat.data.data() + ((s * c + ch) * h) * w;
        float* dxp = dx->data.data() + ((s * c + ch) * h) * w;
        for (std::size_t p = 0; p < h * w; ++p)
          dxp[p] = g * inv_std * (dyp[p] - k1 - xh[p] * k2);
      }
    } else {
      for (std::size_t s = 0; s < n; ++s) {
        const float* dyp = dy.data.data() + ((s * c + ch) * h) * w;
        float* dxp = dx->data.data() + ((s * c + ch) * h) * w;
        for (std::size_t p = 0; p < h * w; ++p) dxp[p] = g * inv_std * dyp[p];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ReLU

inline Tensor relu_forward(const Tensor& x) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i)
    out.data[i] = x.data[i] > 0.0f ? x.data[i] : 0.0f;
  return out;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i)
    dx.data[i] = x.data[i] > 0.0f ? dy.data[i] : 0.0f;
  return dx;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2

struct PoolCache {
  std::vector<std::uint8_t> argmax; // 0..3, index within the 2x2 window
};

inline Tensor maxpool2x2_forward(const Tensor& x, PoolCache* cache) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw InvalidInputError("maxpool2x2: spatial dims must be even, got " +
                            x.shape_str());
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  if (cache) cache->argmax.assign(n * c * oh * ow, 0);
  std::size_t oidx = 0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* plane = x.data.data() + ((s * c + ch) * h) * w;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j, ++oidx) {
          const std::size_t base = (2 * i) * w + 2 * j;
          float best = plane[base];
          std::uint8_t arg = 0;
          const float candidates[3] = {plane[base + 1], plane[base + w],
                                       plane[base + w + 1]};
          for (std::uint8_t t = 0; t < 3; ++t)
            if (candidates[t] > best) { // ties keep the first scanned element
              best = candidates[t];
              arg = static_cast<std::uint8_t>(t + 1);
            }
          out.data[oidx] = best;
          if (cache) cache->argmax[oidx] = arg;
        }
    }
  return out;
}

inline Tensor maxpool2x2_backward(const Tensor& x, const PoolCache& cache,
                                  const Tensor& dy) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor dx(x.shape);
  std::size_t oidx = 0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* plane = dx.data.data() + ((s * c + ch) * h) * w;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j, ++oidx) {
          const std::uint8_t arg = cache.argmax[oidx];
          const std::size_t base =
              (2 * i + (arg >> 1)) * w + 2 * j + (arg & 1);
          plane[base] += dy.data[oidx];
        }
    }
  return dx;
}

// ---------------------------------------------------------------------------
// global average pooling: [N,C,H,W] -> [N,C]

inline Tensor gap_forward(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c});
  const float inv = 1.0f / static_cast<float>(h * w);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* plane = x.data.data() + ((s * c + ch) * h) * w;
      double sum = 0.0;
      for (std::size_t p = 0; p < h * w; ++p) sum += plane[p];
      out.at2(s, ch) = static_cast<float>(sum) * inv;
    }
  return out;
}

inline Tensor gap_backward(const Tensor& x, const Tensor& dy) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor dx(x.shape);
  const float inv = 1.0f / static_cast<float>(h * w);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float g = dy.at2(s, ch) * inv;
      float* plane = dx.data.data() + ((s * c + ch) * h) * w;
      for (std::size_t p = 0; p < h * w; ++p) plane[p] = g;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// fully connected: y = x W^T + b, x: [N,In], W: [Out,In]

inline Tensor fc_forward(const Tensor& x, const Tensor& weight,
                         const Tensor& bias) {
  const std::size_t n = x.dim(0), in = x.dim(1);
  const std::size_t out_features = weight.dim(0);
  if (weight.dim(1) != in)
    throw InvalidInputError("fully connected: weight shape " +
                            weight.shape_str() + " does not accept input " +
                            x.shape_str());
  ConstRowMajorMap xm(x.data.data(), static_cast<Eigen::Index>(n),
                      static_cast<Eigen::Index>(in));
  ConstRowMajorMap wm(weight.data.data(), static_cast<Eigen::Index>(out_features),
                      static_cast<Eigen::Index>(in));
  Tensor y({n, out_features});
  RowMajorMap ym(y.data.data(), static_cast<Eigen::Index>(n),
                 static_cast<Eigen::Index>(out_features));
  ym.noalias() = xm * wm.transpose();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < out_features; ++o) y.at2(s, o) += bias.data[o];
  return y;
}

inline void fc_backward(const Tensor& x, const Tensor& weight, const Tensor& dy,
                        Tensor& dweight, Tensor& dbias, Tensor* dx) {
  const std::size_t n = x.dim(0), in = x.dim(1);
  const std::size_t out_features = weight.dim(0);
  ConstRowMajorMap xm(x.data.data(), static_cast<Eigen::Index>(n),
                      static_cast<Eigen::Index>(in));
  ConstRowMajorMap wm(weight.data.data(), static_cast<Eigen::Index>(out_features),
                      static_cast<Eigen::Index>(in));
  ConstRowMajorMap dym(dy.data.data(), static_cast<Eigen::Index>(n),
                       static_cast<Eigen::Index>(out_features));

  dweight = Tensor(weight.shape);
  RowMajorMap dwm(dweight.data.data(), static_cast<Eigen::Index>(out_features),
                  static_cast<Eigen::Index>(in));
  dwm.noalias() = dym.transpose() * xm;

  dbias = Tensor({out_features});
  for (std::size_t o = 0; o < out_features; ++o)
    dbias.data[o] = dym.col(static_cast<Eigen::Index>(o)).sum();

  if (dx) {
    *dx = Tensor(x.shape);
    RowMajorMap dxm(dx->data.data(), static_cast<Eigen::Index>(n),
                    static_cast<Eigen::Index>(in));
    dxm.noalias() = dym * wm;
  }
}

} // namespace refinery
