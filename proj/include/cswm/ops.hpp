#pragma once

// Differentiable ops. Each op computes its output eagerly and, when a tape is
// supplied and any input requires grad, records a closure that accumulates
// input gradients from the output gradient. Gradients always accumulate with
// +=, so parameters reused across calls (shared weights) sum naturally.
//
// Conventions: NCHW layout for images, row-major matrices, relu'(0) = 0,
// float32 storage with double accumulators inside reductions.

#include <cmath>
#include <cstring>
#include <vector>

#include "cswm/blas.hpp"
#include "cswm/common.hpp"
#include "cswm/tape.hpp"
#include "cswm/tensor.hpp"

namespace cswm {

namespace detail {

inline void finite_guard(const Tensor& t, const char* op) {
  if (finite_checks_enabled()) check_all_finite(t.data(), static_cast<size_t>(t.numel()), op);
}

// Null when no gradient reached the output (dead branch): backward becomes a no-op.
inline const float* out_grad(const Tensor& t) {
  return t.has_grad() ? t.grad() : nullptr;
}

inline bool wants_tape(const Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

}  // namespace detail

// ---- elementwise ----

inline Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  CSWM_CHECK(a.shape() == b.shape(), "add: shape mismatch ", shape_str(a.shape()),
             " vs ", shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  detail::finite_guard(out, "add");
  if (detail::wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      int64_t n = out.numel();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) {
  CSWM_CHECK(a.shape() == b.shape(), "sub: shape mismatch ", shape_str(a.shape()),
             " vs ", shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  detail::finite_guard(out, "sub");
  if (detail::wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      int64_t n = out.numel();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  CSWM_CHECK(a.shape() == b.shape(), "mul: shape mismatch ", shape_str(a.shape()),
             " vs ", shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  detail::finite_guard(out, "mul");
  if (detail::wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      int64_t n = out.numel();
      if (a.requires_grad()) {
        float* ga = a.grad();
        const float* pb = b.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        const float* pa = a.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

// y = scale * x + shift, elementwise with scalars.
inline Tensor affine_scalar(Tape* tape, const Tensor& x, float scale, float shift) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = scale * px[i] + shift;
  detail::finite_guard(out, "affine_scalar");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, scale]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += scale * g[i];
    });
  }
  return out;
}

inline Tensor scale(Tape* tape, const Tensor& x, float s) {
  return affine_scalar(tape, x, s, 0.0f);
}

// ---- activations ----

inline Tensor relu(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : 0.0f;
  detail::finite_guard(out, "relu");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      const float* po = out.data();
      int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i)
        if (po[i] > 0.0f) gx[i] += g[i];
    });
  }
  return out;
}

inline Tensor leaky_relu(Tape* tape, const Tensor& x, float slope = 0.01f) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : slope * px[i];
  detail::finite_guard(out, "leaky_relu");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, slope]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      const float* px = x.data();
      int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += (px[i] > 0.0f ? 1.0f : slope) * g[i];
    });
  }
  return out;
}

inline Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const float* px = x.data();
  float* po = out.data();
  int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    float v = px[i];
    po[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                      : std::exp(v) / (1.0f + std::exp(v));
  }
  detail::finite_guard(out, "sigmoid");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      const float* po = out.data();
      int64_t n = out.numel();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * po[i] * (1.0f - po[i]);
    });
  }
  return out;
}

// ---- linear algebra ----

inline Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  CSWM_CHECK(a.ndim() == 2 && b.ndim() == 2, "matmul: inputs must be 2-d");
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  CSWM_CHECK(b.dim(0) == k, "matmul: inner dims differ, ", shape_str(a.shape()),
             " vs ", shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  sgemm(false, false, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, out.data(), n);
  detail::finite_guard(out, "matmul");
  if (detail::wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, n, k]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      if (a.requires_grad())
        sgemm(false, true, m, k, n, 1.0f, g, n, b.data(), n, 1.0f, a.grad(), k);
      if (b.requires_grad())
        sgemm(true, false, k, n, m, 1.0f, a.data(), k, g, n, 1.0f, b.grad(), n);
    });
  }
  return out;
}

// y = x @ w + b with x (m x in), w (in x out), b (out).
inline Tensor affine(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  CSWM_CHECK(x.ndim() == 2 && w.ndim() == 2 && b.ndim() == 1, "affine: bad ranks");
  int64_t m = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  CSWM_CHECK(w.dim(0) == in, "affine: x ", shape_str(x.shape()), " vs w ", shape_str(w.shape()));
  CSWM_CHECK(b.dim(0) == out_dim, "affine: bias dim ", b.dim(0), " vs ", out_dim);
  Tensor out = Tensor::zeros({m, out_dim});
  float* po = out.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < m; ++i)
    std::memcpy(po + i * out_dim, pb, sizeof(float) * static_cast<size_t>(out_dim));
  sgemm(false, false, m, out_dim, in, 1.0f, x.data(), in, w.data(), out_dim, 1.0f, po, out_dim);
  detail::finite_guard(out, "affine");
  if (detail::wants_tape(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape->record([x, w, b, out, m, in, out_dim]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      if (x.requires_grad())
        sgemm(false, true, m, in, out_dim, 1.0f, g, out_dim, w.data(), out_dim, 1.0f,
              x.grad(), in);
      if (w.requires_grad())
        sgemm(true, false, in, out_dim, m, 1.0f, x.data(), in, g, out_dim, 1.0f,
              w.grad(), out_dim);
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (int64_t i = 0; i < m; ++i) {
          const float* row = g + i * out_dim;
          for (int64_t j = 0; j < out_dim; ++j) gb[j] += row[j];
        }
      }
    });
  }
  return out;
}

// ---- convolution ----

namespace detail {

// colT is (C*KH*KW) x (OH*OW); entry (c*KH*KW + kh*KW + kw, oh*OW + ow) holds
// x[c][oh*stride + kh - pad][ow*stride + kw - pad], zero outside the image.
inline void im2col_t(const float* img, int64_t C, int64_t H, int64_t W, int64_t KH,
                     int64_t KW, int64_t stride, int64_t pad, int64_t OH, int64_t OW,
                     float* colT) {
  for (int64_t c = 0; c < C; ++c) {
    const float* chan = img + c * H * W;
    for (int64_t kh = 0; kh < KH; ++kh) {
      for (int64_t kw = 0; kw < KW; ++kw) {
        float* row = colT + ((c * KH + kh) * KW + kw) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          int64_t ih = oh * stride + kh - pad;
          float* dst = row + oh * OW;
          if (ih < 0 || ih >= H) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(OW));
            continue;
          }
          const float* src = chan + ih * W;
          for (int64_t ow = 0; ow < OW; ++ow) {
            int64_t iw = ow * stride + kw - pad;
            dst[ow] = (iw >= 0 && iw < W) ? src[iw] : 0.0f;
          }
        }
      }
    }
  }
}

inline void col2im_t(const float* colT, int64_t C, int64_t H, int64_t W, int64_t KH,
                     int64_t KW, int64_t stride, int64_t pad, int64_t OH, int64_t OW,
                     float* img_grad) {
  for (int64_t c = 0; c < C; ++c) {
    float* chan = img_grad + c * H * W;
    for (int64_t kh = 0; kh < KH; ++kh) {
      for (int64_t kw = 0; kw < KW; ++kw) {
        const float* row = colT + ((c * KH + kh) * KW + kw) * OH * OW;
        for (int64_t oh = 0; oh < OH; ++oh) {
          int64_t ih = oh * stride + kh - pad;
          if (ih < 0 || ih >= H) continue;
          float* dst = chan + ih * W;
          const float* src = row + oh * OW;
          for (int64_t ow = 0; ow < OW; ++ow) {
            int64_t iw = ow * stride + kw - pad;
            if (iw >= 0 && iw < W) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x (N,C,H,W), w (OC,C,KH,KW), b (OC) -> (N,OC,OH,OW).
inline Tensor conv2d(Tape* tape, const Tensor& x, const Tensor& w, const Tensor& b,
                     int64_t stride, int64_t pad) {
  CSWM_CHECK(x.ndim() == 4 && w.ndim() == 4 && b.ndim() == 1, "conv2d: bad ranks");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  CSWM_CHECK(w.dim(1) == C, "conv2d: channel mismatch, x ", shape_str(x.shape()),
             " vs w ", shape_str(w.shape()));
  CSWM_CHECK(b.dim(0) == OC, "conv2d: bias dim ", b.dim(0), " vs ", OC);
  CSWM_CHECK(stride >= 1, "conv2d: stride must be >= 1");
  CSWM_CHECK(pad >= 0, "conv2d: pad must be >= 0");
  int64_t OH = (H + 2 * pad - KH) / stride + 1;
  int64_t OW = (W + 2 * pad - KW) / stride + 1;
  CSWM_CHECK(OH > 0 && OW > 0, "conv2d: kernel larger than padded input");
  int64_t ckk = C * KH * KW, pos = OH * OW;
  bool pointwise = (KH == 1 && KW == 1 && stride == 1 && pad == 0);

  Tensor out = Tensor::zeros({N, OC, OH, OW});
  {
    std::vector<float> colT(pointwise ? 0 : ckk * pos);
    for (int64_t img = 0; img < N; ++img) {
      const float* xi = x.data() + img * C * H * W;
      const float* col = xi;
      if (!pointwise) {
        detail::im2col_t(xi, C, H, W, KH, KW, stride, pad, OH, OW, colT.data());
        col = colT.data();
      }
      float* oi = out.data() + img * OC * pos;
      sgemm(false, false, OC, pos, ckk, 1.0f, w.data(), ckk, col, pos, 0.0f, oi, pos);
    }
  }
  {
    float* po = out.data();
    const float* pb = b.data();
    for (int64_t img = 0; img < N; ++img)
      for (int64_t oc = 0; oc < OC; ++oc) {
        float bias = pb[oc];
        float* dst = po + (img * OC + oc) * pos;
        for (int64_t p = 0; p < pos; ++p) dst[p] += bias;
      }
  }
  detail::finite_guard(out, "conv2d");

  if (detail::wants_tape(tape, {&x, &w, &b})) {
    out.set_requires_grad(true);
    tape->record([x, w, b, out, N, C, H, W, OC, KH, KW, stride, pad, OH, OW, ckk,
                  pos, pointwise]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gw = w.requires_grad() ? w.grad() : nullptr;
      float* gx = x.requires_grad() ? x.grad() : nullptr;
      std::vector<float> colT(pointwise ? 0 : ckk * pos);
      std::vector<float> dcolT((gx && !pointwise) ? ckk * pos : 0);
      for (int64_t img = 0; img < N; ++img) {
        const float* gi = g + img * OC * pos;
        if (gw) {
          const float* xi = x.data() + img * C * H * W;
          const float* col = xi;
          if (!pointwise) {
            detail::im2col_t(xi, C, H, W, KH, KW, stride, pad, OH, OW, colT.data());
            col = colT.data();
          }
          sgemm(false, true, OC, ckk, pos, 1.0f, gi, pos, col, pos, 1.0f, gw, ckk);
        }
        if (gx) {
          float* gxi = gx + img * C * H * W;
          if (pointwise) {
            sgemm(true, false, ckk, pos, OC, 1.0f, w.data(), ckk, gi, pos, 1.0f, gxi, pos);
          } else {
            sgemm(true, false, ckk, pos, OC, 1.0f, w.data(), ckk, gi, pos, 0.0f,
                  dcolT.data(), pos);
            detail::col2im_t(dcolT.data(), C, H, W, KH, KW, stride, pad, OH, OW, gxi);
          }
        }
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (int64_t img = 0; img < N; ++img)
          for (int64_t oc = 0; oc < OC; ++oc) {
            const float* src = g + (img * OC + oc) * pos;
            double s = 0.0;
            for (int64_t p = 0; p < pos; ++p) s += src[p];
            gb[oc] += static_cast<float>(s);
          }
      }
    });
  }
  return out;
}

// ---- normalization ----

// Batch norm over (N,H,W) per channel. In training mode uses batch statistics
// and updates running stats in place (momentum convention: new = (1-m)*old +
// m*batch, running variance unbiased). In eval mode uses the running stats.
inline Tensor batchnorm2d(Tape* tape, const Tensor& x, const Tensor& gamma,
                          const Tensor& beta, Tensor& running_mean,
                          Tensor& running_var, bool training,
                          float momentum = 0.1f, float eps = 1e-5f) {
  CSWM_CHECK(x.ndim() == 4, "batchnorm2d: input must be (N,C,H,W)");
  int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  CSWM_CHECK(gamma.numel() == C && beta.numel() == C && running_mean.numel() == C &&
                 running_var.numel() == C,
             "batchnorm2d: per-channel params must have ", C, " elements");
  int64_t hw = H * W, n = N * hw;
  CSWM_CHECK(!training || n > 1, "batchnorm2d: batch statistics need more than one value");

  std::vector<float> mean(C), inv_std(C);
  if (training) {
    for (int64_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (int64_t img = 0; img < N; ++img) {
        const float* p = x.data() + (img * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) s += p[i];
      }
      double m = s / n;
      double v = 0.0;
      for (int64_t img = 0; img < N; ++img) {
        const float* p = x.data() + (img * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          double d = p[i] - m;
          v += d * d;
        }
      }
      v /= n;
      mean[c] = static_cast<float>(m);
      inv_std[c] = static_cast<float>(1.0 / std::sqrt(v + eps));
      float* rm = running_mean.data();
      float* rv = running_var.data();
      rm[c] = (1.0f - momentum) * rm[c] + momentum * mean[c];
      float unbiased = static_cast<float>(v * n / (n - 1));
      rv[c] = (1.0f - momentum) * rv[c] + momentum * unbiased;
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      inv_std[c] = 1.0f / std::sqrt(running_var.data()[c] + eps);
    }
  }

  Tensor out = Tensor::zeros(x.shape());
  for (int64_t img = 0; img < N; ++img)
    for (int64_t c = 0; c < C; ++c) {
      const float* p = x.data() + (img * C + c) * hw;
      float* o = out.data() + (img * C + c) * hw;
      float m = mean[c], is = inv_std[c], g = gamma.data()[c], bb = beta.data()[c];
      for (int64_t i = 0; i < hw; ++i) o[i] = g * (p[i] - m) * is + bb;
    }
  detail::finite_guard(out, "batchnorm2d");

  if (detail::wants_tape(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    tape->record([x, gamma, beta, out, mean, inv_std, N, C, hw, n, training]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      for (int64_t c = 0; c < C; ++c) {
        float m = mean[c], is = inv_std[c], gam = gamma.data()[c];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int64_t img = 0; img < N; ++img) {
          const float* px = x.data() + (img * C + c) * hw;
          const float* pg = g + (img * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            float xhat = (px[i] - m) * is;
            sum_dy += pg[i];
            sum_dy_xhat += static_cast<double>(pg[i]) * xhat;
          }
        }
        if (gamma.requires_grad()) gamma.grad()[c] += static_cast<float>(sum_dy_xhat);
        if (beta.requires_grad()) beta.grad()[c] += static_cast<float>(sum_dy);
        if (x.requires_grad()) {
          float* gx = x.grad();
          float mean_dy = static_cast<float>(sum_dy / n);
          float mean_dy_xhat = static_cast<float>(sum_dy_xhat / n);
          for (int64_t img = 0; img < N; ++img) {
            const float* px = x.data() + (img * C + c) * hw;
            const float* pg = g + (img * C + c) * hw;
            float* pgx = gx + (img * C + c) * hw;
            if (training) {
              for (int64_t i = 0; i < hw; ++i) {
                float xhat = (px[i] - m) * is;
                pgx[i] += gam * is * (pg[i] - mean_dy - xhat * mean_dy_xhat);
              }
            } else {
              for (int64_t i = 0; i < hw; ++i) pgx[i] += gam * is * pg[i];
            }
          }
        }
      }
    });
  }
  return out;
}

// Layer norm over the last axis of a 2-d input.
inline Tensor layernorm(Tape* tape, const Tensor& x, const Tensor& gamma,
                        const Tensor& beta, float eps = 1e-5f) {
  CSWM_CHECK(x.ndim() == 2, "layernorm: input must be 2-d");
  int64_t M = x.dim(0), F = x.dim(1);
  CSWM_CHECK(gamma.numel() == F && beta.numel() == F,
             "layernorm: params must have ", F, " elements");
  CSWM_CHECK(F > 0, "layernorm: empty feature axis");

  std::vector<float> mean(M), inv_std(M);
  Tensor out = Tensor::zeros(x.shape());
  for (int64_t r = 0; r < M; ++r) {
    const float* p = x.data() + r * F;
    double s = 0.0;
    for (int64_t j = 0; j < F; ++j) s += p[j];
    double m = s / F;
    double v = 0.0;
    for (int64_t j = 0; j < F; ++j) {
      double d = p[j] - m;
      v += d * d;
    }
    v /= F;
    mean[r] = static_cast<float>(m);
    inv_std[r] = static_cast<float>(1.0 / std::sqrt(v + eps));
    float* o = out.data() + r * F;
    for (int64_t j = 0; j < F; ++j)
      o[j] = gamma.data()[j] * (p[j] - mean[r]) * inv_std[r] + beta.data()[j];
  }
  detail::finite_guard(out, "layernorm");

  if (detail::wants_tape(tape, {&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    tape->record([x, gamma, beta, out, mean, inv_std, M, F]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      for (int64_t r = 0; r < M; ++r) {
        const float* px = x.data() + r * F;
        const float* pg = g + r * F;
        float m = mean[r], is = inv_std[r];
        double sum_t = 0.0, sum_t_xhat = 0.0;
        for (int64_t j = 0; j < F; ++j) {
          float xhat = (px[j] - m) * is;
          float t = pg[j] * gamma.data()[j];
          sum_t += t;
          sum_t_xhat += static_cast<double>(t) * xhat;
          if (gamma.requires_grad()) gamma.grad()[j] += pg[j] * xhat;
          if (beta.requires_grad()) beta.grad()[j] += pg[j];
        }
        if (x.requires_grad()) {
          float* pgx = x.grad() + r * F;
          float mt = static_cast<float>(sum_t / F);
          float mtx = static_cast<float>(sum_t_xhat / F);
          for (int64_t j = 0; j < F; ++j) {
            float xhat = (px[j] - m) * is;
            float t = pg[j] * gamma.data()[j];
            pgx[j] += is * (t - mt - xhat * mtx);
          }
        }
      }
    });
  }
  return out;
}

// ---- shape / gather ----

inline Tensor concat(Tape* tape, const std::vector<Tensor>& parts, int axis) {
  CSWM_CHECK(!parts.empty(), "concat: no inputs");
  int64_t nd = parts[0].ndim();
  CSWM_CHECK(axis >= 0 && axis < nd, "concat: axis ", axis, " out of range for rank ", nd);
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& t : parts) {
    CSWM_CHECK(t.ndim() == nd, "concat: rank mismatch");
    for (int64_t d = 0; d < nd; ++d)
      CSWM_CHECK(d == axis || t.dim(static_cast<int>(d)) == out_shape[d],
                 "concat: shape mismatch ", shape_str(t.shape()), " on axis ", d);
    axis_total += t.dim(axis);
  }
  out_shape[axis] = axis_total;
  Tensor out = Tensor::zeros(out_shape);

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int64_t d = axis + 1; d < nd; ++d) inner *= out_shape[d];

  int64_t offset = 0;
  for (const Tensor& t : parts) {
    int64_t len = t.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + (o * axis_total * inner) + offset,
                  t.data() + o * len, sizeof(float) * static_cast<size_t>(len));
    offset += len;
  }
  detail::finite_guard(out, "concat");

  bool any = false;
  for (const Tensor& t : parts)
    if (t.requires_grad()) any = true;
  if (tape && any) {
    out.set_requires_grad(true);
    tape->record([parts, out, outer, inner, axis_total]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      int64_t offset = 0;
      for (const Tensor& t : parts) {
        int64_t len = t.numel() / outer;
        if (t.requires_grad()) {
          float* gt = t.grad();
          for (int64_t o = 0; o < outer; ++o) {
            const float* src = g + o * axis_total * inner + offset;
            float* dst = gt + o * len;
            for (int64_t i = 0; i < len; ++i) dst[i] += src[i];
          }
        }
        offset += len;
      }
    });
  }
  return out;
}

// Sum over one axis; that axis is removed from the shape.
inline Tensor sum_axis(Tape* tape, const Tensor& x, int axis) {
  int64_t nd = x.ndim();
  CSWM_CHECK(axis >= 0 && axis < nd, "sum_axis: axis ", axis, " out of range for rank ", nd);
  const Shape& s = x.shape();
  Shape out_shape;
  for (int64_t d = 0; d < nd; ++d)
    if (d != axis) out_shape.push_back(s[d]);
  int64_t outer = 1, inner = 1, len = s[axis];
  for (int64_t d = 0; d < axis; ++d) outer *= s[d];
  for (int64_t d = axis + 1; d < nd; ++d) inner *= s[d];

  Tensor out = Tensor::zeros(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    const float* base = x.data() + o * len * inner;
    float* dst = out.data() + o * inner;
    if (inner == 1) {
      double acc = 0.0;
      for (int64_t a = 0; a < len; ++a) acc += base[a];
      dst[0] = static_cast<float>(acc);
    } else {
      for (int64_t a = 0; a < len; ++a) {
        const float* src = base + a * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  }
  detail::finite_guard(out, "sum_axis");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, outer, inner, len]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      for (int64_t o = 0; o < outer; ++o) {
        const float* src = g + o * inner;
        float* base = gx + o * len * inner;
        for (int64_t a = 0; a < len; ++a) {
          float* dst = base + a * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

inline Tensor mean_all(Tape* tape, const Tensor& x) {
  int64_t n = x.numel();
  CSWM_CHECK(n > 0, "mean_all: empty tensor");
  double acc = 0.0;
  const float* px = x.data();
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  detail::finite_guard(out, "mean_all");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, n]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float s = g[0] / static_cast<float>(n);
      float* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += s;
    });
  }
  return out;
}

// Scalar sum of squared differences over all elements.
inline Tensor squared_distance(Tape* tape, const Tensor& a, const Tensor& b) {
  CSWM_CHECK(a.shape() == b.shape(), "squared_distance: shape mismatch ",
             shape_str(a.shape()), " vs ", shape_str(b.shape()));
  int64_t n = a.numel();
  double acc = 0.0;
  const float* pa = a.data();
  const float* pb = b.data();
  for (int64_t i = 0; i < n; ++i) {
    double d = static_cast<double>(pa[i]) - pb[i];
    acc += d * d;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  detail::finite_guard(out, "squared_distance");
  if (detail::wants_tape(tape, {&a, &b})) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float s = 2.0f * g[0];
      const float* pa = a.data();
      const float* pb = b.data();
      if (a.requires_grad()) {
        float* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += s * (pa[i] - pb[i]);
      }
      if (b.requires_grad()) {
        float* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] -= s * (pa[i] - pb[i]);
      }
    });
  }
  return out;
}

// out[r] = x[idx[r]] for 2-d x; indices may repeat.
inline Tensor gather_rows(Tape* tape, const Tensor& x, std::vector<int64_t> idx) {
  CSWM_CHECK(x.ndim() == 2, "gather_rows: input must be 2-d");
  int64_t M = x.dim(0), F = x.dim(1), R = static_cast<int64_t>(idx.size());
  for (int64_t r : idx) CSWM_CHECK(r >= 0 && r < M, "gather_rows: index ", r, " out of range");
  Tensor out = Tensor::zeros({R, F});
  for (int64_t r = 0; r < R; ++r)
    std::memcpy(out.data() + r * F, x.data() + idx[r] * F,
                sizeof(float) * static_cast<size_t>(F));
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, idx = std::move(idx), R, F]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      for (int64_t r = 0; r < R; ++r) {
        float* dst = gx + idx[r] * F;
        const float* src = g + r * F;
        for (int64_t j = 0; j < F; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// out has out_rows rows; out[idx[r]] += x[r]. Used for segment sums.
inline Tensor scatter_sum_rows(Tape* tape, const Tensor& x, std::vector<int64_t> idx,
                               int64_t out_rows) {
  CSWM_CHECK(x.ndim() == 2, "scatter_sum_rows: input must be 2-d");
  int64_t R = x.dim(0), F = x.dim(1);
  CSWM_CHECK(static_cast<int64_t>(idx.size()) == R,
             "scatter_sum_rows: ", idx.size(), " indices for ", R, " rows");
  for (int64_t r : idx)
    CSWM_CHECK(r >= 0 && r < out_rows, "scatter_sum_rows: index ", r, " out of range");
  Tensor out = Tensor::zeros({out_rows, F});
  for (int64_t r = 0; r < R; ++r) {
    float* dst = out.data() + idx[r] * F;
    const float* src = x.data() + r * F;
    for (int64_t j = 0; j < F; ++j) dst[j] += src[j];
  }
  detail::finite_guard(out, "scatter_sum_rows");
  if (detail::wants_tape(tape, {&x})) {
    out.set_requires_grad(true);
    tape->record([x, out, idx = std::move(idx), R, F]() mutable {
      const float* g = detail::out_grad(out);
      if (!g) return;
      float* gx = x.grad();
      for (int64_t r = 0; r < R; ++r) {
        const float* src = g + idx[r] * F;
        float* dst = gx + r * F;
        for (int64_t j = 0; j < F; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

// Aliasing reshape; gradient flows through shared storage, no tape node needed.
inline Tensor reshape(const Tensor& x, Shape shape) { return x.view(std::move(shape)); }

}  // namespace cswm
