#pragma once

// Shared helpers for the unit tests: random tensors, deterministic loss
// weights, and the float-vs-double weighted-loss harness used by the
// finite-difference gradient checks.

#include <vector>

#include "cswm/ops.hpp"
#include "support/ref.hpp"

namespace testutil {

inline cswm::Tensor rand_tensor(cswm::Rng& rng, cswm::Shape shape, float lo = -1.0f,
                                float hi = 1.0f, bool requires_grad = true) {
  cswm::Tensor t = cswm::Tensor::zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform_range(lo, hi);
  return t;
}

// Fixed, non-uniform weights so gradient errors cannot cancel by symmetry.
inline std::vector<double> loss_weights(int64_t n) {
  std::vector<double> w(n);
  for (int64_t i = 0; i < n; ++i) w[i] = std::sin(0.7 * static_cast<double>(i) + 0.3) + 0.1;
  return w;
}

// loss = sum_i w_i * out_i / numel, float path through the tape.
inline cswm::Tensor weighted_loss(cswm::Tape* tape, const cswm::Tensor& out) {
  auto w = loss_weights(out.numel());
  cswm::Tensor wt = cswm::Tensor::zeros(out.shape());
  for (int64_t i = 0; i < out.numel(); ++i) wt.data()[i] = static_cast<float>(w[i]);
  return cswm::mean_all(tape, cswm::mul(tape, out.view({out.numel()}), wt.view({out.numel()})));
}

inline double ref_weighted(const ref::Vec& out) {
  auto w = loss_weights(static_cast<int64_t>(out.size()));
  double s = 0.0;
  for (size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
  return s / static_cast<double>(out.size());
}

}  // namespace testutil
