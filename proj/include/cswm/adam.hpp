#pragma once

// Adam with bias correction: m, v moments per parameter, update
// p -= lr * m_hat / (sqrt(v_hat) + eps).

#include <cmath>
#include <vector>

#include "cswm/common.hpp"
#include "cswm/tensor.hpp"

namespace cswm {

struct AdamHyper {
  float lr = 5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<float> m, v;
  int64_t step = 0;
};

inline void adam_step(float* param, const float* grad, int64_t n, AdamState& st,
                      const AdamHyper& hp) {
  if (st.m.empty()) {
    st.m.assign(static_cast<size_t>(n), 0.0f);
    st.v.assign(static_cast<size_t>(n), 0.0f);
  }
  CSWM_CHECK(static_cast<int64_t>(st.m.size()) == n, "adam_step: state size mismatch");
  st.step += 1;
  float bc1 = 1.0f - std::pow(hp.beta1, static_cast<float>(st.step));
  float bc2 = 1.0f - std::pow(hp.beta2, static_cast<float>(st.step));
  for (int64_t i = 0; i < n; ++i) {
    float g = grad[i];
    if (!is_finite(g)) throw NumericError("non-finite gradient in adam_step");
    st.m[i] = hp.beta1 * st.m[i] + (1.0f - hp.beta1) * g;
    st.v[i] = hp.beta2 * st.v[i] + (1.0f - hp.beta2) * g * g;
    float m_hat = st.m[i] / bc1;
    float v_hat = st.v[i] / bc2;
    param[i] -= hp.lr * m_hat / (std::sqrt(v_hat) + hp.eps);
  }
}

// Optimizer over a fixed parameter list. Steps in registration order, which
// combined with the deterministic tape makes whole runs bit-reproducible.
class Adam {
 public:
  explicit Adam(AdamHyper hp = {}) : hp_(hp) {}

  void add_param(const Tensor& p) {
    CSWM_CHECK(p.requires_grad(), "Adam: parameter does not require grad");
    params_.push_back(p);
    states_.emplace_back();
  }

  const AdamHyper& hyper() const { return hp_; }
  size_t size() const { return params_.size(); }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) continue;  // no gradient reached this parameter
      adam_step(p.data(), p.grad(), p.numel(), states_[i], hp_);
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

 private:
  AdamHyper hp_;
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
};

}  // namespace cswm
