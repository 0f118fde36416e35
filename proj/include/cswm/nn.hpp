#pragma once

// Layer building blocks: weight init, parameter/buffer visiting, forward.
// Weights use fan-in uniform init, biases start at zero.

#include <functional>
#include <string>

#include "cswm/ops.hpp"

namespace cswm {

using TensorVisitor = std::function<void(const std::string&, Tensor&)>;

// Uniform in +-1/sqrt(fan_in). Keeps freshly initialized network outputs
// small, so the untrained contrastive loss starts near the hinge margin.
inline Tensor init_uniform_fan_in(Rng& rng, Shape shape, int64_t fan_in) {
  CSWM_CHECK(fan_in > 0, "init: fan_in must be positive");
  Tensor t = Tensor::zeros(std::move(shape), true);
  float limit = 1.0f / std::sqrt(static_cast<float>(fan_in));
  float* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform_range(-limit, limit);
  return t;
}

struct Linear {
  Tensor w, b;  // w is (in, out)

  static Linear create(Rng& rng, int64_t in, int64_t out) {
    Linear l;
    l.w = init_uniform_fan_in(rng, {in, out}, in);
    l.b = Tensor::zeros({out}, true);
    return l;
  }

  Tensor forward(Tape* tape, const Tensor& x) const { return affine(tape, x, w, b); }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

struct Conv2d {
  Tensor w, b;  // w is (out_ch, in_ch, k, k)
  int64_t stride = 1, pad = 0;

  static Conv2d create(Rng& rng, int64_t in_ch, int64_t out_ch, int64_t k,
                       int64_t stride, int64_t pad) {
    Conv2d c;
    c.w = init_uniform_fan_in(rng, {out_ch, in_ch, k, k}, in_ch * k * k);
    c.b = Tensor::zeros({out_ch}, true);
    c.stride = stride;
    c.pad = pad;
    return c;
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    return conv2d(tape, x, w, b, stride, pad);
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
  }
};

struct BatchNorm2d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  float momentum = 0.1f, eps = 1e-5f;

  static BatchNorm2d create(int64_t channels) {
    BatchNorm2d bn;
    bn.gamma = Tensor::full({channels}, 1.0f, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0f);
    return bn;
  }

  Tensor forward(Tape* tape, const Tensor& x, bool training) {
    return batchnorm2d(tape, x, gamma, beta, running_mean, running_var, training,
                       momentum, eps);
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
  void visit_buffers(const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".running_mean", running_mean);
    f(prefix + ".running_var", running_var);
  }
};

struct LayerNorm {
  Tensor gamma, beta;
  float eps = 1e-5f;

  static LayerNorm create(int64_t features) {
    LayerNorm ln;
    ln.gamma = Tensor::full({features}, 1.0f, true);
    ln.beta = Tensor::zeros({features}, true);
    return ln;
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    return layernorm(tape, x, gamma, beta, eps);
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

// Three-layer MLP with layer norm before the second activation:
// relu(W1 x) -> relu(LN(W2 h)) -> W3 h. Used for the object encoder and both
// transition MLPs.
struct Mlp3 {
  Linear l1, l2, l3;
  LayerNorm ln;

  static Mlp3 create(Rng& rng, int64_t in, int64_t hidden, int64_t out) {
    Mlp3 m;
    m.l1 = Linear::create(rng, in, hidden);
    m.l2 = Linear::create(rng, hidden, hidden);
    m.ln = LayerNorm::create(hidden);
    m.l3 = Linear::create(rng, hidden, out);
    return m;
  }

  Tensor forward(Tape* tape, const Tensor& x) const {
    Tensor h = relu(tape, l1.forward(tape, x));
    h = relu(tape, ln.forward(tape, l2.forward(tape, h)));
    return l3.forward(tape, h);
  }

  void visit_params(const std::string& prefix, const TensorVisitor& f) {
    l1.visit_params(prefix + ".l1", f);
    l2.visit_params(prefix + ".l2", f);
    ln.visit_params(prefix + ".ln", f);
    l3.visit_params(prefix + ".l3", f);
  }
};

}  // namespace cswm
