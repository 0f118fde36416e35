#pragma once

// Dense float32 tensor with row-major layout and shared storage. Views (via
// reshape) alias both data and gradient storage, so gradients written through
// a view land in the base tensor without extra bookkeeping.

#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cswm/common.hpp"

namespace cswm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    CSWM_CHECK(d >= 0, "shape dims must be non-negative");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

class Tensor {
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<float>> data;
    std::shared_ptr<std::vector<float>> grad;  // sized lazily, shared by views
    bool requires_grad = false;
  };

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    int64_t n = shape_numel(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::make_shared<std::vector<float>>(n, 0.0f);
    t.impl_->grad = std::make_shared<std::vector<float>>();
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data(), t.data() + t.numel(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false) {
    CSWM_CHECK(shape_numel(shape) == static_cast<int64_t>(values.size()),
               "from: shape ", shape_str(shape), " does not match ", values.size(), " values");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::make_shared<std::vector<float>>(std::move(values));
    t.impl_->grad = std::make_shared<std::vector<float>>();
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return from({}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const {
    CSWM_CHECK(defined(), "use of undefined tensor");
    return impl_->shape;
  }
  int64_t dim(int i) const {
    const Shape& s = shape();
    if (i < 0) i += static_cast<int>(s.size());
    CSWM_CHECK(i >= 0 && i < static_cast<int>(s.size()), "dim index out of range");
    return s[i];
  }
  int64_t ndim() const { return static_cast<int64_t>(shape().size()); }
  int64_t numel() const { return defined() ? static_cast<int64_t>(impl_->data->size()) : 0; }

  // Tensor is a shared handle; accessors are const like shared_ptr's. Ops
  // never write input data, but backward must write input grads through
  // captured handles.
  float* data() const { return impl_->data->data(); }

  bool requires_grad() const { return defined() && impl_->requires_grad; }
  void set_requires_grad(bool v) const {
    CSWM_CHECK(defined(), "set_requires_grad on undefined tensor");
    impl_->requires_grad = v;
  }

  bool has_grad() const { return defined() && !impl_->grad->empty(); }

  // Gradient buffer, allocated (zeroed) on first touch. Shared across views.
  float* grad() const {
    CSWM_CHECK(defined(), "grad on undefined tensor");
    if (impl_->grad->empty()) impl_->grad->resize(impl_->data->size(), 0.0f);
    return impl_->grad->data();
  }

  void zero_grad() const {
    if (has_grad()) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0f);
  }

  float item() const {
    CSWM_CHECK(numel() == 1, "item: tensor has ", numel(), " elements");
    return (*impl_->data)[0];
  }

  // Aliasing view with a new shape; element count must match.
  Tensor view(Shape shape) const {
    CSWM_CHECK(defined(), "view of undefined tensor");
    CSWM_CHECK(shape_numel(shape) == numel(), "view: shape ", shape_str(shape),
               " incompatible with ", numel(), " elements");
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = impl_->data;
    t.impl_->grad = impl_->grad;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

  // Deep copy of values; no gradient, no graph history.
  Tensor clone() const {
    CSWM_CHECK(defined(), "clone of undefined tensor");
    return from(impl_->shape, *impl_->data, impl_->requires_grad);
  }

  bool same_storage(const Tensor& other) const {
    return defined() && other.defined() && impl_->data == other.impl_->data;
  }

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace cswm
