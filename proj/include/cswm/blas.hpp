#pragma once

// Single-precision GEMM backend. Uses OpenBLAS through dlopen when present,
// with a blocked fallback kernel otherwise. OpenBLAS must see its environment
// before the library constructor runs, which is why it is loaded lazily here
// instead of being linked: on generic hypervisor CPUID strings it misdetects
// the core (Prescott) and runs an order of magnitude slow, so the core type
// is pinned from cpuid feature bits before the handle is opened.

#include <dlfcn.h>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <vector>

#include "cswm/common.hpp"

namespace cswm {

namespace detail {

using SgemmFn = void (*)(int order, int transa, int transb, int m, int n, int k,
                         float alpha, const float* a, int lda, const float* b,
                         int ldb, float beta, float* c, int ldc);
using SetThreadsFn = void (*)(int);

enum { kCblasRowMajor = 101, kCblasNoTrans = 111, kCblasTrans = 112 };

inline const char* preferred_core_type() {
#if defined(__x86_64__)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f")) return "SKYLAKEX";
  if (__builtin_cpu_supports("avx2")) return "HASWELL";
  if (__builtin_cpu_supports("sse4.2")) return "NEHALEM";
#endif
  return nullptr;
}

struct BlasBackend {
  SgemmFn sgemm = nullptr;

  BlasBackend() {
    if (const char* env = std::getenv("CSWM_NO_OPENBLAS"); env && env[0] == '1') return;
    if (!std::getenv("OPENBLAS_CORETYPE")) {
      if (const char* core = preferred_core_type()) setenv("OPENBLAS_CORETYPE", core, 0);
    }
    char threads[16];
    std::snprintf(threads, sizeof threads, "%d", num_threads());
    setenv("OPENBLAS_NUM_THREADS", threads, 0);
    void* handle = dlopen("libopenblas.so.0", RTLD_NOW | RTLD_LOCAL);
    if (!handle) handle = dlopen("libopenblas.so", RTLD_NOW | RTLD_LOCAL);
    if (!handle) return;
    sgemm = reinterpret_cast<SgemmFn>(dlsym(handle, "cblas_sgemm"));
    if (auto set = reinterpret_cast<SetThreadsFn>(dlsym(handle, "openblas_set_num_threads")))
      set(num_threads());
  }
};

inline const BlasBackend& blas_backend() {
  static BlasBackend backend;
  return backend;
}

// Fallback: C (m x n) += A op x B op, row major, packed k-panel kernel.
// Vectorizes over n with -O3; an order of magnitude slower than OpenBLAS but
// correct and dependency-free.
inline void fallback_sgemm(bool trans_a, bool trans_b, int64_t m, int64_t n,
                           int64_t k, float alpha, const float* a, int64_t lda,
                           const float* b, int64_t ldb, float beta, float* c,
                           int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (beta == 0.0f)
      std::memset(crow, 0, sizeof(float) * static_cast<size_t>(n));
    else if (beta != 1.0f)
      for (int64_t j = 0; j < n; ++j) crow[j] *= beta;
  }
  constexpr int64_t kc = 256;
  for (int64_t k0 = 0; k0 < k; k0 += kc) {
    int64_t kb = std::min(kc, k - k0);
    for (int64_t i = 0; i < m; ++i) {
      float* crow = c + i * ldc;
      for (int64_t kk = k0; kk < k0 + kb; ++kk) {
        float av = trans_a ? a[kk * lda + i] : a[i * lda + kk];
        float s = alpha * av;
        if (s == 0.0f) continue;
        const float* brow = trans_b ? nullptr : b + kk * ldb;
        if (brow) {
          for (int64_t j = 0; j < n; ++j) crow[j] += s * brow[j];
        } else {
          for (int64_t j = 0; j < n; ++j) crow[j] += s * b[j * ldb + kk];
        }
      }
    }
  }
}

}  // namespace detail

// Row-major sgemm: C = alpha * op(A) * op(B) + beta * C.
// op(A) is m x k, op(B) is k x n, C is m x n.
inline void sgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
                  float alpha, const float* a, int64_t lda, const float* b,
                  int64_t ldb, float beta, float* c, int64_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (int64_t i = 0; i < m; ++i) {
      float* crow = c + i * ldc;
      if (beta == 0.0f)
        std::memset(crow, 0, sizeof(float) * static_cast<size_t>(n));
      else if (beta != 1.0f)
        for (int64_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    return;
  }
  const auto& backend = detail::blas_backend();
  if (backend.sgemm) {
    backend.sgemm(detail::kCblasRowMajor,
                  trans_a ? detail::kCblasTrans : detail::kCblasNoTrans,
                  trans_b ? detail::kCblasTrans : detail::kCblasNoTrans,
                  static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
                  alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                  beta, c, static_cast<int>(ldc));
    return;
  }
  detail::fallback_sgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace cswm
