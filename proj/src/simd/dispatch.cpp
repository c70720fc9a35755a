#include <atomic>
#include <cstdlib>
#include <cstring>

#include "tupr/common.hpp"
#include "tupr/simd/kernels.hpp"

namespace tupr::simd {

namespace {

Backend detect() noexcept {
  const char* env = std::getenv("TUPR_KERNELS");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Backend::Scalar;
  return avx2_available() ? Backend::Avx2 : Backend::Scalar;
}

std::atomic<Backend>& current() noexcept {
  static std::atomic<Backend> backend{detect()};
  return backend;
}

}  // namespace

bool avx2_available() noexcept {
#if TUPR_HAVE_AVX2_KERNELS
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() noexcept { return current().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (backend == Backend::Avx2 && !avx2_available())
    throw UsageError("AVX2 kernels requested but not supported on this CPU");
  current().store(backend, std::memory_order_relaxed);
}

const char* backend_name(Backend backend) noexcept {
  return backend == Backend::Avx2 ? "avx2" : "scalar";
}

void gemm(ConstMatrixView a, ConstMatrixView b, MatrixView c, bool accumulate) {
#if TUPR_HAVE_AVX2_KERNELS
  if (active_backend() == Backend::Avx2) return avx2::gemm(a, b, c, accumulate);
#endif
  scalar::gemm(a, b, c, accumulate);
}

void point_ranges(std::span<const Point> points, std::span<float> out) {
#if TUPR_HAVE_AVX2_KERNELS
  if (active_backend() == Backend::Avx2) return avx2::point_ranges(points, out);
#endif
  scalar::point_ranges(points, out);
}

}  // namespace tupr::simd
