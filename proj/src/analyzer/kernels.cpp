#include "h2scope/analyzer/kernels.hpp"

#include <atomic>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#define H2SCOPE_X86 1
#endif

namespace h2scope::analyzer::kernels {

std::string_view to_string(Isa isa) noexcept { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

DotNorms dot_norms_scalar(const double* u, const double* v, std::size_t n) noexcept {
  // Four independent accumulators, same lane layout as the AVX2 kernel.
  double d[4] = {0, 0, 0, 0};
  double a[4] = {0, 0, 0, 0};
  double b[4] = {0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    for (int k = 0; k < 4; ++k) {
      d[k] += u[i + k] * v[i + k];
      a[k] += u[i + k] * u[i + k];
      b[k] += v[i + k] * v[i + k];
    }
  }
  DotNorms r;
  r.dot = (d[0] + d[2]) + (d[1] + d[3]);
  r.uu = (a[0] + a[2]) + (a[1] + a[3]);
  r.vv = (b[0] + b[2]) + (b[1] + b[3]);
  for (; i < n; ++i) {
    r.dot += u[i] * v[i];
    r.uu += u[i] * u[i];
    r.vv += v[i] * v[i];
  }
  return r;
}

#ifdef H2SCOPE_X86

namespace {

__attribute__((target("avx2"))) inline double hsum(__m256d x) {
  __m128d lo = _mm256_castpd256_pd128(x);
  __m128d hi = _mm256_extractf128_pd(x, 1);
  __m128d s = _mm_add_pd(lo, hi);  // (x0+x2, x1+x3)
  return _mm_cvtsd_f64(s) + _mm_cvtsd_f64(_mm_unpackhi_pd(s, s));
}

}  // namespace

__attribute__((target("avx2"))) DotNorms dot_norms_avx2(const double* u, const double* v, std::size_t n) noexcept {
  __m256d d = _mm256_setzero_pd();
  __m256d a = _mm256_setzero_pd();
  __m256d b = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d x = _mm256_loadu_pd(u + i);
    __m256d y = _mm256_loadu_pd(v + i);
    // Separate multiply and add (no FMA) so rounding matches the scalar kernel.
    d = _mm256_add_pd(d, _mm256_mul_pd(x, y));
    a = _mm256_add_pd(a, _mm256_mul_pd(x, x));
    b = _mm256_add_pd(b, _mm256_mul_pd(y, y));
  }
  DotNorms r;
  r.dot = hsum(d);
  r.uu = hsum(a);
  r.vv = hsum(b);
  for (; i < n; ++i) {
    r.dot += u[i] * v[i];
    r.uu += u[i] * u[i];
    r.vv += v[i] * v[i];
  }
  return r;
}

bool avx2_supported() noexcept {
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2");
}

#else

DotNorms dot_norms_avx2(const double* u, const double* v, std::size_t n) noexcept {
  return dot_norms_scalar(u, v, n);
}

bool avx2_supported() noexcept { return false; }

#endif

namespace {

// -1 automatic, otherwise a forced Isa value.
std::atomic<int> g_forced{-1};

Isa detected() noexcept {
  static const Isa isa = avx2_supported() ? Isa::Avx2 : Isa::Scalar;
  return isa;
}

}  // namespace

Isa active_isa() noexcept {
  int f = g_forced.load(std::memory_order_relaxed);
  if (f < 0) return detected();
  Isa want = static_cast<Isa>(f);
  return want == Isa::Avx2 && !avx2_supported() ? Isa::Scalar : want;
}

void force_isa(std::optional<Isa> isa) noexcept {
  g_forced.store(isa ? static_cast<int>(*isa) : -1, std::memory_order_relaxed);
}

DotNorms dot_norms(const double* u, const double* v, std::size_t n) noexcept {
  return active_isa() == Isa::Avx2 ? dot_norms_avx2(u, v, n) : dot_norms_scalar(u, v, n);
}

}  // namespace h2scope::analyzer::kernels
