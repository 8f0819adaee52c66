#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace h2scope::analyzer::kernels {

struct DotNorms {
  double dot = 0;  // sum u[i]*v[i]
  double uu = 0;   // sum u[i]*u[i]
  double vv = 0;   // sum v[i]*v[i]
};

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa) noexcept;

// Reference implementation.
DotNorms dot_norms_scalar(const double* u, const double* v, std::size_t n) noexcept;
// Requires AVX2 at runtime; check avx2_supported() first.
DotNorms dot_norms_avx2(const double* u, const double* v, std::size_t n) noexcept;

bool avx2_supported() noexcept;

// Picks the widest kernel the CPU supports unless forced.
DotNorms dot_norms(const double* u, const double* v, std::size_t n) noexcept;
Isa active_isa() noexcept;
// nullopt restores automatic selection. Forcing Avx2 on a CPU without it
// falls back to Scalar.
void force_isa(std::optional<Isa> isa) noexcept;

}  // namespace h2scope::analyzer::kernels
