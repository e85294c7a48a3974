#pragma once

// Double-precision vector kernels used by every arithmetic inner loop
// (dense layers, cosine similarity, BERTScore similarity matrices).
//
// Each kernel has a scalar reference implementation and vectorized variants.
// The variant is chosen once at startup from the CPU's capabilities; setting
// PERPROMPT_SIMD=scalar in the environment forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace perprompt::simd {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

// The variant currently used by dot() and axpy().
Isa active_isa();

// Switches the active variant. Throws std::invalid_argument when the CPU
// lacks the instructions. Not thread-safe; intended for tests and tools.
void set_active_isa(Isa isa);

// sum_i a[i] * b[i]
double dot(std::span<const double> a, std::span<const double> b);

// y[i] += alpha * x[i]
void axpy(double alpha, std::span<const double> x, std::span<double> y);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace perprompt::simd
