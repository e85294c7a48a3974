#include "perprompt/tensor.hpp"

#include <cmath>

#include "perprompt/simd.hpp"

namespace perprompt {

double l2_norm(std::span<const double> v) { return std::sqrt(simd::dot(v, v)); }

}  // namespace perprompt
