#pragma once

#include "siamssl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace siamssl {

/// Which pool size the selection percentage refers to.
enum class SelectionBasis { current, initial };

/// ceil(p% of basis), capped at the pool size.
inline std::size_t selection_count(double p_percent, std::size_t basis, std::size_t pool_size) {
  if (!(p_percent > 0.0 && p_percent <= 100.0)) throw ArgumentError("selection percentage must lie in (0, 100]");
  // The small offset keeps exact products such as 10% of 900 from rounding up.
  const double raw = p_percent * static_cast<double>(basis) / 100.0;
  const auto want = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(want, pool_size);
}

}  // namespace siamssl
