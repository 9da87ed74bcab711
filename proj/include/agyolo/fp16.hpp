#pragma once

#include <cstdint>

namespace agyolo {

inline constexpr double kHalfMax = 65504.0;

// IEEE binary16 with round-to-nearest-even and subnormals. Magnitudes beyond
// the largest finite half (including infinities) saturate to +-65504; NaN maps
// to the canonical quiet NaN.
std::uint16_t to_half_bits(double x);
double from_half_bits(std::uint16_t bits);

inline double fp16_quantize(double x) { return from_half_bits(to_half_bits(x)); }

}  // namespace agyolo
