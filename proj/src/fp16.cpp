#include "agyolo/fp16.hpp"

#include <cmath>

namespace agyolo {

std::uint16_t to_half_bits(double x) {
  if (std::isnan(x)) return 0x7E00;
  const std::uint16_t sign = std::signbit(x) ? 0x8000 : 0;
  const double a = std::fabs(x);
  if (a >= kHalfMax) return sign | 0x7BFF;

  // Subnormal range: units of 2^-24. A result of 1024 is already the bit
  // pattern of the smallest normal.
  if (a < std::ldexp(1.0, -14)) return sign | static_cast<std::uint16_t>(std::nearbyint(std::ldexp(a, 24)));

  int e = 0;
  std::frexp(a, &e);
  --e;  // a = 1.f * 2^e
  // Both operations are exact in double; nearbyint rounds half to even.
  auto mant = static_cast<int>(std::nearbyint((std::ldexp(a, -e) - 1.0) * 1024.0));
  if (mant == 1024) {
    mant = 0;
    ++e;
  }
  if (e > 15) return sign | 0x7BFF;
  return sign | static_cast<std::uint16_t>(((e + 15) << 10) | mant);
}

double from_half_bits(std::uint16_t bits) {
  const int exp = (bits >> 10) & 0x1F;
  const int mant = bits & 0x3FF;
  double v;
  if (exp == 0)
    v = std::ldexp(mant, -24);
  else if (exp == 31)
    v = mant ? std::nan("") : INFINITY;
  else
    v = std::ldexp(1024 + mant, exp - 25);
  return (bits & 0x8000) ? -v : v;
}

}  // namespace agyolo
