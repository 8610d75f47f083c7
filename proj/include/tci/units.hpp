#pragma once

#include <cmath>
#include <cstdint>

namespace tci {

/// All timestamps and delays are integer picoseconds.
using Picoseconds = std::int64_t;

inline constexpr Picoseconds kPsPerSecond = 1'000'000'000'000;

inline constexpr double seconds_from_ps(Picoseconds t) {
  return static_cast<double>(t) / static_cast<double>(kPsPerSecond);
}

inline Picoseconds ps_from_seconds(double s) {
  return static_cast<Picoseconds>(std::llround(s * static_cast<double>(kPsPerSecond)));
}

/// (a / 2) rounded half to even. Valid for negative a.
inline constexpr Picoseconds halve_round_even(Picoseconds a) {
  Picoseconds q = a / 2;
  Picoseconds r = a % 2;
  if (r == 0) return q;
  // a = 2q + r with r = +-1 (C++ truncates toward zero); true value is q + r/2.
  Picoseconds lo = r > 0 ? q : q - 1;
  return (lo % 2 == 0) ? lo : lo + 1;
}

}  // namespace tci
