#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tci/array_model.hpp"
#include "tci/tagstream.hpp"
#include "tci/units.hpp"

namespace tci {

inline constexpr Picoseconds kDefaultWindowPs = 100'000;

/// Positive and negative pulse from one bus attributed to the same event.
struct BusPair {
  int bus = 0;
  Picoseconds t_pos = 0;
  Picoseconds t_neg = 0;
  /// Positions of the two tags within their channel timelines.
  std::uint32_t pos_index = 0;
  std::uint32_t neg_index = 0;

  Picoseconds dt() const { return t_pos - t_neg; }
  Picoseconds earliest() const { return std::min(t_pos, t_neg); }
  Picoseconds latest() const { return std::max(t_pos, t_neg); }
  bool operator==(const BusPair&) const = default;
};

struct PairMatch {
  std::vector<BusPair> pairs;  // sorted by earliest tag
  std::uint64_t orphan_pos = 0;
  std::uint64_t orphan_neg = 0;
};

/// Greedy chronological pairing of one bus's two ends.
///
/// Among all (positive, negative) candidates with |t_pos - t_neg| <= window,
/// pairs are accepted in order of (earlier tag time, |t_pos - t_neg|,
/// positive index, negative index), skipping any that reuse a tag.
/// Runs in one forward sweep.
PairMatch match_pairs(std::span<const Picoseconds> pos, std::span<const Picoseconds> neg, int bus,
                      Picoseconds window = kDefaultWindowPs);
PairMatch match_pairs(const TagStream& stream, int bus, Picoseconds window = kDefaultWindowPs);

/// Merges per-bus pair lists of one axis by (earliest tag, bus).
std::vector<BusPair> merge_pairs(std::span<const std::vector<BusPair>> per_bus);

/// t0 = (t1 + t2 - tau_b) / 2, rounded half to even.
inline Picoseconds recover_t0(Picoseconds t1, Picoseconds t2, Picoseconds tau_b) {
  return halve_round_even(t1 + t2 - tau_b);
}

struct FourFoldEvent {
  Picoseconds dt_col = 0;  // t1 - t2 on the column bus
  Picoseconds dt_row = 0;  // t3 - t4 on the row bus
  Picoseconds t0_col = 0;
  Picoseconds t0_row = 0;
  BusPair col_pair;
  BusPair row_pair;

  /// t1, t2 (column bus) then t3, t4 (row bus).
  std::array<TimeTag, 4> tags() const;
  Picoseconds t0() const { return halve_round_even(t0_col + t0_row); }
  bool operator==(const FourFoldEvent&) const = default;
};

struct FourFoldMatch {
  std::vector<FourFoldEvent> events;  // sorted by t0
  std::uint64_t unmatched_row = 0;
  std::uint64_t unmatched_col = 0;
};

/// Greedy chronological four-fold matching.
///
/// A (row pair, column pair) candidate is feasible when all four tag times
/// lie within `window` of each other. Candidates are accepted in order of
/// (earliest of the four tags, |t0_row - t0_col|, row index, column index),
/// each pair used at most once. Indices refer to positions in the input spans.
FourFoldMatch match_fourfold(std::span<const BusPair> row_pairs, std::span<const BusPair> col_pairs,
                             const ArrayModel& array, Picoseconds window = kDefaultWindowPs);

}  // namespace tci
