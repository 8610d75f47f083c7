#include "tci/pairing.hpp"

#include <numeric>
#include <optional>
#include <tuple>

namespace tci {

PairMatch match_pairs(std::span<const Picoseconds> pos, std::span<const Picoseconds> neg, int bus,
                      Picoseconds window) {
  PairMatch out;
  const std::size_t np = pos.size();
  const std::size_t nn = neg.size();
  std::vector<std::uint8_t> pos_used(np, 0);
  std::vector<std::uint8_t> neg_used(nn, 0);

  // Group cursors walk every tag; partner cursors point at the first unused
  // tag of each polarity not earlier than the current group time.
  std::size_t gp = 0, gn = 0, cp = 0, cn = 0;
  while (gp < np || gn < nn) {
    const Picoseconds t = gp < np && (gn >= nn || pos[gp] <= neg[gn]) ? pos[gp] : neg[gn];
    std::size_t gp_end = gp, gn_end = gn;
    while (gp_end < np && pos[gp_end] == t) ++gp_end;
    while (gn_end < nn && neg[gn_end] == t) ++gn_end;

    while (true) {
      while (cp < np && (pos[cp] < t || pos_used[cp])) ++cp;
      while (cn < nn && (neg[cn] < t || neg_used[cn])) ++cn;
      std::size_t first_p = gp;
      while (first_p < gp_end && pos_used[first_p]) ++first_p;
      std::size_t first_n = gn;
      while (first_n < gn_end && neg_used[first_n]) ++first_n;

      // Best candidate led by a positive at t, and by a negative at t.
      std::optional<std::tuple<Picoseconds, std::size_t, std::size_t>> best;
      if (first_p < gp_end && cn < nn && neg[cn] - t <= window) best = std::tuple{neg[cn] - t, first_p, cn};
      if (first_n < gn_end && cp < np && pos[cp] - t <= window) {
        std::tuple cand{pos[cp] - t, cp, first_n};
        if (!best || cand < *best) best = cand;
      }
      if (!best) break;
      const auto [diff, p, n] = *best;
      pos_used[p] = 1;
      neg_used[n] = 1;
      out.pairs.push_back({bus, pos[p], neg[n], static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(n)});
    }
    gp = gp_end;
    gn = gn_end;
  }
  out.orphan_pos = np - out.pairs.size();
  out.orphan_neg = nn - out.pairs.size();
  return out;
}

PairMatch match_pairs(const TagStream& stream, int bus, Picoseconds window) {
  return match_pairs(stream.channel(channel_of(bus, 0)), stream.channel(channel_of(bus, 1)), bus, window);
}

std::vector<BusPair> merge_pairs(std::span<const std::vector<BusPair>> per_bus) {
  std::vector<BusPair> out;
  for (const auto& v : per_bus) out.insert(out.end(), v.begin(), v.end());
  std::stable_sort(out.begin(), out.end(), [](const BusPair& a, const BusPair& b) {
    return std::tuple(a.earliest(), a.bus) < std::tuple(b.earliest(), b.bus);
  });
  return out;
}

std::array<TimeTag, 4> FourFoldEvent::tags() const {
  return {TimeTag{static_cast<std::uint8_t>(channel_of(col_pair.bus, 0)), col_pair.t_pos},
          TimeTag{static_cast<std::uint8_t>(channel_of(col_pair.bus, 1)), col_pair.t_neg},
          TimeTag{static_cast<std::uint8_t>(channel_of(row_pair.bus, 0)), row_pair.t_pos},
          TimeTag{static_cast<std::uint8_t>(channel_of(row_pair.bus, 1)), row_pair.t_neg}};
}

FourFoldMatch match_fourfold(std::span<const BusPair> row_pairs, std::span<const BusPair> col_pairs,
                             const ArrayModel& array, Picoseconds window) {
  struct Item {
    Picoseconds earliest;
    Picoseconds latest;
    Picoseconds t0;
  };
  auto items_of = [&](std::span<const BusPair> pairs) {
    std::vector<Item> items(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const BusPair& p = pairs[i];
      items[i] = {p.earliest(), p.latest(), recover_t0(p.t_pos, p.t_neg, array.tau_b(p.bus))};
    }
    return items;
  };
  const auto rows = items_of(row_pairs);
  const auto cols = items_of(col_pairs);
  auto order_of = [](const std::vector<Item>& items) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return items[a].earliest < items[b].earliest; });
    return order;
  };
  const auto row_order = order_of(rows);
  const auto col_order = order_of(cols);
  std::vector<std::uint8_t> row_used(rows.size(), 0), col_used(cols.size(), 0);

  // Items of `other` whose earliest tag lies in [t, t + window], in sorted order.
  auto range_of = [&](const std::vector<Item>& other, const std::vector<std::size_t>& order, Picoseconds t) {
    auto lo = std::lower_bound(order.begin(), order.end(), t,
                               [&](std::size_t i, Picoseconds v) { return other[i].earliest < v; });
    auto hi = std::upper_bound(lo, order.end(), t + window,
                               [&](Picoseconds v, std::size_t i) { return v < other[i].earliest; });
    return std::pair{lo, hi};
  };

  FourFoldMatch out;
  std::vector<std::pair<std::size_t, std::size_t>> accepted;
  std::size_t gr = 0, gc = 0;
  while (gr < row_order.size() || gc < col_order.size()) {
    const bool take_row = gr < row_order.size() &&
                          (gc >= col_order.size() || rows[row_order[gr]].earliest <= cols[col_order[gc]].earliest);
    const Picoseconds t = take_row ? rows[row_order[gr]].earliest : cols[col_order[gc]].earliest;
    std::size_t gr_end = gr, gc_end = gc;
    while (gr_end < row_order.size() && rows[row_order[gr_end]].earliest == t) ++gr_end;
    while (gc_end < col_order.size() && cols[col_order[gc_end]].earliest == t) ++gc_end;

    while (true) {
      std::optional<std::tuple<Picoseconds, std::size_t, std::size_t>> best;
      auto consider = [&](std::size_t r, std::size_t c) {
        if (row_used[r] || col_used[c]) return;
        if (std::max(rows[r].latest, cols[c].latest) - t > window) return;
        std::tuple cand{std::abs(rows[r].t0 - cols[c].t0), r, c};
        if (!best || cand < *best) best = cand;
      };
      for (std::size_t g = gr; g < gr_end; ++g) {
        const std::size_t r = row_order[g];
        if (row_used[r]) continue;
        auto [lo, hi] = range_of(cols, col_order, t);
        for (auto it = lo; it != hi; ++it) consider(r, *it);
      }
      for (std::size_t g = gc; g < gc_end; ++g) {
        const std::size_t c = col_order[g];
        if (col_used[c]) continue;
        auto [lo, hi] = range_of(rows, row_order, t);
        for (auto it = lo; it != hi; ++it) consider(*it, c);
      }
      if (!best) break;
      const auto [d, r, c] = *best;
      row_used[r] = 1;
      col_used[c] = 1;
      accepted.emplace_back(r, c);
    }
    gr = gr_end;
    gc = gc_end;
  }

  out.events.reserve(accepted.size());
  for (const auto& [r, c] : accepted) {
    FourFoldEvent ev;
    ev.row_pair = row_pairs[r];
    ev.col_pair = col_pairs[c];
    ev.dt_row = ev.row_pair.dt();
    ev.dt_col = ev.col_pair.dt();
    ev.t0_row = rows[r].t0;
    ev.t0_col = cols[c].t0;
    out.events.push_back(ev);
  }
  std::stable_sort(out.events.begin(), out.events.end(),
                   [](const FourFoldEvent& a, const FourFoldEvent& b) { return a.t0() < b.t0(); });
  out.unmatched_row = rows.size() - accepted.size();
  out.unmatched_col = cols.size() - accepted.size();
  return out;
}

}  // namespace tci
