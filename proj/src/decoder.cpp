#include "tci/decoder.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>

#include "tci/errors.hpp"
#include "tci/parallel.hpp"

namespace tci {

namespace {

struct AxisLookup {
  const Peak* peak = nullptr;
  double residual = 0.0;
  std::optional<UnassignedReason> failure;
};

AxisLookup look_up(const Calibration& cal, int bus, Picoseconds dt, double halfwidth) {
  const auto m = cal.nearest(bus, static_cast<double>(dt));
  AxisLookup out{m.peak, m.residual_ps, std::nullopt};
  if (!m.peak)
    out.failure = UnassignedReason::NoPeak;
  else if (std::abs(m.residual_ps) > halfwidth)
    out.failure = UnassignedReason::OutOfRange;
  else if (m.peak->status == PeakStatus::Pruned)
    out.failure = UnassignedReason::Pruned;
  return out;
}

int severity(UnassignedReason r) {
  switch (r) {
    case UnassignedReason::Pruned: return 0;
    case UnassignedReason::NoPeak: return 1;
    case UnassignedReason::OutOfRange: return 2;
  }
  return 3;
}

}  // namespace

const char* reason_name(UnassignedReason r) {
  switch (r) {
    case UnassignedReason::NoPeak: return "no_peak";
    case UnassignedReason::Pruned: return "pruned";
    case UnassignedReason::OutOfRange: return "out_of_range";
  }
  return "?";
}

Assignment assign_pixel(const FourFoldEvent& event, const Calibration& cal, double halfwidth_ps) {
  const auto row = look_up(cal, event.row_pair.bus, event.dt_row, halfwidth_ps);
  const auto col = look_up(cal, event.col_pair.bus, event.dt_col, halfwidth_ps);
  if (row.failure && col.failure)
    return severity(*row.failure) <= severity(*col.failure) ? *row.failure : *col.failure;
  if (row.failure) return *row.failure;
  if (col.failure) return *col.failure;
  return PixelHit{row.peak->detector, col.peak->detector, event.t0(), event.dt_row, event.dt_col,
                  row.residual, col.residual};
}

std::uint64_t ImageHistogram::total() const {
  std::uint64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

ImageHistogram accumulate_image(std::span<const PixelHit> hits, int rows, int cols, double exposure_s) {
  ImageHistogram img{rows, cols, std::vector<std::uint64_t>(static_cast<std::size_t>(rows) * cols, 0), exposure_s};
  for (const auto& h : hits) {
    if (h.row < 0 || h.row >= rows || h.col < 0 || h.col >= cols)
      throw GeometryError(fmt::format("hit at row {}, col {} lies outside a {}x{} image", h.row, h.col, rows, cols));
    ++img.counts[static_cast<std::size_t>(h.row) * cols + h.col];
  }
  return img;
}

void write_pgm(const ImageHistogram& image, std::ostream& out) {
  const std::uint64_t peak = image.counts.empty() ? 0 : *std::max_element(image.counts.begin(), image.counts.end());
  out << "P5\n" << image.cols << ' ' << image.rows << "\n255\n";
  std::string pixels(image.counts.size(), '\0');
  if (peak > 0)
    for (std::size_t i = 0; i < pixels.size(); ++i)
      pixels[i] = static_cast<char>((image.counts[i] * 255 + peak / 2) / peak);
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw IoError("image write failed");
}

void write_image_csv(const ImageHistogram& image, std::ostream& out) {
  for (int r = 0; r < image.rows; ++r) {
    std::string line;
    for (int c = 0; c < image.cols; ++c) {
      if (c) line += ',';
      line += std::to_string(image.at(r, c));
    }
    out << line << '\n';
  }
  if (!out) throw IoError("image write failed");
}

void write_hits_csv(std::span<const PixelHit> hits, std::ostream& out) {
  out << "t0_ps,row,col,dt_row_ps,dt_col_ps,res_row_ps,res_col_ps\n";
  for (const auto& h : hits)
    out << fmt::format("{},{},{},{},{},{:.1f},{:.1f}\n", h.t0, h.row, h.col, h.dt_row, h.dt_col, h.res_row_ps,
                       h.res_col_ps);
  if (!out) throw IoError("hits write failed");
}

double DecodeResult::assignment_rate() const {
  return events.empty() ? 0.0 : static_cast<double>(hits.size()) / static_cast<double>(events.size());
}

DecodeResult decode(const TagStream& stream, const ArrayModel& array, const Calibration& cal,
                    const DecodeOptions& options) {
  const Digest& stream_digest = stream.header().array_digest;
  if (!is_zero(stream_digest) && stream_digest != array.digest())
    throw FormatError(fmt::format("tag stream was recorded for array {}, not {}", to_hex(stream_digest),
                                  to_hex(array.digest())));
  const Digest& cal_digest = cal.provenance().array_digest;
  if (!is_zero(cal_digest) && cal_digest != array.digest())
    throw CalibrationError(fmt::format("calibration was made for array {}, not {}", to_hex(cal_digest),
                                       to_hex(array.digest())));
  for (const auto& info : array.buses())
    if (!cal.bus(info.bus_id)) throw CalibrationMissing(fmt::format("calibration has no table for bus {}", info.bus_id));

  DecodeResult out;
  for (int c = 0; c < kChannelCount; ++c) out.tags[static_cast<std::size_t>(c)] = stream.channel(c).size();

  const auto n_buses = static_cast<std::size_t>(array.n_buses());
  std::vector<PairMatch> per_bus(n_buses);
  parallel_chunks(n_buses, 1, options.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) per_bus[b] = match_pairs(stream, static_cast<int>(b), options.window_ps);
  });
  std::vector<std::vector<BusPair>> row_lists, col_lists;
  for (std::size_t b = 0; b < n_buses; ++b) {
    out.pairs[b] = per_bus[b].pairs.size();
    out.orphan_pos[b] = per_bus[b].orphan_pos;
    out.orphan_neg[b] = per_bus[b].orphan_neg;
    auto& dest = array.bus_axis(static_cast<int>(b)) == Axis::Row ? row_lists : col_lists;
    dest.push_back(std::move(per_bus[b].pairs));
  }
  const auto row_pairs = merge_pairs(row_lists);
  const auto col_pairs = merge_pairs(col_lists);
  auto four = match_fourfold(row_pairs, col_pairs, array, options.window_ps);
  out.unmatched_row = four.unmatched_row;
  out.unmatched_col = four.unmatched_col;
  out.events = std::move(four.events);

  out.assignments.resize(out.events.size());
  parallel_chunks(out.events.size(), 4096, options.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      out.assignments[i] = assign_pixel(out.events[i], cal, options.assignment_halfwidth_ps);
  });
  for (const auto& a : out.assignments) {
    if (const auto* hit = std::get_if<PixelHit>(&a))
      out.hits.push_back(*hit);
    else
      ++out.unassigned[static_cast<std::size_t>(std::get<UnassignedReason>(a))];
  }

  Picoseconds first = 0, last = 0;
  bool any = false;
  for (int c = 0; c < kChannelCount; ++c) {
    const auto ch = stream.channel(c);
    if (ch.empty()) continue;
    first = any ? std::min(first, ch.front()) : ch.front();
    last = any ? std::max(last, ch.back()) : ch.back();
    any = true;
  }
  out.image = accumulate_image(out.hits, array.config().n_rows, array.config().n_cols,
                               any ? seconds_from_ps(last - first) : 0.0);
  return out;
}

std::string summary_json(const DecodeResult& r) {
  nlohmann::ordered_json j;
  j["tags"] = r.tags;
  j["pairs"] = r.pairs;
  j["orphans_pos"] = r.orphan_pos;
  j["orphans_neg"] = r.orphan_neg;
  j["unmatched_row_pairs"] = r.unmatched_row;
  j["unmatched_col_pairs"] = r.unmatched_col;
  j["fourfold"] = r.events.size();
  j["assigned"] = r.hits.size();
  j["unassigned"] = {{"no_peak", r.unassigned[0]}, {"pruned", r.unassigned[1]}, {"out_of_range", r.unassigned[2]}};
  j["assignment_rate"] = r.assignment_rate();
  j["exposure_s"] = r.image.exposure_s;
  return j.dump(2);
}

}  // namespace tci
