#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tci/array_model.hpp"
#include "tci/calibration.hpp"
#include "tci/pairing.hpp"
#include "tci/tagstream.hpp"

namespace tci {

/// 3 sigma of a 62 ps FWHM Gaussian peak.
inline constexpr double kDefaultAssignmentHalfwidthPs = 79.0;

struct DecodeOptions {
  Picoseconds window_ps = kDefaultWindowPs;
  double assignment_halfwidth_ps = kDefaultAssignmentHalfwidthPs;
  int threads = 1;
};

enum class UnassignedReason : std::uint8_t { NoPeak, Pruned, OutOfRange };

const char* reason_name(UnassignedReason r);

struct PixelHit {
  int row = 0;
  int col = 0;
  Picoseconds t0 = 0;
  Picoseconds dt_row = 0;
  Picoseconds dt_col = 0;
  double res_row_ps = 0.0;
  double res_col_ps = 0.0;

  bool operator==(const PixelHit&) const = default;
};

using Assignment = std::variant<PixelHit, UnassignedReason>;

/// Looks both differential delays up in the calibration. When both axes
/// fail, the reported reason is the first of Pruned, NoPeak, OutOfRange
/// that applies. Throws CalibrationMissing.
Assignment assign_pixel(const FourFoldEvent& event, const Calibration& cal,
                        double halfwidth_ps = kDefaultAssignmentHalfwidthPs);

struct ImageHistogram {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint64_t> counts;  // row-major
  double exposure_s = 0.0;

  std::uint64_t at(int r, int c) const { return counts[static_cast<std::size_t>(r) * cols + c]; }
  std::uint64_t total() const;
  bool operator==(const ImageHistogram&) const = default;
};

ImageHistogram accumulate_image(std::span<const PixelHit> hits, int rows, int cols, double exposure_s = 0.0);

/// P5, maximum count scaled to 255.
void write_pgm(const ImageHistogram& image, std::ostream& out);
/// Exact counts, one image row per line.
void write_image_csv(const ImageHistogram& image, std::ostream& out);
/// t0_ps,row,col,dt_row_ps,dt_col_ps,res_row_ps,res_col_ps
void write_hits_csv(std::span<const PixelHit> hits, std::ostream& out);

struct DecodeResult {
  std::array<std::uint64_t, kChannelCount> tags{};
  std::array<std::uint64_t, kChannelCount / 2> pairs{};
  std::array<std::uint64_t, kChannelCount / 2> orphan_pos{};
  std::array<std::uint64_t, kChannelCount / 2> orphan_neg{};
  std::uint64_t unmatched_row = 0;  // pairs with no partner on the other axis
  std::uint64_t unmatched_col = 0;
  std::vector<FourFoldEvent> events;
  std::vector<Assignment> assignments;  // parallel to events
  std::vector<PixelHit> hits;           // assigned events, time order
  std::array<std::uint64_t, 3> unassigned{};  // by UnassignedReason
  ImageHistogram image;

  double assignment_rate() const;
  bool operator==(const DecodeResult&) const = default;
};

/// Pairs each bus, matches four-folds, assigns pixels and bins the image.
/// Throws FormatError if the stream names a different array, CalibrationError
/// if the calibration does, CalibrationMissing if a bus has no table.
DecodeResult decode(const TagStream& stream, const ArrayModel& array, const Calibration& cal,
                    const DecodeOptions& options = {});

/// Summary report as a JSON object.
std::string summary_json(const DecodeResult& result);

}  // namespace tci
