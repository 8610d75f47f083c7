#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tci/array_model.hpp"
#include "tci/digest.hpp"
#include "tci/pairing.hpp"
#include "tci/tagstream.hpp"

namespace tci {

inline constexpr Picoseconds kDefaultBinWidthPs = 10;

/// Histogram of t_pos - t_neg for one bus over [-tau_b - hop, +tau_b + hop].
struct DelayHistogram {
  int bus = 0;
  Picoseconds bin_width = kDefaultBinWidthPs;
  Picoseconds lo = 0;  // left edge of bin 0
  std::vector<std::uint64_t> bins;
  std::uint64_t total = 0;      // pairs that fell in range
  std::uint64_t overflow = 0;   // pairs outside the range

  double bin_center(std::size_t i) const {
    return static_cast<double>(lo) + (static_cast<double>(i) + 0.5) * static_cast<double>(bin_width);
  }
  /// Bin index for dt, or nullopt if out of range.
  std::optional<std::size_t> bin_of(Picoseconds dt) const;
};

DelayHistogram build_histogram(std::span<const BusPair> pairs, const ArrayModel& array, int bus,
                               Picoseconds bin_width = kDefaultBinWidthPs);

enum class PeakStatus : std::uint8_t { Ok, Unilluminated, Pruned };

const char* status_name(PeakStatus s);

struct Peak {
  int detector = 0;
  double center_ps = 0.0;
  double fwhm_ps = 0.0;
  std::uint64_t area = 0;
  PeakStatus status = PeakStatus::Ok;

  bool operator==(const Peak&) const = default;
};

struct PeakSearchOptions {
  /// Peaks with fewer counts are reported unilluminated.
  std::uint64_t min_area = 5;
  /// Required mean counts per live detector on the bus.
  double min_counts_per_detector = 100.0;
  /// More missing peaks than this fraction is a CalibrationError.
  double max_missing_fraction = 0.2;
};

/// Counts inside each detector's window: the span of t1 - t2 closer to this
/// detector's expected value than to either neighbour's.
struct DetectorArea {
  DetectorId id;
  std::uint64_t area = 0;
};

std::vector<DetectorArea> detector_areas(const DelayHistogram& hist, const ArrayModel& array);

/// Seeded peak search: one window per expected detector, centroid and FWHM
/// measured inside it. Output in bus order (ascending t1 - t2).
/// Throws CalibrationError when too many peaks are missing or data is too thin.
std::vector<Peak> find_peaks(const DelayHistogram& hist, const ArrayModel& array,
                             const PeakSearchOptions& options = {}, const std::set<DetectorId>& pruned = {});

struct BusCalibration {
  int bus = 0;
  Axis axis = Axis::Row;
  std::vector<Peak> peaks;  // one entry per detector on the bus, bus order

  bool operator==(const BusCalibration&) const = default;
};

struct CalibrationProvenance {
  Digest array_digest{};
  Digest source_digest{};
  std::string date = "unspecified";

  bool operator==(const CalibrationProvenance&) const = default;
};

/// Per-bus peak tables and the prune list.
class Calibration {
 public:
  Calibration() = default;
  Calibration(std::vector<BusCalibration> buses, CalibrationProvenance provenance);

  /// Peaks exactly at the expected differential delays.
  static Calibration ideal(const ArrayModel& array);

  const std::vector<BusCalibration>& buses() const { return buses_; }
  const BusCalibration* bus(int bus_id) const;
  const CalibrationProvenance& provenance() const { return provenance_; }
  std::set<DetectorId> pruned() const;

  struct Match {
    const Peak* peak = nullptr;  // nearest ok-or-pruned peak, null if the bus has none
    double residual_ps = 0.0;
  };
  /// Nearest peak by center. Throws CalibrationMissing if the bus is absent.
  Match nearest(int bus_id, double dt_ps) const;

  bool operator==(const Calibration& o) const { return buses_ == o.buses_ && provenance_ == o.provenance_; }

 private:
  void reindex();

  std::vector<BusCalibration> buses_;
  CalibrationProvenance provenance_;
  // Per bus: indices into peaks of entries usable for lookup, by center.
  std::vector<std::vector<std::size_t>> lookup_;
};

struct CalibrateOptions {
  Picoseconds window_ps = kDefaultWindowPs;
  Picoseconds bin_width_ps = kDefaultBinWidthPs;
  PeakSearchOptions peaks;
  std::string date = "unspecified";
  std::set<DetectorId> pruned;
  int threads = 1;
};

/// Flood tags -> per-bus histograms -> peak tables.
Calibration calibrate(const TagStream& flood, const ArrayModel& array, const CalibrateOptions& options = {});

/// Histograms for every bus of a tag stream (used for dark acquisitions).
std::vector<DelayHistogram> bus_histograms(const TagStream& stream, const ArrayModel& array,
                                           Picoseconds window_ps = kDefaultWindowPs,
                                           Picoseconds bin_width_ps = kDefaultBinWidthPs, int threads = 1);

struct AnomalyFlag {
  DetectorId id;
  std::uint64_t area = 0;
  /// area / reference, where reference is the median area (at least one count).
  double excess_ratio = 0.0;
};

/// Detectors with area >= k * max(median area, 1).
std::vector<AnomalyFlag> flag_anomalous(std::span<const DetectorArea> areas, double k = 10.0);

/// Adds flags to the prune list. Idempotent. Throws UnknownDetector.
Calibration prune(const Calibration& cal, const ArrayModel& array, std::span<const DetectorId> flags);

/// Versioned CSV: comment header block, then
/// bus,axis,detector,center_ps,fwhm_ps,area,status
void write_calibration(const Calibration& cal, std::ostream& out);
void write_calibration_file(const Calibration& cal, const std::filesystem::path& path);
Calibration read_calibration(std::istream& in);
Calibration read_calibration_file(const std::filesystem::path& path);

}  // namespace tci
