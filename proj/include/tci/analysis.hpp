#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "tci/array_model.hpp"
#include "tci/decoder.hpp"
#include "tci/forward_sim.hpp"
#include "tci/pairing.hpp"

namespace tci {

// ------------------------------------------------------------ dead time

/// Non-paralyzable dead time: incident / (1 + incident * tau).
double blocking_model(double incident_cps, double tau_dead_s);

struct RatePoint {
  double attenuation_db = 0.0;
  double incident_cps = 0.0;
  double measured_cps = 0.0;
};

struct RateCurve {
  std::vector<RatePoint> points;  // ascending incident rate
  double tau_dead_s = 0.0;        // least-squares fit
  /// Incident rate where measured / incident crosses one half, interpolated
  /// in log rate; nullopt if the sweep never crosses.
  std::optional<double> compression_3db_cps;
};

/// Least squares on relative residuals, so low-rate points weigh as much as
/// saturated ones. Throws FitError for fewer than 4 points or no compression.
double fit_dead_time(std::span<const RatePoint> points);

std::optional<double> compression_point_3db(std::span<const RatePoint> points);

/// Fills one section of a 100x100 array: every other row and column of
/// section 0, so exactly one row bus and one column bus see light.
struct RateSweepOptions {
  ArrayConfig array = ArrayConfig::desk();
  DetectorBehavior behavior;  // fill_yield is forced to 1
  double max_incident_cps = 1.0e7;
  std::vector<double> attenuations_db;  // empty -> 0..40 dB in 2 dB steps
  /// Expected four-fold events per point, sets each point's duration.
  double events_per_point = 10000.0;
  Picoseconds window_ps = kDefaultWindowPs;
  std::uint64_t seed = 1;
  int threads = 1;
};

/// Simulate -> decode at each attenuation. Incident rate counts detection
/// events, measured rate counts four-fold coincidences.
RateCurve measure_rate_curve(const RateSweepOptions& options);

// --------------------------------------------------------------- jitter

struct JitterStats {
  Picoseconds bin_width_ps = 10;
  Picoseconds lo_ps = 0;  // left edge of bin 0
  std::vector<std::uint64_t> bins;
  std::uint64_t count = 0;
  double mean_ps = 0.0;
  double fwhm_ps = 0.0;
  double stddev_ps = 0.0;
};

/// Detection delay of each event: column-axis t0 minus the nearest pulse.
std::vector<Picoseconds> pulse_delays(std::span<const FourFoldEvent> events, Picoseconds period_ps);

/// Histogram, FWHM (linear interpolation) and standard deviation of delays.
JitterStats jitter_stats(std::span<const Picoseconds> delays, Picoseconds bin_width_ps = 10);

/// FWHM of t1 - t2 peaks, pooled over detectors after subtracting each
/// pair's expected differential delay. Only pairs from four-fold events
/// on `axis` are used.
double pooled_dt_fwhm(std::span<const FourFoldEvent> events, const ArrayModel& array, Axis axis,
                      Picoseconds bin_width_ps = 10);

// -------------------------------------------------------------- scaling

struct ScalingPrediction {
  double per_bus_max_cps = 0.0;
  double array_max_cps = 0.0;
};

/// B buses per axis share a fixed detector count, so each bus is 1/B as
/// long and its dead time is tau(1) / B.
ScalingPrediction scaling_model(int buses_per_axis, double tau_dead_1_s);

struct SaturationOptions {
  ArrayConfig array = ArrayConfig::desk();
  DetectorBehavior behavior;
  double tau_dead_1_s = 9.16e-6;
  /// Incident rate in multiples of the single-bus saturation rate.
  double overdrive = 400.0;
  double duration_s = 0.05;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct SaturationResult {
  int buses_per_axis = 1;
  double incident_cps = 0.0;
  /// Sum over row buses of matched pair rates.
  double measured_cps = 0.0;
  ScalingPrediction model;
};

/// Floods an array read out by B = 1 or 2 buses per axis far past saturation.
SaturationResult measure_saturation(int buses_per_axis, const SaturationOptions& options);

// ---------------------------------------------------------- dark counts

struct DarkExpectation {
  double expected = 0.0;
  /// Central Poisson interval on the count at the given confidence.
  double count_lo = 0.0;
  double count_hi = 0.0;
};

DarkExpectation dark_count_estimate(double n_detectors, double rate_per_detector_cps, double duration_s,
                                    double confidence = 0.95);

struct DarkRateEstimate {
  double rate_cps = 0.0;         // counts / (n T)
  double uncertainty_cps = 0.0;  // sqrt(counts) / (n T)
  double ci_lo_cps = 0.0;        // exact (Garwood) interval
  double ci_hi_cps = 0.0;
};

DarkRateEstimate dark_rate_from_counts(std::uint64_t counts, double n_detectors, double duration_s,
                                       double confidence = 0.95);

/// Dark-only acquisition: pairs every bus and counts pairs whose t1 - t2
/// falls within `halfwidth_ps` of one of `detectors`' expected delays.
/// Returns counts per listed detector, in the set's order.
std::vector<std::uint64_t> count_dark_pairs(const ArrayModel& array, const DetectorBehavior& behavior,
                                            const std::set<DetectorId>& detectors, double duration_s,
                                            std::uint64_t seed, double halfwidth_ps = kDefaultAssignmentHalfwidthPs,
                                            int threads = 1);

}  // namespace tci
