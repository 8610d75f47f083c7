#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "tci/array_model.hpp"
#include "tci/tagstream.hpp"
#include "tci/units.hpp"

namespace tci {

// ---------------------------------------------------------------- scenes

/// Uniform illumination over [0, width) x [0, height).
struct Flood {
  double width_um = 0.0;
  double height_um = 0.0;
};

struct GaussianSpot {
  double center_x_um = 0.0;
  double center_y_um = 0.0;
  double sigma_um = 500.0;
};

/// Transmission grid, row-major, row 0 at y = origin_y. Photons are
/// generated uniformly over the grid's extent and thinned by transmission,
/// so the scene rate is the rate incident on the mask.
struct MaskImage {
  int rows = 0;
  int cols = 0;
  double pitch_um = 5.0;
  double origin_x_um = 0.0;
  double origin_y_um = 0.0;
  std::vector<double> transmission;

  double at(int r, int c) const { return transmission[static_cast<std::size_t>(r) * cols + c]; }
  double mean_transmission() const;
};

/// Mode-locked source: photons at exact multiples of period, positions as Flood.
struct PulsedUniform {
  Picoseconds period_ps = 10'000'000;
  double width_um = 0.0;
  double height_um = 0.0;
};

using SceneKind = std::variant<Flood, GaussianSpot, MaskImage, PulsedUniform>;

struct Scene {
  SceneKind kind;
  double mean_photon_rate = 0.0;  // photons per second
  double duration_s = 1.0;

  Picoseconds duration_ps() const { return ps_from_seconds(duration_s); }

  static Scene flood(const ArrayModel& array, double rate, double duration_s);
  static Scene pulsed(const ArrayModel& array, Picoseconds period_ps, double rate, double duration_s);

  /// Throws ConfigError.
  void validate() const;
};

/// 8-bit binary (P5) or ASCII (P2) PGM, 0..maxval mapped to 0..1.
/// Throws IoError / FormatError.
MaskImage read_pgm_mask(const std::filesystem::path& path, double pitch_um);

struct PhotonEvent {
  Picoseconds t = 0;
  double x_um = 0.0;
  double y_um = 0.0;
};

/// Poisson arrivals (or a pulse comb) with positions drawn from the scene.
/// Sorted by t; a pure function of (scene, seed).
std::vector<PhotonEvent> generate_photons(const Scene& scene, std::uint64_t seed, int threads = 1);

// ------------------------------------------------------------- detection

struct EfficiencyCurve {
  double i_mid_a = 25e-6;
  double i_width_a = 3e-6;
  double plateau = 1.0;
};

/// plateau * logistic((bias - i_mid) / i_width).
double detection_efficiency(const EfficiencyCurve& curve, double bias_a);

struct DetectorBehavior {
  double bias_current_a = 40e-6;
  EfficiencyCurve efficiency;
  double dark_rate_cps = 1e-4;
  double hot_dark_rate_cps = 0.1;
  /// Defective (hot) detectors.
  std::set<DetectorId> defects;
  /// When false, defective detectors are treated as switched off.
  bool simulate_defects = true;
  /// Disconnected detectors: no photon or dark events at all.
  std::set<DetectorId> pruned;
  /// Probability that a detected photon yields clicks on both axes.
  double fill_yield = 0.137;
  Picoseconds bus_dead_time_ps = 9'160'000;
  /// Width of the per-axis uniform longitudinal offset.
  double geometric_jitter_width_ps = 336.0;
  /// Independent Gaussian timing noise per tag.
  double tag_jitter_sigma_ps = 18.6;

  /// All noise sources off: no jitter, darks or dead time, fill_yield 1.
  static DetectorBehavior ideal();

  void validate() const;
  bool is_off(const DetectorId& id) const {
    return pruned.contains(id) || (!simulate_defects && defects.contains(id));
  }
};

enum class EventOrigin : std::uint8_t { Photon, DarkRow, DarkCol };

struct DetectionEvent {
  Picoseconds t0 = 0;
  /// Present unless the event is a column dark count.
  std::optional<DetectorId> row;
  /// Present unless the event is a row dark count.
  std::optional<DetectorId> col;
  EventOrigin origin = EventOrigin::Photon;
};

struct DetectStats {
  std::uint64_t photons = 0;
  std::uint64_t in_area = 0;
  std::uint64_t switched_off = 0;     // landed on a pruned or disabled detector
  std::uint64_t efficiency_loss = 0;
  std::uint64_t fill_loss = 0;
  std::uint64_t detected = 0;         // photon-origin events emitted
  std::uint64_t dark_events = 0;
};

struct Detections {
  std::vector<DetectionEvent> events;  // time-ordered
  DetectStats stats;
};

/// Converts photons to clicks and injects dark counts over [0, duration_ps).
/// Throws GeometryError for a non-finite photon position.
Detections detect(std::span<const PhotonEvent> photons, const ArrayModel& array,
                  const DetectorBehavior& behavior, Picoseconds duration_ps, std::uint64_t seed,
                  int threads = 1);

// -------------------------------------------------------------- emission

struct EmitStats {
  std::array<std::uint64_t, kChannelCount / 2> bus_events{};
  std::array<std::uint64_t, kChannelCount / 2> bus_dropped{};
  std::uint64_t clamped_tags = 0;
};

struct Emission {
  TagStream tags;
  /// Per input event: whether its row / column pulses made it onto the bus.
  std::vector<std::uint8_t> row_emitted;
  std::vector<std::uint8_t> col_emitted;
  EmitStats stats;
};

/// Two pulses per (event, axis) with propagation delay, jitter and
/// non-paralyzable per-bus dead time.
Emission emit_tags(std::span<const DetectionEvent> events, const ArrayModel& array,
                   const DetectorBehavior& behavior, std::uint64_t seed, int threads = 1);

/// generate_photons -> detect -> emit_tags with derived seeds.
struct SimulationResult {
  std::uint64_t photon_count = 0;
  Detections detections;
  Emission emission;
};

SimulationResult simulate(const ArrayModel& array, const Scene& scene, const DetectorBehavior& behavior,
                          std::uint64_t seed, int threads = 1);

}  // namespace tci
