#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tci/digest.hpp"
#include "tci/units.hpp"

namespace tci {

enum class Axis : std::uint8_t { Row = 0, Column = 1 };

const char* axis_name(Axis axis);

/// Identifies one nanowire detector: a row or a column, by index.
struct DetectorId {
  Axis axis = Axis::Row;
  int index = 0;

  auto operator<=>(const DetectorId&) const = default;
};

/// Compact text form used in configs and reports: "R12", "C3".
std::string to_string(const DetectorId& id);
std::optional<DetectorId> parse_detector_id(std::string_view text);

struct ArrayConfig {
  int n_rows = 800;
  int n_cols = 500;
  double pitch_um = 5.0;
  int section_size = 50;
  /// Total bus count, split evenly between the row and column axes.
  int n_buses = 4;
  double inter_detector_bus_length_um = 400.0;
  /// Extra bus between adjacent sections on one bus. Unset means five
  /// detector hops' worth of bus.
  std::optional<double> inter_section_extra_bus_length_um;
  double bus_velocity_m_per_s = 1.10e6;
  double detector_width_um = 1.1;
  /// When > 0, the per-hop delay is solved so that neighbouring detectors
  /// on one bus are this far apart in t1 - t2. When 0, the hop delay is
  /// inter_detector_bus_length / bus_velocity.
  double delta_t_peak_spacing_target_ps = 362.0;
  /// Bus beyond the outermost couplers, at each end.
  double bus_lead_length_um = 0.0;

  static ArrayConfig full() { return {}; }
  static ArrayConfig desk();

  int buses_per_axis() const { return n_buses / 2; }

  /// Throws ConfigError.
  void validate() const;
};

struct CircuitConstants {
  double r_bias_ohm = 1000.0;
  double r_s_ohm = 80.0;
  double r_shunt_ohm = 16.0;
  double r_tc_ohm = 16.0;
  double l_series_h = 1.25e-6;
  double l_snspd_h = 1.14e-6;
  double hotspot_energy_threshold_j = 8.1e-17;

  void validate() const;
};

struct DetectorAddress {
  Axis axis = Axis::Row;
  int index = 0;
  int bus_id = 0;
  int section_id = 0;
  /// Distance from the bus's end-1 tap to this detector's coupler.
  double position_on_bus_um = 0.0;

  DetectorId id() const { return {axis, index}; }
};

struct DetectorDelay {
  Picoseconds tau1 = 0;
  Picoseconds tau2 = 0;

  Picoseconds dt_expected() const { return tau1 - tau2; }
};

struct BusInfo {
  int bus_id = 0;
  Axis axis = Axis::Row;
  Picoseconds tau_b = 0;
  /// Detector indices in coupler order from end 1 to end 2.
  std::vector<int> detectors;
};

struct Pixel {
  int row = 0;
  int col = 0;

  auto operator<=>(const Pixel&) const = default;
};

struct PointUm {
  double x = 0.0;
  double y = 0.0;
};

/// Geometry, bus topology and the per-detector delay table. Immutable.
///
/// Row r sits at y in [r*pitch, (r+1)*pitch), column c at x in
/// [c*pitch, (c+1)*pitch). With two buses per axis, odd indices go to
/// bus A and even indices to bus B; in general detector i lands on
/// bus (i + 1) % buses_per_axis of its axis. Row buses are numbered
/// first, then column buses. Along a bus, detectors sit in index order
/// one hop apart, with an extra gap at each section boundary.
class ArrayModel {
 public:
  /// Throws ConfigError.
  static ArrayModel build(const ArrayConfig& config, const CircuitConstants& constants = {});

  const ArrayConfig& config() const { return config_; }
  const CircuitConstants& constants() const { return constants_; }

  int n_detectors(Axis axis) const { return axis == Axis::Row ? config_.n_rows : config_.n_cols; }
  int n_detectors_total() const { return config_.n_rows + config_.n_cols; }
  int n_buses() const { return config_.n_buses; }
  bool contains(const DetectorId& id) const;

  /// Throws UnknownDetector.
  const DetectorAddress& address(const DetectorId& id) const;
  /// Throws UnknownDetector if the address does not describe a detector of this model.
  DetectorDelay delay_for(const DetectorAddress& address) const;
  DetectorDelay delay_for(const DetectorId& id) const { return delay_for(address(id)); }
  Picoseconds dt_expected(const DetectorId& id) const { return delay_for(id).dt_expected(); }

  std::span<const BusInfo> buses() const { return buses_; }
  const BusInfo& bus(int bus_id) const;
  Axis bus_axis(int bus_id) const { return bus(bus_id).axis; }
  Picoseconds tau_b(int bus_id) const { return bus(bus_id).tau_b; }

  /// One-way delay between neighbouring couplers on a bus.
  Picoseconds hop_ps() const { return hop_ps_; }
  /// Additional one-way delay at a section boundary.
  Picoseconds section_gap_ps() const { return section_gap_ps_; }
  Picoseconds lead_ps() const { return lead_ps_; }
  /// Bus length equivalent of one hop, after solving for the spacing target.
  double effective_hop_length_um() const;

  double width_um() const { return config_.n_cols * config_.pitch_um; }
  double height_um() const { return config_.n_rows * config_.pitch_um; }
  std::optional<Pixel> pixel_at(double x_um, double y_um) const;
  PointUm center_of(const Pixel& pixel) const;

  /// Canonical text of the resolved array configuration; digest() hashes it.
  const std::string& canonical_text() const { return canonical_; }
  const Digest& digest() const { return digest_; }

 private:
  ArrayModel() = default;
  std::size_t flat(const DetectorId& id) const;

  ArrayConfig config_;
  CircuitConstants constants_;
  Picoseconds hop_ps_ = 0;
  Picoseconds section_gap_ps_ = 0;
  Picoseconds lead_ps_ = 0;
  std::vector<DetectorAddress> addresses_;  // rows then columns
  std::vector<DetectorDelay> delays_;
  std::vector<BusInfo> buses_;
  std::string canonical_;
  Digest digest_{};
};

struct EnergyBudget {
  double deposited_j = 0.0;
  /// deposited / hotspot threshold; >= 1 means the coupler is expected to fire.
  double margin = 0.0;
};

/// Energy dumped into the thermal coupler by the series inductor,
/// 0.5 * L_series * I^2. Requires i_bias_a > 0.
EnergyBudget energy_budget(const CircuitConstants& constants, double i_bias_a);

}  // namespace tci
