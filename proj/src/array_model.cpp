#include "tci/array_model.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <stdexcept>

#include "tci/errors.hpp"

namespace tci {

namespace {

Picoseconds length_to_ps(double length_um, double velocity_m_per_s) {
  return static_cast<Picoseconds>(std::llround(length_um * 1e-6 / velocity_m_per_s * 1e12));
}

}  // namespace

const char* axis_name(Axis axis) { return axis == Axis::Row ? "row" : "col"; }

std::string to_string(const DetectorId& id) {
  return fmt::format("{}{}", id.axis == Axis::Row ? 'R' : 'C', id.index);
}

std::optional<DetectorId> parse_detector_id(std::string_view text) {
  if (text.size() < 2) return std::nullopt;
  DetectorId id;
  switch (text[0]) {
    case 'R': case 'r': id.axis = Axis::Row; break;
    case 'C': case 'c': id.axis = Axis::Column; break;
    default: return std::nullopt;
  }
  const char* first = text.data() + 1;
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, id.index);
  if (ec != std::errc{} || ptr != last || id.index < 0) return std::nullopt;
  return id;
}

ArrayConfig ArrayConfig::desk() {
  ArrayConfig c;
  c.n_rows = 100;
  c.n_cols = 100;
  return c;
}

void ArrayConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("array: " + msg); };
  if (n_rows <= 0 || n_cols <= 0) fail("n_rows and n_cols must be positive");
  if (section_size <= 0) fail("section_size must be positive");
  if (n_rows % section_size != 0 || n_cols % section_size != 0)
    fail(fmt::format("n_rows ({}) and n_cols ({}) must be divisible by section_size ({})", n_rows,
                     n_cols, section_size));
  if (n_buses != 2 && n_buses != 4) fail("n_buses must be 2 or 4 (8 readout channels max)");
  if (n_rows < buses_per_axis() || n_cols < buses_per_axis()) fail("every bus needs a detector");
  if (!(pitch_um > 0)) fail("pitch_um must be > 0");
  if (!(bus_velocity_m_per_s > 0)) fail("bus_velocity_m_per_s must be > 0");
  if (!(inter_detector_bus_length_um > 0)) fail("inter_detector_bus_length_um must be > 0");
  if (!(delta_t_peak_spacing_target_ps >= 0)) fail("delta_t_peak_spacing_target_ps must be >= 0");
  if (inter_section_extra_bus_length_um && !(*inter_section_extra_bus_length_um >= 0))
    fail("inter_section_extra_bus_length_um must be >= 0");
  if (!(bus_lead_length_um >= 0)) fail("bus_lead_length_um must be >= 0");
  if (!(detector_width_um > 0)) fail("detector_width_um must be > 0");
  const Picoseconds hop = delta_t_peak_spacing_target_ps > 0
                              ? std::llround(delta_t_peak_spacing_target_ps / 2)
                              : length_to_ps(inter_detector_bus_length_um, bus_velocity_m_per_s);
  if (hop < 1) fail("hop delay rounds to 0 ps");
}

void CircuitConstants::validate() const {
  for (double v : {r_bias_ohm, r_s_ohm, r_shunt_ohm, r_tc_ohm, l_series_h, l_snspd_h,
                   hotspot_energy_threshold_j}) {
    if (!(v > 0)) throw ConfigError("circuit: all constants must be > 0");
  }
}

ArrayModel ArrayModel::build(const ArrayConfig& config, const CircuitConstants& constants) {
  config.validate();
  constants.validate();

  ArrayModel m;
  m.config_ = config;
  m.constants_ = constants;
  const double v = config.bus_velocity_m_per_s;
  m.hop_ps_ = config.delta_t_peak_spacing_target_ps > 0
                  ? std::llround(config.delta_t_peak_spacing_target_ps / 2)
                  : length_to_ps(config.inter_detector_bus_length_um, v);
  m.section_gap_ps_ = config.inter_section_extra_bus_length_um
                          ? length_to_ps(*config.inter_section_extra_bus_length_um, v)
                          : 5 * m.hop_ps_;
  m.lead_ps_ = length_to_ps(config.bus_lead_length_um, v);

  const int per_axis = config.buses_per_axis();
  m.buses_.resize(static_cast<std::size_t>(config.n_buses));
  for (int b = 0; b < config.n_buses; ++b) {
    m.buses_[b].bus_id = b;
    m.buses_[b].axis = b < per_axis ? Axis::Row : Axis::Column;
  }

  m.addresses_.resize(static_cast<std::size_t>(m.n_detectors_total()));
  m.delays_.resize(m.addresses_.size());

  for (Axis axis : {Axis::Row, Axis::Column}) {
    const int n = m.n_detectors(axis);
    const int bus_base = axis == Axis::Row ? 0 : per_axis;
    for (int i = 0; i < n; ++i) {
      const int bus = bus_base + (i + 1) % per_axis;
      m.buses_[bus].detectors.push_back(i);
    }
    for (int b = bus_base; b < bus_base + per_axis; ++b) {
      BusInfo& info = m.buses_[b];
      Picoseconds tau1 = m.lead_ps_;
      int prev_section = -1;
      for (std::size_t k = 0; k < info.detectors.size(); ++k) {
        const int i = info.detectors[k];
        const int section = i / config.section_size;
        if (k > 0) tau1 += m.hop_ps_ + (section != prev_section ? m.section_gap_ps_ : 0);
        prev_section = section;
        const std::size_t f = m.flat({axis, i});
        m.addresses_[f] = DetectorAddress{axis, i, b, section, 0.0};
        m.delays_[f].tau1 = tau1;
      }
      info.tau_b = tau1 + m.lead_ps_;
      for (int i : info.detectors) {
        const std::size_t f = m.flat({axis, i});
        m.delays_[f].tau2 = info.tau_b - m.delays_[f].tau1;
        m.addresses_[f].position_on_bus_um = static_cast<double>(m.delays_[f].tau1) * 1e-12 * v * 1e6;
      }
    }
  }

  m.canonical_ = fmt::format(
      "tci-array v1\nn_rows={}\nn_cols={}\npitch_um={}\nsection_size={}\nn_buses={}\n"
      "bus_velocity_m_per_s={}\nhop_ps={}\nsection_gap_ps={}\nlead_ps={}\n",
      config.n_rows, config.n_cols, config.pitch_um, config.section_size, config.n_buses,
      config.bus_velocity_m_per_s, m.hop_ps_, m.section_gap_ps_, m.lead_ps_);
  m.digest_ = digest_of(m.canonical_);
  return m;
}

std::size_t ArrayModel::flat(const DetectorId& id) const {
  return static_cast<std::size_t>(id.axis == Axis::Row ? id.index : config_.n_rows + id.index);
}

bool ArrayModel::contains(const DetectorId& id) const {
  return id.index >= 0 && id.index < n_detectors(id.axis);
}

const DetectorAddress& ArrayModel::address(const DetectorId& id) const {
  if (!contains(id)) throw UnknownDetector("no such detector: " + to_string(id));
  return addresses_[flat(id)];
}

DetectorDelay ArrayModel::delay_for(const DetectorAddress& a) const {
  const DetectorId id{a.axis, a.index};
  if (!contains(id) || addresses_[flat(id)].bus_id != a.bus_id)
    throw UnknownDetector("address does not belong to this array: " + to_string(id));
  return delays_[flat(id)];
}

const BusInfo& ArrayModel::bus(int bus_id) const {
  if (bus_id < 0 || bus_id >= static_cast<int>(buses_.size()))
    throw UnknownDetector(fmt::format("no such bus: {}", bus_id));
  return buses_[static_cast<std::size_t>(bus_id)];
}

double ArrayModel::effective_hop_length_um() const {
  return static_cast<double>(hop_ps_) * 1e-12 * config_.bus_velocity_m_per_s * 1e6;
}

std::optional<Pixel> ArrayModel::pixel_at(double x_um, double y_um) const {
  if (!(x_um >= 0 && y_um >= 0 && x_um < width_um() && y_um < height_um())) return std::nullopt;
  Pixel p{static_cast<int>(y_um / config_.pitch_um), static_cast<int>(x_um / config_.pitch_um)};
  // Guard the upper edge against rounding in the division.
  p.row = std::min(p.row, config_.n_rows - 1);
  p.col = std::min(p.col, config_.n_cols - 1);
  return p;
}

PointUm ArrayModel::center_of(const Pixel& pixel) const {
  return {(pixel.col + 0.5) * config_.pitch_um, (pixel.row + 0.5) * config_.pitch_um};
}

EnergyBudget energy_budget(const CircuitConstants& constants, double i_bias_a) {
  if (!(i_bias_a > 0)) throw std::invalid_argument("energy_budget: i_bias must be > 0");
  EnergyBudget e;
  e.deposited_j = 0.5 * constants.l_series_h * i_bias_a * i_bias_a;
  e.margin = e.deposited_j / constants.hotspot_energy_threshold_j;
  return e;
}

}  // namespace tci
