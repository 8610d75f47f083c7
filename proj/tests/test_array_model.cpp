#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "tci/array_model.hpp"
#include "tci/errors.hpp"

using namespace tci;

namespace {

const ArrayModel& full() {
  static const ArrayModel a = ArrayModel::build(ArrayConfig::full());
  return a;
}

}  // namespace

TEST(ArrayModel, DefaultHasEightHundredRowsAndFiveHundredColumns) {
  const auto& a = full();
  EXPECT_EQ(a.n_detectors(Axis::Row), 800);
  EXPECT_EQ(a.n_detectors(Axis::Column), 500);
  EXPECT_EQ(a.n_detectors_total(), 1300);
  ASSERT_EQ(a.buses().size(), 4u);
  EXPECT_EQ(a.bus(0).detectors.size(), 400u);
  EXPECT_EQ(a.bus(1).detectors.size(), 400u);
  EXPECT_EQ(a.bus(2).detectors.size(), 250u);
  EXPECT_EQ(a.bus(3).detectors.size(), 250u);
  EXPECT_EQ(a.bus_axis(1), Axis::Row);
  EXPECT_EQ(a.bus_axis(2), Axis::Column);
}

TEST(ArrayModel, OddAndEvenIndicesShareNoBus) {
  const auto& a = full();
  for (Axis axis : {Axis::Row, Axis::Column}) {
    const int base = axis == Axis::Row ? 0 : 2;
    for (int i = 0; i < a.n_detectors(axis); ++i)
      EXPECT_EQ(a.address({axis, i}).bus_id, base + (i + 1) % 2) << to_string({axis, i});
  }
}

TEST(ArrayModel, DelaysSumToBusDelayAndOrderAlongBus) {
  const auto& a = full();
  for (const auto& bus : a.buses()) {
    Picoseconds prev_dt = 0;
    bool first = true;
    for (int i : bus.detectors) {
      const auto d = a.delay_for(DetectorId{bus.axis, i});
      EXPECT_EQ(d.tau1 + d.tau2, bus.tau_b);
      EXPECT_GE(d.tau1, 0);
      EXPECT_GE(d.tau2, 0);
      if (!first) EXPECT_GT(d.dt_expected(), prev_dt);
      prev_dt = d.dt_expected();
      first = false;
    }
  }
}

TEST(ArrayModel, NeighbourSpacingMatchesTarget) {
  const auto& a = full();
  const auto& bus = a.bus(0);
  // Within a section, neighbours on one bus sit one hop apart: 2 * 181 ps in dt.
  const auto d0 = a.dt_expected({Axis::Row, bus.detectors[0]});
  const auto d1 = a.dt_expected({Axis::Row, bus.detectors[1]});
  EXPECT_EQ(d1 - d0, 362);
  std::vector<Picoseconds> steps;
  for (std::size_t k = 1; k < bus.detectors.size(); ++k)
    steps.push_back(a.dt_expected({Axis::Row, bus.detectors[k]}) - a.dt_expected({Axis::Row, bus.detectors[k - 1]}));
  std::sort(steps.begin(), steps.end());
  EXPECT_EQ(steps[steps.size() / 2], 362);
  // Section boundaries add a larger step, so no two peaks ever coincide.
  EXPECT_GT(steps.back(), 362);
}

TEST(ArrayModel, UntargetedSpacingComesFromBusLength) {
  ArrayConfig c;
  c.delta_t_peak_spacing_target_ps = 0;
  const auto a = ArrayModel::build(c);
  // 400 um at 1.10e6 m/s is 363.6 ps one way, 727 ps in dt.
  EXPECT_EQ(a.hop_ps(), 364);
  const auto& bus = a.bus(0);
  EXPECT_EQ(a.dt_expected({Axis::Row, bus.detectors[1]}) - a.dt_expected({Axis::Row, bus.detectors[0]}), 728);
  EXPECT_NEAR(static_cast<double>(a.hop_ps()), 400e-6 / 1.10e6 * 1e12, 1.0);
}

TEST(ArrayModel, TargetedSpacingIsWithinOnePercentOfUntargeted) {
  ArrayConfig c;
  c.delta_t_peak_spacing_target_ps = 0;
  const auto raw = ArrayModel::build(c);
  EXPECT_NEAR(2.0 * static_cast<double>(full().hop_ps()), static_cast<double>(raw.hop_ps()), 0.01 * raw.hop_ps());
}

TEST(ArrayModel, MinimalArrayHasOneDetectorPerBus) {
  ArrayConfig c;
  c.n_rows = 2;
  c.n_cols = 2;
  c.section_size = 1;
  c.n_buses = 4;
  const auto a = ArrayModel::build(c);
  for (const auto& bus : a.buses()) {
    ASSERT_EQ(bus.detectors.size(), 1u);
    const auto& addr = a.address({bus.axis, bus.detectors[0]});
    const auto d = a.delay_for(addr);
    EXPECT_EQ(d.tau1, 0);
    EXPECT_EQ(d.tau1 + d.tau2, bus.tau_b);
    EXPECT_DOUBLE_EQ(addr.position_on_bus_um, 0.0);
  }
}

TEST(ArrayModel, LeadLengthShiftsBothEnds) {
  ArrayConfig c = ArrayConfig::desk();
  c.bus_lead_length_um = 110.0;  // 100 ps at 1.10e6 m/s
  const auto a = ArrayModel::build(c);
  EXPECT_EQ(a.lead_ps(), 100);
  const auto& bus = a.bus(0);
  const auto first = a.delay_for(DetectorId{Axis::Row, bus.detectors.front()});
  const auto last = a.delay_for(DetectorId{Axis::Row, bus.detectors.back()});
  EXPECT_EQ(first.tau1, 100);
  EXPECT_EQ(last.tau2, 100);
}

TEST(ArrayModel, PositionOnBusMatchesTau1) {
  const auto& a = full();
  const double v = a.config().bus_velocity_m_per_s;
  for (int i : {0, 1, 77, 799}) {
    const auto& addr = a.address({Axis::Row, i});
    const auto d = a.delay_for(addr);
    EXPECT_NEAR(addr.position_on_bus_um / v * 1e6, static_cast<double>(d.tau1), 1e-6);
    EXPECT_EQ(addr.section_id, i / 50);
  }
}

TEST(ArrayModel, RejectsInvalidConfigurations) {
  auto bad = [](auto mutate) {
    ArrayConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.n_rows = 0; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.n_rows = 801; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.n_buses = 3; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.n_buses = 8; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.pitch_um = 0; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.bus_velocity_m_per_s = -1; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.section_size = 0; })), ConfigError);
  EXPECT_THROW(ArrayModel::build(bad([](ArrayConfig& c) { c.inter_section_extra_bus_length_um = -1.0; })),
               ConfigError);
  CircuitConstants k;
  k.l_series_h = 0;
  EXPECT_THROW(ArrayModel::build(ArrayConfig{}, k), ConfigError);
}

TEST(ArrayModel, UnknownDetectorsAreRejected) {
  const auto& a = full();
  EXPECT_THROW(a.address({Axis::Row, 800}), UnknownDetector);
  EXPECT_THROW(a.address({Axis::Column, -1}), UnknownDetector);
  DetectorAddress forged = a.address({Axis::Row, 3});
  forged.bus_id = 1 - forged.bus_id;  // move row 3 onto the other row bus
  EXPECT_THROW(a.delay_for(forged), UnknownDetector);
  EXPECT_THROW(a.bus(4), UnknownDetector);
}

TEST(ArrayModel, PixelLookupCoversGrid) {
  const auto& a = full();
  EXPECT_EQ(a.pixel_at(0.0, 0.0), (Pixel{0, 0}));
  EXPECT_EQ(a.pixel_at(12.4, 7.6), (Pixel{1, 2}));
  EXPECT_EQ(a.pixel_at(a.width_um() - 1e-9, a.height_um() - 1e-9), (Pixel{799, 499}));
  EXPECT_FALSE(a.pixel_at(-0.1, 3.0));
  EXPECT_FALSE(a.pixel_at(a.width_um(), 3.0));
  const auto c = a.center_of({3, 4});
  EXPECT_DOUBLE_EQ(c.x, 22.5);
  EXPECT_DOUBLE_EQ(c.y, 17.5);
  EXPECT_EQ(a.pixel_at(c.x, c.y), (Pixel{3, 4}));
}

TEST(ArrayModel, DigestTracksResolvedGeometry) {
  const auto a = ArrayModel::build(ArrayConfig::full());
  EXPECT_EQ(a.digest(), full().digest());
  EXPECT_NE(ArrayModel::build(ArrayConfig::desk()).digest(), a.digest());
  // Detector width has no timing effect and is left out of the digest.
  ArrayConfig c;
  c.detector_width_um = 2.0;
  EXPECT_EQ(ArrayModel::build(c).digest(), a.digest());
}

TEST(DetectorId, TextRoundTrip) {
  EXPECT_EQ(to_string({Axis::Row, 12}), "R12");
  EXPECT_EQ(to_string({Axis::Column, 3}), "C3");
  EXPECT_EQ(parse_detector_id("C3"), (DetectorId{Axis::Column, 3}));
  EXPECT_FALSE(parse_detector_id("X3"));
  EXPECT_FALSE(parse_detector_id("R"));
  EXPECT_FALSE(parse_detector_id("R-1"));
  EXPECT_FALSE(parse_detector_id("R1x"));
}

TEST(EnergyBudget, MatchesHandComputedValues) {
  const CircuitConstants k;
  const auto e = energy_budget(k, 44e-6);
  EXPECT_NEAR(e.deposited_j, 1.21e-15, 0.01e-15);
  EXPECT_NEAR(e.margin, 14.94, 0.05);
  const double i_threshold = std::sqrt(2 * 8.1e-17 / 1.25e-6);
  EXPECT_NEAR(energy_budget(k, i_threshold).margin, 1.0, 1e-12);
  EXPECT_LT(energy_budget(k, 1e-9).margin, 1.0);
}

TEST(EnergyBudget, MonotoneInBias) {
  const CircuitConstants k;
  double prev = 0;
  for (double i = 1e-6; i < 1e-4; i *= 1.3) {
    const double m = energy_budget(k, i).margin;
    EXPECT_GT(m, prev);
    prev = m;
  }
  EXPECT_THROW(energy_budget(k, 0.0), std::invalid_argument);
}
