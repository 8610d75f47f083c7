#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <tuple>

#include "tci/decoder.hpp"
#include "tci/errors.hpp"
#include "tci/forward_sim.hpp"
#include "tci/stats.hpp"

using namespace tci;

namespace {

const ArrayModel& desk() {
  static const ArrayModel a = ArrayModel::build(ArrayConfig::desk());
  return a;
}

const Calibration& ideal_cal() {
  static const Calibration c = Calibration::ideal(desk());
  return c;
}

FourFoldEvent event_at(const DetectorId& row, const DetectorId& col, Picoseconds dr = 0, Picoseconds dc = 0) {
  FourFoldEvent ev;
  ev.row_pair.bus = desk().address(row).bus_id;
  ev.col_pair.bus = desk().address(col).bus_id;
  ev.dt_row = desk().dt_expected(row) + dr;
  ev.dt_col = desk().dt_expected(col) + dc;
  return ev;
}

DetectorBehavior timing_only() {
  auto b = DetectorBehavior::ideal();
  b.tag_jitter_sigma_ps = 18.6;
  b.geometric_jitter_width_ps = 336.0;
  return b;
}

}  // namespace

TEST(AssignPixel, AtPeakCenter) {
  const auto a = assign_pixel(event_at({Axis::Row, 12}, {Axis::Column, 34}), ideal_cal());
  const auto* hit = std::get_if<PixelHit>(&a);
  ASSERT_NE(hit, nullptr);
  EXPECT_EQ(hit->row, 12);
  EXPECT_EQ(hit->col, 34);
  EXPECT_EQ(hit->res_row_ps, 0.0);
  EXPECT_EQ(hit->res_col_ps, 0.0);
}

TEST(AssignPixel, HalfwidthBoundary) {
  auto a = assign_pixel(event_at({Axis::Row, 12}, {Axis::Column, 34}, 79, -79), ideal_cal());
  ASSERT_TRUE(std::holds_alternative<PixelHit>(a));
  EXPECT_EQ(std::get<PixelHit>(a).res_col_ps, -79.0);
  a = assign_pixel(event_at({Axis::Row, 12}, {Axis::Column, 34}, 80, 0), ideal_cal());
  EXPECT_EQ(std::get<UnassignedReason>(a), UnassignedReason::OutOfRange);
}

TEST(AssignPixel, MidwayBetweenPeaksIsOutOfRange) {
  const auto a = assign_pixel(event_at({Axis::Row, 12}, {Axis::Column, 34}, 0, 181), ideal_cal());
  EXPECT_EQ(std::get<UnassignedReason>(a), UnassignedReason::OutOfRange);
}

TEST(AssignPixel, PrunedPeakIsReportedPruned) {
  const auto cal = prune(ideal_cal(), desk(), std::vector<DetectorId>{{Axis::Column, 34}});
  auto a = assign_pixel(event_at({Axis::Row, 12}, {Axis::Column, 34}), cal);
  EXPECT_EQ(std::get<UnassignedReason>(a), UnassignedReason::Pruned);
  // Both axes fail: pruned outranks out-of-range.
  a = assign_pixel(event_at({Axis::Row, 12}, {Axis::Column, 34}, 150, 0), cal);
  EXPECT_EQ(std::get<UnassignedReason>(a), UnassignedReason::Pruned);
}

TEST(AssignPixel, EmptyBusTableIsNoPeak) {
  std::vector<BusCalibration> buses = ideal_cal().buses();
  for (auto& p : buses[0].peaks) p.status = PeakStatus::Unilluminated;
  const Calibration cal(buses, ideal_cal().provenance());
  const int row = desk().bus(0).detectors[0];
  const auto a = assign_pixel(event_at({Axis::Row, row}, {Axis::Column, 0}), cal);
  EXPECT_EQ(std::get<UnassignedReason>(a), UnassignedReason::NoPeak);
}

TEST(Image, AccumulateAndExport) {
  const auto empty = accumulate_image({}, 3, 2);
  EXPECT_EQ(empty.total(), 0u);
  const std::vector<PixelHit> hits{{0, 1, 0, 0, 0, 0, 0}, {0, 1, 0, 0, 0, 0, 0}, {2, 0, 0, 0, 0, 0, 0}};
  const auto img = accumulate_image(hits, 3, 2);
  EXPECT_EQ(img.at(0, 1), 2u);
  EXPECT_EQ(img.total(), 3u);
  std::ostringstream pgm, csv;
  write_pgm(img, pgm);
  EXPECT_EQ(pgm.str(), std::string("P5\n2 3\n255\n\x00\xff\x00\x00\x80\x00", 17));
  write_image_csv(img, csv);
  EXPECT_EQ(csv.str(), "0,2\n0,0\n1,0\n");
  const std::vector<PixelHit> bad{{3, 0, 0, 0, 0, 0, 0}};
  EXPECT_THROW(accumulate_image(bad, 3, 2), GeometryError);
}

TEST(Image, HitsCsvFormat) {
  const std::vector<PixelHit> hits{{4, 5, 1000, -20, 30, 1.26, -0.5}};
  std::ostringstream out;
  write_hits_csv(hits, out);
  EXPECT_EQ(out.str(), "t0_ps,row,col,dt_row_ps,dt_col_ps,res_row_ps,res_col_ps\n1000,4,5,-20,30,1.3,-0.5\n");
}

namespace {

using Truth = std::tuple<Picoseconds, int, int>;

// Two events closer than the coincidence window can legitimately be paired
// across each other, so exactness is only claimed for isolated events.
// `crowded` holds the times of every event that has a close neighbour and
// `isolated` the events well clear of all of them.
struct TruthSplit {
  std::vector<Truth> isolated;
  std::vector<Picoseconds> crowded;
  bool near_crowd(Picoseconds t) const {
    const Picoseconds reach = 4 * kDefaultWindowPs;
    auto it = std::lower_bound(crowded.begin(), crowded.end(), t - reach);
    return it != crowded.end() && *it <= t + reach;
  }
};

TruthSplit split_truth(const SimulationResult& sim) {
  TruthSplit s;
  const auto& ev = sim.detections.events;
  const Picoseconds gap = 2 * kDefaultWindowPs;
  std::vector<bool> alone(ev.size());
  for (std::size_t i = 0; i < ev.size(); ++i) {
    alone[i] = (i == 0 || ev[i].t0 - ev[i - 1].t0 > gap) && (i + 1 == ev.size() || ev[i + 1].t0 - ev[i].t0 > gap);
    if (!alone[i]) s.crowded.push_back(ev[i].t0);
  }
  // Decoded hits are filtered by the same rule, so both sides agree.
  for (std::size_t i = 0; i < ev.size(); ++i)
    if (alone[i] && !s.near_crowd(ev[i].t0) && sim.emission.row_emitted[i] && sim.emission.col_emitted[i])
      s.isolated.emplace_back(ev[i].t0, ev[i].row->index, ev[i].col->index);
  std::sort(s.isolated.begin(), s.isolated.end());
  return s;
}

}  // namespace

TEST(Decode, ZeroNoiseRoundTripIsExact) {
  const auto sim = simulate(desk(), Scene::flood(desk(), 1e5, 0.5), DetectorBehavior::ideal(), 3);
  const auto truth = split_truth(sim);
  ASSERT_GT(truth.isolated.size(), 40000u);
  ASSERT_GT(truth.crowded.size(), 100u);
  const auto r = decode(sim.emission.tags, desk(), ideal_cal());
  std::vector<Truth> clean;
  for (const auto& h : r.hits)
    if (!truth.near_crowd(h.t0)) clean.emplace_back(h.t0, h.row, h.col);
  std::sort(clean.begin(), clean.end());
  EXPECT_EQ(clean, truth.isolated);
  for (std::size_t i = 0; i < r.events.size(); ++i) {
    if (truth.near_crowd(r.events[i].t0_row)) continue;
    ASSERT_EQ(r.events[i].t0_row, r.events[i].t0_col);
    ASSERT_TRUE(std::holds_alternative<PixelHit>(r.assignments[i]));
  }
  EXPECT_LE(r.events.size(), sim.detections.events.size());
  EXPECT_EQ(r.image.total(), r.hits.size());
}

TEST(Decode, GeometricJitterLeavesAssignmentExact) {
  auto b = DetectorBehavior::ideal();
  b.geometric_jitter_width_ps = 336.0;
  const auto sim = simulate(desk(), Scene::flood(desk(), 5e4, 0.5), b, 4);
  const auto truth = split_truth(sim);
  const auto r = decode(sim.emission.tags, desk(), ideal_cal());
  std::size_t clean = 0;
  for (const auto& h : r.hits) {
    if (truth.near_crowd(h.t0)) continue;
    ++clean;
    ASSERT_EQ(h.res_row_ps, 0.0);
    ASSERT_EQ(h.res_col_ps, 0.0);
  }
  EXPECT_EQ(clean, truth.isolated.size());
}

TEST(Decode, ThreadCountDoesNotChangeOutput) {
  const auto sim = simulate(desk(), Scene::flood(desk(), 2e5, 0.5), DetectorBehavior{}, 8);
  DecodeOptions one, four;
  four.threads = 4;
  EXPECT_EQ(decode(sim.emission.tags, desk(), ideal_cal(), one),
            decode(sim.emission.tags, desk(), ideal_cal(), four));
}

TEST(Decode, WiderWindowNeverLosesEvents) {
  DetectorBehavior b;
  b.dark_rate_cps = 50.0;
  b.hot_dark_rate_cps = 50.0;
  const auto tags = simulate(desk(), Scene::flood(desk(), 3e5, 0.5), b, 10).emission.tags;
  std::size_t prev = 0;
  for (Picoseconds w : {12'000, 20'000, 50'000, 100'000, 200'000}) {
    DecodeOptions opt;
    opt.window_ps = w;
    const auto n = decode(tags, desk(), ideal_cal(), opt).events.size();
    EXPECT_GE(n, prev) << "window " << w;
    prev = n;
  }
  EXPECT_GT(prev, 0u);
}

TEST(Decode, DarkOnlyStreamsGiveNoFourFolds) {
  auto b = DetectorBehavior::ideal();
  b.dark_rate_cps = 0.5;
  b.hot_dark_rate_cps = 0.5;
  const auto sim = simulate(desk(), Scene::flood(desk(), 0.0, 20.0), b, 6);
  ASSERT_GT(sim.emission.tags.size(), 1000u);
  const auto r = decode(sim.emission.tags, desk(), ideal_cal());
  EXPECT_TRUE(r.events.empty());
  EXPECT_EQ(r.unmatched_row + r.unmatched_col, sim.detections.events.size());
}

TEST(Decode, FloodCountsArePoisson) {
  const auto sim = simulate(desk(), Scene::flood(desk(), 2e5, 3.0), timing_only(), 12);
  const auto r = decode(sim.emission.tags, desk(), ideal_cal());
  const auto& c = r.image.counts;
  const double m = static_cast<double>(r.image.total()) / static_cast<double>(c.size());
  double chi2 = 0;
  for (auto k : c) chi2 += (static_cast<double>(k) - m) * (static_cast<double>(k) - m) / m;
  const boost::math::chi_squared dist(static_cast<double>(c.size() - 1));
  const double p = boost::math::cdf(dist, chi2);
  EXPECT_GT(p, 0.005) << "chi2 " << chi2;
  EXPECT_LT(p, 0.995) << "chi2 " << chi2;
  EXPECT_GT(r.assignment_rate(), 0.99);
}

TEST(Decode, MaskImageIsReproduced) {
  // 20x20 pixel mask with a bright cross and a half-grey corner.
  MaskImage m;
  m.rows = 20;
  m.cols = 20;
  m.pitch_um = desk().config().pitch_um;
  m.transmission.assign(400, 0.0);
  for (int r = 0; r < 20; ++r)
    for (int c = 0; c < 20; ++c) {
      if (r == 9 || r == 10 || c == 4 || c == 5) m.transmission[r * 20 + c] = 1.0;
      if (r >= 15 && c >= 15) m.transmission[r * 20 + c] = 0.5;
    }
  const auto sim = simulate(desk(), Scene{m, 100.0 * 400.0 * 4.0, 1.0}, timing_only(), 13);
  const auto r = decode(sim.emission.tags, desk(), ideal_cal());
  std::vector<double> got, want;
  for (int row = 0; row < 20; ++row)
    for (int col = 0; col < 20; ++col) {
      got.push_back(static_cast<double>(r.image.at(row, col)));
      want.push_back(m.at(row, col));
    }
  EXPECT_GE(normalized_cross_correlation(got, want), 0.95);
  // Nothing lands outside the mask footprint.
  EXPECT_EQ(std::accumulate(got.begin(), got.end(), 0.0), static_cast<double>(r.image.total()));
}

TEST(Decode, MismatchedDigestsAreRejected) {
  const auto full = ArrayModel::build(ArrayConfig::full());
  TagStream foreign(full.digest());
  EXPECT_THROW(decode(foreign, desk(), ideal_cal()), FormatError);
  EXPECT_THROW(decode(TagStream{}, desk(), Calibration::ideal(full)), CalibrationError);
  std::vector<BusCalibration> three(ideal_cal().buses().begin(), ideal_cal().buses().end() - 1);
  EXPECT_THROW(decode(TagStream{}, desk(), Calibration(three, {})), CalibrationMissing);
}

TEST(Decode, SummaryReportsCounts) {
  const auto sim = simulate(desk(), Scene::flood(desk(), 1e4, 0.2), DetectorBehavior::ideal(), 14);
  const auto r = decode(sim.emission.tags, desk(), ideal_cal());
  const std::string s = summary_json(r);
  EXPECT_NE(s.find("\"fourfold\": " + std::to_string(r.events.size())), std::string::npos) << s;
  EXPECT_NE(s.find("\"assignment_rate\": 1.0"), std::string::npos) << s;
}
