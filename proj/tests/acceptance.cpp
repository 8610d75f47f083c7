// End-to-end acceptance run. One PASS/FAIL line per criterion; exit status
// is nonzero if any criterion fails.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "golden_cases.hpp"
#include "oracles.hpp"
#include "tci/analysis.hpp"
#include "tci/calibration.hpp"
#include "tci/decoder.hpp"
#include "tci/forward_sim.hpp"
#include "tci/io.hpp"
#include "tci/rng.hpp"
#include "tci/stats.hpp"

using namespace tci;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const ArrayModel& desk() { return golden::desk(); }

DetectorBehavior timing_only() {
  auto b = DetectorBehavior::ideal();
  b.tag_jitter_sigma_ps = 18.6;
  b.geometric_jitter_width_ps = 336.0;
  return b;
}

// Shared by criteria 3 and 8.
double g_dt_fwhm_flood = 0.0;

Outcome zero_noise_round_trip() {
  const auto t0 = std::chrono::steady_clock::now();
  // Block mask over the whole array: stripes of full, half and zero transmission.
  MaskImage m;
  m.rows = desk().config().n_rows;
  m.cols = desk().config().n_cols;
  m.pitch_um = desk().config().pitch_um;
  m.transmission.resize(static_cast<std::size_t>(m.rows) * m.cols);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) m.transmission[r * m.cols + c] = ((r / 10 + c / 10) % 3) * 0.5;
  // Without dead time, two events inside one coincidence window can pair
  // across each other; the rate keeps such coincidences out of the run.
  const auto sim = simulate(desk(), Scene{m, 2e3, 10.0}, DetectorBehavior::ideal(), 101);
  const auto r = decode(sim.emission.tags, desk(), Calibration::ideal(desk()));

  std::map<Picoseconds, std::vector<Pixel>> truth;
  for (const auto& ev : sim.detections.events) truth[ev.t0].push_back({ev.row->index, ev.col->index});
  std::size_t exact = 0;
  for (const auto& h : r.hits) {
    auto it = truth.find(h.t0);
    if (it == truth.end()) continue;
    auto& v = it->second;
    auto px = std::find(v.begin(), v.end(), Pixel{h.row, h.col});
    if (px == v.end()) continue;
    v.erase(px);
    ++exact;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::size_t n = sim.detections.events.size();
  return {n > 0 && exact == n && r.events.size() == n && secs < 10.0,
          fmt::format("{}/{} events at the generating pixel with exact t0, {} four-folds, {:.1f} s", exact, n,
                      r.events.size(), secs)};
}

Outcome peak_geometry() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto tags = simulate(desk(), Scene::flood(desk(), 1e5, 1.0), timing_only(), 102).emission.tags;
  const auto cal = calibrate(tags, desk());
  double worst = 0.0;
  std::vector<double> seps;
  std::size_t peaks = 0;
  for (const auto& b : cal.buses())
    for (std::size_t k = 0; k < b.peaks.size(); ++k) {
      const auto& p = b.peaks[k];
      worst = std::max(worst, std::abs(p.center_ps - static_cast<double>(desk().dt_expected({b.axis, p.detector}))));
      if (p.status == PeakStatus::Ok) ++peaks;
      if (k > 0) seps.push_back(p.center_ps - b.peaks[k - 1].center_ps);
    }
  const double med = median(seps);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {peaks == 200 && worst <= 10.0 && std::abs(med - 362.0) <= 3.62 && secs < 60.0,
          fmt::format("{} peaks, worst center offset {:.2f} ps, median separation {:.2f} ps, {:.1f} s", peaks, worst,
                      med, secs)};
}

Outcome peak_width() {
  const auto sim = simulate(desk(), Scene::flood(desk(), 1e5, 1.0), timing_only(), 103);
  const auto r = decode(sim.emission.tags, desk(), Calibration::ideal(desk()));
  const double row = pooled_dt_fwhm(r.events, desk(), Axis::Row);
  const double col = pooled_dt_fwhm(r.events, desk(), Axis::Column);
  g_dt_fwhm_flood = row;
  const bool ok = r.events.size() >= 10000 && std::abs(row - 62.0) <= 6.2 && std::abs(col - 62.0) <= 6.2;
  return {ok, fmt::format("pooled FWHM row {:.1f} ps, column {:.1f} ps over {} events", row, col, r.events.size())};
}

Outcome dead_time_curve() {
  const auto t0 = std::chrono::steady_clock::now();
  RateSweepOptions opt;
  opt.seed = 104;
  const auto curve = measure_rate_curve(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double c3 = curve.compression_3db_cps.value_or(0.0);
  const double max_measured =
      std::max_element(curve.points.begin(), curve.points.end(), [](const RatePoint& a, const RatePoint& b) {
        return a.measured_cps < b.measured_cps;
      })->measured_cps;
  const bool ok = std::abs(c3 - 1.09e5) <= 0.05e5 && std::abs(curve.tau_dead_s - 9.16e-6) <= 0.05 * 9.16e-6 &&
                  secs < 120.0;
  return {ok, fmt::format("3 dB point {:.3e} cps, fitted tau {:.3f} us, peak measured {:.3e} cps, {:.1f} s", c3,
                          curve.tau_dead_s * 1e6, max_measured, secs)};
}

Outcome dark_counts() {
  DetectorBehavior b = DetectorBehavior::ideal();
  b.dark_rate_cps = 1e-4;
  b.hot_dark_rate_cps = 1e-4;
  std::set<DetectorId> fifty;
  for (int i = 0; i < 25; ++i) {
    fifty.insert({Axis::Row, 2 * i});
    fifty.insert({Axis::Column, 2 * i + 1});
  }
  std::vector<double> totals;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto c = count_dark_pairs(desk(), b, fifty, 1000.0, mix_seed(105, s, 0));
    double sum = 0;
    for (auto k : c) sum += static_cast<double>(k);
    totals.push_back(sum);
  }
  const double m = mean(totals);
  const auto est = dark_rate_from_counts(5, 50, 1000);
  const bool ok = m >= 3.5 && m <= 6.5 && std::abs(est.rate_cps - 1e-4) < 1e-12 &&
                  std::abs(est.uncertainty_cps - 0.45e-4) <= 0.005e-4;
  return {ok, fmt::format("20-seed mean {:.2f} counts; 5 counts -> ({:.2f} +- {:.2f})e-4 cps per detector", m,
                          est.rate_cps * 1e4, est.uncertainty_cps * 1e4)};
}

Outcome pruning() {
  const auto full = ArrayModel::build(ArrayConfig::full());
  std::size_t exact_seeds = 0, false_pos = 0, missed = 0, leaked = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    DetectorBehavior b = DetectorBehavior::ideal();
    b.dark_rate_cps = 1e-4;
    b.hot_dark_rate_cps = 0.1;
    Rng rng(106, RngStream::Defects, s);
    while (b.defects.size() < 58) {
      const int flat = static_cast<int>(rng.below(1300));
      b.defects.insert(flat < 800 ? DetectorId{Axis::Row, flat} : DetectorId{Axis::Column, flat - 800});
    }
    const std::uint64_t seed = mix_seed(106, s, 1);
    const auto det = detect({}, full, b, ps_from_seconds(1000.0), seed);
    const auto tags = emit_tags(det.events, full, b, seed).tags;
    std::vector<DetectorArea> areas;
    for (const auto& h : bus_histograms(tags, full)) {
      const auto a = detector_areas(h, full);
      areas.insert(areas.end(), a.begin(), a.end());
    }
    std::set<DetectorId> flagged;
    for (const auto& f : flag_anomalous(areas, 10.0)) flagged.insert(f.id);
    std::size_t fp = 0, miss = 0;
    for (const auto& id : flagged) fp += b.defects.contains(id) ? 0 : 1;
    for (const auto& id : b.defects) miss += flagged.contains(id) ? 0 : 1;
    false_pos += fp;
    missed += miss;
    if (fp == 0 && miss == 0) ++exact_seeds;

    // Re-acquire with the flagged set disconnected, light on and darks on.
    const std::vector<DetectorId> flags(flagged.begin(), flagged.end());
    const auto cal = prune(Calibration::ideal(full), full, flags);
    DetectorBehavior after = b;
    after.pruned = flagged;
    after.fill_yield = 0.137;
    const auto sim = simulate(full, Scene::flood(full, 2e4, 2.0), after, mix_seed(106, s, 2));
    const auto r = decode(sim.emission.tags, full, cal);
    for (const auto& h : r.hits)
      if (flagged.contains({Axis::Row, h.row}) || flagged.contains({Axis::Column, h.col})) ++leaked;
    leaked += r.unassigned[static_cast<std::size_t>(UnassignedReason::Pruned)];
    const auto dark_after = count_dark_pairs(full, after, flagged, 1000.0, mix_seed(106, s, 3));
    for (auto k : dark_after) leaked += k;
  }
  return {exact_seeds == 20 && leaked == 0,
          fmt::format("exact flag set in {}/20 seeds ({} false positives, {} missed); {} events from pruned "
                      "detectors after pruning",
                      exact_seeds, false_pos, missed, leaked)};
}

Outcome fourfold_yield() {
  DetectorBehavior b;
  b.bus_dead_time_ps = 0;
  const auto sim = simulate(desk(), Scene::flood(desk(), 1e5, 1.5), b, 107);
  const auto r = decode(sim.emission.tags, desk(), Calibration::ideal(desk()));
  const double in_area = static_cast<double>(sim.detections.stats.in_area);
  const double frac = static_cast<double>(r.events.size()) / in_area;
  return {in_area >= 1e5 && std::abs(frac - 0.137) <= 0.01,
          fmt::format("{} four-folds from {:.0f} in-area photons: {:.2f}%", r.events.size(), in_area, 100 * frac)};
}

Outcome jitter() {
  const Picoseconds period = 10'000'000;
  // Three photons per thousand pulses, so pulses rarely carry two events.
  const auto sim = simulate(desk(), Scene::pulsed(desk(), period, 300, 60.0), timing_only(), 108);
  const auto r = decode(sim.emission.tags, desk(), Calibration::ideal(desk()));
  const auto s = jitter_stats(pulse_delays(r.events, period));
  const double dt_fwhm = pooled_dt_fwhm(r.events, desk(), Axis::Row);
  const bool ok = s.fwhm_ps >= 300.0 && s.fwhm_ps <= 370.0 && std::abs(dt_fwhm - 62.0) <= 6.2 &&
                  std::abs(dt_fwhm - g_dt_fwhm_flood) <= 5.0;
  return {ok, fmt::format("t0 delay FWHM {:.1f} ps, stddev {:.1f} ps (reported only); dt FWHM {:.1f} ps vs {:.1f} "
                          "ps without pulsing",
                          s.fwhm_ps, s.stddev_ps, dt_fwhm, g_dt_fwhm_flood)};
}

Outcome scaling() {
  SaturationOptions opt;
  opt.seed = 109;
  const auto one = measure_saturation(1, opt);
  const auto two = measure_saturation(2, opt);
  const double ratio = two.measured_cps / one.measured_cps;
  return {std::abs(ratio - 4.0) <= 0.4,
          fmt::format("B=1 saturates at {:.3e} cps, B=2 at {:.3e} cps: ratio {:.3f}", one.measured_cps,
                      two.measured_cps, ratio)};
}

Outcome oracle_equivalence() {
  Rng rng(110);
  auto times = [&](std::size_t n, Picoseconds span) {
    std::vector<Picoseconds> v(n);
    for (auto& t : v) t = static_cast<Picoseconds>(rng.below(static_cast<std::uint64_t>(span)));
    std::sort(v.begin(), v.end());
    return v;
  };
  std::size_t pair_ok = 0, four_ok = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t total = 2 + rng.below(19);
    const std::size_t np = rng.below(total + 1);
    const Picoseconds span = 20 + static_cast<Picoseconds>(rng.below(400));
    const Picoseconds window = static_cast<Picoseconds>(rng.below(120));
    const auto pos = times(np, span);
    const auto neg = times(total - np, span);
    const auto got = match_pairs(pos, neg, 0, window);
    std::vector<oracle::Pair> g;
    for (const auto& p : got.pairs) g.push_back({p.pos_index, p.neg_index});
    if (g == oracle::greedy_pairs(pos, neg, window)) ++pair_ok;
  }
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n_pairs = 1 + rng.below(10);
    const std::size_t n_rows = rng.below(n_pairs + 1);
    const Picoseconds span = 50 + static_cast<Picoseconds>(rng.below(400));
    const Picoseconds window = 20 + static_cast<Picoseconds>(rng.below(150));
    std::vector<BusPair> rows, cols;
    for (std::size_t i = 0; i < n_pairs; ++i) {
      const bool row = i < n_rows;
      BusPair p;
      p.bus = (row ? 0 : 2) + static_cast<int>(rng.below(2));
      p.t_pos = static_cast<Picoseconds>(rng.below(static_cast<std::uint64_t>(span)));
      p.t_neg = static_cast<Picoseconds>(rng.below(static_cast<std::uint64_t>(span)));
      p.pos_index = static_cast<std::uint32_t>(i);
      (row ? rows : cols).push_back(p);
    }
    auto by_earliest = [](const BusPair& a, const BusPair& b) { return a.earliest() < b.earliest(); };
    std::stable_sort(rows.begin(), rows.end(), by_earliest);
    std::stable_sort(cols.begin(), cols.end(), by_earliest);
    const auto got = match_fourfold(rows, cols, desk(), window);
    const auto want = oracle::greedy_fourfold(rows, cols, desk(), window);
    auto index_of = [](const std::vector<BusPair>& v, const BusPair& p) {
      return static_cast<std::size_t>(std::find(v.begin(), v.end(), p) - v.begin());
    };
    std::vector<std::pair<std::size_t, std::size_t>> a, b;
    for (const auto& ev : got.events) a.emplace_back(index_of(rows, ev.row_pair), index_of(cols, ev.col_pair));
    for (const auto& w : want) b.emplace_back(w.row, w.col);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a == b) ++four_ok;
  }
  return {pair_ok == 1000 && four_ok == 1000,
          fmt::format("pairs {}/1000, four-folds {}/1000 streams match the brute-force oracle", pair_ok, four_ok)};
}

Outcome format_stability() {
  const std::filesystem::path dir = TCI_GOLDEN_DIR;
  std::vector<std::string> problems;
  auto same_as_golden = [&](const std::string& name, const std::string& bytes) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path))
      problems.push_back(name + " missing");
    else if (read_file(path) != bytes)
      problems.push_back(name + " differs");
  };
  const std::string tci_bytes = golden::flood_tci();
  same_as_golden("flood.tci", tci_bytes);
  same_as_golden("flood_hits.csv", golden::flood_hits_csv());
  const std::string cal_text = golden::calibration_csv();
  same_as_golden("calibration.csv", cal_text);

  std::istringstream tin(tci_bytes);
  std::ostringstream tout(std::ios::binary);
  write_tags(read_tags(tin), tout);
  if (tout.str() != tci_bytes) problems.push_back("TCI1 round trip");
  std::istringstream cin(cal_text);
  std::ostringstream cout;
  write_calibration(read_calibration(cin), cout);
  if (cout.str() != cal_text) problems.push_back("calibration CSV round trip");

  auto pipeline = [&](int threads) {
    const auto sim = simulate(desk(), Scene::flood(desk(), 3e5, 0.5), DetectorBehavior{}, 111, threads);
    DecodeOptions opt;
    opt.threads = threads;
    const auto r = decode(sim.emission.tags, desk(), Calibration::ideal(desk()), opt);
    std::ostringstream out(std::ios::binary);
    write_tags(sim.emission.tags, out);
    write_hits_csv(r.hits, out);
    write_pgm(r.image, out);
    return out.str();
  };
  if (pipeline(1) != pipeline(4)) problems.push_back("threads 4 output differs from threads 1");

  std::string detail = "golden files match, round trips bit-exact, threads 1 == threads 4";
  if (!problems.empty()) {
    detail.clear();
    for (const auto& p : problems) detail += (detail.empty() ? "" : "; ") + p;
  }
  return {problems.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"zero-noise round trip", zero_noise_round_trip},
      {"dt peak geometry", peak_geometry},
      {"peak width", peak_width},
      {"dead-time curve", dead_time_curve},
      {"dark counts", dark_counts},
      {"pruning", pruning},
      {"four-fold yield", fourfold_yield},
      {"jitter", jitter},
      {"bus scaling", scaling},
      {"oracle equivalence", oracle_equivalence},
      {"format stability", format_stability},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    fmt::print("{} {:>2} {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
