#include "tci/analysis.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "tci/calibration.hpp"
#include "tci/errors.hpp"
#include "tci/parallel.hpp"
#include "tci/rng.hpp"
#include "tci/stats.hpp"

namespace tci {

double blocking_model(double incident_cps, double tau_dead_s) {
  return incident_cps / (1.0 + incident_cps * tau_dead_s);
}

double fit_dead_time(std::span<const RatePoint> points) {
  std::vector<RatePoint> usable;
  for (const auto& p : points)
    if (p.measured_cps > 0 && p.incident_cps > 0) usable.push_back(p);
  if (usable.size() < 4) throw FitError(fmt::format("dead-time fit needs at least 4 points, got {}", usable.size()));

  auto cost = [&](double log_tau) {
    const double tau = std::exp(log_tau);
    double s = 0.0;
    for (const auto& p : usable) {
      const double r = (p.measured_cps - blocking_model(p.incident_cps, tau)) / p.measured_cps;
      s += r * r;
    }
    return s;
  };
  // Coarse grid to bracket the global minimum, then Brent inside the bracket.
  const double lo = std::log(1e-12), hi = std::log(1.0);
  const int n = 240;
  int best = 0;
  double best_cost = cost(lo);
  for (int i = 1; i <= n; ++i) {
    const double c = cost(lo + (hi - lo) * i / n);
    if (c < best_cost) {
      best_cost = c;
      best = i;
    }
  }
  if (best == 0 || best == n)
    throw FitError("dead-time fit did not converge: the sweep shows no compression");
  const double a = lo + (hi - lo) * (best - 1) / n;
  const double b = lo + (hi - lo) * (best + 1) / n;
  const auto [x, fx] = boost::math::tools::brent_find_minima(cost, a, b, 52);
  (void)fx;
  return std::exp(x);
}

std::optional<double> compression_point_3db(std::span<const RatePoint> points) {
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const auto& p = points[i];
    const auto& q = points[i + 1];
    if (p.incident_cps <= 0 || q.incident_cps <= 0) continue;
    const double rp = p.measured_cps / p.incident_cps;
    const double rq = q.measured_cps / q.incident_cps;
    if (rp >= 0.5 && rq < 0.5) {
      const double u = (rp - 0.5) / (rp - rq);
      return std::exp(std::log(p.incident_cps) + u * (std::log(q.incident_cps) - std::log(p.incident_cps)));
    }
  }
  return std::nullopt;
}

RateCurve measure_rate_curve(const RateSweepOptions& options) {
  const ArrayModel array = ArrayModel::build(options.array);
  DetectorBehavior behavior = options.behavior;
  behavior.fill_yield = 1.0;
  const double tau = static_cast<double>(behavior.bus_dead_time_ps) / 1e12;

  std::vector<double> atten = options.attenuations_db;
  if (atten.empty())
    for (int i = 0; i <= 20; ++i) atten.push_back(2.0 * i);

  // Lit pixels: odd rows and odd columns of the first section.
  const int s = std::min({options.array.section_size, options.array.n_rows, options.array.n_cols});
  MaskImage mask;
  mask.rows = s;
  mask.cols = s;
  mask.pitch_um = options.array.pitch_um;
  mask.transmission.assign(static_cast<std::size_t>(s) * s, 0.0);
  for (int r = 1; r < s; r += 2)
    for (int c = 1; c < s; c += 2) mask.transmission[static_cast<std::size_t>(r) * s + c] = 1.0;
  const double lit = mask.mean_transmission();
  const double efficiency = detection_efficiency(behavior.efficiency, behavior.bias_current_a);

  const Calibration cal = Calibration::ideal(array);
  std::vector<RatePoint> points(atten.size());
  parallel_chunks(atten.size(), 1, options.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const double incident = options.max_incident_cps * std::pow(10.0, -atten[i] / 10.0);
      const double duration = options.events_per_point / blocking_model(incident, tau);
      Scene scene{mask, incident / (lit * efficiency), duration};
      const std::uint64_t seed = mix_seed(options.seed, static_cast<std::uint64_t>(RngStream::Sweep), i);
      const auto sim = simulate(array, scene, behavior, seed, 1);
      DecodeOptions dopt;
      dopt.window_ps = options.window_ps;
      const auto dec = decode(sim.emission.tags, array, cal, dopt);
      points[i] = {atten[i], static_cast<double>(sim.detections.stats.detected) / duration,
                   static_cast<double>(dec.events.size()) / duration};
    }
  });
  std::sort(points.begin(), points.end(),
            [](const RatePoint& a, const RatePoint& b) { return a.incident_cps < b.incident_cps; });

  RateCurve curve;
  curve.points = std::move(points);
  curve.tau_dead_s = fit_dead_time(curve.points);
  curve.compression_3db_cps = compression_point_3db(curve.points);
  return curve;
}

std::vector<Picoseconds> pulse_delays(std::span<const FourFoldEvent> events, Picoseconds period_ps) {
  std::vector<Picoseconds> out;
  out.reserve(events.size());
  for (const auto& ev : events) {
    const Picoseconds t = ev.t0_col;
    Picoseconds q = (t + period_ps / 2) / period_ps;
    if (t + period_ps / 2 < 0 && (t + period_ps / 2) % period_ps != 0) --q;
    out.push_back(t - q * period_ps);
  }
  return out;
}

JitterStats jitter_stats(std::span<const Picoseconds> delays, Picoseconds bin_width_ps) {
  if (bin_width_ps <= 0) throw ConfigError("jitter bin width must be > 0");
  JitterStats js;
  js.bin_width_ps = bin_width_ps;
  js.count = delays.size();
  if (delays.empty()) return js;
  const auto [mn, mx] = std::minmax_element(delays.begin(), delays.end());
  auto floor_div = [](Picoseconds a, Picoseconds b) { return a / b - ((a % b != 0) && ((a < 0) != (b < 0))); };
  js.lo_ps = floor_div(*mn, bin_width_ps) * bin_width_ps;
  js.bins.assign(static_cast<std::size_t>((*mx - js.lo_ps) / bin_width_ps + 1), 0);
  std::vector<double> values;
  values.reserve(delays.size());
  for (Picoseconds d : delays) {
    ++js.bins[static_cast<std::size_t>((d - js.lo_ps) / bin_width_ps)];
    values.push_back(static_cast<double>(d));
  }
  js.mean_ps = mean(values);
  js.stddev_ps = values.size() > 1 ? stddev(values) : 0.0;
  js.fwhm_ps = fwhm_linear(js.bins, static_cast<double>(bin_width_ps));
  return js;
}

double pooled_dt_fwhm(std::span<const FourFoldEvent> events, const ArrayModel& array, Axis axis,
                      Picoseconds bin_width_ps) {
  const Calibration cal = Calibration::ideal(array);
  const Picoseconds half = std::max<Picoseconds>(array.hop_ps(), bin_width_ps);
  const auto n_bins = static_cast<std::size_t>(2 * half / bin_width_ps + 1);
  std::vector<std::uint64_t> bins(n_bins, 0);
  const double lo = -static_cast<double>(n_bins) * static_cast<double>(bin_width_ps) / 2.0;
  for (const auto& ev : events) {
    const BusPair& p = axis == Axis::Row ? ev.row_pair : ev.col_pair;
    const auto m = cal.nearest(p.bus, static_cast<double>(p.dt()));
    if (!m.peak) continue;
    const double k = std::floor((m.residual_ps - lo) / static_cast<double>(bin_width_ps));
    if (k >= 0 && k < static_cast<double>(n_bins)) ++bins[static_cast<std::size_t>(k)];
  }
  return fwhm_linear(bins, static_cast<double>(bin_width_ps));
}

ScalingPrediction scaling_model(int buses_per_axis, double tau_dead_1_s) {
  if (buses_per_axis < 1) throw ConfigError("bus count must be >= 1");
  const double b = buses_per_axis;
  return {b / tau_dead_1_s, b * b / tau_dead_1_s};
}

SaturationResult measure_saturation(int buses_per_axis, const SaturationOptions& options) {
  if (buses_per_axis != 1 && buses_per_axis != 2)
    throw ConfigError("saturation Monte Carlo supports 1 or 2 buses per axis");
  ArrayConfig config = options.array;
  config.n_buses = 2 * buses_per_axis;
  const ArrayModel array = ArrayModel::build(config);
  DetectorBehavior behavior = options.behavior;
  behavior.fill_yield = 1.0;
  behavior.bus_dead_time_ps = ps_from_seconds(options.tau_dead_1_s / buses_per_axis);

  SaturationResult out;
  out.buses_per_axis = buses_per_axis;
  out.model = scaling_model(buses_per_axis, options.tau_dead_1_s);
  const double rate = options.overdrive / options.tau_dead_1_s;
  const auto sim = simulate(array, Scene::flood(array, rate, options.duration_s), behavior, options.seed,
                            options.threads);
  out.incident_cps = static_cast<double>(sim.detections.stats.detected) / options.duration_s;
  std::uint64_t pairs = 0;
  for (const auto& info : array.buses())
    if (info.axis == Axis::Row) pairs += match_pairs(sim.emission.tags, info.bus_id).pairs.size();
  out.measured_cps = static_cast<double>(pairs) / options.duration_s;
  return out;
}

DarkExpectation dark_count_estimate(double n_detectors, double rate_per_detector_cps, double duration_s,
                                    double confidence) {
  if (!(n_detectors >= 0 && rate_per_detector_cps >= 0 && duration_s >= 0))
    throw ConfigError("dark count inputs must be >= 0");
  DarkExpectation e;
  e.expected = n_detectors * rate_per_detector_cps * duration_s;
  if (e.expected > 0) {
    const boost::math::poisson_distribution<> dist(e.expected);
    const double alpha = 1.0 - confidence;
    e.count_lo = boost::math::quantile(dist, alpha / 2);
    e.count_hi = boost::math::quantile(boost::math::complement(dist, alpha / 2));
  }
  return e;
}

DarkRateEstimate dark_rate_from_counts(std::uint64_t counts, double n_detectors, double duration_s,
                                       double confidence) {
  DarkRateEstimate e;
  const double exposure = n_detectors * duration_s;
  if (!(exposure > 0)) return e;
  const double k = static_cast<double>(counts);
  e.rate_cps = k / exposure;
  e.uncertainty_cps = std::sqrt(k) / exposure;
  const double alpha = 1.0 - confidence;
  if (counts > 0) e.ci_lo_cps = boost::math::quantile(boost::math::chi_squared(2 * k), alpha / 2) / 2 / exposure;
  e.ci_hi_cps = boost::math::quantile(boost::math::chi_squared(2 * k + 2), 1 - alpha / 2) / 2 / exposure;
  return e;
}

std::vector<std::uint64_t> count_dark_pairs(const ArrayModel& array, const DetectorBehavior& behavior,
                                            const std::set<DetectorId>& detectors, double duration_s,
                                            std::uint64_t seed, double halfwidth_ps, int threads) {
  const auto det = detect({}, array, behavior, ps_from_seconds(duration_s), seed, threads);
  const auto em = emit_tags(det.events, array, behavior, seed, threads);
  const Calibration cal = Calibration::ideal(array);
  std::map<DetectorId, std::uint64_t> counts;
  for (const auto& id : detectors) counts[id] = 0;
  for (const auto& info : array.buses()) {
    for (const auto& p : match_pairs(em.tags, info.bus_id).pairs) {
      const auto m = cal.nearest(info.bus_id, static_cast<double>(p.dt()));
      if (!m.peak || std::abs(m.residual_ps) > halfwidth_ps) continue;
      auto it = counts.find({info.axis, m.peak->detector});
      if (it != counts.end()) ++it->second;
    }
  }
  std::vector<std::uint64_t> out;
  for (const auto& [id, n] : counts) out.push_back(n);
  return out;
}

}  // namespace tci
