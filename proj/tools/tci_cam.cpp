// tci-cam: simulate, calibrate, decode and analyze TCI tag streams.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tci/analysis.hpp"
#include "tci/calibration.hpp"
#include "tci/config.hpp"
#include "tci/decoder.hpp"
#include "tci/errors.hpp"
#include "tci/forward_sim.hpp"
#include "tci/io.hpp"
#include "tci/rng.hpp"
#include "tci/stats.hpp"
#include "tci/tagstream.hpp"

namespace {

constexpr const char* kVersion = "tci-cam 1.0.0 (tags TCI1 v1, calibration csv v1)";

int exit_code(tci::ErrorCategory c) {
  switch (c) {
    case tci::ErrorCategory::Usage: return 2;
    case tci::ErrorCategory::Config: return 3;
    case tci::ErrorCategory::Io: return 4;
    case tci::ErrorCategory::DataFormat: return 5;
    case tci::ErrorCategory::Data: return 6;
  }
  return 1;
}

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

tci::RunConfig resolve_config(const Globals& g) {
  std::string path = g.config_path;
  if (path.empty())
    if (const char* env = std::getenv("TCI_CAM_CONFIG")) path = env;
  tci::TomlTable table;
  if (!path.empty()) table = tci::parse_toml(tci::read_file(path));
  for (const auto& s : g.sets) tci::apply_override(table, s);
  if (g.seed) table[""]["seed"] = {static_cast<std::int64_t>(*g.seed)};
  if (g.threads) table[""]["threads"] = {static_cast<std::int64_t>(*g.threads)};
  tci::RunConfig config = tci::config_from_table(table);
  if (!path.empty()) {
    const std::filesystem::path p(path);
    config.base_dir = p.parent_path().empty() ? std::filesystem::path(".") : p.parent_path();
  }
  fmt::print(stderr, "tci-cam: config {} seed {} threads {}\n", tci::to_hex(tci::config_digest(config)), config.seed,
             config.threads);
  return config;
}

tci::DecodeOptions decode_options(const tci::RunConfig& c) {
  tci::DecodeOptions o;
  o.window_ps = std::llround(c.decoder.window_ns * 1000.0);
  o.assignment_halfwidth_ps = c.decoder.assignment_halfwidth_ps;
  o.threads = c.threads;
  return o;
}

void write_text(const std::string& path, const std::string& text) {
  tci::write_file_atomic(path, [&](std::ostream& out) { out << text; }, false);
}

std::string gnuplot_script(const std::string& csv, const std::string& title, const std::string& xlabel,
                           const std::string& ylabel, const std::string& plot, bool loglog) {
  std::string s;
  s += "set datafile separator ','\n";
  s += "set key top left\n";
  s += fmt::format("set title '{}'\nset xlabel '{}'\nset ylabel '{}'\n", title, xlabel, ylabel);
  if (loglog) s += "set logscale xy\n";
  s += fmt::format("csv = '{}'\n", csv);
  s += plot + "\n";
  return s;
}

std::filesystem::path script_path(const std::string& out) {
  return std::filesystem::path(out).replace_extension(".gp");
}

// ------------------------------------------------------------ subcommands

void run_simulate(const Globals& g, const std::string& out, const std::string& truth, bool csv) {
  const auto config = resolve_config(g);
  const auto array = tci::ArrayModel::build(config.array);
  const auto scene = tci::make_scene(config, array);
  const auto sim = tci::simulate(array, scene, config.behavior, config.seed, config.threads);
  const auto& tags = sim.emission.tags;
  if (csv || std::filesystem::path(out).extension() == ".csv")
    tci::write_file_atomic(out, [&](std::ostream& o) { tci::write_tags_csv(tags, o); }, false);
  else
    tci::write_tags_file(tags, out);
  if (!truth.empty()) {
    tci::write_file_atomic(
        truth,
        [&](std::ostream& o) {
          o << "t0_ps,row,col,origin,row_emitted,col_emitted\n";
          const auto& ev = sim.detections.events;
          for (std::size_t i = 0; i < ev.size(); ++i) {
            const char* origin = ev[i].origin == tci::EventOrigin::Photon    ? "photon"
                                 : ev[i].origin == tci::EventOrigin::DarkRow ? "dark_row"
                                                                             : "dark_col";
            o << fmt::format("{},{},{},{},{},{}\n", ev[i].t0, ev[i].row ? ev[i].row->index : -1,
                             ev[i].col ? ev[i].col->index : -1, origin, int(sim.emission.row_emitted[i]),
                             int(sim.emission.col_emitted[i]));
          }
        },
        false);
  }
  const auto& st = sim.detections.stats;
  fmt::print("photons {}\nin_area {}\ndetected {}\nfill_loss {}\nswitched_off {}\ndark_events {}\ntags {}\n",
             sim.photon_count, st.in_area, st.detected, st.fill_loss, st.switched_off, st.dark_events, tags.size());
  for (int b = 0; b < array.n_buses(); ++b)
    fmt::print("bus {} events {} dropped {}\n", b, sim.emission.stats.bus_events[b], sim.emission.stats.bus_dropped[b]);
}

void run_decode(const Globals& g, const std::string& tags_path, const std::string& cal_path,
                const std::string& out_image, const std::string& out_hits, const std::string& out_counts,
                const std::string& out_summary, std::optional<double> window_ns) {
  auto config = resolve_config(g);
  if (window_ns) config.decoder.window_ns = *window_ns;
  const auto array = tci::ArrayModel::build(config.array);
  const auto tags = tci::read_tags_file(tags_path);
  const auto cal = tci::read_calibration_file(cal_path);
  const auto result = tci::decode(tags, array, cal, decode_options(config));
  if (!out_image.empty()) tci::write_file_atomic(out_image, [&](std::ostream& o) { tci::write_pgm(result.image, o); });
  if (!out_counts.empty())
    tci::write_file_atomic(out_counts, [&](std::ostream& o) { tci::write_image_csv(result.image, o); }, false);
  if (!out_hits.empty())
    tci::write_file_atomic(out_hits, [&](std::ostream& o) { tci::write_hits_csv(result.hits, o); }, false);
  const std::string summary = tci::summary_json(result);
  if (!out_summary.empty()) write_text(out_summary, summary + "\n");
  fmt::print("{}\n", summary);
}

void run_calibrate(const Globals& g, const std::string& tags_path, const std::string& out, const std::string& out_hist,
                   const std::string& date) {
  const auto config = resolve_config(g);
  const auto array = tci::ArrayModel::build(config.array);
  const auto tags = tci::read_tags_file(tags_path);
  tci::CalibrateOptions opt;
  opt.window_ps = std::llround(config.decoder.window_ns * 1000.0);
  opt.bin_width_ps = config.decoder.bin_width_ps;
  opt.peaks.min_area = static_cast<std::uint64_t>(config.decoder.min_peak_area);
  opt.peaks.min_counts_per_detector = config.decoder.min_counts_per_detector;
  opt.peaks.max_missing_fraction = config.decoder.max_missing_fraction;
  opt.date = date;
  opt.threads = config.threads;
  const auto cal = tci::calibrate(tags, array, opt);
  tci::write_calibration_file(cal, out);
  if (!out_hist.empty()) {
    const auto hists = tci::bus_histograms(tags, array, opt.window_ps, opt.bin_width_ps, config.threads);
    tci::write_file_atomic(
        out_hist,
        [&](std::ostream& o) {
          o << "bus,dt_ps,count\n";
          for (const auto& h : hists)
            for (std::size_t i = 0; i < h.bins.size(); ++i)
              if (h.bins[i]) o << fmt::format("{},{},{}\n", h.bus, h.bin_center(i), h.bins[i]);
        },
        false);
  }
  std::size_t ok = 0, missing = 0;
  std::vector<double> seps;
  for (const auto& b : cal.buses()) {
    const tci::Peak* prev = nullptr;
    for (const auto& p : b.peaks) {
      if (p.status != tci::PeakStatus::Ok) {
        missing += p.status == tci::PeakStatus::Unilluminated;
        continue;
      }
      ++ok;
      if (prev) seps.push_back(p.center_ps - prev->center_ps);
      prev = &p;
    }
  }
  fmt::print("peaks_ok {}\npeaks_unilluminated {}\nmedian_separation_ps {:.1f}\n", ok, missing,
             seps.empty() ? 0.0 : tci::median(seps));
}

void run_prune(const Globals& g, const std::string& cal_path, const std::string& dark_path,
               const std::vector<std::string>& manual, std::optional<double> k, bool apply, const std::string& out) {
  auto config = resolve_config(g);
  if (k) config.decoder.anomaly_threshold = *k;
  const auto array = tci::ArrayModel::build(config.array);
  const auto cal = tci::read_calibration_file(cal_path);
  std::vector<tci::DetectorId> ids;
  if (!dark_path.empty()) {
    const auto dark = tci::read_tags_file(dark_path);
    std::vector<tci::DetectorArea> areas;
    for (const auto& h : tci::bus_histograms(dark, array, std::llround(config.decoder.window_ns * 1000.0),
                                             config.decoder.bin_width_ps, config.threads)) {
      const auto a = tci::detector_areas(h, array);
      areas.insert(areas.end(), a.begin(), a.end());
    }
    fmt::print("detector,area,excess_ratio\n");
    for (const auto& f : tci::flag_anomalous(areas, config.decoder.anomaly_threshold)) {
      fmt::print("{},{},{:.1f}\n", tci::to_string(f.id), f.area, f.excess_ratio);
      ids.push_back(f.id);
    }
  }
  for (const auto& m : manual) {
    const auto id = tci::parse_detector_id(m);
    if (!id) throw tci::UsageError(fmt::format("'{}' is not a detector name", m));
    if (!array.contains(*id)) throw tci::UnknownDetector(fmt::format("detector {} is not in the array", m));
    ids.push_back(*id);
  }
  const auto pruned = tci::prune(cal, array, ids);
  if (apply) tci::write_calibration_file(pruned, out.empty() ? cal_path : out);
}

void run_rate_curve(const Globals& g, const std::string& out) {
  const auto config = resolve_config(g);
  tci::RateSweepOptions opt;
  opt.array = config.array;
  opt.behavior = config.behavior;
  opt.max_incident_cps = config.analysis.rate_max_incident_cps;
  for (std::int64_t i = 0; i < config.analysis.rate_points; ++i)
    opt.attenuations_db.push_back(config.analysis.rate_step_db * static_cast<double>(i));
  opt.events_per_point = config.analysis.rate_events_per_point;
  opt.window_ps = std::llround(config.decoder.window_ns * 1000.0);
  opt.seed = config.seed;
  opt.threads = config.threads;
  const auto curve = tci::measure_rate_curve(opt);
  tci::write_file_atomic(
      out,
      [&](std::ostream& o) {
        o << "attenuation_db,incident_cps,measured_cps,model_cps\n";
        for (const auto& p : curve.points)
          o << fmt::format("{},{:.6g},{:.6g},{:.6g}\n", p.attenuation_db, p.incident_cps, p.measured_cps,
                           tci::blocking_model(p.incident_cps, curve.tau_dead_s));
      },
      false);
  write_text(script_path(out),
             gnuplot_script(out, "Count rate versus incident rate", "incident (cps)", "measured (cps)",
                            "plot csv using 2:3 skip 1 with points title 'four-fold', \\\n"
                            "     csv using 2:4 skip 1 with lines title 'non-paralyzable fit', \\\n"
                            "     x with lines dashtype 2 title 'slope 1'",
                            true));
  fmt::print("tau_dead_us {:.4f}\ncompression_3db_cps {}\nmax_measured_cps {:.4g}\n", curve.tau_dead_s * 1e6,
             curve.compression_3db_cps ? fmt::format("{:.4g}", *curve.compression_3db_cps) : std::string("none"),
             curve.points.empty() ? 0.0 : curve.points.back().measured_cps);
}

void run_jitter(const Globals& g, const std::string& out) {
  const auto config = resolve_config(g);
  const auto array = tci::ArrayModel::build(config.array);
  const auto scene = tci::Scene::pulsed(array, config.scene.pulse_period_ps, config.analysis.jitter_rate_cps,
                                        config.analysis.jitter_duration_s);
  const auto sim = tci::simulate(array, scene, config.behavior, config.seed, config.threads);
  const auto dec = tci::decode(sim.emission.tags, array, tci::Calibration::ideal(array), decode_options(config));
  const auto delays = tci::pulse_delays(dec.events, config.scene.pulse_period_ps);
  const auto js = tci::jitter_stats(delays, config.analysis.jitter_bin_ps);
  tci::write_file_atomic(
      out,
      [&](std::ostream& o) {
        o << "delay_ps,count\n";
        for (std::size_t i = 0; i < js.bins.size(); ++i)
          o << fmt::format("{},{}\n", js.lo_ps + static_cast<tci::Picoseconds>(i) * js.bin_width_ps, js.bins[i]);
      },
      false);
  write_text(script_path(out), gnuplot_script(out, "Detection delay", "delay (ps)", "counts",
                                              "plot csv using 1:2 skip 1 with steps title 'events'", false));
  fmt::print("events {}\nfwhm_ps {:.1f}\nstddev_ps {:.1f}\nmean_ps {:.1f}\ndt_fwhm_ps {:.1f}\n", js.count, js.fwhm_ps,
             js.stddev_ps, js.mean_ps, tci::pooled_dt_fwhm(dec.events, array, tci::Axis::Row));
}

void run_darks(const Globals& g, const std::string& out) {
  const auto config = resolve_config(g);
  const auto array = tci::ArrayModel::build(config.array);
  const auto& an = config.analysis;
  if (an.darks_detectors < 1 || an.darks_detectors > config.array.n_rows)
    throw tci::ConfigError(fmt::format("analysis.darks_detectors must be in [1, {}]", config.array.n_rows));
  tci::DetectorBehavior behavior = config.behavior;
  behavior.dark_rate_cps = an.darks_rate_cps;
  behavior.hot_dark_rate_cps = std::max(behavior.hot_dark_rate_cps, an.darks_rate_cps);
  behavior.defects.clear();
  std::set<tci::DetectorId> watched;
  for (int i = 0; i < an.darks_detectors; ++i) watched.insert({tci::Axis::Row, i});

  std::vector<std::uint64_t> totals;
  for (std::int64_t s = 0; s < an.darks_seeds; ++s) {
    const auto seed = tci::mix_seed(config.seed, static_cast<std::uint64_t>(tci::RngStream::Sweep),
                                    static_cast<std::uint64_t>(s));
    std::uint64_t n = 0;
    for (auto c : tci::count_dark_pairs(array, behavior, watched, an.darks_duration_s, seed,
                                        config.decoder.assignment_halfwidth_ps, config.threads))
      n += c;
    totals.push_back(n);
  }
  const double n_det = static_cast<double>(an.darks_detectors);
  tci::write_file_atomic(
      out,
      [&](std::ostream& o) {
        o << "run,counts,rate_cps,uncertainty_cps\n";
        for (std::size_t i = 0; i < totals.size(); ++i) {
          const auto e = tci::dark_rate_from_counts(totals[i], n_det, an.darks_duration_s);
          o << fmt::format("{},{},{:.4g},{:.4g}\n", i, totals[i], e.rate_cps, e.uncertainty_cps);
        }
      },
      false);
  write_text(script_path(out), gnuplot_script(out, "Dark counts per run", "run", "counts",
                                              "plot csv using 1:2 skip 1 with impulses title 'counts'", false));
  std::vector<double> values(totals.begin(), totals.end());
  const auto expect = tci::dark_count_estimate(n_det, an.darks_rate_cps, an.darks_duration_s);
  fmt::print("expected_counts {:.3g} (95% {}..{})\nmean_counts {:.3f}\n", expect.expected, expect.count_lo,
             expect.count_hi, tci::mean(values));
}

void run_scaling(const Globals& g, const std::string& out) {
  const auto config = resolve_config(g);
  tci::SaturationOptions opt;
  opt.array = config.array;
  opt.behavior = config.behavior;
  opt.tau_dead_1_s = static_cast<double>(config.behavior.bus_dead_time_ps) * 1e-12;
  opt.overdrive = config.analysis.scaling_overdrive;
  opt.duration_s = config.analysis.scaling_duration_s;
  opt.seed = config.seed;
  opt.threads = config.threads;
  std::vector<tci::SaturationResult> rows;
  for (int b : {1, 2}) rows.push_back(tci::measure_saturation(b, opt));
  tci::write_file_atomic(
      out,
      [&](std::ostream& o) {
        o << "buses_per_axis,incident_cps,measured_cps,model_array_max_cps\n";
        for (const auto& r : rows)
          o << fmt::format("{},{:.6g},{:.6g},{:.6g}\n", r.buses_per_axis, r.incident_cps, r.measured_cps,
                           r.model.array_max_cps);
      },
      false);
  write_text(script_path(out),
             gnuplot_script(out, "Saturation rate versus buses per axis", "buses per axis", "rate (cps)",
                            "plot csv using 1:3 skip 1 with points title 'Monte Carlo', \\\n"
                            "     csv using 1:4 skip 1 with linespoints title 'B^2 model'",
                            false));
  for (const auto& r : rows)
    fmt::print("B {} measured_cps {:.4g} model_cps {:.4g}\n", r.buses_per_axis, r.measured_cps, r.model.array_max_cps);
  fmt::print("ratio {:.3f}\n", rows[1].measured_cps / rows[0].measured_cps);
}

void run_describe(const Globals& g, const std::string& out) {
  const auto config = resolve_config(g);
  const auto array = tci::ArrayModel::build(config.array);
  auto write = [&](std::ostream& o) {
    o << "axis,index,bus,tau1_ps,tau2_ps,dt_expected_ps\n";
    for (tci::Axis axis : {tci::Axis::Row, tci::Axis::Column})
      for (int i = 0; i < array.n_detectors(axis); ++i) {
        const auto& addr = array.address({axis, i});
        const auto d = array.delay_for(addr);
        o << fmt::format("{},{},{},{},{},{}\n", tci::axis_name(axis), i, addr.bus_id, d.tau1, d.tau2,
                         d.dt_expected());
      }
  };
  if (out.empty() || out == "-")
    write(std::cout);
  else
    tci::write_file_atomic(out, write, false);
}

void run_inspect(const std::string& path) {
  const auto tags = tci::read_tags_file(path);
  fmt::print("version {}\narray_digest {}\ntags {}\n", tags.header().version, tci::to_hex(tags.header().array_digest),
             tags.size());
  for (int c = 0; c < tci::kChannelCount; ++c) {
    const auto ch = tags.channel(c);
    if (ch.empty()) {
      fmt::print("channel {} count 0\n", c);
      continue;
    }
    fmt::print("channel {} count {} first_ps {} last_ps {}\n", c, ch.size(), ch.front(), ch.back());
  }
}

std::vector<double> read_counts_csv(const std::string& path, int& rows, int& cols) {
  std::istringstream in(tci::read_file(path));
  std::vector<double> values;
  std::string line;
  rows = 0;
  cols = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int n = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw tci::FormatError(fmt::format("'{}' line {}: '{}' is not a number", path, rows + 1, cell));
      }
      ++n;
    }
    if (cols >= 0 && n != cols) throw tci::FormatError(fmt::format("'{}' line {} has {} columns", path, rows + 1, n));
    cols = n;
    ++rows;
  }
  return values;
}

void run_compare(const std::string& counts_path, const std::string& mask_path, double min_ncc) {
  int rows = 0, cols = 0;
  const auto counts = read_counts_csv(counts_path, rows, cols);
  const auto mask = tci::read_pgm_mask(mask_path, 1.0);
  if (mask.rows != rows || mask.cols != cols)
    throw tci::FormatError(
        fmt::format("image is {}x{} but mask is {}x{}", rows, cols, mask.rows, mask.cols));
  const double ncc = tci::normalized_cross_correlation(counts, mask.transmission);
  fmt::print("ncc {:.4f}\n", ncc);
  if (ncc < min_ncc) throw tci::Error(tci::ErrorCategory::Data, fmt::format("ncc {:.4f} is below {}", ncc, min_ncc));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TCI single-photon camera simulator and decoder"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (default: $TCI_CAM_CONFIG)");
  app.add_option("--set", g.sets, "Override a config key, section.key=value")->take_all();
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--threads", g.threads, "Worker threads; 1 is the reference mode")->check(CLI::PositiveNumber);
  app.fallthrough();

  std::function<void()> action;

  auto* sim = app.add_subcommand("simulate", "Simulate a scene into a tag stream");
  std::string sim_out, sim_truth;
  bool sim_csv = false;
  sim->add_option("--out", sim_out, "Tag file to write")->required();
  sim->add_option("--truth", sim_truth, "Also write ground-truth detection events as CSV");
  sim->add_flag("--csv", sim_csv, "Write CSV tags instead of TCI1");
  sim->callback([&] { action = [&] { run_simulate(g, sim_out, sim_truth, sim_csv); }; });

  auto* dec = app.add_subcommand("decode", "Decode a tag stream into an image");
  std::string dec_tags, dec_cal, dec_image, dec_hits, dec_counts, dec_summary;
  std::optional<double> dec_window;
  dec->add_option("--tags", dec_tags, "Tag file (TCI1 or CSV)")->required();
  dec->add_option("--cal", dec_cal, "Calibration CSV")->required();
  dec->add_option("--out-image", dec_image, "PGM image");
  dec->add_option("--out-hits", dec_hits, "Per-hit CSV");
  dec->add_option("--out-counts", dec_counts, "Exact counts CSV");
  dec->add_option("--summary", dec_summary, "Summary JSON file");
  dec->add_option("--window-ns", dec_window, "Coincidence window")->check(CLI::PositiveNumber);
  dec->callback([&] {
    action = [&] { run_decode(g, dec_tags, dec_cal, dec_image, dec_hits, dec_counts, dec_summary, dec_window); };
  });

  auto* cal = app.add_subcommand("calibrate", "Build peak tables from a flood acquisition");
  std::string cal_tags, cal_out, cal_hist, cal_date = "unspecified";
  cal->add_option("--tags", cal_tags, "Flood tag file")->required();
  cal->add_option("--out", cal_out, "Calibration CSV")->required();
  cal->add_option("--out-hist", cal_hist, "Per-bus delay histograms as CSV");
  cal->add_option("--date", cal_date, "Date recorded in the calibration header");
  cal->callback([&] { action = [&] { run_calibrate(g, cal_tags, cal_out, cal_hist, cal_date); }; });

  auto* pr = app.add_subcommand("prune", "Flag hot detectors from a dark acquisition and prune them");
  std::string pr_cal, pr_dark, pr_out;
  std::vector<std::string> pr_manual;
  std::optional<double> pr_k;
  bool pr_apply = false;
  pr->add_option("--cal", pr_cal, "Calibration CSV")->required();
  pr->add_option("--tags", pr_dark, "Dark acquisition tag file");
  pr->add_option("--k", pr_k, "Flag areas >= k x median (default decoder.anomaly_threshold)")
      ->check(CLI::PositiveNumber);
  pr->add_option("--detector", pr_manual, "Prune this detector too (R12, C3)");
  pr->add_flag("--apply", pr_apply, "Write the pruned calibration (otherwise only list flags)");
  pr->add_option("--out", pr_out, "Pruned calibration CSV (default: rewrite --cal)");
  pr->callback([&] { action = [&] { run_prune(g, pr_cal, pr_dark, pr_manual, pr_k, pr_apply, pr_out); }; });

  auto* an = app.add_subcommand("analyze", "Measurement routines");
  an->require_subcommand(1);
  an->fallthrough();
  std::string an_out;
  auto add_analysis = [&](const char* name, const char* help, void (*fn)(const Globals&, const std::string&)) {
    auto* s = an->add_subcommand(name, help);
    s->add_option("--out", an_out, "CSV output; a gnuplot script is written next to it")->required();
    s->fallthrough();
    s->callback([&, fn] { action = [&, fn] { fn(g, an_out); }; });
  };
  add_analysis("rate-curve", "Attenuation sweep and dead-time fit", run_rate_curve);
  add_analysis("jitter", "Detection delay histogram of a pulsed source", run_jitter);
  add_analysis("darks", "Dark count Monte Carlo", run_darks);
  add_analysis("scaling", "Saturation rate with one and two buses per axis", run_scaling);

  auto* arr = app.add_subcommand("array", "Array model");
  arr->require_subcommand(1);
  arr->fallthrough();
  auto* desc = arr->add_subcommand("describe", "Dump the delay table as CSV");
  std::string desc_out;
  desc->add_option("--out", desc_out, "CSV file (default stdout)");
  desc->fallthrough();
  desc->callback([&] { action = [&] { run_describe(g, desc_out); }; });

  auto* tg = app.add_subcommand("tags", "Tag files");
  tg->require_subcommand(1);
  auto* insp = tg->add_subcommand("inspect", "Print header and per-channel counts");
  std::string insp_tags;
  insp->add_option("--tags", insp_tags, "Tag file")->required();
  insp->callback([&] { action = [&] { run_inspect(insp_tags); }; });

  auto* img = app.add_subcommand("image", "Images");
  img->require_subcommand(1);
  auto* cmp = img->add_subcommand("compare", "Normalized cross-correlation of a counts CSV with a PGM mask");
  std::string cmp_counts, cmp_mask;
  double cmp_min = -1.0;
  cmp->add_option("--counts", cmp_counts, "Counts CSV from decode --out-counts")->required();
  cmp->add_option("--mask", cmp_mask, "PGM mask")->required();
  cmp->add_option("--min", cmp_min, "Fail below this correlation");
  cmp->callback([&] { action = [&] { run_compare(cmp_counts, cmp_mask, cmp_min); }; });

  auto* cfg = app.add_subcommand("config", "Configuration");
  cfg->require_subcommand(1);
  cfg->fallthrough();
  auto* defaults = cfg->add_subcommand("print-defaults", "Print the resolved configuration");
  defaults->fallthrough();
  defaults->callback([&] {
    action = [&] {
      Globals plain = g;
      plain.config_path.clear();
      // Defaults ignore the environment so the output is always the built-in set.
      tci::TomlTable table;
      for (const auto& s : plain.sets) tci::apply_override(table, s);
      fmt::print("{}", tci::to_toml(tci::config_from_table(table)));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help, --version
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    fmt::print(stderr, "error[usage]: {}\n", msg);
    return 2;
  }

  try {
    if (!action) throw tci::UsageError("no command given");
    action();
  } catch (const tci::Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    fmt::print(stderr, "error[{}]: {}\n", tci::category_name(e.category()), msg);
    return exit_code(e.category());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error[internal]: {}\n", e.what());
    return 1;
  }
  return 0;
}
