#include "tci/calibration.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "tci/errors.hpp"
#include "tci/io.hpp"
#include "tci/parallel.hpp"
#include "tci/stats.hpp"

namespace tci {

namespace {

struct BinRange {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

/// Bins whose centers fall in [a, b).
BinRange bins_between(const DelayHistogram& h, double a, double b) {
  const double w = static_cast<double>(h.bin_width);
  const double lo = static_cast<double>(h.lo);
  const auto clamp = [&](double v) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(h.bins.size())));
  };
  return {clamp(std::ceil((a - lo) / w - 0.5)), clamp(std::ceil((b - lo) / w - 0.5))};
}

/// One window per detector on the bus, split at midpoints between expected values.
std::vector<BinRange> detector_windows(const DelayHistogram& h, const ArrayModel& array, const BusInfo& info) {
  const std::size_t n = info.detectors.size();
  std::vector<double> expected(n);
  for (std::size_t k = 0; k < n; ++k)
    expected[k] = static_cast<double>(array.dt_expected({info.axis, info.detectors[k]}));
  std::vector<BinRange> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double left = k > 0 ? (expected[k] - expected[k - 1]) / 2 : -1.0;
    double right = k + 1 < n ? (expected[k + 1] - expected[k]) / 2 : -1.0;
    if (left < 0) left = right;
    if (right < 0) right = left;
    if (left < 0) left = right = static_cast<double>(info.tau_b) + static_cast<double>(h.bin_width);
    out[k] = bins_between(h, expected[k] - left, expected[k] + right);
  }
  return out;
}

std::span<const std::uint64_t> window_bins(const DelayHistogram& h, const BinRange& r) {
  return std::span<const std::uint64_t>(h.bins).subspan(r.lo, r.hi > r.lo ? r.hi - r.lo : 0);
}

std::uint64_t sum(std::span<const std::uint64_t> s) {
  std::uint64_t n = 0;
  for (auto v : s) n += v;
  return n;
}

PeakStatus parse_status(std::string_view s) {
  if (s == "ok") return PeakStatus::Ok;
  if (s == "pruned") return PeakStatus::Pruned;
  if (s == "unilluminated") return PeakStatus::Unilluminated;
  throw FormatError(fmt::format("unknown calibration status '{}'", s));
}

}  // namespace

const char* status_name(PeakStatus s) {
  switch (s) {
    case PeakStatus::Ok: return "ok";
    case PeakStatus::Unilluminated: return "unilluminated";
    case PeakStatus::Pruned: return "pruned";
  }
  return "?";
}

std::optional<std::size_t> DelayHistogram::bin_of(Picoseconds dt) const {
  if (dt < lo) return std::nullopt;
  const auto i = static_cast<std::size_t>((dt - lo) / bin_width);
  if (i >= bins.size()) return std::nullopt;
  return i;
}

DelayHistogram build_histogram(std::span<const BusPair> pairs, const ArrayModel& array, int bus,
                               Picoseconds bin_width) {
  if (bin_width <= 0) throw ConfigError("histogram bin width must be > 0");
  DelayHistogram h;
  h.bus = bus;
  h.bin_width = bin_width;
  // Detectors at the bus ends sit at exactly +-tau_b; one hop of margin
  // keeps their jitter tails in range.
  const Picoseconds reach = array.tau_b(bus) + std::max(array.hop_ps(), bin_width);
  h.lo = -reach;
  h.bins.assign(static_cast<std::size_t>((2 * reach) / bin_width + 1), 0);
  for (const auto& p : pairs) {
    if (auto i = h.bin_of(p.dt())) {
      ++h.bins[*i];
      ++h.total;
    } else {
      ++h.overflow;
    }
  }
  return h;
}

std::vector<DetectorArea> detector_areas(const DelayHistogram& hist, const ArrayModel& array) {
  const BusInfo& info = array.bus(hist.bus);
  const auto windows = detector_windows(hist, array, info);
  std::vector<DetectorArea> out(info.detectors.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = {{info.axis, info.detectors[k]}, sum(window_bins(hist, windows[k]))};
  return out;
}

std::vector<Peak> find_peaks(const DelayHistogram& hist, const ArrayModel& array, const PeakSearchOptions& options,
                             const std::set<DetectorId>& pruned) {
  const BusInfo& info = array.bus(hist.bus);
  const auto windows = detector_windows(hist, array, info);
  const double w = static_cast<double>(hist.bin_width);

  std::size_t live = 0;
  for (int d : info.detectors) live += pruned.contains({info.axis, d}) ? 0 : 1;
  if (live > 0 && static_cast<double>(hist.total) / static_cast<double>(live) < options.min_counts_per_detector)
    throw CalibrationError(fmt::format("bus {}: {} counts over {} detectors is below the {} per detector needed",
                                       hist.bus, hist.total, live, options.min_counts_per_detector));

  std::vector<Peak> peaks(info.detectors.size());
  std::size_t missing = 0;
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    const DetectorId id{info.axis, info.detectors[k]};
    const auto bins = window_bins(hist, windows[k]);
    Peak& p = peaks[k];
    p.detector = id.index;
    p.area = sum(bins);
    const bool enough = p.area >= options.min_area && !bins.empty();
    if (enough) {
      p.center_ps = centroid(bins, hist.bin_center(windows[k].lo), w);
      p.fwhm_ps = fwhm_linear(bins, w);
    } else {
      p.center_ps = static_cast<double>(array.dt_expected(id));
    }
    if (pruned.contains(id)) {
      p.status = PeakStatus::Pruned;
    } else if (!enough) {
      p.status = PeakStatus::Unilluminated;
      ++missing;
    }
  }
  if (static_cast<double>(missing) > options.max_missing_fraction * static_cast<double>(live))
    throw CalibrationError(fmt::format("bus {}: {} of {} expected peaks missing (insufficient flood data)", hist.bus,
                                       missing, live));

  std::vector<double> seps;
  double prev = 0.0;
  bool have_prev = false;
  for (const auto& p : peaks) {
    if (p.status != PeakStatus::Ok) continue;
    if (have_prev) seps.push_back(p.center_ps - prev);
    prev = p.center_ps;
    have_prev = true;
  }
  if (!seps.empty()) {
    const double med = median(seps);
    for (double s : seps)
      if (s < 0.8 * med)
        throw CalibrationError(fmt::format("bus {}: peak separation {:.1f} ps is below 0.8 x median ({:.1f} ps)",
                                           hist.bus, s, med));
  }
  return peaks;
}

// ------------------------------------------------------------ Calibration

Calibration::Calibration(std::vector<BusCalibration> buses, CalibrationProvenance provenance)
    : buses_(std::move(buses)), provenance_(std::move(provenance)) {
  reindex();
}

Calibration Calibration::ideal(const ArrayModel& array) {
  std::vector<BusCalibration> buses;
  for (const auto& info : array.buses()) {
    BusCalibration bc{info.bus_id, info.axis, {}};
    for (int d : info.detectors)
      bc.peaks.push_back({d, static_cast<double>(array.dt_expected({info.axis, d})), 0.0, 0, PeakStatus::Ok});
    buses.push_back(std::move(bc));
  }
  CalibrationProvenance prov;
  prov.array_digest = array.digest();
  return Calibration(std::move(buses), prov);
}

void Calibration::reindex() {
  lookup_.assign(buses_.size(), {});
  for (std::size_t b = 0; b < buses_.size(); ++b) {
    const auto& peaks = buses_[b].peaks;
    auto& idx = lookup_[b];
    for (std::size_t k = 0; k < peaks.size(); ++k)
      if (peaks[k].status != PeakStatus::Unilluminated) idx.push_back(k);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t c) { return peaks[a].center_ps < peaks[c].center_ps; });
  }
}

const BusCalibration* Calibration::bus(int bus_id) const {
  for (const auto& b : buses_)
    if (b.bus == bus_id) return &b;
  return nullptr;
}

std::set<DetectorId> Calibration::pruned() const {
  std::set<DetectorId> out;
  for (const auto& b : buses_)
    for (const auto& p : b.peaks)
      if (p.status == PeakStatus::Pruned) out.insert({b.axis, p.detector});
  return out;
}

Calibration::Match Calibration::nearest(int bus_id, double dt_ps) const {
  for (std::size_t b = 0; b < buses_.size(); ++b) {
    if (buses_[b].bus != bus_id) continue;
    const auto& peaks = buses_[b].peaks;
    const auto& idx = lookup_[b];
    if (idx.empty()) return {};
    auto it = std::lower_bound(idx.begin(), idx.end(), dt_ps,
                               [&](std::size_t k, double v) { return peaks[k].center_ps < v; });
    std::size_t best = it == idx.end() ? idx.back() : *it;
    if (it != idx.begin()) {
      const std::size_t before = *std::prev(it);
      if (it == idx.end() || dt_ps - peaks[before].center_ps <= peaks[*it].center_ps - dt_ps) best = before;
    }
    return {&peaks[best], dt_ps - peaks[best].center_ps};
  }
  throw CalibrationMissing(fmt::format("calibration has no table for bus {}", bus_id));
}

std::vector<DelayHistogram> bus_histograms(const TagStream& stream, const ArrayModel& array, Picoseconds window_ps,
                                           Picoseconds bin_width_ps, int threads) {
  const auto n = static_cast<std::size_t>(array.n_buses());
  std::vector<DelayHistogram> out(n);
  parallel_chunks(n, 1, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const auto match = match_pairs(stream, static_cast<int>(b), window_ps);
      out[b] = build_histogram(match.pairs, array, static_cast<int>(b), bin_width_ps);
    }
  });
  return out;
}

Calibration calibrate(const TagStream& flood, const ArrayModel& array, const CalibrateOptions& options) {
  const auto hists = bus_histograms(flood, array, options.window_ps, options.bin_width_ps, options.threads);
  std::vector<BusCalibration> buses;
  for (const auto& h : hists) {
    const BusInfo& info = array.bus(h.bus);
    buses.push_back({h.bus, info.axis, find_peaks(h, array, options.peaks, options.pruned)});
  }
  CalibrationProvenance prov;
  prov.array_digest = array.digest();
  std::ostringstream bytes;
  write_tags(flood, bytes);
  prov.source_digest = digest_of(bytes.str());
  prov.date = options.date;
  return Calibration(std::move(buses), prov);
}

std::vector<AnomalyFlag> flag_anomalous(std::span<const DetectorArea> areas, double k) {
  std::vector<double> values;
  values.reserve(areas.size());
  for (const auto& a : areas) values.push_back(static_cast<double>(a.area));
  const double reference = std::max(median(values), 1.0);
  std::vector<AnomalyFlag> out;
  for (const auto& a : areas) {
    const double ratio = static_cast<double>(a.area) / reference;
    if (static_cast<double>(a.area) >= k * reference) out.push_back({a.id, a.area, ratio});
  }
  return out;
}

Calibration prune(const Calibration& cal, const ArrayModel& array, std::span<const DetectorId> flags) {
  std::vector<BusCalibration> buses = cal.buses();
  for (const auto& id : flags) {
    const int bus_id = array.address(id).bus_id;
    auto it = std::find_if(buses.begin(), buses.end(), [&](const BusCalibration& b) { return b.bus == bus_id; });
    if (it == buses.end()) throw CalibrationMissing(fmt::format("calibration has no table for bus {}", bus_id));
    auto peak = std::find_if(it->peaks.begin(), it->peaks.end(), [&](const Peak& p) { return p.detector == id.index; });
    if (peak == it->peaks.end()) throw UnknownDetector("calibration has no entry for " + to_string(id));
    peak->status = PeakStatus::Pruned;
  }
  return Calibration(std::move(buses), cal.provenance());
}

// ------------------------------------------------------------------- CSV

void write_calibration(const Calibration& cal, std::ostream& out) {
  std::string date = cal.provenance().date;
  std::replace(date.begin(), date.end(), '\n', ' ');
  out << "# tci-calibration v1\n";
  out << "# array_digest=" << to_hex(cal.provenance().array_digest) << '\n';
  out << "# source_digest=" << to_hex(cal.provenance().source_digest) << '\n';
  out << "# date=" << date << '\n';
  out << "bus,axis,detector,center_ps,fwhm_ps,area,status\n";
  for (const auto& b : cal.buses())
    for (const auto& p : b.peaks)
      out << fmt::format("{},{},{},{:.3f},{:.3f},{},{}\n", b.bus, axis_name(b.axis), p.detector, p.center_ps,
                         p.fwhm_ps, p.area, status_name(p.status));
  if (!out) throw IoError("calibration write failed");
}

void write_calibration_file(const Calibration& cal, const std::filesystem::path& path) {
  write_file_atomic(path, [&](std::ostream& out) { write_calibration(cal, out); }, false);
}

Calibration read_calibration(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "# tci-calibration v1")
    throw FormatError("not a tci-calibration v1 file");
  CalibrationProvenance prov;
  std::size_t line_no = 1;
  while (in.peek() == '#' && std::getline(in, line)) {
    ++line_no;
    const auto eq = line.find('=');
    if (line.rfind("# ", 0) != 0 || eq == std::string::npos)
      throw FormatError(fmt::format("malformed calibration header at line {}", line_no));
    const std::string key = line.substr(2, eq - 2);
    const std::string value = line.substr(eq + 1);
    if (key == "array_digest" || key == "source_digest") {
      if (!from_hex(value, key == "array_digest" ? prov.array_digest : prov.source_digest))
        throw FormatError(fmt::format("bad digest at line {}", line_no));
    } else if (key == "date") {
      prov.date = value;
    } else {
      throw FormatError(fmt::format("unknown calibration header key '{}'", key));
    }
  }
  if (!std::getline(in, line) || line != "bus,axis,detector,center_ps,fwhm_ps,area,status")
    throw FormatError("calibration column header missing");
  ++line_no;

  std::vector<BusCalibration> buses;
  std::map<int, std::size_t> by_bus;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw FormatError(fmt::format("calibration line {} has {} fields, expected 7", line_no, f.size()));
    try {
      const int bus = std::stoi(f[0]);
      const Axis axis = f[1] == "row" ? Axis::Row : f[1] == "col" ? Axis::Column : throw FormatError("bad axis");
      Peak p;
      p.detector = std::stoi(f[2]);
      p.center_ps = std::stod(f[3]);
      p.fwhm_ps = std::stod(f[4]);
      p.area = std::stoull(f[5]);
      p.status = parse_status(f[6]);
      auto [it, inserted] = by_bus.try_emplace(bus, buses.size());
      if (inserted) buses.push_back({bus, axis, {}});
      if (buses[it->second].axis != axis)
        throw FormatError(fmt::format("bus {} mixes row and column entries", bus));
      buses[it->second].peaks.push_back(p);
    } catch (const FormatError& e) {
      throw FormatError(fmt::format("calibration line {}: {}", line_no, e.what()));
    } catch (const std::exception&) {
      throw FormatError(fmt::format("malformed calibration line {}: '{}'", line_no, line));
    }
  }
  return Calibration(std::move(buses), prov);
}

Calibration read_calibration_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open calibration file '{}'", path.string()));
  return read_calibration(in);
}

}  // namespace tci
