#include "tci/forward_sim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tci/errors.hpp"
#include "tci/io.hpp"
#include "tci/parallel.hpp"
#include "tci/rng.hpp"

namespace tci {

namespace {

constexpr double kPhotonsPerSlice = 65536.0;
constexpr std::size_t kChunk = 65536;

/// Integer-picosecond Poisson clock; keeps the fractional part of each
/// gap so long runs do not lose precision.
class PoissonClock {
 public:
  explicit PoissonClock(Picoseconds start) : t_(start) {}
  Picoseconds advance(Rng& rng, double mean_gap_ps) {
    const double gap = rng.exponential(mean_gap_ps) + frac_;
    const double whole = std::floor(gap);
    frac_ = gap - whole;
    // Saturate instead of overflowing on absurd gaps.
    if (whole > 9.0e18 - static_cast<double>(t_)) {
      t_ = std::numeric_limits<Picoseconds>::max();
    } else {
      t_ += static_cast<Picoseconds>(whole);
    }
    return t_;
  }

 private:
  Picoseconds t_;
  double frac_ = 0.0;
};

template <typename T>
std::vector<T> concat(std::vector<std::vector<T>>&& parts) {
  std::size_t n = 0;
  for (const auto& p : parts) n += p.size();
  std::vector<T> out;
  out.reserve(n);
  for (auto& p : parts) {
    out.insert(out.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
    std::vector<T>().swap(p);
  }
  return out;
}

struct PositionSampler {
  const Scene& scene;

  /// Returns false when the photon is absorbed by the scene (mask thinning).
  bool operator()(Rng& rng, double& x, double& y) const {
    return std::visit(
        [&](const auto& k) -> bool {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Flood> || std::is_same_v<K, PulsedUniform>) {
            x = rng.uniform() * k.width_um;
            y = rng.uniform() * k.height_um;
            return true;
          } else if constexpr (std::is_same_v<K, GaussianSpot>) {
            x = k.center_x_um + k.sigma_um * rng.normal();
            y = k.center_y_um + k.sigma_um * rng.normal();
            return true;
          } else {
            const double u = rng.uniform();
            const double v = rng.uniform();
            const int c = std::min(static_cast<int>(u * k.cols), k.cols - 1);
            const int r = std::min(static_cast<int>(v * k.rows), k.rows - 1);
            x = k.origin_x_um + u * k.cols * k.pitch_um;
            y = k.origin_y_um + v * k.rows * k.pitch_um;
            return rng.bernoulli(k.at(r, c));
          }
        },
        scene.kind);
  }
};

std::vector<PhotonEvent> poisson_photons(const Scene& scene, std::uint64_t seed, int threads) {
  const Picoseconds total = scene.duration_ps();
  const double expected = scene.mean_photon_rate * scene.duration_s;
  // Slices are fixed by the scene alone; each has its own substream.
  const auto n_slices = static_cast<std::size_t>(std::clamp(std::ceil(expected / kPhotonsPerSlice), 1.0,
                                                            static_cast<double>(std::max<Picoseconds>(total, 1))));
  const Picoseconds slice_len = (total + static_cast<Picoseconds>(n_slices) - 1) / static_cast<Picoseconds>(n_slices);
  const double mean_gap_ps = 1e12 / scene.mean_photon_rate;
  const PositionSampler sample{scene};

  std::vector<std::vector<PhotonEvent>> parts(n_slices);
  parallel_chunks(n_slices, 1, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      Rng rng(seed, RngStream::Photons, s);
      const Picoseconds lo = static_cast<Picoseconds>(s) * slice_len;
      const Picoseconds hi = std::min(total, lo + slice_len);
      PoissonClock clock(lo);
      auto& out = parts[s];
      out.reserve(static_cast<std::size_t>(expected / static_cast<double>(n_slices) * 1.1) + 16);
      while (true) {
        const Picoseconds t = clock.advance(rng, mean_gap_ps);
        if (t >= hi) break;
        PhotonEvent p{t, 0.0, 0.0};
        if (sample(rng, p.x_um, p.y_um)) out.push_back(p);
      }
    }
  });
  return concat(std::move(parts));
}

/// Poisson count conditioned on at least one photon, by sequential inversion.
std::uint64_t truncated_poisson(Rng& rng, double mu) {
  if (mu > 30.0) {
    std::uint64_t n = 0;
    while (n == 0) n = rng.poisson(mu);
    return n;
  }
  double term = mu * std::exp(-mu) / -std::expm1(-mu);
  double u = rng.uniform();
  std::uint64_t n = 1;
  while (u >= term && term > 0.0) {
    u -= term;
    ++n;
    term *= mu / static_cast<double>(n);
  }
  return n;
}

std::vector<PhotonEvent> pulsed_photons(const Scene& scene, const PulsedUniform& pulse, std::uint64_t seed,
                                        int threads) {
  const Picoseconds total = scene.duration_ps();
  const auto n_pulses = static_cast<std::size_t>((total - 1) / pulse.period_ps + 1);
  const double mu = scene.mean_photon_rate * seconds_from_ps(pulse.period_ps);
  const PositionSampler sample{scene};
  constexpr std::size_t kPulsesPerSlice = 65536;
  const std::size_t n_slices = (n_pulses + kPulsesPerSlice - 1) / kPulsesPerSlice;
  const double p_hit = -std::expm1(-mu);
  const double log_miss = -mu;

  std::vector<std::vector<PhotonEvent>> parts(n_slices);
  parallel_chunks(n_slices, 1, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      Rng rng(seed, RngStream::Photons, s);
      const std::size_t k_end = std::min(n_pulses, (s + 1) * kPulsesPerSlice);
      // Jump straight to the next non-empty pulse, then draw its count
      // from the zero-truncated Poisson law.
      std::size_t k = s * kPulsesPerSlice;
      while (p_hit > 0.0) {
        if (p_hit < 1.0) {
          const double skip = std::floor(std::log(rng.uniform_open()) / log_miss);
          if (skip >= static_cast<double>(k_end - k)) break;
          k += static_cast<std::size_t>(skip);
        }
        if (k >= k_end) break;
        const std::uint64_t n = truncated_poisson(rng, mu);
        for (std::uint64_t j = 0; j < n; ++j) {
          PhotonEvent p{static_cast<Picoseconds>(k) * pulse.period_ps, 0.0, 0.0};
          if (sample(rng, p.x_um, p.y_um)) parts[s].push_back(p);
        }
        ++k;
      }
    }
  });
  return concat(std::move(parts));
}

}  // namespace

// ------------------------------------------------------------------ scene

double MaskImage::mean_transmission() const {
  if (transmission.empty()) return 0.0;
  return std::accumulate(transmission.begin(), transmission.end(), 0.0) / static_cast<double>(transmission.size());
}

Scene Scene::flood(const ArrayModel& array, double rate, double duration_s) {
  return Scene{Flood{array.width_um(), array.height_um()}, rate, duration_s};
}

Scene Scene::pulsed(const ArrayModel& array, Picoseconds period_ps, double rate, double duration_s) {
  return Scene{PulsedUniform{period_ps, array.width_um(), array.height_um()}, rate, duration_s};
}

void Scene::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("scene: " + msg); };
  if (!(mean_photon_rate >= 0) || !std::isfinite(mean_photon_rate)) fail("mean_photon_rate must be >= 0");
  if (!(duration_s > 0) || !std::isfinite(duration_s)) fail("duration must be > 0");
  if (duration_s > 9.0e6) fail("duration must be below 9e6 s");
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Flood>) {
          if (!(k.width_um > 0 && k.height_um > 0)) fail("flood extent must be positive");
        } else if constexpr (std::is_same_v<K, GaussianSpot>) {
          if (!(k.sigma_um > 0)) fail("gaussian sigma must be > 0");
          if (!std::isfinite(k.center_x_um) || !std::isfinite(k.center_y_um)) fail("gaussian center must be finite");
        } else if constexpr (std::is_same_v<K, MaskImage>) {
          if (k.rows <= 0 || k.cols <= 0) fail("mask must have positive dimensions");
          if (k.transmission.size() != static_cast<std::size_t>(k.rows) * static_cast<std::size_t>(k.cols))
            fail("mask transmission size does not match rows*cols");
          if (!(k.pitch_um > 0)) fail("mask pitch must be > 0");
          for (double t : k.transmission)
            if (!(t >= 0.0 && t <= 1.0)) fail("mask transmission values must be in [0,1]");
        } else {
          if (k.period_ps <= 0) fail("pulse period must be > 0");
          if (!(k.width_um > 0 && k.height_um > 0)) fail("pulsed extent must be positive");
        }
      },
      kind);
}

MaskImage read_pgm_mask(const std::filesystem::path& path, double pitch_um) {
  const std::string data = read_file(path);
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    return data.substr(start, pos - start);
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P2") throw FormatError(fmt::format("'{}' is not a PGM file", path.string()));
  MaskImage m;
  m.pitch_um = pitch_um;
  int maxval = 0;
  try {
    m.cols = std::stoi(next_token());
    m.rows = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw FormatError(fmt::format("malformed PGM header in '{}'", path.string()));
  }
  if (m.cols <= 0 || m.rows <= 0 || maxval <= 0 || maxval > 255)
    throw FormatError(fmt::format("unsupported PGM geometry or maxval in '{}'", path.string()));
  const std::size_t n = static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols);
  m.transmission.resize(n);
  if (magic == "P5") {
    ++pos;  // single whitespace after maxval
    if (data.size() < pos + n) throw FormatError(fmt::format("truncated PGM raster in '{}'", path.string()));
    for (std::size_t i = 0; i < n; ++i)
      m.transmission[i] = static_cast<double>(static_cast<std::uint8_t>(data[pos + i])) / maxval;
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tok = next_token();
      if (tok.empty()) throw FormatError(fmt::format("truncated PGM raster in '{}'", path.string()));
      const int v = std::stoi(tok);
      if (v < 0 || v > maxval) throw FormatError("PGM value out of range");
      m.transmission[i] = static_cast<double>(v) / maxval;
    }
  }
  return m;
}

std::vector<PhotonEvent> generate_photons(const Scene& scene, std::uint64_t seed, int threads) {
  scene.validate();
  if (scene.mean_photon_rate == 0.0) return {};
  if (const auto* mask = std::get_if<MaskImage>(&scene.kind); mask && mask->mean_transmission() == 0.0) return {};
  if (const auto* pulse = std::get_if<PulsedUniform>(&scene.kind)) return pulsed_photons(scene, *pulse, seed, threads);
  return poisson_photons(scene, seed, threads);
}

// -------------------------------------------------------------- detection

double detection_efficiency(const EfficiencyCurve& curve, double bias_a) {
  const double z = (bias_a - curve.i_mid_a) / curve.i_width_a;
  return curve.plateau / (1.0 + std::exp(-z));
}

DetectorBehavior DetectorBehavior::ideal() {
  DetectorBehavior b;
  b.bias_current_a = 1.0;  // deep on the plateau: efficiency is exactly 1 in double precision
  b.dark_rate_cps = 0.0;
  b.hot_dark_rate_cps = 0.0;
  b.fill_yield = 1.0;
  b.bus_dead_time_ps = 0;
  b.geometric_jitter_width_ps = 0.0;
  b.tag_jitter_sigma_ps = 0.0;
  return b;
}

void DetectorBehavior::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("behavior: " + msg); };
  if (!(efficiency.plateau >= 0 && efficiency.plateau <= 1)) fail("plateau must be in [0,1]");
  if (!(efficiency.i_width_a > 0)) fail("i_width must be > 0");
  if (!(dark_rate_cps >= 0)) fail("dark_rate must be >= 0");
  if (!(hot_dark_rate_cps >= dark_rate_cps)) fail("hot_dark_rate must be >= dark_rate");
  if (bus_dead_time_ps < 0) fail("bus_dead_time must be >= 0");
  if (!(fill_yield >= 0 && fill_yield <= 1)) fail("fill_yield must be in [0,1]");
  if (!(geometric_jitter_width_ps >= 0)) fail("geometric_jitter_width must be >= 0");
  if (!(tag_jitter_sigma_ps >= 0)) fail("tag_jitter_sigma must be >= 0");
}

Detections detect(std::span<const PhotonEvent> photons, const ArrayModel& array, const DetectorBehavior& behavior,
                  Picoseconds duration_ps, std::uint64_t seed, int threads) {
  behavior.validate();
  for (const auto& id : behavior.defects)
    if (!array.contains(id)) throw UnknownDetector("defect list names unknown detector " + to_string(id));
  for (const auto& id : behavior.pruned)
    if (!array.contains(id)) throw UnknownDetector("prune list names unknown detector " + to_string(id));

  const double eta = detection_efficiency(behavior.efficiency, behavior.bias_current_a);
  Detections result;
  result.stats.photons = photons.size();

  // Photon clicks, chunked by photon index.
  const std::size_t n_chunks = (photons.size() + kChunk - 1) / kChunk;
  std::vector<std::vector<DetectionEvent>> parts(n_chunks);
  std::vector<DetectStats> chunk_stats(n_chunks);
  parallel_chunks(photons.size(), kChunk, threads, [&](std::size_t begin, std::size_t end) {
    const std::size_t c = begin / kChunk;
    auto& out = parts[c];
    auto& st = chunk_stats[c];
    for (std::size_t i = begin; i < end; ++i) {
      const PhotonEvent& p = photons[i];
      if (!std::isfinite(p.x_um) || !std::isfinite(p.y_um))
        throw GeometryError(fmt::format("photon {} has a non-finite position", i));
      const auto pixel = array.pixel_at(p.x_um, p.y_um);
      if (!pixel) continue;
      ++st.in_area;
      const DetectorId row{Axis::Row, pixel->row};
      const DetectorId col{Axis::Column, pixel->col};
      if (behavior.is_off(row) || behavior.is_off(col)) {
        ++st.switched_off;
        continue;
      }
      Rng rng(seed, RngStream::Detect, i);
      if (!(rng.uniform() < eta)) {
        ++st.efficiency_loss;
        continue;
      }
      if (!(rng.uniform() < behavior.fill_yield)) {
        ++st.fill_loss;
        continue;
      }
      ++st.detected;
      out.push_back({p.t, row, col, EventOrigin::Photon});
    }
  });
  for (const auto& st : chunk_stats) {
    result.stats.in_area += st.in_area;
    result.stats.switched_off += st.switched_off;
    result.stats.efficiency_loss += st.efficiency_loss;
    result.stats.fill_loss += st.fill_loss;
    result.stats.detected += st.detected;
  }

  // Dark counts, one independent Poisson process per detector.
  const auto n_det = static_cast<std::size_t>(array.n_detectors_total());
  const std::size_t dark_chunk = 64;
  std::vector<std::vector<DetectionEvent>> dark_parts((n_det + dark_chunk - 1) / dark_chunk);
  parallel_chunks(n_det, dark_chunk, threads, [&](std::size_t begin, std::size_t end) {
    auto& out = dark_parts[begin / dark_chunk];
    for (std::size_t f = begin; f < end; ++f) {
      const bool is_row = f < static_cast<std::size_t>(array.config().n_rows);
      const DetectorId id{is_row ? Axis::Row : Axis::Column,
                          static_cast<int>(is_row ? f : f - static_cast<std::size_t>(array.config().n_rows))};
      if (behavior.is_off(id)) continue;
      const double rate = behavior.defects.contains(id) ? behavior.hot_dark_rate_cps : behavior.dark_rate_cps;
      if (rate <= 0.0) continue;
      Rng rng(seed, RngStream::Dark, f);
      PoissonClock clock(0);
      const double mean_gap_ps = 1e12 / rate;
      while (true) {
        const Picoseconds t = clock.advance(rng, mean_gap_ps);
        if (t >= duration_ps) break;
        DetectionEvent ev;
        ev.t0 = t;
        if (is_row) {
          ev.row = id;
          ev.origin = EventOrigin::DarkRow;
        } else {
          ev.col = id;
          ev.origin = EventOrigin::DarkCol;
        }
        out.push_back(ev);
      }
    }
  });

  auto photon_events = concat(std::move(parts));
  auto dark_events = concat(std::move(dark_parts));
  result.stats.dark_events = dark_events.size();
  result.events = std::move(photon_events);
  result.events.insert(result.events.end(), dark_events.begin(), dark_events.end());
  std::stable_sort(result.events.begin(), result.events.end(),
                   [](const DetectionEvent& a, const DetectionEvent& b) { return a.t0 < b.t0; });
  return result;
}

// --------------------------------------------------------------- emission

Emission emit_tags(std::span<const DetectionEvent> events, const ArrayModel& array, const DetectorBehavior& behavior,
                   std::uint64_t seed, int threads) {
  behavior.validate();
  Emission em;
  em.tags = TagStream(array.digest());
  em.row_emitted.assign(events.size(), 0);
  em.col_emitted.assign(events.size(), 0);

  struct Survivor {
    std::uint32_t event;
    Axis axis;
    int bus;
    DetectorDelay delay;
  };
  std::vector<Survivor> survivors;
  survivors.reserve(events.size() * 2);
  std::vector<std::optional<Picoseconds>> last_fire(static_cast<std::size_t>(array.n_buses()));

  for (std::size_t i = 0; i < events.size(); ++i) {
    const DetectionEvent& ev = events[i];
    if (i > 0 && ev.t0 < events[i - 1].t0) throw OrderError("emit_tags: events must be time-ordered");
    for (Axis axis : {Axis::Row, Axis::Column}) {
      const auto& id = axis == Axis::Row ? ev.row : ev.col;
      if (!id) continue;
      const DetectorAddress& addr = array.address(*id);
      const int bus = addr.bus_id;
      ++em.stats.bus_events[bus];
      auto& last = last_fire[bus];
      if (last && ev.t0 - *last < behavior.bus_dead_time_ps) {
        ++em.stats.bus_dropped[bus];
        continue;
      }
      last = ev.t0;
      (axis == Axis::Row ? em.row_emitted : em.col_emitted)[i] = 1;
      survivors.push_back({static_cast<std::uint32_t>(i), axis, bus, array.delay_for(addr)});
    }
  }

  std::vector<std::pair<Picoseconds, Picoseconds>> times(survivors.size());
  const double width = behavior.geometric_jitter_width_ps;
  const double sigma = behavior.tag_jitter_sigma_ps;
  parallel_chunks(survivors.size(), kChunk, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s < end; ++s) {
      const Survivor& sv = survivors[s];
      Rng rng(seed, RngStream::Tags, 2ULL * sv.event + static_cast<std::uint64_t>(sv.axis));
      const double g = width > 0 ? rng.uniform() * width : 0.0;
      const double n1 = sigma > 0 ? rng.normal() * sigma : 0.0;
      const double n2 = sigma > 0 ? rng.normal() * sigma : 0.0;
      const Picoseconds t0 = events[sv.event].t0;
      times[s] = {t0 + sv.delay.tau1 + std::llround(g + n1), t0 + sv.delay.tau2 + std::llround(g + n2)};
    }
  });

  for (std::size_t s = 0; s < survivors.size(); ++s) {
    auto [t_pos, t_neg] = times[s];
    if (t_pos < 0) {
      t_pos = 0;
      ++em.stats.clamped_tags;
    }
    if (t_neg < 0) {
      t_neg = 0;
      ++em.stats.clamped_tags;
    }
    em.tags.mutable_channel(channel_of(survivors[s].bus, 0)).push_back(t_pos);
    em.tags.mutable_channel(channel_of(survivors[s].bus, 1)).push_back(t_neg);
  }
  for (int c = 0; c < kChannelCount; ++c) {
    auto& ch = em.tags.mutable_channel(c);
    std::sort(ch.begin(), ch.end());
  }
  return em;
}

SimulationResult simulate(const ArrayModel& array, const Scene& scene, const DetectorBehavior& behavior,
                          std::uint64_t seed, int threads) {
  SimulationResult r;
  const auto photons = generate_photons(scene, seed, threads);
  r.photon_count = photons.size();
  r.detections = detect(photons, array, behavior, scene.duration_ps(), seed, threads);
  r.emission = emit_tags(r.detections.events, array, behavior, seed, threads);
  return r;
}

}  // namespace tci
