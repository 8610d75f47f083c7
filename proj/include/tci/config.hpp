#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tci/array_model.hpp"
#include "tci/digest.hpp"
#include "tci/forward_sim.hpp"

namespace tci {

struct SceneConfig {
  std::string kind = "flood";  // flood | gaussian | mask | pulsed
  double rate_cps = 1.0e4;
  double duration_s = 1.0;
  double center_x_um = 250.0;
  double center_y_um = 250.0;
  double sigma_um = 500.0;
  /// PGM file, relative paths resolved against the config file's directory.
  std::string mask;
  /// Mask pixel pitch; 0 means the array pitch.
  double mask_pitch_um = 0.0;
  Picoseconds pulse_period_ps = 10'000'000;

  bool operator==(const SceneConfig&) const = default;
};

struct DecoderConfig {
  double window_ns = 100.0;
  double assignment_halfwidth_ps = 79.0;
  Picoseconds bin_width_ps = 10;
  std::int64_t min_peak_area = 5;
  double min_counts_per_detector = 100.0;
  double max_missing_fraction = 0.2;
  double anomaly_threshold = 10.0;

  bool operator==(const DecoderConfig&) const = default;
};

struct AnalysisConfig {
  double rate_max_incident_cps = 1.0e7;
  double rate_step_db = 2.0;
  std::int64_t rate_points = 21;
  double rate_events_per_point = 1.0e4;
  Picoseconds jitter_bin_ps = 10;
  double jitter_rate_cps = 2000.0;
  double jitter_duration_s = 60.0;
  std::int64_t darks_detectors = 50;
  double darks_rate_cps = 1.0e-4;
  double darks_duration_s = 1000.0;
  std::int64_t darks_seeds = 20;
  double scaling_overdrive = 400.0;
  double scaling_duration_s = 0.05;

  bool operator==(const AnalysisConfig&) const = default;
};

/// Everything a run needs, resolved. Serializes to the same TOML subset it reads.
struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string array_preset = "desk";
  ArrayConfig array = ArrayConfig::desk();
  DetectorBehavior behavior;
  SceneConfig scene;
  DecoderConfig decoder;
  AnalysisConfig analysis;
  /// Directory relative paths are resolved against. Not serialized.
  std::filesystem::path base_dir = ".";

  bool operator==(const RunConfig& o) const;
};

/// A parsed value of the supported TOML subset: booleans, integers,
/// floats, basic strings, and single-line arrays of those.
struct TomlValue {
  std::variant<bool, std::int64_t, double, std::string, std::vector<TomlValue>> v;
  bool operator==(const TomlValue&) const = default;
};

/// section -> key -> value; top-level keys live in section "".
using TomlTable = std::map<std::string, std::map<std::string, TomlValue>>;

/// Throws ConfigError with the line number on malformed input.
TomlTable parse_toml(std::string_view text);
TomlValue parse_toml_value(std::string_view text);

/// Strict: unknown sections or keys are ConfigErrors.
RunConfig config_from_table(const TomlTable& table);
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies "section.key=value" (or "key=value" for top-level keys).
void apply_override(TomlTable& table, std::string_view assignment);

/// Full resolved configuration, every key present.
std::string to_toml(const RunConfig& config);

/// BLAKE2b of to_toml(config); logged with every run.
Digest config_digest(const RunConfig& config);

/// Builds the scene the config describes. Reads the mask file if any.
Scene make_scene(const RunConfig& config, const ArrayModel& array);

}  // namespace tci
