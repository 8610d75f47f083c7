#include "tci/config.hpp"

#include <fmt/format.h>

#include <cctype>
#include <charconv>
#include <set>

#include "tci/errors.hpp"
#include "tci/io.hpp"

namespace tci {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_bare_key(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

/// Drops a trailing comment, leaving '#' inside strings alone.
std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string && c == '\\') {
      ++i;
    } else if (c == '"') {
      in_string = !in_string;
    } else if (c == '#' && !in_string) {
      return line.substr(0, i);
    }
  }
  return line;
}

/// Splits an array body at top-level commas.
std::vector<std::string_view> split_items(std::string_view body) {
  std::vector<std::string_view> out;
  int depth = 0;
  bool in_string = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    const char c = body[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
    } else if (c == '"') {
      in_string = true;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      --depth;
    } else if (c == ',' && depth == 0) {
      out.push_back(trim(body.substr(start, i - start)));
      start = i + 1;
    }
  }
  const auto last = trim(body.substr(start));
  if (!last.empty()) out.push_back(last);
  return out;
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + '"';
}

const char* type_name(const TomlValue& v) {
  switch (v.v.index()) {
    case 0: return "boolean";
    case 1: return "integer";
    case 2: return "float";
    case 3: return "string";
    default: return "array";
  }
}

/// Typed, consuming view of one section; finish() rejects leftovers.
class SectionReader {
 public:
  SectionReader(const TomlTable& table, const std::string& name) : name_(name) {
    if (auto it = table.find(name); it != table.end()) values_ = &it->second;
  }

  void get(const char* key, double& out) {
    if (const auto* v = take(key)) {
      if (const auto* d = std::get_if<double>(&v->v)) out = *d;
      else if (const auto* i = std::get_if<std::int64_t>(&v->v)) out = static_cast<double>(*i);
      else mismatch(key, *v, "number");
    }
  }
  void get(const char* key, std::int64_t& out) {
    if (const auto* v = take(key)) {
      if (const auto* i = std::get_if<std::int64_t>(&v->v)) out = *i;
      else mismatch(key, *v, "integer");
    }
  }
  void get(const char* key, int& out) {
    std::int64_t wide = out;
    get(key, wide);
    if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max())
      throw ConfigError(fmt::format("{}: value out of range", path(key)));
    out = static_cast<int>(wide);
  }
  void get(const char* key, std::uint64_t& out) {
    std::int64_t wide = static_cast<std::int64_t>(out);
    get(key, wide);
    if (wide < 0) throw ConfigError(fmt::format("{} must be >= 0", path(key)));
    out = static_cast<std::uint64_t>(wide);
  }
  void get(const char* key, bool& out) {
    if (const auto* v = take(key)) {
      if (const auto* b = std::get_if<bool>(&v->v)) out = *b;
      else mismatch(key, *v, "boolean");
    }
  }
  void get(const char* key, std::string& out) {
    if (const auto* v = take(key)) {
      if (const auto* s = std::get_if<std::string>(&v->v)) out = *s;
      else mismatch(key, *v, "string");
    }
  }
  void get(const char* key, std::set<DetectorId>& out) {
    if (const auto* v = take(key)) {
      const auto* items = std::get_if<std::vector<TomlValue>>(&v->v);
      if (!items) mismatch(key, *v, "array of detector names");
      out.clear();
      for (const auto& item : *items) {
        const auto* s = std::get_if<std::string>(&item.v);
        const auto id = s ? parse_detector_id(*s) : std::nullopt;
        if (!id) throw ConfigError(fmt::format("{}: expected detector names like \"R12\" or \"C3\"", path(key)));
        out.insert(*id);
      }
    }
  }
  bool has(const char* key) const { return values_ && values_->contains(key); }

  void finish() const {
    if (!values_) return;
    for (const auto& [k, v] : *values_)
      if (!used_.contains(k)) throw ConfigError(fmt::format("unknown config key '{}'", path(k)));
  }

 private:
  const TomlValue* take(const std::string& key) {
    if (!values_) return nullptr;
    auto it = values_->find(key);
    if (it == values_->end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }
  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }
  [[noreturn]] void mismatch(const std::string& key, const TomlValue& v, const char* want) const {
    throw ConfigError(fmt::format("{}: expected {}, got {}", path(key), want, type_name(v)));
  }

  std::string name_;
  const std::map<std::string, TomlValue>* values_ = nullptr;
  std::set<std::string> used_;
};

std::string detector_list(const std::set<DetectorId>& ids) {
  std::string out = "[";
  for (const auto& id : ids) {
    if (out.size() > 1) out += ", ";
    out += quote(to_string(id));
  }
  return out + "]";
}

}  // namespace

bool RunConfig::operator==(const RunConfig& o) const { return to_toml(*this) == to_toml(o); }

TomlValue parse_toml_value(std::string_view text) {
  const auto s = trim(text);
  if (s.empty()) throw ConfigError("missing value");
  if (s == "true") return {true};
  if (s == "false") return {false};
  if (s.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < s.size() && s[i] != '"'; ++i) {
      if (s[i] == '\\') {
        if (++i >= s.size()) break;
        switch (s[i]) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: throw ConfigError(fmt::format("unsupported escape '\\{}'", s[i]));
        }
      } else {
        out += s[i];
      }
    }
    if (i != s.size() - 1) throw ConfigError(fmt::format("malformed string {}", s));
    return {out};
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError(fmt::format("unterminated array {}", s));
    std::vector<TomlValue> items;
    for (auto item : split_items(s.substr(1, s.size() - 2))) items.push_back(parse_toml_value(item));
    return {items};
  }
  std::string digits;
  for (char c : s)
    if (c != '_') digits += c;
  const char* first = digits.data() + (digits.front() == '+' ? 1 : 0);
  const char* last = digits.data() + digits.size();
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(first, last, i); ec == std::errc{} && p == last) return {i};
  double d = 0.0;
  if (auto [p, ec] = std::from_chars(first, last, d); ec == std::errc{} && p == last && std::isfinite(d)) return {d};
  throw ConfigError(fmt::format("cannot parse value '{}'", s));
}

TomlTable parse_toml(std::string_view text) {
  TomlTable table;
  table[""];
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const auto raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("malformed section header");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (!is_bare_key(section)) throw ConfigError(fmt::format("invalid section name '{}'", section));
        if (!table.try_emplace(section).second) throw ConfigError(fmt::format("duplicate section [{}]", section));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ConfigError("expected key = value");
      const std::string key(trim(line.substr(0, eq)));
      if (!is_bare_key(key)) throw ConfigError(fmt::format("invalid key '{}'", key));
      if (!table[section].try_emplace(key, parse_toml_value(line.substr(eq + 1))).second)
        throw ConfigError(fmt::format("duplicate key '{}'", key));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("config line {}: {}", line_no, e.what()));
    }
  }
  return table;
}

void apply_override(TomlTable& table, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw UsageError(fmt::format("override '{}' is not key=value", assignment));
  const auto path = trim(assignment.substr(0, eq));
  const auto value_text = trim(assignment.substr(eq + 1));
  const auto dot = path.find('.');
  const std::string section(dot == std::string_view::npos ? std::string_view{} : path.substr(0, dot));
  const std::string key(dot == std::string_view::npos ? path : path.substr(dot + 1));
  if (!is_bare_key(key) || (!section.empty() && !is_bare_key(section)))
    throw UsageError(fmt::format("override '{}' has an invalid key", assignment));
  TomlValue value;
  try {
    value = parse_toml_value(value_text);
  } catch (const ConfigError&) {
    value = {std::string(value_text)};  // bare words are strings on the command line
  }
  table[section][key] = std::move(value);
}

RunConfig config_from_table(const TomlTable& table) {
  for (const auto& [name, values] : table)
    if (!(name.empty() || name == "array" || name == "behavior" || name == "scene" || name == "decoder" ||
          name == "analysis"))
      throw ConfigError(fmt::format("unknown config section [{}]", name));

  RunConfig c;
  SectionReader top(table, "");
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  top.finish();
  if (c.threads < 1) throw ConfigError("threads must be >= 1");

  SectionReader a(table, "array");
  a.get("preset", c.array_preset);
  if (c.array_preset == "desk") c.array = ArrayConfig::desk();
  else if (c.array_preset == "full") c.array = ArrayConfig::full();
  else throw ConfigError(fmt::format("array.preset must be \"desk\" or \"full\", got \"{}\"", c.array_preset));
  a.get("n_rows", c.array.n_rows);
  a.get("n_cols", c.array.n_cols);
  a.get("pitch_um", c.array.pitch_um);
  a.get("section_size", c.array.section_size);
  a.get("n_buses", c.array.n_buses);
  a.get("inter_detector_bus_length_um", c.array.inter_detector_bus_length_um);
  if (a.has("inter_section_extra_bus_length_um")) {
    double v = 0.0;
    a.get("inter_section_extra_bus_length_um", v);
    c.array.inter_section_extra_bus_length_um = v;
  }
  a.get("bus_velocity_m_per_s", c.array.bus_velocity_m_per_s);
  a.get("detector_width_um", c.array.detector_width_um);
  a.get("delta_t_peak_spacing_target_ps", c.array.delta_t_peak_spacing_target_ps);
  a.get("bus_lead_length_um", c.array.bus_lead_length_um);
  a.finish();
  c.array.validate();

  SectionReader b(table, "behavior");
  auto& bh = c.behavior;
  b.get("bias_current_a", bh.bias_current_a);
  b.get("efficiency_mid_a", bh.efficiency.i_mid_a);
  b.get("efficiency_width_a", bh.efficiency.i_width_a);
  b.get("efficiency_plateau", bh.efficiency.plateau);
  b.get("dark_rate_cps", bh.dark_rate_cps);
  b.get("hot_dark_rate_cps", bh.hot_dark_rate_cps);
  b.get("defects", bh.defects);
  b.get("simulate_defects", bh.simulate_defects);
  b.get("pruned", bh.pruned);
  b.get("fill_yield", bh.fill_yield);
  b.get("bus_dead_time_ps", bh.bus_dead_time_ps);
  b.get("geometric_jitter_width_ps", bh.geometric_jitter_width_ps);
  b.get("tag_jitter_sigma_ps", bh.tag_jitter_sigma_ps);
  b.finish();
  bh.validate();
  for (const auto* list : {&bh.defects, &bh.pruned})
    for (const auto& id : *list)
      if (id.index >= (id.axis == Axis::Row ? c.array.n_rows : c.array.n_cols))
        throw ConfigError(fmt::format("behavior: detector {} is outside the {}x{} array", to_string(id),
                                      c.array.n_rows, c.array.n_cols));

  SectionReader s(table, "scene");
  s.get("kind", c.scene.kind);
  s.get("rate_cps", c.scene.rate_cps);
  s.get("duration_s", c.scene.duration_s);
  s.get("center_x_um", c.scene.center_x_um);
  s.get("center_y_um", c.scene.center_y_um);
  s.get("sigma_um", c.scene.sigma_um);
  s.get("mask", c.scene.mask);
  s.get("mask_pitch_um", c.scene.mask_pitch_um);
  s.get("pulse_period_ps", c.scene.pulse_period_ps);
  s.finish();
  if (c.scene.kind != "flood" && c.scene.kind != "gaussian" && c.scene.kind != "mask" && c.scene.kind != "pulsed")
    throw ConfigError(fmt::format("scene.kind must be flood, gaussian, mask or pulsed, got \"{}\"", c.scene.kind));
  if (c.scene.kind == "mask" && c.scene.mask.empty()) throw ConfigError("scene.kind = \"mask\" needs scene.mask");

  SectionReader d(table, "decoder");
  d.get("window_ns", c.decoder.window_ns);
  d.get("assignment_halfwidth_ps", c.decoder.assignment_halfwidth_ps);
  d.get("bin_width_ps", c.decoder.bin_width_ps);
  d.get("min_peak_area", c.decoder.min_peak_area);
  d.get("min_counts_per_detector", c.decoder.min_counts_per_detector);
  d.get("max_missing_fraction", c.decoder.max_missing_fraction);
  d.get("anomaly_threshold", c.decoder.anomaly_threshold);
  d.finish();
  if (!(c.decoder.window_ns > 0)) throw ConfigError("decoder.window_ns must be > 0");
  if (!(c.decoder.assignment_halfwidth_ps > 0)) throw ConfigError("decoder.assignment_halfwidth_ps must be > 0");
  if (c.decoder.bin_width_ps <= 0) throw ConfigError("decoder.bin_width_ps must be > 0");
  if (c.decoder.min_peak_area < 0) throw ConfigError("decoder.min_peak_area must be >= 0");

  SectionReader n(table, "analysis");
  auto& an = c.analysis;
  n.get("rate_max_incident_cps", an.rate_max_incident_cps);
  n.get("rate_step_db", an.rate_step_db);
  n.get("rate_points", an.rate_points);
  n.get("rate_events_per_point", an.rate_events_per_point);
  n.get("jitter_bin_ps", an.jitter_bin_ps);
  n.get("jitter_rate_cps", an.jitter_rate_cps);
  n.get("jitter_duration_s", an.jitter_duration_s);
  n.get("darks_detectors", an.darks_detectors);
  n.get("darks_rate_cps", an.darks_rate_cps);
  n.get("darks_duration_s", an.darks_duration_s);
  n.get("darks_seeds", an.darks_seeds);
  n.get("scaling_overdrive", an.scaling_overdrive);
  n.get("scaling_duration_s", an.scaling_duration_s);
  n.finish();
  if (an.rate_points < 4) throw ConfigError("analysis.rate_points must be >= 4");
  if (an.jitter_bin_ps <= 0) throw ConfigError("analysis.jitter_bin_ps must be > 0");
  if (an.darks_seeds < 1) throw ConfigError("analysis.darks_seeds must be >= 1");
  return c;
}

RunConfig parse_config(std::string_view text) { return config_from_table(parse_toml(text)); }

RunConfig load_config(const std::filesystem::path& path) {
  RunConfig c = parse_config(read_file(path));
  c.base_dir = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  return c;
}

std::string to_toml(const RunConfig& c) {
  std::string o;
  auto line = [&](std::string_view key, const auto& value) { o += fmt::format("{} = {}\n", key, value); };
  line("seed", c.seed);
  line("threads", c.threads);

  const auto& a = c.array;
  o += "\n[array]\n";
  line("preset", quote(c.array_preset));
  line("n_rows", a.n_rows);
  line("n_cols", a.n_cols);
  line("pitch_um", a.pitch_um);
  line("section_size", a.section_size);
  line("n_buses", a.n_buses);
  line("inter_detector_bus_length_um", a.inter_detector_bus_length_um);
  if (a.inter_section_extra_bus_length_um)
    line("inter_section_extra_bus_length_um", *a.inter_section_extra_bus_length_um);
  else
    o += "# inter_section_extra_bus_length_um: unset, five hops of bus\n";
  line("bus_velocity_m_per_s", a.bus_velocity_m_per_s);
  line("detector_width_um", a.detector_width_um);
  line("delta_t_peak_spacing_target_ps", a.delta_t_peak_spacing_target_ps);
  line("bus_lead_length_um", a.bus_lead_length_um);

  const auto& b = c.behavior;
  o += "\n[behavior]\n";
  line("bias_current_a", b.bias_current_a);
  line("efficiency_mid_a", b.efficiency.i_mid_a);
  line("efficiency_width_a", b.efficiency.i_width_a);
  line("efficiency_plateau", b.efficiency.plateau);
  line("dark_rate_cps", b.dark_rate_cps);
  line("hot_dark_rate_cps", b.hot_dark_rate_cps);
  line("defects", detector_list(b.defects));
  line("simulate_defects", b.simulate_defects);
  line("pruned", detector_list(b.pruned));
  line("fill_yield", b.fill_yield);
  line("bus_dead_time_ps", b.bus_dead_time_ps);
  line("geometric_jitter_width_ps", b.geometric_jitter_width_ps);
  line("tag_jitter_sigma_ps", b.tag_jitter_sigma_ps);

  const auto& s = c.scene;
  o += "\n[scene]\n";
  line("kind", quote(s.kind));
  line("rate_cps", s.rate_cps);
  line("duration_s", s.duration_s);
  line("center_x_um", s.center_x_um);
  line("center_y_um", s.center_y_um);
  line("sigma_um", s.sigma_um);
  line("mask", quote(s.mask));
  line("mask_pitch_um", s.mask_pitch_um);
  line("pulse_period_ps", s.pulse_period_ps);

  const auto& d = c.decoder;
  o += "\n[decoder]\n";
  line("window_ns", d.window_ns);
  line("assignment_halfwidth_ps", d.assignment_halfwidth_ps);
  line("bin_width_ps", d.bin_width_ps);
  line("min_peak_area", d.min_peak_area);
  line("min_counts_per_detector", d.min_counts_per_detector);
  line("max_missing_fraction", d.max_missing_fraction);
  line("anomaly_threshold", d.anomaly_threshold);

  const auto& n = c.analysis;
  o += "\n[analysis]\n";
  line("rate_max_incident_cps", n.rate_max_incident_cps);
  line("rate_step_db", n.rate_step_db);
  line("rate_points", n.rate_points);
  line("rate_events_per_point", n.rate_events_per_point);
  line("jitter_bin_ps", n.jitter_bin_ps);
  line("jitter_rate_cps", n.jitter_rate_cps);
  line("jitter_duration_s", n.jitter_duration_s);
  line("darks_detectors", n.darks_detectors);
  line("darks_rate_cps", n.darks_rate_cps);
  line("darks_duration_s", n.darks_duration_s);
  line("darks_seeds", n.darks_seeds);
  line("scaling_overdrive", n.scaling_overdrive);
  line("scaling_duration_s", n.scaling_duration_s);
  return o;
}

Digest config_digest(const RunConfig& config) { return digest_of(to_toml(config)); }

Scene make_scene(const RunConfig& c, const ArrayModel& array) {
  const auto& s = c.scene;
  Scene scene;
  if (s.kind == "flood") {
    scene = Scene::flood(array, s.rate_cps, s.duration_s);
  } else if (s.kind == "gaussian") {
    scene = Scene{GaussianSpot{s.center_x_um, s.center_y_um, s.sigma_um}, s.rate_cps, s.duration_s};
  } else if (s.kind == "mask") {
    std::filesystem::path p = s.mask;
    if (p.is_relative()) p = c.base_dir / p;
    const double pitch = s.mask_pitch_um > 0 ? s.mask_pitch_um : array.config().pitch_um;
    scene = Scene{read_pgm_mask(p, pitch), s.rate_cps, s.duration_s};
  } else if (s.kind == "pulsed") {
    scene = Scene::pulsed(array, s.pulse_period_ps, s.rate_cps, s.duration_s);
  } else {
    throw ConfigError(fmt::format("unknown scene kind \"{}\"", s.kind));
  }
  scene.validate();
  return scene;
}

}  // namespace tci
