#pragma once

// Plain-text file formats: scans, trajectories, configuration and
// simulator specs.

#include "smoothlo/config.hpp"
#include "smoothlo/evaluation.hpp"
#include "smoothlo/scan.hpp"
#include "smoothlo/sim.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smoothlo::io {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), file_(std::move(file)), line_(line) {}
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string_view strip_comment(std::string_view s) {
  const auto h = s.find('#');
  return trim(h == std::string_view::npos ? s : s.substr(0, h));
}

inline std::vector<std::string_view> split(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const auto b = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > b) out.push_back(s.substr(b, i - b));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for doubles rejects a leading '+'; accept it like strtod does
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  }
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && !s.empty();
}

inline bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "on" || s == "1" || s == "yes") return out = true, true;
  if (s == "false" || s == "off" || s == "0" || s == "no") return out = false, true;
  return false;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Scans
//
//   beams 32
//   points_per_line 512
//   min_range 0.5
//   max_range 100
//   timestamp 0.1
//   index 1
//   <line_index> <point_index> <x> <y> <z>
//   ...
//
// Only returns are listed; unlisted slots are missing returns.

struct ScanFile {
  int beams = 0;
  int points_per_line = 0;
  double min_range = 0.0;
  double max_range = 0.0;
  Scan scan;
};

inline void write_scan(std::ostream& os, const Scan& scan, double min_range, double max_range) {
  std::size_t width = 0;
  for (const auto& l : scan.lines) width = std::max(width, l.size());
  os << "beams " << scan.lines.size() << "\npoints_per_line " << width << "\nmin_range "
     << detail::format_double(min_range) << "\nmax_range " << detail::format_double(max_range) << "\ntimestamp "
     << detail::format_double(scan.timestamp) << "\nindex " << scan.index << '\n';
  for (std::size_t l = 0; l < scan.lines.size(); ++l) {
    for (std::size_t i = 0; i < scan.lines[l].size(); ++i) {
      if (!(scan.ranges[l][i] > 0.0)) continue;
      const auto& p = scan.lines[l][i];
      os << l << ' ' << i << ' ' << detail::format_double(p.x()) << ' ' << detail::format_double(p.y()) << ' '
         << detail::format_double(p.z()) << '\n';
    }
  }
}

inline ScanFile read_scan(std::istream& in, const std::string& name) {
  ScanFile f;
  bool have_beams = false, have_width = false, have_time = false;
  std::vector<int> last_index;
  std::string raw;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& what) { throw ParseError(name, lineno, what); };
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::strip_comment(raw);
    if (line.empty()) continue;
    const auto tok = detail::split(line);
    const bool header = std::isalpha(static_cast<unsigned char>(tok[0].front()));
    if (header) {
      if (!last_index.empty()) fail("header key '" + std::string(tok[0]) + "' after data rows");
      if (tok.size() != 2) fail("expected '<key> <value>'");
      const auto key = tok[0];
      bool ok = true;
      if (key == "beams") ok = detail::parse_number(tok[1], f.beams) && f.beams > 0, have_beams = true;
      else if (key == "points_per_line") ok = detail::parse_number(tok[1], f.points_per_line) && f.points_per_line > 0, have_width = true;
      else if (key == "min_range") ok = detail::parse_number(tok[1], f.min_range);
      else if (key == "max_range") ok = detail::parse_number(tok[1], f.max_range);
      else if (key == "timestamp") ok = detail::parse_number(tok[1], f.scan.timestamp), have_time = true;
      else if (key == "index") ok = detail::parse_number(tok[1], f.scan.index);
      else fail("unknown header key '" + std::string(key) + "'");
      if (!ok) fail("invalid value for '" + std::string(key) + "'");
      continue;
    }
    if (last_index.empty()) {
      if (!have_beams || !have_width || !have_time) fail("data row before beams, points_per_line and timestamp");
      last_index.assign(f.beams, -1);
      f.scan.lines.assign(f.beams, std::vector<Vector3>(f.points_per_line, Vector3::Zero()));
      f.scan.ranges.assign(f.beams, std::vector<double>(f.points_per_line, 0.0));
    }
    if (tok.size() != 5) fail("expected 'line_index point_index x y z'");
    int l = 0, i = 0;
    double x = 0, y = 0, z = 0;
    if (!detail::parse_number(tok[0], l) || !detail::parse_number(tok[1], i) || !detail::parse_number(tok[2], x) ||
        !detail::parse_number(tok[3], y) || !detail::parse_number(tok[4], z))
      fail("malformed row");
    if (l < 0 || l >= f.beams) fail("line_index out of range");
    if (i < 0 || i >= f.points_per_line) fail("point_index out of range");
    if (i <= last_index[l]) fail("point_index not increasing within line");
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) fail("non-finite coordinate");
    last_index[l] = i;
    f.scan.lines[l][i] = {x, y, z};
    f.scan.ranges[l][i] = f.scan.lines[l][i].norm();
  }
  if (last_index.empty()) {
    if (!have_beams || !have_width || !have_time) throw ParseError(name, lineno, "incomplete header");
    f.scan.lines.assign(f.beams, std::vector<Vector3>(f.points_per_line, Vector3::Zero()));
    f.scan.ranges.assign(f.beams, std::vector<double>(f.points_per_line, 0.0));
  }
  return f;
}

inline ScanFile read_scan(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return read_scan(in, path.string());
}

inline void write_scan(const std::filesystem::path& path, const Scan& scan, double min_range, double max_range) {
  auto out = detail::open_output(path);
  write_scan(out, scan, min_range, max_range);
}

inline std::string scan_filename(ScanId index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scan_%06lld.scan", static_cast<long long>(index));
  return buf;
}

/// Scan files of a directory in lexicographic order.
inline std::vector<std::filesystem::path> list_scans(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".scan") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Trajectories: "timestamp tx ty tz qx qy qz qw" per row.

inline void write_trajectory(std::ostream& os, const Trajectory& traj) {
  for (const auto& s : traj) {
    const auto q = s.pose.quaternion();
    const auto& t = s.pose.translation;
    os << detail::format_double(s.timestamp);
    for (double v : {t.x(), t.y(), t.z(), q.x(), q.y(), q.z(), q.w()}) os << ' ' << detail::format_double(v);
    os << '\n';
  }
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  auto out = detail::open_output(path);
  write_trajectory(out, traj);
}

inline Trajectory read_trajectory(std::istream& in, const std::string& name) {
  Trajectory traj;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::strip_comment(raw);
    if (line.empty()) continue;
    const auto tok = detail::split(line);
    if (tok.size() != 8) throw ParseError(name, lineno, "expected 'timestamp tx ty tz qx qy qz qw'");
    double v[8];
    for (int k = 0; k < 8; ++k)
      if (!detail::parse_number(tok[k], v[k]) || !std::isfinite(v[k])) throw ParseError(name, lineno, "malformed number");
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (std::abs(q.norm() - 1.0) > 1e-6) throw ParseError(name, lineno, "quaternion is not unit norm");
    if (!traj.empty() && !(v[0] > traj.back().timestamp)) throw ParseError(name, lineno, "timestamps not increasing");
    traj.push_back({v[0], Pose::from_quaternion(q, {v[1], v[2], v[3]})});
  }
  return traj;
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return read_trajectory(in, path.string());
}

// ---------------------------------------------------------------------------
// Configuration: "key = value" lines, '#' comments.

struct LoadedConfig {
  Config config;
  std::vector<std::string> defaulted;  // keys not present in the file
};

namespace detail {

using Setter = std::function<bool(Config&, std::string_view)>;

template <typename T>
Setter bind(T Config::*field) {
  return [field](Config& c, std::string_view v) {
    if constexpr (std::is_same_v<T, bool>) return parse_bool(v, c.*field);
    else return parse_number(v, c.*field);
  };
}

inline const std::vector<std::pair<std::string, Setter>>& config_keys() {
  static const std::vector<std::pair<std::string, Setter>> keys = {
      {"n_neighbor", bind(&Config::n_neighbor)},
      {"delta_map", bind(&Config::map_threshold)},
      {"delta_match", bind(&Config::match_threshold)},
      {"n_recent", bind(&Config::n_recent)},
      {"delta_key", bind(&Config::keyscan_threshold)},
      {"n_sectors", bind(&Config::n_sectors)},
      {"n_point", bind(&Config::n_point)},
      {"n_planar", bind(&Config::n_planar)},
      {"delta_planar", bind(&Config::planar_threshold)},
      {"delta_radius", bind(&Config::normal_radius)},
      {"n_icp", bind(&Config::max_icp_iterations)},
      {"delta_icp", bind(&Config::icp_tolerance)},
      {"n_key", bind(&Config::n_key)},
      {"n_marg", bind(&Config::n_marg)},
      {"smoothing", bind(&Config::smoothing)},
      {"point_features", bind(&Config::point_features)},
      {"min_range", bind(&Config::min_range)},
      {"max_range", bind(&Config::max_range)},
      {"lm_iterations", bind(&Config::lm_iterations)},
      {"lm_tolerance", bind(&Config::lm_tolerance)},
      {"anchor_sigma", bind(&Config::anchor_sigma)},
  };
  return keys;
}

}  // namespace detail

inline LoadedConfig parse_config(std::istream& in, const std::string& name) {
  LoadedConfig out;
  std::map<std::string, bool> seen;
  std::string raw;
  std::size_t lineno = 0;
  const auto& keys = detail::config_keys();
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::strip_comment(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(name, lineno, "expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& k) { return k.first == key; });
    if (it == keys.end()) throw ConfigError(key, "unknown parameter (" + name + ":" + std::to_string(lineno) + ")");
    if (!it->second(out.config, value))
      throw ConfigError(key, "invalid value '" + std::string(value) + "' (" + name + ":" + std::to_string(lineno) + ")");
    seen[key] = true;
  }
  for (const auto& [key, setter] : keys)
    if (!seen.count(key)) out.defaulted.push_back(key);
  out.config.validate();
  return out;
}

inline LoadedConfig load_config(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_config(in, path.string());
}

inline void write_config(std::ostream& os, const Config& c) {
  os << "n_neighbor = " << c.n_neighbor << "\ndelta_map = " << detail::format_double(c.map_threshold)
     << "\ndelta_match = " << detail::format_double(c.match_threshold) << "\nn_recent = " << c.n_recent
     << "\ndelta_key = " << detail::format_double(c.keyscan_threshold) << "\nn_sectors = " << c.n_sectors
     << "\nn_point = " << c.n_point << "\nn_planar = " << c.n_planar
     << "\ndelta_planar = " << detail::format_double(c.planar_threshold)
     << "\ndelta_radius = " << detail::format_double(c.normal_radius) << "\nn_icp = " << c.max_icp_iterations
     << "\ndelta_icp = " << detail::format_double(c.icp_tolerance) << "\nn_key = " << c.n_key
     << "\nn_marg = " << c.n_marg << "\nsmoothing = " << (c.smoothing ? "true" : "false")
     << "\npoint_features = " << (c.point_features ? "true" : "false")
     << "\nmin_range = " << detail::format_double(c.min_range)
     << "\nmax_range = " << detail::format_double(c.max_range) << "\nlm_iterations = " << c.lm_iterations
     << "\nlm_tolerance = " << detail::format_double(c.lm_tolerance)
     << "\nanchor_sigma = " << detail::format_double(c.anchor_sigma) << '\n';
}

// ---------------------------------------------------------------------------
// Simulator spec. First line "formsim v1", then sections:
//
//   [scene]      preset = room|corridor|forest|mixed|empty
//   [sensor]     beams, samples, fov_min, fov_max, min_range, max_range, noise_sigma, seed
//   [trajectory] kind = stationary|line|arc|waypoints|wander, speed, rate,
//                duration, radius, start = x y z yaw, wander_amplitude, seed,
//                pose_noise_sigma
//   [plane]      center = x y z, normal = x y z, axis_u = x y z, half_u, half_v
//   [pole]       base = x y z, radius, height
//   [waypoint]   time, position = x y z, yaw
//
// [plane], [pole] and [waypoint] may repeat; each adds one item.

struct SimSpec {
  sim::Scene scene;
  sim::SensorModel sensor;
  sim::TrajectorySpec trajectory;
};

inline SimSpec parse_sim_spec(std::istream& in, const std::string& name) {
  SimSpec spec;
  std::string raw;
  std::size_t lineno = 0;
  const auto fail = [&](const std::string& what) { throw ParseError(name, lineno, what); };

  // first non-empty line is the version header
  bool versioned = false;
  std::string section;
  std::map<std::string, std::string> fields;
  std::size_t section_line = 0;

  const auto number = [&](const char* key, double& out) {
    auto it = fields.find(key);
    if (it == fields.end()) return false;
    if (!detail::parse_number(std::string_view(it->second), out)) fail(std::string("invalid number for '") + key + "'");
    fields.erase(it);
    return true;
  };
  const auto integer = [&](const char* key, auto& out) {
    auto it = fields.find(key);
    if (it == fields.end()) return false;
    if (!detail::parse_number(std::string_view(it->second), out)) fail(std::string("invalid integer for '") + key + "'");
    fields.erase(it);
    return true;
  };
  const auto vec = [&](const char* key, std::size_t n, double* out) {
    auto it = fields.find(key);
    if (it == fields.end()) return false;
    const auto tok = detail::split(it->second);
    if (tok.size() != n) fail(std::string("expected ") + std::to_string(n) + " numbers for '" + key + "'");
    for (std::size_t k = 0; k < n; ++k)
      if (!detail::parse_number(tok[k], out[k])) fail(std::string("invalid number for '") + key + "'");
    fields.erase(it);
    return true;
  };
  const auto need = [&](bool present, const char* key) {
    if (!present) fail("[" + section + "] missing '" + key + "'");
  };

  const auto flush = [&] {
    if (section.empty()) return;
    const auto saved = lineno;
    lineno = section_line;
    if (section == "scene") {
      if (auto it = fields.find("preset"); it != fields.end()) {
        const auto extra = std::move(spec.scene);
        if (it->second != "empty") {
          try {
            spec.scene = sim::Scene::preset(it->second);
          } catch (const std::invalid_argument& e) {
            fail(e.what());
          }
        } else {
          spec.scene = {};
        }
        spec.scene.planes.insert(spec.scene.planes.end(), extra.planes.begin(), extra.planes.end());
        spec.scene.poles.insert(spec.scene.poles.end(), extra.poles.begin(), extra.poles.end());
        fields.erase(it);
      }
    } else if (section == "sensor") {
      auto& s = spec.sensor;
      integer("beams", s.beams);
      integer("samples", s.samples);
      number("fov_min", s.fov_min_deg);
      number("fov_max", s.fov_max_deg);
      number("min_range", s.min_range);
      number("max_range", s.max_range);
      number("noise_sigma", s.noise_sigma);
      integer("seed", s.seed);
    } else if (section == "trajectory") {
      auto& t = spec.trajectory;
      if (auto it = fields.find("kind"); it != fields.end()) {
        static const std::map<std::string, sim::TrajectoryKind> kinds = {
            {"stationary", sim::TrajectoryKind::stationary}, {"static", sim::TrajectoryKind::stationary},
            {"line", sim::TrajectoryKind::line},             {"arc", sim::TrajectoryKind::arc},
            {"waypoints", sim::TrajectoryKind::waypoints},   {"wander", sim::TrajectoryKind::wander}};
        const auto k = kinds.find(it->second);
        if (k == kinds.end()) fail("unknown trajectory kind '" + it->second + "'");
        t.kind = k->second;
        fields.erase(it);
      }
      number("speed", t.speed);
      number("rate", t.rate);
      number("duration", t.duration);
      number("radius", t.radius);
      number("wander_amplitude", t.wander_amplitude);
      number("pose_noise_sigma", t.pose_noise_sigma);
      integer("seed", t.seed);
      double start[4];
      if (vec("start", 4, start)) t.start = sim::planar_pose({start[0], start[1], start[2]}, start[3]);
    } else if (section == "plane") {
      double c[3], n[3], u[3], hu = 0, hv = 0;
      need(vec("center", 3, c), "center");
      need(vec("normal", 3, n), "normal");
      need(vec("axis_u", 3, u), "axis_u");
      need(number("half_u", hu), "half_u");
      need(number("half_v", hv), "half_v");
      const Vector3 nv(n[0], n[1], n[2]), uv(u[0], u[1], u[2]);
      if (nv.norm() < 1e-12 || uv.norm() < 1e-12 || std::abs(nv.normalized().dot(uv.normalized())) > 1e-9)
        fail("plane normal and axis_u must be nonzero and orthogonal");
      spec.scene.planes.push_back(sim::wall({c[0], c[1], c[2]}, nv, uv, hu, hv));
    } else if (section == "pole") {
      double b[3], r = 0, h = 0;
      need(vec("base", 3, b), "base");
      need(number("radius", r), "radius");
      need(number("height", h), "height");
      spec.scene.poles.push_back({{b[0], b[1], b[2]}, r, h});
    } else if (section == "waypoint") {
      double t = 0, p[3], yaw = 0;
      need(number("time", t), "time");
      need(vec("position", 3, p), "position");
      number("yaw", yaw);
      spec.trajectory.waypoints.push_back({t, {p[0], p[1], p[2]}, yaw});
    } else {
      fail("unknown section [" + section + "]");
    }
    if (!fields.empty()) fail("unknown key '" + fields.begin()->first + "' in [" + section + "]");
    lineno = saved;
  };

  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = detail::strip_comment(raw);
    if (line.empty()) continue;
    if (!versioned) {
      if (line != "formsim v1") fail("expected header 'formsim v1'");
      versioned = true;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header");
      flush();
      section = std::string(detail::trim(line.substr(1, line.size() - 2)));
      section_line = lineno;
      fields.clear();
      continue;
    }
    if (section.empty()) fail("key outside of a section");
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    const std::string key(detail::trim(line.substr(0, eq)));
    if (fields.count(key)) fail("duplicate key '" + key + "'");
    fields[key] = std::string(detail::trim(line.substr(eq + 1)));
  }
  if (!versioned) throw ParseError(name, lineno, "expected header 'formsim v1'");
  flush();
  try {
    spec.scene.validate();
    spec.sensor.validate();
    spec.trajectory.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(name, lineno, e.what());
  }
  return spec;
}

inline SimSpec load_sim_spec(const std::filesystem::path& path) {
  auto in = detail::open_input(path);
  return parse_sim_spec(in, path.string());
}

// ---------------------------------------------------------------------------
// Timing: "scan_index,timestamp,seconds" CSV.

template <typename Estimates>
void write_timing(std::ostream& os, const Estimates& estimates) {
  os << "scan_index,timestamp,seconds\n";
  for (const auto& e : estimates)
    os << e.scan << ',' << detail::format_double(e.timestamp) << ',' << detail::format_double(e.processing_seconds)
       << '\n';
}

}  // namespace smoothlo::io
