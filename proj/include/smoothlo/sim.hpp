#pragma once

// Deterministic synthetic LiDAR: scenes of bounded planes and vertical poles,
// a rotating multi-beam sensor, and scripted ground-truth trajectories.

#include "smoothlo/evaluation.hpp"
#include "smoothlo/scan.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace smoothlo::sim {

/// Rectangle centered at `center`, spanned by axis_u and normal x axis_u.
struct PlaneSurface {
  Vector3 center;
  Vector3 normal;
  Vector3 axis_u;
  double half_u;
  double half_v;

  Vector3 axis_v() const { return normal.cross(axis_u); }
};

/// Vertical cylinder standing on `base`.
struct Pole {
  Vector3 base;
  double radius;
  double height;
};

struct Scene {
  std::vector<PlaneSurface> planes;
  std::vector<Pole> poles;

  bool empty() const { return planes.empty() && poles.empty(); }

  void validate() const {
    for (const auto& p : planes)
      if (!(p.half_u > 0.0 && p.half_v > 0.0)) throw std::invalid_argument("plane extents must be positive");
    for (const auto& p : poles)
      if (!(p.radius > 0.0 && p.height > 0.0)) throw std::invalid_argument("pole radius and height must be positive");
  }

  static Scene preset(const std::string& name);
};

struct SensorModel {
  int beams = 32;
  int samples = 512;  // per revolution
  double fov_min_deg = -16.0;
  double fov_max_deg = 15.0;
  double min_range = 0.5;
  double max_range = 100.0;
  double noise_sigma = 0.01;  // range noise, meters
  std::uint64_t seed = 1;

  void validate() const {
    if (beams < 2) throw std::invalid_argument("sensor needs at least 2 beams");
    if (samples < 1) throw std::invalid_argument("sensor needs at least 1 sample per revolution");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
    if (!(max_range > min_range)) throw std::invalid_argument("max range must exceed min range");
  }

  double elevation(int beam) const {
    const double lo = fov_min_deg * std::numbers::pi / 180.0;
    const double hi = fov_max_deg * std::numbers::pi / 180.0;
    return lo + (hi - lo) * beam / (beams - 1);
  }

  double azimuth(int sample) const { return 2.0 * std::numbers::pi * sample / samples; }

  Vector3 direction(int beam, int sample) const {
    const double el = elevation(beam), az = azimuth(sample);
    return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
  }
};

inline constexpr double kNoHit = std::numeric_limits<double>::infinity();

inline double intersect(const PlaneSurface& p, const Vector3& o, const Vector3& d) {
  const double denom = p.normal.dot(d);
  if (std::abs(denom) < 1e-12) return kNoHit;
  const double t = p.normal.dot(p.center - o) / denom;
  if (!(t > 1e-9)) return kNoHit;
  const Vector3 rel = o + t * d - p.center;
  if (std::abs(rel.dot(p.axis_u)) > p.half_u || std::abs(rel.dot(p.axis_v())) > p.half_v) return kNoHit;
  return t;
}

inline double intersect(const Pole& p, const Vector3& o, const Vector3& d) {
  const double ox = o.x() - p.base.x(), oy = o.y() - p.base.y();
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-12) return kNoHit;
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double c = ox * ox + oy * oy - p.radius * p.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return kNoHit;
  const double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (!(t > 1e-9)) continue;
    const double z = o.z() + t * d.z();
    if (z >= p.base.z() && z <= p.base.z() + p.height) return t;
  }
  return kNoHit;
}

/// Distance along the ray to the nearest surface, or kNoHit.
inline double cast_ray(const Scene& scene, const Vector3& origin, const Vector3& dir) {
  double best = kNoHit;
  for (const auto& p : scene.planes) best = std::min(best, intersect(p, origin, dir));
  for (const auto& p : scene.poles) best = std::min(best, intersect(p, origin, dir));
  return best;
}

/// Ray-casts every beam/azimuth pair from `pose`. Returns beyond max range
/// become empty slots (range 0); scanlines are ordered by elevation.
inline Scan simulate_scan(const Scene& scene, const SensorModel& sensor, const Pose& pose, std::uint64_t seed,
                          ScanId index = 0, double timestamp = 0.0) {
  sensor.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Scan scan;
  scan.index = index;
  scan.timestamp = timestamp;
  scan.lines.assign(sensor.beams, std::vector<Vector3>(sensor.samples, Vector3::Zero()));
  scan.ranges.assign(sensor.beams, std::vector<double>(sensor.samples, 0.0));
  for (int b = 0; b < sensor.beams; ++b) {
    for (int s = 0; s < sensor.samples; ++s) {
      const Vector3 d = sensor.direction(b, s);
      const double t = cast_ray(scene, pose.translation, pose.rotation * d);
      const double n = noise(rng);  // drawn for every ray so streams stay aligned
      if (t == kNoHit) continue;
      const double r = t + sensor.noise_sigma * n;
      if (r > sensor.max_range || r <= 0.0) continue;
      scan.lines[b][s] = r * d;
      scan.ranges[b][s] = r;
    }
  }
  return scan;
}

enum class TrajectoryKind { stationary, line, arc, waypoints, wander };

struct Waypoint {
  double time;
  Vector3 position;
  double yaw;
};

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::line;
  double speed = 1.0;      // m/s
  double rate = 10.0;      // Hz
  double duration = 10.0;  // s
  double radius = 10.0;    // arc and wander turning radius, m
  Pose start;
  std::vector<Waypoint> waypoints;
  double wander_amplitude = 0.1;  // rad, heading perturbation
  std::uint64_t seed = 0;         // wander shape
  double pose_noise_sigma = 0.0;  // applied by perturb_trajectory

  void validate() const {
    if (!(rate > 0.0)) throw std::invalid_argument("trajectory rate must be positive");
    if (duration < 0.0) throw std::invalid_argument("trajectory duration must be >= 0");
    if (kind == TrajectoryKind::arc && !(radius > 0.0)) throw std::invalid_argument("arc radius must be positive");
    if (kind == TrajectoryKind::waypoints && waypoints.empty()) throw std::invalid_argument("no waypoints given");
  }
};

inline Pose planar_pose(const Vector3& position, double yaw, double pitch = 0.0, double roll = 0.0) {
  const Matrix3 r = (Eigen::AngleAxisd(yaw, Vector3::UnitZ()) * Eigen::AngleAxisd(pitch, Vector3::UnitY()) *
                     Eigen::AngleAxisd(roll, Vector3::UnitX()))
                        .toRotationMatrix();
  return {r, position};
}

namespace detail {

struct WanderShape {
  double yaw_amp[3], yaw_freq[3], yaw_phase[3];
  double speed_freq, speed_phase;
  double tilt_freq[3], tilt_phase[3];
};

inline WanderShape wander_shape(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WanderShape w;
  for (int k = 0; k < 3; ++k) {
    w.yaw_amp[k] = 0.5 + 0.5 * u(rng);
    w.yaw_freq[k] = 0.15 + 0.6 * u(rng);
    w.yaw_phase[k] = 2.0 * std::numbers::pi * u(rng);
    w.tilt_freq[k] = 0.3 + 1.2 * u(rng);
    w.tilt_phase[k] = 2.0 * std::numbers::pi * u(rng);
  }
  w.speed_freq = 0.2 + 0.4 * u(rng);
  w.speed_phase = 2.0 * std::numbers::pi * u(rng);
  return w;
}

}  // namespace detail

/// Ground-truth poses sampled at `rate` for `duration` seconds.
inline Trajectory generate_trajectory(const TrajectorySpec& spec) {
  spec.validate();
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.rate));
  Trajectory out;
  out.reserve(n);
  const double yaw0 = std::atan2(spec.start.rotation(1, 0), spec.start.rotation(0, 0));

  switch (spec.kind) {
    case TrajectoryKind::stationary:
      for (std::size_t k = 0; k < n; ++k) out.push_back({k / spec.rate, spec.start});
      break;
    case TrajectoryKind::line:
      for (std::size_t k = 0; k < n; ++k) {
        const double t = k / spec.rate;
        out.push_back({t, spec.start * Pose::from_translation({spec.speed * t, 0.0, 0.0})});
      }
      break;
    case TrajectoryKind::arc:
      for (std::size_t k = 0; k < n; ++k) {
        const double t = k / spec.rate;
        const double phi = spec.speed * t / spec.radius;
        const Pose local(rotation_z(phi), {spec.radius * std::sin(phi), spec.radius * (1.0 - std::cos(phi)), 0.0});
        out.push_back({t, spec.start * local});
      }
      break;
    case TrajectoryKind::waypoints: {
      const auto& w = spec.waypoints;
      for (std::size_t k = 0; k < n; ++k) {
        const double t = k / spec.rate;
        std::size_t i = 0;
        while (i + 1 < w.size() && w[i + 1].time <= t) ++i;
        if (i + 1 >= w.size() || t <= w[i].time) {
          const auto& p = t <= w.front().time ? w.front() : w[i];
          out.push_back({t, planar_pose(p.position, p.yaw)});
          continue;
        }
        const double a = (t - w[i].time) / (w[i + 1].time - w[i].time);
        out.push_back({t, planar_pose((1.0 - a) * w[i].position + a * w[i + 1].position,
                                      (1.0 - a) * w[i].yaw + a * w[i + 1].yaw)});
      }
      break;
    }
    case TrajectoryKind::wander: {
      // Circle of the given radius with smooth heading, speed and tilt
      // perturbations, integrated with fine substeps.
      const auto shape = detail::wander_shape(spec.seed);
      const double a = spec.wander_amplitude;
      const auto yaw_at = [&](double t) {
        double y = yaw0 + spec.speed * t / spec.radius;
        for (int k = 0; k < 3; ++k) {
          y += a * shape.yaw_amp[k] *
               (std::sin(shape.yaw_freq[k] * t + shape.yaw_phase[k]) - std::sin(shape.yaw_phase[k]));
        }
        return y;
      };
      const auto speed_at = [&](double t) {
        return spec.speed * (1.0 + 0.25 * std::sin(shape.speed_freq * t + shape.speed_phase));
      };
      const auto tilt = [&](int k, double t) {
        return std::sin(shape.tilt_freq[k] * t + shape.tilt_phase[k]) - std::sin(shape.tilt_phase[k]);
      };
      constexpr int kSubsteps = 20;
      Vector3 pos = spec.start.translation;
      double t = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double target = k / spec.rate;
        const double h = (target - t) / kSubsteps;
        for (int s = 0; s < kSubsteps && h > 0.0; ++s) {
          const double tm = t + (s + 0.5) * h;
          const double y = yaw_at(tm);
          pos += h * speed_at(tm) * Vector3(std::cos(y), std::sin(y), 0.0);
        }
        t = target;
        const Vector3 p = pos + Vector3(0.0, 0.0, 0.05 * tilt(2, t));
        out.push_back({t, planar_pose(p, yaw_at(t), 0.02 * tilt(0, t), 0.02 * tilt(1, t))});
      }
      break;
    }
  }
  return out;
}

/// Adds Gaussian noise to every pose: sigma meters on translation and
/// sigma/10 radians on rotation.
inline Trajectory perturb_trajectory(const Trajectory& traj, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Trajectory out = traj;
  for (auto& s : out) {
    Vector6 d;
    for (int i = 0; i < 6; ++i) d(i) = n(rng) * sigma * (i < 3 ? 0.1 : 1.0);
    s.pose = s.pose * se3::exp(d);
  }
  return out;
}

inline PlaneSurface wall(const Vector3& center, const Vector3& normal, const Vector3& axis_u, double half_u,
                         double half_v) {
  return {center, normal.normalized(), axis_u.normalized(), half_u, half_v};
}

namespace detail {

// Poles on a jittered grid, skipping an annulus around the default
// wander circle so the sensor path stays clear.
inline void scatter_poles(Scene& scene, std::uint64_t seed, double extent, double spacing, double r_min,
                          double r_max, double clear_inner, double clear_outer) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double x = -extent; x <= extent; x += spacing) {
    for (double y = -extent; y <= extent; y += spacing) {
      const double px = x + (u(rng) - 0.5) * spacing * 0.8;
      const double py = y + (u(rng) - 0.5) * spacing * 0.8;
      const double radius = r_min + (r_max - r_min) * u(rng);
      const double height = 4.0 + 6.0 * u(rng);
      const double d = std::hypot(px, py);
      if (d > clear_inner && d < clear_outer) continue;
      scene.poles.push_back({{px, py, 0.0}, radius, height});
    }
  }
}

}  // namespace detail

/// Built-in scenes:
///  - room: floor plus four walls, 80 m x 30 m, 8 m high
///  - corridor: 100 m x 4 m, 3 m high, closed ends
///  - forest: thin poles only, clear of the 12..18 m annulus around the origin
///  - mixed: floor, free-standing walls and poles, same clearance
inline Scene Scene::preset(const std::string& name) {
  Scene s;
  const Vector3 ex = Vector3::UnitX(), ey = Vector3::UnitY(), ez = Vector3::UnitZ();
  if (name == "room") {
    const double h = 4.0;
    s.planes.push_back(wall({0, 0, 0}, ez, ex, 40.0, 15.0));
    s.planes.push_back(wall({40, 0, h}, -ex, ey, 15.0, h));
    s.planes.push_back(wall({-40, 0, h}, ex, ey, 15.0, h));
    s.planes.push_back(wall({0, 15, h}, -ey, ex, 40.0, h));
    s.planes.push_back(wall({0, -15, h}, ey, ex, 40.0, h));
  } else if (name == "corridor") {
    s.planes.push_back(wall({0, 0, 0}, ez, ex, 50.0, 2.0));
    s.planes.push_back(wall({0, 2, 1.5}, -ey, ex, 50.0, 1.5));
    s.planes.push_back(wall({0, -2, 1.5}, ey, ex, 50.0, 1.5));
    s.planes.push_back(wall({50, 0, 1.5}, -ex, ey, 2.0, 1.5));
    s.planes.push_back(wall({-50, 0, 1.5}, ex, ey, 2.0, 1.5));
  } else if (name == "forest") {
    detail::scatter_poles(s, 7, 40.0, 5.0, 0.08, 0.18, 12.0, 18.0);
  } else if (name == "mixed") {
    s.planes.push_back(wall({0, 0, 0}, ez, ex, 60.0, 60.0));
    for (int k = 0; k < 6; ++k) {
      const double a = k * std::numbers::pi / 3.0;
      const Vector3 c(24.0 * std::cos(a), 24.0 * std::sin(a), 2.5);
      const Vector3 n = -Vector3(std::cos(a), std::sin(a), 0.0);
      s.planes.push_back(wall(c, n, ez.cross(n), 5.0, 2.5));
    }
    s.planes.push_back(wall({0, 0, 2.5}, ex, ey, 4.0, 2.5));
    detail::scatter_poles(s, 11, 40.0, 7.0, 0.15, 0.4, 11.0, 19.0);
  } else {
    throw std::invalid_argument("unknown scene preset '" + name + "'");
  }
  return s;
}

/// Per-scan noise seed derived from the sensor seed.
inline std::uint64_t scan_seed(const SensorModel& sensor, ScanId index) {
  return sensor.seed * 1000003ull + static_cast<std::uint64_t>(index);
}

inline std::vector<Scan> simulate_sequence(const Scene& scene, const SensorModel& sensor, const Trajectory& gt) {
  std::vector<Scan> scans;
  scans.reserve(gt.size());
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const auto id = static_cast<ScanId>(k);
    scans.push_back(simulate_scan(scene, sensor, gt[k].pose, scan_seed(sensor, id), id, gt[k].timestamp));
  }
  return scans;
}

}  // namespace smoothlo::sim
