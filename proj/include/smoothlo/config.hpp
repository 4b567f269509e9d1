#pragma once

#include "smoothlo/features.hpp"
#include "smoothlo/graph.hpp"

#include <stdexcept>
#include <string>

namespace smoothlo {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what) : std::runtime_error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Odometry parameters. Defaults are the published system parameters.
struct Config {
  // significant
  int n_neighbor = 5;
  double map_threshold = 0.1;    // m, insertion gate
  double match_threshold = 0.8;  // m, maximum match distance
  int n_recent = 10;
  double keyscan_threshold = 0.1;
  // insignificant
  int n_sectors = 6;
  int n_point = 3;
  int n_planar = 50;
  double planar_threshold = 1.0;
  double normal_radius = 1.0;  // m
  int max_icp_iterations = 30;
  double icp_tolerance = 1e-4;
  int n_key = 50;
  int n_marg = 10;
  // ablations
  bool smoothing = true;
  bool point_features = true;
  // sensor
  double min_range = 0.5;
  double max_range = 100.0;
  // solver
  int lm_iterations = 20;
  double lm_tolerance = 1e-6;  // relative cost decrease that ends a solve
  double anchor_sigma = 1e-4;  // first-pose prior, per axis

  /// Throws ConfigError naming the first offending parameter.
  void validate() const {
    const auto count = [](const char* key, int v) {
      if (v < 1) throw ConfigError(key, "must be >= 1, got " + std::to_string(v));
    };
    const auto positive = [](const char* key, double v) {
      if (!(v > 0.0)) throw ConfigError(key, "must be > 0, got " + std::to_string(v));
    };
    count("n_neighbor", n_neighbor);
    positive("delta_map", map_threshold);
    positive("delta_match", match_threshold);
    count("n_recent", n_recent);
    positive("delta_key", keyscan_threshold);
    count("n_sectors", n_sectors);
    count("n_point", n_point);
    count("n_planar", n_planar);
    positive("delta_planar", planar_threshold);
    positive("delta_radius", normal_radius);
    count("n_icp", max_icp_iterations);
    positive("delta_icp", icp_tolerance);
    count("n_key", n_key);
    count("n_marg", n_marg);
    if (min_range < 0.0) throw ConfigError("min_range", "must be >= 0");
    positive("max_range", max_range);
    if (max_range <= min_range) throw ConfigError("max_range", "must exceed min_range");
    count("lm_iterations", lm_iterations);
    positive("lm_tolerance", lm_tolerance);
    positive("anchor_sigma", anchor_sigma);
  }

  FeatureConfig features() const {
    return {n_neighbor, n_sectors, n_planar, n_point, planar_threshold, normal_radius,
            min_range,  max_range, point_features};
  }

  LmSettings solver() const {
    LmSettings s;
    s.max_iterations = lm_iterations;
    s.relative_tolerance = lm_tolerance;
    s.step_tolerance = 1e-8;
    return s;
  }
};

}  // namespace smoothlo
