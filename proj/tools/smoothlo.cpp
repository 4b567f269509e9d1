// Command-line front end: odom, eval, sim, map-dump.

#include "smoothlo.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace smoothlo;

namespace {

// Scan source for the pipeline: a directory of scan files, streamed, or a
// simulator spec generated on the fly.
class ScanSource {
 public:
  static ScanSource from_dir(const fs::path& dir) {
    ScanSource s;
    s.files_ = io::list_scans(dir);
    if (s.files_.empty()) throw std::runtime_error("no scan files in " + dir.string());
    return s;
  }

  static ScanSource from_spec(const fs::path& spec_path, std::optional<std::uint64_t> seed) {
    ScanSource s;
    s.spec_ = io::load_sim_spec(spec_path);
    if (seed) {
      s.spec_->sensor.seed = *seed;
      s.spec_->trajectory.seed = *seed;
    }
    s.gt_ = sim::generate_trajectory(s.spec_->trajectory);
    return s;
  }

  std::size_t size() const { return spec_ ? gt_.size() : files_.size(); }

  Scan get(std::size_t k) const {
    if (!spec_) return io::read_scan(files_[k]).scan;
    const auto id = static_cast<ScanId>(k);
    return sim::simulate_scan(spec_->scene, spec_->sensor, gt_[k].pose, sim::scan_seed(spec_->sensor, id), id,
                              gt_[k].timestamp);
  }

  const Trajectory* ground_truth() const { return spec_ ? &gt_ : nullptr; }

 private:
  std::vector<fs::path> files_;
  std::optional<io::SimSpec> spec_;
  Trajectory gt_;
};

struct PipelineOptions {
  std::string scans, sim_spec, config;
  std::optional<std::uint64_t> seed;
  std::string smoothing, point_features;  // empty keeps the config value
};

void add_pipeline_options(CLI::App* cmd, PipelineOptions& o) {
  auto* scans = cmd->add_option("--scans", o.scans, "directory of scan_NNNNNN.scan files");
  auto* spec = cmd->add_option("--sim", o.sim_spec, "simulator spec (formsim v1)");
  scans->excludes(spec);
  cmd->add_option("--config", o.config, "configuration file; missing keys take defaults");
  cmd->add_option("--seed", o.seed, "overrides the sensor and trajectory seeds of --sim");
  cmd->add_option("--smoothing", o.smoothing, "on|off")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--point-features", o.point_features, "on|off")->check(CLI::IsMember({"on", "off"}));
}

Config resolve_config(const PipelineOptions& o) {
  Config cfg;
  if (!o.config.empty()) {
    const auto loaded = io::load_config(o.config);
    for (const auto& key : loaded.defaulted) std::clog << "config: " << key << " not set, using default\n";
    cfg = loaded.config;
  } else {
    std::clog << "config: no file given, using defaults\n";
  }
  if (!o.smoothing.empty()) cfg.smoothing = o.smoothing == "on";
  if (!o.point_features.empty()) cfg.point_features = o.point_features == "on";
  cfg.validate();
  return cfg;
}

ScanSource open_source(const PipelineOptions& o) {
  if (!o.scans.empty()) return ScanSource::from_dir(o.scans);
  if (!o.sim_spec.empty()) return ScanSource::from_spec(o.sim_spec, o.seed);
  throw CLI::RequiredError("--scans or --sim");
}

SessionResult run_pipeline(const PipelineOptions& o, const ScanSource& source,
                           std::optional<long> until = std::nullopt) {
  const Config cfg = resolve_config(o);
  OdometrySession session(cfg, [](const std::string& w) { std::clog << "warning: " << w << '\n'; });
  for (std::size_t k = 0; k < source.size(); ++k) {
    const Scan scan = source.get(k);
    session.push(scan);
    if (until && scan.index >= *until) break;
  }
  return session.finish();
}

Trajectory smoothed_trajectory(const SessionResult& r) {
  Trajectory t;
  for (const auto& e : r.trajectory) t.push_back({e.timestamp, r.smoothed.at(e.scan)});
  return t;
}

Trajectory emitted_trajectory(const SessionResult& r) {
  Trajectory t;
  for (const auto& e : r.trajectory) t.push_back({e.timestamp, e.pose});
  return t;
}

std::vector<double> parse_windows(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v = 0.0;
    if (!io::detail::parse_number(io::detail::trim(item), v) || !(v > 0.0))
      throw CLI::ValidationError("--rte-windows", "expected positive lengths, got '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError("--rte-windows", "no window lengths");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-lag smoothing LiDAR odometry"};
  app.require_subcommand(1);

  PipelineOptions odom_opts;
  std::string odom_out;
  auto* odom = app.add_subcommand("odom", "run odometry; writes trajectory, map and timing");
  add_pipeline_options(odom, odom_opts);
  odom->add_option("--output", odom_out, "output directory")->required();

  std::string gt_path, est_path, windows = "1,30", eval_out;
  double max_dt = 0.005;
  bool rotational = false;
  auto* eval = app.add_subcommand("eval", "windowed relative translation error as CSV");
  eval->add_option("--gt", gt_path, "ground-truth trajectory")->required()->check(CLI::ExistingFile);
  eval->add_option("--est", est_path, "estimated trajectory")->required()->check(CLI::ExistingFile);
  eval->add_option("--rte-windows", windows, "comma-separated window lengths in meters");
  eval->add_option("--max-dt", max_dt, "timestamp association tolerance, s");
  eval->add_flag("--rotation", rotational, "report rotational error (rad) instead");
  eval->add_option("--output", eval_out, "CSV path; stdout when omitted");

  std::string spec_path, sim_out;
  std::optional<std::uint64_t> sim_seed;
  auto* simc = app.add_subcommand("sim", "generate scans and ground truth from a spec");
  simc->add_option("--spec", spec_path, "simulator spec (formsim v1)")->required()->check(CLI::ExistingFile);
  simc->add_option("--out", sim_out, "output directory")->required();
  simc->add_option("--seed", sim_seed, "overrides the sensor and trajectory seeds");

  PipelineOptions dump_opts;
  std::string dump_out;
  std::optional<long> dump_until;
  auto* dump = app.add_subcommand("map-dump", "run odometry and write the window map");
  add_pipeline_options(dump, dump_opts);
  dump->add_option("--output", dump_out, "map file, one 'x y z scan kind' row per point")->required();
  dump->add_option("--until", dump_until, "stop after this scan index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*odom) {
      const ScanSource source = open_source(odom_opts);
      const SessionResult r = run_pipeline(odom_opts, source);
      const fs::path dir(odom_out);
      fs::create_directories(dir);
      if (const Trajectory* gt = source.ground_truth()) io::write_trajectory(dir / "groundtruth.txt", *gt);
      // poses as emitted after each scan, plus the final smoothed estimates
      io::write_trajectory(dir / "trajectory.txt", emitted_trajectory(r));
      io::write_trajectory(dir / "smoothed.txt", smoothed_trajectory(r));
      std::ofstream map(dir / "map.txt");
      r.map.write_ascii(map);
      std::ofstream timing(dir / "timing.csv");
      io::write_timing(timing, r.trajectory);
      if (!map || !timing) throw std::runtime_error("cannot write outputs in " + dir.string());
      std::vector<double> secs;
      for (const auto& e : r.trajectory) secs.push_back(e.processing_seconds);
      const auto stats = timing_stats(secs);
      std::clog << r.trajectory.size() << " scans, mean " << stats.mean_hz << " Hz, min " << stats.min_hz << " Hz\n";
    } else if (*eval) {
      const Trajectory gt = io::read_trajectory(fs::path(gt_path));
      const Trajectory est = io::read_trajectory(fs::path(est_path));
      const auto lengths = parse_windows(windows);
      const auto results = evaluate_windows(gt, est, lengths, max_dt, rotational);
      std::ofstream file;
      if (!eval_out.empty()) {
        file.open(eval_out);
        if (!file) throw std::runtime_error("cannot write " + eval_out);
      }
      std::ostream& os = eval_out.empty() ? std::cout : file;
      os << "j_meters,rte_meters,n_subsequences\n";
      for (const auto& w : results) {
        os << io::detail::format_double(w.length) << ',';
        if (w.rte) {
          os << io::detail::format_double(*w.rte);
        } else {
          std::clog << "warning: trajectory is shorter than the " << w.length << " m window\n";
        }
        os << ',' << w.subsequences << '\n';
      }
    } else if (*simc) {
      io::SimSpec spec = io::load_sim_spec(spec_path);
      if (sim_seed) {
        spec.sensor.seed = *sim_seed;
        spec.trajectory.seed = *sim_seed;
      }
      const Trajectory gt = sim::generate_trajectory(spec.trajectory);
      const fs::path dir(sim_out);
      fs::create_directories(dir / "scans");
      for (std::size_t k = 0; k < gt.size(); ++k) {
        const auto id = static_cast<ScanId>(k);
        const Scan scan = sim::simulate_scan(spec.scene, spec.sensor, gt[k].pose, sim::scan_seed(spec.sensor, id),
                                             id, gt[k].timestamp);
        io::write_scan(dir / "scans" / io::scan_filename(id), scan, spec.sensor.min_range, spec.sensor.max_range);
      }
      io::write_trajectory(dir / "groundtruth.txt", gt);
      if (spec.trajectory.pose_noise_sigma > 0.0)
        io::write_trajectory(dir / "perturbed.txt",
                             sim::perturb_trajectory(gt, spec.trajectory.pose_noise_sigma, spec.trajectory.seed));
      std::clog << gt.size() << " scans written to " << (dir / "scans").string() << '\n';
    } else if (*dump) {
      const SessionResult r = run_pipeline(dump_opts, open_source(dump_opts), dump_until);
      std::ofstream out(dump_out);
      if (!out) throw std::runtime_error("cannot write " + dump_out);
      r.map.write_ascii(out);
    }
  } catch (const io::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: invalid config: " << e.what() << '\n';
    return 2;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
