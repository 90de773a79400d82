#pragma once
// Synthetic scenes, experiment sweeps and report files.

#include "dicp/error.hpp"
#include "dicp/mask.hpp"
#include "dicp/pointcloud.hpp"
#include "dicp/radar.hpp"
#include "dicp/random.hpp"
#include "dicp/se_geometry.hpp"
#include "dicp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace dicp {

struct WallSpec {
  Point start = Point::Zero();
  Point end = Point::Zero();
  double spacing = 0.25;
};

struct PostSpec {
  Point center = Point::Zero();
  int count = 12;
  double radius = 0.2;
};

/// Points drawn uniformly in the square [-bound, bound]^2 around the sensor.
struct NoiseSpec {
  int count = 0;
  double bound = 20.0;
};

/// Points drawn uniformly in an axis-aligned box (map frame) that appears in
/// the scan but not in the map.
struct VehicleSpec {
  Point center = Point::Zero();
  Point extent = Point(4.0, 2.0, 0.0);  // full side lengths
  int count = 30;
};

struct RadarSpec {
  int azimuths = 400;
  double range_resolution = 0.25;
  double max_range = 32.0;
};

struct SceneSpec {
  std::vector<WallSpec> walls;
  std::vector<PostSpec> posts;
  NoiseSpec noise;
  std::vector<VehicleSpec> vehicles;
  std::uint64_t seed = 0;
  double sensor_noise_sigma = 0.0;
  Pose sensor_pose = Pose::identity(Dim::planar);  // sensor -> map (T_gt)
  RadarSpec radar;

  void validate() const {
    for (const auto& w : walls) {
      if (!(w.spacing > 0.0)) throw ConfigError("wall spacing must be positive");
    }
    for (const auto& p : posts) {
      if (p.count < 0) throw ConfigError("post point count must be nonnegative");
      if (!(p.radius >= 0.0)) throw ConfigError("post radius must be nonnegative");
    }
    if (noise.count < 0) throw ConfigError("noise point count must be nonnegative");
    if (!(noise.bound >= 0.0)) throw ConfigError("noise bound must be nonnegative");
    for (const auto& v : vehicles) {
      if (v.count < 0) throw ConfigError("vehicle point count must be nonnegative");
    }
    if (!(sensor_noise_sigma >= 0.0)) throw ConfigError("sensor_noise_sigma must be nonnegative");
    if (radar.azimuths < 1 || !(radar.range_resolution > 0.0) || !(radar.max_range > 0.0)) {
      throw ConfigError("radar parameters must be positive");
    }
    if (sensor_pose.dim != Dim::planar) throw ConfigError("scenes are planar");
    validate_pose(sensor_pose);
  }

 private:
  static void validate_pose(const Pose& T) {
    try {
      dicp::validate(T);
    } catch (const Error& e) {
      throw ConfigError(std::string("sensor_pose: ") + e.what());
    }
  }
};

enum class PointLabel : std::uint8_t { structure = 0, noise = 1, vehicle = 2 };

struct Scene {
  PointCloud map;           // map frame
  PointCloud scan_source;   // sensor frame: structure, then noise, then vehicles
  std::vector<PointLabel> labels;
  Pose T_gt;
  PolarScan scan;
};

inline constexpr double kSceneBackground = 0.5;
inline constexpr double kSceneImpulse = 100.0;

inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  Scene s;
  s.T_gt = spec.sensor_pose;
  s.map = PointCloud::from_points(Dim::planar, {}, "map");
  for (const auto& w : spec.walls) {
    const Point d = w.end - w.start;
    const double len = d.norm();
    const int n = static_cast<int>(std::floor(len / w.spacing)) + 1;
    for (int k = 0; k < n; ++k) {
      Point p = len > 0.0 ? Point(w.start + d * (k * w.spacing / len)) : w.start;
      p[2] = 0.0;
      s.map.points.push_back(p);
    }
  }
  for (const auto& post : spec.posts) {
    for (int k = 0; k < post.count; ++k) {
      const double a = 2.0 * std::numbers::pi * k / post.count;
      s.map.points.emplace_back(post.center[0] + post.radius * std::cos(a), post.center[1] + post.radius * std::sin(a), 0.0);
    }
  }
  if (s.map.empty()) throw ConfigError("scene has no structural geometry");

  auto rng = substream(spec.seed, {0x7363656eULL});
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Pose sensor_from_map = inverse(spec.sensor_pose);

  s.scan_source = PointCloud::from_points(Dim::planar, {}, "sensor");
  for (const auto& mp : s.map.points) {
    Point p = sensor_from_map * mp;
    if (spec.sensor_noise_sigma > 0.0) {
      p[0] += spec.sensor_noise_sigma * gauss(rng);
      p[1] += spec.sensor_noise_sigma * gauss(rng);
    }
    s.scan_source.points.push_back(p);
    s.labels.push_back(PointLabel::structure);
  }
  for (int k = 0; k < spec.noise.count; ++k) {
    const double x = uniform(rng, -spec.noise.bound, spec.noise.bound);
    const double y = uniform(rng, -spec.noise.bound, spec.noise.bound);
    s.scan_source.points.emplace_back(x, y, 0.0);
    s.labels.push_back(PointLabel::noise);
  }
  for (const auto& v : spec.vehicles) {
    for (int k = 0; k < v.count; ++k) {
      const double x = v.center[0] + uniform(rng, -0.5, 0.5) * v.extent[0];
      const double y = v.center[1] + uniform(rng, -0.5, 0.5) * v.extent[1];
      s.scan_source.points.push_back(sensor_from_map * Point(x, y, 0.0));
      s.labels.push_back(PointLabel::vehicle);
    }
  }

  // Polar rendering: constant background with one impulse per in-range point.
  const int bins = static_cast<int>(std::ceil(spec.radar.max_range / spec.radar.range_resolution));
  s.scan = PolarScan::uniform_azimuths(spec.radar.azimuths, bins, spec.radar.range_resolution, kSceneBackground);
  const double two_pi = 2.0 * std::numbers::pi;
  for (const auto& p : s.scan_source.points) {
    const double rho = std::hypot(p[0], p[1]);
    const int r = static_cast<int>(std::floor(rho / spec.radar.range_resolution));
    if (r < 0 || r >= bins) continue;
    double theta = std::atan2(p[1], p[0]);
    if (theta < 0.0) theta += two_pi;
    const int a = static_cast<int>(std::lround(theta / two_pi * spec.radar.azimuths)) % spec.radar.azimuths;
    s.scan.at(a, r) = kSceneImpulse;
  }
  return s;
}

inline TrainSample to_train_sample(const Scene& s) { return {s.scan, s.scan_source, s.map, s.T_gt}; }

/// Street-like scenes: two building lines broken into facades with gaps,
/// side walls at the facade ends, posts along the kerbs, 100 uniform noise
/// points and one parked-vehicle cluster 1.5-2.5 m from a facade. Each scene
/// draws its own layout and sensor pose from `seed`.
inline std::vector<SceneSpec> standard_scene_suite(int count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("scene count must be at least 1");
  std::vector<SceneSpec> out;
  for (int i = 0; i < count; ++i) {
    auto rng = substream(seed, {0x73756974ULL, static_cast<std::uint64_t>(i)});
    SceneSpec s;
    s.seed = rng();
    const double half_width = uniform(rng, 6.0, 8.0);
    const double y0 = uniform(rng, -1.0, 1.0);
    for (double side : {-1.0, 1.0}) {
      const double y = y0 + side * half_width;
      double x = -24.0 + uniform(rng, 0.0, 3.0);
      while (x < 22.0) {
        const double len = uniform(rng, 6.0, 12.0);
        const double x1 = std::min(x + len, 24.0);
        s.walls.push_back({Point(x, y, 0.0), Point(x1, y, 0.0), 0.25});
        const double depth = side * uniform(rng, 2.0, 4.0);
        s.walls.push_back({Point(x1, y, 0.0), Point(x1, y + depth, 0.0), 0.25});
        x = x1 + uniform(rng, 2.0, 4.0);
      }
    }
    for (int k = 0; k < 6; ++k) {
      const double side = k % 2 ? 1.0 : -1.0;
      s.posts.push_back({Point(uniform(rng, -20.0, 20.0), y0 + side * (half_width - uniform(rng, 1.0, 2.0)), 0.0), 12, 0.2});
    }
    s.noise = {100, 20.0};
    const double vside = rng() & 1 ? 1.0 : -1.0;
    const double gap = uniform(rng, 1.5, 2.5);
    s.vehicles.push_back({Point(uniform(rng, -10.0, 10.0), y0 + vside * (half_width - gap - 1.0), 0.0),
                          Point(4.5, 2.0, 0.0), 30});
    s.sensor_noise_sigma = 0.1;
    s.sensor_pose = Pose::planar(uniform(rng, -2.0, 2.0), uniform(rng, -1.0, 1.0), deg2rad(uniform(rng, -10.0, 10.0)));
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments.

enum class MaskSource { none, trained, file };

struct ExperimentConfig {
  MaskSource mask_source = MaskSource::none;
  std::vector<double> sigmas{0.0};
  int trials = 50;
  IcpConfig icp = evaluation_icp_config();
  TrainConfig train;
  std::optional<WeightMask> file_mask;
  InitDistribution distribution = InitDistribution::uniform;
  unsigned threads = 0;
};

struct SummaryRow {
  double sigma = 0.0;
  EvalMode mode = EvalMode::unweighted;
  ModeMetrics metrics;
};

struct ExperimentReport {
  std::vector<SummaryRow> summary;  // sigma-major, unweighted before weighted
  std::vector<RunRecord> runs;
  std::vector<WeightMask> masks;  // one per scene when masks were used
  std::vector<TrainOutcome> training;
};

inline ExperimentReport run_experiment(const std::vector<SceneSpec>& scenes, const ExperimentConfig& cfg,
                                       std::uint64_t seed) {
  if (scenes.empty()) throw ConfigError("experiment needs at least one scene");
  if (cfg.sigmas.empty()) throw ConfigError("experiment needs at least one noise scale");
  if (cfg.trials < 1) throw ConfigError("trials must be at least 1; the report would be empty");
  for (double s : cfg.sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ConfigError("noise scales must be finite and nonnegative");
  }
  if (cfg.mask_source == MaskSource::file && !cfg.file_mask) throw ConfigError("mask source 'file' needs a mask");

  std::vector<TrainSample> samples;
  for (const auto& spec : scenes) samples.push_back(to_train_sample(generate_scene(spec)));

  ExperimentReport rep;
  if (cfg.mask_source == MaskSource::trained) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      rep.training.push_back(train_mask(samples[i], cfg.train, splitmix64(seed ^ (0x1000 + i))));
      rep.masks.push_back(rep.training.back().mask);
    }
  } else if (cfg.mask_source == MaskSource::file) {
    cfg.file_mask->validate();
    rep.masks.assign(samples.size(), *cfg.file_mask);
  }

  EvalOptions opt;
  opt.icp = cfg.icp;
  opt.distribution = cfg.distribution;
  opt.threads = cfg.threads;
  for (double sigma : cfg.sigmas) {
    EvalResult r = evaluate_masks(rep.masks, samples, sigma, cfg.trials, seed, opt);
    rep.summary.push_back({sigma, EvalMode::unweighted, r.unweighted});
    if (!rep.masks.empty()) rep.summary.push_back({sigma, EvalMode::weighted, r.weighted});
    rep.runs.insert(rep.runs.end(), r.runs.begin(), r.runs.end());
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Report files.

inline std::string format_g(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline const char* kSummaryHeader = "sigma,mode,rmse_long_m,rmse_lat_m,rmse_head_deg,converged_pct,accurate_pct";
inline const char* kRunsHeader =
    "scene,sigma,mode,trial,init_long_m,init_lat_m,init_head_deg,err_long_m,err_lat_m,err_head_deg,"
    "final_step_norm,iterations,converged,accurate";

inline std::string summary_line(double sigma, EvalMode mode, const ModeMetrics& m) {
  return format_g(sigma, 10) + "," + to_string(mode) + "," + format_g(m.rmse_long, 10) + "," + format_g(m.rmse_lat, 10) +
         "," + format_g(m.rmse_head_deg, 10) + "," + format_g(m.converged_pct, 10) + "," + format_g(m.accurate_pct, 10);
}

inline std::string runs_line(const RunRecord& r) {
  std::string s = std::to_string(r.scene) + "," + format_g(r.sigma, 17) + "," + to_string(r.mode) + "," +
                  std::to_string(r.trial);
  for (double v : {r.init_long, r.init_lat, r.init_head_deg, r.err_long, r.err_lat, r.err_head_deg, r.final_step_norm}) {
    s += "," + format_g(v, 17);
  }
  s += "," + std::to_string(r.iterations) + "," + (r.converged ? "1" : "0") + "," + (r.accurate ? "1" : "0");
  return s;
}

/// Linear-interpolation quantile of sorted values.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline std::string boxplot_json(const ExperimentReport& rep) {
  std::string out = "{\n  \"series\": [";
  bool first = true;
  for (const auto& row : rep.summary) {
    std::vector<double> comp[3];
    for (const auto& r : rep.runs) {
      if (r.sigma != row.sigma || r.mode != row.mode || !r.converged) continue;
      comp[0].push_back(r.err_long);
      comp[1].push_back(r.err_lat);
      comp[2].push_back(r.err_head_deg);
    }
    out += first ? "\n" : ",\n";
    first = false;
    out += "    {\"sigma\": " + format_g(row.sigma, 17) + ", \"mode\": \"" + to_string(row.mode) +
           "\", \"count\": " + std::to_string(comp[0].size());
    const char* names[3] = {"long_m", "lat_m", "head_deg"};
    for (int c = 0; c < 3; ++c) {
      std::sort(comp[c].begin(), comp[c].end());
      out += ", \"" + std::string(names[c]) + "\": ";
      if (comp[c].empty()) {
        out += "null";
        continue;
      }
      out += "{\"min\": " + format_g(comp[c].front(), 17) + ", \"q1\": " + format_g(quantile(comp[c], 0.25), 17) +
             ", \"median\": " + format_g(quantile(comp[c], 0.5), 17) + ", \"q3\": " + format_g(quantile(comp[c], 0.75), 17) +
             ", \"max\": " + format_g(comp[c].back(), 17) + "}";
    }
    out += "}";
  }
  out += "\n  ]\n}\n";
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw DataError("cannot write " + p.string());
  f << text;
  if (!f) throw DataError("failed writing " + p.string());
}

/// summary.csv, runs.csv and boxplot.json in `dir` (created if missing).
inline void write_report(const std::filesystem::path& dir, const ExperimentReport& rep) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create report directory " + dir.string());
  std::string summary = std::string(kSummaryHeader) + "\n";
  for (const auto& row : rep.summary) summary += summary_line(row.sigma, row.mode, row.metrics) + "\n";
  std::string runs = std::string(kRunsHeader) + "\n";
  for (const auto& r : rep.runs) runs += runs_line(r) + "\n";
  write_text(dir / "summary.csv", summary);
  write_text(dir / "runs.csv", runs);
  write_text(dir / "boxplot.json", boxplot_json(rep));
}

inline std::string training_trace_csv(const TrainOutcome& t) {
  std::string s = "epoch,l_icp,l_bce,total,skipped_flag\n";
  for (const auto& r : t.trace) {
    s += std::to_string(r.epoch) + "," + format_g(r.l_icp, 17) + "," + format_g(r.l_bce, 17) + "," +
         format_g(r.total, 17) + "," + (r.skipped ? "1" : "0") + "\n";
  }
  return s;
}

}  // namespace dicp
