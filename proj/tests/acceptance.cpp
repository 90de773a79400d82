// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "dicp/dicp.hpp"

#include "support.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

namespace {

using namespace dicp;
using dicp::testing::Rng;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++g_failures;
  std::printf("%s  %-28s %s  [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DICP_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Random room: four walls with randomly placed points, a few posts.
PointCloud random_room(Rng& rng) {
  PointCloud m;
  const double w = rng.uniform(6.0, 12.0), h = rng.uniform(5.0, 10.0);
  const Point c[4] = {Point(-w / 2, -h / 2, 0), Point(w / 2, -h / 2, 0), Point(w / 2, h / 2, 0), Point(-w / 2, h / 2, 0)};
  for (int k = 0; k < 4; ++k) {
    const Point a = c[k], b = c[(k + 1) % 4];
    const int n = static_cast<int>((b - a).norm() / 0.3);
    for (int i = 0; i < n; ++i) m.points.push_back(a + rng.uniform(0.0, 1.0) * (b - a));
  }
  for (int p = 0; p < 3; ++p) {
    const Point ctr(rng.uniform(-w / 3, w / 3), rng.uniform(-h / 3, h / 3), 0.0);
    for (int k = 0; k < 10; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 10;
      m.points.push_back(ctr + Point(0.2 * std::cos(a), 0.2 * std::sin(a), 0.0));
    }
  }
  return m;
}

double translation_error(const Pose& T, const Pose& T_gt) {
  return (T.translation - T_gt.translation).norm();
}

// --- criteria --------------------------------------------------------------

Outcome gradient_correctness() {
  double worst = 0.0;
  int configs = 0;
  for (NnGradMode mode : {NnGradMode::locally_constant, NnGradMode::soft}) {
    for (ErrorModel em : {ErrorModel::point_to_point, ErrorModel::point_to_plane}) {
      for (RobustLoss rl : {RobustLoss::none, RobustLoss::cauchy, RobustLoss::pseudo_huber}) {
        Rng rng(100 + configs);
        const auto s = dicp::testing::grad_scene(rng, 30, 60);
        IcpConfig cfg;
        cfg.differentiable = true;
        cfg.update_rule = UpdateRule::gradient_descent;
        cfg.error_model = em;
        cfg.robust_loss = rl;
        cfg.trim_distance = 5.0;
        GradRequest req;
        req.nn_grad_mode = mode;
        req.unroll_iterations = 3;
        req.loss = make_pose_error_loss(s.T_gt, LossWeights{});
        const auto rep = check_gradient(s.source, s.target, Pose::identity(Dim::planar), cfg, req, 1e-6);
        worst = std::max(worst, rep.max_rel_error);
        ++configs;
      }
    }
  }
  return {worst < 1e-4, fmt("%d configs, max rel error %.2e (< 1e-4)", configs, worst)};
}

Outcome icp_recovery() {
  Rng rng(200);
  IcpConfig cfg;
  cfg.update_rule = UpdateRule::gauss_newton;
  cfg.max_iterations = 50;
  int ok = 0;
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto map = random_room(rng);
    const Pose T_gt = Pose::planar(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), deg2rad(rng.uniform(-5.0, 5.0)));
    const auto source = transformed(map, inverse(T_gt));
    const auto res = icp_solve(source, map, Pose::identity(Dim::planar), cfg);
    const double e = pose_error(res.pose, T_gt).vector.norm();
    worst = std::max(worst, e);
    if (e < 1e-3) ++ok;
  }
  return {ok >= 99, fmt("%d/100 scenes with pose error < 1e-3 (need >= 99)", ok)};
}

Outcome robustness() {
  Rng rng(300);
  IcpConfig plain;
  plain.update_rule = UpdateRule::gauss_newton;
  IcpConfig robust = plain;
  robust.robust_loss = RobustLoss::cauchy;
  robust.robust_param = 1.0;
  robust.trim_distance = 5.0;
  int robust_ok = 0, plain_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const auto map = random_room(rng);
    const Pose T_gt = Pose::planar(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), deg2rad(rng.uniform(-5.0, 5.0)));
    auto source = transformed(map, inverse(T_gt));
    const std::size_t outliers = source.size() / 4;  // 20% of the final cloud
    for (std::size_t k = 0; k < outliers; ++k) {
      source.points.emplace_back(rng.uniform(-15.0, 15.0), rng.uniform(-15.0, 15.0), 0.0);
    }
    const Pose I = Pose::identity(Dim::planar);
    if (translation_error(icp_solve(source, map, I, robust).pose, T_gt) < 0.05) ++robust_ok;
    if (translation_error(icp_solve(source, map, I, plain).pose, T_gt) > 0.05) ++plain_bad;
  }
  return {robust_ok >= 95 && plain_bad >= 50,
          fmt("robust < 0.05 m on %d/100 (need >= 95), non-robust > 0.05 m on %d/100 (need >= 50)", robust_ok,
              plain_bad)};
}

Outcome weight_zero_equivalence() {
  Rng rng(400);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto map = random_room(rng);
    const Pose T_gt = dicp::testing::random_planar_pose(rng, 0.3, 0.05);
    auto source = transformed(map, inverse(T_gt));
    for (auto& p : source.points) p += Point(rng.normal(0.02), rng.normal(0.02), 0.0);
    for (int k = 0; k < 20; ++k) source.points.emplace_back(rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0), 0.0);
    source.prior_weights.emplace();
    PointCloud kept;
    kept.prior_weights.emplace();
    for (const auto& p : source.points) {
      const bool zero = rng.uniform(0.0, 1.0) < 0.3;
      const double w = rng.uniform(0.2, 1.0);
      source.prior_weights->push_back(zero ? 0.0 : w);
      if (!zero) {
        kept.points.push_back(p);
        kept.prior_weights->push_back(w);
      }
    }
    IcpConfig cfg;
    cfg.robust_loss = RobustLoss::cauchy;
    cfg.trim_distance = 5.0;
    const Pose I = Pose::identity(Dim::planar);
    const auto a = icp_solve(source, map, I, cfg);
    const auto b = icp_solve(kept, map, I, cfg);
    worst = std::max(worst, pose_error(a.pose, b.pose).vector.norm());
  }
  return {worst < 1e-9, fmt("50 scenes, max pose difference %.2e (< 1e-9)", worst)};
}

Outcome trim_gate_exactness() {
  IcpConfig smooth;
  smooth.differentiable = true;
  IcpConfig hard;
  double at_trim = 0.0, worst_far = 0.0;
  bool agree = true;
  for (double trim : {0.5, 1.0, 2.5, 5.0, 12.0}) {
    smooth.trim_distance = hard.trim_distance = trim;
    at_trim = std::max(at_trim, std::abs(trim_gate(trim, smooth) - 0.5));
    for (double d = trim + 1.0 + 1e-9; d < trim + 40.0; d += 0.137) {
      const double s = trim_gate(d, smooth);
      worst_far = std::max(worst_far, s);
      agree = agree && trim_gate(d, hard) == 0.0 && s < 1e-4;
    }
  }
  const bool pass = at_trim <= std::numeric_limits<double>::epsilon() && agree;
  return {pass, fmt("|g(trim) - 0.5| = %.1e, smooth gate beyond trim + 1 m <= %.2e, hard gate 0", at_trim, worst_far)};
}

struct TrainingRun {
  ExperimentReport report;
  std::vector<SceneSpec> scenes;
};

const TrainingRun& training_run() {
  static const TrainingRun run = [] {
    TrainingRun r;
    r.scenes = standard_scene_suite(10, 7);
    ExperimentConfig cfg;
    cfg.mask_source = MaskSource::trained;
    cfg.sigmas = {0.0, 1.0, 2.0};
    cfg.trials = 100;
    r.report = run_experiment(r.scenes, cfg, 7);
    return r;
  }();
  return run;
}

Outcome trainer_efficacy() {
  const auto& rep = training_run().report;
  bool pass = true;
  std::string detail;
  double reduction0 = 0.0;
  for (std::size_t k = 0; k + 1 < rep.summary.size(); k += 2) {
    const auto& u = rep.summary[k].metrics;
    const auto& w = rep.summary[k + 1].metrics;
    const double sigma = rep.summary[k].sigma;
    pass = pass && w.rmse_long < u.rmse_long && w.rmse_lat < u.rmse_lat && w.rmse_head_deg < u.rmse_head_deg &&
           w.converged_pct >= u.converged_pct;
    const double red = 1.0 - w.rmse_long / u.rmse_long;
    if (sigma == 0.0) reduction0 = red;
    detail += fmt("s=%g long %.3f->%.3f lat %.3f->%.3f head %.3f->%.3f conv %.0f->%.0f%%; ", sigma, u.rmse_long,
                  w.rmse_long, u.rmse_lat, w.rmse_lat, u.rmse_head_deg, w.rmse_head_deg, u.converged_pct,
                  w.converged_pct);
  }
  pass = pass && reduction0 >= 0.2;
  return {pass, detail + fmt("long reduction at s=0 %.0f%% (>= 20%%)", 100.0 * reduction0)};
}

Outcome noise_suppression() {
  const auto& run = training_run();
  double worst = 0.0, s_struct = 0.0, s_noise = 0.0;
  std::size_t n_struct = 0, n_noise = 0;
  for (std::size_t i = 0; i < run.scenes.size(); ++i) {
    const Scene sc = generate_scene(run.scenes[i]);
    const auto w = sample_weights(run.report.masks[i], sc.scan_source);
    double a = 0.0, b = 0.0;
    std::size_t na = 0, nb = 0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      if (sc.labels[k] == PointLabel::structure) {
        a += w[k];
        ++na;
      } else {
        b += w[k];
        ++nb;
      }
    }
    s_struct += a;
    s_noise += b;
    n_struct += na;
    n_noise += nb;
    worst = std::max(worst, (b / nb) / (a / na));
  }
  const double pooled = (s_noise / n_noise) / (s_struct / n_struct);
  return {worst < 0.5, fmt("noise/structure weight ratio: pooled %.3f, worst scene %.3f (< 0.5)", pooled, worst)};
}

// Recompute summary.csv from runs.csv without the library's summary code.
bool summary_matches_runs(const fs::path& dir, std::string& why) {
  std::ifstream runs(dir / "runs.csv");
  std::string line;
  std::getline(runs, line);
  struct Acc {
    double sl = 0, sa = 0, sh = 0;
    int n = 0, conv = 0, acc = 0;
  };
  std::vector<std::pair<std::string, Acc>> groups;  // first-seen order
  while (std::getline(runs, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string tok; std::getline(ss, tok, ',');) f.push_back(tok);
    if (f.size() != 14) {
      why = "bad runs.csv row";
      return false;
    }
    const double el = std::stod(f[7]), ea = std::stod(f[8]), eh = std::stod(f[9]);
    const double step = f[10] == "nan" ? std::nan("") : std::stod(f[10]);
    const bool conv = step < 0.001;
    const bool acc = conv && std::sqrt(el * el + ea * ea) < 0.05 && std::abs(eh) < 1.0;
    if (conv != (f[12] == "1") || acc != (f[13] == "1")) {
      why = "flag mismatch in row: " + line;
      return false;
    }
    const std::string key = f[1] + "," + f[2];
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, Acc{}});
      it = groups.end() - 1;
    }
    Acc& g = it->second;
    ++g.n;
    if (!conv) continue;
    ++g.conv;
    g.acc += acc;
    g.sl += el * el;
    g.sa += ea * ea;
    g.sh += eh * eh;
  }
  const auto g10 = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char b[64];
    std::snprintf(b, sizeof b, "%.10g", v);
    return std::string(b);
  };
  std::string expect = "sigma,mode,rmse_long_m,rmse_lat_m,rmse_head_deg,converged_pct,accurate_pct\n";
  for (const auto& [key, g] : groups) {
    const double nan = std::nan("");
    const std::string sigma = g10(std::stod(key.substr(0, key.find(','))));
    expect += sigma + key.substr(key.find(',')) + "," + g10(g.conv ? std::sqrt(g.sl / g.conv) : nan) + "," +
              g10(g.conv ? std::sqrt(g.sa / g.conv) : nan) + "," + g10(g.conv ? std::sqrt(g.sh / g.conv) : nan) + "," +
              g10(100.0 * g.conv / g.n) + "," + g10(g.conv ? 100.0 * g.acc / g.conv : nan) + "\n";
  }
  if (expect != slurp(dir / "summary.csv")) {
    why = "summary.csv differs from recomputation";
    return false;
  }
  return true;
}

fs::path work_dir() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / "dicp_acceptance";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

fs::path scenes_file() {
  const auto p = work_dir() / "scenes.json";
  if (!fs::exists(p)) std::ofstream(p) << R"({"standard_suite":{"count":3,"seed":11}})";
  return p;
}

std::string eval_args(const fs::path& out) {
  return "eval --scenes " + scenes_file().string() + " --sigmas 0,1,2 --trials 20 --mask trained --epochs 30 --seed 5 --out " +
         out.string();
}

Outcome metric_definitions() {
  std::vector<fs::path> reports;
  const auto lib = work_dir() / "training_report";
  write_report(lib, training_run().report);
  reports.push_back(lib);
  const auto cli = work_dir() / "cli_a";
  if (run_cli(eval_args(cli)) != 0) return {false, "dicp eval failed"};
  reports.push_back(cli);
  const auto none = work_dir() / "cli_none";
  if (run_cli("eval --scenes " + scenes_file().string() + " --sigmas 3 --trials 30 --mask none --seed 9 --out " +
              none.string()) != 0) {
    return {false, "dicp eval failed"};
  }
  reports.push_back(none);
  for (const auto& r : reports) {
    std::string why;
    if (!summary_matches_runs(r, why)) return {false, r.filename().string() + ": " + why};
  }
  return {true, fmt("%zu reports recomputed from runs.csv match summary.csv exactly", reports.size())};
}

Outcome detector_sanity() {
  DetectorConfig cfg;
  cfg.scale_a = 1.0;
  cfg.offset_b = 0.1;
  Rng rng(900);
  int uniform_hits = 0, impulses_ok = 0;
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const double res = rng.uniform(0.05, 0.5);
    auto scan = PolarScan::uniform_azimuths(64, 400, res, rng.uniform(0.5, 5.0));
    uniform_hits += static_cast<int>(detect(scan, cfg).size());
    const int az = rng.integer(0, 63), bin = rng.integer(25, 374);
    const double bg = scan.at(az, bin);
    scan.at(az, bin) = 100.0 * bg;
    const auto pts = detect(scan, cfg);
    // Oracle: the true Cartesian position is anywhere in the bin along the beam.
    const double rho = (bin + rng.uniform(0.0, 1.0)) * res, th = scan.azimuths[static_cast<std::size_t>(az)];
    const Point truth(rho * std::cos(th), rho * std::sin(th), 0.0);
    if (pts.size() == 1) {
      const double d = (pts.points[0] - truth).norm();
      worst = std::max(worst, d / res);
      if (d <= 0.5 * res) ++impulses_ok;
    }
  }
  return {uniform_hits == 0 && impulses_ok == 50,
          fmt("uniform scans: %d detections; impulses found within half a bin: %d/50 (worst %.2f bins)", uniform_hits,
              impulses_ok, worst)};
}

Outcome determinism() {
  const auto a = work_dir() / "cli_a", b = work_dir() / "cli_b";
  if (!fs::exists(a / "summary.csv") && run_cli(eval_args(a)) != 0) return {false, "dicp eval failed"};
  if (run_cli(eval_args(b) + " --threads 3") != 0) return {false, "dicp eval failed"};
  const std::string sa = slurp(a / "summary.csv"), sb = slurp(b / "summary.csv");
  const bool same = !sa.empty() && sa == sb && slurp(a / "runs.csv") == slurp(b / "runs.csv");
  return {same, fmt("summary.csv %s across two runs (%zu bytes)", same ? "byte-identical" : "DIFFERS", sa.size())};
}

}  // namespace

int main() {
  criterion("gradient_correctness", gradient_correctness);
  criterion("icp_recovery", icp_recovery);
  criterion("robustness", robustness);
  criterion("weight_zero_equivalence", weight_zero_equivalence);
  criterion("trim_gate_exactness", trim_gate_exactness);
  criterion("trainer_efficacy", trainer_efficacy);
  criterion("noise_suppression", noise_suppression);
  criterion("metric_definitions", metric_definitions);
  criterion("detector_sanity", detector_sanity);
  criterion("determinism", determinism);
  std::printf("%d criteria failed\n", g_failures);
  fs::remove_all(work_dir());
  return g_failures == 0 ? 0 : 1;
}
