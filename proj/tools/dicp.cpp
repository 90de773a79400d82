// dicp: command-line front end for extraction, registration, gradient checks,
// mask training and localization experiments.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical failure.

#include "dicp/dicp.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace dicp;

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

json load_config(const std::string& path) { return path.empty() ? json::object() : read_json_file(path); }

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!detail::parse_double(item, v)) throw ConfigError("cannot parse '" + item + "' as a number");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

Pose load_pose(const std::string& path, Dim fallback) {
  if (path.empty()) return Pose::identity(fallback);
  return pose_from_json(read_json_file(path, false));
}

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string scan, out, config;
  std::optional<std::string> detector;
  std::optional<double> a, b;
  std::optional<int> train, guard, min_bin;
};

int run_extract(const ExtractArgs& args) {
  const json j = load_config(args.config);
  detail::reject_unknown(j, {"detector", "a", "b", "train_cells", "guard_cells", "min_range_bin"}, "extract config");
  DetectorConfig cfg;
  std::string kind = j.value("detector", std::string("bfar"));
  if (args.detector) kind = *args.detector;
  if (kind == "bfar") {
    cfg.kind = DetectorKind::bfar;
  } else if (kind == "ca_cfar" || kind == "cfar") {
    cfg.kind = DetectorKind::ca_cfar;
  } else {
    throw ConfigError("unknown detector '" + kind + "'");
  }
  detail::read_field(j, "a", cfg.scale_a);
  detail::read_field(j, "b", cfg.offset_b);
  detail::read_field(j, "train_cells", cfg.train_cells);
  detail::read_field(j, "guard_cells", cfg.guard_cells);
  detail::read_field(j, "min_range_bin", cfg.min_range_bin);
  if (args.a) cfg.scale_a = *args.a;
  if (args.b) cfg.offset_b = *args.b;
  if (args.train) cfg.train_cells = *args.train;
  if (args.guard) cfg.guard_cells = *args.guard;
  if (args.min_bin) cfg.min_range_bin = *args.min_bin;

  const PointCloud pts = detect(read_polar_scan(args.scan), cfg);
  if (args.out.empty()) {
    write_pointcloud_csv(std::cout, pts);
  } else {
    write_pointcloud_csv(args.out, pts);
  }
  std::cerr << pts.size() << " detections\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct IcpArgs {
  std::string source, target, init, config, out;
  std::optional<int> max_iterations;
};

int run_icp(const IcpArgs& args) {
  IcpConfig cfg = icp_config_from_json(load_config(args.config));
  if (args.max_iterations) cfg.max_iterations = *args.max_iterations;
  cfg.validate();
  const PointCloud src = read_pointcloud_csv(args.source);
  const PointCloud tgt = read_pointcloud_csv(args.target);
  const IcpResult r = icp_solve(src, tgt, load_pose(args.init, src.dim), cfg);
  const json out = icp_result_to_json(r);
  if (args.out.empty()) {
    std::cout << out.dump(2) << '\n';
  } else {
    write_json_file(args.out, out);
  }
  return r.status == IcpStatus::ok ? 0 : kExitNumerical;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string source, target, init, gt, config, out, wrt = "prior_weights", nn = "locally_constant";
  int unroll = 3;
  double h = 1e-6;
};

int run_grad_check(const GradArgs& args) {
  IcpConfig cfg;
  cfg.differentiable = true;
  cfg = icp_config_from_json(load_config(args.config), cfg);
  const PointCloud src = read_pointcloud_csv(args.source);
  const PointCloud tgt = read_pointcloud_csv(args.target);
  GradRequest req;
  if (args.wrt == "prior_weights") {
    req.wrt = GradWrt::prior_weights;
  } else if (args.wrt == "source_points") {
    req.wrt = GradWrt::source_points;
  } else {
    throw ConfigError("grad-check supports --wrt prior_weights or source_points");
  }
  req.nn_grad_mode = detail::parse_enum(json(args.nn), "nn_grad_mode", detail::kNnGradModes);
  req.unroll_iterations = args.unroll;
  req.loss = make_pose_error_loss(load_pose(args.gt, src.dim), LossWeights{});
  const GradientReport rep = check_gradient(src, tgt, load_pose(args.init, src.dim), cfg, req, args.h);
  const json out = gradient_report_to_json(rep);
  if (args.out.empty()) {
    std::cout << out.dump(2) << '\n';
  } else {
    write_json_file(args.out, out);
  }
  std::cerr << "max relative error " << rep.max_rel_error << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string scenes, config, out, trace;
  int scene = 0;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> lr, gamma;
};

int run_train(const TrainArgs& args) {
  TrainConfig cfg = train_config_from_json(load_config(args.config));
  if (args.epochs) cfg.epochs = *args.epochs;
  if (args.lr) cfg.learning_rate = *args.lr;
  if (args.gamma) cfg.loss_weights.gamma = *args.gamma;
  cfg.validate();
  const auto specs = scenes_from_json(read_json_file(args.scenes));
  if (args.scene < 0 || args.scene >= static_cast<int>(specs.size())) throw ConfigError("--scene index out of range");
  const Scene scene = generate_scene(specs[static_cast<std::size_t>(args.scene)]);
  const TrainOutcome out = train_mask(to_train_sample(scene), cfg, *args.seed);
  write_mask(args.out, out.mask);
  if (!args.trace.empty()) write_text(args.trace, training_trace_csv(out));
  if (out.all_skipped) std::cerr << "warning: every epoch was skipped by the good-sample filter\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string scenes, config, out, mask = "none", sigmas, dist;
  std::optional<std::uint64_t> seed;
  std::optional<int> trials, epochs;
  unsigned threads = 0;
};

int run_eval(const EvalArgs& args) {
  const json j = load_config(args.config);
  detail::reject_unknown(j, {"icp", "train", "trials", "sigmas", "dist"}, "eval config");
  ExperimentConfig cfg;
  if (j.contains("icp")) cfg.icp = icp_config_from_json(j["icp"], cfg.icp);
  if (j.contains("train")) cfg.train = train_config_from_json(j["train"], cfg.train);
  detail::read_field(j, "trials", cfg.trials);
  detail::read_field(j, "sigmas", cfg.sigmas);
  std::string dist = j.value("dist", std::string("uniform"));
  if (!args.dist.empty()) dist = args.dist;
  if (dist == "uniform") {
    cfg.distribution = InitDistribution::uniform;
  } else if (dist == "normal") {
    cfg.distribution = InitDistribution::normal;
  } else {
    throw ConfigError("--dist must be uniform or normal");
  }
  if (args.trials) cfg.trials = *args.trials;
  if (args.epochs) cfg.train.epochs = *args.epochs;
  if (!args.sigmas.empty()) cfg.sigmas = parse_list(args.sigmas);
  if (args.mask == "none") {
    cfg.mask_source = MaskSource::none;
  } else if (args.mask == "trained") {
    cfg.mask_source = MaskSource::trained;
  } else {
    cfg.mask_source = MaskSource::file;
    cfg.file_mask = read_mask(args.mask);
  }
  cfg.threads = args.threads;

  const auto specs = scenes_from_json(read_json_file(args.scenes));
  const ExperimentReport rep = run_experiment(specs, cfg, *args.seed);
  write_report(args.out, rep);
  std::cout << kSummaryHeader << '\n';
  for (const auto& row : rep.summary) std::cout << summary_line(row.sigma, row.mode, row.metrics) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable weighted ICP toolkit"};
  app.require_subcommand(1);

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Detect points in a polar scan");
  extract->add_option("--scan", ex.scan, "Scan file (PSCN binary or CSV)")->required();
  extract->add_option("--detector", ex.detector, "bfar or ca_cfar");
  extract->add_option("--a", ex.a, "Threshold scale");
  extract->add_option("--b", ex.b, "Threshold offset (bfar)");
  extract->add_option("--train", ex.train, "Training cells per side");
  extract->add_option("--guard", ex.guard, "Guard cells per side");
  extract->add_option("--min-range-bin", ex.min_bin, "First range bin tested");
  extract->add_option("--config", ex.config, "Detector JSON");
  extract->add_option("--out", ex.out, "Output pointcloud CSV (stdout if omitted)");

  IcpArgs ic;
  auto* icp = app.add_subcommand("icp", "Register a source cloud to a target cloud");
  icp->add_option("--source", ic.source)->required();
  icp->add_option("--target", ic.target)->required();
  icp->add_option("--init", ic.init, "Initial pose JSON (identity if omitted)");
  icp->add_option("--config", ic.config, "IcpConfig JSON");
  icp->add_option("--max-iterations", ic.max_iterations);
  icp->add_option("--out", ic.out, "Result JSON (stdout if omitted)");

  GradArgs gc;
  auto* grad = app.add_subcommand("grad-check", "Compare reverse-mode gradients with central differences");
  grad->add_option("--source", gc.source)->required();
  grad->add_option("--target", gc.target)->required();
  grad->add_option("--init", gc.init, "Initial pose JSON");
  grad->add_option("--gt", gc.gt, "Pose the loss is measured against (identity if omitted)");
  grad->add_option("--config", gc.config, "IcpConfig JSON (differentiable)");
  grad->add_option("--wrt", gc.wrt, "prior_weights or source_points");
  grad->add_option("--nn-grad-mode", gc.nn, "locally_constant or soft");
  grad->add_option("--unroll", gc.unroll, "Unrolled iterations");
  grad->add_option("--fd-step", gc.h, "Finite-difference step");
  grad->add_option("--out", gc.out, "Report JSON (stdout if omitted)");

  TrainArgs tr;
  auto* train = app.add_subcommand("train-mask", "Train a weight mask on one scene");
  train->add_option("--scenes", tr.scenes, "Scenes JSON")->required();
  train->add_option("--scene", tr.scene, "Scene index");
  train->add_option("--seed", tr.seed)->required();
  train->add_option("--config", tr.config, "TrainConfig JSON");
  train->add_option("--epochs", tr.epochs);
  train->add_option("--lr", tr.lr);
  train->add_option("--gamma", tr.gamma);
  train->add_option("--out", tr.out, "Mask PGM (a .json sidecar is written next to it)")->required();
  train->add_option("--trace", tr.trace, "Training trace CSV");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Localization experiment over scenes and noise scales");
  eval->add_option("--scenes", ev.scenes, "Scenes JSON")->required();
  eval->add_option("--sigmas", ev.sigmas, "Comma-separated noise scales");
  eval->add_option("--trials", ev.trials);
  eval->add_option("--mask", ev.mask, "none, trained, or a mask PGM path");
  eval->add_option("--seed", ev.seed)->required();
  eval->add_option("--epochs", ev.epochs, "Training epochs for --mask trained");
  eval->add_option("--config", ev.config, "Experiment JSON {icp, train, trials, sigmas, dist}");
  eval->add_option("--dist", ev.dist, "Initial-guess distribution: uniform or normal");
  eval->add_option("--threads", ev.threads, "Worker threads (0: all cores)");
  eval->add_option("--out", ev.out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*extract) return run_extract(ex);
    if (*icp) return run_icp(ic);
    if (*grad) return run_grad_check(gc);
    if (*train) return run_train(tr);
    if (*eval) return run_eval(ev);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
