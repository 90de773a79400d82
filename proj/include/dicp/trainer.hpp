#pragma once
// Per-scene weight-mask training through the differentiable solver, and the
// localization metrics used to evaluate a mask.
//
// The mask is parameterized by one logit per pixel, m = sigmoid(z). Each
// epoch samples m at the source points, runs the unrolled solve from the
// ground truth, and steps z on L = L_ICP + gamma * L_BCE, where the BCE
// target is the supervisory map mask.

#include "dicp/error.hpp"
#include "dicp/grad.hpp"
#include "dicp/icp.hpp"
#include "dicp/mask.hpp"
#include "dicp/pointcloud.hpp"
#include "dicp/radar.hpp"
#include "dicp/random.hpp"
#include "dicp/se_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>
#include <thread>
#include <vector>

namespace dicp {

struct TrainSample {
  PolarScan scan;      // unused by the pixel-logit trainer; kept with the sample
  PointCloud source;   // sensor frame
  PointCloud map;      // map frame
  Pose T_gt;           // sensor -> map
};

enum class Optimizer { sgd, adaptive_moments };

/// Differentiable point-to-point, trim 5 m, Cauchy(1).
inline IcpConfig training_icp_config() {
  IcpConfig c;
  c.differentiable = true;
  c.update_rule = UpdateRule::gradient_descent;
  c.trim_distance = 5.0;
  c.robust_loss = RobustLoss::cauchy;
  c.robust_param = 1.0;
  return c;
}

/// Non-differentiable, Gauss-Newton, 50 iterations, same trim and loss.
inline IcpConfig evaluation_icp_config() {
  IcpConfig c;
  c.differentiable = false;
  c.update_rule = UpdateRule::gauss_newton;
  c.trim_distance = 5.0;
  c.robust_loss = RobustLoss::cauchy;
  c.robust_param = 1.0;
  c.max_iterations = 50;
  return c;
}

struct TrainConfig {
  double learning_rate = 1e-2;
  int epochs = 200;
  int unroll_iterations = 10;
  double good_step_threshold = 0.01;
  double good_error_threshold = 0.4;
  bool augment_rotation = true;
  LossWeights loss_weights;
  Optimizer optimizer = Optimizer::adaptive_moments;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  NnGradMode nn_grad_mode = NnGradMode::locally_constant;
  IcpConfig icp = training_icp_config();
  int mask_width = 256;
  double pixel_size = 0.25;
  double max_range = 32.0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(good_step_threshold > 0.0) || !(good_error_threshold > 0.0)) throw ConfigError("good-sample thresholds must be positive");
    if (!(max_range > 0.0)) throw ConfigError("max_range must be positive");
    loss_weights.validate();
    icp.validate();
    if (!icp.differentiable) throw ConfigError("training needs a differentiable ICP config");
  }
};

struct TrainRecord {
  int epoch = 0;
  double l_icp = 0.0;
  double l_bce = 0.0;
  double total = 0.0;
  bool skipped = false;
};

struct TrainOutcome {
  WeightMask mask;  // sigmoid(logits), max-normalized
  std::vector<TrainRecord> trace;
  bool all_skipped = false;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Loss and mask gradient of one training evaluation.
struct MaskStep {
  LossBreakdown loss;
  IcpResult icp;
  std::vector<double> grad_icp;  // d L_ICP / d mask
  std::vector<double> grad;      // d L / d mask
  bool good = false;
};

/// Inputs prepared once per sample: map in the sensor frame and the
/// supervisory map mask.
struct PreparedSample {
  PointCloud source;
  PointCloud map_sensor;
  WeightMask map_mask;
};

inline PreparedSample prepare_sample(const TrainSample& s, const TrainConfig& cfg) {
  if (s.source.empty()) throw DataError("training sample has an empty source cloud");
  validate(s.T_gt);
  const Pose sensor_from_map = inverse(s.T_gt);
  return {s.source, transformed(s.map, sensor_from_map),
          make_map_mask(s.map, sensor_from_map, cfg.mask_width, cfg.pixel_size, cfg.max_range)};
}

/// Evaluate L and dL/dmask with the source and map rotated jointly by
/// `angle` about the sensor; the mask rotates with the scan, so points sample
/// it at their unrotated positions.
inline MaskStep mask_step(const PreparedSample& ps, const WeightMask& mask, const TrainConfig& cfg, double angle) {
  const Pose rot = Pose::planar(0.0, 0.0, angle);
  const PointCloud src = transformed(ps.source, rot);
  const IcpTarget target(transformed(ps.map_sensor, rot));
  const Pose identity = Pose::identity(Dim::planar);

  GradRequest req;
  req.wrt = GradWrt::mask_pixels;
  req.nn_grad_mode = cfg.nn_grad_mode;
  req.unroll_iterations = cfg.unroll_iterations;
  req.loss = make_pose_error_loss(identity, cfg.loss_weights);
  req.mask = &mask;
  req.mask_sample_points = &ps.source.points;

  auto [result, grad] = solve_with_grad(src, target, identity, cfg.icp, req);

  MaskStep out;
  out.icp = result;
  out.grad_icp = std::move(grad.gradient);
  const double l_bce = bce_loss(mask, ps.map_mask);
  out.loss = total_loss(grad.loss_value, l_bce, cfg.loss_weights);
  out.grad = out.grad_icp;
  if (cfg.loss_weights.gamma != 0.0) {
    const auto g_bce = bce_gradient(mask, ps.map_mask);
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += cfg.loss_weights.gamma * g_bce[k];
  }
  const double err = pose_error(result.pose, identity).norm();
  out.good = result.step_norms.back() < cfg.good_step_threshold && err < cfg.good_error_threshold;
  return out;
}

inline WeightMask mask_from_logits(const std::vector<double>& logits, int width, double pixel_size) {
  WeightMask m = WeightMask::filled(width, pixel_size, 0.0);
  for (std::size_t k = 0; k < logits.size(); ++k) m.values[k] = sigmoid(logits[k]);
  return m;
}

inline TrainOutcome train_mask(const TrainSample& sample, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const PreparedSample ps = prepare_sample(sample, cfg);
  const std::size_t pixels = static_cast<std::size_t>(cfg.mask_width) * static_cast<std::size_t>(cfg.mask_width);
  std::vector<double> logits(pixels, 0.0);
  std::vector<double> m1(pixels, 0.0), m2(pixels, 0.0);
  int updates = 0;
  auto rng = substream(seed, {0x7472616eULL});

  TrainOutcome out;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double angle = cfg.augment_rotation ? uniform(rng, 0.0, 2.0 * std::numbers::pi) : 0.0;
    const WeightMask mask = mask_from_logits(logits, cfg.mask_width, cfg.pixel_size);
    const MaskStep st = mask_step(ps, mask, cfg, angle);
    out.trace.push_back({epoch, st.loss.l_icp, st.loss.l_bce, st.loss.total, !st.good});
    if (!st.good) continue;

    ++updates;
    const double bc1 = 1.0 - std::pow(cfg.beta1, updates);
    const double bc2 = 1.0 - std::pow(cfg.beta2, updates);
    for (std::size_t k = 0; k < pixels; ++k) {
      const double m = mask.values[k];
      const double g = st.grad[k] * m * (1.0 - m);  // through the sigmoid
      if (cfg.optimizer == Optimizer::sgd) {
        logits[k] -= cfg.learning_rate * g;
        continue;
      }
      m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g;
      m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g * g;
      logits[k] -= cfg.learning_rate * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + cfg.adam_epsilon);
    }
  }
  out.all_skipped = updates == 0;
  out.mask = mask_from_logits(logits, cfg.mask_width, cfg.pixel_size);
  out.mask.normalize();
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation.

inline constexpr double kConvergedStepNorm = 1e-3;
inline constexpr double kAccurateTranslation = 0.05;  // m
inline constexpr double kAccurateHeadingDeg = 1.0;

enum class EvalMode { unweighted, weighted };
enum class InitDistribution { uniform, normal };

inline const char* to_string(EvalMode m) { return m == EvalMode::weighted ? "weighted" : "unweighted"; }

struct RunRecord {
  int scene = 0;
  double sigma = 0.0;
  EvalMode mode = EvalMode::unweighted;
  int trial = 0;
  double init_long = 0.0, init_lat = 0.0, init_head_deg = 0.0;
  double err_long = 0.0, err_lat = 0.0, err_head_deg = 0.0;  // m, m, deg
  double final_step_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool accurate = false;
};

inline bool is_converged(double final_step_norm) { return final_step_norm < kConvergedStepNorm; }

inline bool is_accurate(bool converged, double err_long, double err_lat, double err_head_deg) {
  return converged && std::hypot(err_long, err_lat) < kAccurateTranslation && std::abs(err_head_deg) < kAccurateHeadingDeg;
}

struct ModeMetrics {
  double rmse_long = 0.0, rmse_lat = 0.0, rmse_head_deg = 0.0;
  double converged_pct = 0.0;
  double accurate_pct = 0.0;  // of converged runs
  int runs = 0;
  int converged = 0;
};

/// RMSE over converged runs; converged % over all runs; accurate % over
/// converged runs. Accumulates in record order.
inline ModeMetrics summarize(const std::vector<const RunRecord*>& runs) {
  ModeMetrics m;
  double sl = 0.0, sa = 0.0, sh = 0.0;
  int accurate = 0;
  for (const RunRecord* r : runs) {
    ++m.runs;
    if (!r->converged) continue;
    ++m.converged;
    if (r->accurate) ++accurate;
    sl += r->err_long * r->err_long;
    sa += r->err_lat * r->err_lat;
    sh += r->err_head_deg * r->err_head_deg;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  m.rmse_long = m.converged ? std::sqrt(sl / m.converged) : nan;
  m.rmse_lat = m.converged ? std::sqrt(sa / m.converged) : nan;
  m.rmse_head_deg = m.converged ? std::sqrt(sh / m.converged) : nan;
  m.converged_pct = m.runs ? 100.0 * m.converged / m.runs : nan;
  m.accurate_pct = m.converged ? 100.0 * accurate / m.converged : nan;
  return m;
}

struct EvalOptions {
  IcpConfig icp = evaluation_icp_config();
  InitDistribution distribution = InitDistribution::uniform;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct EvalResult {
  ModeMetrics unweighted;
  ModeMetrics weighted;
  std::vector<RunRecord> runs;
};

/// One localization run from an offset initial guess. The map is expressed in
/// the sensor frame so the ground truth is the identity and errors are in the
/// vehicle frame (x longitudinal, y lateral).
inline RunRecord localize_once(const PointCloud& source, const IcpTarget& map_sensor, const Pose& T_init,
                               const IcpConfig& cfg) {
  RunRecord r;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    const IcpResult res = icp_solve(source, map_sensor, T_init, cfg);
    r.iterations = res.iterations_run;
    // A solve cut short by losing every correspondence never counts as converged.
    r.final_step_norm = res.step_norms.empty() || res.status != IcpStatus::ok ? nan : res.step_norms.back();
    const Twist e = pose_error(res.pose, Pose::identity(Dim::planar));
    r.err_long = e.vector[0];
    r.err_lat = e.vector[1];
    r.err_head_deg = rad2deg(e.vector[2]);
  } catch (const NumericalError&) {
    r.final_step_norm = nan;
    r.err_long = r.err_lat = r.err_head_deg = nan;
  }
  r.converged = is_converged(r.final_step_norm);
  r.accurate = is_accurate(r.converged, r.err_long, r.err_lat, r.err_head_deg);
  return r;
}

/// Runs `jobs` independent tasks on a fixed pool; task i writes slot i only.
template <typename Fn>
void parallel_for(std::size_t jobs, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < jobs; i += threads) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Paired weighted / unweighted localization from random initial offsets of
/// +-0.5 sigma m per translation axis and +-2.5 sigma deg of heading.
/// `masks[i]` weights samples[i]; pass an empty vector to skip the weighted mode.
inline EvalResult evaluate_masks(const std::vector<WeightMask>& masks, const std::vector<TrainSample>& samples,
                                 double sigma, int trials, std::uint64_t seed, const EvalOptions& opt = {},
                                 int scene_offset = 0) {
  if (trials < 1) throw ConfigError("trials must be at least 1");
  if (!masks.empty() && masks.size() != samples.size()) throw ConfigError("one mask per sample is required");
  opt.icp.validate();
  if (opt.icp.differentiable) throw ConfigError("evaluation needs a non-differentiable ICP config");

  struct Prepared {
    PointCloud unweighted;
    PointCloud weighted;
    std::unique_ptr<IcpTarget> map;
  };
  std::vector<Prepared> prep(samples.size());
  for (std::size_t s = 0; s < samples.size(); ++s) {
    validate(samples[s].T_gt);
    prep[s].unweighted = samples[s].source;
    prep[s].unweighted.prior_weights.reset();
    prep[s].map = std::make_unique<IcpTarget>(transformed(samples[s].map, inverse(samples[s].T_gt)));
    if (!masks.empty()) {
      prep[s].weighted = samples[s].source;
      prep[s].weighted.prior_weights = sample_weights(masks[s], samples[s].source);
    }
  }

  const bool weighted = !masks.empty();
  const std::size_t per_trial = weighted ? 2 : 1;
  const std::size_t jobs = samples.size() * static_cast<std::size_t>(trials);
  std::vector<RunRecord> runs(jobs * per_trial);

  parallel_for(jobs, opt.threads, [&](std::size_t job) {
    const std::size_t s = job / static_cast<std::size_t>(trials);
    const int trial = static_cast<int>(job % static_cast<std::size_t>(trials));
    const int scene = scene_offset + static_cast<int>(s);
    auto rng = substream(seed, {static_cast<std::uint64_t>(scene), static_cast<std::uint64_t>(std::llround(sigma * 1000.0)),
                                static_cast<std::uint64_t>(trial)});
    double dx, dy, dh;
    if (opt.distribution == InitDistribution::uniform) {
      dx = uniform(rng, -0.5 * sigma, 0.5 * sigma);
      dy = uniform(rng, -0.5 * sigma, 0.5 * sigma);
      dh = uniform(rng, -2.5 * sigma, 2.5 * sigma);
    } else {
      std::normal_distribution<double> n01(0.0, 1.0);
      dx = 0.5 * sigma * n01(rng);
      dy = 0.5 * sigma * n01(rng);
      dh = 2.5 * sigma * n01(rng);
    }
    const Pose T_init = Pose::planar(dx, dy, deg2rad(dh));
    for (std::size_t k = 0; k < per_trial; ++k) {
      const EvalMode mode = k == 0 ? EvalMode::unweighted : EvalMode::weighted;
      RunRecord r = localize_once(mode == EvalMode::weighted ? prep[s].weighted : prep[s].unweighted, *prep[s].map,
                                  T_init, opt.icp);
      r.scene = scene;
      r.sigma = sigma;
      r.mode = mode;
      r.trial = trial;
      r.init_long = dx;
      r.init_lat = dy;
      r.init_head_deg = dh;
      runs[job * per_trial + k] = r;
    }
  });

  EvalResult out;
  std::vector<const RunRecord*> uw, w;
  for (const auto& r : runs) (r.mode == EvalMode::weighted ? w : uw).push_back(&r);
  out.unweighted = summarize(uw);
  if (weighted) out.weighted = summarize(w);
  out.runs = std::move(runs);
  return out;
}

inline EvalResult evaluate_mask(const WeightMask& mask, const std::vector<TrainSample>& samples, double sigma,
                                int trials, std::uint64_t seed, const EvalOptions& opt = {}) {
  return evaluate_masks(std::vector<WeightMask>(samples.size(), mask), samples, sigma, trials, seed, opt);
}

}  // namespace dicp
