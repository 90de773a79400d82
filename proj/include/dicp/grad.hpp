#pragma once
// Gradients of a scalar pose loss through an unrolled ICP solve.
//
// The solve is recorded on an ad::Tape by running the same templated
// iteration as icp_solve with ad::Var scalars; one reverse sweep then yields
// d(loss)/d(prior weights | source points | mask pixels). check_gradient
// compares the result with central differences of the plain double solve.

#include "dicp/autodiff.hpp"
#include "dicp/error.hpp"
#include "dicp/icp.hpp"
#include "dicp/mask.hpp"
#include "dicp/se_geometry.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

namespace dicp {

enum class GradWrt { prior_weights, source_points, mask_pixels };
enum class NnGradMode { locally_constant, soft };

/// Scalar loss on the final pose. Called with recorded values during
/// differentiation and with constants during finite differencing.
using PoseLoss = std::function<ad::Var(const BasicPose<ad::Var>&)>;

/// alpha (e_x^2 + e_y^2) + beta e_phi^2 of pose_error(T, T_gt).
inline PoseLoss make_pose_error_loss(const Pose& T_gt, const LossWeights& lw) {
  return [T_gt, lw](const BasicPose<ad::Var>& T) {
    return icp_loss(pose_error(T, T_gt.cast<ad::Var>()), lw);
  };
}

inline constexpr int kMaxUnrollIterations = 64;

struct GradRequest {
  GradWrt wrt = GradWrt::prior_weights;
  // locally_constant holds the argmin index fixed; soft differentiates the
  // soft-min correspondence. Overrides IcpConfig::nn_mode.
  NnGradMode nn_grad_mode = NnGradMode::locally_constant;
  int unroll_iterations = 10;
  PoseLoss loss;
  // For mask_pixels: the prior weights are sampled from this mask and the
  // source's own prior weights are ignored.
  const WeightMask* mask = nullptr;
  // Where each source point samples the mask, in the mask's frame. Defaults
  // to the source points themselves.
  const std::vector<Point>* mask_sample_points = nullptr;
};

struct GradResult {
  // prior_weights: n; source_points: n x D row-major; mask_pixels: width^2 row-major.
  std::vector<double> gradient;
  double loss_value = 0.0;
};

struct GradientCheckEntry {
  std::size_t index;
  double g_ad;
  double g_fd;
  double rel_error;
};

struct GradientReport {
  std::vector<GradientCheckEntry> entries;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
  double loss_value = 0.0;
};

namespace detail {

inline IcpConfig grad_config(const IcpConfig& cfg, const GradRequest& req) {
  IcpConfig c = cfg;
  c.nn_mode = req.nn_grad_mode == NnGradMode::soft ? NnMode::soft_min : NnMode::hard_argmin;
  return c;
}

inline void check_grad_request(const PointCloud& source, const IcpConfig& cfg, const GradRequest& req) {
  if (!cfg.differentiable) {
    throw ConfigError("differentiation needs a differentiable config (smooth trim and pseudo-Huber)");
  }
  if (cfg.resolved_update_rule() != UpdateRule::gradient_descent) {
    throw ConfigError("differentiation needs the gradient_descent update rule");
  }
  if (req.unroll_iterations < 1) throw ConfigError("unroll_iterations must be at least 1");
  if (req.unroll_iterations > kMaxUnrollIterations) {
    throw ConfigError("unroll_iterations exceeds the limit of " + std::to_string(kMaxUnrollIterations));
  }
  if (!req.loss) throw ConfigError("gradient request has no scalar loss");
  if (req.wrt == GradWrt::mask_pixels) {
    if (req.mask == nullptr) throw ConfigError("mask_pixels gradient needs a mask");
    if (source.dim != Dim::planar) throw ConfigError("mask_pixels gradient needs 2D points");
  }
}

/// Unrolled solve in scalar S. Returns the final pose; fills `trace`.
template <typename S>
BasicPose<S> unroll(std::span<const Vec3<S>> pts, std::span<const S> weights, const IcpTarget& target,
                    const Pose& T_init, const IcpConfig& cfg, int iterations, IcpResult* trace) {
  BasicPose<S> T = T_init.cast<S>();
  for (int it = 0; it < iterations; ++it) {
    auto o = iterate<S>(pts, weights, target, T, cfg);
    T = o.pose;
    if (trace != nullptr) {
      trace->step_norms.push_back(ad::value(o.step.norm()));
      trace->objective_trace.push_back(ad::value(o.objective));
      trace->iterations_run = it + 1;
      trace->correspondence_weights.resize(o.weights.size());
      for (std::size_t i = 0; i < o.weights.size(); ++i) trace->correspondence_weights[i] = ad::value(o.weights[i]);
    }
  }
  return T;
}

/// Loss of the plain (unrecorded) unrolled solve for the given inputs.
inline double forward_loss(const std::vector<Point>& pts, const std::vector<double>& weights, const IcpTarget& target,
                           const Pose& T_init, const IcpConfig& cfg, const GradRequest& req) {
  const Pose T = unroll<double>(pts, weights, target, T_init, cfg, req.unroll_iterations, nullptr);
  return req.loss(T.cast<ad::Var>()).value();
}

inline PointCloud mask_samples(const PointCloud& source, const GradRequest& req) {
  if (req.mask_sample_points == nullptr) return source;
  if (req.mask_sample_points->size() != source.size()) throw DataError("mask sample points do not match the source");
  return PointCloud::from_points(Dim::planar, *req.mask_sample_points);
}

inline std::vector<double> effective_weights(const PointCloud& source, const GradRequest& req,
                                             const std::vector<double>* mask_values = nullptr) {
  if (req.wrt == GradWrt::mask_pixels) {
    WeightMask m = *req.mask;
    if (mask_values != nullptr) m.values = *mask_values;
    return sample_weights(m, mask_samples(source, req));
  }
  return prior_weights_or_ones(source);
}

}  // namespace detail

/// Unrolled solve with exactly req.unroll_iterations gradient steps, and the
/// gradient of req.loss at the final pose with respect to req.wrt.
inline std::pair<IcpResult, GradResult> solve_with_grad(const PointCloud& source, const IcpTarget& target,
                                                         const Pose& T_init, const IcpConfig& cfg,
                                                         const GradRequest& req) {
  detail::check_inputs(source, target.cloud, T_init, cfg);
  validate(T_init);
  detail::check_grad_request(source, cfg, req);
  const IcpConfig gcfg = detail::grad_config(cfg, req);
  const int D = to_int(source.dim);
  const std::size_t n = source.size();

  ad::Tape tape;
  ad::Recording recording(tape);

  std::vector<Vec3<ad::Var>> pts(n);
  std::vector<int> leaf_ids;
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      const double v = source.points[i][a];
      if (req.wrt == GradWrt::source_points && a < D) {
        pts[i][a] = ad::Var::independent(v);
        leaf_ids.push_back(pts[i][a].id());
      } else {
        pts[i][a] = ad::Var(v);
      }
    }
  }

  std::vector<ad::Var> weights(n);
  if (req.wrt == GradWrt::mask_pixels) {
    std::vector<ad::Var> pixels(req.mask->values.size());
    for (std::size_t k = 0; k < pixels.size(); ++k) {
      pixels[k] = ad::Var::independent(req.mask->values[k]);
      leaf_ids.push_back(pixels[k].id());
    }
    const PointCloud at = detail::mask_samples(source, req);
    for (std::size_t i = 0; i < n; ++i) {
      weights[i] = apply_stencil<ad::Var>(pixels, sample_stencil(*req.mask, at.points[i]));
    }
  } else {
    const auto prior = detail::prior_weights_or_ones(source);
    for (std::size_t i = 0; i < n; ++i) {
      if (req.wrt == GradWrt::prior_weights) {
        weights[i] = ad::Var::independent(prior[i]);
        leaf_ids.push_back(weights[i].id());
      } else {
        weights[i] = ad::Var(prior[i]);
      }
    }
  }

  IcpResult result;
  const BasicPose<ad::Var> T = detail::unroll<ad::Var>(pts, weights, target, T_init, gcfg, req.unroll_iterations, &result);
  const ad::Var loss = req.loss(T);

  GradResult grad;
  grad.loss_value = loss.value();
  const std::vector<double> adj = tape.adjoints(loss.id());
  grad.gradient.resize(leaf_ids.size());
  for (std::size_t k = 0; k < leaf_ids.size(); ++k) grad.gradient[k] = adj[static_cast<std::size_t>(leaf_ids[k])];
  for (double g : grad.gradient) {
    if (!std::isfinite(g)) throw NumericalError("non-finite gradient entry");
  }

  result.pose = T.cast<double>();
  result.converged = result.step_norms.back() < cfg.convergence_step_norm;
  result.objective = evaluate_objective(source, target, result.pose, gcfg).first;
  return {result, grad};
}

inline std::pair<IcpResult, GradResult> solve_with_grad(const PointCloud& source, const PointCloud& target,
                                                         const Pose& T_init, const IcpConfig& cfg,
                                                         const GradRequest& req) {
  if (target.empty()) throw DataError("target cloud is empty");
  return solve_with_grad(source, IcpTarget(target), T_init, cfg, req);
}

inline double relative_error(double g_ad, double g_fd) {
  return std::abs(g_ad - g_fd) / std::max(1e-12, std::abs(g_fd));
}

/// Central-difference check of solve_with_grad. For mask_pixels only pixels
/// touched by some source point are reported; every other pixel has an
/// exactly zero gradient on both sides.
inline GradientReport check_gradient(const PointCloud& source, const IcpTarget& target, const Pose& T_init,
                                     const IcpConfig& cfg, const GradRequest& req, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  const auto [result, grad] = solve_with_grad(source, target, T_init, cfg, req);
  const IcpConfig gcfg = detail::grad_config(cfg, req);
  const int D = to_int(source.dim);

  GradientReport report;
  report.loss_value = grad.loss_value;

  std::vector<Point> pts = source.points;
  std::vector<double> weights = detail::effective_weights(source, req);
  const auto fd = [&](auto&& set) {
    set(+h);
    const double up = detail::forward_loss(pts, weights, target, T_init, gcfg, req);
    set(-h);
    const double down = detail::forward_loss(pts, weights, target, T_init, gcfg, req);
    set(0.0);
    return (up - down) / (2.0 * h);
  };
  const auto add = [&](std::size_t index, double g_fd) {
    report.entries.push_back({index, grad.gradient[index], g_fd, relative_error(grad.gradient[index], g_fd)});
  };

  switch (req.wrt) {
    case GradWrt::prior_weights:
      for (std::size_t i = 0; i < source.size(); ++i) {
        const double base = weights[i];
        add(i, fd([&](double d) { weights[i] = base + d; }));
      }
      break;
    case GradWrt::source_points:
      for (std::size_t i = 0; i < source.size(); ++i) {
        for (int a = 0; a < D; ++a) {
          const double base = source.points[i][a];
          add(i * static_cast<std::size_t>(D) + static_cast<std::size_t>(a),
              fd([&](double d) { pts[i][a] = base + d; }));
        }
      }
      break;
    case GradWrt::mask_pixels: {
      std::set<std::size_t> support;
      for (const auto& p : detail::mask_samples(source, req).points) {
        const auto st = sample_stencil(*req.mask, p);
        for (int k = 0; k < st.count; ++k) support.insert(st.pixel[static_cast<std::size_t>(k)]);
      }
      std::vector<double> pixels = req.mask->values;
      for (std::size_t k : support) {
        const double base = pixels[k];
        add(k, fd([&](double d) {
              pixels[k] = base + d;
              weights = detail::effective_weights(source, req, &pixels);
            }));
      }
      break;
    }
  }

  double sum = 0.0;
  for (const auto& e : report.entries) {
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    sum += e.rel_error;
  }
  if (!report.entries.empty()) report.mean_rel_error = sum / static_cast<double>(report.entries.size());
  return report;
}

inline GradientReport check_gradient(const PointCloud& source, const PointCloud& target, const Pose& T_init,
                                     const IcpConfig& cfg, const GradRequest& req, double h) {
  return check_gradient(source, IcpTarget(target), T_init, cfg, req, h);
}

}  // namespace dicp
