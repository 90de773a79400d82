#pragma once
// Weighted, trimmed, robust ICP.
//
// Each iteration finds correspondences for the source points under the
// current estimate, forms per-point weights w_i = gate(d_i) * robust(e_i) *
// prior_i, and takes one step on J = 1/2 sum_i w_i |e_i|^2 using a left
// perturbation T <- exp(xi) T. The iteration body is templated on the scalar
// so the differentiable solver records exactly the code path used here.

#include "dicp/autodiff.hpp"
#include "dicp/error.hpp"
#include "dicp/pointcloud.hpp"
#include "dicp/se_geometry.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace dicp {

enum class ErrorModel { point_to_point, point_to_plane };
enum class RobustLoss { none, cauchy, pseudo_huber };
enum class NnMode { hard_argmin, soft_min };
enum class UpdateRule { automatic, gradient_descent, gauss_newton };

struct IcpConfig {
  ErrorModel error_model = ErrorModel::point_to_point;
  RobustLoss robust_loss = RobustLoss::none;
  double robust_param = 1.0;  // Cauchy k or (pseudo-)Huber delta
  std::optional<double> trim_distance;
  double trim_steepness = 10.0;  // 1/m
  NnMode nn_mode = NnMode::hard_argmin;
  double temperature = 0.01;  // m^2, soft_min only
  UpdateRule update_rule = UpdateRule::automatic;
  double step_size = 0.1;  // gradient_descent only
  int max_iterations = 50;
  double convergence_step_norm = 1e-3;
  Dim dimension_mode = Dim::planar;
  bool differentiable = false;

  /// automatic resolves to gradient descent when differentiable, else Gauss-Newton.
  UpdateRule resolved_update_rule() const {
    if (update_rule != UpdateRule::automatic) return update_rule;
    return differentiable ? UpdateRule::gradient_descent : UpdateRule::gauss_newton;
  }

  void validate() const {
    if (trim_distance && !(*trim_distance > 0.0)) throw ConfigError("trim_distance must be positive");
    if (!(trim_steepness > 0.0)) throw ConfigError("trim_steepness must be positive");
    if (robust_loss != RobustLoss::none && !(robust_param > 0.0)) throw ConfigError("robust loss parameter must be positive");
    if (!(temperature > 0.0)) throw ConfigError("soft-min temperature must be positive");
    if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
    if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
    if (!(convergence_step_norm > 0.0)) throw ConfigError("convergence_step_norm must be positive");
  }
};

enum class IcpStatus { ok, no_correspondences };

struct IcpResult {
  Pose pose;
  double objective = 0.0;  // J at the returned pose
  int iterations_run = 0;
  std::vector<double> step_norms;
  std::vector<double> objective_trace;  // J before each step
  bool converged = false;
  bool regularized = false;  // a Gauss-Newton system needed damping
  IcpStatus status = IcpStatus::ok;
  std::vector<double> correspondence_weights;
};

// ---------------------------------------------------------------------------
// Elementary pieces.

/// Point-to-point: T s - q (D entries). Point-to-plane: n^T (T s - q).
inline Eigen::VectorXd point_error(const Pose& T, const Point& s, const Point& q, const std::optional<Point>& normal,
                                   ErrorModel model) {
  const Point diff = T * s - q;
  if (model == ErrorModel::point_to_plane) {
    if (!normal) throw ConfigError("point_to_plane error needs a target normal");
    Eigen::VectorXd e(1);
    e[0] = normal->dot(diff);
    return e;
  }
  return diff.head(to_int(T.dim));
}

/// Trim weight in [0,1]: 1/2 (1 - tanh(steepness (d - trim))) when
/// differentiable, a hard threshold otherwise. 1 when trimming is disabled.
template <typename S>
S trim_gate(const S& distance, const IcpConfig& cfg) {
  using std::tanh;
  if (!cfg.trim_distance) return S(1.0);
  if (cfg.differentiable) {
    return S(0.5) * (S(1.0) - tanh(S(cfg.trim_steepness) * (distance - S(*cfg.trim_distance))));
  }
  return ad::value(distance) <= *cfg.trim_distance ? S(1.0) : S(0.0);
}

/// IRLS weight from the squared error norm.
template <typename S>
S robust_weight_sq(const S& e_sq, const IcpConfig& cfg) {
  using std::sqrt;
  const double k = cfg.robust_param;
  switch (cfg.robust_loss) {
    case RobustLoss::none:
      return S(1.0);
    case RobustLoss::cauchy:
      return S(1.0) / (S(1.0) + e_sq / S(k * k));
    case RobustLoss::pseudo_huber:
      if (cfg.differentiable) return S(1.0) / sqrt(S(1.0) + e_sq / S(k * k));
      // true Huber
      if (ad::value(e_sq) <= k * k) return S(1.0);
      return S(k) / sqrt(e_sq);
  }
  return S(1.0);
}

inline double robust_weight(const Eigen::VectorXd& e, const IcpConfig& cfg) {
  return robust_weight_sq(e.squaredNorm(), cfg);
}

// ---------------------------------------------------------------------------

/// Target cloud bundled with its index.
struct IcpTarget {
  explicit IcpTarget(PointCloud c) : cloud(std::move(c)), index(build_index(cloud)) {}
  PointCloud cloud;
  NnIndex index;
};

namespace detail {

/// Twist coordinates (of the 6-vector x,y,z,rx,ry,rz) that an update may move.
inline std::vector<int> active_coordinates(Dim pose_dim, const IcpConfig& cfg) {
  if (pose_dim == Dim::planar || cfg.dimension_mode == Dim::planar) return {0, 1, 5};
  return {0, 1, 2, 3, 4, 5};
}

inline void check_inputs(const PointCloud& source, const PointCloud& target, const Pose& T, const IcpConfig& cfg) {
  cfg.validate();
  if (source.empty()) throw DataError("source cloud is empty");
  if (target.empty()) throw DataError("target cloud is empty");
  if (source.dim != target.dim || source.dim != T.dim) throw ConfigError("source, target and pose dimensions differ");
  if (T.dim == Dim::planar && cfg.dimension_mode == Dim::spatial) {
    throw ConfigError("3D dimension_mode requires 3D clouds");
  }
  if (cfg.error_model == ErrorModel::point_to_plane && !target.normals) {
    throw ConfigError("point_to_plane requires target normals");
  }
  if (source.prior_weights && source.prior_weights->size() != source.size()) {
    throw DataError("prior weights size does not match source");
  }
}

template <typename S>
struct Accumulation {
  Vec6<S> gradient = Vec6<S>::Zero();
  Eigen::Matrix<S, 6, 6> hessian = Eigen::Matrix<S, 6, 6>::Zero();
  S objective = S(0.0);
  std::vector<S> weights;
  double weight_sum = 0.0;
};

/// Correspondences, residuals and the weighted normal equations at pose T.
/// `full_hessian` = false fills only the diagonal.
template <typename S>
Accumulation<S> accumulate(std::span<const Vec3<S>> source, std::span<const S> prior, const IcpTarget& target,
                           const BasicPose<S>& T, const IcpConfig& cfg, const std::vector<int>& active,
                           bool full_hessian) {
  using std::exp;
  using std::sqrt;
  const int D = to_int(T.dim);
  const bool plane = cfg.error_model == ErrorModel::point_to_plane;
  const auto& tpts = target.cloud.points;

  Accumulation<S> acc;
  acc.weights.resize(source.size(), S(0.0));
  std::vector<S> soft_w;

  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3<S> p = T.rotation * source[i] + T.translation;
    Vec3<S> q;
    Vec3<S> n = Vec3<S>::Zero();
    if (cfg.nn_mode == NnMode::hard_argmin) {
      const Point pv(ad::value(p[0]), ad::value(p[1]), ad::value(p[2]));
      const std::size_t j = target.index.nearest(pv).index;
      if (plane && !target.cloud.has_normal(j)) continue;
      q = tpts[j].template cast<S>();
      if (plane) n = (*target.cloud.normals)[j].template cast<S>();
    } else {
      // Soft correspondence: convex combination with weights exp(-d^2 / tau).
      soft_w.resize(tpts.size());
      double min_d2 = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tpts.size(); ++j) {
        S d2(0.0);
        for (int a = 0; a < D; ++a) {
          const S d = p[a] - S(tpts[j][a]);
          d2 += d * d;
        }
        soft_w[j] = d2;
        min_d2 = std::min(min_d2, ad::value(d2));
      }
      S z(0.0);
      for (std::size_t j = 0; j < tpts.size(); ++j) {
        soft_w[j] = exp(-(soft_w[j] - S(min_d2)) / S(cfg.temperature));
        z += soft_w[j];
      }
      q = Vec3<S>::Zero();
      for (std::size_t j = 0; j < tpts.size(); ++j) {
        const S pj = soft_w[j] / z;
        for (int a = 0; a < D; ++a) q[a] += pj * S(tpts[j][a]);
        if (plane && target.cloud.has_normal(j)) {
          for (int a = 0; a < D; ++a) n[a] += pj * S((*target.cloud.normals)[j][a]);
        }
      }
    }

    const Vec3<S> diff = p - q;
    S d_sq(0.0);
    for (int a = 0; a < D; ++a) d_sq += diff[a] * diff[a];

    // Residual rows: (jacobian row over the 6 twist coordinates, residual).
    std::array<Vec6<S>, 3> rows;
    std::array<S, 3> res;
    int n_rows = 0;
    S e_sq(0.0);
    if (plane) {
      S r(0.0);
      for (int a = 0; a < D; ++a) r += n[a] * diff[a];
      Vec6<S> row;
      row << n[0], n[1], n[2], p[1] * n[2] - p[2] * n[1], p[2] * n[0] - p[0] * n[2], p[0] * n[1] - p[1] * n[0];
      rows[0] = row;
      res[0] = r;
      n_rows = 1;
      e_sq = r * r;
    } else {
      const S zero(0.0), one(1.0);
      rows[0] << one, zero, zero, zero, p[2], -p[1];
      rows[1] << zero, one, zero, -p[2], zero, p[0];
      rows[2] << zero, zero, one, p[1], -p[0], zero;
      for (int a = 0; a < D; ++a) res[static_cast<std::size_t>(a)] = diff[a];
      n_rows = D;
      e_sq = d_sq;
    }

    S gate(1.0);
    if (cfg.trim_distance) gate = trim_gate(sqrt(d_sq), cfg);
    const S w = gate * robust_weight_sq(e_sq, cfg) * prior[i];
    acc.weights[i] = w;
    const double wv = ad::value(w);
    acc.weight_sum += wv;
    // A recorded zero weight still carries a gradient, so only plain doubles skip.
    if constexpr (std::is_same_v<S, double>) {
      if (wv == 0.0) continue;
    }

    acc.objective += S(0.5) * w * e_sq;
    for (int r = 0; r < n_rows; ++r) {
      const auto& row = rows[static_cast<std::size_t>(r)];
      const S wr = w * res[static_cast<std::size_t>(r)];
      for (int k : active) {
        acc.gradient[k] += row[k] * wr;
        if (full_hessian) {
          for (int l : active) acc.hessian(k, l) += w * row[k] * row[l];
        } else {
          acc.hessian(k, k) += w * row[k] * row[k];
        }
      }
    }
  }
  return acc;
}

template <typename S>
struct StepOutcome {
  BasicPose<S> pose;
  BasicTwist<S> step;
  S objective;
  std::vector<S> weights;
  bool regularized = false;
};

/// One ICP iteration from T. Throws NoCorrespondencesError when every
/// weight is zero.
template <typename S>
StepOutcome<S> iterate(std::span<const Vec3<S>> source, std::span<const S> prior, const IcpTarget& target,
                       const BasicPose<S>& T, const IcpConfig& cfg) {
  const auto active = active_coordinates(T.dim, cfg);
  const UpdateRule rule = cfg.resolved_update_rule();
  const bool gauss_newton = rule == UpdateRule::gauss_newton;
  if constexpr (!std::is_same_v<S, double>) {
    if (gauss_newton) throw ConfigError("Gauss-Newton updates are not differentiable; use gradient_descent");
  }
  Accumulation<S> acc = accumulate<S>(source, prior, target, T, cfg, active, gauss_newton);
  if (!(acc.weight_sum > 0.0)) throw NoCorrespondencesError();

  Vec6<S> xi = Vec6<S>::Zero();
  bool regularized = false;
  if constexpr (std::is_same_v<S, double>) {
    if (gauss_newton) {
      const int k = static_cast<int>(active.size());
      Eigen::MatrixXd H(k, k);
      Eigen::VectorXd g(k);
      for (int a = 0; a < k; ++a) {
        g[a] = acc.gradient[active[static_cast<std::size_t>(a)]];
        for (int b = 0; b < k; ++b) H(a, b) = acc.hessian(active[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(b)]);
      }
      const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H, Eigen::EigenvaluesOnly);
      const double lo = es.eigenvalues().minCoeff();
      const double hi = es.eigenvalues().maxCoeff();
      if (!(lo > 0.0) || hi / lo > 1e12) {
        const double trace = H.trace();
        if (!(trace > 0.0)) throw NoCorrespondencesError();
        H.diagonal().array() += 1e-6 * trace / k;
        regularized = true;
      }
      const Eigen::VectorXd delta = H.ldlt().solve(-g);
      for (int a = 0; a < k; ++a) xi[active[static_cast<std::size_t>(a)]] = delta[a];
    }
  }
  if (!gauss_newton) {
    // Gradient descent preconditioned by the diagonal of the Gauss-Newton
    // matrix, so the step is invariant to the units of each coordinate.
    for (int k : active) {
      if (ad::value(acc.hessian(k, k)) > 0.0) xi[k] = -S(cfg.step_size) * acc.gradient[k] / acc.hessian(k, k);
    }
  }

  StepOutcome<S> out;
  if (T.dim == Dim::planar) {
    out.step = BasicTwist<S>::planar(xi[0], xi[1], xi[5]);
  } else {
    out.step = BasicTwist<S>::spatial(xi);
  }
  out.pose = compose(exp_map(out.step), T);
  out.objective = acc.objective;
  out.weights = std::move(acc.weights);
  out.regularized = regularized;
  return out;
}

inline std::vector<double> prior_weights_or_ones(const PointCloud& source) {
  if (source.prior_weights) return *source.prior_weights;
  return std::vector<double>(source.size(), 1.0);
}

}  // namespace detail

/// Objective J and combined weights at T without taking a step.
inline std::pair<double, std::vector<double>> evaluate_objective(const PointCloud& source, const IcpTarget& target,
                                                                 const Pose& T, const IcpConfig& cfg) {
  const auto prior = detail::prior_weights_or_ones(source);
  auto acc = detail::accumulate<double>(source.points, prior, target, T, cfg, detail::active_coordinates(T.dim, cfg), false);
  return {acc.objective, std::move(acc.weights)};
}

struct IcpStepResult {
  Pose pose;
  Twist step;
  double objective = 0.0;  // J at the input pose
  std::vector<double> weights;
  bool regularized = false;
};

inline IcpStepResult icp_step(const PointCloud& source, const IcpTarget& target, const Pose& T_check,
                              const IcpConfig& cfg) {
  detail::check_inputs(source, target.cloud, T_check, cfg);
  validate(T_check);
  const auto prior = detail::prior_weights_or_ones(source);
  auto o = detail::iterate<double>(source.points, prior, target, T_check, cfg);
  return {o.pose, o.step, o.objective, std::move(o.weights), o.regularized};
}

inline IcpResult icp_solve(const PointCloud& source, const IcpTarget& target, const Pose& T_init,
                           const IcpConfig& cfg) {
  detail::check_inputs(source, target.cloud, T_init, cfg);
  validate(T_init);
  const auto prior = detail::prior_weights_or_ones(source);

  IcpResult result;
  result.pose = T_init;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    detail::StepOutcome<double> o;
    try {
      o = detail::iterate<double>(source.points, prior, target, result.pose, cfg);
    } catch (const NoCorrespondencesError&) {
      result.status = IcpStatus::no_correspondences;
      result.converged = false;
      return result;
    }
    result.pose = o.pose;
    result.iterations_run = it + 1;
    result.step_norms.push_back(o.step.norm());
    result.objective_trace.push_back(o.objective);
    result.regularized = result.regularized || o.regularized;
    if (result.step_norms.back() < cfg.convergence_step_norm) break;
  }
  result.converged = result.step_norms.back() < cfg.convergence_step_norm;
  auto [J, w] = evaluate_objective(source, target, result.pose, cfg);
  result.objective = J;
  result.correspondence_weights = std::move(w);
  return result;
}

inline IcpResult icp_solve(const PointCloud& source, const PointCloud& target, const Pose& T_init,
                           const IcpConfig& cfg) {
  if (target.empty()) throw DataError("target cloud is empty");
  return icp_solve(source, IcpTarget(target), T_init, cfg);
}

}  // namespace dicp
