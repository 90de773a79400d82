#pragma once
// Shared generators for the test suite.

#include "dicp/pointcloud.hpp"
#include "dicp/se_geometry.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace dicp::testing {

struct Rng {
  explicit Rng(std::uint64_t seed) : engine(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(engine); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); }
  std::mt19937_64 engine;
};

inline PointCloud random_cloud(Rng& rng, std::size_t n, double extent, Dim dim = Dim::planar) {
  PointCloud c;
  c.dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                          dim == Dim::spatial ? rng.uniform(-extent, extent) : 0.0);
  }
  return c;
}

/// Two perpendicular walls of `per_wall` points each meeting at a corner.
inline PointCloud l_shape(int per_wall, double length = 10.0) {
  PointCloud c;
  for (int k = 0; k < per_wall; ++k) {
    const double t = length * k / (per_wall - 1);
    c.points.emplace_back(t - 2.0, -3.0, 0.0);
    c.points.emplace_back(-2.0, t - 3.0, 0.0);
  }
  return c;
}

/// A clutter-free cloud that fully constrains a planar pose: irregular
/// points spread over a box.
inline PointCloud structured_scene(Rng& rng, int n, double extent = 8.0) {
  PointCloud c;
  for (int k = 0; k < n; ++k) c.points.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent), 0.0);
  return c;
}

inline Pose random_planar_pose(Rng& rng, double trans, double rot_rad) {
  return Pose::planar(rng.uniform(-trans, trans), rng.uniform(-trans, trans), rng.uniform(-rot_rad, rot_rad));
}

/// Gradient-check scene: `n_target` random points, the first `n_source` of
/// them seen from T_gt with small noise, random prior weights.
struct GradScene {
  PointCloud source;
  PointCloud target;
  Pose T_gt;
};

inline GradScene grad_scene(Rng& rng, int n_source = 30, int n_target = 60) {
  GradScene s;
  s.target = structured_scene(rng, n_target, 4.0);
  s.target = estimate_normals(s.target, 5);
  s.T_gt = Pose::planar(0.15, -0.1, 0.04);
  const Pose inv = inverse(s.T_gt);
  s.source.prior_weights.emplace();
  for (int i = 0; i < n_source; ++i) {
    s.source.points.push_back(inv * s.target.points[static_cast<std::size_t>(i)] +
                              Point(rng.normal(0.03), rng.normal(0.03), 0.0));
    s.source.prior_weights->push_back(rng.uniform(0.3, 1.0));
  }
  return s;
}

inline PointCloud with_points(const PointCloud& c, std::vector<Point> pts) {
  PointCloud o = c;
  o.points = std::move(pts);
  return o;
}

}  // namespace dicp::testing
