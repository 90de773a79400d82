#pragma once
// Weight masks: Cartesian grids of per-location point reliabilities.
//
// Pixel (row, col) has its centre at x = (col - c) * pixel_size,
// y = (row - c) * pixel_size with c = width / 2, so the sensor origin always
// falls exactly on a pixel centre. Values are stored row-major.

#include "dicp/error.hpp"
#include "dicp/pointcloud.hpp"
#include "dicp/se_geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

namespace dicp {

struct WeightMask {
  int width = 256;
  double pixel_size = 0.25;
  std::vector<double> values;

  static WeightMask filled(int width, double pixel_size, double v) {
    if (width < 2) throw ConfigError("mask width must be at least 2");
    if (!(pixel_size > 0.0)) throw ConfigError("mask pixel_size must be positive");
    WeightMask m;
    m.width = width;
    m.pixel_size = pixel_size;
    m.values.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(width), v);
    return m;
  }

  std::size_t pixel_count() const { return values.size(); }
  int center() const { return width / 2; }
  std::size_t flat(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width) + static_cast<std::size_t>(col);
  }
  double at(int row, int col) const { return values[flat(row, col)]; }
  double& at(int row, int col) { return values[flat(row, col)]; }

  Point pixel_center(int row, int col) const {
    return {(col - center()) * pixel_size, (row - center()) * pixel_size, 0.0};
  }

  bool same_geometry(const WeightMask& o) const { return width == o.width && pixel_size == o.pixel_size; }

  /// Divide by the maximum so the peak is 1. All-zero masks are unchanged.
  void normalize() {
    const double mx = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
    if (mx > 0.0) {
      for (auto& v : values) v /= mx;
    }
  }

  void validate() const {
    if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(width)) {
      throw DataError("mask value count does not match width");
    }
    for (double v : values) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("mask value outside [0,1]");
    }
  }
};

/// One row of the sampling Jacobian: up to four pixels and their bilinear
/// coefficients. Points outside the mask extent have count == 0.
struct SampleStencil {
  std::array<std::size_t, 4> pixel{};
  std::array<double, 4> coeff{};
  int count = 0;
};

inline SampleStencil sample_stencil(const WeightMask& mask, const Point& p) {
  SampleStencil st;
  const double u = p[0] / mask.pixel_size + mask.center();
  const double v = p[1] / mask.pixel_size + mask.center();
  const double hi = mask.width - 1;
  if (!(u >= 0.0 && u <= hi && v >= 0.0 && v <= hi)) return st;
  const int c0 = std::min(static_cast<int>(std::floor(u)), mask.width - 2);
  const int r0 = std::min(static_cast<int>(std::floor(v)), mask.width - 2);
  const double fu = u - c0;
  const double fv = v - r0;
  st.pixel = {mask.flat(r0, c0), mask.flat(r0, c0 + 1), mask.flat(r0 + 1, c0), mask.flat(r0 + 1, c0 + 1)};
  st.coeff = {(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv};
  st.count = 4;
  return st;
}

/// Sparse Jacobian of sample_weights with respect to the mask pixels.
inline std::vector<SampleStencil> sample_jacobian(const WeightMask& mask, const PointCloud& pts) {
  std::vector<SampleStencil> rows;
  rows.reserve(pts.size());
  for (const auto& p : pts.points) rows.push_back(sample_stencil(mask, p));
  return rows;
}

template <typename S>
S apply_stencil(std::span<const S> values, const SampleStencil& st) {
  S w(0.0);
  for (int k = 0; k < st.count; ++k) w += S(st.coeff[static_cast<std::size_t>(k)]) * values[st.pixel[static_cast<std::size_t>(k)]];
  return w;
}

/// Bilinear weight per point; zero outside the mask extent.
inline std::vector<double> sample_weights(const WeightMask& mask, const PointCloud& pts) {
  if (pts.dim != Dim::planar) throw ConfigError("sample_weights needs 2D points");
  std::vector<double> w;
  w.reserve(pts.size());
  for (const auto& p : pts.points) w.push_back(apply_stencil<double>(mask.values, sample_stencil(mask, p)));
  return w;
}

/// Binary mask with the pixel nearest to every in-range map point set to 1.
/// `T_sensor_map` maps map points into the sensor frame.
inline WeightMask make_map_mask(const PointCloud& map, const Pose& T_sensor_map, int width, double pixel_size,
                                double max_range) {
  WeightMask m = WeightMask::filled(width, pixel_size, 0.0);
  for (const auto& mp : map.points) {
    const Point p = T_sensor_map * mp;
    if (std::hypot(p[0], p[1]) > max_range) continue;
    const long col = std::lround(p[0] / pixel_size) + m.center();
    const long row = std::lround(p[1] / pixel_size) + m.center();
    if (col < 0 || row < 0 || col >= width || row >= width) continue;
    m.at(static_cast<int>(row), static_cast<int>(col)) = 1.0;
  }
  return m;
}

constexpr double kBceEpsilon = 1e-7;

/// Mean binary cross-entropy; predictions are clamped to [eps, 1 - eps].
inline double bce_loss(const WeightMask& mask, const WeightMask& target) {
  if (!mask.same_geometry(target)) throw ConfigError("bce_loss: mask geometry mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    const double m = std::clamp(mask.values[i], kBceEpsilon, 1.0 - kBceEpsilon);
    const double t = target.values[i];
    sum -= t * std::log(m) + (1.0 - t) * std::log(1.0 - m);
  }
  return sum / static_cast<double>(mask.values.size());
}

/// d bce_loss / d mask; zero where the clamp is active.
inline std::vector<double> bce_gradient(const WeightMask& mask, const WeightMask& target) {
  if (!mask.same_geometry(target)) throw ConfigError("bce_loss: mask geometry mismatch");
  const double inv_n = 1.0 / static_cast<double>(mask.values.size());
  std::vector<double> g(mask.values.size(), 0.0);
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    const double m = mask.values[i];
    if (m < kBceEpsilon || m > 1.0 - kBceEpsilon) continue;
    const double t = target.values[i];
    g[i] = (-t / m + (1.0 - t) / (1.0 - m)) * inv_n;
  }
  return g;
}

struct LossWeights {
  double alpha = 1.0;  // translation
  double beta = 1.0;   // heading
  double gamma = 1.0;  // BCE

  void validate() const {
    for (double v : {alpha, beta, gamma}) {
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
};

struct LossBreakdown {
  double l_icp = 0.0;
  double l_bce = 0.0;
  double total = 0.0;
};

/// alpha (e_x^2 + e_y^2) + beta e_phi^2 on a planar pose error.
template <typename S>
S icp_loss(const BasicTwist<S>& e, const LossWeights& lw) {
  if (e.dim != Dim::planar) throw ConfigError("icp_loss needs a planar twist");
  return S(lw.alpha) * (e.vector[0] * e.vector[0] + e.vector[1] * e.vector[1]) + S(lw.beta) * e.vector[2] * e.vector[2];
}

inline LossBreakdown total_loss(double l_icp, double l_bce, const LossWeights& lw) {
  if (!std::isfinite(l_icp) || !std::isfinite(l_bce)) throw NumericalError("total_loss: non-finite input");
  return {l_icp, l_bce, l_icp + lw.gamma * l_bce};
}

}  // namespace dicp
