#pragma once
// Polar radar scans, 1D CA-CFAR / BFAR detection along range, and the
// polar -> Cartesian image used as the reference frame for weight masks.

#include "dicp/error.hpp"
#include "dicp/mask.hpp"
#include "dicp/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace dicp {

struct PolarScan {
  std::vector<double> azimuths;  // radians, strictly increasing in [0, 2pi)
  int range_bins = 0;
  double range_resolution = 1.0;  // m / bin
  std::vector<double> intensities;  // azimuths.size() x range_bins, row-major
  std::optional<double> timestamp;

  int azimuth_count() const { return static_cast<int>(azimuths.size()); }

  double at(int a, int r) const {
    return intensities[static_cast<std::size_t>(a) * static_cast<std::size_t>(range_bins) + static_cast<std::size_t>(r)];
  }
  double& at(int a, int r) {
    return intensities[static_cast<std::size_t>(a) * static_cast<std::size_t>(range_bins) + static_cast<std::size_t>(r)];
  }

  static PolarScan uniform_azimuths(int azimuth_count, int range_bins, double range_resolution, double fill = 0.0) {
    PolarScan s;
    s.range_bins = range_bins;
    s.range_resolution = range_resolution;
    s.azimuths.resize(static_cast<std::size_t>(azimuth_count));
    for (int a = 0; a < azimuth_count; ++a) {
      s.azimuths[static_cast<std::size_t>(a)] = 2.0 * std::numbers::pi * a / azimuth_count;
    }
    s.intensities.assign(static_cast<std::size_t>(azimuth_count) * static_cast<std::size_t>(range_bins), fill);
    return s;
  }

  void validate() const {
    if (azimuths.empty() || range_bins < 1) throw DataError("scan needs at least one azimuth and one range bin");
    if (!(range_resolution > 0.0)) throw DataError("scan range resolution must be positive");
    if (intensities.size() != azimuths.size() * static_cast<std::size_t>(range_bins)) {
      throw DataError("scan intensity count does not match its shape");
    }
    for (std::size_t a = 0; a < azimuths.size(); ++a) {
      const double t = azimuths[a];
      if (!(t >= 0.0 && t < 2.0 * std::numbers::pi)) throw DataError("azimuth outside [0, 2pi)");
      if (a > 0 && !(t > azimuths[a - 1])) throw DataError("azimuths must be strictly increasing");
    }
    for (double v : intensities) {
      if (!std::isfinite(v) || v < 0.0) throw DataError("scan intensities must be finite and nonnegative");
    }
  }
};

enum class DetectorKind { ca_cfar, bfar };

struct DetectorConfig {
  DetectorKind kind = DetectorKind::bfar;
  int train_cells = 20;  // per side
  int guard_cells = 2;   // per side
  double scale_a = 1.0;
  double offset_b = 0.0;  // bfar only
  int min_range_bin = 0;

  void validate() const {
    if (train_cells < 1) throw ConfigError("train_cells must be at least 1");
    if (guard_cells < 0) throw ConfigError("guard_cells must be nonnegative");
    if (!(scale_a > 0.0)) throw ConfigError("scale_a must be positive");
    if (!(offset_b >= 0.0)) throw ConfigError("offset_b must be nonnegative");
    if (min_range_bin < 0) throw ConfigError("min_range_bin must be nonnegative");
  }
};

/// Range of the centre of bin r.
inline double bin_range(const PolarScan& scan, int r) { return (r + 0.5) * scan.range_resolution; }

/// Cells that pass intensity > a * Z + b, where Z is the mean of the training
/// cells on both sides of the cell under test (guard cells excluded, window
/// truncated at the scan edges). Output is azimuth-major, then range.
inline PointCloud detect(const PolarScan& scan, const DetectorConfig& cfg) {
  cfg.validate();
  scan.validate();
  const int R = scan.range_bins;
  if (R <= 2 * (cfg.train_cells + cfg.guard_cells) + 1) {
    throw ConfigError("detector window is larger than the scan's range bins");
  }
  const double b = cfg.kind == DetectorKind::bfar ? cfg.offset_b : 0.0;

  PointCloud out;
  out.dim = Dim::planar;
  out.frame_id = "sensor";
  for (int a = 0; a < scan.azimuth_count(); ++a) {
    const double theta = scan.azimuths[static_cast<std::size_t>(a)];
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    for (int r = cfg.min_range_bin; r < R; ++r) {
      double sum = 0.0;
      int count = 0;
      for (int k = r - cfg.guard_cells - cfg.train_cells; k < r - cfg.guard_cells; ++k) {
        if (k < 0) continue;
        sum += scan.at(a, k);
        ++count;
      }
      for (int k = r + cfg.guard_cells + 1; k <= r + cfg.guard_cells + cfg.train_cells; ++k) {
        if (k >= R) break;
        sum += scan.at(a, k);
        ++count;
      }
      const double threshold = cfg.scale_a * (sum / count) + b;
      if (scan.at(a, r) > threshold) {
        const double rho = bin_range(scan, r);
        out.points.emplace_back(rho * c, rho * s, 0.0);
      }
    }
  }
  return out;
}

using CartesianImage = WeightMask;

/// Square image centred on the sensor, bilinear in (range, azimuth), scaled
/// so the brightest pixel is 1. Pixels beyond the last range bin are 0.
inline CartesianImage polar_to_cartesian_image(const PolarScan& scan, int width, double pixel_size) {
  if (width < 1) throw ConfigError("image width must be at least 1");
  if (!(pixel_size > 0.0)) throw ConfigError("pixel_size must be positive");
  scan.validate();
  CartesianImage img;
  img.width = width;
  img.pixel_size = pixel_size;
  img.values.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(width), 0.0);

  const int A = scan.azimuth_count();
  const double two_pi = 2.0 * std::numbers::pi;
  for (int row = 0; row < width; ++row) {
    for (int col = 0; col < width; ++col) {
      const Point p = img.pixel_center(row, col);
      const double rho = std::hypot(p[0], p[1]);
      if (rho > scan.range_bins * scan.range_resolution) continue;
      double theta = std::atan2(p[1], p[0]);
      if (theta < 0.0) theta += two_pi;

      const double u = std::clamp(rho / scan.range_resolution - 0.5, 0.0, static_cast<double>(scan.range_bins - 1));
      const int r0 = std::min(static_cast<int>(u), std::max(scan.range_bins - 2, 0));
      const int r1 = std::min(r0 + 1, scan.range_bins - 1);
      const double fr = u - r0;

      int a0 = A - 1, a1 = 0;
      double fa = 0.0;
      if (A > 1) {
        const auto it = std::upper_bound(scan.azimuths.begin(), scan.azimuths.end(), theta);
        if (it == scan.azimuths.begin() || it == scan.azimuths.end()) {
          // between the last azimuth and the first one (wrapped)
          const double lo = scan.azimuths.back();
          const double hi = scan.azimuths.front() + two_pi;
          const double t = theta < lo ? theta + two_pi : theta;
          fa = (t - lo) / (hi - lo);
        } else {
          a1 = static_cast<int>(it - scan.azimuths.begin());
          a0 = a1 - 1;
          fa = (theta - scan.azimuths[static_cast<std::size_t>(a0)]) /
               (scan.azimuths[static_cast<std::size_t>(a1)] - scan.azimuths[static_cast<std::size_t>(a0)]);
        }
      } else {
        a0 = a1 = 0;
      }
      const auto along = [&](int a) { return (1.0 - fr) * scan.at(a, r0) + fr * scan.at(a, r1); };
      img.at(row, col) = (1.0 - fa) * along(a0) + fa * along(a1);
    }
  }
  img.normalize();
  return img;
}

// ---------------------------------------------------------------------------
// Binary format: "PSCN", u32 A, u32 R, f64 range_resolution, A x f64
// azimuths, A*R x f32 intensities (row-major). Little-endian.

inline void write_polar_scan(const std::string& path, const PolarScan& scan) {
  scan.validate();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write scan file " + path);
  const auto put = [&](const void* p, std::size_t n) { f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); };
  put("PSCN", 4);
  const std::uint32_t A = static_cast<std::uint32_t>(scan.azimuths.size());
  const std::uint32_t R = static_cast<std::uint32_t>(scan.range_bins);
  put(&A, 4);
  put(&R, 4);
  put(&scan.range_resolution, 8);
  for (double a : scan.azimuths) put(&a, 8);
  for (double v : scan.intensities) {
    const float fv = static_cast<float>(v);
    put(&fv, 4);
  }
}

namespace detail {

inline PolarScan read_polar_scan_csv(std::istream& in) {
  // Line 1: range_resolution,<m>. Each further line: azimuth,i_0,...,i_{R-1}.
  std::string line;
  if (!std::getline(in, line)) throw DataError("scan CSV: empty file");
  auto head = split_csv(line);
  PolarScan scan;
  if (head.size() != 2 || head[0] != "range_resolution" || !parse_double(head[1], scan.range_resolution)) {
    throw DataError("scan CSV: first line must be range_resolution,<value>");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv(line);
    if (fields.size() < 2) throw DataError("scan CSV line " + std::to_string(line_no) + ": too few fields");
    if (scan.range_bins == 0) scan.range_bins = static_cast<int>(fields.size()) - 1;
    if (static_cast<int>(fields.size()) - 1 != scan.range_bins) {
      throw DataError("scan CSV line " + std::to_string(line_no) + ": inconsistent range bin count");
    }
    for (std::size_t i = 0; i < fields.size(); ++i) {
      double v;
      if (!parse_double(fields[i], v) || !std::isfinite(v)) {
        throw DataError("scan CSV line " + std::to_string(line_no) + ": bad value '" + fields[i] + "'");
      }
      if (i == 0) {
        scan.azimuths.push_back(v);
      } else {
        scan.intensities.push_back(v);
      }
    }
  }
  scan.validate();
  return scan;
}

}  // namespace detail

/// Reads the binary format, or the CSV debug format when the file does not
/// start with the PSCN magic.
inline PolarScan read_polar_scan(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open scan file " + path);
  char magic[4] = {};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PSCN", 4) != 0) {
    std::ifstream text(path);
    return detail::read_polar_scan_csv(text);
  }
  const auto get = [&](void* p, std::size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!f) throw DataError("scan file " + path + " is truncated");
  };
  std::uint32_t A = 0, R = 0;
  PolarScan scan;
  get(&A, 4);
  get(&R, 4);
  get(&scan.range_resolution, 8);
  scan.range_bins = static_cast<int>(R);
  scan.azimuths.resize(A);
  for (auto& a : scan.azimuths) get(&a, 8);
  scan.intensities.resize(static_cast<std::size_t>(A) * R);
  for (auto& v : scan.intensities) {
    float fv;
    get(&fv, 4);
    v = fv;
  }
  scan.validate();
  return scan;
}

}  // namespace dicp
