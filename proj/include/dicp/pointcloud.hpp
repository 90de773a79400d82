#pragma once
// Pointcloud container, exact kd-tree nearest-neighbour index, normal
// estimation and the CSV point format.

#include "dicp/error.hpp"
#include "dicp/se_geometry.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dicp {

struct PointCloud {
  Dim dim = Dim::planar;
  std::vector<Point> points;
  // Unit normals. Entries whose normal_valid flag is 0 came from a degenerate
  // neighbourhood and are excluded from point-to-plane solves.
  std::optional<std::vector<Point>> normals;
  std::vector<std::uint8_t> normal_valid;
  std::optional<std::vector<double>> prior_weights;
  std::string frame_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  static PointCloud from_points(Dim d, std::vector<Point> pts, std::string frame = {}) {
    PointCloud c;
    c.dim = d;
    c.points = std::move(pts);
    c.frame_id = std::move(frame);
    return c;
  }

  bool has_normal(std::size_t i) const {
    return normals.has_value() && (normal_valid.empty() || normal_valid[i] != 0);
  }

  double weight(std::size_t i) const { return prior_weights ? (*prior_weights)[i] : 1.0; }

  void validate() const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!points[i].allFinite()) throw DataError("point " + std::to_string(i) + " is not finite");
      if (dim == Dim::planar && points[i][2] != 0.0) {
        throw DataError("planar point " + std::to_string(i) + " has nonzero z");
      }
    }
    if (normals) {
      if (normals->size() != points.size()) throw DataError("normals size does not match points");
      if (!normal_valid.empty() && normal_valid.size() != points.size()) {
        throw DataError("normal flags size does not match points");
      }
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (has_normal(i) && std::abs((*normals)[i].norm() - 1.0) > 1e-6) {
          throw DataError("normal " + std::to_string(i) + " is not unit length");
        }
      }
    }
    if (prior_weights) {
      if (prior_weights->size() != points.size()) throw DataError("prior weights size does not match points");
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double w = (*prior_weights)[i];
        if (!(w >= 0.0 && w <= 1.0)) throw DataError("prior weight " + std::to_string(i) + " outside [0,1]");
      }
    }
  }
};

/// Copy of `cloud` with every point (and normal) mapped through T.
inline PointCloud transformed(const PointCloud& cloud, const Pose& T) {
  PointCloud out = cloud;
  for (auto& p : out.points) p = T * p;
  if (out.normals) {
    for (auto& n : *out.normals) n = T.rotation * n;
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Exact L2 nearest-neighbour kd-tree. Ties resolve to the lowest point index.
class NnIndex {
 public:
  struct Hit {
    std::size_t index;
    double distance;
  };

  NnIndex(std::span<const Point> points, Dim dim) : points_(points.begin(), points.end()), dims_(to_int(dim)) {
    if (points_.empty()) throw DataError("cannot build a nearest-neighbour index over an empty cloud");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Point& point(std::size_t i) const { return points_[i]; }

  Hit nearest(const Point& q) const {
    Best best;
    search(0, q, best);
    return {best.index, std::sqrt(best.d2)};
  }

  /// The k nearest points ordered by (distance, index).
  std::vector<Hit> k_nearest(const Point& q, std::size_t k) const {
    k = std::min(k, points_.size());
    std::priority_queue<std::pair<double, std::size_t>> heap;
    if (k > 0) search_k(0, q, k, heap);
    std::vector<Hit> out(heap.size());
    for (std::size_t i = out.size(); i-- > 0;) {
      out[i] = {heap.top().second, std::sqrt(heap.top().first)};
      heap.pop();
    }
    return out;
  }

 private:
  static constexpr std::size_t kLeafSize = 8;

  struct Node {
    std::size_t begin, end;
    int axis = -1;  // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
  };

  struct Best {
    double d2 = std::numeric_limits<double>::infinity();
    std::size_t index = std::numeric_limits<std::size_t>::max();
    void offer(double d, std::size_t i) {
      if (d < d2 || (d == d2 && i < index)) {
        d2 = d;
        index = i;
      }
    }
  };

  double dist2(const Point& q, std::size_t i) const {
    double s = 0.0;
    for (int a = 0; a < dims_; ++a) {
      const double d = q[a] - points_[i][a];
      s += d * d;
    }
    return s;
  }

  int build(std::size_t begin, std::size_t end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({begin, end});
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    double widest = -1.0;
    for (int a = 0; a < dims_; ++a) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (std::size_t i = begin; i < end; ++i) {
        lo = std::min(lo, points_[order_[i]][a]);
        hi = std::max(hi, points_[order_[i]][a]);
      }
      if (hi - lo > widest) {
        widest = hi - lo;
        axis = a;
      }
    }
    if (widest <= 0.0) return id;  // all coincident: keep as a leaf

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
    const double split = points_[order_[mid]][axis];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<std::size_t>(id)].axis = axis;
    nodes_[static_cast<std::size_t>(id)].split = split;
    nodes_[static_cast<std::size_t>(id)].left = left;
    nodes_[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  void search(int id, const Point& q, Best& best) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) best.offer(dist2(q, order_[i]), order_[i]);
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search(near, q, best);
    // <= keeps equidistant points on the far side eligible for the tie-break.
    if (diff * diff <= best.d2) search(far, q, best);
  }

  void search_k(int id, const Point& q, std::size_t k,
                std::priority_queue<std::pair<double, std::size_t>>& heap) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::pair<double, std::size_t> cand{dist2(q, order_[i]), order_[i]};
        if (heap.size() < k) {
          heap.push(cand);
        } else if (cand < heap.top()) {
          heap.pop();
          heap.push(cand);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    search_k(near, q, k, heap);
    if (heap.size() < k || diff * diff <= heap.top().first) search_k(far, q, k, heap);
  }

  std::vector<Point> points_;
  int dims_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

inline NnIndex build_index(const PointCloud& target) { return NnIndex(target.points, target.dim); }

inline NnIndex::Hit nearest(const NnIndex& index, const Point& q) { return index.nearest(q); }

// ---------------------------------------------------------------------------

/// Per-point normals from the smallest-eigenvalue eigenvector of the k-NN
/// covariance (the point itself counts as one of the k), oriented towards
/// `viewpoint`. Zero-covariance neighbourhoods are flagged invalid.
inline PointCloud estimate_normals(const PointCloud& cloud, std::size_t k, const Point& viewpoint = Point::Zero()) {
  const int D = to_int(cloud.dim);
  if (k < static_cast<std::size_t>(D)) throw ConfigError("estimate_normals: k must be at least the dimension");
  if (cloud.size() <= k) throw ConfigError("estimate_normals: cloud must have more than k points");

  const NnIndex index = build_index(cloud);
  PointCloud out = cloud;
  out.normals.emplace(cloud.size(), Point::Zero());
  out.normal_valid.assign(cloud.size(), 1);

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto hits = index.k_nearest(cloud.points[i], k);
    Point mean = Point::Zero();
    for (const auto& h : hits) mean += cloud.points[h.index];
    mean /= static_cast<double>(hits.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& h : hits) {
      const Point d = cloud.points[h.index] - mean;
      cov += d * d.transpose();
    }
    cov /= static_cast<double>(hits.size());

    Point n = Point::Zero();
    if (cov.trace() <= 0.0) {
      out.normal_valid[i] = 0;
      (*out.normals)[i] = n;
      continue;
    }
    if (D == 2) {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov.topLeftCorner<2, 2>());
      n.head<2>() = es.eigenvectors().col(0);
    } else {
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
      n = es.eigenvectors().col(0);
    }
    n.normalize();
    const double facing = n.dot(viewpoint - cloud.points[i]);
    if (facing < 0.0) {
      n = -n;
    } else if (facing == 0.0) {
      // Viewpoint in the tangent plane: make the first nonzero component positive.
      for (int a = 0; a < D; ++a) {
        if (n[a] != 0.0) {
          if (n[a] < 0.0) n = -n;
          break;
        }
      }
    }
    (*out.normals)[i] = n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV: header x,y[,z][,nx,ny[,nz]][,weight]

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline PointCloud read_pointcloud_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("pointcloud CSV: missing header");
  const auto header = detail::split_csv(line);

  const auto is = [&](std::size_t i, const char* name) { return i < header.size() && header[i] == name; };
  std::size_t col = 0;
  if (!is(0, "x") || !is(1, "y")) throw DataError("pointcloud CSV: header must start with x,y");
  col = 2;
  Dim dim = Dim::planar;
  if (is(col, "z")) {
    dim = Dim::spatial;
    ++col;
  }
  bool has_normals = false;
  if (is(col, "nx")) {
    if (!is(col + 1, "ny")) throw DataError("pointcloud CSV: nx must be followed by ny");
    col += 2;
    if (dim == Dim::spatial) {
      if (!is(col, "nz")) throw DataError("pointcloud CSV: 3D normals need nz");
      ++col;
    }
    has_normals = true;
  }
  bool has_weight = false;
  if (is(col, "weight")) {
    has_weight = true;
    ++col;
  }
  if (col != header.size()) throw DataError("pointcloud CSV: unexpected header column '" + header[col] + "'");

  PointCloud cloud;
  cloud.dim = dim;
  if (has_normals) cloud.normals.emplace();
  if (has_weight) cloud.prior_weights.emplace();
  const int D = to_int(dim);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split_csv(line);
    if (fields.size() != header.size()) {
      throw DataError("pointcloud CSV line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields");
    }
    std::vector<double> v(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!detail::parse_double(fields[i], v[i])) {
        throw DataError("pointcloud CSV line " + std::to_string(line_no) + ": cannot parse '" + fields[i] + "'");
      }
      if (!std::isfinite(v[i])) {
        throw DataError("pointcloud CSV line " + std::to_string(line_no) + ": non-finite value");
      }
    }
    Point p = Point::Zero();
    for (int a = 0; a < D; ++a) p[a] = v[static_cast<std::size_t>(a)];
    cloud.points.push_back(p);
    std::size_t c = static_cast<std::size_t>(D);
    if (has_normals) {
      Point n = Point::Zero();
      for (int a = 0; a < D; ++a) n[a] = v[c++];
      cloud.normals->push_back(n);
      cloud.normal_valid.push_back(n.isZero() ? 0 : 1);  // zero rows mark degenerate normals
    }
    if (has_weight) cloud.prior_weights->push_back(v[c]);
  }
  cloud.validate();
  return cloud;
}

inline PointCloud read_pointcloud_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open pointcloud file " + path);
  return read_pointcloud_csv(f);
}

inline void write_pointcloud_csv(std::ostream& out, const PointCloud& cloud) {
  const bool spatial = cloud.dim == Dim::spatial;
  const bool normals = cloud.normals.has_value();
  out << (spatial ? "x,y,z" : "x,y");
  if (normals) out << (spatial ? ",nx,ny,nz" : ",nx,ny");
  if (cloud.prior_weights) out << ",weight";
  out << '\n';
  const int D = to_int(cloud.dim);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int a = 0; a < D; ++a) out << (a ? "," : "") << detail::format_double(cloud.points[i][a]);
    if (normals) {
      const bool ok = cloud.has_normal(i);
      for (int a = 0; a < D; ++a) out << ',' << detail::format_double(ok ? (*cloud.normals)[i][a] : 0.0);
    }
    if (cloud.prior_weights) out << ',' << detail::format_double((*cloud.prior_weights)[i]);
    out << '\n';
  }
}

inline void write_pointcloud_csv(const std::string& path, const PointCloud& cloud) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write pointcloud file " + path);
  write_pointcloud_csv(f, cloud);
}

}  // namespace dicp
