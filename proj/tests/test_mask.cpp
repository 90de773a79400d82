#include "dicp/io.hpp"
#include "dicp/mask.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

namespace {

using namespace dicp;
using dicp::testing::Rng;

WeightMask random_mask(Rng& rng, int width, double ps) {
  auto m = WeightMask::filled(width, ps, 0.0);
  for (auto& v : m.values) v = rng.uniform(0.0, 1.0);
  return m;
}

TEST(SampleWeights, PixelCentreReturnsPixel) {
  Rng rng(1);
  const auto m = random_mask(rng, 16, 0.5);
  for (int r = 0; r < 16; ++r) {
    for (int c = 0; c < 16; ++c) {
      const auto w = sample_weights(m, PointCloud::from_points(Dim::planar, {m.pixel_center(r, c)}));
      EXPECT_DOUBLE_EQ(w[0], m.at(r, c));
    }
  }
}

TEST(SampleWeights, MidpointAveragesFourPixels) {
  auto m = WeightMask::filled(8, 1.0, 0.0);
  m.at(4, 3) = 1.0;
  m.at(4, 4) = 1.0;  // row 3 stays 0
  const Point mid = 0.5 * (m.pixel_center(3, 3) + m.pixel_center(4, 4));
  EXPECT_DOUBLE_EQ(sample_weights(m, PointCloud::from_points(Dim::planar, {mid}))[0], 0.5);
}

TEST(SampleWeights, OutsideExtentIsZero) {
  const auto m = WeightMask::filled(8, 1.0, 1.0);
  const auto w = sample_weights(m, PointCloud::from_points(Dim::planar, {Point(100, 0, 0), Point(0, -4.5, 0)}));
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_THROW(sample_weights(m, PointCloud::from_points(Dim::spatial, {Point(0, 0, 0)})), ConfigError);
}

TEST(SampleWeights, JacobianMatchesFiniteDifferences) {
  Rng rng(2);
  auto m = random_mask(rng, 20, 0.3);
  for (int t = 0; t < 50; ++t) {
    const auto cloud = PointCloud::from_points(Dim::planar, {Point(rng.uniform(-2.8, 2.6), rng.uniform(-2.8, 2.6), 0.0)});
    const auto J = sample_jacobian(m, cloud);
    ASSERT_EQ(J[0].count, 4);
    for (int k = 0; k < 4; ++k) {
      const std::size_t px = J[0].pixel[k];
      const double base = m.values[px];
      const double h = 1e-4;
      m.values[px] = base + h;
      const double up = sample_weights(m, cloud)[0];
      m.values[px] = base - h;
      const double down = sample_weights(m, cloud)[0];
      m.values[px] = base;
      EXPECT_NEAR((up - down) / (2.0 * h), J[0].coeff[k], 1e-9);
    }
  }
}

TEST(SampleWeights, JacobianRowsArePartitionsOfUnity) {
  Rng rng(3);
  const auto m = WeightMask::filled(64, 0.25, 0.0);
  for (int t = 0; t < 1000; ++t) {
    const auto J = sample_jacobian(m, PointCloud::from_points(Dim::planar, {Point(rng.uniform(-7.9, 7.7), rng.uniform(-7.9, 7.7), 0.0)}));
    double sum = 0.0;
    for (int k = 0; k < J[0].count; ++k) {
      EXPECT_GE(J[0].coeff[k], 0.0);
      sum += J[0].coeff[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(SampleWeights, ExactOnBilinearMasks) {
  // A mask whose values are an affine function of position is reproduced
  // exactly at any interior point, not only at pixel centres.
  auto m = WeightMask::filled(10, 0.5, 0.0);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 10; ++c) m.at(r, c) = 0.05 * r + 0.03 * c;
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Point p(rng.uniform(-2.5, 2.0), rng.uniform(-2.5, 2.0), 0.0);
    const double u = p[0] / 0.5 + 5.0, v = p[1] / 0.5 + 5.0;
    EXPECT_NEAR(sample_weights(m, PointCloud::from_points(Dim::planar, {p}))[0], 0.05 * v + 0.03 * u, 1e-12);
  }
}

TEST(MapMask, OriginMapsToCentrePixel) {
  const auto m = make_map_mask(PointCloud::from_points(Dim::planar, {Point(0, 0, 0)}), Pose::identity(Dim::planar), 32,
                               0.25, 10.0);
  double total = 0.0;
  for (double v : m.values) total += v;
  EXPECT_EQ(total, 1.0);
  EXPECT_EQ(m.at(m.center(), m.center()), 1.0);
}

TEST(MapMask, BeyondMaxRangeIsEmpty) {
  const auto m = make_map_mask(PointCloud::from_points(Dim::planar, {Point(3.0, 0, 0)}), Pose::identity(Dim::planar), 32,
                               0.25, 2.0);
  for (double v : m.values) EXPECT_EQ(v, 0.0);
  const auto e = make_map_mask(PointCloud{}, Pose::identity(Dim::planar), 8, 0.25, 2.0);
  for (double v : e.values) EXPECT_EQ(v, 0.0);
}

TEST(MapMask, RandomPointsSetTheirNearestPixels) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const auto map = dicp::testing::random_cloud(rng, 10, 10.0);
    const Pose T = dicp::testing::random_planar_pose(rng, 2.0, 3.0);
    const auto m = make_map_mask(map, T, 128, 0.25, 14.0);
    int pop = 0;
    for (double v : m.values) pop += v == 1.0 ? 1 : 0;
    EXPECT_LE(pop, 10);
    for (const auto& mp : map.points) {
      const Point p = T * mp;
      if (p.head<2>().norm() > 14.0) continue;
      // Nearest pixel by exhaustive search.
      double best = 1e9;
      int br = 0, bc = 0;
      for (int r = 0; r < 128; ++r)
        for (int c = 0; c < 128; ++c) {
          const double d = (m.pixel_center(r, c) - p).norm();
          if (d < best) {
            best = d;
            br = r;
            bc = c;
          }
        }
      EXPECT_EQ(m.at(br, bc), 1.0);
    }
  }
}

TEST(MapMask, ReapplyingPointsIsIdempotent) {
  Rng rng(6);
  const auto map = dicp::testing::random_cloud(rng, 50, 6.0);
  auto doubled = map;
  doubled.points.insert(doubled.points.end(), map.points.begin(), map.points.end());
  const Pose T = Pose::planar(0.3, -0.2, 0.4);
  EXPECT_EQ(make_map_mask(map, T, 64, 0.25, 8.0).values, make_map_mask(doubled, T, 64, 0.25, 8.0).values);
}

TEST(Normalize, PeakBecomesOne) {
  Rng rng(7);
  auto m = random_mask(rng, 8, 1.0);
  for (auto& v : m.values) v *= 0.3;
  m.normalize();
  EXPECT_EQ(*std::max_element(m.values.begin(), m.values.end()), 1.0);
  auto z = WeightMask::filled(8, 1.0, 0.0);
  z.normalize();
  for (double v : z.values) EXPECT_EQ(v, 0.0);
}

TEST(Bce, Examples) {
  const auto half = WeightMask::filled(4, 1.0, 0.5);
  EXPECT_NEAR(bce_loss(half, half), std::log(2.0), 1e-15);

  auto t = WeightMask::filled(2, 1.0, 0.0);
  t.values = {1.0, 0.0, 1.0, 0.0};
  EXPECT_LT(bce_loss(t, t), 1e-6);

  auto m = t;
  m.values = {0.9, 0.1, 0.5, 0.5};
  const double expect = (-std::log(0.9) * 2.0 - std::log(0.5) * 2.0) / 4.0;
  EXPECT_NEAR(bce_loss(m, t), expect, 1e-15);

  EXPECT_THROW(bce_loss(half, t), ConfigError);
}

TEST(Bce, TargetIsTheMinimum) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto t = random_mask(rng, 6, 1.0);
    if (trial % 2 == 0) {
      for (auto& v : t.values) v = v < 0.5 ? 0.0 : 1.0;
    }
    const auto m = random_mask(rng, 6, 1.0);
    EXPECT_GE(bce_loss(m, t), bce_loss(t, t));
  }
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  auto m = random_mask(rng, 5, 1.0);
  const auto t = random_mask(rng, 5, 1.0);
  const auto g = bce_gradient(m, t);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const double base = m.values[i], h = 1e-6;
    m.values[i] = base + h;
    const double up = bce_loss(m, t);
    m.values[i] = base - h;
    const double down = bce_loss(m, t);
    m.values[i] = base;
    EXPECT_NEAR(g[i], (up - down) / (2.0 * h), 1e-6 * std::max(1.0, std::abs(g[i])));
  }
}

TEST(Losses, IcpLossExamples) {
  const LossWeights lw;
  EXPECT_EQ(icp_loss(Twist::zero(Dim::planar), lw), 0.0);
  EXPECT_EQ(icp_loss(Twist::planar(1.0, 0.0, 0.0), lw), 1.0);
  EXPECT_NEAR(icp_loss(Twist::planar(0.1, -0.2, 0.3), lw), 0.14, 1e-15);
  LossWeights w{2.0, 3.0, 1.0};
  EXPECT_NEAR(icp_loss(Twist::planar(0.1, -0.2, 0.3), w), 2.0 * 0.05 + 3.0 * 0.09, 1e-15);
  EXPECT_THROW(icp_loss(Twist::zero(Dim::spatial), lw), ConfigError);
}

TEST(Losses, TotalLossExamples) {
  for (double g : {0.0, 1.0, 7.5}) EXPECT_EQ(total_loss(0.0, 0.0, LossWeights{1, 1, g}).total, 0.0);
  EXPECT_EQ(total_loss(1.0, 2.0, LossWeights{}).total, 3.0);
  EXPECT_EQ(total_loss(0.5, 0.25, LossWeights{1, 1, 2.0}).total, 1.0);
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    const LossWeights lw{1, 1, rng.uniform(0, 5)};
    const double a = rng.uniform(0, 10), b = rng.uniform(0, 10);
    const auto br = total_loss(a, b, lw);
    EXPECT_NEAR(br.total, br.l_icp + lw.gamma * br.l_bce, 1e-12);
  }
  EXPECT_THROW(total_loss(std::nan(""), 0.0, LossWeights{}), NumericalError);
  EXPECT_THROW((LossWeights{-1, 1, 1}).validate(), ConfigError);
}

TEST(MaskFile, PgmRoundTripWithinQuantization) {
  Rng rng(11);
  const auto m = random_mask(rng, 33, 0.2);
  const auto path = std::filesystem::temp_directory_path() / "dicp_mask_roundtrip.pgm";
  write_mask(path, m);
  EXPECT_TRUE(std::filesystem::exists(mask_sidecar_path(path)));
  const auto back = read_mask(path);
  EXPECT_EQ(back.width, 33);
  EXPECT_EQ(back.pixel_size, 0.2);
  for (std::size_t i = 0; i < m.values.size(); ++i) EXPECT_NEAR(back.values[i], m.values[i], 0.5 / 65535.0 + 1e-15);
  std::filesystem::remove(path);
  std::filesystem::remove(mask_sidecar_path(path));
  EXPECT_THROW(read_mask(path), DataError);
}

TEST(MaskFile, RejectsOutOfRangeValues) {
  auto m = WeightMask::filled(4, 1.0, 0.5);
  m.values[3] = 1.5;
  EXPECT_THROW(m.validate(), DataError);
  EXPECT_THROW(WeightMask::filled(1, 1.0, 0.0), ConfigError);
}

}  // namespace
