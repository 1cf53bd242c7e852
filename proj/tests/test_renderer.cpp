#include "dual3d/analytic_sdf.hpp"
#include "dual3d/renderer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dual3d;

namespace {

TriPlaneField constant_field(double value) {
  TriPlaneField f(1, 4, Aabb{}, FieldMlp::passthrough(1));
  for (auto& v : f.planes()) v = value / 3.0;
  return f;
}

double logistic_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Does the ray through pixel (x, y) hit the sphere? Plain quadratic, no renderer code.
bool hits_sphere(const Camera& cam, int x, int y, double r) {
  const Ray ray = pixel_ray(cam, x + 0.5, y + 0.5);
  const double b = ray.origin.dot(ray.direction);
  const double c = ray.origin.squaredNorm() - r * r;
  return b * b - c >= 0.0;
}

}  // namespace

TEST(Occupancy, ConstantPositiveFieldIsEmpty) {
  const TriPlaneField f = constant_field(10.0);
  const OccupancyGrid g = build_occupancy_grid(f, 16, 0.0);
  EXPECT_EQ(g.occupied_count(), 0u);
}

TEST(Occupancy, NonFiniteFieldThrows) {
  const TriPlaneField f = constant_field(std::numeric_limits<double>::infinity());
  EXPECT_THROW(build_occupancy_grid(f, 8, 0.0), std::runtime_error);
}

TEST(Occupancy, DenseSamplingFindsNoMissedCrossing) {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  const OccupancyGrid g = build_occupancy_grid(sphere, 32, 0.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  int crossings = 0;
  for (int r = 0; r < 300; ++r) {
    const Vec3 origin = 2.5 * Vec3(n(rng), n(rng), n(rng)).normalized();
    const Ray ray{origin, (Vec3(u(rng), u(rng), u(rng)) - origin).normalized()};
    double prev = sphere.sdf(ray.at(0.0));
    for (double t = 1e-3; t < 5.0; t += 1e-3) {
      const double cur = sphere.sdf(ray.at(t));
      if ((prev < 0) != (cur < 0)) {
        const Vec3 p = ray.at(t - 1e-3 * cur / (cur - prev));
        const Vec3 idx = (p - g.bbox.lo).cwiseQuotient(g.cell_size());
        const int i = std::clamp(int(idx.x()), 0, 31), j = std::clamp(int(idx.y()), 0, 31), k = std::clamp(int(idx.z()), 0, 31);
        EXPECT_TRUE(g.occupied(i, j, k)) << "missed crossing at " << p.transpose();
        ++crossings;
      }
      prev = cur;
    }
  }
  EXPECT_GT(crossings, 100);
}

TEST(Occupancy, SphereCountWithinShellBounds) {
  const double r = 0.5;
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), r);
  const int G = 32;
  const OccupancyGrid g = build_occupancy_grid(sphere, G, 0.0);
  // Brute force: cells whose box the sphere surface actually passes through.
  std::size_t shell = 0;
  const Vec3 cs = g.cell_size();
  for (int k = 0; k < G; ++k)
    for (int j = 0; j < G; ++j)
      for (int i = 0; i < G; ++i) {
        const Vec3 lo = g.bbox.lo + Vec3(i, j, k).cwiseProduct(cs), hi = lo + cs;
        const Vec3 nearest = Vec3::Zero().cwiseMax(lo).cwiseMin(hi);
        const Vec3 far = lo.cwiseAbs().cwiseMax(hi.cwiseAbs());
        if (nearest.norm() <= r && far.norm() >= r) {
          ++shell;
          EXPECT_TRUE(g.occupied(i, j, k));
        }
      }
  EXPECT_GE(g.occupied_count(), shell);
  EXPECT_LE(g.occupied_count(), 3 * shell);
}

TEST(March, EmptyGridGivesUniformTailOnly) {
  const OccupancyGrid g = build_occupancy_grid(constant_field(10.0), 16, 0.0);
  const Ray ray{Vec3(0, 0, 2.5), -Vec3::UnitZ()};
  const MarchSamples m = march_ray(g, ray, 0.5, 4.5, 24);
  EXPECT_EQ(m.marched, 0);
  ASSERT_EQ(m.depths.size(), 24u);
  for (int i = 0; i < 24; ++i) EXPECT_DOUBLE_EQ(m.depths[i], 0.5 + 4.0 * i / 23.0);
}

TEST(March, RayMissingBoxGivesUniformTailOnly) {
  const OccupancyGrid g = build_occupancy_grid(AnalyticSdf::sphere(Vec3::Zero(), 0.5), 16, 0.0);
  const Ray ray{Vec3(0, 3, 2.5), -Vec3::UnitZ()};
  const MarchSamples m = march_ray(g, ray, 0.5, 4.5, 24);
  EXPECT_EQ(m.marched, 0);
  EXPECT_EQ(m.depths.size(), 24u);
}

TEST(March, CenterRaySamplesNearSurface) {
  const OccupancyGrid g = build_occupancy_grid(AnalyticSdf::sphere(Vec3::Zero(), 0.5), 32, 0.0);
  const Ray ray{Vec3(0.01, -0.02, 2.5), Vec3(-0.01, 0.02, -2.5).normalized()};
  const MarchSamples m = march_ray(g, ray, 0.5, 4.5, 24);
  EXPECT_EQ(m.marched, 24);
  const double hit = ray.origin.norm() - 0.5;
  const double cell = g.cell_size().x();
  EXPECT_TRUE(std::any_of(m.depths.begin(), m.depths.end(), [&](double t) { return std::abs(t - hit) <= cell; }));
  EXPECT_TRUE(std::is_sorted(m.depths.begin(), m.depths.end()));
}

TEST(Upsample, NoSurfaceKeepsContract) {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  const Ray ray{Vec3(0, 2, 2.5), -Vec3::UnitZ()};
  const auto depths = linspace(0.5, 4.5, 24);
  const UpsampleResult up = upsample_points(sphere, ray, depths, 64.0, 24);
  EXPECT_EQ(up.depths.size(), 48u);
  EXPECT_EQ(up.added, 24);
  EXPECT_TRUE(std::adjacent_find(up.depths.begin(), up.depths.end(), std::greater_equal<>()) == up.depths.end());
}

TEST(Upsample, ConcentratesInTheCrossingInterval) {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  const Ray ray{Vec3(0, 0, 2.5), -Vec3::UnitZ()};
  const auto depths = linspace(0.5, 4.5, 24);  // surface at depth 2.0
  const UpsampleResult up = upsample_points(sphere, ray, depths, 64.0, 24);
  const auto k = std::upper_bound(depths.begin(), depths.end(), 2.0) - depths.begin();
  const double a = depths[k - 1], b = depths[k];
  int inside = 0;
  for (double t : up.depths)
    if (t > a && t < b) ++inside;
  EXPECT_GE(inside, 12);
  EXPECT_TRUE(std::adjacent_find(up.depths.begin(), up.depths.end(), std::greater_equal<>()) == up.depths.end());
}

TEST(Alpha, ClosedFormCases) {
  EXPECT_EQ(neus_alpha(0.3, 0.3, 100.0), 0.0);
  const double expect = (logistic_ref(10.0) - logistic_ref(-10.0)) / logistic_ref(10.0);
  EXPECT_NEAR(neus_alpha(0.1, -0.1, 100.0), expect, 1e-12);
  EXPECT_NEAR(neus_alpha(0.1, -0.1, 100.0), 0.9999546, 1e-7);
  EXPECT_EQ(neus_alpha(-0.1, 0.1, 100.0), 0.0);
  EXPECT_THROW(neus_alpha(0.0, 0.0, 0.0), std::invalid_argument);
  // Large s|f| stays finite.
  EXPECT_NEAR(neus_alpha(1.0, -1.0, 1e6), 1.0, 1e-12);
  EXPECT_EQ(neus_alpha(-2.0, -1.0, 1e6), 0.0);
  EXPECT_TRUE(std::isfinite(neus_alpha(-1.0, -2.0, 1e6)));
}

TEST(Composite, SingleOpaqueSample) {
  const std::vector<double> a = {1.0}, d = {2.0};
  const std::vector<Vec3> c = {Vec3(1, 0, 0)};
  const Composite r = composite(a, c, d, Vec3::Ones());
  EXPECT_EQ(r.rgb, Vec3(1, 0, 0));
  EXPECT_EQ(r.opacity, 1.0);
  EXPECT_EQ(r.depth, 2.0);
}

TEST(Composite, TransparentGivesBackground) {
  const std::vector<double> a = {0.0, 0.0}, d = {1.0, 2.0};
  const std::vector<Vec3> c = {Vec3(1, 0, 0), Vec3(0, 0, 1)};
  const Composite r = composite(a, c, d, Vec3(0.2, 0.3, 0.4));
  EXPECT_EQ(r.rgb, Vec3(0.2, 0.3, 0.4));
  EXPECT_EQ(r.opacity, 0.0);
}

TEST(Composite, PrefixProductWeights) {
  const std::vector<double> a = {0.5, 0.5}, d = {1.0, 3.0};
  const Vec3 red(1, 0, 0), blue(0, 0, 1), bg(0, 1, 0);
  const std::vector<Vec3> c = {red, blue};
  const Composite r = composite(a, c, d, bg);
  EXPECT_DOUBLE_EQ(r.opacity, 0.75);
  EXPECT_TRUE(r.rgb.isApprox(0.5 * red + 0.25 * blue + 0.25 * bg));
  EXPECT_DOUBLE_EQ(r.depth, (0.5 * 1.0 + 0.25 * 3.0) / 0.75);
  EXPECT_DOUBLE_EQ(r.transmittance, 0.25);
  EXPECT_THROW(composite(a, std::vector<Vec3>{red}, d, bg), std::invalid_argument);
}

TEST(Render, EmptyFieldIsBackground) {
  const TriPlaneField f = constant_field(10.0);
  RenderConfig cfg;
  cfg.background = Vec3(0.1, 0.2, 0.3);
  cfg.grid_res = 16;
  const Camera cam = orbit_camera(2.5, 0, 0, 50, 16, 16);
  const RenderOutput out = render_image(f, cam, cfg);
  for (std::size_t i = 0; i < out.rgb.size(); ++i) {
    EXPECT_LT(out.opacity.data[i], 1e-12);
    EXPECT_LT((out.rgb.data[i] - cfg.background).norm(), 1e-12);
  }
}

TEST(Render, PatchesStitchBitExactly) {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5, ColorRule{ColorRule::Kind::Position});
  RenderConfig cfg;
  const Camera cam = orbit_camera(2.5, 30, 15, 50, 128, 128);
  const NeusRenderer<AnalyticSdf> r(sphere, cfg);
  const RenderOutput full = r.render(cam);
  for (int py = 0; py < 2; ++py)
    for (int px = 0; px < 2; ++px) {
      const RenderOutput part = r.render(cam, Patch{64 * px, 64 * py, 64, 64});
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          ASSERT_EQ(part.rgb(x, y), full.rgb(64 * px + x, 64 * py + y));
          ASSERT_EQ(part.opacity(x, y), full.opacity(64 * px + x, 64 * py + y));
          ASSERT_EQ(part.depth(x, y), full.depth(64 * px + x, 64 * py + y));
        }
    }
  EXPECT_THROW(r.render(cam, Patch{100, 100, 64, 64}), std::invalid_argument);
}

TEST(Render, PerPixelInvariants) {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  RenderConfig cfg;
  cfg.inv_std = 200;
  const Camera cam = orbit_camera(2.5, 0, 0, 50, 64, 64);
  RenderStats stats;
  const RenderOutput out = render_image(sphere, cam, cfg, std::nullopt, &stats);
  for (std::size_t i = 0; i < out.opacity.size(); ++i) {
    EXPECT_GE(out.opacity.data[i], 0.0);
    EXPECT_LE(out.opacity.data[i], 1.0);
    EXPECT_LE(stats.closure_error.data[i], 1e-6);
    EXPECT_LE(stats.transmittance_increase.data[i], 0.0);
    EXPECT_TRUE(out.rgb.data[i].allFinite());
  }
}

TEST(Render, SilhouetteApproachesHardDiskAsSharpnessGrows) {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  const Camera cam = orbit_camera(2.5, 0, 0, 50, 64, 64);
  double prev = std::numeric_limits<double>::infinity();
  for (double s : {50.0, 200.0, 800.0}) {
    RenderConfig cfg;
    cfg.inv_std = s;
    const RenderOutput out = render_image(sphere, cam, cfg);
    double err = 0.0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) err += std::abs(out.opacity(x, y) - (hits_sphere(cam, x, y, 0.5) ? 1.0 : 0.0));
    EXPECT_LT(err, prev) << "s=" << s;
    prev = err;
  }
}
