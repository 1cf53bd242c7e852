#include "dual3d/analytic_sdf.hpp"
#include "dual3d/field.hpp"
#include "dual3d/field_io.hpp"
#include "dual3d/regularizers.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

using namespace dual3d;

namespace {

TriPlaneField random_field(int C, int R, std::uint64_t seed, int hidden = 16, Aabb box = {}) {
  TriPlaneField f(C, R, box, FieldMlp(C, hidden));
  f.fill_random(seed, 0.3, 0.5);
  return f;
}

// Scalar bilinear lookup written against the raw [plane][c][v][u] buffer.
double oracle_sample(const TriPlaneField& f, int c, const Vec3& p) {
  const int R = f.resolution();
  const Aabb b = f.bbox();
  const int axes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  double total = 0.0;
  for (int pl = 0; pl < 3; ++pl) {
    double g[2];
    for (int k = 0; k < 2; ++k) {
      const int a = axes[pl][k];
      g[k] = (p[a] - b.lo[a]) / (b.hi[a] - b.lo[a]) * (R - 1);
      g[k] = std::min(std::max(g[k], 0.0), double(R - 1));
    }
    int i = int(g[0]), j = int(g[1]);
    if (i > R - 2) i = R - 2;
    if (j > R - 2) j = R - 2;
    const double s = g[0] - i, t = g[1] - j;
    auto val = [&](int u, int v) { return f.planes()[((std::size_t(pl) * f.channels() + c) * R + v) * R + u]; };
    total += (1 - s) * (1 - t) * val(i, j) + s * (1 - t) * val(i + 1, j) + (1 - s) * t * val(i, j + 1) + s * t * val(i + 1, j + 1);
  }
  return total;
}

double softplus_ref(double x) { return std::log(1.0 + std::exp(x)); }
double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec3 random_point(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

}  // namespace

TEST(TriPlane, NodeValueIsSumOfPlanes) {
  TriPlaneField f(1, 5);
  // Node (2, 1, 3) on a 5^3 grid over [-1,1]^3.
  f.at(Plane::XY, 0, 2, 1) = 0.25;
  f.at(Plane::XZ, 0, 2, 3) = -1.5;
  f.at(Plane::YZ, 0, 1, 3) = 4.0;
  const Vec3 p(-1.0 + 2.0 * 2 / 4, -1.0 + 2.0 * 1 / 4, -1.0 + 2.0 * 3 / 4);
  EXPECT_DOUBLE_EQ(f.sample(p)[0], 0.25 - 1.5 + 4.0);
}

TEST(TriPlane, CellCenterOfConstantCornersIsThreeK) {
  TriPlaneField f(2, 4);
  for (auto& v : f.planes()) v = 0.7;
  const VecX s = f.sample(Vec3(0.1, -0.2, 0.3));
  EXPECT_NEAR(s[0], 2.1, 1e-14);
  EXPECT_NEAR(s[1], 2.1, 1e-14);
}

TEST(TriPlane, MatchesBruteForceBilinear) {
  const TriPlaneField f = random_field(3, 8, 11);
  std::mt19937_64 rng(5);
  for (int n = 0; n < 500; ++n) {
    const Vec3 p = random_point(rng, -1.2, 1.2);  // includes clamped points
    const VecX s = f.sample(p);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s[c], oracle_sample(f, c, p), 1e-12);
  }
}

TEST(TriPlane, SamplingIsLinearInPlanes) {
  TriPlaneField a = random_field(2, 6, 1), b = random_field(2, 6, 2);
  TriPlaneField sum = a;
  for (std::size_t i = 0; i < sum.planes().size(); ++i) sum.planes()[i] = a.planes()[i] + b.planes()[i];
  std::mt19937_64 rng(3);
  for (int n = 0; n < 200; ++n) {
    const Vec3 p = random_point(rng);
    EXPECT_LE((sum.sample(p) - a.sample(p) - b.sample(p)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TriPlane, RejectsNonFinitePoint) {
  const TriPlaneField f(1, 4);
  EXPECT_THROW(f.sample(Vec3(std::nan(""), 0, 0)), std::invalid_argument);
  EXPECT_THROW(field_gradient(f, Vec3(0, INFINITY, 0)), std::invalid_argument);
}

TEST(FieldEval, ZeroFieldGivesZeroSdfAndHalfGray) {
  const TriPlaneField f(4, 4, Aabb{}, FieldMlp(4, 8));
  const FieldSample s = f.eval(Vec3(0.3, 0.1, -0.4));
  EXPECT_EQ(s.sdf, 0.0);
  EXPECT_TRUE(s.color.isApprox(Vec3::Constant(0.5)));
}

TEST(FieldEval, PassthroughMlpReturnsChannelZero) {
  TriPlaneField f = random_field(3, 8, 4);
  f.mlp() = FieldMlp::passthrough(3, 0);
  std::mt19937_64 rng(9);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p = random_point(rng);
    EXPECT_NEAR(f.sdf(p), f.sample(p)[0], 1e-12);
  }
}

TEST(FieldEval, MatchesDenseReevaluation) {
  const TriPlaneField f = random_field(3, 8, 21, 5);
  const FieldMlp& m = f.mlp();
  std::mt19937_64 rng(1);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p = random_point(rng);
    double feat[3];
    for (int c = 0; c < 3; ++c) feat[c] = oracle_sample(f, c, p);
    double out[4];
    for (int o = 0; o < 4; ++o) {
      out[o] = m.b2[o];
      for (int h = 0; h < 5; ++h) {
        double z = m.b1[h];
        for (int c = 0; c < 3; ++c) z += m.w1(h, c) * feat[c];
        out[o] += m.w2(o, h) * softplus_ref(z);
      }
    }
    const FieldSample s = f.eval(p);
    EXPECT_NEAR(s.sdf, out[0], 1e-11);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(s.color[k], sigmoid_ref(out[k + 1]), 1e-12);
  }
}

TEST(FieldGradient, ConstantFieldHasZeroGradient) {
  TriPlaneField f(2, 6, Aabb{}, FieldMlp(2, 4));
  f.fill_random(3);
  for (auto& v : f.planes()) v = 0.4;
  EXPECT_EQ(field_gradient(f, Vec3(0.2, -0.3, 0.5)), Vec3::Zero());
}

TEST(FieldGradient, MatchesCentralDifferencesAtInteriorPoints) {
  const Aabb box{Vec3(-1.0, -0.5, -2.0), Vec3(1.0, 1.5, 1.0)};
  const TriPlaneField f = random_field(4, 12, 77, 16, box);
  const double h = 1e-4 * box.extent().maxCoeff();
  const Vec3 cell = box.extent() / 11.0;
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> pick(0, 10);
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  double worst = 0.0;
  for (int n = 0; n < 1000; ++n) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = box.lo[a] + (pick(rng) + frac(rng)) * cell[a];
    Vec3 fd;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      fd[a] = (f.sdf(p + e) - f.sdf(p - e)) / (2 * h);
    }
    const Vec3 g = field_gradient(f, p);
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-8));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(FieldGradient, ZeroAlongClampedAxisOutsideBox) {
  const TriPlaneField f = random_field(2, 6, 8);
  const Vec3 g = field_gradient(f, Vec3(1.5, 0.1, -0.2));
  EXPECT_EQ(g.x(), 0.0);
  EXPECT_NE(g.y(), 0.0);
}

TEST(AnalyticSdf, SphereGradientIsRadialUnit) {
  const auto s = AnalyticSdf::sphere(Vec3(0.1, 0.0, -0.2), 0.5);
  std::mt19937_64 rng(2);
  for (int n = 0; n < 100; ++n) {
    const Vec3 p = random_point(rng);
    const Vec3 expect = (p - Vec3(0.1, 0.0, -0.2)).normalized();
    EXPECT_LT((field_gradient(s, p) - expect).norm(), 1e-12);
  }
}

TEST(Eikonal, UnitGradientsGiveZeroAndDoubledGivesOne) {
  const std::vector<Vec3> unit = {Vec3::UnitX(), Vec3(0.6, 0.8, 0.0)};
  EXPECT_NEAR(eikonal_loss(unit), 0.0, 1e-15);
  const std::vector<Vec3> two = {Vec3(2, 0, 0)};
  EXPECT_DOUBLE_EQ(eikonal_loss(two), 1.0);
  EXPECT_THROW(eikonal_loss({}), std::invalid_argument);
}

TEST(Eikonal, ExactSphereSdfIsBelowTolerance) {
  const auto s = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  std::mt19937_64 rng(4);
  std::vector<Vec3> grads;
  while (grads.size() < 1000) {
    const Vec3 p = random_point(rng);
    if (p.norm() < 1e-3) continue;
    grads.push_back(field_gradient(s, p));
  }
  EXPECT_LT(eikonal_loss(grads), 1e-10);
}

TEST(MinimalSurface, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(minimal_surface_loss(std::vector<double>{0.0}), 1.0);
  EXPECT_NEAR(minimal_surface_loss(std::vector<double>{0.1}), 1.6616e-3, 1e-7);
  EXPECT_NEAR(minimal_surface_loss(std::vector<double>{-0.1}), std::exp(-6.4), 1e-18);
  double prev = 2.0;
  for (double f = 0.0; f < 2.0; f += 0.05) {
    const double v = minimal_surface_loss(std::vector<double>{f});
    EXPECT_LT(v, prev);
    EXPECT_GT(v, 0.0);
    prev = v;
  }
}

TEST(FieldIo, RoundTripsThroughTpf1) {
  TriPlaneField f = random_field(3, 6, 31, 7, Aabb{Vec3(-1, -2, -3), Vec3(1, 2, 3)});
  // Store float-representable values so the round trip is exact.
  for (auto& v : f.planes()) v = static_cast<float>(v);
  auto& m = f.mlp();
  for (auto* mat : {&m.w1, &m.w2}) mat->array() = mat->array().cast<float>().cast<double>();
  for (auto* vec : {&m.b1, &m.b2}) vec->array() = vec->array().cast<float>().cast<double>();
  std::stringstream ss;
  write_field(ss, f);
  const TriPlaneField g = read_field(ss);
  EXPECT_EQ(g.channels(), 3);
  EXPECT_EQ(g.resolution(), 6);
  EXPECT_TRUE(g.bbox().lo.isApprox(Vec3(-1, -2, -3)));
  EXPECT_TRUE(std::equal(f.planes().begin(), f.planes().end(), g.planes().begin()));
  EXPECT_EQ(g.mlp().w1, m.w1);
  EXPECT_EQ(g.mlp().b2, m.b2);
}

TEST(FieldIo, RejectsBadMagicAndTruncation) {
  std::stringstream bad("NOPE");
  EXPECT_THROW(read_field(bad), ConfigError);
  std::stringstream full;
  write_field(full, random_field(2, 4, 1));
  std::stringstream cut(full.str().substr(0, 40));
  EXPECT_THROW(read_field(cut), ConfigError);
}

TEST(FieldIo, SaveWritesManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "dual3d_field_io";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "f.tpf1").string();
  save_field(path, random_field(2, 4, 1));
  EXPECT_TRUE(std::filesystem::exists(path + ".json"));
  EXPECT_EQ(load_field(path).channels(), 2);
  EXPECT_THROW(load_field((dir / "missing.tpf1").string()), ConfigError);
}
