// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "dual3d/dual3d.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

using namespace dual3d;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, const std::function<Outcome()>& check) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, fmt::format("exception: {}", e.what())};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  failures += !o.pass;
  fmt::print("{} [{:2d}] {}: {} ({:.3f} s)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail, secs);
  std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome toggle_schedule() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto modes = plan_modes(DdimPlan::uniform(100, 1000), ToggleSchedule{10});
  const double ms = 1e3 * seconds_since(t0);
  const auto n3d = std::count(modes.begin(), modes.end(), Mode::Mode3D);
  const bool last = modes.back() == Mode::Mode3D && DdimPlan::uniform(100, 1000).steps.back() == 1;
  return {n3d == 10 && last && ms < 1.0, fmt::format("{} of 100 steps in 3D mode, final step 3D: {}, {:.4f} ms", n3d, last, ms)};
}

Outcome gaussian_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> mu = {0.3, -0.7}, var = {0.25, 0.25};
  const NoiseSchedule sched = NoiseSchedule::cosine(1000);
  const GaussianAnalyticDenoiser d(mu, var);
  const DdimPlan plan = DdimPlan::uniform(100, 1000);
  constexpr int kRuns = 10000;
  double s1[2] = {0, 0}, s2[2] = {0, 0};
  for (int seed = 0; seed < kRuns; ++seed) {
    const SampleResult r = sample(d, sched, plan, ToggleSchedule{10}, {}, Condition{{1.0}}, seed, 7.5, 1, 2, 1, 1);
    for (int c = 0; c < 2; ++c) {
      s1[c] += r.latents.data[c];
      s2[c] += r.latents.data[c] * r.latents.data[c];
    }
  }
  const double secs = seconds_since(t0);
  bool ok = secs < 10.0;
  std::string detail;
  for (int c = 0; c < 2; ++c) {
    const double m = s1[c] / kRuns, s = std::sqrt(s2[c] / kRuns - m * m);
    const double em = std::abs(m - mu[c]) / std::abs(mu[c]), es = std::abs(s - 0.5) / 0.5;
    ok = ok && em < 0.02 && es < 0.03;
    detail += fmt::format("ch{} mean {:.4f} ({:.2f}%) std {:.4f} ({:.2f}%); ", c, m, 100 * em, s, 100 * es);
  }
  return {ok, detail + fmt::format("{:.2f} s", secs)};
}

struct SphereRender {
  RenderOutput out;
  RenderStats stats;
  double seconds = 0.0;
};

const SphereRender& sphere_render() {
  static const SphereRender r = [] {
    SphereRender s;
    const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
    RenderConfig cfg;
    cfg.inv_std = 200.0;
    const Camera cam = orbit_camera(2.5, 0.0, 0.0, 50.0, 128, 128);
    const char* prev = std::getenv("DUAL3D_THREADS");
    const std::string saved = prev ? prev : "";
    setenv("DUAL3D_THREADS", "1", 1);
    const auto t0 = std::chrono::steady_clock::now();
    s.out = render_image(sphere, cam, cfg, std::nullopt, &s.stats);
    s.seconds = seconds_since(t0);
    if (prev)
      setenv("DUAL3D_THREADS", saved.c_str(), 1);
    else
      unsetenv("DUAL3D_THREADS");
    return s;
  }();
  return r;
}

Outcome renderer_geometry() {
  const SphereRender& r = sphere_render();
  const double center = r.out.opacity(64, 64);
  int inside = 0;
  for (double o : r.out.opacity.data) inside += o > 0.5;
  const double radius_px = std::sqrt(inside / std::numbers::pi);
  const double f = 64.0 / std::tan(25.0 * std::numbers::pi / 180.0);
  const double expect = f * 0.5 / std::sqrt(2.5 * 2.5 - 0.25);
  double closure = 0.0;
  for (double e : r.stats.closure_error.data) closure = std::max(closure, e);
  const bool ok = center >= 0.99 && std::abs(radius_px - expect) <= 2.0 && closure <= 1e-6 && r.seconds < 30.0;
  return {ok, fmt::format("center opacity {:.6f}, silhouette radius {:.3f} px vs {:.3f} px, max closure error {:.2e}, "
                          "{:.2f} s single-threaded",
                          center, radius_px, expect, closure, r.seconds)};
}

Outcome sampling_budget() {
  const RenderStats& s = sphere_render().stats;
  int bad_tail = 0, bad_up = 0, bad_march = 0, max_march = 0;
  for (std::size_t i = 0; i < s.tail.size(); ++i) {
    bad_tail += s.tail.data[i] != 24;
    bad_up += s.upsampled.data[i] != 24;
    bad_march += s.marched.data[i] > 24;
    max_march = std::max(max_march, s.marched.data[i]);
  }
  const bool ok = bad_tail == 0 && bad_up == 0 && bad_march == 0;
  return {ok, fmt::format("{} rays: uniform != 24 on {}, upsampled != 24 on {}, grid-marched max {} (over budget on {})",
                          s.tail.size(), bad_tail, bad_up, max_march, bad_march)};
}

Outcome gradients() {
  const Aabb box{Vec3(-1.0, -0.5, -2.0), Vec3(1.0, 1.5, 1.0)};
  TriPlaneField field(4, 12, box, FieldMlp(4, 16));
  field.fill_random(77, 0.3, 0.5);
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
      fd[a] = (field.sdf(p + e) - field.sdf(p - e)) / (2 * h);
    }
    worst = std::max(worst, (field_gradient(field, p) - fd).norm() / std::max(fd.norm(), 1e-8));
  }
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> grads;
  while (grads.size() < 1000) {
    const Vec3 p(u(rng), u(rng), u(rng));
    if (p.norm() > 1e-3) grads.push_back(field_gradient(sphere, p));
  }
  const double eik = eikonal_loss(grads);
  return {worst < 1e-4 && eik < 1e-10,
          fmt::format("max relative FD error {:.2e} over 1000 points, sphere eikonal loss {:.2e}", worst, eik)};
}

Outcome loss_constants() {
  const double v = total_loss(1, 1, 1, 1);
  return {v == 2.11, fmt::format("total_loss(1,1,1,1) = {:.17g}", v)};
}

Outcome marching_cubes_sphere() {
  const auto sphere = AnalyticSdf::sphere(Vec3::Zero(), 0.5);
  const TriMesh m = marching_cubes(sphere, 64);
  const double spacing = sphere.bbox().extent().x() / 63.0;
  double sum = 0.0;
  for (const Vec3& v : m.vertices) sum += std::abs(v.norm() - 0.5);
  const double mean = sum / m.vertices.size();
  const bool tight = is_watertight(m);
  const long long chi = euler_characteristic(m);
  return {mean < spacing && tight && chi == 2,
          fmt::format("mean radial error {:.2e} vs spacing {:.2e}, watertight {}, Euler characteristic {}, {} faces", mean,
                      spacing, tight, chi, m.faces.size())};
}

TriMesh open_prism() {
  TriMesh m;
  for (int i = 0; i < 8; ++i) m.vertices.emplace_back((i & 1) - 0.5, ((i >> 1) & 1) - 0.5, ((i >> 2) & 1) - 0.5);
  m.faces = {{0, 2, 3}, {0, 3, 1}, {4, 5, 7}, {4, 7, 6}, {0, 4, 6}, {0, 6, 2}, {1, 3, 7}, {1, 7, 5}};
  return m;
}

Outcome texture_refinement() {
  TriMesh m = open_prism();
  const AtlasLayout a = build_uv_atlas(m, 8 * 64 * 64);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  TextureAtlas t0(a.width, a.height);
  for (auto& v : t0.texels) v = Vec3(u(rng), u(rng), u(rng));
  RefineConfig cfg;  // 100 iterations, lr 0.1
  cfg.resolution = 384;

  const RefineResult id = refine_texture(m, t0, ViewSampler{}, IdentityRefiner{}, cfg);
  const double id_loss = *std::max_element(id.losses.begin(), id.losses.end());
  const bool fixed = id_loss == 0.0 && id.texture.texels == t0.texels;

  const RefineResult gray = refine_texture(m, t0, ViewSampler{}, ConstantRefiner(Vec3::Constant(0.5)), cfg);
  double err = 0.0;
  int visible = 0;
  bool invisible_kept = true;
  for (std::size_t i = 0; i < gray.texture.texels.size(); ++i) {
    if (gray.coverage[i] == 0.0) {
      invisible_kept = invisible_kept && gray.texture.texels[i] == t0.texels[i];
      continue;
    }
    err += (gray.texture.texels[i] - Vec3::Constant(0.5)).cwiseAbs().mean();
    ++visible;
  }
  err /= visible;
  const int a0 = anneal_t(0, 100, 1000), a1 = anneal_t(99, 100, 1000);
  const bool ok = fixed && err < 1e-2 && invisible_kept && a0 == 200 && a1 == 50 && cfg.iters == 100 && cfg.lr == 0.1;
  return {ok, fmt::format("identity max loss {}, texture unchanged {}; constant target visible-texel error {:.4f} over {} "
                          "texels after {} iterations at lr {}; anneal {} -> {}",
                          id_loss, fixed, err, visible, cfg.iters, cfg.lr, a0, a1)};
}

Outcome network_contracts() {
  const ShapeAudit s = audit_shapes(NetConfig::full_scale());
  const bool shapes = s.denoiser_in == Shape{7, 10, 32, 32} && s.decoder_out == Shape{3, 64, 256, 256};

  std::vector<Camera> cams;
  for (int i = 0; i < 3; ++i) cams.push_back(orbit_camera(2.5, 120.0 * i, 10.0, 50.0, 32, 32));
  const LatentStack stack = assemble_stack(gaussian_latents(3, 4, 4, 4, 7), cams, gaussian_latents(3, 4, 4, 4, 8));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  auto randn = [&](int r, int c) {
    MatX m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
  };
  const AttentionWeights w{randn(8, 10), randn(8, 10), randn(8, 10), randn(10, 8), 2};
  const std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  LatentStack permuted = stack;
  for (int e = 0; e < 6; ++e)
    for (int c = 0; c < 10; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) permuted.maps.at(e, c, y, x) = stack.maps.at(perm[e], c, y, x);
  const LatentStack ya = cross_view_attention(stack, w), yb = cross_view_attention(permuted, w);
  double equiv = 0.0;
  for (int e = 0; e < 6; ++e)
    for (int c = 0; c < 10; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) equiv = std::max(equiv, std::abs(yb.maps.at(e, c, y, x) - ya.maps.at(perm[e], c, y, x)));

  NetConfig cfg;
  cfg.views = 2;
  cfg.latent_res = 4;
  cfg.model_width = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.triplane_channels = 4;
  cfg.triplane_res = 16;
  const ParamStore p = init_params(cfg, 3);
  const LatentStack feats{2, gaussian_latents(5, cfg.model_width, 4, 4, 11)};
  const LatentTensor tf = tiny_transformer_forward(feats, p, cfg);
  double ident = 0.0;
  for (int e = 0; e < 3; ++e)
    for (int c = 0; c < cfg.model_width; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) ident = std::max(ident, std::abs(tf.at(e, c, y, x) - feats.maps.at(2 + e, c, y, x)));

  EmaNorm norm{1.0, 0.99};
  const std::vector<double> x = {0.5, -1.5, 2.0};
  const bool passthrough = ema_norm_forward(x, norm, true) == x;

  const bool ok = shapes && equiv <= 1e-6 && ident == 0.0 && passthrough;
  return {ok, fmt::format("full-scale stack {}x{}x{}x{} -> tri-planes {}x{}x{}x{} ({} transformer params, none allocated); "
                          "permutation error {:.1e}; transformer identity error {}; EMA passthrough {}",
                          s.denoiser_in[0], s.denoiser_in[1], s.denoiser_in[2], s.denoiser_in[3], s.decoder_out[0],
                          s.decoder_out[1], s.decoder_out[2], s.decoder_out[3], s.transformer_params, equiv, ident, passthrough)};
}

Outcome adjoint_identity() {
  TriMesh m = marching_cubes(AnalyticSdf::sphere(Vec3::Zero(), 0.5), 16);
  const AtlasLayout a = build_uv_atlas(m, 1 << 16);
  const FragmentBuffer frags = rasterize(m, orbit_camera(2.5, 30, 10, 50, 48, 48), 48, 48);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    TextureAtlas t(a.width, a.height);
    for (auto& v : t.texels) v = Vec3(n(rng), n(rng), n(rng));
    Grid2<Vec3> g(48, 48);
    for (auto& v : g.data) v = Vec3(n(rng), n(rng), n(rng));
    const auto img = shade(frags, t, Vec3::Zero());
    const auto tg = texture_grad(frags, g, a.width, a.height);
    double lhs = 0.0, rhs = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) {
      lhs += img.data[i].dot(g.data[i]);
      scale += img.data[i].norm() * g.data[i].norm();
    }
    for (std::size_t i = 0; i < t.texels.size(); ++i) rhs += t.texels[i].dot(tg.texels[i]);
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(scale, 1.0));
  }
  return {worst <= 1e-9, fmt::format("max relative mismatch {:.2e} over 100 pairs", worst)};
}

Outcome metrics_oracle() {
  const double c = 0.5, s = std::sqrt(3.0) / 2;
  EmbeddingSet e;
  e.text_embeddings = MatX(2, 2);
  e.text_embeddings << 1, 0, 0, 1;
  e.image_embeddings = MatX(4, 2);
  e.image_embeddings << 2, 0, c, s, s, c, 1, 0;
  e.text_index = {0, 0, 1, 1};
  // cosines with the matched text: 1, 0.5, 0.5, 0
  const double clip = clip_similarity(e), rp = r_precision(e);
  bool ok = std::abs(clip - 125.0) < 1e-12 && rp == 25.0;

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  int mismatches = 0;
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingSet r;
    r.image_embeddings = MatX(32, 12);
    r.text_embeddings = MatX(6, 12);
    for (Eigen::Index i = 0; i < r.image_embeddings.size(); ++i) r.image_embeddings.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < r.text_embeddings.size(); ++i) r.text_embeddings.data()[i] = n(rng);
    for (int i = 0; i < 32; ++i) r.text_index.push_back(i % 6);
    int hits = 0;
    for (int i = 0; i < 32; ++i) {
      int best = -1;
      double best_v = -2.0;
      bool tie = false;
      for (int t = 0; t < 6; ++t) {
        const VecX a = r.image_embeddings.row(i), b = r.text_embeddings.row(t);
        const double v = a.dot(b) / std::sqrt(a.squaredNorm() * b.squaredNorm());
        if (v > best_v) {
          best_v = v;
          best = t;
          tie = false;
        } else if (v == best_v) {
          tie = true;
        }
      }
      hits += best == r.text_index[i] && !tie;
    }
    mismatches += r_precision(r) != 100.0 * hits / 32;
  }
  ok = ok && mismatches == 0;
  return {ok, fmt::format("hand set: CLIP similarity {} (expect 125), R-precision {} (expect 25); brute-force R-precision "
                          "mismatches {} of 20",
                          clip, rp, mismatches)};
}

int run_demo(const fs::path& out) {
  const std::string cmd = fmt::format("{} demo --out {} --seed 7 >/dev/null 2>&1", DUAL3D_CLI_PATH, out.string());
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome demo_determinism() {
  const fs::path root = fs::temp_directory_path() / "dual3d_acceptance";
  fs::remove_all(root);
  const auto t0 = std::chrono::steady_clock::now();
  const int ca = run_demo(root / "a");
  const int cb = run_demo(root / "b");
  const double secs = seconds_since(t0);
  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  };
  const std::string ma = slurp(root / "a" / "manifest.json"), mb = slurp(root / "b" / "manifest.json");
  const bool ok = ca == 0 && cb == 0 && !ma.empty() && ma == mb && secs < 300.0;
  return {ok, fmt::format("exit codes {} and {}, manifests identical {} ({} bytes), two runs in {:.1f} s", ca, cb,
                          !ma.empty() && ma == mb, ma.size(), secs)};
}

}  // namespace

int main() {
  criterion(1, "toggle schedule", toggle_schedule);
  criterion(2, "Gaussian-oracle sampling", gaussian_oracle);
  criterion(3, "renderer geometry", renderer_geometry);
  criterion(4, "sampling budget", sampling_budget);
  criterion(5, "field gradients", gradients);
  criterion(6, "loss constants", loss_constants);
  criterion(7, "marching cubes", marching_cubes_sphere);
  criterion(8, "texture refinement", texture_refinement);
  criterion(9, "network contracts", network_contracts);
  criterion(10, "shade adjoint", adjoint_identity);
  criterion(11, "metrics oracle", metrics_oracle);
  criterion(12, "end-to-end determinism", demo_determinism);
  fmt::print("{} of 12 criteria passed\n", 12 - failures);
  return failures == 0 ? 0 : 1;
}
