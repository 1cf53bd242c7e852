#pragma once

/**
 * Texture refinement with fixed geometry.
 *
 * Each iteration renders the textured mesh from a random viewpoint, asks the
 * refiner for an improved image at an annealed timestep, and takes a plain
 * gradient step on the squared error ||I - refined||^2 with respect to the
 * texels. Because shading is linear in the texture the gradient is exact:
 * dL/dtex = texture_grad(frags, 2 (I - refined)). Texels are clamped to [0, 1]
 * after every step; texels no pixel touched are never written.
 */

#include "dual3d/raster.hpp"

#include <cerrno>
#include <cstdio>
#include <memory>
#include <numbers>
#include <random>

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

namespace dual3d {

/// Linear anneal from t_start*T at iter 0 to t_end*T at iter total-1, rounded, at least 1.
inline int anneal_t(int iter, int total, int T, double t_start = 0.20, double t_end = 0.05) {
  if (total < 1 || iter < 0 || iter >= total) throw std::invalid_argument("anneal_t needs 0 <= iter < total");
  const double frac = total == 1 ? 0.0 : static_cast<double>(iter) / (total - 1);
  const double t = T * (t_start + (t_end - t_start) * frac);
  return std::max(1, static_cast<int>(std::lround(t)));
}

/// Stands in for decode(denoise(noised(encode(I)), y, t)); must return an image of the same size.
class Refiner {
 public:
  virtual ~Refiner() = default;
  virtual Grid2<Vec3> refine(const Grid2<Vec3>& image, const std::string& condition, int t) const = 0;
};

class IdentityRefiner final : public Refiner {
 public:
  Grid2<Vec3> refine(const Grid2<Vec3>& image, const std::string&, int) const override { return image; }
};

class ConstantRefiner final : public Refiner {
 public:
  explicit ConstantRefiner(Vec3 rgb) : rgb_(rgb) {}
  Grid2<Vec3> refine(const Grid2<Vec3>& image, const std::string&, int) const override {
    return Grid2<Vec3>(image.width, image.height, rgb_);
  }

 private:
  Vec3 rgb_;
};

/**
 * Pipes each image through `/bin/sh -c command`. The child receives the image
 * on stdin as width*height*3 little-endian f32 (interleaved rgb, row-major) and
 * must write the same amount back on stdout. DUAL3D_WIDTH, DUAL3D_HEIGHT,
 * DUAL3D_T and DUAL3D_CONDITION are set in its environment.
 */
class ExternalRefiner final : public Refiner {
 public:
  explicit ExternalRefiner(std::string command) : command_(std::move(command)) {}

  Grid2<Vec3> refine(const Grid2<Vec3>& image, const std::string& condition, int t) const override {
    std::vector<float> in;
    in.reserve(image.size() * 3);
    for (const Vec3& p : image.data)
      for (int c = 0; c < 3; ++c) in.push_back(static_cast<float>(p[c]));
    std::vector<float> out(in.size());

    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw std::runtime_error("pipe() failed");
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw std::runtime_error("pipe() failed");
    }
    const std::string w = std::to_string(image.width), h = std::to_string(image.height), ts = std::to_string(t);
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork() failed");
    if (pid == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      setenv("DUAL3D_WIDTH", w.c_str(), 1);
      setenv("DUAL3D_HEIGHT", h.c_str(), 1);
      setenv("DUAL3D_T", ts.c_str(), 1);
      setenv("DUAL3D_CONDITION", condition.c_str(), 1);
      execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);

    // Interleave writes and reads so a streaming child cannot deadlock on a full pipe.
    const auto* src = reinterpret_cast<const char*>(in.data());
    auto* dst = reinterpret_cast<char*>(out.data());
    const std::size_t total = in.size() * sizeof(float);
    std::size_t written = 0, got = 0;
    int wfd = to_child[1];
    const auto old_sigpipe = signal(SIGPIPE, SIG_IGN);
    while (got < total) {
      pollfd fds[2];
      int nfds = 0;
      fds[nfds++] = {from_child[0], POLLIN, 0};
      if (wfd >= 0) fds[nfds++] = {wfd, POLLOUT, 0};
      if (poll(fds, nfds, -1) < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (wfd >= 0 && (fds[1].revents & (POLLOUT | POLLERR | POLLHUP))) {
        const ssize_t n = write(wfd, src + written, std::min<std::size_t>(total - written, 1 << 16));
        if (n > 0) written += static_cast<std::size_t>(n);
        if (n < 0 || written == total) {
          close(wfd);
          wfd = -1;
        }
      }
      if (fds[0].revents & (POLLIN | POLLHUP)) {
        const ssize_t n = read(from_child[0], dst + got, total - got);
        if (n <= 0) break;
        got += static_cast<std::size_t>(n);
      }
    }
    signal(SIGPIPE, old_sigpipe);
    if (wfd >= 0) close(wfd);
    close(from_child[0]);
    int status = 0;
    waitpid(pid, &status, 0);
    if (got != total) throw std::runtime_error("external refiner returned an image of the wrong size");
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) throw std::runtime_error("external refiner exited with an error");

    Grid2<Vec3> result(image.width, image.height);
    for (std::size_t i = 0; i < result.size(); ++i) result.data[i] = Vec3(out[3 * i], out[3 * i + 1], out[3 * i + 2]);
    return result;
  }

 private:
  std::string command_;
};

/// Parses identity | constant:r,g,b | external:<cmd>.
inline std::unique_ptr<Refiner> make_refiner(const std::string& spec) {
  if (spec == "identity") return std::make_unique<IdentityRefiner>();
  if (spec.rfind("constant:", 0) == 0) {
    Vec3 rgb;
    if (std::sscanf(spec.c_str() + 9, "%lf,%lf,%lf", &rgb[0], &rgb[1], &rgb[2]) != 3)
      throw ConfigError(fmt::format("bad constant refiner '{}'", spec));
    return std::make_unique<ConstantRefiner>(rgb);
  }
  if (spec.rfind("external:", 0) == 0 && spec.size() > 9) return std::make_unique<ExternalRefiner>(spec.substr(9));
  throw ConfigError(fmt::format("unknown refiner '{}'", spec));
}

/// Random viewpoints: uniform azimuth, elevation uniform in [-30, 30] degrees, fixed radius.
struct ViewSampler {
  double radius = 2.5;
  double min_elevation_deg = -30.0, max_elevation_deg = 30.0;
  double fov_deg = 50.0;

  Camera operator()(std::mt19937_64& rng, int w, int h) const {
    std::uniform_real_distribution<double> az(0.0, 360.0), el(min_elevation_deg, max_elevation_deg);
    const double a = az(rng);
    const double e = el(rng);
    return orbit_camera(radius, a, e, fov_deg, w, h);
  }
};

struct RefineConfig {
  int iters = 100;
  double lr = 0.1;
  int T = 1000;
  double t_start = 0.20, t_end = 0.05;
  int resolution = 256;
  Vec3 background = Vec3::Ones();
  std::string condition;
  std::uint64_t seed = 0;
};

struct RefineResult {
  TextureAtlas texture;
  std::vector<double> losses;     // ||I - refined||^2 over covered pixels, per iteration
  std::vector<int> timesteps;
  std::vector<double> coverage;   // accumulated bilinear weight per texel
};

/// One gradient step of refinement for a fixed camera; returns the loss before the step.
inline double refine_step(const FragmentBuffer& frags, TextureAtlas& tex, const Refiner& refiner, int t,
                          const RefineConfig& cfg, std::vector<double>* coverage = nullptr) {
  const Grid2<Vec3> img = shade(frags, tex, cfg.background);
  const Grid2<Vec3> target = refiner.refine(img, cfg.condition, t);
  if (target.width != img.width || target.height != img.height)
    throw std::runtime_error("refiner output size does not match the rendered image");
  Grid2<Vec3> cograd(img.width, img.height, Vec3::Zero());
  double loss = 0.0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    if (!frags.data[i].covered()) continue;
    const Vec3 r = img.data[i] - target.data[i];
    loss += r.squaredNorm();
    cograd.data[i] = 2.0 * r;
  }
  const TextureAtlas g = texture_grad(frags, cograd, tex.width, tex.height);
  const std::vector<double> cov = texel_coverage(frags, tex.width, tex.height);
  for (std::size_t i = 0; i < tex.texels.size(); ++i) {
    if (cov[i] == 0.0) continue;
    tex.texels[i] = (tex.texels[i] - cfg.lr * g.texels[i]).cwiseMax(0.0).cwiseMin(1.0);
    if (coverage) (*coverage)[i] += cov[i];
  }
  return loss;
}

inline RefineResult refine_texture(const TriMesh& mesh, TextureAtlas tex, const ViewSampler& sampler,
                                   const Refiner& refiner, const RefineConfig& cfg) {
  if (mesh.uvs.empty()) throw std::invalid_argument("mesh needs uvs before refinement");
  if (cfg.iters < 1 || !(cfg.lr > 0.0)) throw std::invalid_argument("refinement needs iters >= 1 and lr > 0");
  RefineResult res;
  res.coverage.assign(tex.texels.size(), 0.0);
  std::mt19937_64 rng(cfg.seed);
  for (int it = 0; it < cfg.iters; ++it) {
    const Camera cam = sampler(rng, cfg.resolution, cfg.resolution);
    const FragmentBuffer frags = rasterize(mesh, cam, cfg.resolution, cfg.resolution);
    const int t = anneal_t(it, cfg.iters, cfg.T, cfg.t_start, cfg.t_end);
    res.timesteps.push_back(t);
    res.losses.push_back(refine_step(frags, tex, refiner, t, cfg, &res.coverage));
  }
  res.texture = std::move(tex);
  return res;
}

}  // namespace dual3d
