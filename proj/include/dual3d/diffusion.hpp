#pragma once

/**
 * Deterministic DDIM sampling with x0-prediction and dual-mode toggling.
 *
 * Timesteps count noise levels 1..T (alpha_bar[0] = 1 is clean data). A plan
 * visits K training timesteps from high to low; the step index i counts plan
 * positions from K down to 1, and step i runs the 3D mode iff (i - 1) mod m == 0,
 * which makes the final step 3D. Classifier-free guidance is applied to 2D-mode
 * predictions only.
 */

#include "dual3d/camera.hpp"
#include "dual3d/field.hpp"

#include <nlohmann/json.hpp>

#include <numbers>
#include <random>

namespace dual3d {

/// Multi-view latent tensor, laid out [view][channel][y][x].
struct LatentTensor {
  int views = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  LatentTensor() = default;
  LatentTensor(int v, int c, int h, int w, double fill = 0.0)
      : views(v), channels(c), height(h), width(w), data(static_cast<std::size_t>(v) * c * h * w, fill) {
    if (v < 1 || c < 1 || h < 1 || w < 1) throw std::invalid_argument("latent shape must be positive");
  }

  std::size_t size() const { return data.size(); }
  bool same_shape(const LatentTensor& o) const {
    return views == o.views && channels == o.channels && height == o.height && width == o.width;
  }
  double& at(int v, int c, int y, int x) {
    return data[((static_cast<std::size_t>(v) * channels + c) * height + y) * width + x];
  }
  double at(int v, int c, int y, int x) const {
    return data[((static_cast<std::size_t>(v) * channels + c) * height + y) * width + x];
  }
};

inline void require_same_shape(const LatentTensor& a, const LatentTensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("latent shapes do not match");
}

// ---------------------------------------------------------------------------
// Noise schedule

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kAlphaBarFloor = 1e-5;

/// Squared-cosine cumulative signal level, normalized so that t = 0 gives 1.
inline double cosine_alpha_bar(int t, int T) {
  if (T < 1 || t < 0 || t > T) throw std::invalid_argument("cosine schedule needs 0 <= t <= T");
  auto f = [](double x) {
    const double c = std::cos((x + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0);
    return c * c;
  };
  const double v = f(static_cast<double>(t) / T) / f(0.0);
  return std::clamp(v, kAlphaBarFloor, 1.0);
}

struct NoiseSchedule {
  int T = 1000;
  std::vector<double> alpha_bar;  // T + 1 entries

  static NoiseSchedule cosine(int T = 1000) {
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.resize(T + 1);
    for (int t = 0; t <= T; ++t) s.alpha_bar[t] = cosine_alpha_bar(t, T);
    s.validate();
    return s;
  }

  /// alpha_bar[0] = 1, non-increasing, and strictly decreasing until the floor is reached.
  void validate() const {
    if (static_cast<int>(alpha_bar.size()) != T + 1) throw std::invalid_argument("schedule table needs T + 1 entries");
    if (alpha_bar[0] != 1.0) throw std::invalid_argument("alpha_bar[0] must be 1");
    for (int t = 1; t <= T; ++t) {
      const bool floored = alpha_bar[t] <= kAlphaBarFloor;
      if (alpha_bar[t] > alpha_bar[t - 1] || (!floored && alpha_bar[t] == alpha_bar[t - 1]))
        throw std::invalid_argument("alpha_bar must decrease");
    }
    if (!(alpha_bar[T] > 0.0 && alpha_bar[T] <= 1e-3)) throw std::invalid_argument("alpha_bar[T] must lie in (0, 1e-3]");
  }

  double at(int t) const {
    if (t < 0 || t > T) throw std::out_of_range("timestep outside schedule");
    return alpha_bar[t];
  }
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps
inline LatentTensor add_noise(const LatentTensor& z0, const LatentTensor& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(z0, eps);
  const double ab = sched.at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentTensor out = z0;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
  return out;
}

/// Deterministic (eta = 0) DDIM update from an x0 prediction.
inline LatentTensor ddim_step(const LatentTensor& z_t, const LatentTensor& x0_pred, int t, int t_prev,
                              const NoiseSchedule& sched) {
  require_same_shape(z_t, x0_pred);
  if (!(t > t_prev && t_prev >= 0)) throw std::invalid_argument("ddim_step needs t > t_prev >= 0");
  if (t_prev == 0) return x0_pred;
  const double ab = sched.at(t), ab_prev = sched.at(t_prev);
  const double sa = std::sqrt(ab), s1a = std::sqrt(1.0 - ab);
  const double sp = std::sqrt(ab_prev), s1p = std::sqrt(1.0 - ab_prev);
  LatentTensor out = z_t;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eps = (z_t.data[i] - sa * x0_pred.data[i]) / s1a;
    out.data[i] = sp * x0_pred.data[i] + s1p * eps;
  }
  return out;
}

inline LatentTensor cfg_combine(const LatentTensor& cond, const LatentTensor& uncond, double w) {
  require_same_shape(cond, uncond);
  LatentTensor out = uncond;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = uncond.data[i] + w * (cond.data[i] - uncond.data[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Plans and the mode toggle

/// K training timesteps, strictly decreasing, ending at 1, evenly strided by floor(T / K).
struct DdimPlan {
  std::vector<int> steps;

  static DdimPlan uniform(int K, int T) {
    if (K < 1 || K > T) throw std::invalid_argument("DDIM plan needs 1 <= K <= T");
    const int stride = T / K;
    DdimPlan p;
    for (int k = K - 1; k >= 0; --k) p.steps.push_back(1 + k * stride);
    return p;
  }

  int size() const { return static_cast<int>(steps.size()); }

  void validate(int T) const {
    if (steps.empty()) throw std::invalid_argument("empty DDIM plan");
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i] < 1 || steps[i] > T) throw std::invalid_argument("plan step outside [1, T]");
      if (i > 0 && steps[i] >= steps[i - 1]) throw std::invalid_argument("plan must be strictly decreasing");
    }
  }
};

enum class Mode { Mode2D, Mode3D };

struct ToggleSchedule {
  int m = 10;
};

inline Mode toggle_mode(int step, int m) {
  if (step < 1 || m < 1) throw std::invalid_argument("toggle needs step >= 1 and m >= 1");
  return (step - 1) % m == 0 ? Mode::Mode3D : Mode::Mode2D;
}

/// Modes for each plan position, in execution order (step index K first).
inline std::vector<Mode> plan_modes(const DdimPlan& plan, const ToggleSchedule& toggle) {
  std::vector<Mode> modes;
  const int K = plan.size();
  for (int i = 0; i < K; ++i) modes.push_back(toggle_mode(K - i, toggle.m));
  return modes;
}

// ---------------------------------------------------------------------------
// Denoisers

/// Text condition stand-in: an embedding vector; empty means unconditional.
struct Condition {
  std::vector<double> embedding;
  bool unconditional() const { return embedding.empty(); }
};

struct Mode3dOutput {
  LatentTensor latents;
  TriPlaneField field;
};

/// x0-predicting multi-view denoiser with a 2D and a render-consistent 3D mode.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual LatentTensor predict_2d(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond,
                                  int t, const NoiseSchedule& sched) const = 0;
  virtual Mode3dOutput predict_3d(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond,
                                  int t, const NoiseSchedule& sched) const = 0;
};

/// Exact posterior mean E[x0 | z_t] for data x0 ~ N(mu, s^2 I) per channel.
/// Channel c of every view and pixel uses mean[c] and variance[c].
class GaussianAnalyticDenoiser final : public Denoiser {
 public:
  GaussianAnalyticDenoiser(std::vector<double> mean, std::vector<double> variance)
      : mean_(std::move(mean)), variance_(std::move(variance)) {
    if (mean_.size() != variance_.size() || mean_.empty()) throw std::invalid_argument("mean/variance size mismatch");
    for (double v : variance_)
      if (!(v > 0.0)) throw std::invalid_argument("variance must be positive");
  }

  LatentTensor posterior_mean(const LatentTensor& z_t, int t, const NoiseSchedule& sched) const {
    if (static_cast<std::size_t>(z_t.channels) != mean_.size()) throw std::invalid_argument("channel count mismatch");
    const double ab = sched.at(t), sa = std::sqrt(ab);
    LatentTensor out = z_t;
    for (int v = 0; v < z_t.views; ++v)
      for (int c = 0; c < z_t.channels; ++c) {
        const double gain = sa * variance_[c] / (ab * variance_[c] + 1.0 - ab);
        for (int y = 0; y < z_t.height; ++y)
          for (int x = 0; x < z_t.width; ++x)
            out.at(v, c, y, x) = mean_[c] + gain * (z_t.at(v, c, y, x) - sa * mean_[c]);
      }
    return out;
  }

  LatentTensor predict_2d(const LatentTensor& z_t, std::span<const Camera>, const Condition&, int t,
                          const NoiseSchedule& sched) const override {
    return posterior_mean(z_t, t, sched);
  }
  Mode3dOutput predict_3d(const LatentTensor& z_t, std::span<const Camera>, const Condition&, int t,
                          const NoiseSchedule& sched) const override {
    return {posterior_mean(z_t, t, sched), TriPlaneField()};
  }

 private:
  std::vector<double> mean_, variance_;
};

// ---------------------------------------------------------------------------
// Sampling loop

struct SamplerConfig {
  int steps = 100;
  ToggleSchedule toggle{10};
  double cfg_scale = 7.5;
  std::uint64_t seed = 0;
};

struct SampleResult {
  LatentTensor latents;
  TriPlaneField field;  // from the last Mode3D step
  std::vector<Mode> modes;
  int steps_3d = 0;
};

inline LatentTensor gaussian_latents(int views, int channels, int h, int w, std::uint64_t seed) {
  LatentTensor z(views, channels, h, w);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (auto& v : z.data) v = n01(rng);
  return z;
}

inline SampleResult sample(const Denoiser& denoiser, const NoiseSchedule& sched, const DdimPlan& plan,
                           const ToggleSchedule& toggle, std::span<const Camera> cameras, const Condition& condition,
                           std::uint64_t seed, double cfg_scale, int views, int channels, int h, int w) {
  plan.validate(sched.T);
  const std::vector<Mode> modes = plan_modes(plan, toggle);
  if (std::none_of(modes.begin(), modes.end(), [](Mode m) { return m == Mode::Mode3D; }))
    throw std::runtime_error("no 3D-consistent output");

  SampleResult res;
  res.modes = modes;
  LatentTensor z = gaussian_latents(views, channels, h, w, seed);
  const Condition null_condition{};
  bool have_field = false;
  for (int i = 0; i < plan.size(); ++i) {
    const int t = plan.steps[i];
    const int t_prev = i + 1 < plan.size() ? plan.steps[i + 1] : 0;
    LatentTensor x0;
    if (modes[i] == Mode::Mode3D) {
      Mode3dOutput out = denoiser.predict_3d(z, cameras, condition, t, sched);
      x0 = std::move(out.latents);
      res.field = std::move(out.field);
      have_field = true;
      ++res.steps_3d;
    } else {
      LatentTensor cond = denoiser.predict_2d(z, cameras, condition, t, sched);
      if (cfg_scale != 1.0) {
        const LatentTensor uncond = denoiser.predict_2d(z, cameras, null_condition, t, sched);
        x0 = cfg_combine(cond, uncond, cfg_scale);
      } else {
        x0 = std::move(cond);
      }
    }
    require_same_shape(x0, z);
    z = ddim_step(z, x0, t, t_prev, sched);
  }
  if (!have_field) throw std::runtime_error("no 3D-consistent output");
  res.latents = std::move(z);
  return res;
}

inline SampleResult sample(const Denoiser& denoiser, const NoiseSchedule& sched, const SamplerConfig& cfg,
                           std::span<const Camera> cameras, const Condition& condition, int views, int channels, int h,
                           int w) {
  return sample(denoiser, sched, DdimPlan::uniform(cfg.steps, sched.T), cfg.toggle, cameras, condition, cfg.seed,
                cfg.cfg_scale, views, channels, h, w);
}

// ---------------------------------------------------------------------------
// Latents on disk: raw f32 + sidecar {views, channels, h, w, t}

inline void save_latents(const std::string& path, const LatentTensor& z, int t) {
  auto os = io::open_out(path);
  io::write_f32(os, z.data);
  auto js = io::open_out(path + ".json");
  js << nlohmann::json{{"views", z.views}, {"channels", z.channels}, {"h", z.height}, {"w", z.width}, {"t", t}}.dump(2)
     << '\n';
}

inline LatentTensor load_latents(const std::string& path, int* t = nullptr) {
  auto js = io::open_in(path + ".json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad latent sidecar '{}.json': {}", path, e.what()));
  }
  LatentTensor z(meta.at("views"), meta.at("channels"), meta.at("h"), meta.at("w"));
  if (t) *t = meta.value("t", 0);
  auto is = io::open_in(path);
  z.data = io::read_f32(is, z.size());
  return z;
}

}  // namespace dual3d
