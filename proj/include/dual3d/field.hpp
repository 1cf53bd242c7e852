#pragma once

/**
 * Tri-plane neural SDF field.
 *
 * Three axis-aligned feature planes (XY, XZ, YZ) each hold C channels on an
 * R x R node grid spanning the field's bounding box. A query point is
 * projected onto each plane, bilinearly sampled there, and the three
 * C-vectors are summed. The summed feature goes through a two-layer MLP with a
 * softplus hidden activation; output channel 0 is the signed distance and
 * channels 1..3 are logistic-squashed rgb.
 *
 * Grid convention: node (i, j) of a plane sits at lo + (i, j) / (R - 1) * extent
 * along that plane's two axes, so the bbox corners are grid nodes. Points
 * outside the bbox are clamped onto the border before sampling.
 *
 * Gradients use the cell whose lower corner is floor(g) (clamped to R - 2). On
 * an interior cell boundary this is the one-sided derivative from the upper
 * cell; outside the bbox the derivative along a clamped axis is zero.
 */

#include "dual3d/common.hpp"

#include <array>
#include <concepts>
#include <optional>
#include <random>

namespace dual3d {

struct FieldSample {
  double sdf = 0.0;
  Vec3 color = Vec3::Zero();
  std::optional<Vec3> gradient;
};

/// Anything that can be rendered or meshed: sdf, color and analytic gradient over a bbox.
template <class F>
concept SdfField = requires(const F& f, const Vec3& p) {
  { f.sdf(p) } -> std::convertible_to<double>;
  { f.eval(p) } -> std::convertible_to<FieldSample>;
  { f.gradient(p) } -> std::convertible_to<Vec3>;
  { f.bbox() } -> std::convertible_to<Aabb>;
};

/// Two affine layers with softplus in between. Output is [sdf, r, g, b] before squashing.
struct FieldMlp {
  static constexpr int kOutputs = 4;
  static constexpr const char* kActivation = "softplus";

  MatX w1;  // hidden x in
  VecX b1;  // hidden
  MatX w2;  // 4 x hidden
  VecX b2;  // 4

  FieldMlp() = default;
  FieldMlp(int in, int hidden)
      : w1(MatX::Zero(hidden, in)), b1(VecX::Zero(hidden)), w2(MatX::Zero(kOutputs, hidden)), b2(VecX::Zero(kOutputs)) {}

  int inputs() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }

  bool valid() const {
    return w1.rows() == b1.size() && w2.cols() == w1.rows() && w2.rows() == kOutputs && b2.size() == kOutputs &&
           w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
  }

  VecX forward(const VecX& x) const {
    VecX h = (w1 * x + b1).unaryExpr([](double z) { return softplus(z); });
    return w2 * h + b2;
  }

  /// d(sdf)/d(x) as a row over the input features.
  VecX sdf_input_gradient(const VecX& x) const {
    VecX z = w1 * x + b1;
    VecX dh = z.unaryExpr([](double v) { return logistic(v); });
    VecX upstream = w2.row(0).transpose().cwiseProduct(dh);
    return w1.transpose() * upstream;
  }

  /// An MLP whose sdf output equals input channel `channel` (softplus(x) - softplus(-x) = x).
  static FieldMlp passthrough(int in, int channel = 0) {
    FieldMlp m(in, 2);
    m.w1(0, channel) = 1.0;
    m.w1(1, channel) = -1.0;
    m.w2(0, 0) = 1.0;
    m.w2(0, 1) = -1.0;
    return m;
  }
};

enum class Plane : int { XY = 0, XZ = 1, YZ = 2 };

class TriPlaneField {
 public:
  static constexpr std::array<std::array<int, 2>, 3> kPlaneAxes = {{{0, 1}, {0, 2}, {1, 2}}};

  TriPlaneField() : TriPlaneField(1, 2) {}

  TriPlaneField(int channels, int resolution, Aabb box = {}, FieldMlp mlp = {})
      : channels_(channels), resolution_(resolution), bbox_(box), mlp_(std::move(mlp)) {
    if (channels < 1 || resolution < 2) throw std::invalid_argument("tri-plane needs C >= 1 and R >= 2");
    if (!bbox_.valid()) throw std::invalid_argument("bbox must have positive finite extent on every axis");
    planes_.assign(static_cast<std::size_t>(3) * channels * resolution * resolution, 0.0);
    if (mlp_.w1.size() == 0) mlp_ = FieldMlp(channels, 2);
    if (mlp_.inputs() != channels || !mlp_.valid())
      throw std::invalid_argument("field MLP shape does not match tri-plane channels");
  }

  int channels() const { return channels_; }
  int resolution() const { return resolution_; }
  Aabb bbox() const { return bbox_; }
  const FieldMlp& mlp() const { return mlp_; }
  FieldMlp& mlp() { return mlp_; }
  std::span<const double> planes() const { return planes_; }
  std::span<double> planes() { return planes_; }

  std::size_t index(Plane plane, int c, int u, int v) const {
    return ((static_cast<std::size_t>(plane) * channels_ + c) * resolution_ + v) * resolution_ + u;
  }
  double& at(Plane plane, int c, int u, int v) { return planes_[index(plane, c, u, v)]; }
  double at(Plane plane, int c, int u, int v) const { return planes_[index(plane, c, u, v)]; }

  /// Throws when any plane value or weight is non-finite.
  void validate() const {
    for (double v : planes_)
      if (!std::isfinite(v)) throw std::invalid_argument("tri-plane contains non-finite values");
    if (!mlp_.valid()) throw std::invalid_argument("field MLP contains non-finite weights");
  }

  void fill_random(std::uint64_t seed, double plane_scale = 0.1, double weight_scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    for (auto& v : planes_) v = plane_scale * n01(rng);
    auto fill = [&](auto& m, double s) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * n01(rng);
    };
    fill(mlp_.w1, weight_scale);
    fill(mlp_.b1, weight_scale);
    fill(mlp_.w2, weight_scale);
    fill(mlp_.b2, weight_scale);
  }

  /// Sum of the three bilinear plane samples at the projections of p.
  VecX sample(const Vec3& p) const {
    if (!p.allFinite()) throw std::invalid_argument("invalid point");
    VecX out = VecX::Zero(channels_);
    const Vec3 g = grid_coords(p);
    for (int pl = 0; pl < 3; ++pl) {
      const auto [a0, a1] = kPlaneAxes[pl];
      const Cell cu = cell(g[a0]);
      const Cell cv = cell(g[a1]);
      const double w00 = (1 - cu.t) * (1 - cv.t), w10 = cu.t * (1 - cv.t);
      const double w01 = (1 - cu.t) * cv.t, w11 = cu.t * cv.t;
      for (int c = 0; c < channels_; ++c) {
        const Plane P = static_cast<Plane>(pl);
        out[c] += w00 * at(P, c, cu.i, cv.i) + w10 * at(P, c, cu.i + 1, cv.i) + w01 * at(P, c, cu.i, cv.i + 1) +
                  w11 * at(P, c, cu.i + 1, cv.i + 1);
      }
    }
    return out;
  }

  FieldSample eval(const Vec3& p) const {
    const VecX out = mlp_.forward(sample(p));
    FieldSample s;
    s.sdf = out[0];
    s.color = Vec3(logistic(out[1]), logistic(out[2]), logistic(out[3]));
    return s;
  }

  double sdf(const Vec3& p) const { return mlp_.forward(sample(p))[0]; }

  /// Exact d(sdf)/dp by the chain rule through the MLP and the bilinear weights.
  Vec3 gradient(const Vec3& p) const {
    const VecX feat = sample(p);
    const VecX dfeat = mlp_.sdf_input_gradient(feat);
    const Vec3 g = grid_coords(p);
    const Vec3 scale = Vec3::Constant(resolution_ - 1).cwiseQuotient(bbox_.extent());
    Vec3 grad = Vec3::Zero();
    for (int pl = 0; pl < 3; ++pl) {
      const auto [a0, a1] = kPlaneAxes[pl];
      const Cell cu = cell(g[a0]);
      const Cell cv = cell(g[a1]);
      const Plane P = static_cast<Plane>(pl);
      double du = 0.0, dv = 0.0;
      for (int c = 0; c < channels_; ++c) {
        const double v00 = at(P, c, cu.i, cv.i), v10 = at(P, c, cu.i + 1, cv.i);
        const double v01 = at(P, c, cu.i, cv.i + 1), v11 = at(P, c, cu.i + 1, cv.i + 1);
        du += dfeat[c] * ((1 - cv.t) * (v10 - v00) + cv.t * (v11 - v01));
        dv += dfeat[c] * ((1 - cu.t) * (v01 - v00) + cu.t * (v11 - v10));
      }
      if (cu.inside) grad[a0] += du * scale[a0];
      if (cv.inside) grad[a1] += dv * scale[a1];
    }
    return grad;
  }

 private:
  struct Cell {
    int i;
    double t;
    bool inside;
  };

  Vec3 grid_coords(const Vec3& p) const {
    return (p - bbox_.lo).cwiseQuotient(bbox_.extent()) * static_cast<double>(resolution_ - 1);
  }

  Cell cell(double g) const {
    const double hi = resolution_ - 1;
    const bool inside = g >= 0.0 && g <= hi;
    g = std::clamp(g, 0.0, hi);
    int i = std::min(static_cast<int>(std::floor(g)), resolution_ - 2);
    return {i, g - i, inside};
  }

  int channels_;
  int resolution_;
  Aabb bbox_;
  FieldMlp mlp_;
  std::vector<double> planes_;
};

/// Free-function spellings of the field operations.
inline VecX sample_triplane(const TriPlaneField& f, const Vec3& p) { return f.sample(p); }
inline FieldSample field_eval(const TriPlaneField& f, const Vec3& p) { return f.eval(p); }

template <SdfField F>
Vec3 field_gradient(const F& f, const Vec3& p) {
  if (!p.allFinite()) throw std::invalid_argument("invalid point");
  return f.gradient(p);
}

}  // namespace dual3d
