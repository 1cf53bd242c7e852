#pragma once

/**
 * Occupancy-grid accelerated NeuS volume rendering of an SDF field.
 *
 * Per ray:
 *   1. DDA through the occupancy grid; n_uniform depths are spread evenly over
 *      the occupied intervals, and n_uniform more are spread over [near, far].
 *   2. One round of importance upsampling adds n_upsample depths, distributed
 *      by the interval weights T_i * alpha_i of the current samples.
 *   3. The field is evaluated at every depth. Interval i (between samples i-1
 *      and i) gets alpha_i = max((Phi(f_{i-1}) - Phi(f_i)) / Phi(f_{i-1}), 0)
 *      with Phi(x) = logistic(s x), and carries the color and depth of sample i.
 *   4. Front-to-back compositing with T_i = prod_{j<i} (1 - alpha_j) over a
 *      constant background.
 *
 * Every pixel is independent of every other, so patches stitch bit-exactly.
 */

#include "dual3d/camera.hpp"
#include "dual3d/field.hpp"

#include <numeric>
#include <optional>

namespace dual3d {

struct RenderConfig {
  int n_uniform = 24;
  int n_upsample = 24;
  double inv_std = 64.0;
  double near = 0.5;
  double far = 4.5;
  Vec3 background = Vec3::Ones();
  int grid_res = 64;
  double occupancy_threshold = 0.0;

  void validate() const {
    if (n_uniform < 1 || n_upsample < 1) throw std::invalid_argument("sample counts must be >= 1");
    if (!(inv_std > 0.0) || !std::isfinite(inv_std)) throw std::invalid_argument("inverse std s must be positive");
    if (!(near < far) || !std::isfinite(near) || !std::isfinite(far)) throw std::invalid_argument("need near < far");
    if (grid_res < 2) throw std::invalid_argument("occupancy grid resolution must be >= 2");
    if (!(occupancy_threshold >= 0.0)) throw std::invalid_argument("occupancy threshold must be >= 0");
    if (!background.allFinite()) throw std::invalid_argument("background must be finite");
  }
};

struct OccupancyGrid {
  int res = 0;
  Aabb bbox;
  std::vector<std::uint8_t> cells;

  Vec3 cell_size() const { return bbox.extent() / static_cast<double>(res); }
  std::size_t index(int i, int j, int k) const { return (static_cast<std::size_t>(k) * res + j) * res + i; }
  bool occupied(int i, int j, int k) const { return cells[index(i, j, k)] != 0; }
  Vec3 cell_center(int i, int j, int k) const {
    return bbox.lo + (Vec3(i, j, k) + Vec3::Constant(0.5)).cwiseProduct(cell_size());
  }
  std::size_t occupied_count() const { return std::count(cells.begin(), cells.end(), std::uint8_t{1}); }
};

/// A cell is occupied when |f(center)| <= tau + half the cell diagonal (Lipschitz-1 bound).
template <SdfField F>
OccupancyGrid build_occupancy_grid(const F& field, int res, double tau) {
  if (res < 2) throw std::invalid_argument("occupancy grid resolution must be >= 2");
  OccupancyGrid g;
  g.res = res;
  g.bbox = field.bbox();
  g.cells.assign(static_cast<std::size_t>(res) * res * res, 0);
  const double bound = tau + 0.5 * g.cell_size().norm();
  std::vector<std::uint8_t> bad(res, 0);
  parallel_for(res, [&](int k) {
    for (int j = 0; j < res; ++j)
      for (int i = 0; i < res; ++i) {
        const double f = field.sdf(g.cell_center(i, j, k));
        if (!std::isfinite(f)) {
          bad[k] = 1;
          continue;
        }
        g.cells[g.index(i, j, k)] = std::abs(f) <= bound ? 1 : 0;
      }
  });
  if (std::any_of(bad.begin(), bad.end(), [](auto b) { return b != 0; })) throw std::runtime_error("field not finite");
  return g;
}

/// Slab test; returns the parametric [t0, t1] overlap of the ray with the box, if any.
inline std::optional<std::pair<double, double>> intersect_box(const Ray& ray, const Aabb& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double o = ray.origin[a], d = ray.direction[a];
    if (d == 0.0) {
      if (o < box.lo[a] || o > box.hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box.lo[a] - o) / d, tb = (box.hi[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;
  return std::make_pair(t0, t1);
}

/// Depth intervals along a ray inside occupied cells, merged where contiguous.
inline std::vector<std::pair<double, double>> occupied_intervals(const OccupancyGrid& grid, const Ray& ray,
                                                                 double near, double far) {
  std::vector<std::pair<double, double>> spans;
  const auto hit = intersect_box(ray, grid.bbox);
  if (!hit) return spans;
  const double t_begin = std::max(hit->first, near);
  const double t_end = std::min(hit->second, far);
  if (!(t_begin < t_end)) return spans;

  const Vec3 cs = grid.cell_size();
  const Vec3 start = ray.at(t_begin);
  int cell[3];
  double t_max[3], t_delta[3];
  int step[3];
  for (int a = 0; a < 3; ++a) {
    cell[a] = std::clamp(static_cast<int>(std::floor((start[a] - grid.bbox.lo[a]) / cs[a])), 0, grid.res - 1);
    const double d = ray.direction[a];
    if (d > 0.0) {
      step[a] = 1;
      t_max[a] = (grid.bbox.lo[a] + (cell[a] + 1) * cs[a] - ray.origin[a]) / d;
      t_delta[a] = cs[a] / d;
    } else if (d < 0.0) {
      step[a] = -1;
      t_max[a] = (grid.bbox.lo[a] + cell[a] * cs[a] - ray.origin[a]) / d;
      t_delta[a] = -cs[a] / d;
    } else {
      step[a] = 0;
      t_max[a] = std::numeric_limits<double>::infinity();
      t_delta[a] = std::numeric_limits<double>::infinity();
    }
  }

  double t = t_begin;
  while (t < t_end) {
    const int axis = (t_max[0] <= t_max[1] && t_max[0] <= t_max[2]) ? 0 : (t_max[1] <= t_max[2] ? 1 : 2);
    const double t_next = std::min(t_max[axis], t_end);
    if (t_next > t && grid.occupied(cell[0], cell[1], cell[2])) {
      if (!spans.empty() && spans.back().second >= t)
        spans.back().second = t_next;
      else
        spans.emplace_back(t, t_next);
    }
    t = std::max(t, t_next);
    cell[axis] += step[axis];
    if (cell[axis] < 0 || cell[axis] >= grid.res) break;
    t_max[axis] += t_delta[axis];
  }
  return spans;
}

struct MarchSamples {
  std::vector<double> depths;  // sorted, strictly increasing
  int marched = 0;             // placed inside occupied intervals
  int tail = 0;                // placed uniformly over [near, far]
};

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = 0.5 * (a + b);
    return v;
  }
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * static_cast<double>(i) / (n - 1);
  return v;
}

inline void sort_unique(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

inline MarchSamples march_ray(const OccupancyGrid& grid, const Ray& ray, double near, double far, int n_uniform) {
  if (n_uniform < 1) throw std::invalid_argument("n_uniform must be >= 1");
  MarchSamples out;
  const auto spans = occupied_intervals(grid, ray, near, far);
  double total = 0.0;
  for (const auto& [a, b] : spans) total += b - a;
  if (total > 0.0) {
    std::size_t span = 0;
    double covered = 0.0;
    for (int k = 0; k < n_uniform; ++k) {
      const double s = (k + 0.5) / n_uniform * total;
      while (span + 1 < spans.size() && covered + (spans[span].second - spans[span].first) < s) {
        covered += spans[span].second - spans[span].first;
        ++span;
      }
      const double t = std::min(spans[span].first + (s - covered), spans[span].second);
      out.depths.push_back(t);
    }
    out.marched = n_uniform;
  }
  for (double t : linspace(near, far, n_uniform)) out.depths.push_back(t);
  out.tail = n_uniform;
  sort_unique(out.depths);
  return out;
}

/// NeuS interval opacity, evaluated in log space so it stays finite for large s|f|.
inline double neus_alpha(double f_prev, double f_cur, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("inverse std s must be positive");
  const double log_phi_prev = -softplus(-s * f_prev);
  const double log_phi_cur = -softplus(-s * f_cur);
  const double alpha = -std::expm1(log_phi_cur - log_phi_prev);
  return std::clamp(alpha, 0.0, 1.0);
}

struct UpsampleResult {
  std::vector<double> depths;
  int added = 0;
};

/// Importance-samples n_upsample new depths from the interval weights of the current ones.
template <SdfField F>
UpsampleResult upsample_points(const F& field, const Ray& ray, std::span<const double> depths, double s,
                               int n_upsample) {
  if (depths.size() < 2) throw std::invalid_argument("upsampling needs at least two depths");
  if (!std::is_sorted(depths.begin(), depths.end())) throw std::invalid_argument("depths must be sorted");
  const std::size_t n = depths.size();
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = field.sdf(ray.at(depths[i]));

  constexpr double kWeightFloor = 1e-5;
  std::vector<double> cdf(n, 0.0);  // cdf[i] = mass of intervals before interval i (interval i spans depths i..i+1)
  double transmittance = 1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double alpha = neus_alpha(f[i], f[i + 1], s);
    const double w = transmittance * alpha + kWeightFloor;
    transmittance *= 1.0 - alpha;
    cdf[i + 1] = cdf[i] + w;
  }
  const double total = cdf[n - 1];

  UpsampleResult out;
  out.depths.assign(depths.begin(), depths.end());
  std::size_t j = 0;
  for (int k = 0; k < n_upsample; ++k) {
    const double u = (k + 0.5) / n_upsample * total;
    while (j + 2 < n && cdf[j + 1] <= u) ++j;
    const double mass = cdf[j + 1] - cdf[j];
    const double frac = mass > 0.0 ? std::clamp((u - cdf[j]) / mass, 0.0, 1.0) : 0.5;
    out.depths.push_back(depths[j] + frac * (depths[j + 1] - depths[j]));
  }
  sort_unique(out.depths);
  out.added = static_cast<int>(out.depths.size()) - static_cast<int>(n);
  return out;
}

struct Composite {
  Vec3 rgb = Vec3::Zero();
  double opacity = 0.0;
  double depth = 0.0;
  double transmittance = 1.0;  // left over after the last sample
};

inline Composite composite(std::span<const double> alphas, std::span<const Vec3> colors, std::span<const double> depths,
                           const Vec3& background) {
  if (alphas.size() != colors.size() || alphas.size() != depths.size())
    throw std::invalid_argument("composite inputs must have equal length");
  Composite c;
  double t = 1.0;
  double weighted_depth = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const double w = t * alphas[i];
    c.rgb += w * colors[i];
    c.opacity += w;
    weighted_depth += w * depths[i];
    t *= 1.0 - alphas[i];
  }
  c.transmittance = t;
  c.opacity = std::clamp(c.opacity, 0.0, 1.0);
  c.rgb += (1.0 - c.opacity) * background;
  c.depth = weighted_depth / std::max(c.opacity, 1e-10);
  return c;
}

struct RenderOutput {
  Grid2<Vec3> rgb;
  Grid2<double> opacity;
  Grid2<double> depth;
};

/// Per-pixel sample accounting, for auditing the sampling budget.
struct RenderStats {
  Grid2<int> marched, tail, upsampled;
  Grid2<double> closure_error;  // |sum w_i + final transmittance - 1|
  Grid2<double> transmittance_increase;  // max_i (T_{i+1} - T_i), must be <= 0
};

struct Patch {
  int x = 0, y = 0, w = 0, h = 0;
};

template <SdfField F>
class NeusRenderer {
 public:
  NeusRenderer(const F& field, RenderConfig cfg) : field_(field), cfg_(std::move(cfg)) {
    cfg_.validate();
    grid_ = build_occupancy_grid(field_, cfg_.grid_res, cfg_.occupancy_threshold);
  }

  const OccupancyGrid& grid() const { return grid_; }
  const RenderConfig& config() const { return cfg_; }

  struct PixelResult {
    Composite composite;
    int marched = 0, tail = 0, upsampled = 0;
    double transmittance_increase = 0.0;
  };

  PixelResult render_ray(const Ray& ray) const {
    PixelResult r;
    const MarchSamples marched = march_ray(grid_, ray, cfg_.near, cfg_.far, cfg_.n_uniform);
    const UpsampleResult up = upsample_points(field_, ray, marched.depths, cfg_.inv_std, cfg_.n_upsample);
    r.marched = marched.marched;
    r.tail = marched.tail;
    r.upsampled = up.added;

    const std::size_t n = up.depths.size();
    std::vector<double> f(n);
    std::vector<Vec3> color(n);
    for (std::size_t i = 0; i < n; ++i) {
      const FieldSample s = field_.eval(ray.at(up.depths[i]));
      f[i] = s.sdf;
      color[i] = s.color;
    }
    std::vector<double> alphas(n - 1), depths(n - 1);
    for (std::size_t i = 1; i < n; ++i) {
      alphas[i - 1] = neus_alpha(f[i - 1], f[i], cfg_.inv_std);
      depths[i - 1] = up.depths[i];
    }
    double t = 1.0;
    for (double a : alphas) {
      const double next = t * (1.0 - a);
      r.transmittance_increase = std::max(r.transmittance_increase, next - t);
      t = next;
    }
    r.composite = composite(alphas, std::span<const Vec3>(color).subspan(1), depths, cfg_.background);
    return r;
  }

  /// Renders the full frame of `cam`, or just `patch` of it when given.
  RenderOutput render(const Camera& cam, std::optional<Patch> patch = std::nullopt, RenderStats* stats = nullptr) const {
    cam.validate();
    const Patch p = patch.value_or(Patch{0, 0, cam.width, cam.height});
    if (p.w < 1 || p.h < 1 || p.x < 0 || p.y < 0 || p.x + p.w > cam.width || p.y + p.h > cam.height)
      throw std::invalid_argument("patch lies outside the image");
    RenderOutput out{Grid2<Vec3>(p.w, p.h), Grid2<double>(p.w, p.h), Grid2<double>(p.w, p.h)};
    if (stats) {
      *stats = RenderStats{Grid2<int>(p.w, p.h), Grid2<int>(p.w, p.h), Grid2<int>(p.w, p.h),
                           Grid2<double>(p.w, p.h), Grid2<double>(p.w, p.h)};
    }
    parallel_for(p.h, [&](int row) {
      for (int col = 0; col < p.w; ++col) {
        const Ray ray = pixel_ray(cam, p.x + col + 0.5, p.y + row + 0.5);
        const PixelResult r = render_ray(ray);
        out.rgb(col, row) = r.composite.rgb;
        out.opacity(col, row) = r.composite.opacity;
        out.depth(col, row) = r.composite.depth;
        if (stats) {
          stats->marched(col, row) = r.marched;
          stats->tail(col, row) = r.tail;
          stats->upsampled(col, row) = r.upsampled;
          stats->closure_error(col, row) = std::abs(r.composite.opacity + r.composite.transmittance - 1.0);
          stats->transmittance_increase(col, row) = r.transmittance_increase;
        }
      }
    });
    return out;
  }

 private:
  const F& field_;
  RenderConfig cfg_;
  OccupancyGrid grid_;
};

template <SdfField F>
RenderOutput render_image(const F& field, const Camera& cam, const RenderConfig& cfg,
                          std::optional<Patch> patch = std::nullopt, RenderStats* stats = nullptr) {
  return NeusRenderer<F>(field, cfg).render(cam, patch, stats);
}

}  // namespace dual3d
