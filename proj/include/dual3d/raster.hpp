#pragma once

/**
 * Z-buffered software rasterizer producing per-pixel fragments, and texture
 * shading that is linear in the texels for fixed fragments.
 *
 * shade() looks up each covered pixel's uv bilinearly with clamp-to-edge
 * addressing (texel (i, j) is centered at ((i + 0.5) / W, (j + 0.5) / H)).
 * texture_grad() is its exact adjoint: it scatters a per-pixel cotangent into
 * the same four texels with the same weights.
 */

#include "dual3d/camera.hpp"
#include "dual3d/mesh.hpp"

namespace dual3d {

struct TextureAtlas {
  int width = 0, height = 0;
  std::vector<Vec3> texels;  // row-major, rgb

  TextureAtlas() = default;
  TextureAtlas(int w, int h, Vec3 fill = Vec3::Constant(0.5)) : width(w), height(h), texels(static_cast<std::size_t>(w) * h, fill) {
    if (w < 1 || h < 1) throw std::invalid_argument("atlas must be non-empty");
  }

  Vec3& at(int x, int y) { return texels[static_cast<std::size_t>(y) * width + x]; }
  const Vec3& at(int x, int y) const { return texels[static_cast<std::size_t>(y) * width + x]; }
  void clamp01() {
    for (auto& t : texels) t = t.cwiseMax(0.0).cwiseMin(1.0);
  }
  Grid2<Vec3> as_image() const {
    Grid2<Vec3> img(width, height);
    img.data = texels;
    return img;
  }
};

struct Fragment {
  int face = -1;  // -1: background
  Vec3 bary = Vec3::Zero();
  Vec2 uv = Vec2::Zero();
  double depth = std::numeric_limits<double>::infinity();

  bool covered() const { return face >= 0; }
};

using FragmentBuffer = Grid2<Fragment>;

/// Nearest front-facing triangle per pixel center, with perspective-correct barycentrics.
inline FragmentBuffer rasterize(const TriMesh& mesh, const Camera& camera, int w, int h, double near = 1e-3) {
  camera.validate();
  const Camera cam = camera.resized(w, h);
  FragmentBuffer buf(w, h);
  const bool has_uv = !mesh.uvs.empty();
  std::vector<Vec3> proj(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) proj[i] = cam.project(mesh.vertices[i]);

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    const Vec3 &p0 = proj[t[0]], &p1 = proj[t[1]], &p2 = proj[t[2]];
    if (p0.z() <= near || p1.z() <= near || p2.z() <= near) continue;
    // Back-face cull: face normal pointing away from the camera.
    const Vec3 centroid = (mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0;
    if (mesh.face_normal(f).dot(cam.center() - centroid) <= 0.0) continue;

    const double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
    if (area == 0.0) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}) - 0.5)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const double l0 = ((p1.x() - px) * (p2.y() - py) - (p2.x() - px) * (p1.y() - py)) / area;
        const double l1 = ((p2.x() - px) * (p0.y() - py) - (p0.x() - px) * (p2.y() - py)) / area;
        const double l2 = 1.0 - l0 - l1;
        if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
        // Perspective-correct weights.
        const Vec3 pw(l0 / p0.z(), l1 / p1.z(), l2 / p2.z());
        const double inv_z = pw.sum();
        const double depth = 1.0 / inv_z;
        Fragment& frag = buf(x, y);
        if (depth >= frag.depth) continue;
        frag.face = static_cast<int>(f);
        frag.depth = depth;
        frag.bary = pw / inv_z;
        if (has_uv) {
          const auto& uv = mesh.uvs[f];
          frag.uv = frag.bary[0] * uv[0] + frag.bary[1] * uv[1] + frag.bary[2] * uv[2];
        }
      }
  }
  return buf;
}

struct BilinearTap {
  int x[4], y[4];
  double w[4];
};

inline BilinearTap bilinear_tap(const Vec2& uv, int width, int height) {
  const double fx = std::clamp(uv.x() * width - 0.5, 0.0, width - 1.0);
  const double fy = std::clamp(uv.y() * height - 0.5, 0.0, height - 1.0);
  const int ix = std::min(static_cast<int>(std::floor(fx)), std::max(width - 2, 0));
  const int iy = std::min(static_cast<int>(std::floor(fy)), std::max(height - 2, 0));
  const double tx = fx - ix, ty = fy - iy;
  const int ix1 = std::min(ix + 1, width - 1), iy1 = std::min(iy + 1, height - 1);
  return {{ix, ix1, ix, ix1}, {iy, iy, iy1, iy1}, {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty}};
}

inline Grid2<Vec3> shade(const FragmentBuffer& frags, const TextureAtlas& tex, const Vec3& background = Vec3::Ones()) {
  Grid2<Vec3> img(frags.width, frags.height, background);
  for (std::size_t i = 0; i < frags.size(); ++i) {
    const Fragment& f = frags.data[i];
    if (!f.covered()) continue;
    const BilinearTap tap = bilinear_tap(f.uv, tex.width, tex.height);
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 4; ++k) c += tap.w[k] * tex.at(tap.x[k], tap.y[k]);
    img.data[i] = c;
  }
  return img;
}

/// Adjoint of shade() with respect to the texels; background pixels contribute nothing.
inline TextureAtlas texture_grad(const FragmentBuffer& frags, const Grid2<Vec3>& image_grad, int tex_w, int tex_h) {
  if (image_grad.width != frags.width || image_grad.height != frags.height)
    throw std::invalid_argument("image gradient must match the fragment buffer");
  TextureAtlas g(tex_w, tex_h, Vec3::Zero());
  for (std::size_t i = 0; i < frags.size(); ++i) {
    const Fragment& f = frags.data[i];
    if (!f.covered()) continue;
    const BilinearTap tap = bilinear_tap(f.uv, tex_w, tex_h);
    for (int k = 0; k < 4; ++k) g.at(tap.x[k], tap.y[k]) += tap.w[k] * image_grad.data[i];
  }
  return g;
}

/// Per-texel sum of bilinear weights over covered pixels.
inline std::vector<double> texel_coverage(const FragmentBuffer& frags, int tex_w, int tex_h) {
  std::vector<double> cov(static_cast<std::size_t>(tex_w) * tex_h, 0.0);
  for (const Fragment& f : frags.data) {
    if (!f.covered()) continue;
    const BilinearTap tap = bilinear_tap(f.uv, tex_w, tex_h);
    for (int k = 0; k < 4; ++k) cov[static_cast<std::size_t>(tap.y[k]) * tex_w + tap.x[k]] += tap.w[k];
  }
  return cov;
}

}  // namespace dual3d
