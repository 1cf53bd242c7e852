#pragma once

// Triangle meshes: marching-cubes extraction of an SDF zero set, per-face UV
// charting into a packed atlas, and Wavefront OBJ/MTL export.

#include "dual3d/field.hpp"
#include "dual3d/mc_tables.hpp"

#include <array>
#include <map>
#include <unordered_map>

namespace dual3d {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::array<Vec2, 3>> uvs;  // per face corner; empty until an atlas is built

  Vec3 face_normal(std::size_t f) const {
    const auto& t = faces[f];
    return (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]);
  }
  double face_area(std::size_t f) const { return 0.5 * face_normal(f).norm(); }

  void validate() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : faces)
      for (int i : t)
        if (i < 0 || i >= n) throw std::invalid_argument("face index out of range");
    if (!uvs.empty()) {
      if (uvs.size() != faces.size()) throw std::invalid_argument("uv count must match face count");
      for (const auto& tri : uvs)
        for (const Vec2& uv : tri)
          if (!(uv.minCoeff() >= 0.0 && uv.maxCoeff() <= 1.0)) throw std::invalid_argument("uv outside [0,1]");
    }
  }
};

/// Counts of edges by how many faces use them; watertight means every count is 2.
inline std::map<std::pair<int, int>, int> edge_face_counts(const TriMesh& m) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& t : m.faces)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++counts[{a, b}];
    }
  return counts;
}

inline bool is_watertight(const TriMesh& m) {
  const auto counts = edge_face_counts(m);
  return !counts.empty() && std::all_of(counts.begin(), counts.end(), [](const auto& kv) { return kv.second == 2; });
}

inline long long euler_characteristic(const TriMesh& m) {
  return static_cast<long long>(m.vertices.size()) - static_cast<long long>(edge_face_counts(m).size()) +
         static_cast<long long>(m.faces.size());
}

// ---------------------------------------------------------------------------
// Marching cubes

namespace detail {

// Corner offsets in the table's numbering: bottom loop (z = 0) then top loop (z = 1).
inline constexpr std::array<std::array<int, 3>, 8> kMcCorner = {
    {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}, {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}}};
inline constexpr std::array<std::array<int, 2>, 12> kMcEdge = {
    {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6}, {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}}};

}  // namespace detail

/// Zero level set of f sampled on res^3 nodes spanning the field bbox. Inside is f < 0.
/// Triangles wind counter-clockwise seen from outside, so face normals follow +grad f.
template <SdfField F>
TriMesh marching_cubes(const F& field, int res) {
  if (res < 8) throw std::invalid_argument("marching cubes resolution must be >= 8");
  const Aabb box = field.bbox();
  const Vec3 step = box.extent() / static_cast<double>(res - 1);
  auto node = [&](int i, int j, int k) -> Vec3 { return box.lo + Vec3(i, j, k).cwiseProduct(step); };
  auto idx = [res](int i, int j, int k) { return (static_cast<std::size_t>(k) * res + j) * res + i; };

  std::vector<double> values(static_cast<std::size_t>(res) * res * res);
  parallel_for(res, [&](int k) {
    for (int j = 0; j < res; ++j)
      for (int i = 0; i < res; ++i) values[idx(i, j, k)] = field.sdf(node(i, j, k));
  });
  for (double v : values)
    if (!std::isfinite(v)) throw std::runtime_error("field not finite");

  TriMesh mesh;
  // Vertex per grid edge, keyed by (lower node index, axis).
  std::unordered_map<std::size_t, int> edge_vertex;
  auto vertex_on = [&](int i0, int j0, int k0, int i1, int j1, int k1) {
    const std::size_t a = idx(i0, j0, k0), b = idx(i1, j1, k1);
    const std::size_t lo = std::min(a, b);
    const int axis = i0 != i1 ? 0 : (j0 != j1 ? 1 : 2);
    const std::size_t key = lo * 3 + axis;
    auto [it, inserted] = edge_vertex.try_emplace(key, static_cast<int>(mesh.vertices.size()));
    if (inserted) {
      const double va = values[a], vb = values[b];
      const double t = va / (va - vb);
      mesh.vertices.push_back(node(i0, j0, k0) + t * (node(i1, j1, k1) - node(i0, j0, k0)));
    }
    return it->second;
  };

  bool any_inside = false, any_outside = false;
  for (double v : values) (v < 0.0 ? any_inside : any_outside) = true;
  if (!any_inside || !any_outside) throw std::runtime_error("empty surface");

  for (int k = 0; k + 1 < res; ++k)
    for (int j = 0; j + 1 < res; ++j)
      for (int i = 0; i + 1 < res; ++i) {
        int cube = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = detail::kMcCorner[c];
          if (values[idx(i + o[0], j + o[1], k + o[2])] < 0.0) cube |= 1 << c;
        }
        const auto& row = detail::kMcTriTable[cube];
        for (int t = 0; row[t] != -1; t += 3) {
          std::array<int, 3> tri;
          for (int e = 0; e < 3; ++e) {
            const auto& edge = detail::kMcEdge[row[t + e]];
            const auto& a = detail::kMcCorner[edge[0]];
            const auto& b = detail::kMcCorner[edge[1]];
            tri[e] = vertex_on(i + a[0], j + a[1], k + a[2], i + b[0], j + b[1], k + b[2]);
          }
          // The table winds clockwise around the outward normal in this corner layout.
          std::swap(tri[1], tri[2]);
          mesh.faces.push_back(tri);
        }
      }

  std::erase_if(mesh.faces, [&](const std::array<int, 3>& t) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) return true;
    const Vec3 n = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    return n.squaredNorm() == 0.0;
  });
  if (mesh.faces.empty()) throw std::runtime_error("empty surface");
  return mesh;
}

// ---------------------------------------------------------------------------
// UV atlas

struct AtlasLayout {
  int width = 0, height = 0;  // texels
  int cell = 0;               // chart cell edge in texels
  int columns = 0;
};

/// Chart rectangle of face f in texel coordinates: [x0, x0 + cell) x [y0, y0 + cell).
inline std::array<int, 2> chart_origin(const AtlasLayout& a, std::size_t f) {
  return {static_cast<int>(f % a.columns) * a.cell, static_cast<int>(f / a.columns) * a.cell};
}

/// Each face gets its own square cell; the triangle occupies the lower-left half. Corners sit on
/// texel centers one texel in from the cell edge, so bilinear taps along the legs stay in the cell.
inline AtlasLayout build_uv_atlas(TriMesh& mesh, long long texel_budget) {
  mesh.validate();
  const auto n = static_cast<long long>(mesh.faces.size());
  if (n == 0) throw std::invalid_argument("mesh has no faces");
  AtlasLayout a;
  a.columns = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = static_cast<int>((n + a.columns - 1) / a.columns);
  a.cell = static_cast<int>(std::floor(std::sqrt(static_cast<double>(texel_budget) / (static_cast<double>(a.columns) * rows))));
  if (a.cell < 4) throw std::invalid_argument(fmt::format("texel budget {} too small for {} faces", texel_budget, n));
  a.width = a.columns * a.cell;
  a.height = rows * a.cell;
  constexpr double kMargin = 1.5;
  mesh.uvs.resize(mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto o = chart_origin(a, f);
    const double x0 = o[0] + kMargin, y0 = o[1] + kMargin, x1 = o[0] + a.cell - kMargin, y1 = o[1] + a.cell - kMargin;
    mesh.uvs[f] = {Vec2(x0 / a.width, y0 / a.height), Vec2(x1 / a.width, y0 / a.height), Vec2(x0 / a.width, y1 / a.height)};
  }
  return a;
}

// ---------------------------------------------------------------------------
// OBJ / MTL

inline void write_obj(const std::string& path, const TriMesh& mesh, const std::string& mtl_name = "",
                      const std::string& texture_name = "") {
  auto os = io::open_out(path);
  os << "# dual3d mesh\n";
  if (!mtl_name.empty()) os << "mtllib " << mtl_name << "\nusemtl atlas\n";
  for (const Vec3& v : mesh.vertices) os << fmt::format("v {:.6f} {:.6f} {:.6f}\n", v.x(), v.y(), v.z());
  const bool uv = !mesh.uvs.empty();
  if (uv)
    for (const auto& tri : mesh.uvs)
      for (const Vec2& t : tri) os << fmt::format("vt {:.6f} {:.6f}\n", t.x(), 1.0 - t.y());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    if (uv)
      os << fmt::format("f {}/{} {}/{} {}/{}\n", t[0] + 1, 3 * f + 1, t[1] + 1, 3 * f + 2, t[2] + 1, 3 * f + 3);
    else
      os << fmt::format("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
  }
  if (!mtl_name.empty()) {
    const auto dir = path.substr(0, path.find_last_of('/') + 1);
    auto ms = io::open_out(dir + mtl_name);
    ms << "newmtl atlas\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\n";
    if (!texture_name.empty()) ms << "map_Kd " << texture_name << "\n";
  }
}

}  // namespace dual3d
