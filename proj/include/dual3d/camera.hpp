#pragma once

/**
 * Pinhole cameras, per-pixel rays and Plucker ray encoding.
 *
 * Axis convention (used everywhere in the library): right-handed world with +Y
 * up. In the camera frame +X points right, +Y up and the camera looks down -Z.
 * Image rows grow downwards, so pixel (x, y) has camera-frame direction
 * ((x + 0.5 - cx) / fx, -(y + 0.5 - cy) / fy, -1) before normalization.
 *
 * `rotation` maps camera-frame vectors to world, `translation` is the camera
 * center in world coordinates.
 */

#include "dual3d/common.hpp"

#include <nlohmann/json.hpp>

#include <numbers>

namespace dual3d {

struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
  int width = 1, height = 1;

  Vec3 center() const { return translation; }
  Vec3 forward() const { return -rotation.col(2); }

  void validate() const {
    if (!rotation.allFinite() || !translation.allFinite())
      throw std::invalid_argument("camera pose is not finite");
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
      throw std::invalid_argument("camera rotation is not orthonormal");
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
      throw std::invalid_argument("degenerate intrinsics: focal lengths must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("degenerate intrinsics: empty image");
    if (!(cx >= 0.0 && cx <= width && cy >= 0.0 && cy <= height))
      throw std::invalid_argument("degenerate intrinsics: principal point outside image");
  }

  /// The same camera with intrinsics rescaled to a (w, h) pixel grid.
  Camera resized(int w, int h) const {
    if (w < 1 || h < 1) throw std::invalid_argument("resolution must be positive");
    Camera c = *this;
    const double sx = static_cast<double>(w) / width;
    const double sy = static_cast<double>(h) / height;
    c.fx *= sx;
    c.cx *= sx;
    c.fy *= sy;
    c.cy *= sy;
    c.width = w;
    c.height = h;
    return c;
  }

  /// World-space point to (pixel x, pixel y, camera-space depth along the view axis).
  Vec3 project(const Vec3& world) const {
    const Vec3 pc = rotation.transpose() * (world - translation);
    const double depth = -pc.z();
    return {fx * pc.x() / depth + cx, -fy * pc.y() / depth + cy, depth};
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

struct PluckerRay {
  Vec3 moment = Vec3::Zero();
  Vec3 direction = -Vec3::UnitZ();
};

inline constexpr int kPluckerChannels = 6;

/// Camera with vertical field of view `fov_deg` whose principal point is the image center.
inline Camera make_camera(const Mat3& rotation, const Vec3& center, double fov_deg, int width, int height) {
  Camera c;
  c.rotation = rotation;
  c.translation = center;
  c.fy = 0.5 * height / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  c.fx = c.fy;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.width = width;
  c.height = height;
  return c;
}

/// Camera-to-world rotation looking from `eye` at `target`.
inline Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitY()) {
  const Vec3 f = (target - eye).normalized();
  Vec3 right = f.cross(up);
  if (right.norm() < 1e-12) right = f.cross(Vec3::UnitZ());
  right.normalize();
  const Vec3 true_up = right.cross(f);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = true_up;
  r.col(2) = -f;
  return r;
}

inline Ray pixel_ray(const Camera& cam, double px, double py) {
  const Vec3 dc((px - cam.cx) / cam.fx, -(py - cam.cy) / cam.fy, -1.0);
  return {cam.translation, (cam.rotation * dc).normalized()};
}

/// One ray through each pixel center of a (w, h) grid; intrinsics are rescaled from the camera's own size.
inline Grid2<Ray> generate_rays(const Camera& cam, int w, int h) {
  cam.validate();
  const Camera c = cam.resized(w, h);
  Grid2<Ray> rays(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) rays(x, y) = pixel_ray(c, x + 0.5, y + 0.5);
  return rays;
}

inline PluckerRay plucker_encode(const Ray& r) {
  const Vec3 d = r.direction;
  if (!d.allFinite() || std::abs(d.norm() - 1.0) > 1e-9) throw std::invalid_argument("ray direction must be unit length");
  return {r.origin.cross(d), d};
}

inline Grid2<PluckerRay> latent_rays(const Camera& cam, int w, int h) {
  const Grid2<Ray> rays = generate_rays(cam, w, h);
  Grid2<PluckerRay> out(w, h);
  for (std::size_t i = 0; i < rays.size(); ++i) out.data[i] = plucker_encode(rays.data[i]);
  return out;
}

/// Channel-stacked layout [m.x, m.y, m.z, d.x, d.y, d.z] x h x w for concatenation onto latents.
inline std::vector<double> plucker_channels(const Grid2<PluckerRay>& grid) {
  const std::size_t hw = grid.size();
  std::vector<double> out(kPluckerChannels * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    for (int k = 0; k < 3; ++k) {
      out[k * hw + i] = grid.data[i].moment[k];
      out[(3 + k) * hw + i] = grid.data[i].direction[k];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation rig: azimuth 0..315 step 45 (outer) x elevation -30, 0, 30 (inner).

inline constexpr int kRigAzimuths = 8;
inline constexpr int kRigElevations = 3;
inline constexpr double kRigElevationDeg[kRigElevations] = {-30.0, 0.0, 30.0};
inline constexpr double kDefaultRigFovDeg = 50.0;

/// Position at distance `radius`; azimuth rotates about +Y starting from +X.
inline Vec3 orbit_position(double radius, double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  return radius * Vec3(std::cos(el) * std::cos(az), std::sin(el), -std::cos(el) * std::sin(az));
}

inline Camera orbit_camera(double radius, double azimuth_deg, double elevation_deg, double fov_deg, int width,
                           int height) {
  const Vec3 eye = orbit_position(radius, azimuth_deg, elevation_deg);
  return make_camera(look_at_rotation(eye, Vec3::Zero()), eye, fov_deg, width, height);
}

inline std::vector<Camera> eval_camera_rig(double radius, double fov_deg = kDefaultRigFovDeg, int width = 256,
                                           int height = 256) {
  if (!(radius > 0.0)) throw std::invalid_argument("rig radius must be positive");
  std::vector<Camera> rig;
  rig.reserve(kRigAzimuths * kRigElevations);
  for (int a = 0; a < kRigAzimuths; ++a)
    for (double el : kRigElevationDeg) rig.push_back(orbit_camera(radius, 45.0 * a, el, fov_deg, width, height));
  return rig;
}

// ---------------------------------------------------------------------------
// JSON: {rotation: 9 floats row-major, translation: 3, fx, fy, cx, cy, width, height}

inline void to_json(nlohmann::json& j, const Camera& c) {
  std::vector<double> rot;
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) rot.push_back(c.rotation(r, k));
  j = {{"rotation", rot},
       {"translation", {c.translation.x(), c.translation.y(), c.translation.z()}},
       {"fx", c.fx},
       {"fy", c.fy},
       {"cx", c.cx},
       {"cy", c.cy},
       {"width", c.width},
       {"height", c.height}};
}

inline void from_json(const nlohmann::json& j, Camera& c) {
  const auto rot = j.at("rotation").get<std::vector<double>>();
  const auto t = j.at("translation").get<std::vector<double>>();
  if (rot.size() != 9 || t.size() != 3) throw ConfigError("camera JSON needs 9 rotation and 3 translation values");
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) c.rotation(r, k) = rot[r * 3 + k];
  c.translation = Vec3(t[0], t[1], t[2]);
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
}

}  // namespace dual3d
