#pragma once

// Image output: binary PPM (P6, 8-bit) and planar little-endian f32 with a JSON sidecar.

#include "dual3d/common.hpp"

#include <nlohmann/json.hpp>

namespace dual3d {

inline std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_ppm(std::ostream& os, const Grid2<Vec3>& img) {
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (const Vec3& px : img.data) {
    const char rgb[3] = {static_cast<char>(to_byte(px.x())), static_cast<char>(to_byte(px.y())),
                         static_cast<char>(to_byte(px.z()))};
    os.write(rgb, 3);
  }
}

inline void write_ppm(const std::string& path, const Grid2<Vec3>& img) {
  auto os = io::open_out(path);
  write_ppm(os, img);
}

inline Grid2<Vec3> read_ppm(const std::string& path) {
  auto is = io::open_in(path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) throw ConfigError(fmt::format("'{}' is not an 8-bit P6 PPM", path));
  is.get();
  Grid2<Vec3> img(w, h);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw ConfigError(fmt::format("'{}' is truncated", path));
  for (std::size_t i = 0; i < img.size(); ++i)
    img.data[i] = Vec3(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]) / 255.0;
  return img;
}

/// Writes channel planes as raw f32 to `path` and {width, height, channels} to `path`.json.
inline void write_raw_planes(const std::string& path, int width, int height, std::span<const double> planar,
                             int channels) {
  if (planar.size() != static_cast<std::size_t>(width) * height * channels)
    throw std::invalid_argument("raw image size does not match its shape");
  auto os = io::open_out(path);
  io::write_f32(os, planar);
  auto js = io::open_out(path + ".json");
  js << nlohmann::json{{"width", width}, {"height", height}, {"channels", channels}}.dump(2) << '\n';
}

inline std::vector<double> planar_rgb(const Grid2<Vec3>& img) {
  std::vector<double> out(3 * img.size());
  for (std::size_t i = 0; i < img.size(); ++i)
    for (int c = 0; c < 3; ++c) out[c * img.size() + i] = img.data[i][c];
  return out;
}

inline Grid2<Vec3> from_planar_rgb(std::span<const double> planar, int width, int height) {
  Grid2<Vec3> img(width, height);
  const std::size_t n = img.size();
  if (planar.size() != 3 * n) throw std::invalid_argument("planar rgb has the wrong size");
  for (std::size_t i = 0; i < n; ++i) img.data[i] = Vec3(planar[i], planar[n + i], planar[2 * n + i]);
  return img;
}

inline void write_raw_rgb(const std::string& path, const Grid2<Vec3>& img) {
  write_raw_planes(path, img.width, img.height, planar_rgb(img), 3);
}

}  // namespace dual3d
