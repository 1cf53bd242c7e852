#pragma once

/**
 * Binary tri-plane field file ("TPF1"), all little-endian:
 *
 *   char[4]  magic "TPF1"
 *   u32      C (channels)
 *   u32      R (plane resolution)
 *   f32[6]   bbox lo.xyz, hi.xyz
 *   f32[3*C*R*R] planes, order [plane XY,XZ,YZ][channel][v][u]
 *   u32      layer count L (=2)
 *   u32[L+1] layer sizes (C, hidden, 4)
 *   per layer: f32 weights (out x in, row-major), f32 bias (out)
 *
 * A JSON sidecar "<path>.json" records the model choices needed to reproduce evaluation.
 */

#include "dual3d/field.hpp"

#include <nlohmann/json.hpp>

namespace dual3d {

inline constexpr char kFieldMagic[4] = {'T', 'P', 'F', '1'};

inline void write_field(std::ostream& os, const TriPlaneField& f) {
  os.write(kFieldMagic, 4);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.channels()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(f.resolution()));
  const Aabb b = f.bbox();
  for (int i = 0; i < 3; ++i) io::write_le<float>(os, static_cast<float>(b.lo[i]));
  for (int i = 0; i < 3; ++i) io::write_le<float>(os, static_cast<float>(b.hi[i]));
  io::write_f32(os, f.planes());
  const FieldMlp& m = f.mlp();
  io::write_le<std::uint32_t>(os, 2);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.inputs()));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(m.hidden()));
  io::write_le<std::uint32_t>(os, FieldMlp::kOutputs);
  io::write_f32(os, std::span<const double>(m.w1.data(), m.w1.size()));
  io::write_f32(os, std::span<const double>(m.b1.data(), m.b1.size()));
  io::write_f32(os, std::span<const double>(m.w2.data(), m.w2.size()));
  io::write_f32(os, std::span<const double>(m.b2.data(), m.b2.size()));
}

inline TriPlaneField read_field(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kFieldMagic, 4) != 0) throw ConfigError("not a TPF1 field file");
  const auto C = io::read_le<std::uint32_t>(is);
  const auto R = io::read_le<std::uint32_t>(is);
  if (C == 0 || C > 4096 || R < 2 || R > 8192) throw ConfigError("TPF1 header has implausible C/R");
  Aabb box;
  for (int i = 0; i < 3; ++i) box.lo[i] = io::read_le<float>(is);
  for (int i = 0; i < 3; ++i) box.hi[i] = io::read_le<float>(is);
  if (!box.valid()) throw ConfigError("TPF1 bbox is degenerate");
  auto planes = io::read_f32(is, static_cast<std::size_t>(3) * C * R * R);
  const auto layers = io::read_le<std::uint32_t>(is);
  if (layers != 2) throw ConfigError("TPF1 MLP must have exactly 2 layers");
  const auto in = io::read_le<std::uint32_t>(is);
  const auto hidden = io::read_le<std::uint32_t>(is);
  const auto out = io::read_le<std::uint32_t>(is);
  if (in != C || out != FieldMlp::kOutputs || hidden == 0 || hidden > 65536)
    throw ConfigError("TPF1 MLP layer sizes do not match the planes");
  FieldMlp m(static_cast<int>(in), static_cast<int>(hidden));
  auto load = [&](auto& mat) {
    auto v = io::read_f32(is, static_cast<std::size_t>(mat.size()));
    std::copy(v.begin(), v.end(), mat.data());
  };
  load(m.w1);
  load(m.b1);
  load(m.w2);
  load(m.b2);
  TriPlaneField f(static_cast<int>(C), static_cast<int>(R), box, std::move(m));
  std::copy(planes.begin(), planes.end(), f.planes().begin());
  f.validate();
  return f;
}

inline nlohmann::json field_manifest(const TriPlaneField& f) {
  return {{"format", "TPF1"},
          {"channels", f.channels()},
          {"resolution", f.resolution()},
          {"hidden", f.mlp().hidden()},
          {"aggregation", "sum"},
          {"activation", FieldMlp::kActivation},
          {"rgb_squash", "logistic"}};
}

inline void save_field(const std::string& path, const TriPlaneField& f) {
  auto os = io::open_out(path);
  write_field(os, f);
  auto js = io::open_out(path + ".json");
  js << field_manifest(f).dump(2) << '\n';
}

inline TriPlaneField load_field(const std::string& path) {
  auto is = io::open_in(path);
  return read_field(is);
}

}  // namespace dual3d
