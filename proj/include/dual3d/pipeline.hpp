#pragma once

/**
 * End-to-end pipeline: sample -> field -> rig renders -> mesh -> refined
 * texture -> metrics, with a manifest of every output and its SHA-256.
 *
 * The configuration is one JSON document. Every object rejects unknown keys.
 * Stage failures raise StageError naming the stage; files already written stay
 * on disk and the manifest written so far records the failing stage.
 */

#include "dual3d/analytic_sdf.hpp"
#include "dual3d/camera.hpp"
#include "dual3d/diffusion.hpp"
#include "dual3d/dual_mode_net.hpp"
#include "dual3d/field_io.hpp"
#include "dual3d/image_io.hpp"
#include "dual3d/mesh.hpp"
#include "dual3d/metrics.hpp"
#include "dual3d/raster.hpp"
#include "dual3d/refine.hpp"
#include "dual3d/renderer.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <filesystem>
#include <set>

namespace dual3d {

// ---------------------------------------------------------------------------
// Hashing

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 failed");
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

inline std::string sha256_file(const std::string& path) {
  auto is = io::open_in(path);
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

/// Rounds to 6 significant digits so JSON output carries no more than that.
inline double sig6(double v) {
  if (!std::isfinite(v)) return v;
  return std::stod(fmt::format("{:.6g}", v));
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  std::string output_dir = "dual3d_out";
  std::uint64_t seed = 0;
  std::string prompt = "a wooden sphere";

  struct Field {
    std::string type = "sphere";  // sphere | box | tpf1 | sampled
    std::string path;             // tpf1 only
    double radius = 0.5;
    double half_extent = 0.4;
    Vec3 color{0.8, 0.5, 0.3};
    bool position_color = true;
  } field;

  struct Rig {
    double radius = 2.5;
    double fov = kDefaultRigFovDeg;
    int resolution = 64;
  } rig;

  RenderConfig render;

  struct Sampler {
    std::string denoiser = "gaussian";  // gaussian | toy-net
    int steps = 100;
    int toggle_m = 10;
    double cfg_scale = 7.5;
    int views = 4;
    int latent_res = 8;
    int timesteps = 1000;
  } sampler;

  struct Mesh {
    int resolution = 64;
    long long texel_budget = 1 << 20;
  } mesh;

  struct Refine {
    int iters = 100;
    double lr = 0.1;
    double t_start = 0.20;
    double t_end = 0.05;
    int resolution = 128;
    std::string refiner = "identity";
  } refine;

  std::string embeddings;  // optional stem of an embedding set for clip_similarity / r_precision

  void validate() const {
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    static const std::set<std::string> kFieldTypes = {"sphere", "box", "tpf1", "sampled"};
    if (!kFieldTypes.contains(field.type)) throw ConfigError(fmt::format("unknown field type '{}'", field.type));
    if (field.type == "tpf1") {
      if (field.path.empty()) throw ConfigError("field.path is required for a tpf1 field");
      if (!std::filesystem::exists(field.path)) throw ConfigError(fmt::format("field file not found: {}", field.path));
    }
    if (field.type == "sampled" && sampler.denoiser != "toy-net")
      throw ConfigError("a sampled field needs the toy-net denoiser");
    if (!(field.radius > 0.0) || !(field.half_extent > 0.0)) throw ConfigError("field sizes must be positive");
    if (!(rig.radius > 0.0) || !(rig.fov > 0.0 && rig.fov < 180.0) || rig.resolution < 1)
      throw ConfigError("bad camera rig");
    try {
      render.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("render: {}", e.what()));
    }
    if (sampler.denoiser != "gaussian" && sampler.denoiser != "toy-net")
      throw ConfigError(fmt::format("unknown denoiser '{}'", sampler.denoiser));
    if (sampler.steps < 1 || sampler.steps > sampler.timesteps || sampler.toggle_m < 1 || sampler.views < 1 ||
        sampler.latent_res < 1)
      throw ConfigError("bad sampler settings");
    if (mesh.resolution < 8) throw ConfigError("mesh.resolution must be >= 8");
    if (refine.iters < 1 || !(refine.lr > 0.0) || refine.resolution < 1) throw ConfigError("bad refinement settings");
    if (!embeddings.empty() && !std::filesystem::exists(embeddings + ".json"))
      throw ConfigError(fmt::format("embedding manifest not found: {}.json", embeddings));
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", where.empty() ? "config" : where));
  for (const auto& [k, v] : j.items())
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
      throw ConfigError(fmt::format("unknown config key '{}{}'", where.empty() ? "" : where + ".", k));
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline Vec3 read_vec3(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw ConfigError("expected a 3-vector");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  using detail::reject_unknown;
  PipelineConfig c;
  try {
    reject_unknown(j, "", {"output_dir", "seed", "prompt", "field", "rig", "render", "sampler", "mesh", "refine", "embeddings"});
    read_opt(j, "output_dir", c.output_dir);
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_integer()) throw ConfigError("seed must be an integer");
      c.seed = j.at("seed").get<std::uint64_t>();
    }
    read_opt(j, "prompt", c.prompt);
    read_opt(j, "embeddings", c.embeddings);
    if (j.contains("field")) {
      const auto& f = j.at("field");
      reject_unknown(f, "field", {"type", "path", "radius", "half_extent", "color", "position_color"});
      read_opt(f, "type", c.field.type);
      read_opt(f, "path", c.field.path);
      read_opt(f, "radius", c.field.radius);
      read_opt(f, "half_extent", c.field.half_extent);
      read_opt(f, "position_color", c.field.position_color);
      if (f.contains("color")) c.field.color = detail::read_vec3(f.at("color"));
    }
    if (j.contains("rig")) {
      const auto& r = j.at("rig");
      reject_unknown(r, "rig", {"radius", "fov", "resolution"});
      read_opt(r, "radius", c.rig.radius);
      read_opt(r, "fov", c.rig.fov);
      read_opt(r, "resolution", c.rig.resolution);
    }
    if (j.contains("render")) {
      const auto& r = j.at("render");
      reject_unknown(r, "render", {"n_uniform", "n_upsample", "s", "near", "far", "grid_res", "background"});
      read_opt(r, "n_uniform", c.render.n_uniform);
      read_opt(r, "n_upsample", c.render.n_upsample);
      read_opt(r, "s", c.render.inv_std);
      read_opt(r, "near", c.render.near);
      read_opt(r, "far", c.render.far);
      read_opt(r, "grid_res", c.render.grid_res);
      if (r.contains("background")) c.render.background = detail::read_vec3(r.at("background"));
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      reject_unknown(s, "sampler", {"denoiser", "steps", "toggle_m", "cfg_scale", "views", "latent_res", "timesteps"});
      read_opt(s, "denoiser", c.sampler.denoiser);
      read_opt(s, "steps", c.sampler.steps);
      read_opt(s, "toggle_m", c.sampler.toggle_m);
      read_opt(s, "cfg_scale", c.sampler.cfg_scale);
      read_opt(s, "views", c.sampler.views);
      read_opt(s, "latent_res", c.sampler.latent_res);
      read_opt(s, "timesteps", c.sampler.timesteps);
    }
    if (j.contains("mesh")) {
      const auto& m = j.at("mesh");
      reject_unknown(m, "mesh", {"resolution", "texel_budget"});
      read_opt(m, "resolution", c.mesh.resolution);
      read_opt(m, "texel_budget", c.mesh.texel_budget);
    }
    if (j.contains("refine")) {
      const auto& r = j.at("refine");
      reject_unknown(r, "refine", {"iters", "lr", "t_start", "t_end", "resolution", "refiner"});
      read_opt(r, "iters", c.refine.iters);
      read_opt(r, "lr", c.refine.lr);
      read_opt(r, "t_start", c.refine.t_start);
      read_opt(r, "t_end", c.refine.t_end);
      read_opt(r, "resolution", c.refine.resolution);
      read_opt(r, "refiner", c.refine.refiner);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  }
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  auto is = io::open_in(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Helpers shared by the pipeline and the CLI

/// Deterministic stand-in text embedding: SHA-256 bytes of the prompt mapped to [-1, 1].
inline Condition prompt_condition(const std::string& prompt) {
  Condition c;
  if (prompt.empty()) return c;
  const std::string hex = sha256_hex(prompt);
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2) c.embedding.push_back(std::stoi(hex.substr(i, 2), nullptr, 16) / 127.5 - 1.0);
  return c;
}

/// Cameras the sampler conditions on: evenly spaced azimuths at zero elevation.
inline std::vector<Camera> sampler_cameras(int views, double radius, double fov, int res) {
  std::vector<Camera> cams;
  for (int v = 0; v < views; ++v) cams.push_back(orbit_camera(radius, 360.0 * v / views, 0.0, fov, res, res));
  return cams;
}

/// Fills each face's atlas cell with the field color at the surface point under each texel.
template <SdfField F>
TextureAtlas bake_texture(const TriMesh& mesh, const AtlasLayout& layout, const F& field) {
  TextureAtlas tex(layout.width, layout.height);
  parallel_for(static_cast<int>(mesh.faces.size()), [&](int f) {
    const auto& uv = mesh.uvs[f];
    const auto& t = mesh.faces[f];
    const auto o = chart_origin(layout, f);
    const Vec2 e1 = uv[1] - uv[0], e2 = uv[2] - uv[0];
    const double det = e1.x() * e2.y() - e2.x() * e1.y();
    for (int y = o[1]; y < o[1] + layout.cell; ++y)
      for (int x = o[0]; x < o[0] + layout.cell; ++x) {
        const Vec2 q = Vec2((x + 0.5) / layout.width, (y + 0.5) / layout.height) - uv[0];
        double b1 = (q.x() * e2.y() - e2.x() * q.y()) / det;
        double b2 = (e1.x() * q.y() - q.x() * e1.y()) / det;
        b1 = std::clamp(b1, 0.0, 1.0);
        b2 = std::clamp(b2, 0.0, 1.0 - b1);
        const Vec3 p = (1.0 - b1 - b2) * mesh.vertices[t[0]] + b1 * mesh.vertices[t[1]] + b2 * mesh.vertices[t[2]];
        tex.at(x, y) = field.eval(p).color.cwiseMax(0.0).cwiseMin(1.0);
      }
  });
  return tex;
}

// ---------------------------------------------------------------------------
// Run

struct PipelineResult {
  std::vector<std::string> files;  // relative to output_dir, in write order
  nlohmann::json metrics;
};

namespace detail {

class ArtifactLog {
 public:
  explicit ArtifactLog(std::filesystem::path dir, std::uint64_t seed) : dir_(std::move(dir)), seed_(seed) {}

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }
  void add(const std::string& rel) { files_.push_back(rel); }
  const std::vector<std::string>& files() const { return files_; }

  void write_manifest(const std::string& failed_stage = "") const {
    std::vector<std::string> sorted = files_;
    std::sort(sorted.begin(), sorted.end());
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& rel : sorted) {
      const auto p = dir_ / rel;
      entries.push_back({{"path", rel}, {"sha256", sha256_file(p.string())}, {"bytes", std::filesystem::file_size(p)}});
    }
    nlohmann::json j = {{"format", "dual3d-manifest-v1"}, {"seed", seed_}, {"files", entries}};
    if (!failed_stage.empty()) j["failed_stage"] = failed_stage;
    io::open_out(path("manifest.json")) << j.dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
  std::uint64_t seed_;
  std::vector<std::string> files_;
};

template <class Fn>
auto run_stage(const std::string& name, ArtifactLog& log, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    log.write_manifest(name);
    throw StageError(name, e.what());
  }
}

}  // namespace detail

template <SdfField F>
void run_field_stages(const PipelineConfig& cfg, const F& field, detail::ArtifactLog& log, nlohmann::json& metrics) {
  using detail::run_stage;
  // Rig renders.
  const double mean_opacity = run_stage("render", log, [&] {
    const auto rig = eval_camera_rig(cfg.rig.radius, cfg.rig.fov, cfg.rig.resolution, cfg.rig.resolution);
    const NeusRenderer<F> renderer(field, cfg.render);
    double opacity = 0.0;
    for (std::size_t v = 0; v < rig.size(); ++v) {
      const RenderOutput out = renderer.render(rig[v]);
      for (double o : out.opacity.data) opacity += o;
      const std::string rel = fmt::format("views/view_{:02d}.ppm", v);
      write_ppm(log.path(rel), out.rgb);
      log.add(rel);
    }
    return opacity / (static_cast<double>(rig.size()) * cfg.rig.resolution * cfg.rig.resolution);
  });
  metrics["mean_opacity"] = mean_opacity;

  // Geometry and atlas.
  auto [mesh, layout] = run_stage("extract-mesh", log, [&] {
    TriMesh m = marching_cubes(field, cfg.mesh.resolution);
    const AtlasLayout a = build_uv_atlas(m, cfg.mesh.texel_budget);
    return std::pair{std::move(m), a};
  });
  metrics["mesh_vertices"] = mesh.vertices.size();
  metrics["mesh_faces"] = mesh.faces.size();
  metrics["mesh_watertight"] = is_watertight(mesh);
  metrics["mesh_euler_characteristic"] = euler_characteristic(mesh);

  // Texture refinement.
  const RefineResult refined = run_stage("refine", log, [&] {
    const TextureAtlas baked = bake_texture(mesh, layout, field);
    const auto refiner = make_refiner(cfg.refine.refiner);
    RefineConfig rc;
    rc.iters = cfg.refine.iters;
    rc.lr = cfg.refine.lr;
    rc.T = cfg.sampler.timesteps;
    rc.t_start = cfg.refine.t_start;
    rc.t_end = cfg.refine.t_end;
    rc.resolution = cfg.refine.resolution;
    rc.background = cfg.render.background;
    rc.condition = cfg.prompt;
    rc.seed = cfg.seed;
    const ViewSampler views{cfg.rig.radius, -30.0, 30.0, cfg.rig.fov};
    RefineResult r = refine_texture(mesh, baked, views, *refiner, rc);
    write_ppm(log.path("mesh/texture.ppm"), r.texture.as_image());
    log.add("mesh/texture.ppm");
    write_obj(log.path("mesh/mesh.obj"), mesh, "mesh.mtl", "texture.ppm");
    log.add("mesh/mesh.obj");
    log.add("mesh/mesh.mtl");
    return r;
  });
  metrics["refine_initial_loss"] = refined.losses.front();
  metrics["refine_final_loss"] = refined.losses.back();
}

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir / "views");
  fs::create_directories(dir / "mesh");
  detail::ArtifactLog log(dir, cfg.seed);
  using detail::run_stage;
  nlohmann::json metrics = nlohmann::json::object();

  // Sampling.
  const NoiseSchedule sched = NoiseSchedule::cosine(cfg.sampler.timesteps);
  const Condition cond = prompt_condition(cfg.prompt);
  const int channels = 4;
  std::optional<DualModeNet> net;
  SampleResult sampled = run_stage("sample", log, [&] {
    const auto cams = sampler_cameras(cfg.sampler.views, cfg.rig.radius, cfg.rig.fov, cfg.sampler.latent_res);
    SamplerConfig sc{cfg.sampler.steps, ToggleSchedule{cfg.sampler.toggle_m}, cfg.sampler.cfg_scale, cfg.seed};
    SampleResult r;
    if (cfg.sampler.denoiser == "gaussian") {
      const GaussianAnalyticDenoiser d(std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0));
      r = sample(d, sched, sc, cams, cond, cfg.sampler.views, channels, cfg.sampler.latent_res, cfg.sampler.latent_res);
    } else {
      NetConfig nc;
      nc.views = cfg.sampler.views;
      nc.latent_channels = channels;
      nc.latent_res = cfg.sampler.latent_res;
      nc.model_width = 32;
      nc.layers = 2;
      nc.heads = 4;
      nc.triplane_res = cfg.sampler.latent_res * 4;
      net.emplace(DualModeNet::random(nc, cfg.seed));
      RenderConfig rc = cfg.render;
      rc.grid_res = std::min(rc.grid_res, 32);
      const ToyNetDenoiser d(*net, rc);
      r = sample(d, sched, sc, cams, cond, cfg.sampler.views, channels, cfg.sampler.latent_res, cfg.sampler.latent_res);
    }
    save_latents(log.path("latents.f32"), r.latents, 0);
    log.add("latents.f32");
    log.add("latents.f32.json");
    return r;
  });
  metrics["sampler_steps"] = sampled.modes.size();
  metrics["sampler_steps_3d"] = sampled.steps_3d;

  // Field.
  if (cfg.field.type == "sphere" || cfg.field.type == "box") {
    ColorRule color;
    color.rgb = cfg.field.color;
    color.kind = cfg.field.position_color ? ColorRule::Kind::Position : ColorRule::Kind::Constant;
    const AnalyticSdf f = cfg.field.type == "sphere"
                              ? AnalyticSdf::sphere(Vec3::Zero(), cfg.field.radius, color)
                              : AnalyticSdf::box(Vec3::Zero(), Vec3::Constant(cfg.field.half_extent), color);
    run_field_stages(cfg, f, log, metrics);
  } else {
    const TriPlaneField f = run_stage("field", log, [&] {
      TriPlaneField tf = cfg.field.type == "tpf1" ? load_field(cfg.field.path) : sampled.field;
      save_field(log.path("field.tpf1"), tf);
      log.add("field.tpf1");
      log.add("field.tpf1.json");
      return tf;
    });
    run_field_stages(cfg, f, log, metrics);
  }

  // Metrics.
  run_stage("metrics", log, [&] {
    if (!cfg.embeddings.empty()) {
      const EmbeddingSet e = load_embeddings(cfg.embeddings);
      metrics["clip_similarity"] = clip_similarity(e);
      metrics["r_precision"] = r_precision(e);
    }
    for (auto& [k, v] : metrics.items())
      if (v.is_number_float()) v = sig6(v.get<double>());
    io::open_out(log.path("metrics.json")) << metrics.dump(2) << '\n';
    log.add("metrics.json");
  });
  log.write_manifest();
  return {log.files(), metrics};
}

}  // namespace dual3d
