// dual3d command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include "dual3d/dual3d.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <variant>

namespace {

using namespace dual3d;

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

using AnyField = std::variant<AnalyticSdf, TriPlaneField>;

/// sphere[:radius] | box[:half_extent] | path to a TPF1 file.
AnyField load_any_field(const std::string& spec) {
  ColorRule color;
  color.kind = ColorRule::Kind::Position;
  auto param = [&](double fallback) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) return fallback;
    try {
      return std::stod(spec.substr(colon + 1));
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("bad field parameter in '{}'", spec));
    }
  };
  if (spec.rfind("sphere", 0) == 0) return AnalyticSdf::sphere(Vec3::Zero(), param(0.5), color);
  if (spec.rfind("box", 0) == 0) return AnalyticSdf::box(Vec3::Zero(), Vec3::Constant(param(0.4)), color);
  if (!std::filesystem::exists(spec)) throw ConfigError(fmt::format("field file not found: {}", spec));
  return load_field(spec);
}

std::vector<Camera> load_cameras(const std::string& path) {
  auto is = io::open_in(path);
  try {
    const auto j = nlohmann::json::parse(is);
    if (j.is_array()) return j.get<std::vector<Camera>>();
    return {j.get<Camera>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

Patch parse_patch(const std::string& s) {
  Patch p;
  if (std::sscanf(s.c_str(), "%d,%d,%d,%d", &p.x, &p.y, &p.w, &p.h) != 4)
    throw ConfigError(fmt::format("--patch expects x,y,w,h, got '{}'", s));
  return p;
}

std::string indexed_path(const std::string& path, std::size_t i, std::size_t n) {
  if (n == 1) return path;
  const std::filesystem::path p(path);
  return (p.parent_path() / fmt::format("{}_{:02d}{}", p.stem().string(), i, p.extension().string())).string();
}

template <class Fn>
int guarded(const std::string& stage, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const StageError& e) {
    fmt::print(stderr, "{}\n", e.what());
    return kExitStage;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "stage '{}' failed: {}\n", stage, e.what());
    return kExitStage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual3d: text-to-3D toolkit (render, sample, extract-mesh, refine, metrics, demo)"};
  app.require_subcommand(1);

  // render
  auto* render = app.add_subcommand("render", "Render an SDF field with NeuS volume rendering");
  std::string r_field = "sphere", r_camera, r_out = "render.ppm";
  int r_res = 0;
  RenderConfig rcfg;
  std::string r_patch;
  bool r_raw = false;
  render->add_option("--field", r_field, "TPF1 file, sphere[:r] or box[:h]");
  render->add_option("--camera", r_camera, "Camera JSON (object or array); default is the 24-view rig");
  render->add_option("--res", r_res, "Square output resolution (default: camera size)");
  render->add_option("--s", rcfg.inv_std, "NeuS inverse standard deviation");
  render->add_option("--n-uniform", rcfg.n_uniform);
  render->add_option("--n-upsample", rcfg.n_upsample);
  render->add_option("--grid-res", rcfg.grid_res, "Occupancy grid resolution");
  render->add_option("--near", rcfg.near);
  render->add_option("--far", rcfg.far);
  render->add_option("--patch", r_patch, "Render only x,y,w,h");
  render->add_option("--out", r_out, "Output PPM path (indexed when several cameras)");
  render->add_flag("--raw", r_raw, "Also write raw f32 rgb planes with a JSON sidecar");

  // sample
  auto* samp = app.add_subcommand("sample", "Run dual-mode DDIM sampling");
  int s_steps = 100, s_toggle = 10, s_views = 4, s_latent = 8, s_T = 1000;
  double s_cfg = 7.5;
  std::uint64_t s_seed = 0;
  std::string s_denoiser = "gaussian", s_out = "latents.f32", s_field_out, s_prompt = "a wooden sphere";
  samp->add_option("--steps", s_steps, "DDIM steps K");
  samp->add_option("--toggle-m", s_toggle, "Every m-th step runs the 3D mode");
  samp->add_option("--cfg-scale", s_cfg);
  samp->add_option("--seed", s_seed);
  samp->add_option("--denoiser", s_denoiser)->check(CLI::IsMember({"gaussian", "toy-net"}));
  samp->add_option("--views", s_views);
  samp->add_option("--latent-res", s_latent);
  samp->add_option("--timesteps", s_T);
  samp->add_option("--prompt", s_prompt);
  samp->add_option("--out", s_out, "Latent output (raw f32 + .json sidecar)");
  samp->add_option("--field-out", s_field_out, "Write the last 3D-mode field (toy-net only)");

  // extract-mesh
  auto* extract = app.add_subcommand("extract-mesh", "Marching cubes on an SDF field");
  std::string e_field = "sphere", e_out = "mesh.obj";
  int e_res = 64;
  long long e_budget = 1 << 20;
  bool e_texture = false;
  extract->add_option("--field", e_field);
  extract->add_option("--grid-res", e_res, "Marching cubes resolution");
  extract->add_option("--out", e_out);
  extract->add_flag("--texture", e_texture, "Build a UV atlas and bake field colors into texture.ppm");
  extract->add_option("--texel-budget", e_budget);

  // refine
  auto* refine = app.add_subcommand("refine", "Refine a mesh texture with a 2D refiner");
  std::string f_field = "sphere", f_out = "refined", f_refiner = "identity";
  int f_mesh_res = 64, f_res = 128, f_T = 1000;
  long long f_budget = 1 << 20;
  RefineConfig fcfg;
  double f_radius = 2.5;
  refine->add_option("--field", f_field);
  refine->add_option("--grid-res", f_mesh_res, "Marching cubes resolution");
  refine->add_option("--texel-budget", f_budget);
  refine->add_option("--iters", fcfg.iters);
  refine->add_option("--lr", fcfg.lr);
  refine->add_option("--t-start", fcfg.t_start);
  refine->add_option("--t-end", fcfg.t_end);
  refine->add_option("--timesteps", f_T);
  refine->add_option("--res", f_res, "Render resolution during refinement");
  refine->add_option("--radius", f_radius, "Camera distance");
  refine->add_option("--seed", fcfg.seed);
  refine->add_option("--prompt", fcfg.condition);
  refine->add_option("--refiner", f_refiner, "identity | constant:r,g,b | external:<cmd>");
  refine->add_option("--out", f_out, "Output directory");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "CLIP similarity and R-precision from embedding files");
  std::string m_emb, m_out;
  metrics->add_option("--embeddings", m_emb, "Embedding set stem (<stem>.json, .images.f32, .texts.f32)")->required();
  metrics->add_option("--out", m_out, "metrics.json path (default: stdout)");

  // demo
  auto* demo = app.add_subcommand("demo", "Run the whole pipeline");
  std::string d_config, d_out;
  std::optional<std::uint64_t> d_seed;
  demo->add_option("--config", d_config, "Pipeline JSON config");
  demo->add_option("--out", d_out, "Output directory (overrides the config)");
  demo->add_option("--seed", d_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (*render) {
    return guarded("render", [&] {
      rcfg.validate();
      std::vector<Camera> cams = r_camera.empty() ? eval_camera_rig(2.5) : load_cameras(r_camera);
      if (r_res > 0)
        for (auto& c : cams) c = c.resized(r_res, r_res);
      std::optional<Patch> patch;
      if (!r_patch.empty()) patch = parse_patch(r_patch);
      const AnyField any = load_any_field(r_field);
      std::visit(
          [&](const auto& field) {
            using F = std::decay_t<decltype(field)>;
            const NeusRenderer<F> renderer(field, rcfg);
            for (std::size_t i = 0; i < cams.size(); ++i) {
              const RenderOutput out = renderer.render(cams[i], patch);
              const std::string path = indexed_path(r_out, i, cams.size());
              write_ppm(path, out.rgb);
              if (r_raw) write_raw_rgb(path + ".f32", out.rgb);
            }
          },
          any);
    });
  }

  if (*samp) {
    return guarded("sample", [&] {
      const NoiseSchedule sched = NoiseSchedule::cosine(s_T);
      const SamplerConfig sc{s_steps, ToggleSchedule{s_toggle}, s_cfg, s_seed};
      if (s_steps < 1 || s_steps > s_T || s_toggle < 1 || s_views < 1 || s_latent < 1)
        throw ConfigError("bad sampler settings");
      const auto cams = sampler_cameras(s_views, 2.5, kDefaultRigFovDeg, s_latent);
      const Condition cond = prompt_condition(s_prompt);
      SampleResult r;
      if (s_denoiser == "gaussian") {
        const GaussianAnalyticDenoiser d(std::vector<double>(4, 0.0), std::vector<double>(4, 1.0));
        r = sample(d, sched, sc, cams, cond, s_views, 4, s_latent, s_latent);
      } else {
        NetConfig nc;
        nc.views = s_views;
        nc.latent_res = s_latent;
        nc.model_width = 32;
        nc.layers = 2;
        nc.heads = 4;
        nc.triplane_res = s_latent * 4;
        const DualModeNet net = DualModeNet::random(nc, s_seed);
        RenderConfig rc;
        rc.grid_res = 32;
        const ToyNetDenoiser d(net, rc);
        r = sample(d, sched, sc, cams, cond, s_views, 4, s_latent, s_latent);
        if (!s_field_out.empty()) save_field(s_field_out, r.field);
      }
      save_latents(s_out, r.latents, 0);
      fmt::print("{} steps, {} in 3D mode\n", r.modes.size(), r.steps_3d);
    });
  }

  if (*extract) {
    return guarded("extract-mesh", [&] {
      const AnyField any = load_any_field(e_field);
      std::visit(
          [&](const auto& field) {
            TriMesh mesh = marching_cubes(field, e_res);
            if (e_texture) {
              const AtlasLayout layout = build_uv_atlas(mesh, e_budget);
              const auto dir = std::filesystem::path(e_out).parent_path();
              write_ppm((dir / "texture.ppm").string(), bake_texture(mesh, layout, field).as_image());
              write_obj(e_out, mesh, std::filesystem::path(e_out).stem().string() + ".mtl", "texture.ppm");
            } else {
              write_obj(e_out, mesh);
            }
            fmt::print("{} vertices, {} faces, watertight={}, euler={}\n", mesh.vertices.size(), mesh.faces.size(),
                       is_watertight(mesh), euler_characteristic(mesh));
          },
          any);
    });
  }

  if (*refine) {
    return guarded("refine", [&] {
      const auto refiner = make_refiner(f_refiner);
      fcfg.T = f_T;
      fcfg.resolution = f_res;
      const AnyField any = load_any_field(f_field);
      std::filesystem::create_directories(f_out);
      std::visit(
          [&](const auto& field) {
            TriMesh mesh = marching_cubes(field, f_mesh_res);
            const AtlasLayout layout = build_uv_atlas(mesh, f_budget);
            const ViewSampler views{f_radius, -30.0, 30.0, kDefaultRigFovDeg};
            const RefineResult r = refine_texture(mesh, bake_texture(mesh, layout, field), views, *refiner, fcfg);
            const std::filesystem::path dir(f_out);
            write_ppm((dir / "texture.ppm").string(), r.texture.as_image());
            write_obj((dir / "mesh.obj").string(), mesh, "mesh.mtl", "texture.ppm");
            fmt::print("loss {:.6g} -> {:.6g}\n", r.losses.front(), r.losses.back());
          },
          any);
    });
  }

  if (*metrics) {
    return guarded("metrics", [&] {
      const EmbeddingSet e = load_embeddings(m_emb);
      const nlohmann::json j = {{"clip_similarity", sig6(clip_similarity(e))}, {"r_precision", sig6(r_precision(e))}};
      if (m_out.empty())
        fmt::print("{}\n", j.dump(2));
      else
        io::open_out(m_out) << j.dump(2) << '\n';
    });
  }

  if (*demo) {
    return guarded("demo", [&] {
      PipelineConfig cfg = d_config.empty() ? pipeline_config_from_json(nlohmann::json::object()) : load_pipeline_config(d_config);
      if (!d_out.empty()) cfg.output_dir = d_out;
      if (d_seed) cfg.seed = *d_seed;
      const PipelineResult r = run_pipeline(cfg);
      fmt::print("wrote {} files to {}\n", r.files.size() + 1, cfg.output_dir);
    });
  }
  return 0;
}
