#pragma once

/**
 * Forward-only toy instance of the dual-mode multi-view network.
 *
 *   view latents (N x c x h x w) + Plucker rays (6 x h x w per view)
 *   tri-plane latents (3 x c x h x w) + zero condition channels
 *     -> stack of N + 3 entries, c + 6 channels          assemble_stack
 *     -> joint attention over every entry's tokens       cross_view_attention
 *     -> per-token lift to the model width (c + extra)   lift
 *        (the first c channels of the view entries are the 2D-mode x0 prediction)
 *     -> tiny transformer, keep the 3 tri-plane entries   tiny_transformer_forward
 *     -> upsampling decoder with EMA norm per stage       decode_triplane
 *     -> TriPlaneField with the shared field MLP
 *
 * Parameters live in a flat name -> tensor store so they can be saved and
 * loaded with a JSON manifest. The backbone is deliberately small: the
 * contract here is shapes, attention structure and initialization behavior.
 */

#include "dual3d/camera.hpp"
#include "dual3d/diffusion.hpp"
#include "dual3d/field.hpp"
#include "dual3d/renderer.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <random>

namespace dual3d {

struct NetConfig {
  int views = 4;
  int latent_channels = 4;
  int latent_res = 32;
  int model_width = 128;  // latent_channels + extra feature channels
  int layers = 16;
  int heads = 8;
  int ff_mult = 4;
  int attn_width = 16;  // inner width of the cross-view attention
  int attn_heads = 2;
  int triplane_channels = 8;
  int triplane_res = 64;
  int field_hidden = 16;
  int image_scale = 8;  // image resolution / latent resolution
  double ema_beta = 0.99;

  static NetConfig full_scale() {
    NetConfig c;
    c.model_width = 4 + 508;
    c.layers = 16;
    c.heads = 8;
    c.triplane_channels = 64;
    c.triplane_res = 256;
    return c;
  }

  int stack_channels() const { return latent_channels + kPluckerChannels; }
  int entries() const { return views + 3; }

  int decoder_stages() const {
    int stages = 0;
    for (int r = latent_res; r < triplane_res; r *= 2) ++stages;
    return stages;
  }

  void validate() const {
    if (views < 1 || latent_channels < 1 || latent_res < 1) throw std::invalid_argument("bad latent shape");
    if (model_width < latent_channels || heads < 1 || model_width % heads != 0)
      throw std::invalid_argument("model width must cover the latent channels and divide by heads");
    if (attn_heads < 1 || attn_width % attn_heads != 0) throw std::invalid_argument("attention width must divide by heads");
    if (layers < 0 || ff_mult < 1) throw std::invalid_argument("bad transformer shape");
    if (triplane_channels < 1) throw std::invalid_argument("bad tri-plane channels");
    if (decoder_stages() < 1 || (latent_res << decoder_stages()) != triplane_res)
      throw std::invalid_argument("tri-plane resolution must be latent resolution times a power of two");
    if (!(ema_beta > 0.0 && ema_beta < 1.0)) throw std::invalid_argument("EMA decay must lie in (0, 1)");
  }
};

// ---------------------------------------------------------------------------
// Shape audit

using Shape = std::vector<long long>;

struct ShapeAudit {
  Shape encoder_in, encoder_out;
  Shape denoiser_in, denoiser_out;
  Shape transformer_in, transformer_out;
  Shape decoder_in, decoder_out;
  long long transformer_params = 0;
};

inline long long transformer_param_count(const NetConfig& c) {
  const long long d = c.model_width, ff = static_cast<long long>(c.ff_mult) * d;
  const long long per_layer = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + d  // ln1, qkv, proj, scale1
                              + 2 * d + (ff * d + ff) + (d * ff + d) + d;     // ln2, fc1, fc2, scale2
  return per_layer * c.layers;
}

/// Tensor shapes through the network, derived from the config alone (no allocation).
inline ShapeAudit audit_shapes(const NetConfig& c) {
  c.validate();
  const long long n = c.views, e = c.entries(), h = c.latent_res, lat = c.latent_channels;
  ShapeAudit a;
  a.encoder_in = {n, 3, h * c.image_scale, h * c.image_scale};
  a.encoder_out = {n, lat, h, h};
  a.denoiser_in = {e, c.stack_channels(), h, h};
  a.denoiser_out = {e, c.model_width, h, h};
  a.transformer_in = {e, c.model_width, h * h};
  a.transformer_out = {3, c.model_width, h * h};
  a.decoder_in = {3, c.model_width, h, h};
  a.decoder_out = {3, c.triplane_channels, c.triplane_res, c.triplane_res};
  a.transformer_params = transformer_param_count(c);
  return a;
}

// ---------------------------------------------------------------------------
// Parameter store

struct ParamTensor {
  std::vector<int> shape;
  std::vector<double> data;
};

class ParamStore {
 public:
  ParamTensor& add(const std::string& name, std::vector<int> shape, double fill = 0.0) {
    std::size_t n = 1;
    for (int s : shape) n *= static_cast<std::size_t>(s);
    auto& t = tensors_[name];
    t.shape = std::move(shape);
    t.data.assign(n, fill);
    return t;
  }

  const ParamTensor& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range(fmt::format("missing parameter '{}'", name));
    return it->second;
  }
  ParamTensor& get(const std::string& name) {
    return const_cast<ParamTensor&>(static_cast<const ParamStore&>(*this).get(name));
  }

  Eigen::Map<const MatX> mat(const std::string& name) const {
    const auto& t = get(name);
    if (t.shape.size() != 2) throw std::invalid_argument(fmt::format("'{}' is not a matrix", name));
    return {t.data.data(), t.shape[0], t.shape[1]};
  }
  Eigen::Map<const VecX> vec(const std::string& name) const {
    const auto& t = get(name);
    return {t.data.data(), static_cast<Eigen::Index>(t.data.size())};
  }

  const std::map<std::string, ParamTensor>& tensors() const { return tensors_; }

  bool all_finite() const {
    for (const auto& [_, t] : tensors_)
      for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
  }

  /// Sectioned blob: tensors in manifest order as f32; manifest gives name, shape, offset, count.
  void save(const std::string& bin_path, const std::string& manifest_path, const nlohmann::json& extra = {}) const {
    auto os = io::open_out(bin_path);
    nlohmann::json manifest{{"format", "dual3d-weights-v1"}, {"dtype", "f32le"}, {"tensors", nlohmann::json::array()}};
    std::size_t offset = 0;
    for (const auto& [name, t] : tensors_) {
      io::write_f32(os, t.data);
      manifest["tensors"].push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
      offset += t.data.size() * sizeof(float);
    }
    if (!extra.is_null()) manifest["config"] = extra;
    auto ms = io::open_out(manifest_path);
    ms << manifest.dump(2) << '\n';
  }

  static ParamStore load(const std::string& bin_path, const std::string& manifest_path) {
    auto ms = io::open_in(manifest_path);
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(ms);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("bad weight manifest '{}': {}", manifest_path, e.what()));
    }
    auto is = io::open_in(bin_path);
    ParamStore store;
    for (const auto& entry : manifest.at("tensors")) {
      auto& t = store.add(entry.at("name").get<std::string>(), entry.at("shape").get<std::vector<int>>());
      if (entry.at("count").get<std::size_t>() != t.data.size()) throw ConfigError("weight count does not match shape");
      is.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
      t.data = io::read_f32(is, t.data.size());
    }
    return store;
  }

 private:
  std::map<std::string, ParamTensor> tensors_;
};

// ---------------------------------------------------------------------------
// Building blocks

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline MatX layer_norm(const MatX& x, const Eigen::Ref<const VecX>& gamma, const Eigen::Ref<const VecX>& beta,
                       double eps = 1e-6) {
  MatX out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    out.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + eps)).matrix().cwiseProduct(gamma.transpose()) +
                 beta.transpose();
  }
  return out;
}

/// Multi-head softmax attention; rows of q, k, v are tokens. Query rows are processed in blocks.
inline MatX multi_head_attention(const MatX& q, const MatX& k, const MatX& v, int heads) {
  const Eigen::Index n = q.rows(), d = q.cols();
  const Eigen::Index dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MatX out(n, d);
  constexpr Eigen::Index kBlock = 256;
  for (int h = 0; h < heads; ++h) {
    const MatX kh = k.middleCols(h * dh, dh);
    const MatX vh = v.middleCols(h * dh, dh);
    for (Eigen::Index r0 = 0; r0 < n; r0 += kBlock) {
      const Eigen::Index rows = std::min(kBlock, n - r0);
      MatX s = (q.block(r0, h * dh, rows, dh) * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < rows; ++r) {
        const double mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      out.block(r0, h * dh, rows, dh) = s * vh;
    }
  }
  return out;
}

/// Running second-moment normalization: y = x / sqrt(sigma) with the pre-update sigma.
struct EmaNorm {
  double sigma = 1.0;
  double beta = 0.99;
};

inline std::vector<double> ema_norm_forward(std::span<const double> x, EmaNorm& state, bool update) {
  if (!(state.sigma > 0.0)) throw std::invalid_argument("EMA sigma must be positive");
  std::vector<double> y(x.size());
  const double inv = 1.0 / std::sqrt(state.sigma);
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] * inv;
    sq += x[i] * x[i];
  }
  if (update && !x.empty()) state.sigma = (1.0 - state.beta) * state.sigma + state.beta * (sq / x.size());
  return y;
}

// ---------------------------------------------------------------------------
// Stack assembly and token views

struct LatentStack {
  int views = 0;
  LatentTensor maps;  // entries = views + 3, order: views..., XY, XZ, YZ

  int entries() const { return maps.views; }
  int channels() const { return maps.channels; }
};

inline LatentStack assemble_stack(const LatentTensor& view_latents, std::span<const Camera> cameras,
                                  const LatentTensor& tri_latents) {
  if (tri_latents.views != 3) throw std::invalid_argument("exactly 3 tri-plane latents are required");
  if (static_cast<int>(cameras.size()) != view_latents.views) throw std::invalid_argument("one camera per view latent");
  if (tri_latents.channels != view_latents.channels || tri_latents.height != view_latents.height ||
      tri_latents.width != view_latents.width)
    throw std::invalid_argument("view and tri-plane latents must share channels and (h, w)");
  const int n = view_latents.views, c = view_latents.channels, h = view_latents.height, w = view_latents.width;
  LatentStack s{n, LatentTensor(n + 3, c + kPluckerChannels, h, w)};
  for (int v = 0; v < n; ++v) {
    const std::vector<double> rays = plucker_channels(latent_rays(cameras[v], w, h));
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) s.maps.at(v, ch, y, x) = view_latents.at(v, ch, y, x);
    for (int k = 0; k < kPluckerChannels; ++k)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) s.maps.at(v, c + k, y, x) = rays[(static_cast<std::size_t>(k) * h + y) * w + x];
  }
  for (int p = 0; p < 3; ++p)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) s.maps.at(n + p, ch, y, x) = tri_latents.at(p, ch, y, x);
  return s;
}

/// Rows are tokens (entry-major, then y, x); columns are channels.
inline MatX to_tokens(const LatentTensor& t) {
  const Eigen::Index hw = static_cast<Eigen::Index>(t.height) * t.width;
  MatX m(t.views * hw, t.channels);
  for (int e = 0; e < t.views; ++e)
    for (int c = 0; c < t.channels; ++c)
      for (Eigen::Index i = 0; i < hw; ++i) m(e * hw + i, c) = t.data[(static_cast<std::size_t>(e) * t.channels + c) * hw + i];
  return m;
}

inline LatentTensor from_tokens(const MatX& m, int entries, int h, int w) {
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  if (m.rows() != entries * hw) throw std::invalid_argument("token count does not match shape");
  LatentTensor t(entries, static_cast<int>(m.cols()), h, w);
  for (int e = 0; e < entries; ++e)
    for (int c = 0; c < t.channels; ++c)
      for (Eigen::Index i = 0; i < hw; ++i) t.data[(static_cast<std::size_t>(e) * t.channels + c) * hw + i] = m(e * hw + i, c);
  return t;
}

struct AttentionWeights {
  MatX wq, wk, wv;  // inner x channels
  MatX wo;          // channels x inner
  int heads = 1;
};

inline AttentionWeights attention_weights(const ParamStore& p, const std::string& prefix, int heads) {
  return {p.mat(prefix + ".wq"), p.mat(prefix + ".wk"), p.mat(prefix + ".wv"), p.mat(prefix + ".wo"), heads};
}

/// Residual attention in which every token of every entry attends to all tokens of all entries.
inline LatentStack cross_view_attention(const LatentStack& stack, const AttentionWeights& w) {
  for (double v : stack.maps.data)
    if (std::isnan(v)) throw std::invalid_argument("NaN in attention input");
  if (!w.wq.allFinite() || !w.wk.allFinite() || !w.wv.allFinite() || !w.wo.allFinite())
    throw std::invalid_argument("attention weights must be finite");
  if (w.wq.cols() != stack.channels() || w.wo.rows() != stack.channels())
    throw std::invalid_argument("attention weights do not match stack channels");
  const MatX x = to_tokens(stack.maps);
  const MatX attn = multi_head_attention(x * w.wq.transpose(), x * w.wk.transpose(), x * w.wv.transpose(), w.heads);
  const MatX y = x + attn * w.wo.transpose();
  return {stack.views, from_tokens(y, stack.entries(), stack.maps.height, stack.maps.width)};
}

// ---------------------------------------------------------------------------
// Tiny transformer (pre-LN, GELU feed-forward, zero-initialized per-block scaling)

inline MatX transformer_block(const MatX& x, const ParamStore& p, const std::string& pre, int heads) {
  const Eigen::Index d = x.cols();
  MatX h = layer_norm(x, p.vec(pre + ".ln1.g"), p.vec(pre + ".ln1.b"));
  MatX qkv = (h * p.mat(pre + ".qkv.w").transpose()).rowwise() + p.vec(pre + ".qkv.b").transpose();
  MatX a = multi_head_attention(qkv.leftCols(d), qkv.middleCols(d, d), qkv.rightCols(d), heads);
  a = (a * p.mat(pre + ".proj.w").transpose()).rowwise() + p.vec(pre + ".proj.b").transpose();
  MatX y = x + (a.array().rowwise() * p.vec(pre + ".scale1").transpose().array()).matrix();

  h = layer_norm(y, p.vec(pre + ".ln2.g"), p.vec(pre + ".ln2.b"));
  MatX f = (h * p.mat(pre + ".fc1.w").transpose()).rowwise() + p.vec(pre + ".fc1.b").transpose();
  f = f.unaryExpr([](double v) { return gelu(v); });
  f = (f * p.mat(pre + ".fc2.w").transpose()).rowwise() + p.vec(pre + ".fc2.b").transpose();
  return y + (f.array().rowwise() * p.vec(pre + ".scale2").transpose().array()).matrix();
}

/// Runs all tokens through the transformer and returns the 3 tri-plane entries.
inline LatentTensor tiny_transformer_forward(const LatentStack& features, const ParamStore& p, const NetConfig& cfg) {
  if (features.channels() != cfg.model_width) throw std::invalid_argument("features must have model width channels");
  MatX x = to_tokens(features.maps);
  for (int l = 0; l < cfg.layers; ++l) x = transformer_block(x, p, fmt::format("tf.{}", l), cfg.heads);
  const Eigen::Index hw = static_cast<Eigen::Index>(features.maps.height) * features.maps.width;
  return from_tokens(x.bottomRows(3 * hw), 3, features.maps.height, features.maps.width);
}

// ---------------------------------------------------------------------------
// Tri-plane decoder

struct DecoderOptions {
  bool linear_only = false;   // skip the inter-stage nonlinearity
  bool update_norm = false;   // training-mode EMA update
};

inline LatentTensor upsample2x(const LatentTensor& t) {
  LatentTensor out(t.views, t.channels, 2 * t.height, 2 * t.width);
  for (int e = 0; e < t.views; ++e)
    for (int c = 0; c < t.channels; ++c)
      for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x) out.at(e, c, y, x) = t.at(e, c, y / 2, x / 2);
  return out;
}

/// Per-pixel affine map over channels.
inline LatentTensor channel_affine(const LatentTensor& t, const Eigen::Ref<const MatX>& w, const Eigen::Ref<const VecX>& b) {
  if (w.cols() != t.channels) throw std::invalid_argument("channel map does not match input channels");
  const MatX tokens = to_tokens(t);
  const MatX out = (tokens * w.transpose()).rowwise() + b.transpose();
  return from_tokens(out, t.views, t.height, t.width);
}

/// 3 x width x h x w -> 3 x C x R x R via stride-2 stages, each followed by EMA normalization.
inline LatentTensor decode_triplane(const LatentTensor& tri, const ParamStore& p, std::vector<EmaNorm>& norms,
                                    const NetConfig& cfg, DecoderOptions opt = {}) {
  if (tri.views != 3) throw std::invalid_argument("decoder expects 3 tri-plane latents");
  const int stages = cfg.decoder_stages();
  if (static_cast<int>(norms.size()) != stages) throw std::invalid_argument("one EMA norm per decoder stage");
  LatentTensor x = tri;
  for (int s = 0; s < stages; ++s) {
    x = upsample2x(x);
    x = channel_affine(x, p.mat(fmt::format("dec.{}.w", s)), p.vec(fmt::format("dec.{}.b", s)));
    x.data = ema_norm_forward(x.data, norms[s], opt.update_norm);
    if (!opt.linear_only && s + 1 < stages)
      for (auto& v : x.data) v = gelu(v);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Losses

inline constexpr double kWeight2d = 1.0;
inline constexpr double kWeight3d = 1.0;
inline constexpr double kWeightEikonal = 0.1;
inline constexpr double kWeightSurface = 0.01;

inline double loss_2d(const LatentTensor& pred, const LatentTensor& target) {
  require_same_shape(pred, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = target.data[i] - pred.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

using ImageLoss = std::function<double(const Grid2<Vec3>&, const Grid2<Vec3>&)>;

inline double mse_image_loss(const Grid2<Vec3>& a, const Grid2<Vec3>& b) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument("images must have the same size");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a.data[i] - b.data[i]).squaredNorm();
  return acc / (3.0 * static_cast<double>(a.size()));
}

inline double loss_3d(const Grid2<Vec3>& rendered, const Grid2<Vec3>& gt, const ImageLoss& image_loss = mse_image_loss) {
  if (rendered.width != gt.width || rendered.height != gt.height) throw std::invalid_argument("images must have the same size");
  return image_loss(rendered, gt);
}

inline double total_loss(double l2d, double l3d, double leik, double lsurf) {
  if (!std::isfinite(l2d) || !std::isfinite(l3d) || !std::isfinite(leik) || !std::isfinite(lsurf))
    throw std::invalid_argument("loss terms must be finite");
  return kWeight2d * l2d + kWeight3d * l3d + kWeightEikonal * leik + kWeightSurface * lsurf;
}

// ---------------------------------------------------------------------------
// The assembled network

inline ParamStore init_params(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  ParamStore p;
  auto randn = [&](const std::string& name, std::vector<int> shape, double scale) {
    auto& t = p.add(name, std::move(shape));
    for (auto& v : t.data) v = scale * n01(rng);
  };
  const int c = cfg.stack_channels(), a = cfg.attn_width, d = cfg.model_width, ff = cfg.ff_mult * d;
  const int lat = cfg.latent_channels, h = cfg.latent_res;

  randn("tri.V", {3, lat, h, h}, 1.0);
  randn("cond.bias", {lat}, 0.1);
  randn("attn.wq", {a, c}, 1.0 / std::sqrt(c));
  randn("attn.wk", {a, c}, 1.0 / std::sqrt(c));
  randn("attn.wv", {a, c}, 1.0 / std::sqrt(c));
  randn("attn.wo", {c, a}, 0.1 / std::sqrt(a));

  // Lift: identity on the latent channels, random features for the rest.
  randn("lift.w", {d, c}, 1.0 / std::sqrt(c));
  auto& lift = p.get("lift.w");
  for (int r = 0; r < lat; ++r)
    for (int k = 0; k < c; ++k) lift.data[r * c + k] = r == k ? 1.0 : 0.0;
  p.add("lift.b", {d});

  for (int l = 0; l < cfg.layers; ++l) {
    const std::string pre = fmt::format("tf.{}", l);
    p.add(pre + ".ln1.g", {d}, 1.0);
    p.add(pre + ".ln1.b", {d});
    randn(pre + ".qkv.w", {3 * d, d}, 1.0 / std::sqrt(d));
    p.add(pre + ".qkv.b", {3 * d});
    randn(pre + ".proj.w", {d, d}, 1.0 / std::sqrt(d));
    p.add(pre + ".proj.b", {d});
    p.add(pre + ".scale1", {d});
    p.add(pre + ".ln2.g", {d}, 1.0);
    p.add(pre + ".ln2.b", {d});
    randn(pre + ".fc1.w", {ff, d}, 1.0 / std::sqrt(d));
    p.add(pre + ".fc1.b", {ff});
    randn(pre + ".fc2.w", {d, ff}, 1.0 / std::sqrt(ff));
    p.add(pre + ".fc2.b", {d});
    p.add(pre + ".scale2", {d});
  }

  int in = d;
  for (int s = 0; s < cfg.decoder_stages(); ++s) {
    randn(fmt::format("dec.{}.w", s), {cfg.triplane_channels, in}, 0.3 / std::sqrt(in));
    p.add(fmt::format("dec.{}.b", s), {cfg.triplane_channels});
    in = cfg.triplane_channels;
  }

  // Field head: hidden units 0 and 1 pass channel 0 through to the sdf output, so the
  // sphere prior written into that channel by predict_field sets the initial surface.
  randn("mlp.w1", {cfg.field_hidden, cfg.triplane_channels}, 1.0 / std::sqrt(cfg.triplane_channels));
  randn("mlp.b1", {cfg.field_hidden}, 0.1);
  randn("mlp.w2", {FieldMlp::kOutputs, cfg.field_hidden}, 0.3 / std::sqrt(cfg.field_hidden));
  randn("mlp.b2", {FieldMlp::kOutputs}, 0.1);
  if (cfg.field_hidden >= 2) {
    auto& w1 = p.get("mlp.w1");
    auto& b1 = p.get("mlp.b1");
    auto& w2 = p.get("mlp.w2");
    const int C = cfg.triplane_channels, H = cfg.field_hidden;
    for (int k = 0; k < C; ++k) {
      w1.data[k] = k == 0 ? 1.0 : 0.0;
      w1.data[C + k] = k == 0 ? -1.0 : 0.0;
    }
    b1.data[0] = b1.data[1] = 0.0;
    for (int j = 0; j < H; ++j) w2.data[j] = j == 0 ? 1.0 : (j == 1 ? -1.0 : 0.0);
    p.get("mlp.b2").data[0] = 0.0;
  }

  // Stand-in latent encoder: rendered rgb -> latent channels.
  randn("enc.w", {lat, 3}, 1.0);
  p.add("enc.b", {lat});
  return p;
}

class DualModeNet {
 public:
  DualModeNet(NetConfig cfg, ParamStore params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
    if (!params_.all_finite()) throw std::invalid_argument("network weights must be finite");
    norms_.assign(cfg_.decoder_stages(), EmaNorm{1.0, cfg_.ema_beta});
  }

  static DualModeNet random(const NetConfig& cfg, std::uint64_t seed) { return {cfg, init_params(cfg, seed)}; }

  const NetConfig& config() const { return cfg_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }
  std::vector<EmaNorm>& norms() { return norms_; }

  LatentTensor tri_latents() const {
    const auto& t = params_.get("tri.V");
    LatentTensor v(3, cfg_.latent_channels, cfg_.latent_res, cfg_.latent_res);
    v.data = t.data;
    return v;
  }

  /// Adds the condition bias (scaled by the embedding mean) to the latent channels of every view.
  LatentTensor condition_views(const LatentTensor& z, const Condition& cond) const {
    if (cond.unconditional()) return z;
    double mean = 0.0;
    for (double e : cond.embedding) mean += e;
    mean /= static_cast<double>(cond.embedding.size());
    const auto bias = params_.vec("cond.bias");
    LatentTensor out = z;
    for (int v = 0; v < z.views; ++v)
      for (int c = 0; c < z.channels; ++c)
        for (int y = 0; y < z.height; ++y)
          for (int x = 0; x < z.width; ++x) out.at(v, c, y, x) += mean * bias[c];
    return out;
  }

  /// Stack -> attention -> lift; returns model-width features for every entry.
  LatentStack features(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond) const {
    check_latents(z_t);
    const LatentStack stack = assemble_stack(condition_views(z_t, cond), cameras, tri_latents());
    const LatentStack attended = cross_view_attention(stack, attention_weights(params_, "attn", cfg_.attn_heads));
    return {stack.views, channel_affine(attended.maps, params_.mat("lift.w"), params_.vec("lift.b"))};
  }

  LatentTensor predict_2d(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond) const {
    const LatentStack f = features(z_t, cameras, cond);
    LatentTensor out(z_t.views, z_t.channels, z_t.height, z_t.width);
    for (int v = 0; v < z_t.views; ++v)
      for (int c = 0; c < z_t.channels; ++c)
        for (int y = 0; y < z_t.height; ++y)
          for (int x = 0; x < z_t.width; ++x) out.at(v, c, y, x) = f.maps.at(v, c, y, x);
    return out;
  }

  TriPlaneField predict_field(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond) const {
    const LatentStack f = features(z_t, cameras, cond);
    const LatentTensor tri = tiny_transformer_forward(f, params_, cfg_);
    std::vector<EmaNorm> frozen = norms_;
    const LatentTensor planes = decode_triplane(tri, params_, frozen, cfg_);
    FieldMlp mlp(cfg_.triplane_channels, cfg_.field_hidden);
    mlp.w1 = params_.mat("mlp.w1");
    mlp.b1 = params_.vec("mlp.b1");
    mlp.w2 = params_.mat("mlp.w2");
    mlp.b2 = params_.vec("mlp.b2");
    TriPlaneField field(cfg_.triplane_channels, cfg_.triplane_res, Aabb{}, std::move(mlp));
    std::copy(planes.data.begin(), planes.data.end(), field.planes().begin());
    add_sphere_prior(field);
    return field;
  }

  /// Channel 0 becomes kPriorResidual * decoded + (u^2 + v^2) / 2 - r^2 / 3 per plane, so the
  /// planes sum to |p|^2 - r^2 plus a damped residual.
  static constexpr double kPriorRadius = 0.5;
  static constexpr double kPriorResidual = 0.05;

  static void add_sphere_prior(TriPlaneField& field) {
    const int R = field.resolution();
    const Aabb box = field.bbox();
    for (int pl = 0; pl < 3; ++pl) {
      const auto [a0, a1] = TriPlaneField::kPlaneAxes[pl];
      for (int v = 0; v < R; ++v)
        for (int u = 0; u < R; ++u) {
          const double x = box.lo[a0] + box.extent()[a0] * u / (R - 1);
          const double y = box.lo[a1] + box.extent()[a1] * v / (R - 1);
          double& c = field.at(static_cast<Plane>(pl), 0, u, v);
          c = kPriorResidual * c + 0.5 * (x * x + y * y) - kPriorRadius * kPriorRadius / 3.0;
        }
    }
  }

  /// Stand-in latent encoder applied per pixel to a rendered image.
  void encode_image(const Grid2<Vec3>& img, int view, LatentTensor& into) const {
    const auto w = params_.mat("enc.w");
    const auto b = params_.vec("enc.b");
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const VecX z = w * img(x, y) + b;
        for (int c = 0; c < into.channels; ++c) into.at(view, c, y, x) = z[c];
      }
  }

 private:
  void check_latents(const LatentTensor& z) const {
    if (z.channels != cfg_.latent_channels || z.height != cfg_.latent_res || z.width != cfg_.latent_res)
      throw std::invalid_argument("latent shape does not match the network config");
  }

  NetConfig cfg_;
  ParamStore params_;
  std::vector<EmaNorm> norms_;
};

/// Denoiser backed by the toy network; the 3D mode renders its field at the input cameras
/// (at latent resolution) and encodes the renders with the stand-in encoder. Timestep is ignored.
class ToyNetDenoiser final : public Denoiser {
 public:
  ToyNetDenoiser(const DualModeNet& net, RenderConfig render) : net_(net), render_(std::move(render)) {}

  LatentTensor predict_2d(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond, int,
                          const NoiseSchedule&) const override {
    return net_.predict_2d(z_t, cameras, cond);
  }

  Mode3dOutput predict_3d(const LatentTensor& z_t, std::span<const Camera> cameras, const Condition& cond, int,
                          const NoiseSchedule&) const override {
    Mode3dOutput out{LatentTensor(z_t.views, z_t.channels, z_t.height, z_t.width), net_.predict_field(z_t, cameras, cond)};
    const NeusRenderer<TriPlaneField> renderer(out.field, render_);
    for (int v = 0; v < z_t.views; ++v) {
      const RenderOutput img = renderer.render(cameras[v].resized(z_t.width, z_t.height));
      net_.encode_image(img.rgb, v, out.latents);
    }
    return out;
  }

 private:
  const DualModeNet& net_;
  RenderConfig render_;
};

}  // namespace dual3d
