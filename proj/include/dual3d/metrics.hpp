#pragma once

// Text-image agreement metrics over precomputed embeddings.
//
// An EmbeddingSet holds one row per rendered view and one row per candidate
// text; text_index[i] names the text that view i was generated from.

#include "dual3d/common.hpp"

#include <nlohmann/json.hpp>

namespace dual3d {

struct EmbeddingSet {
  MatX image_embeddings;          // (assets * views) x d
  MatX text_embeddings;           // texts x d
  std::vector<int> text_index;    // per image row

  void validate() const {
    if (image_embeddings.rows() == 0 || text_embeddings.rows() == 0) throw std::invalid_argument("empty embedding set");
    if (image_embeddings.cols() != text_embeddings.cols()) throw std::invalid_argument("embedding widths differ");
    if (static_cast<Eigen::Index>(text_index.size()) != image_embeddings.rows())
      throw std::invalid_argument("text index must have one entry per image row");
    for (int t : text_index)
      if (t < 0 || t >= text_embeddings.rows()) throw std::invalid_argument("text index out of range");
    auto check_rows = [](const MatX& m, const char* what) {
      if (!m.allFinite()) throw std::invalid_argument(fmt::format("{} embeddings not finite", what));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        if (m.row(r).squaredNorm() == 0.0) throw std::invalid_argument(fmt::format("zero {} embedding row {}", what, r));
    };
    check_rows(image_embeddings, "image");
    check_rows(text_embeddings, "text");
  }
};

inline double cosine(const Eigen::Ref<const VecX>& a, const Eigen::Ref<const VecX>& b) {
  return a.dot(b) / (a.norm() * b.norm());
}

/// Flat mean of 250 * cos over every (view, matched text) pair.
inline double clip_similarity(const EmbeddingSet& e) {
  e.validate();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < e.image_embeddings.rows(); ++i)
    sum += cosine(e.image_embeddings.row(i).transpose(), e.text_embeddings.row(e.text_index[i]).transpose());
  return sum / static_cast<double>(e.image_embeddings.rows()) * 100.0 * 2.5;
}

/// Percentage of views whose matched text scores strictly higher than every other text.
inline double r_precision(const EmbeddingSet& e) {
  e.validate();
  if (e.text_embeddings.rows() < 2) throw std::invalid_argument("r_precision needs at least two texts");
  int hits = 0;
  for (Eigen::Index i = 0; i < e.image_embeddings.rows(); ++i) {
    const VecX x = e.image_embeddings.row(i).transpose();
    const int gt = e.text_index[i];
    const double own = cosine(x, e.text_embeddings.row(gt).transpose());
    bool best = true;
    for (Eigen::Index t = 0; t < e.text_embeddings.rows() && best; ++t)
      if (t != gt && cosine(x, e.text_embeddings.row(t).transpose()) >= own) best = false;
    hits += best;
  }
  return 100.0 * hits / static_cast<double>(e.image_embeddings.rows());
}

// ---------------------------------------------------------------------------
// Files: <stem>.json manifest plus <stem>.images.f32 and <stem>.texts.f32.
// Manifest: {"format":"dual3d-embeddings-v1","dim":d,"images":n,"texts":m,"text_index":[...]}

inline void save_embeddings(const std::string& stem, const EmbeddingSet& e) {
  e.validate();
  auto write_mat = [](const std::string& path, const MatX& m) {
    auto os = io::open_out(path);
    io::write_f32(os, std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  };
  write_mat(stem + ".images.f32", e.image_embeddings);
  write_mat(stem + ".texts.f32", e.text_embeddings);
  nlohmann::json j = {{"format", "dual3d-embeddings-v1"},
                      {"dim", e.image_embeddings.cols()},
                      {"images", e.image_embeddings.rows()},
                      {"texts", e.text_embeddings.rows()},
                      {"text_index", e.text_index}};
  io::open_out(stem + ".json") << j.dump(2) << "\n";
}

inline EmbeddingSet load_embeddings(const std::string& stem) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::open_in(stem + ".json"));
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(fmt::format("{}.json: {}", stem, ex.what()));
  }
  if (j.value("format", "") != "dual3d-embeddings-v1") throw ConfigError(fmt::format("{}.json: unknown format", stem));
  const auto d = j.at("dim").get<Eigen::Index>();
  const auto n = j.at("images").get<Eigen::Index>();
  const auto m = j.at("texts").get<Eigen::Index>();
  if (d < 1 || n < 1 || m < 1) throw ConfigError(fmt::format("{}.json: bad sizes", stem));
  auto read_mat = [&](const std::string& path, Eigen::Index rows) {
    auto is = io::open_in(path);
    MatX mat(rows, d);
    const auto v = io::read_f32(is, static_cast<std::size_t>(mat.size()));
    std::copy(v.begin(), v.end(), mat.data());
    return mat;
  };
  EmbeddingSet e;
  e.image_embeddings = read_mat(stem + ".images.f32", n);
  e.text_embeddings = read_mat(stem + ".texts.f32", m);
  e.text_index = j.at("text_index").get<std::vector<int>>();
  try {
    e.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(fmt::format("{}: {}", stem, ex.what()));
  }
  return e;
}

}  // namespace dual3d
