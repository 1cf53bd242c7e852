#pragma once

// Closed-form signed distance fields used as test oracles and demo geometry.

#include "dual3d/field.hpp"

#include <memory>
#include <variant>

namespace dual3d {

struct ColorRule {
  enum class Kind { Constant, Position };
  Kind kind = Kind::Constant;
  Vec3 rgb{0.8, 0.5, 0.3};

  /// Constant rgb, or the point's normalized position inside the bbox.
  Vec3 operator()(const Vec3& p, const Aabb& box) const {
    if (kind == Kind::Constant) return rgb;
    return (p - box.lo).cwiseQuotient(box.extent()).cwiseMax(0.0).cwiseMin(1.0);
  }
};

class AnalyticSdf {
 public:
  struct Sphere {
    Vec3 center = Vec3::Zero();
    double radius = 0.5;
  };
  struct Box {
    Vec3 center = Vec3::Zero();
    Vec3 half_extents = Vec3::Constant(0.4);
  };
  struct Union {
    std::shared_ptr<const AnalyticSdf> a, b;
  };
  using Shape = std::variant<Sphere, Box, Union>;

  static AnalyticSdf sphere(Vec3 center, double radius, ColorRule color = {}, Aabb box = {}) {
    if (!(radius > 0.0)) throw std::invalid_argument("sphere radius must be positive");
    return AnalyticSdf(Sphere{center, radius}, color, box);
  }
  static AnalyticSdf box(Vec3 center, Vec3 half_extents, ColorRule color = {}, Aabb bbox = {}) {
    if (!(half_extents.minCoeff() > 0.0)) throw std::invalid_argument("box half-extents must be positive");
    return AnalyticSdf(Box{center, half_extents}, color, bbox);
  }
  static AnalyticSdf make_union(const AnalyticSdf& a, const AnalyticSdf& b, ColorRule color = {}, Aabb bbox = {}) {
    return AnalyticSdf(Union{std::make_shared<AnalyticSdf>(a), std::make_shared<AnalyticSdf>(b)}, color, bbox);
  }

  Aabb bbox() const { return bbox_; }
  const Shape& shape() const { return shape_; }
  const ColorRule& color_rule() const { return color_; }

  double sdf(const Vec3& p) const {
    if (!p.allFinite()) throw std::invalid_argument("invalid point");
    return std::visit([&](const auto& s) { return distance(s, p); }, shape_);
  }

  FieldSample eval(const Vec3& p) const {
    FieldSample s;
    s.sdf = sdf(p);
    s.color = color_(p, bbox_);
    return s;
  }

  Vec3 gradient(const Vec3& p) const {
    if (!p.allFinite()) throw std::invalid_argument("invalid point");
    return std::visit([&](const auto& s) { return grad(s, p); }, shape_);
  }

 private:
  AnalyticSdf(Shape shape, ColorRule color, Aabb box) : shape_(std::move(shape)), color_(color), bbox_(box) {
    if (!bbox_.valid()) throw std::invalid_argument("bbox must have positive finite extent on every axis");
  }

  static double distance(const Sphere& s, const Vec3& p) { return (p - s.center).norm() - s.radius; }
  static double distance(const Box& b, const Vec3& p) {
    const Vec3 q = (p - b.center).cwiseAbs() - b.half_extents;
    return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
  }
  static double distance(const Union& u, const Vec3& p) { return std::min(u.a->sdf(p), u.b->sdf(p)); }

  // At the sphere center the direction is undefined; +X is returned.
  static Vec3 grad(const Sphere& s, const Vec3& p) {
    const Vec3 d = p - s.center;
    const double n = d.norm();
    return n > 0.0 ? Vec3(d / n) : Vec3::UnitX();
  }
  static Vec3 grad(const Box& b, const Vec3& p) {
    const Vec3 rel = p - b.center;
    const Vec3 sign = rel.unaryExpr([](double v) { return v < 0.0 ? -1.0 : 1.0; });
    const Vec3 q = rel.cwiseAbs() - b.half_extents;
    if (q.maxCoeff() > 0.0) {
      const Vec3 outside = q.cwiseMax(0.0);
      return sign.cwiseProduct(outside / outside.norm());
    }
    Eigen::Index axis;
    q.maxCoeff(&axis);
    Vec3 g = Vec3::Zero();
    g[axis] = sign[axis];
    return g;
  }
  static Vec3 grad(const Union& u, const Vec3& p) {
    return u.a->sdf(p) <= u.b->sdf(p) ? u.a->gradient(p) : u.b->gradient(p);
  }

  Shape shape_;
  ColorRule color_;
  Aabb bbox_;
};

}  // namespace dual3d
