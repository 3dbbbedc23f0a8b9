#pragma once

#include <gnerf/core/random.hpp>
#include <gnerf/render/renderer.hpp>

#include <string>
#include <vector>

namespace gnerf::data {

enum class Primitive { box, sphere, cylinder };

/// One solid part. `size` is half-extents for a box, (radius, -, -) for a sphere and
/// (radius, -, half-length) for a cylinder whose axis runs along z.
struct Part {
  Primitive shape = Primitive::box;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Zero();
  Vec3 albedo = Vec3::Constant(0.5);
  double density = 40.0;
  std::string label;

  bool contains(const Vec3& x) const {
    const Vec3 d = x - center;
    switch (shape) {
      case Primitive::box: return (d.cwiseAbs() - size).maxCoeff() <= 0.0;
      case Primitive::sphere: return d.squaredNorm() <= size.x() * size.x();
      case Primitive::cylinder: return d.x() * d.x() + d.y() * d.y() <= size.x() * size.x() && std::abs(d.z()) <= size.z();
    }
    return false;
  }

  /// Axis-aligned bounds (min, max).
  std::pair<Vec3, Vec3> bounds() const {
    Vec3 h;
    switch (shape) {
      case Primitive::box: h = size; break;
      case Primitive::sphere: h = Vec3::Constant(size.x()); break;
      case Primitive::cylinder: h = Vec3(size.x(), size.x(), size.z()); break;
    }
    return {center - h, center + h};
  }
};

struct ToyInstanceSpec {
  std::vector<Part> parts;  // evaluated in order; the first containing part wins
  int id = 0;
  std::uint64_t seed = 0;
};

/// Ranges for the car-like family. Every range is [lo, hi]; lo == hi pins the value.
struct CarFamily {
  double body_length[2] = {0.60, 0.85};
  double body_width[2] = {0.30, 0.40};
  double body_height[2] = {0.12, 0.20};
  double cabin_probability = 0.8;
  double cabin_length_frac[2] = {0.40, 0.65};
  double cabin_height[2] = {0.08, 0.15};
  double wheel_radius[2] = {0.07, 0.11};
  double ground = -0.30;
  double density = 40.0;
};

inline constexpr double kSceneHalfExtent = 0.5;  // scenes live in [-0.5, 0.5]^3

/// Box body, optional cabin box on top, four sphere wheels. Geometry and colours use
/// separate streams derived from `seed`.
inline ToyInstanceSpec generate_instance(const CarFamily& fam, std::uint64_t seed, int id = 0) {
  Rng geo(derive_seed(seed, {0x67656f6dull}));
  Rng col(derive_seed(seed, {0x636f6c72ull}));
  auto pick = [&](const double r[2]) { return r[0] == r[1] ? r[0] : geo.uniform(r[0], r[1]); };

  ToyInstanceSpec s;
  s.id = id;
  s.seed = seed;
  const double length = pick(fam.body_length);
  const double width = pick(fam.body_width);
  const double height = pick(fam.body_height);
  const double wheel = pick(fam.wheel_radius);
  const bool cabin = fam.cabin_probability >= 1.0 || (fam.cabin_probability > 0.0 && geo.uniform() < fam.cabin_probability);
  const double cabin_frac = pick(fam.cabin_length_frac);
  const double cabin_h = pick(fam.cabin_height);
  const double cabin_shift = fam.cabin_length_frac[0] == fam.cabin_length_frac[1] ? 0.0 : geo.uniform(-0.08, 0.08);

  const Vec3 body_color(col.uniform(0.15, 0.95), col.uniform(0.15, 0.95), col.uniform(0.15, 0.95));
  const Vec3 glass = 0.4 * body_color + 0.6 * Vec3(0.55, 0.7, 0.85);
  const double tyre = col.uniform(0.05, 0.2);

  const double body_bottom = fam.ground + 0.8 * wheel;
  Part body{Primitive::box, Vec3(0, body_bottom + height / 2, 0), Vec3(length / 2, height / 2, width / 2), body_color,
            fam.density, "body"};
  s.parts.push_back(body);
  if (cabin) {
    const double cl = cabin_frac * length;
    const double shift = std::clamp(cabin_shift, -(length - cl) / 2, (length - cl) / 2);
    s.parts.push_back({Primitive::box, Vec3(shift, body_bottom + height + cabin_h / 2, 0),
                       Vec3(cl / 2, cabin_h / 2, 0.45 * width), glass, fam.density, "cabin"});
  }
  const double wx = length / 2 - 1.3 * wheel;
  const double wz = width / 2;
  for (int sx : {-1, 1})
    for (int sz : {-1, 1})
      s.parts.push_back({Primitive::sphere, Vec3(sx * wx, fam.ground + wheel, sz * wz), Vec3(wheel, 0, 0),
                         Vec3::Constant(tyre), fam.density, "wheel"});
  return s;
}

struct OracleSample {
  Vec3 color = Vec3::Zero();
  double sigma = 0.0;
};

/// Piecewise-constant ground-truth field.
inline OracleSample oracle_eval(const ToyInstanceSpec& spec, const Vec3& x) {
  for (const auto& p : spec.parts)
    if (p.contains(x)) return {p.albedo, p.density};
  return {};
}

inline render::FieldEvaluator oracle_evaluator(const ToyInstanceSpec& spec) {
  return [spec](const Mat<double>& pos, const Mat<double>&) {
    render::FieldEval ev;
    ev.sigma.resize(pos.cols());
    ev.rgb.resize(3, pos.cols());
    for (Eigen::Index p = 0; p < pos.cols(); ++p) {
      const auto s = oracle_eval(spec, pos.col(p));
      ev.sigma(p) = s.sigma;
      ev.rgb.col(p) = s.color;
    }
    return ev;
  };
}

}  // namespace gnerf::data
