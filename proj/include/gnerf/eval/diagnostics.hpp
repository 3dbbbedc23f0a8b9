#pragma once

#include <gnerf/data/toy.hpp>
#include <gnerf/field/evaluator.hpp>
#include <gnerf/render/renderer.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace gnerf::eval {

struct UtilizationHistogram {
  std::vector<long> counts;
  std::vector<double> frequency;
  double entropy = 0;  // nats

  static UtilizationHistogram from_counts(std::vector<long> counts) {
    UtilizationHistogram h;
    h.counts = std::move(counts);
    double total = 0;
    for (long c : h.counts) total += static_cast<double>(c);
    require(total > 0, "utilization: empty probe set");
    for (long c : h.counts) {
      const double p = static_cast<double>(c) / total;
      h.frequency.push_back(p);
      if (p > 0) h.entropy -= p * std::log(p);
    }
    return h;
  }
};

/// Tallies the expert chosen for every point of `points` (3 x P). Stochastic mode draws
/// Gumbel noise from `seed`; foresight routing ignores mode and tau.
template <class S>
UtilizationHistogram expert_utilization(const field::MoEParams<S>& model, const field::InstanceCode<S>& code,
                                        const Mat<S>& points, double tau, field::SelectionMode mode,
                                        std::uint64_t seed = 0, Eigen::Index chunk = 4096) {
  require(points.rows() == 3 && points.cols() > 0, "expert_utilization: empty point set");
  const int N = model.expert_count();
  std::vector<long> counts(static_cast<std::size_t>(N), 0);
  Rng rng(derive_seed(seed, {0x7574696cull}));
  for (Eigen::Index lo = 0; lo < points.cols(); lo += chunk) {
    const Eigen::Index n = std::min(chunk, points.cols() - lo);
    field::FieldBatch<S> b;
    b.positions = points.middleCols(lo, n);
    b.directions = Mat<S>::Zero(3, n);
    b.directions.row(2).setConstant(S(-1));
    b.code_index.assign(static_cast<std::size_t>(n), 0);
    b.shape_codes = code.shape;
    b.texture_codes = code.texture;
    Mat<S> noise;
    field::Selection<S> sel{mode, tau, nullptr};
    if (mode == field::SelectionMode::stochastic) {
      noise.resize(N, n);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = static_cast<S>(field::gumbel_from_uniform(rng.uniform()));
      sel.noise = &noise;
    }
    const auto r = field::field_forward(model, b, sel);
    for (int e : r.expert) ++counts[static_cast<std::size_t>(e)];
  }
  return UtilizationHistogram::from_counts(std::move(counts));
}

/// Uniform points in the scene cube.
inline Mat<double> random_points(Eigen::Index count, std::uint64_t seed, double half_extent = data::kSceneHalfExtent) {
  Rng rng(derive_seed(seed, {0x707473ull}));
  Mat<double> p(3, count);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = rng.uniform(-half_extent, half_extent);
  return p;
}

struct Segment {
  Vec3 start = Vec3::Zero();
  Vec3 end = Vec3::Zero();
  double length() const { return (end - start).norm(); }
};

struct ContinuityProbeReport {
  Segment segment;
  std::vector<double> steps;
  std::vector<double> max_jump;                      // one per step size
  std::vector<std::vector<double>> expert_max_jump;  // [step][expert]: both neighbours on that expert
  std::string verdict;

  bool continuous() const { return verdict == "continuous-consistent"; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["segment"] = {{"start", {segment.start.x(), segment.start.y(), segment.start.z()}},
                    {"end", {segment.end.x(), segment.end.y(), segment.end.z()}}};
    j["steps"] = steps;
    j["max_jump"] = max_jump;
    j["expert_max_jump"] = expert_max_jump;
    j["verdict"] = verdict;
    return j;
  }
};

inline constexpr double kJumpShrink = 1.5;
inline constexpr double kJumpFloor = 1e-6;

/// Walks the segment at each step size and records the largest density change between
/// neighbouring samples. Jumps that shrink by kJumpShrink per halving (or vanish) are
/// what a continuous field produces; a jump that persists is a discontinuity.
inline ContinuityProbeReport probe_continuity(const render::FieldEvaluator& field, const Segment& seg,
                                              const std::vector<double>& steps) {
  require(steps.size() >= 2, "probe_continuity: need at least two step sizes");
  require(seg.length() > 0, "probe_continuity: degenerate segment");
  for (std::size_t i = 0; i < steps.size(); ++i) {
    require(steps[i] > 0 && std::isfinite(steps[i]), "probe_continuity: step sizes must be positive");
    if (i > 0) require(steps[i] < steps[i - 1], "probe_continuity: step sizes must decrease");
  }
  for (const Vec3& p : {seg.start, seg.end})
    require(p.cwiseAbs().maxCoeff() <= data::kSceneHalfExtent + 1e-12, "probe_continuity: segment leaves the scene bounds");

  ContinuityProbeReport rep;
  rep.segment = seg;
  rep.steps = steps;
  const double L = seg.length();
  const Vec3 dir = (seg.end - seg.start) / L;
  for (double h : steps) {
    const auto n = static_cast<Eigen::Index>(std::floor(L / h + 1e-9)) + 1;
    Mat<double> pos(3, n), d(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      pos.col(i) = seg.start + std::min(L, static_cast<double>(i) * h) * dir;
      d.col(i) = dir;
    }
    const auto ev = field(pos, d);
    double jump = 0;
    std::vector<double> per_expert;
    for (Eigen::Index i = 1; i < n; ++i) {
      const double j = std::abs(ev.sigma(i) - ev.sigma(i - 1));
      jump = std::max(jump, j);
      if (!ev.expert.empty() && ev.expert[static_cast<std::size_t>(i)] == ev.expert[static_cast<std::size_t>(i - 1)]) {
        const auto e = static_cast<std::size_t>(ev.expert[static_cast<std::size_t>(i)]);
        if (per_expert.size() <= e) per_expert.resize(e + 1, 0.0);
        per_expert[e] = std::max(per_expert[e], j);
      }
    }
    rep.max_jump.push_back(jump);
    rep.expert_max_jump.push_back(per_expert);
  }
  bool ok = true;
  for (std::size_t i = 1; i < rep.max_jump.size(); ++i)
    if (rep.max_jump[i] > kJumpFloor && rep.max_jump[i] * kJumpShrink > rep.max_jump[i - 1]) ok = false;
  rep.verdict = ok ? "continuous-consistent" : "jump-detected";
  return rep;
}

struct Decomposition {
  Image full;
  std::vector<Image> expert_images;
  std::vector<double> opacity;                 // per ray, full render
  std::vector<std::vector<double>> expert_opacity;  // [expert][ray]: full-render weights summed per expert
  std::vector<long> foreground_counts;         // per expert
  long foreground_total = 0;

  double foreground_fraction(int n) const {
    return foreground_total > 0 ? static_cast<double>(foreground_counts[static_cast<std::size_t>(n)]) / foreground_total : 0.0;
  }
};

/// Weight above which an in-bounds sample counts as foreground.
inline constexpr double kForegroundWeight = 0.01;

/// Renders one image per expert, each composited from only the samples that expert
/// owns (the others get zero density), alongside the full render.
template <class S>
Decomposition render_decomposition(const field::MoEParams<S>& model, const field::InstanceCode<S>& code,
                                   const render::Camera& cam, const render::RenderConfig& rc) {
  rc.validate();
  const int N = model.expert_count();
  const auto field = field::make_evaluator(model, code);
  const auto rays = render::image_rays(cam, rc);
  Decomposition out;
  out.full = Image(cam.width, cam.height);
  out.expert_images.assign(static_cast<std::size_t>(N), Image(cam.width, cam.height));
  out.opacity.assign(rays.size(), 0.0);
  out.expert_opacity.assign(static_cast<std::size_t>(N), std::vector<double>(rays.size(), 0.0));
  out.foreground_counts.assign(static_cast<std::size_t>(N), 0);
  const int ns = rc.samples;
  const auto chunk = static_cast<std::size_t>(rc.chunk_rays);
  for (std::size_t begin = 0; begin < rays.size(); begin += chunk) {
    const std::size_t end = std::min(rays.size(), begin + chunk);
    const auto P = static_cast<Eigen::Index>((end - begin) * static_cast<std::size_t>(ns));
    Mat<double> pos(3, P), dir(3, P);
    std::vector<render::SamplePoints> samples;
    for (std::size_t r = begin; r < end; ++r) {
      samples.push_back(render::sample_depths(rays[r], ns));
      for (int i = 0; i < ns; ++i) {
        const auto c = static_cast<Eigen::Index>((r - begin) * static_cast<std::size_t>(ns) + static_cast<std::size_t>(i));
        pos.col(c) = rays[r].origin + samples.back().depth[static_cast<std::size_t>(i)] * rays[r].direction;
        dir.col(c) = rays[r].direction;
      }
    }
    const auto ev = field(pos, dir);
    for (std::size_t r = begin; r < end; ++r) {
      const auto off = static_cast<Eigen::Index>((r - begin) * static_cast<std::size_t>(ns));
      const auto& sp = samples[r - begin];
      const auto rgb = ev.rgb.middleCols(off, ns);
      std::span<const double> sig(ev.sigma.data() + off, static_cast<std::size_t>(ns));
      const auto full = render::composite_ray<double>(sig, rgb, sp.spacing, rc.white_background);
      const int u = static_cast<int>(r % static_cast<std::size_t>(cam.width));
      const int v = static_cast<int>(r / static_cast<std::size_t>(cam.width));
      for (int c = 0; c < 3; ++c) out.full.at(u, v, c) = static_cast<float>(full.color(c));
      out.opacity[r] = full.opacity;
      for (int i = 0; i < ns; ++i) {
        const auto e = static_cast<std::size_t>(ev.expert[static_cast<std::size_t>(off + i)]);
        const double w = full.weight[static_cast<std::size_t>(i)];
        out.expert_opacity[e][r] += w;
        if (w >= kForegroundWeight && pos.col(off + i).cwiseAbs().maxCoeff() <= data::kSceneHalfExtent) {
          ++out.foreground_counts[e];
          ++out.foreground_total;
        }
      }
      std::vector<double> masked(static_cast<std::size_t>(ns));
      for (int n = 0; n < N; ++n) {
        for (int i = 0; i < ns; ++i)
          masked[static_cast<std::size_t>(i)] = ev.expert[static_cast<std::size_t>(off + i)] == n ? sig[static_cast<std::size_t>(i)] : 0.0;
        const auto part = render::composite_ray<double>(masked, rgb, sp.spacing, rc.white_background);
        for (int c = 0; c < 3; ++c) out.expert_images[static_cast<std::size_t>(n)].at(u, v, c) = static_cast<float>(part.color(c));
      }
    }
  }
  return out;
}

}  // namespace gnerf::eval
