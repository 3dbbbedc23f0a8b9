#pragma once

#include <gnerf/core/image.hpp>
#include <gnerf/core/random.hpp>
#include <gnerf/render/volume.hpp>

#include <functional>
#include <vector>

namespace gnerf::render {

/// Densities and colours for a batch of points (columns), plus the expert that produced
/// each sample when the field is a mixture (empty otherwise).
struct FieldEval {
  Vec<double> sigma;
  Mat<double> rgb;
  std::vector<int> expert;
};

/// Any radiance field: positions (3 x P), directions (3 x P) -> FieldEval.
/// Must be safe to call concurrently.
using FieldEvaluator = std::function<FieldEval(const Mat<double>& positions, const Mat<double>& directions)>;

struct RayRender {
  Eigen::Vector3d color;
  double opacity = 0;
  std::vector<double> weight;
  std::vector<double> depth;
  std::vector<Vec3> position;
  std::vector<int> expert;
};

/// Renders rays chunk by chunk. Stratified jitter for ray r comes from (seed, r) so the
/// chunking never changes the result.
inline std::vector<RayRender> render_rays(const FieldEvaluator& field, const std::vector<Ray>& rays,
                                          const RenderConfig& cfg, std::uint64_t seed = 0, bool keep_samples = false) {
  cfg.validate();
  std::vector<RayRender> out(rays.size());
  const std::size_t chunk = static_cast<std::size_t>(cfg.chunk_rays);
  const int ns = cfg.samples;
  for (std::size_t begin = 0; begin < rays.size(); begin += chunk) {
    const std::size_t end = std::min(rays.size(), begin + chunk);
    const auto P = static_cast<Eigen::Index>((end - begin) * static_cast<std::size_t>(ns));
    Mat<double> pos(3, P), dir(3, P);
    std::vector<SamplePoints> samples;
    for (std::size_t r = begin; r < end; ++r) {
      Rng rng(derive_seed(seed, {0x72656e646572ull, r}));
      samples.push_back(sample_depths(rays[r], ns, cfg.stratified ? &rng : nullptr));
      for (int i = 0; i < ns; ++i) {
        const auto c = static_cast<Eigen::Index>((r - begin) * static_cast<std::size_t>(ns) + static_cast<std::size_t>(i));
        pos.col(c) = rays[r].origin + samples.back().depth[static_cast<std::size_t>(i)] * rays[r].direction;
        dir.col(c) = rays[r].direction;
      }
    }
    const FieldEval ev = field(pos, dir);
    require(ev.sigma.size() == P && ev.rgb.cols() == P, "render: field returned the wrong number of samples");
    for (std::size_t r = begin; r < end; ++r) {
      const auto off = static_cast<Eigen::Index>((r - begin) * static_cast<std::size_t>(ns));
      const auto& sp = samples[r - begin];
      std::span<const double> sig(ev.sigma.data() + off, static_cast<std::size_t>(ns));
      const auto comp = composite_ray<double>(sig, ev.rgb.middleCols(off, ns), sp.spacing, cfg.white_background);
      RayRender& rr = out[r];
      rr.color = comp.color;
      rr.opacity = comp.opacity;
      if (keep_samples) {
        rr.weight = comp.weight;
        rr.depth = sp.depth;
        for (int i = 0; i < ns; ++i) rr.position.push_back(pos.col(off + i));
        if (!ev.expert.empty())
          rr.expert.assign(ev.expert.begin() + off, ev.expert.begin() + off + ns);
      }
    }
  }
  return out;
}

inline std::vector<Ray> image_rays(const Camera& cam, const RenderConfig& cfg) {
  cam.validate();
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) rays.push_back(generate_ray(cam, u, v, cfg.near, cfg.far));
  return rays;
}

inline Image render_image(const FieldEvaluator& field, const Camera& cam, const RenderConfig& cfg,
                          std::uint64_t seed = 0) {
  const auto rays = image_rays(cam, cfg);
  const auto rendered = render_rays(field, rays, cfg, seed);
  Image img(cam.width, cam.height);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u)
      for (int c = 0; c < 3; ++c)
        img.at(u, v, c) = static_cast<float>(rendered[static_cast<std::size_t>(v) * cam.width + u].color(c));
  return img;
}

}  // namespace gnerf::render
