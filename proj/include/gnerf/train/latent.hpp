#pragma once

#include <gnerf/field/evaluator.hpp>
#include <gnerf/train/trainer.hpp>

namespace gnerf::train {

/// Observed views of one instance: images with their cameras.
struct Observation {
  std::vector<Image> images;
  std::vector<render::Camera> cameras;

  std::size_t size() const { return images.size(); }

  static Observation from_views(const data::InstanceViews& iv, const data::Intrinsics& k,
                                const std::vector<std::size_t>& views) {
    Observation o;
    for (std::size_t v : views) {
      require(v < iv.view_count(), "observation: view index out of range for instance " + iv.id);
      o.images.push_back(iv.images[v]);
      o.cameras.push_back(k.camera(iv.poses[v]));
    }
    return o;
  }
};

struct LatentConfig {
  int iterations = 200;
  double lr = 2e-2;
  double lr_decay = 0.1;
  int batch_rays = 1024;
  std::uint64_t seed = 0;
};

struct LatentResult {
  field::InstanceCode<float> code;
  std::vector<double> loss;  // batch loss per iteration
};

/// Test-time optimisation: fits a new (shape, texture) code pair to the observations with
/// the network frozen. Selection is stochastic at the final temperature.
inline LatentResult optimize_latents(const Checkpoint& ck, const Observation& obs, const LatentConfig& lc,
                                     const TrainConfig& tc) {
  require(obs.size() >= 1, "optimize_latents: no observed views");
  require(obs.images.size() == obs.cameras.size(), "optimize_latents: image and camera counts differ");
  require(lc.iterations >= 0 && lc.batch_rays >= 1, "optimize_latents: bad iteration count or batch size");
  const auto init = ck.mean_code();
  Mat<float> shape = init.shape, texture = init.texture;
  auto shape_opt = nn::CodeTableOptimizer<float>::for_table(shape, tc.adam);
  auto texture_opt = nn::CodeTableOptimizer<float>::for_table(texture, tc.adam);
  const int N = ck.model.expert_count();
  const double tau = tc.temperature.tau_min;
  LatentResult out;
  for (int it = 0; it < lc.iterations; ++it) {
    Rng rng(derive_seed(lc.seed, {0x6c6174656e74ull, static_cast<std::uint64_t>(it)}));
    RayBatch<float> rb;
    rb.target.resize(3, lc.batch_rays);
    for (int b = 0; b < lc.batch_rays; ++b) {
      const auto v = static_cast<std::size_t>(rng.below(obs.size()));
      const auto& cam = obs.cameras[v];
      const int u = static_cast<int>(rng.below(static_cast<std::uint64_t>(cam.width)));
      const int w = static_cast<int>(rng.below(static_cast<std::uint64_t>(cam.height)));
      rb.rays.push_back(render::generate_ray(cam, u, w, tc.near, tc.far));
      rb.samples.push_back(render::sample_depths(rb.rays.back(), tc.samples, &rng));
      rb.instance.push_back(0);
      for (int c = 0; c < 3; ++c) rb.target(c, b) = obs.images[v].at(u, w, c);
    }
    Mat<float> noise(N, static_cast<Eigen::Index>(lc.batch_rays) * tc.samples);
    for (Eigen::Index i = 0; i < noise.size(); ++i)
      noise.data()[i] = static_cast<float>(field::gumbel_from_uniform(rng.uniform()));
    BatchGrads<float> g{ck.model.zeros_like(), Mat<float>::Zero(shape.rows(), 1), Mat<float>::Zero(texture.rows(), 1)};
    const auto st = batch_loss_and_grad<float>(ck.model, shape, texture, rb,
                                               field::Selection<float>{field::SelectionMode::stochastic, tau, &noise},
                                               tc.white_background, 1.0 / lc.batch_rays, 0.0, &g, false);
    const double loss = st.squared_error / lc.batch_rays;
    if (!std::isfinite(loss)) throw std::runtime_error("optimize_latents: non-finite loss at iteration " + std::to_string(it));
    out.loss.push_back(loss);
    const double lr = nn::lr_at(it, {lc.lr, lc.lr_decay, lc.iterations});
    shape_opt.step(shape, g.shape, {0}, lr);
    texture_opt.step(texture, g.texture, {0}, lr);
  }
  out.code = {shape.col(0), texture.col(0), -1};
  return out;
}

/// Noise-free mean squared colour error of the code against every observed pixel.
inline double observation_loss(const field::MoEParams<float>& model, const field::InstanceCode<float>& code,
                               const Observation& obs, const render::RenderConfig& rc) {
  require(obs.size() >= 1, "observation_loss: no views");
  const auto field = field::make_evaluator(model, code);
  double sum = 0;
  std::size_t rays = 0;
  for (std::size_t v = 0; v < obs.size(); ++v) {
    const Image img = render::render_image(field, obs.cameras[v], rc);
    for (std::size_t i = 0; i < img.rgb.size(); ++i) {
      const double d = static_cast<double>(img.rgb[i]) - obs.images[v].rgb[i];
      sum += d * d;
    }
    rays += static_cast<std::size_t>(img.width) * img.height;
  }
  return sum / static_cast<double>(rays);
}

/// A fitted code on disk: the checkpoint container with just the two code vectors.
inline void save_code(const std::string& path, const field::InstanceCode<float>& code) {
  nn::TensorArchive a;
  a.meta["format"] = "gnerf-code";
  a.put("code.shape", code.shape);
  a.put("code.texture", code.texture);
  a.save(path);
}

inline field::InstanceCode<float> load_code(const std::string& path) {
  const auto a = nn::TensorArchive::load(path);
  if (a.meta.count("format") == 0 || a.meta.at("format") != "gnerf-code") throw IoError("not a gnerf code file: " + path);
  return {a.get_matrix<float>("code.shape").col(0), a.get_matrix<float>("code.texture").col(0), -1};
}

}  // namespace gnerf::train
