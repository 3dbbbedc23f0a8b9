#pragma once

#include <gnerf/gnerf.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace gnerf::testing {

/// Small architecture for fast tests.
inline field::ModelConfig tiny_config(int experts, field::Routing routing = field::Routing::hindsight) {
  field::ModelConfig c;
  c.experts = experts;
  c.expert_hidden = 8;
  c.expert_layers = 3;
  c.feature_width = 6;
  c.head_hidden = 8;
  c.shape_code = 4;
  c.texture_code = 3;
  c.expert_code = 3;
  c.pos_frequencies = 2;
  c.dir_frequencies = 1;
  c.gate_hidden = 4;
  c.routing = routing;
  return c;
}

inline double inverse_softplus(double y) { return std::log(std::expm1(y)); }

/// Experts whose density is the constant sigmas[n] everywhere. With foresight routing
/// the gate sends x_1 < 0 to expert 0 and x_1 > 0 to expert 1 (ties to expert 0).
template <class S>
field::MoEParams<S> constant_experts(const std::vector<double>& sigmas, field::Routing routing) {
  auto cfg = tiny_config(static_cast<int>(sigmas.size()), routing);
  auto m = field::MoEParams<S>::zeros(cfg);
  for (std::size_t n = 0; n < sigmas.size(); ++n) {
    auto& out = m.experts[n].layers.back();
    out.bias(cfg.feature_width) = static_cast<S>(inverse_softplus(sigmas[n] - cfg.sigma_floor));
    out.bias.head(cfg.feature_width).setConstant(static_cast<S>(0.1 * static_cast<double>(n + 1)));
  }
  if (routing == field::Routing::foresight) {
    auto& g = m.gate.layers;
    g[0].weight(0, 0) = S(1);
    g[0].weight(1, 0) = S(-1);
    g[1].weight(0, 0) = S(1);
    g[1].weight(1, 1) = S(1);
    g[2].weight(0, 1) = S(1000);
    g[2].weight(1, 0) = S(1000);
  }
  return m;
}

template <class S>
field::InstanceCode<S> zero_code(const field::ModelConfig& c) {
  return {Vec<S>::Zero(c.shape_code), Vec<S>::Zero(c.texture_code), 0};
}

template <class S>
field::InstanceCode<S> random_code(const field::ModelConfig& c, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  field::InstanceCode<S> code{Vec<S>(c.shape_code), Vec<S>(c.texture_code), 0};
  for (Eigen::Index i = 0; i < code.shape.size(); ++i) code.shape(i) = static_cast<S>(rng.uniform(-scale, scale));
  for (Eigen::Index i = 0; i < code.texture.size(); ++i) code.texture(i) = static_cast<S>(rng.uniform(-scale, scale));
  return code;
}

/// Random model with random (not zero) biases so every path carries signal.
template <class S>
field::MoEParams<S> random_model(const field::ModelConfig& c, std::uint64_t seed) {
  auto m = field::MoEParams<S>::init(c, seed);
  Rng rng(derive_seed(seed, {0x62696173ull}));
  m.visit([&](const std::string& name, auto& t) {
    if (name.find("bias") != std::string::npos)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(rng.uniform(-0.3, 0.3));
  });
  return m;
}

inline Mat<double> random_unit_columns(Eigen::Index n, std::uint64_t seed) {
  Rng rng(seed);
  Mat<double> d(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.col(i) = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
  }
  return d;
}

/// Two experts, two instances, four rays with a handful of samples each and frozen
/// selection noise: small enough for exhaustive finite differences in double precision.
struct MicroProblem {
  field::MoEParams<double> model;
  Mat<double> shape;
  Mat<double> texture;
  train::RayBatch<double> rays;
  Mat<double> noise;
  double tau = 1.0;

  field::Selection<double> selection() const { return {field::SelectionMode::stochastic, tau, &noise}; }

  /// Mean squared colour error; accumulates gradients when `grads` is set.
  train::BatchStats run(train::BatchGrads<double>* grads = nullptr) const {
    const double scale = 1.0 / static_cast<double>(rays.size());
    return train::batch_loss_and_grad<double>(model, shape, texture, rays, selection(), true, scale, 0.0, grads);
  }

  double loss() const { return run().squared_error / static_cast<double>(rays.size()); }
};

inline MicroProblem micro_problem(std::uint64_t seed, int samples = 6) {
  MicroProblem p;
  const auto cfg = tiny_config(2);
  p.model = random_model<double>(cfg, seed);
  Rng rng(derive_seed(seed, {0x6d6963726full}));
  p.shape.resize(cfg.shape_code, 2);
  p.texture.resize(cfg.texture_code, 2);
  for (Eigen::Index i = 0; i < p.shape.size(); ++i) p.shape.data()[i] = rng.uniform(-0.5, 0.5);
  for (Eigen::Index i = 0; i < p.texture.size(); ++i) p.texture.data()[i] = rng.uniform(-0.5, 0.5);
  p.rays.target.resize(3, 4);
  for (int r = 0; r < 4; ++r) {
    render::Ray ray;
    ray.origin = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.5);
    ray.direction = Vec3(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), -1.0).normalized();
    ray.near = 1.0;
    ray.far = 2.0;
    p.rays.rays.push_back(ray);
    p.rays.samples.push_back(render::sample_depths(ray, samples, &rng));
    p.rays.instance.push_back(r % 2);
    for (int c = 0; c < 3; ++c) p.rays.target(c, r) = rng.uniform();
  }
  p.noise.resize(2, 4 * samples);
  for (Eigen::Index i = 0; i < p.noise.size(); ++i) p.noise.data()[i] = field::gumbel_from_uniform(rng.uniform());
  return p;
}

struct GradCheck {
  double max_rel = 0;
  std::string worst;
  int checked = 0;
  int skipped = 0;  // entries whose nudge changed an expert selection
};

/// Central differences over every model parameter and every code entry of `p`.
inline GradCheck check_micro_gradients(MicroProblem p, double h = 1e-6, double floor = 1e-6) {
  auto g = train::BatchGrads<double>::zeros(p.model, p.shape.cols());
  const auto base = p.run(&g);
  GradCheck out;
  auto probe = [&](double& x, double analytic, const std::string& name) {
    const double x0 = x;
    x = x0 + h;
    const auto plus = p.run();
    x = x0 - h;
    const auto minus = p.run();
    x = x0;
    if (plus.expert_counts != base.expert_counts || minus.expert_counts != base.expert_counts) {
      ++out.skipped;
      return;
    }
    const double R = static_cast<double>(p.rays.size());
    const double fd = (plus.squared_error - minus.squared_error) / R / (2 * h);
    const double rel = std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), floor});
    ++out.checked;
    if (rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = name;
    }
  };
  p.model.visit([&](const std::string& name, auto& t) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      double* gt = nullptr;
      g.model.visit([&](const std::string& gname, auto& gtensor) {
        if (gname == name) gt = gtensor.data();
      });
      probe(t.data()[i], gt[i], name + "[" + std::to_string(i) + "]");
    }
  });
  for (Eigen::Index i = 0; i < p.shape.size(); ++i) probe(p.shape.data()[i], g.shape.data()[i], "shape_code[" + std::to_string(i) + "]");
  for (Eigen::Index i = 0; i < p.texture.size(); ++i)
    probe(p.texture.data()[i], g.texture.data()[i], "texture_code[" + std::to_string(i) + "]");
  return out;
}

}  // namespace gnerf::testing
