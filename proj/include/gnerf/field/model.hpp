#pragma once

#include <gnerf/core/random.hpp>
#include <gnerf/field/config.hpp>
#include <gnerf/nn/mlp.hpp>

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

namespace gnerf::field {

/// Per-instance latent code pair. Codes for the training set live in code tables
/// (one column per instance); this is the single-instance view.
template <class S>
struct InstanceCode {
  Vec<S> shape;
  Vec<S> texture;
  int id = -1;
};

/// Every trainable tensor of a mixture-of-experts field: the shape-code mapper (one
/// affine map per expert; the texture mapping is the identity and has no parameters),
/// the experts, the shared texture head and, for the foresight baseline, the gate.
template <class S>
struct MoEParams {
  ModelConfig config;
  std::vector<Mat<S>> mapper_weight;  // expert_code x shape_code, one per expert
  std::vector<Vec<S>> mapper_bias;    // expert_code, one per expert
  std::vector<nn::Mlp<S>> experts;    // expert_input -> feature_width + 1 (last row is raw density)
  nn::Mlp<S> texture_head;            // head_input -> 3, sigmoid output
  nn::Mlp<S> gate;                    // gate_input -> experts; empty for hindsight routing

  int expert_count() const { return static_cast<int>(experts.size()); }

  static MoEParams zeros(const ModelConfig& c) {
    c.validate();
    MoEParams p;
    p.config = c;
    std::vector<int> ew{c.expert_input_width()};
    std::vector<nn::Activation> ea;
    for (int k = 0; k + 1 < c.expert_layers; ++k) {
      ew.push_back(c.expert_hidden);
      ea.push_back(nn::Activation::relu);
    }
    ew.push_back(c.feature_width + 1);
    ea.push_back(nn::Activation::identity);
    for (int n = 0; n < c.experts; ++n) {
      p.mapper_weight.push_back(Mat<S>::Zero(c.expert_code, c.shape_code));
      p.mapper_bias.push_back(Vec<S>::Zero(c.expert_code));
      p.experts.push_back(nn::Mlp<S>::zeros(ew, ea));
    }
    const std::vector<int> hw{c.head_input_width(), c.head_hidden, 3};
    const std::vector<nn::Activation> ha{nn::Activation::relu, nn::Activation::sigmoid};
    p.texture_head = nn::Mlp<S>::zeros(hw, ha);
    if (c.routing == Routing::foresight) {
      const std::vector<int> gw{c.gate_input_width(), c.gate_hidden, c.gate_hidden, c.experts};
      const std::vector<nn::Activation> ga{nn::Activation::relu, nn::Activation::relu, nn::Activation::identity};
      p.gate = nn::Mlp<S>::zeros(gw, ga);
    }
    return p;
  }

  /// Fan-in uniform weights and zero biases everywhere; deterministic in `seed`.
  static MoEParams init(const ModelConfig& c, std::uint64_t seed) {
    MoEParams p = zeros(c);
    Rng rng(derive_seed(seed, {0x6d6f64656cull}));
    auto fill = [&](Mat<S>& w) {
      const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
    };
    for (auto& w : p.mapper_weight) fill(w);
    for (auto& e : p.experts)
      for (auto& l : e.layers) fill(l.weight);
    for (auto& l : p.texture_head.layers) fill(l.weight);
    for (auto& l : p.gate.layers) fill(l.weight);
    return p;
  }

  MoEParams zeros_like() const {
    MoEParams z = *this;
    z.visit([](const std::string&, auto& t) { t.setZero(); });
    return z;
  }

  template <class T>
  MoEParams<T> cast() const {
    MoEParams<T> out;
    out.config = config;
    for (const auto& w : mapper_weight) out.mapper_weight.push_back(w.template cast<T>());
    for (const auto& b : mapper_bias) out.mapper_bias.push_back(b.template cast<T>());
    for (const auto& e : experts) out.experts.push_back(e.template cast<T>());
    out.texture_head = texture_head.template cast<T>();
    out.gate = gate.template cast<T>();
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    const_cast<MoEParams*>(this)->visit([&](const std::string&, auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  template <class F>
  void visit(F&& f) {
    for (std::size_t n = 0; n < experts.size(); ++n) {
      f("mapper." + std::to_string(n) + ".weight", mapper_weight[n]);
      f("mapper." + std::to_string(n) + ".bias", mapper_bias[n]);
    }
    for (std::size_t n = 0; n < experts.size(); ++n) experts[n].visit("expert." + std::to_string(n), f);
    texture_head.visit("head", f);
    if (!gate.empty()) gate.visit("gate", f);
  }

  void validate() const {
    config.validate();
    const auto n = static_cast<std::size_t>(config.experts);
    require(experts.size() == n && mapper_weight.size() == n && mapper_bias.size() == n,
            "MoEParams: expert count does not match config");
    for (std::size_t k = 0; k < n; ++k) {
      require(mapper_weight[k].rows() == config.expert_code && mapper_weight[k].cols() == config.shape_code,
              "MoEParams: mapper shape mismatch");
      experts[k].validate();
      require(experts[k].in_width() == config.expert_input_width() &&
                  experts[k].out_width() == config.feature_width + 1,
              "MoEParams: expert widths do not match config");
    }
    texture_head.validate();
    require(texture_head.in_width() == config.head_input_width() && texture_head.out_width() == 3,
            "MoEParams: texture head widths do not match config");
    if (config.routing == Routing::foresight) {
      gate.validate();
      require(gate.in_width() == config.gate_input_width() && gate.out_width() == config.experts,
              "MoEParams: gate widths do not match config");
    }
  }
};

inline std::int64_t parameter_count(const ModelConfig& cfg) {
  return static_cast<std::int64_t>(MoEParams<float>::zeros(cfg).parameter_count());
}

/// Foresight counterpart of `cfg` whose expert hidden width is chosen so the total
/// parameter count is as close as possible to the hindsight model's.
inline ModelConfig matched_baseline(ModelConfig cfg) {
  const std::int64_t target = parameter_count(cfg);
  cfg.routing = Routing::foresight;
  ModelConfig best = cfg;
  std::int64_t best_gap = -1;
  for (int h = 1; h <= 2 * cfg.expert_hidden; ++h) {
    ModelConfig c = cfg;
    c.expert_hidden = h;
    const std::int64_t gap = std::abs(parameter_count(c) - target);
    if (best_gap < 0 || gap < best_gap) {
      best = c;
      best_gap = gap;
    }
  }
  return best;
}

}  // namespace gnerf::field
