#pragma once

// Single-point entry points to the field. The batched path in field.hpp is what
// training and rendering use; these wrap it (or the same primitives) for one query.

#include <gnerf/field/field.hpp>

#include <utility>

namespace gnerf::field {

template <class S>
struct FieldSample {
  Eigen::Matrix<S, 3, 1> color = Eigen::Matrix<S, 3, 1>::Zero();
  S sigma = S(0);
};

template <class S>
std::vector<Vec<S>> map_shape_code(const Vec<S>& shape_code, const MoEParams<S>& model) {
  const Mat<S> table = shape_code;
  std::vector<Vec<S>> out;
  for (auto& m : map_shape_codes(model, table)) out.push_back(m.col(0));
  return out;
}

/// The texture mapping is the identity.
template <class S>
const Vec<S>& map_texture_code(const Vec<S>& texture_code) {
  return texture_code;
}

template <class S>
Mat<S> point_column(const Eigen::Matrix<S, 3, 1>& x) {
  Mat<S> m(3, 1);
  m.col(0) = x;
  return m;
}

/// One expert's shape network: (x, z_n) -> (h_n, sigma_n), sigma_n = softplus(raw) + floor.
template <class S>
std::pair<Vec<S>, S> expert_forward(const Eigen::Matrix<S, 3, 1>& x, const Vec<S>& expert_code,
                                    const nn::Mlp<S>& expert, const ModelConfig& cfg) {
  require(x.allFinite(), "expert_forward: non-finite position");
  require(expert_code.size() == cfg.expert_code, "expert_forward: code length mismatch");
  Mat<S> in(cfg.expert_input_width(), 1);
  in.col(0).head(cfg.encoded_position_width()) = nn::encode_columns(point_column(x), cfg.pos_frequencies).col(0);
  in.col(0).tail(cfg.expert_code) = expert_code;
  const Mat<S> out = nn::mlp_forward(expert, in);
  const int F = cfg.feature_width;
  return {out.col(0).head(F), detail::density_from_raw(out(F, 0), cfg.sigma_floor)};
}

/// Shared radiance head: (h, d, z_t) -> RGB in (0, 1).
template <class S>
Eigen::Matrix<S, 3, 1> texture_head(const Vec<S>& feature, const Eigen::Matrix<S, 3, 1>& dir, const Vec<S>& texture_code,
                                    const nn::Mlp<S>& head, const ModelConfig& cfg) {
  require(feature.size() == cfg.feature_width, "texture_head: feature width mismatch");
  require(texture_code.size() == cfg.texture_code, "texture_head: texture code length mismatch");
  Mat<S> in(cfg.head_input_width(), 1);
  in.col(0).head(cfg.feature_width) = feature;
  in.col(0).segment(cfg.feature_width, cfg.encoded_direction_width()) =
      nn::encode_columns(point_column(dir), cfg.dir_frequencies).col(0);
  in.col(0).tail(cfg.texture_code) = texture_code;
  return nn::mlp_forward(head, in).col(0);
}

template <class S>
FieldBatch<S> single_point_batch(const Eigen::Matrix<S, 3, 1>& x, const Eigen::Matrix<S, 3, 1>& d,
                                 const InstanceCode<S>& code) {
  FieldBatch<S> b;
  b.positions = point_column(x);
  b.directions = point_column(d);
  b.code_index = {0};
  b.shape_codes = code.shape;
  b.texture_codes = code.texture;
  return b;
}

/// Full hindsight pipeline for one point: all experts, logits, selection, shared head.
template <class S>
std::pair<FieldSample<S>, SelectorOutput<S>> moe_field_forward(const Eigen::Matrix<S, 3, 1>& x,
                                                               const Eigen::Matrix<S, 3, 1>& d,
                                                               const InstanceCode<S>& code, const MoEParams<S>& model,
                                                               double tau, SelectionMode mode, Rng& rng) {
  require(model.config.routing == Routing::hindsight, "moe_field_forward: model uses foresight routing");
  const int N = model.expert_count();
  const auto batch = single_point_batch(x, d, code);
  Mat<S> noise = Mat<S>::Zero(N, 1);
  if (mode == SelectionMode::stochastic) {
    const auto g = sample_gumbel<S>(rng, N);
    for (int n = 0; n < N; ++n) noise(n, 0) = g[static_cast<std::size_t>(n)];
  }
  FieldTape<S> tape;
  const auto res = field_forward(model, batch, Selection<S>{mode, tau, &noise}, &tape);

  std::vector<S> sig(static_cast<std::size_t>(N));
  std::vector<Vec<S>> feats;
  for (int n = 0; n < N; ++n) {
    sig[static_cast<std::size_t>(n)] = res.expert_sigma(n, 0);
    feats.push_back(tape.expert_outputs[static_cast<std::size_t>(n)].col(0).head(model.config.feature_width));
  }
  const auto logits = compute_logits<S>(sig, tau);
  SelectorOutput<S> sel;
  if (mode == SelectionMode::stochastic)
    sel = select_expert<S>(logits, std::span<const S>(noise.col(0).data(), static_cast<std::size_t>(N)));
  else
    sel = select_expert<S>(logits, std::nullopt);
  sel.index = res.expert[0];
  std::fill(sel.mask.begin(), sel.mask.end(), S(0));
  sel.mask[static_cast<std::size_t>(sel.index)] = S(1);
  gather_selected(sel, std::span<const S>(sig), feats);

  FieldSample<S> s;
  s.color = res.rgb.col(0);
  s.sigma = res.sigma(0);
  return {s, sel};
}

/// Foresight baseline for one point: the gate picks an expert from (x, z_s) before any
/// expert runs; only that expert is evaluated.
template <class S>
std::pair<FieldSample<S>, int> gate_forward(const Eigen::Matrix<S, 3, 1>& x, const Eigen::Matrix<S, 3, 1>& d,
                                            const InstanceCode<S>& code, const MoEParams<S>& model) {
  const auto batch = single_point_batch(x, d, code);
  FieldResult<S> res;
  if (model.config.routing == Routing::foresight) {
    res = field_forward(model, batch, Selection<S>{});
  } else {
    require(model.expert_count() == 1, "gate_forward: hindsight model without a gate needs exactly one expert");
    res = field_forward(model, batch, Selection<S>{});
  }
  FieldSample<S> s;
  s.color = res.rgb.col(0);
  s.sigma = res.sigma(0);
  return {s, res.expert[0]};
}

}  // namespace gnerf::field
