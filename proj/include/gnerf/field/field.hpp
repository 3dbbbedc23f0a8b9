#pragma once

#include <gnerf/field/model.hpp>
#include <gnerf/field/selector.hpp>
#include <gnerf/nn/positional_encoding.hpp>

#include <optional>
#include <vector>

namespace gnerf::field {

enum class SelectionMode { stochastic, deterministic };

/// A batch of field queries. Column p of positions/directions is one point; it is
/// conditioned on column code_index[p] of the code tables.
template <class S>
struct FieldBatch {
  Mat<S> positions;   // 3 x P
  Mat<S> directions;  // 3 x P, unit
  std::vector<int> code_index;
  Mat<S> shape_codes;    // shape_code x K
  Mat<S> texture_codes;  // texture_code x K

  Eigen::Index size() const { return positions.cols(); }
};

/// How hindsight selection is made for a batch. Stochastic mode needs one Gumbel draw
/// per expert and point (experts x P). Ignored by foresight routing.
template <class S>
struct Selection {
  SelectionMode mode = SelectionMode::deterministic;
  double tau = 1.0;
  const Mat<S>* noise = nullptr;
};

template <class S>
struct FieldResult {
  Vec<S> sigma;                // P
  Mat<S> rgb;                  // 3 x P
  std::vector<int> expert;     // selected expert per point
  Mat<S> expert_sigma;         // experts x P; hindsight only (all experts run)
  S balance_loss = S(0);       // foresight auxiliary term for this batch
};

/// Everything backward needs from a forward pass.
template <class S>
struct FieldTape {
  std::vector<int> code_index;
  Mat<S> shape_codes;
  Mat<S> encoded_pos;
  std::vector<int> expert;
  std::vector<std::vector<int>> members;      // columns routed to each expert
  std::vector<nn::MlpTape<S>> expert_tapes;   // hindsight: all columns; foresight: member columns
  std::vector<Mat<S>> expert_outputs;         // same column layout as the tapes
  Mat<S> selected_feature;                    // feature_width x P
  Vec<S> sigma;
  nn::MlpTape<S> head_tape;
  nn::MlpTape<S> gate_tape;
  Mat<S> gate_prob;                           // experts x P
  std::vector<S> balance_fraction;            // f_n
};

namespace detail {

template <class S>
Mat<S> gather_columns(const Mat<S>& table, const std::vector<int>& index) {
  Mat<S> out(table.rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t p = 0; p < index.size(); ++p) out.col(static_cast<Eigen::Index>(p)) = table.col(index[p]);
  return out;
}

template <class S>
S density_from_raw(S raw, double floor) {
  return softplus(raw) + static_cast<S>(floor);
}

}  // namespace detail

/// Shape-code mapping for every expert over a code table: W_n Z + b_n.
template <class S>
std::vector<Mat<S>> map_shape_codes(const MoEParams<S>& model, const Mat<S>& shape_codes) {
  require(shape_codes.rows() == model.config.shape_code, "map_shape_code: shape code length mismatch");
  std::vector<Mat<S>> out;
  for (int n = 0; n < model.expert_count(); ++n) {
    Mat<S> m = model.mapper_weight[static_cast<std::size_t>(n)] * shape_codes;
    m.colwise() += model.mapper_bias[static_cast<std::size_t>(n)];
    out.push_back(std::move(m));
  }
  return out;
}

/// Evaluates the mixture field on a batch. With a tape, records what field_backward needs.
template <class S>
FieldResult<S> field_forward(const MoEParams<S>& model, const FieldBatch<S>& batch, const Selection<S>& sel,
                             FieldTape<S>* tape = nullptr) {
  const ModelConfig& cfg = model.config;
  const Eigen::Index P = batch.size();
  const int N = model.expert_count();
  require(batch.directions.cols() == P && static_cast<Eigen::Index>(batch.code_index.size()) == P,
          "field_forward: batch size mismatch");
  require(batch.positions.rows() == 3 && batch.directions.rows() == 3, "field_forward: expected 3-vectors");
  require(batch.texture_codes.rows() == cfg.texture_code && batch.texture_codes.cols() == batch.shape_codes.cols(),
          "field_forward: texture code table mismatch");
  for (int id : batch.code_index)
    require(id >= 0 && id < batch.shape_codes.cols(), "field_forward: code index out of range");

  FieldResult<S> res;
  res.sigma.resize(P);
  res.expert.assign(static_cast<std::size_t>(P), 0);
  const Mat<S> pe = nn::encode_columns(batch.positions, cfg.pos_frequencies);
  const Mat<S> de = nn::encode_columns(batch.directions, cfg.dir_frequencies);
  const auto mapped = map_shape_codes(model, batch.shape_codes);
  const int F = cfg.feature_width;
  Mat<S> feature(F, P);

  std::vector<nn::MlpTape<S>> tapes(static_cast<std::size_t>(N));
  std::vector<Mat<S>> outputs(static_cast<std::size_t>(N));
  std::vector<std::vector<int>> members(static_cast<std::size_t>(N));
  Mat<S> gate_prob;
  nn::MlpTape<S> gate_tape;

  if (cfg.routing == Routing::hindsight) {
    res.expert_sigma.resize(N, P);
    for (int n = 0; n < N; ++n) {
      Mat<S> in(cfg.expert_input_width(), P);
      in.topRows(pe.rows()) = pe;
      in.bottomRows(cfg.expert_code) = detail::gather_columns(mapped[static_cast<std::size_t>(n)], batch.code_index);
      auto& out = outputs[static_cast<std::size_t>(n)];
      out = nn::mlp_forward(model.experts[static_cast<std::size_t>(n)], in, tape ? &tapes[static_cast<std::size_t>(n)] : nullptr);
      for (Eigen::Index p = 0; p < P; ++p) res.expert_sigma(n, p) = detail::density_from_raw(out(F, p), cfg.sigma_floor);
    }
    if (sel.mode == SelectionMode::stochastic)
      require(sel.noise && sel.noise->rows() == N && sel.noise->cols() == P,
              "field_forward: stochastic selection needs experts x P Gumbel noise");
    std::vector<S> logits(static_cast<std::size_t>(N));
    for (Eigen::Index p = 0; p < P; ++p) {
      const S* col = res.expert_sigma.col(p).data();
      int pick;
      if (sel.mode == SelectionMode::stochastic) {
        compute_logits<S>(std::span<const S>(col, static_cast<std::size_t>(N)), sel.tau, logits);
        pick = argmax_index<S>(logits, std::span<const S>(sel.noise->col(p).data(), static_cast<std::size_t>(N)));
      } else {
        // Noise-free selection is max pooling of the densities; logits are monotone in sigma.
        pick = argmax_index<S>(std::span<const S>(col, static_cast<std::size_t>(N)));
      }
      res.expert[static_cast<std::size_t>(p)] = pick;
      members[static_cast<std::size_t>(pick)].push_back(static_cast<int>(p));
      res.sigma(p) = res.expert_sigma(pick, p);
      feature.col(p) = outputs[static_cast<std::size_t>(pick)].col(p).head(F);
    }
  } else {
    Mat<S> gin(cfg.gate_input_width(), P);
    gin.topRows(pe.rows()) = pe;
    gin.bottomRows(cfg.shape_code) = detail::gather_columns(batch.shape_codes, batch.code_index);
    const Mat<S> gl = nn::mlp_forward(model.gate, gin, tape ? &gate_tape : nullptr);
    gate_prob.resize(N, P);
    for (Eigen::Index p = 0; p < P; ++p) {
      const S hi = gl.col(p).maxCoeff();
      S sum = 0;
      for (int n = 0; n < N; ++n) sum += (gate_prob(n, p) = std::exp(gl(n, p) - hi));
      gate_prob.col(p) /= sum;
      const int pick = argmax_index<S>(std::span<const S>(gl.col(p).data(), static_cast<std::size_t>(N)));
      res.expert[static_cast<std::size_t>(p)] = pick;
      members[static_cast<std::size_t>(pick)].push_back(static_cast<int>(p));
    }
    for (int n = 0; n < N; ++n) {
      const auto& cols = members[static_cast<std::size_t>(n)];
      if (cols.empty()) continue;
      Mat<S> in(cfg.expert_input_width(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        in.col(c).head(pe.rows()) = pe.col(cols[j]);
        in.col(c).tail(cfg.expert_code) = mapped[static_cast<std::size_t>(n)].col(batch.code_index[static_cast<std::size_t>(cols[j])]);
      }
      auto& out = outputs[static_cast<std::size_t>(n)];
      out = nn::mlp_forward(model.experts[static_cast<std::size_t>(n)], in, tape ? &tapes[static_cast<std::size_t>(n)] : nullptr);
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        res.sigma(cols[j]) = detail::density_from_raw(out(F, c), cfg.sigma_floor);
        feature.col(cols[j]) = out.col(c).head(F);
      }
    }
    // Switch-style balance term: N * sum_n f_n * mean_p prob_n.
    std::vector<S> frac(static_cast<std::size_t>(N));
    S aux = 0;
    for (int n = 0; n < N; ++n) {
      frac[static_cast<std::size_t>(n)] = static_cast<S>(members[static_cast<std::size_t>(n)].size()) / static_cast<S>(P);
      aux += frac[static_cast<std::size_t>(n)] * gate_prob.row(n).mean();
    }
    res.balance_loss = P > 0 ? static_cast<S>(N) * aux : S(0);
    if (tape) tape->balance_fraction = std::move(frac);
  }

  Mat<S> hin(cfg.head_input_width(), P);
  hin.topRows(F) = feature;
  hin.middleRows(F, de.rows()) = de;
  hin.bottomRows(cfg.texture_code) = detail::gather_columns(batch.texture_codes, batch.code_index);
  res.rgb = nn::mlp_forward(model.texture_head, hin, tape ? &tape->head_tape : nullptr);

  if (tape) {
    tape->code_index = batch.code_index;
    tape->shape_codes = batch.shape_codes;
    tape->encoded_pos = pe;
    tape->expert = res.expert;
    tape->members = std::move(members);
    tape->expert_tapes = std::move(tapes);
    tape->expert_outputs = std::move(outputs);
    tape->selected_feature = std::move(feature);
    tape->sigma = res.sigma;
    tape->gate_tape = std::move(gate_tape);
    tape->gate_prob = std::move(gate_prob);
  }
  return res;
}

/// Reverse pass through the field. The selection (one-hot mask) is treated as a
/// constant, so only the selected expert of each point receives gradient from it.
/// `model_grad` may be null when only code gradients are wanted (test-time optimization).
/// `balance_grad` is dLoss/d(balance_loss) for foresight routing.
template <class S>
void field_backward(const MoEParams<S>& model, const FieldTape<S>& tape, const Vec<S>& dsigma, const Mat<S>& drgb,
                    MoEParams<S>* model_grad, Mat<S>* dshape_codes, Mat<S>* dtexture_codes, S balance_grad = S(0)) {
  const ModelConfig& cfg = model.config;
  const auto P = static_cast<Eigen::Index>(tape.code_index.size());
  const int N = model.expert_count();
  const int F = cfg.feature_width;
  const Eigen::Index K = tape.shape_codes.cols();
  require(dsigma.size() == P && drgb.rows() == 3 && drgb.cols() == P, "field_backward: gradient shape mismatch");
  require(!tape.head_tape.empty() || P == 0, "field_backward: forward was run without a tape");
  if (dshape_codes) {
    if (dshape_codes->rows() != cfg.shape_code || dshape_codes->cols() != K) *dshape_codes = Mat<S>::Zero(cfg.shape_code, K);
  }
  if (dtexture_codes) {
    if (dtexture_codes->rows() != cfg.texture_code || dtexture_codes->cols() != K)
      *dtexture_codes = Mat<S>::Zero(cfg.texture_code, K);
  }
  if (P == 0) return;

  Mat<S> dhin;
  nn::mlp_backward(model.texture_head, tape.head_tape, drgb, model_grad ? &model_grad->texture_head : nullptr, &dhin);
  if (dtexture_codes)
    for (Eigen::Index p = 0; p < P; ++p)
      dtexture_codes->col(tape.code_index[static_cast<std::size_t>(p)]) += dhin.col(p).tail(cfg.texture_code);

  for (int n = 0; n < N; ++n) {
    const auto& cols = tape.members[static_cast<std::size_t>(n)];
    if (cols.empty()) continue;
    const auto& out = tape.expert_outputs[static_cast<std::size_t>(n)];
    const bool subset_tape = cfg.routing == Routing::foresight;
    Mat<S> dout(F + 1, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      const int p = cols[j];
      const Eigen::Index oc = subset_tape ? c : p;
      dout.col(c).head(F) = dhin.col(p).head(F);
      dout(F, c) = dsigma(p) * sigmoid(out(F, oc));
    }
    Mat<S> din;
    if (subset_tape) {
      nn::mlp_backward(model.experts[static_cast<std::size_t>(n)], tape.expert_tapes[static_cast<std::size_t>(n)], std::move(dout),
                       model_grad ? &model_grad->experts[static_cast<std::size_t>(n)] : nullptr, &din);
    } else {
      const auto sub = tape.expert_tapes[static_cast<std::size_t>(n)].select_columns(cols);
      nn::mlp_backward(model.experts[static_cast<std::size_t>(n)], sub, std::move(dout),
                       model_grad ? &model_grad->experts[static_cast<std::size_t>(n)] : nullptr, &din);
    }
    Mat<S> dmapped = Mat<S>::Zero(cfg.expert_code, K);
    for (std::size_t j = 0; j < cols.size(); ++j)
      dmapped.col(tape.code_index[static_cast<std::size_t>(cols[j])]) += din.col(static_cast<Eigen::Index>(j)).tail(cfg.expert_code);
    if (model_grad) {
      model_grad->mapper_weight[static_cast<std::size_t>(n)].noalias() += dmapped * tape.shape_codes.transpose();
      model_grad->mapper_bias[static_cast<std::size_t>(n)] += dmapped.rowwise().sum();
    }
    if (dshape_codes) dshape_codes->noalias() += model.mapper_weight[static_cast<std::size_t>(n)].transpose() * dmapped;
  }

  if (cfg.routing == Routing::foresight) {
    // Straight-through dispatch: output = expert(x) * p / stopgrad(p), so
    // dL/dp_sel = (dL/dsigma * sigma + dL/dh . h) / p_sel.
    Mat<S> dprob = Mat<S>::Zero(N, P);
    for (Eigen::Index p = 0; p < P; ++p) {
      const int n = tape.expert[static_cast<std::size_t>(p)];
      const S dot = dsigma(p) * tape.sigma(p) + dhin.col(p).head(F).dot(tape.selected_feature.col(p));
      dprob(n, p) = dot / tape.gate_prob(n, p);
    }
    if (balance_grad != S(0))
      for (int n = 0; n < N; ++n)
        dprob.row(n).array() += balance_grad * static_cast<S>(N) * tape.balance_fraction[static_cast<std::size_t>(n)] / static_cast<S>(P);
    Mat<S> dlogit(N, P);
    for (Eigen::Index p = 0; p < P; ++p) {
      const S inner = tape.gate_prob.col(p).dot(dprob.col(p));
      dlogit.col(p) = tape.gate_prob.col(p).cwiseProduct((dprob.col(p).array() - inner).matrix());
    }
    Mat<S> dgin;
    nn::mlp_backward(model.gate, tape.gate_tape, std::move(dlogit), model_grad ? &model_grad->gate : nullptr,
                     dshape_codes ? &dgin : nullptr);
    if (dshape_codes)
      for (Eigen::Index p = 0; p < P; ++p)
        dshape_codes->col(tape.code_index[static_cast<std::size_t>(p)]) += dgin.col(p).tail(cfg.shape_code);
  }
}

}  // namespace gnerf::field
