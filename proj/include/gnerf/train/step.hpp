#pragma once

#include <gnerf/field/field.hpp>
#include <gnerf/render/volume.hpp>

#include <vector>

namespace gnerf::train {

/// Rays with fixed sample depths, the instance each ray belongs to and its target colour.
template <class S>
struct RayBatch {
  std::vector<render::Ray> rays;
  std::vector<render::SamplePoints> samples;
  std::vector<int> instance;  // column in the code tables
  Mat<S> target;              // 3 x R

  std::size_t size() const { return rays.size(); }
};

template <class S>
struct BatchGrads {
  field::MoEParams<S> model;
  Mat<S> shape;
  Mat<S> texture;

  static BatchGrads zeros(const field::MoEParams<S>& m, Eigen::Index codes) {
    return {m.zeros_like(), Mat<S>::Zero(m.config.shape_code, codes), Mat<S>::Zero(m.config.texture_code, codes)};
  }

  void add(BatchGrads& o) {
    auto a = nn_views(model);
    auto b = nn_views(o.model);
    for (std::size_t k = 0; k < a.size(); ++k)
      for (Eigen::Index i = 0; i < a[k].second; ++i) a[k].first[i] += b[k].first[i];
    shape += o.shape;
    texture += o.texture;
  }

 private:
  static std::vector<std::pair<S*, Eigen::Index>> nn_views(field::MoEParams<S>& m) {
    std::vector<std::pair<S*, Eigen::Index>> v;
    m.visit([&](const std::string&, auto& t) { v.push_back({t.data(), t.size()}); });
    return v;
  }
};

struct BatchStats {
  double squared_error = 0;  // sum over rays of ||C_hat - C||^2
  double balance = 0;        // foresight auxiliary term (batch value)
  std::vector<long> expert_counts;
};

/// Assembles the field query for a ray batch.
template <class S>
field::FieldBatch<S> points_for(const RayBatch<S>& rb, const Mat<S>& shape_codes, const Mat<S>& texture_codes) {
  std::size_t total = 0;
  for (const auto& s : rb.samples) total += s.depth.size();
  field::FieldBatch<S> fb;
  fb.positions.resize(3, static_cast<Eigen::Index>(total));
  fb.directions.resize(3, static_cast<Eigen::Index>(total));
  fb.code_index.reserve(total);
  Eigen::Index c = 0;
  for (std::size_t r = 0; r < rb.size(); ++r) {
    const auto& ray = rb.rays[r];
    for (double t : rb.samples[r].depth) {
      fb.positions.col(c) = (ray.origin + t * ray.direction).template cast<S>();
      fb.directions.col(c) = ray.direction.template cast<S>();
      fb.code_index.push_back(rb.instance[r]);
      ++c;
    }
  }
  fb.shape_codes = shape_codes;
  fb.texture_codes = texture_codes;
  return fb;
}

/// Forward + backward for one batch of rays under the loss
///   loss_scale * sum_r ||C_hat(r) - C(r)||^2 + balance_scale * balance.
/// Gradients are accumulated into `grads` (model part skipped when `model_grads` is false).
template <class S>
BatchStats batch_loss_and_grad(const field::MoEParams<S>& model, const Mat<S>& shape_codes, const Mat<S>& texture_codes,
                               const RayBatch<S>& rb, const field::Selection<S>& sel, bool white_background,
                               double loss_scale, double balance_scale, BatchGrads<S>* grads, bool model_grads = true) {
  const auto fb = points_for(rb, shape_codes, texture_codes);
  field::FieldTape<S> tape;
  const auto res = field::field_forward(model, fb, sel, grads ? &tape : nullptr);

  BatchStats st;
  st.expert_counts.assign(static_cast<std::size_t>(model.expert_count()), 0);
  for (int e : res.expert) ++st.expert_counts[static_cast<std::size_t>(e)];
  st.balance = static_cast<double>(res.balance_loss);

  const Eigen::Index P = fb.size();
  Vec<S> dsigma = Vec<S>::Zero(P);
  Mat<S> drgb = Mat<S>::Zero(3, P);
  Eigen::Index off = 0;
  for (std::size_t r = 0; r < rb.size(); ++r) {
    const auto& sp = rb.samples[r];
    const auto n = static_cast<Eigen::Index>(sp.depth.size());
    std::vector<S> spacing(sp.spacing.begin(), sp.spacing.end());
    std::span<const S> sig(res.sigma.data() + off, static_cast<std::size_t>(n));
    const auto comp = render::composite_ray<S>(sig, res.rgb.middleCols(off, n), spacing, white_background);
    const Eigen::Matrix<S, 3, 1> diff = comp.color - rb.target.col(static_cast<Eigen::Index>(r));
    st.squared_error += static_cast<double>(diff.squaredNorm());
    if (grads) {
      const Eigen::Matrix<S, 3, 1> dcolor = static_cast<S>(2.0 * loss_scale) * diff;
      render::composite_backward<S>(comp, res.rgb.middleCols(off, n), spacing, white_background, dcolor,
                                    std::span<S>(dsigma.data() + off, static_cast<std::size_t>(n)), drgb.middleCols(off, n));
    }
    off += n;
  }
  if (grads) {
    Mat<S> dshape, dtexture;
    field::field_backward(model, tape, dsigma, drgb, model_grads ? &grads->model : nullptr, &dshape, &dtexture,
                          static_cast<S>(balance_scale));
    grads->shape += dshape;
    grads->texture += dtexture;
  }
  return st;
}

}  // namespace gnerf::train
