#pragma once

#include <gnerf/field/point_ops.hpp>
#include <gnerf/render/renderer.hpp>

#include <memory>

namespace gnerf::field {

/// Wraps a mixture field with a fixed instance code as a render::FieldEvaluator.
/// Selection is noise-free (max pooling) for hindsight routing. The model must outlive
/// the evaluator.
template <class S>
render::FieldEvaluator make_evaluator(const MoEParams<S>& model, const InstanceCode<S>& code) {
  auto shape = std::make_shared<Mat<S>>(Mat<S>(code.shape));
  auto texture = std::make_shared<Mat<S>>(Mat<S>(code.texture));
  const MoEParams<S>* m = &model;
  return [m, shape, texture](const Mat<double>& pos, const Mat<double>& dir) {
    FieldBatch<S> b;
    b.positions = pos.cast<S>();
    b.directions = dir.cast<S>();
    b.code_index.assign(static_cast<std::size_t>(pos.cols()), 0);
    b.shape_codes = *shape;
    b.texture_codes = *texture;
    const auto r = field_forward(*m, b, Selection<S>{});
    render::FieldEval ev;
    ev.sigma = r.sigma.template cast<double>();
    ev.rgb = r.rgb.template cast<double>();
    ev.expert = r.expert;
    return ev;
  };
}

}  // namespace gnerf::field
