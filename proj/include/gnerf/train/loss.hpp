#pragma once

#include <gnerf/core/types.hpp>

namespace gnerf::train {

/// Mean over rays (columns) of the squared colour error ||C_hat - C||^2.
template <class Derived1, class Derived2>
double photometric_loss(const Eigen::MatrixBase<Derived1>& rendered, const Eigen::MatrixBase<Derived2>& truth) {
  require(rendered.cols() > 0, "photometric_loss: empty batch");
  require(rendered.rows() == truth.rows() && rendered.cols() == truth.cols(), "photometric_loss: batch size mismatch");
  double sum = 0;
  for (Eigen::Index r = 0; r < rendered.cols(); ++r)
    for (Eigen::Index c = 0; c < rendered.rows(); ++c) {
      const double d = static_cast<double>(rendered(c, r)) - static_cast<double>(truth(c, r));
      sum += d * d;
    }
  return sum / static_cast<double>(rendered.cols());
}

}  // namespace gnerf::train
