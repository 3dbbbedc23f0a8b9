#pragma once

#include <gnerf/core/types.hpp>

#include <numbers>
#include <span>
#include <vector>

namespace gnerf::nn {

/// Fourier features: for every input component q and k in [0, L), the pair
/// (sin(2^k pi q), cos(2^k pi q)), grouped by component. L = 0 gives an empty encoding.
template <class S>
std::vector<S> positional_encode(std::span<const S> p, int frequencies) {
  require(frequencies >= 0, "positional_encode: frequency count must be >= 0");
  std::vector<S> out;
  out.reserve(2 * static_cast<std::size_t>(frequencies) * p.size());
  for (const S q : p) {
    require(std::isfinite(static_cast<double>(q)), "positional_encode: non-finite input");
    S scale = std::numbers::pi_v<S>;
    for (int k = 0; k < frequencies; ++k) {
      out.push_back(std::sin(scale * q));
      out.push_back(std::cos(scale * q));
      scale *= S(2);
    }
  }
  return out;
}

inline int encoded_width(int dims, int frequencies, bool with_raw) {
  return (with_raw ? dims : 0) + 2 * frequencies * dims;
}

/// Column-batched encoding. Each column of `points` is one coordinate vector; the output
/// column holds the raw coordinates (when requested) followed by the Fourier features in
/// the same order as positional_encode.
template <class S>
Mat<S> encode_columns(const Mat<S>& points, int frequencies, bool with_raw = true) {
  require(frequencies >= 0, "encode_columns: frequency count must be >= 0");
  require(points.allFinite(), "encode_columns: non-finite input");
  const auto dims = static_cast<int>(points.rows());
  const Eigen::Index n = points.cols();
  Mat<S> out(encoded_width(dims, frequencies, with_raw), n);
  int row = 0;
  if (with_raw) {
    out.topRows(dims) = points;
    row = dims;
  }
  for (int d = 0; d < dims; ++d) {
    S scale = std::numbers::pi_v<S>;
    for (int k = 0; k < frequencies; ++k) {
      for (Eigen::Index c = 0; c < n; ++c) {
        const S a = scale * points(d, c);
        out(row, c) = std::sin(a);
        out(row + 1, c) = std::cos(a);
      }
      row += 2;
      scale *= S(2);
    }
  }
  return out;
}

}  // namespace gnerf::nn
