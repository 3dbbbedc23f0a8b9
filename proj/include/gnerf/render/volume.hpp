#pragma once

#include <gnerf/core/random.hpp>
#include <gnerf/render/camera.hpp>

#include <algorithm>
#include <span>
#include <vector>

namespace gnerf::render {

inline constexpr double kLastSpacing = 1e10;

struct RenderConfig {
  int samples = 64;
  bool stratified = false;
  bool white_background = true;
  int chunk_rays = 256;
  double near = 0.5;
  double far = 3.5;

  void validate() const {
    require(samples >= 1, "render config: samples must be >= 1");
    require(chunk_rays >= 1, "render config: chunk size must be >= 1");
    require(near >= 0 && near < far, "render config: need 0 <= near < far");
  }
};

struct SamplePoints {
  std::vector<double> depth;
  std::vector<double> spacing;  // last entry is kLastSpacing
};

/// Stratum midpoints, or one uniform draw per stratum when `rng` is given.
inline SamplePoints sample_depths(const Ray& ray, int samples, Rng* rng = nullptr) {
  require(samples >= 1, "sample_depths: need at least one sample");
  require(ray.near < ray.far, "sample_depths: need near < far");
  SamplePoints s;
  s.depth.resize(static_cast<std::size_t>(samples));
  s.spacing.resize(static_cast<std::size_t>(samples));
  const double span = ray.far - ray.near;
  for (int i = 0; i < samples; ++i) {
    const double offset = rng ? rng->uniform() : 0.5;
    s.depth[static_cast<std::size_t>(i)] = ray.near + (i + offset) / samples * span;
  }
  for (int i = 0; i + 1 < samples; ++i)
    s.spacing[static_cast<std::size_t>(i)] = s.depth[static_cast<std::size_t>(i + 1)] - s.depth[static_cast<std::size_t>(i)];
  s.spacing.back() = kLastSpacing;
  return s;
}

/// T_1 = 1, T_{n+1} = T_n * exp(-sigma_n delta_n). Returns N+1 entries; the last is
/// the transmittance past the final sample.
template <class S>
std::vector<S> transmittance(std::span<const S> sigma, std::span<const S> spacing) {
  require(sigma.size() == spacing.size(), "transmittance: length mismatch");
  std::vector<S> t(sigma.size() + 1);
  t[0] = S(1);
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (sigma[i] < S(0)) throw ContractError("transmittance: negative density");
    require(spacing[i] > S(0), "transmittance: spacing must be > 0");
    t[i + 1] = t[i] * std::exp(-sigma[i] * spacing[i]);
  }
  return t;
}

template <class S>
struct Composite {
  Eigen::Matrix<S, 3, 1> color = Eigen::Matrix<S, 3, 1>::Zero();      // clipped to [0, 1]
  Eigen::Matrix<S, 3, 1> unclipped = Eigen::Matrix<S, 3, 1>::Zero();
  std::vector<S> trans;    // N+1 transmittances
  std::vector<S> weight;   // w_i = T_i - T_{i+1} = T_i (1 - exp(-sigma_i delta_i))
  S opacity = S(0);        // sum of weights
};

/// C = sum_i w_i c_i (+ (1 - sum_i w_i) for a white background), clipped to [0, 1].
/// `rgb` is 3 x N.
template <class S>
Composite<S> composite_ray(std::span<const S> sigma, const Eigen::Ref<const Mat<S>>& rgb, std::span<const S> spacing,
                           bool white_background) {
  require(rgb.rows() == 3 && static_cast<std::size_t>(rgb.cols()) == sigma.size(), "composite_ray: shape mismatch");
  Composite<S> out;
  out.trans = transmittance(sigma, spacing);
  out.weight.resize(sigma.size());
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const S w = out.trans[i] - out.trans[i + 1];
    out.weight[i] = w;
    out.opacity += w;
    out.unclipped += w * rgb.col(static_cast<Eigen::Index>(i));
  }
  if (white_background) out.unclipped.array() += S(1) - out.opacity;
  out.color = out.unclipped.cwiseMax(S(0)).cwiseMin(S(1));
  return out;
}

/// Gradients of a scalar loss through composite_ray given dL/dC (after clipping).
/// dC/dc_i = w_i; dC/dsigma_k = delta_k (T_{k+1} c_k - R_k) with
/// R_k = sum_{i>k} w_i c_i + bg T_{N+1}.
template <class S>
void composite_backward(const Composite<S>& fwd, const Eigen::Ref<const Mat<S>>& rgb, std::span<const S> spacing,
                        bool white_background, const Eigen::Matrix<S, 3, 1>& dcolor, std::span<S> dsigma,
                        Eigen::Ref<Mat<S>> drgb) {
  const std::size_t n = fwd.weight.size();
  Eigen::Matrix<S, 3, 1> g = dcolor;
  for (int c = 0; c < 3; ++c)
    if (fwd.unclipped(c) < S(0) || fwd.unclipped(c) > S(1)) g(c) = S(0);
  const S bg = white_background ? S(1) : S(0);
  S tail = bg * fwd.trans[n] * g.sum();  // g . R_k, built from the back
  for (std::size_t k = n; k-- > 0;) {
    const auto ck = rgb.col(static_cast<Eigen::Index>(k));
    drgb.col(static_cast<Eigen::Index>(k)) = fwd.weight[k] * g;
    const S gc = g.dot(ck);
    dsigma[k] = spacing[k] * (fwd.trans[k + 1] * gc - tail);
    tail += fwd.weight[k] * gc;
  }
}

}  // namespace gnerf::render
