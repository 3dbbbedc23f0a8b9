#pragma once

#include <gnerf/core/image.hpp>
#include <gnerf/core/types.hpp>

#include <cmath>
#include <vector>

namespace gnerf::eval {

inline constexpr double kPsnrCap = 99.0;

inline double mse(const Image& a, const Image& b) {
  require(a.same_shape(b), "metrics: image shapes differ");
  require(!a.rgb.empty(), "metrics: empty image");
  double sum = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.rgb.size());
}

/// 10 log10(1 / MSE) over all pixels and channels, capped at 99 dB.
inline double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(m));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) total += k[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
  for (double& v : k) v /= total;
  return k;
}

/// Grayscale (channel mean) as a height x width matrix.
inline Mat<double> grayscale(const Image& img) {
  Mat<double> g(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      g(y, x) = (static_cast<double>(img.at(x, y, 0)) + img.at(x, y, 1) + img.at(x, y, 2)) / 3.0;
  return g;
}

namespace detail {

// Separable Gaussian filter keeping only windows that lie fully inside the image.
inline Mat<double> filter_valid(const Mat<double>& m, const std::vector<double>& k) {
  const auto w = static_cast<Eigen::Index>(k.size());
  Mat<double> rows(m.rows() - w + 1, m.cols());
  for (Eigen::Index y = 0; y < rows.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x) {
      double s = 0;
      for (Eigen::Index i = 0; i < w; ++i) s += k[static_cast<std::size_t>(i)] * m(y + i, x);
      rows(y, x) = s;
    }
  Mat<double> out(rows.rows(), m.cols() - w + 1);
  for (Eigen::Index y = 0; y < out.rows(); ++y)
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      double s = 0;
      for (Eigen::Index i = 0; i < w; ++i) s += k[static_cast<std::size_t>(i)] * rows(y, x + i);
      out(y, x) = s;
    }
  return out;
}

}  // namespace detail

/// Mean local SSIM of the grayscale images with a Gaussian window, over all window
/// positions that fit inside the image.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  require(a.same_shape(b), "ssim: image shapes differ");
  require(a.width >= opt.window && a.height >= opt.window, "ssim: image smaller than the window");
  const Mat<double> x = grayscale(a), y = grayscale(b);
  const auto k = gaussian_kernel(opt.window, opt.sigma);
  const Mat<double> mx = detail::filter_valid(x, k);
  const Mat<double> my = detail::filter_valid(y, k);
  const Mat<double> sxx = detail::filter_valid(x.cwiseProduct(x), k) - mx.cwiseProduct(mx);
  const Mat<double> syy = detail::filter_valid(y.cwiseProduct(y), k) - my.cwiseProduct(my);
  const Mat<double> sxy = detail::filter_valid(x.cwiseProduct(y), k) - mx.cwiseProduct(my);
  const double c1 = (opt.k1 * opt.data_range) * (opt.k1 * opt.data_range);
  const double c2 = (opt.k2 * opt.data_range) * (opt.k2 * opt.data_range);
  double total = 0;
  for (Eigen::Index i = 0; i < mx.size(); ++i) {
    const double mu_x = mx.data()[i], mu_y = my.data()[i];
    total += ((2 * mu_x * mu_y + c1) * (2 * sxy.data()[i] + c2)) /
             ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx.data()[i] + syy.data()[i] + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace gnerf::eval
