#pragma once

#include <gnerf/core/random.hpp>
#include <gnerf/core/types.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace gnerf::field {

/// Tempered log-softmax over log-densities:
///   logits_n = log(sigma_n)/tau - log sum_i exp(log(sigma_i)/tau)
/// Densities must be strictly positive.
template <class S>
void compute_logits(std::span<const S> sigma, double tau, std::span<S> logits) {
  require(!sigma.empty() && logits.size() == sigma.size(), "compute_logits: size mismatch");
  require(tau > 0, "compute_logits: temperature must be > 0");
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < sigma.size(); ++n) {
    if (!(sigma[n] > S(0))) throw ContractError("compute_logits: density must be > 0");
    const double a = std::log(static_cast<double>(sigma[n])) / tau;
    logits[n] = static_cast<S>(a);
    hi = std::max(hi, a);
  }
  double sum = 0;
  for (const S a : logits) sum += std::exp(static_cast<double>(a) - hi);
  const double lse = hi + std::log(sum);
  for (auto& a : logits) a = static_cast<S>(static_cast<double>(a) - lse);
}

template <class S>
std::vector<S> compute_logits(std::span<const S> sigma, double tau) {
  std::vector<S> out(sigma.size());
  compute_logits<S>(sigma, tau, out);
  return out;
}

/// Inverse-transform standard Gumbel draw from a uniform in (0, 1).
inline double gumbel_from_uniform(double u) {
  constexpr double lo = 1e-300;
  u = std::clamp(u, lo, std::nextafter(1.0, 0.0));
  return -std::log(-std::log(u));
}

template <class S>
std::vector<S> sample_gumbel(Rng& rng, int count) {
  require(count >= 0, "sample_gumbel: negative count");
  std::vector<S> g(static_cast<std::size_t>(count));
  for (auto& v : g) v = static_cast<S>(gumbel_from_uniform(rng.uniform()));
  return g;
}

/// argmax of logits (+ noise when given); exact ties go to the lowest index.
template <class S>
int argmax_index(std::span<const S> logits, std::span<const S> noise = {}) {
  require(!logits.empty(), "select_expert: empty logits");
  require(noise.empty() || noise.size() == logits.size(), "select_expert: noise length mismatch");
  int best = 0;
  S best_v = logits[0] + (noise.empty() ? S(0) : noise[0]);
  for (std::size_t n = 1; n < logits.size(); ++n) {
    const S v = logits[n] + (noise.empty() ? S(0) : noise[n]);
    if (v > best_v) {
      best_v = v;
      best = static_cast<int>(n);
    }
  }
  return best;
}

template <class S>
struct SelectorOutput {
  int index = 0;                // 0-based expert index
  std::vector<S> mask;          // one-hot over experts
  std::vector<S> logits;
  std::vector<S> noise;         // zeros in deterministic mode
  S sigma = S(0);               // selected density
  Vec<S> feature;               // selected feature h
};

/// Picks the expert for one point. Without noise this is max pooling over densities.
template <class S>
SelectorOutput<S> select_expert(std::span<const S> logits, std::optional<std::span<const S>> noise) {
  SelectorOutput<S> out;
  out.logits.assign(logits.begin(), logits.end());
  if (noise) {
    out.noise.assign(noise->begin(), noise->end());
    out.index = argmax_index<S>(logits, *noise);
  } else {
    out.noise.assign(logits.size(), S(0));
    out.index = argmax_index<S>(logits);
  }
  out.mask.assign(logits.size(), S(0));
  out.mask[static_cast<std::size_t>(out.index)] = S(1);
  return out;
}

/// Fills the selected density and feature: sigma = mask . (sigma_1..N), h = mask . (h_1..N).
template <class S>
void gather_selected(SelectorOutput<S>& sel, std::span<const S> sigmas, const std::vector<Vec<S>>& features) {
  require(sigmas.size() == sel.mask.size() && features.size() == sel.mask.size(), "select_expert: length mismatch");
  sel.sigma = S(0);
  sel.feature = Vec<S>::Zero(features.front().size());
  for (std::size_t n = 0; n < sel.mask.size(); ++n) {
    if (sel.mask[n] == S(0)) continue;
    sel.sigma += sel.mask[n] * sigmas[n];
    sel.feature += sel.mask[n] * features[n];
  }
}

}  // namespace gnerf::field
