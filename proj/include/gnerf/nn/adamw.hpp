#pragma once

#include <gnerf/core/types.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace gnerf::nn {

/// Named, contiguous view of one parameter tensor.
template <class S>
struct ParamView {
  std::string name;
  S* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Eigen::Index size() const { return rows * cols; }
};

/// Flattens anything with a `visit(f)` member into named views, in visitation order.
template <class S, class Params>
std::vector<ParamView<S>> param_views(Params& p) {
  std::vector<ParamView<S>> views;
  p.visit([&](const std::string& name, auto& t) { views.push_back({name, t.data(), t.rows(), t.cols()}); });
  return views;
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

template <class Params>
struct AdamWState {
  Params first_moment;
  Params second_moment;
  std::int64_t step = 0;
  AdamWConfig config;

  static AdamWState for_params(const Params& p, AdamWConfig cfg = {}) {
    return {p.zeros_like(), p.zeros_like(), 0, cfg};
  }
};

namespace detail {

template <class S>
void adamw_update(S* p, const S* g, S* m, S* v, Eigen::Index n, std::int64_t step, const AdamWConfig& c, double lr) {
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(step));
  const double decay = 1.0 - lr * c.weight_decay;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double gi = g[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<S>(mi);
    v[i] = static_cast<S>(vi);
    const double update = (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
    p[i] = static_cast<S>(static_cast<double>(p[i]) * decay - lr * update);
  }
}

}  // namespace detail

/// One decoupled-weight-decay Adam step. Gradients are checked for finiteness first so a
/// rejected step leaves parameters and state untouched.
template <class S, class Params>
void adamw_step(Params& params, Params& grads, AdamWState<Params>& state, double lr) {
  auto p = param_views<S>(params);
  auto g = param_views<S>(grads);
  auto m = param_views<S>(state.first_moment);
  auto v = param_views<S>(state.second_moment);
  require(p.size() == g.size() && p.size() == m.size() && p.size() == v.size(), "adamw_step: shape mismatch");
  for (std::size_t k = 0; k < p.size(); ++k) {
    require(p[k].size() == g[k].size() && p[k].size() == m[k].size() && p[k].size() == v[k].size(),
            "adamw_step: shape mismatch at " + p[k].name);
    for (Eigen::Index i = 0; i < g[k].size(); ++i)
      if (!std::isfinite(static_cast<double>(g[k].data[i])))
        throw ContractError("adamw_step: non-finite gradient in " + g[k].name);
  }
  ++state.step;
  for (std::size_t k = 0; k < p.size(); ++k)
    detail::adamw_update(p[k].data, g[k].data, m[k].data, v[k].data, p[k].size(), state.step, state.config, lr);
}

/// AdamW over a code table (one column per instance) where only some columns are
/// touched per step. Each column keeps its own step counter for bias correction.
template <class S>
struct CodeTableOptimizer {
  Mat<S> first_moment;
  Mat<S> second_moment;
  std::vector<std::int64_t> steps;
  AdamWConfig config;

  static CodeTableOptimizer for_table(const Mat<S>& table, AdamWConfig cfg = {}) {
    return {Mat<S>::Zero(table.rows(), table.cols()), Mat<S>::Zero(table.rows(), table.cols()),
            std::vector<std::int64_t>(static_cast<std::size_t>(table.cols()), 0), cfg};
  }

  void step(Mat<S>& table, const Mat<S>& grads, const std::vector<int>& columns, double lr) {
    require(grads.rows() == table.rows() && grads.cols() == table.cols(), "CodeTableOptimizer: shape mismatch");
    for (int c : columns) {
      require(c >= 0 && c < table.cols(), "CodeTableOptimizer: column out of range");
      if (!grads.col(c).allFinite()) throw ContractError("adamw_step: non-finite gradient in code " + std::to_string(c));
    }
    for (int c : columns) {
      const auto k = static_cast<std::size_t>(c);
      ++steps[k];
      detail::adamw_update(table.col(c).data(), grads.col(c).data(), first_moment.col(c).data(),
                           second_moment.col(c).data(), table.rows(), steps[k], config, lr);
    }
  }
};

}  // namespace gnerf::nn
