#pragma once

#include <gnerf/core/random.hpp>
#include <gnerf/core/types.hpp>

#include <span>
#include <string>
#include <vector>

namespace gnerf::nn {

enum class Activation { relu, softplus, sigmoid, identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

template <class S>
struct DenseLayer {
  Mat<S> weight;  // out x in
  Vec<S> bias;    // out
  Activation activation = Activation::identity;

  int in_width() const { return static_cast<int>(weight.cols()); }
  int out_width() const { return static_cast<int>(weight.rows()); }
};

/// Feedforward stack of dense layers. The same type doubles as a gradient buffer
/// (see zeros_like) so that parameters, gradients and optimizer moments are always
/// shape-congruent.
template <class S>
struct Mlp {
  std::vector<DenseLayer<S>> layers;

  /// widths = {in, h1, ..., out}; one activation per layer.
  static Mlp zeros(std::span<const int> widths, std::span<const Activation> activations) {
    require(widths.size() >= 2, "Mlp: need at least input and output widths");
    require(activations.size() + 1 == widths.size(), "Mlp: one activation per layer");
    Mlp m;
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
      require(widths[k] > 0 && widths[k + 1] > 0, "Mlp: widths must be positive");
      m.layers.push_back({Mat<S>::Zero(widths[k + 1], widths[k]), Vec<S>::Zero(widths[k + 1]), activations[k]});
    }
    return m;
  }

  /// Uniform fan-in (Kaiming-style) weights, zero biases.
  static Mlp kaiming(std::span<const int> widths, std::span<const Activation> activations, Rng& rng) {
    Mlp m = zeros(widths, activations);
    for (auto& layer : m.layers) {
      const double bound = std::sqrt(6.0 / layer.in_width());
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
        layer.weight.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
    }
    return m;
  }

  bool empty() const { return layers.empty(); }
  int in_width() const { return layers.empty() ? 0 : layers.front().in_width(); }
  int out_width() const { return layers.empty() ? 0 : layers.back().out_width(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  void validate() const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      const auto& l = layers[k];
      require(l.bias.size() == l.weight.rows(), "Mlp: bias width mismatch in layer " + std::to_string(k));
      if (k + 1 < layers.size())
        require(l.out_width() == layers[k + 1].in_width(), "Mlp: layer widths do not chain at layer " + std::to_string(k));
      require(l.weight.allFinite() && l.bias.allFinite(), "Mlp: non-finite parameter in layer " + std::to_string(k));
    }
  }

  Mlp zeros_like() const {
    Mlp z = *this;
    for (auto& l : z.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return z;
  }

  template <class T>
  Mlp<T> cast() const {
    Mlp<T> out;
    for (const auto& l : layers) out.layers.push_back({l.weight.template cast<T>(), l.bias.template cast<T>(), l.activation});
    return out;
  }

  /// Calls f(name, tensor) for every weight and bias: "<prefix>.l<k>.weight", or
  /// "l<k>.weight" without a prefix.
  template <class F>
  void visit(const std::string& prefix, F&& f) {
    const std::string p = prefix.empty() ? "l" : prefix + ".l";
    for (std::size_t k = 0; k < layers.size(); ++k) {
      f(p + std::to_string(k) + ".weight", layers[k].weight);
      f(p + std::to_string(k) + ".bias", layers[k].bias);
    }
  }

  template <class F>
  void visit(F&& f) {
    visit(std::string(), f);
  }
};

/// Activations recorded by a forward pass; enough to run backward exactly.
template <class S>
struct MlpTape {
  std::vector<Mat<S>> inputs;          // input to each layer
  std::vector<Mat<S>> pre_activation;  // W x + b for each layer
  std::vector<Mat<S>> outputs;         // activation(pre) for each layer

  bool empty() const { return inputs.empty(); }
  Eigen::Index columns() const { return inputs.empty() ? 0 : inputs.front().cols(); }

  /// Restricts the tape to a subset of batch columns.
  MlpTape select_columns(std::span<const int> cols) const {
    MlpTape t;
    auto pick = [&](const Mat<S>& m) {
      Mat<S> r(m.rows(), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t j = 0; j < cols.size(); ++j) r.col(static_cast<Eigen::Index>(j)) = m.col(cols[j]);
      return r;
    };
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      t.inputs.push_back(pick(inputs[k]));
      t.pre_activation.push_back(pick(pre_activation[k]));
      t.outputs.push_back(pick(outputs[k]));
    }
    return t;
  }
};

namespace detail {

template <class S>
void apply_activation(Activation a, const Mat<S>& pre, Mat<S>& out) {
  switch (a) {
    case Activation::relu: out = pre.cwiseMax(S(0)); break;
    case Activation::softplus: out = pre.unaryExpr([](S x) { return softplus(x); }); break;
    case Activation::sigmoid: out = pre.unaryExpr([](S x) { return sigmoid(x); }); break;
    case Activation::identity: out = pre; break;
  }
}

// dpre = dout * activation'(pre), in place on dout.
template <class S>
void activation_backward(Activation a, const Mat<S>& pre, const Mat<S>& out, Mat<S>& d) {
  switch (a) {
    case Activation::relu: d = (pre.array() > S(0)).select(d, S(0)); break;
    case Activation::softplus: d.array() *= pre.unaryExpr([](S x) { return sigmoid(x); }).array(); break;
    case Activation::sigmoid: d.array() *= out.array() * (S(1) - out.array()); break;
    case Activation::identity: break;
  }
}

}  // namespace detail

/// Batched forward pass; columns of `input` are independent samples.
template <class S>
Mat<S> mlp_forward(const Mlp<S>& params, const Mat<S>& input, MlpTape<S>* tape = nullptr) {
  require(!params.empty(), "mlp_forward: empty network");
  require(input.rows() == params.in_width(),
          "mlp_forward: input width " + std::to_string(input.rows()) + " != " + std::to_string(params.in_width()));
  if (tape) *tape = MlpTape<S>{};
  Mat<S> x = input;
  for (const auto& layer : params.layers) {
    require(x.rows() == layer.in_width(), "mlp_forward: layer widths do not chain");
    Mat<S> pre = layer.weight * x;
    pre.colwise() += layer.bias;
    Mat<S> out;
    detail::apply_activation(layer.activation, pre, out);
    if (tape) {
      tape->inputs.push_back(std::move(x));
      tape->pre_activation.push_back(std::move(pre));
      tape->outputs.push_back(out);
    }
    x = std::move(out);
  }
  return x;
}

template <class S>
Vec<S> mlp_forward(const Mlp<S>& params, const Vec<S>& input) {
  Mat<S> m = input;
  return mlp_forward(params, m).col(0);
}

/// Reverse-mode pass. Accumulates parameter gradients into `grad` (when non-null) and
/// writes the gradient with respect to the network input into `input_grad` (when non-null).
template <class S>
void mlp_backward(const Mlp<S>& params, const MlpTape<S>& tape, Mat<S> output_grad, Mlp<S>* grad,
                  Mat<S>* input_grad) {
  require(!tape.empty() && tape.inputs.size() == params.layers.size(), "mlp_backward: missing or stale tape");
  require(output_grad.rows() == params.out_width() && output_grad.cols() == tape.columns(),
          "mlp_backward: output gradient shape mismatch");
  if (grad) require(grad->layers.size() == params.layers.size(), "mlp_backward: gradient buffer shape mismatch");
  Mat<S> d = std::move(output_grad);
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& layer = params.layers[k];
    require(tape.inputs[k].rows() == layer.in_width(), "mlp_backward: tape does not match parameters");
    detail::activation_backward(layer.activation, tape.pre_activation[k], tape.outputs[k], d);
    if (grad) {
      grad->layers[k].weight.noalias() += d * tape.inputs[k].transpose();
      grad->layers[k].bias += d.rowwise().sum();
    }
    if (k > 0 || input_grad) {
      Mat<S> prev = layer.weight.transpose() * d;
      d = std::move(prev);
    }
  }
  if (input_grad) *input_grad = std::move(d);
}

}  // namespace gnerf::nn
