#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "recall/errors.hpp"

namespace recall::numkit {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation { relu, tanh, identity };

/// One affine map followed by an elementwise activation.
template <typename T>
struct Layer {
  Matrix<T> weight;  // out x in
  Vector<T> bias;    // out
  Activation activation = Activation::identity;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

/// A plain multilayer perceptron. The same type carries gradients and Adam
/// moments, which are always shaped like the parameters they belong to.
template <typename T>
struct Mlp {
  std::vector<Layer<T>> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Throws StructuralError if consecutive layers do not chain.
  void validate() const {
    for (std::size_t k = 0; k < layers.size(); ++k) {
      if (layers[k].bias.size() != layers[k].weight.rows())
        throw StructuralError("mlp layer " + std::to_string(k) + ": bias length does not match weight rows");
      if (k > 0 && layers[k].in_dim() != layers[k - 1].out_dim())
        throw StructuralError("mlp layer " + std::to_string(k) + ": input width " +
                              std::to_string(layers[k].in_dim()) + " does not match previous output " +
                              std::to_string(layers[k - 1].out_dim()));
    }
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  Mlp zeros_like() const {
    Mlp z;
    z.layers.reserve(layers.size());
    for (const auto& l : layers)
      z.layers.push_back({Matrix<T>::Zero(l.weight.rows(), l.weight.cols()), Vector<T>::Zero(l.bias.size()),
                          l.activation});
    return z;
  }

  bool same_shape(const Mlp& other) const {
    if (layers.size() != other.layers.size()) return false;
    for (std::size_t k = 0; k < layers.size(); ++k)
      if (layers[k].weight.rows() != other.layers[k].weight.rows() ||
          layers[k].weight.cols() != other.layers[k].weight.cols())
        return false;
    return true;
  }

  template <typename U>
  Mlp<U> cast() const {
    Mlp<U> out;
    for (const auto& l : layers)
      out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>(), l.activation});
    return out;
  }

  Mlp& operator+=(const Mlp& other) {
    if (!same_shape(other)) throw StructuralError("mlp accumulate: shape mismatch");
    for (std::size_t k = 0; k < layers.size(); ++k) {
      layers[k].weight += other.layers[k].weight;
      layers[k].bias += other.layers[k].bias;
    }
    return *this;
  }

  Mlp& operator*=(T s) {
    for (auto& l : layers) {
      l.weight *= s;
      l.bias *= s;
    }
    return *this;
  }
};

/// Builds an MLP with widths `sizes` (input first) and PyTorch-style
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization. Hidden layers
/// use `hidden`; the last layer uses `output`.
template <typename T, typename Rng>
Mlp<T> make_mlp(const std::vector<int>& sizes, Activation hidden, Activation output, Rng& rng) {
  if (sizes.size() < 2) throw StructuralError("make_mlp: need at least input and output widths");
  Mlp<T> net;
  for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
    const int in = sizes[k];
    const int out = sizes[k + 1];
    if (in <= 0 || out <= 0) throw StructuralError("make_mlp: widths must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer<T> layer{Matrix<T>(out, in), Vector<T>(out), k + 2 == sizes.size() ? output : hidden};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = static_cast<T>(dist(rng));
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = static_cast<T>(dist(rng));
    net.layers.push_back(std::move(layer));
  }
  return net;
}

/// Per-layer values kept by the forward pass for backpropagation. Each
/// column of `input` is one sample.
template <typename T>
struct MlpCache {
  Matrix<T> input;
  std::vector<Matrix<T>> pre;
  std::vector<Matrix<T>> post;

  const Matrix<T>& output() const { return post.empty() ? input : post.back(); }
};

namespace detail {

template <typename T>
void activate(Activation a, const Matrix<T>& pre, Matrix<T>& post) {
  switch (a) {
    case Activation::relu:
      post = pre.cwiseMax(T(0));
      break;
    case Activation::tanh:
      post = pre.array().tanh().matrix();
      break;
    case Activation::identity:
      post = pre;
      break;
  }
}

// Multiplies `grad` in place by the activation derivative.
template <typename T>
void activation_backward(Activation a, const Matrix<T>& pre, const Matrix<T>& post, Matrix<T>& grad) {
  switch (a) {
    case Activation::relu:
      grad = (pre.array() > T(0)).select(grad, T(0));
      break;
    case Activation::tanh:
      grad.array() *= (T(1) - post.array().square());
      break;
    case Activation::identity:
      break;
  }
}

}  // namespace detail

/// Batched forward pass; `input` is in_dim x batch.
template <typename T>
MlpCache<T> mlp_forward(const Mlp<T>& params, const Matrix<T>& input) {
  if (params.layers.empty()) throw StructuralError("mlp_forward: network has no layers");
  if (input.rows() != params.input_dim())
    throw StructuralError("mlp_forward: input has " + std::to_string(input.rows()) + " rows, network expects " +
                          std::to_string(params.input_dim()));
  MlpCache<T> cache;
  cache.input = input;
  cache.pre.resize(params.layers.size());
  cache.post.resize(params.layers.size());
  const Matrix<T>* x = &cache.input;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    cache.pre[k].noalias() = l.weight * (*x);
    cache.pre[k].colwise() += l.bias;
    detail::activate(l.activation, cache.pre[k], cache.post[k]);
    x = &cache.post[k];
  }
  return cache;
}

/// Single-sample convenience overload.
template <typename T>
Vector<T> mlp_forward(const Mlp<T>& params, const Vector<T>& input) {
  Matrix<T> x = input;
  return mlp_forward(params, x).output().col(0);
}

template <typename T>
struct MlpGrad {
  Mlp<T> params;
  Matrix<T> input;
};

/// Gradients of sum over the batch of <output, output_grad> with respect to
/// the parameters and the input.
template <typename T>
MlpGrad<T> mlp_backward(const Mlp<T>& params, const MlpCache<T>& cache, const Matrix<T>& output_grad) {
  const std::size_t n = params.layers.size();
  if (cache.pre.size() != n || cache.post.size() != n)
    throw StructuralError("mlp_backward: cache was not produced by this network");
  if (output_grad.rows() != params.output_dim() || output_grad.cols() != cache.input.cols())
    throw StructuralError("mlp_backward: output gradient shape does not match forward output");
  MlpGrad<T> g;
  g.params.layers.resize(n);
  Matrix<T> delta = output_grad;
  for (std::size_t k = n; k-- > 0;) {
    const auto& l = params.layers[k];
    if (cache.pre[k].rows() != l.out_dim()) throw StructuralError("mlp_backward: cache shape mismatch");
    detail::activation_backward(l.activation, cache.pre[k], cache.post[k], delta);
    const Matrix<T>& x = k == 0 ? cache.input : cache.post[k - 1];
    auto& gl = g.params.layers[k];
    gl.activation = l.activation;
    gl.weight.noalias() = delta * x.transpose();
    gl.bias = delta.rowwise().sum();
    Matrix<T> next;
    next.noalias() = l.weight.transpose() * delta;
    delta = std::move(next);
  }
  g.input = std::move(delta);
  return g;
}

/// Input gradient only; skips parameter gradient products.
template <typename T>
Matrix<T> mlp_input_grad(const Mlp<T>& params, const MlpCache<T>& cache, const Matrix<T>& output_grad) {
  const std::size_t n = params.layers.size();
  if (cache.pre.size() != n) throw StructuralError("mlp_input_grad: cache was not produced by this network");
  if (output_grad.rows() != params.output_dim() || output_grad.cols() != cache.input.cols())
    throw StructuralError("mlp_input_grad: output gradient shape does not match forward output");
  Matrix<T> delta = output_grad;
  for (std::size_t k = n; k-- > 0;) {
    const auto& l = params.layers[k];
    detail::activation_backward(l.activation, cache.pre[k], cache.post[k], delta);
    Matrix<T> next;
    next.noalias() = l.weight.transpose() * delta;
    delta = std::move(next);
  }
  return delta;
}

}  // namespace recall::numkit
