#pragma once

#include <cmath>
#include <cstdint>

#include "recall/errors.hpp"
#include "recall/numkit/mlp.hpp"

namespace recall::numkit {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  Mlp<T> first_moment;
  Mlp<T> second_moment;
  std::int64_t step = 0;
  AdamHyper hyper;

  static AdamState for_params(const Mlp<T>& params, AdamHyper hyper = {}) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0, hyper};
  }
};

/// One bias-corrected Adam step. A non-finite gradient rejects the whole
/// update: parameters and state are left untouched and NumericError is
/// thrown.
template <typename T>
void adam_update(Mlp<T>& params, const Mlp<T>& grads, AdamState<T>& state) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment))
    throw StructuralError("adam_update: parameter, gradient and moment shapes differ");
  if (!grads.all_finite()) throw NumericError("adam_update: non-finite gradient, update rejected");

  const auto& h = state.hyper;
  const std::int64_t t = state.step + 1;
  const T b1 = static_cast<T>(h.beta1);
  const T b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(h.lr);
  const T eps = static_cast<T>(h.eps);

  auto apply = [&](auto& p, const auto& g, auto& m, auto& v) {
    m.array() = b1 * m.array() + (T(1) - b1) * g.array();
    v.array() = b2 * v.array() + (T(1) - b2) * g.array().square();
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    auto& p = params.layers[k];
    const auto& g = grads.layers[k];
    auto& m = state.first_moment.layers[k];
    auto& v = state.second_moment.layers[k];
    apply(p.weight, g.weight, m.weight, v.weight);
    apply(p.bias, g.bias, m.bias, v.bias);
  }
  state.step = t;
}

/// Adam on a single scalar parameter (entropy temperature).
struct ScalarAdam {
  double first_moment = 0.0;
  double second_moment = 0.0;
  std::int64_t step = 0;
  AdamHyper hyper;

  double update(double param, double grad) {
    if (!std::isfinite(grad)) throw NumericError("scalar adam: non-finite gradient, update rejected");
    ++step;
    first_moment = hyper.beta1 * first_moment + (1.0 - hyper.beta1) * grad;
    second_moment = hyper.beta2 * second_moment + (1.0 - hyper.beta2) * grad * grad;
    const double m_hat = first_moment / (1.0 - std::pow(hyper.beta1, static_cast<double>(step)));
    const double v_hat = second_moment / (1.0 - std::pow(hyper.beta2, static_cast<double>(step)));
    return param - hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
};

}  // namespace recall::numkit
