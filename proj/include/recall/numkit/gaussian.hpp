#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "recall/errors.hpp"
#include "recall/numkit/mlp.hpp"

namespace recall::numkit {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kSquashEps = 1e-6;

/// Diagonal Gaussian over pre-squash actions.
template <typename T>
struct GaussianPolicyOutput {
  Vector<T> mean;
  Vector<T> log_std;
};

template <typename T>
T clamp_log_std(T v) {
  return std::clamp(v, static_cast<T>(kLogStdMin), static_cast<T>(kLogStdMax));
}

/// Reparameterized tanh-Gaussian samples for a batch (one column each).
template <typename T>
struct SquashedBatch {
  Matrix<T> pre_squash;  // u = mean + exp(log_std) * noise
  Matrix<T> action;      // tanh(u)
  Matrix<T> log_prob;    // 1 x batch
};

template <typename T>
SquashedBatch<T> squashed_sample(const Matrix<T>& mean, const Matrix<T>& log_std, const Matrix<T>& noise) {
  if (mean.rows() != log_std.rows() || mean.cols() != log_std.cols() || mean.rows() != noise.rows() ||
      mean.cols() != noise.cols())
    throw StructuralError("squashed_sample: mean, log_std and noise shapes differ");
  SquashedBatch<T> s;
  const auto std_dev = log_std.array().exp();
  s.pre_squash = (mean.array() + std_dev * noise.array()).matrix();
  s.action = s.pre_squash.array().tanh().matrix();
  const T half_log_two_pi = static_cast<T>(0.5 * std::log(2.0 * std::numbers::pi));
  const T eps = static_cast<T>(kSquashEps);
  Matrix<T> per_dim = (T(-0.5) * noise.array().square() - log_std.array() - half_log_two_pi -
                       (T(1) - s.action.array().square() + eps).log())
                          .matrix();
  s.log_prob = per_dim.colwise().sum();
  return s;
}

template <typename T>
struct SquashedGrad {
  Matrix<T> mean;
  Matrix<T> log_std;
};

/// Pulls gradients on (action, log_prob) back to (mean, log_std) with the
/// noise held fixed.
template <typename T>
SquashedGrad<T> squashed_sample_backward(const Matrix<T>& log_std, const Matrix<T>& noise,
                                         const SquashedBatch<T>& sample, const Matrix<T>& action_grad,
                                         const Matrix<T>& log_prob_grad) {
  if (action_grad.rows() != sample.action.rows() || action_grad.cols() != sample.action.cols() ||
      log_prob_grad.rows() != 1 || log_prob_grad.cols() != sample.action.cols())
    throw StructuralError("squashed_sample_backward: gradient shapes do not match the sample");
  const T eps = static_cast<T>(kSquashEps);
  const auto t = sample.action.array();
  const auto one_minus_t2 = T(1) - t.square();
  const Matrix<T> dlp_full = log_prob_grad.replicate(sample.action.rows(), 1);
  const auto dlp = dlp_full.array();
  Matrix<T> grad_u =
      (action_grad.array() * one_minus_t2 + dlp * (T(2) * t * one_minus_t2 / (one_minus_t2 + eps))).matrix();
  SquashedGrad<T> g;
  g.log_std = (grad_u.array() * log_std.array().exp() * noise.array() - dlp).matrix();
  g.mean = std::move(grad_u);
  return g;
}

/// action = tanh(mean + exp(log_std) * noise) with the tanh-corrected
/// log-density of the sample.
template <typename T>
std::pair<Vector<T>, T> sample_squashed_gaussian(const GaussianPolicyOutput<T>& out, const Vector<T>& noise) {
  Matrix<T> ls = out.log_std.unaryExpr([](T v) { return clamp_log_std(v); });
  Matrix<T> m = out.mean;
  Matrix<T> n = noise;
  auto s = squashed_sample<T>(m, ls, n);
  return {s.action.col(0), s.log_prob(0, 0)};
}

/// KL(p || q) per column for diagonal Gaussians.
template <typename T>
Matrix<T> diag_gaussian_kl(const Matrix<T>& p_mean, const Matrix<T>& p_log_std, const Matrix<T>& q_mean,
                           const Matrix<T>& q_log_std) {
  if (p_mean.rows() != q_mean.rows() || p_mean.cols() != q_mean.cols() || p_log_std.rows() != q_log_std.rows() ||
      p_log_std.cols() != q_log_std.cols() || p_mean.rows() != p_log_std.rows())
    throw StructuralError("diag_gaussian_kl: dimension mismatch");
  const auto var_ratio = (T(2) * (p_log_std.array() - q_log_std.array())).exp();
  const auto mean_term = (p_mean.array() - q_mean.array()).square() * (T(-2) * q_log_std.array()).exp();
  Matrix<T> per_dim =
      (q_log_std.array() - p_log_std.array() + T(0.5) * (var_ratio + mean_term) - T(0.5)).matrix();
  return per_dim.colwise().sum();
}

template <typename T>
T diag_gaussian_kl(const GaussianPolicyOutput<T>& p, const GaussianPolicyOutput<T>& q) {
  Matrix<T> pm = p.mean, pl = p.log_std, qm = q.mean, ql = q.log_std;
  return diag_gaussian_kl<T>(pm, pl, qm, ql)(0, 0);
}

/// Gradient of sum_columns weight_j * KL(p_j || q_j) with respect to p.
template <typename T>
SquashedGrad<T> diag_gaussian_kl_grad(const Matrix<T>& p_mean, const Matrix<T>& p_log_std,
                                      const Matrix<T>& q_mean, const Matrix<T>& q_log_std,
                                      const Matrix<T>& weight) {
  const Matrix<T> w_full = weight.replicate(p_mean.rows(), 1);
  const auto w = w_full.array();
  const auto inv_q_var = (T(-2) * q_log_std.array()).exp();
  SquashedGrad<T> g;
  g.mean = (w * (p_mean.array() - q_mean.array()) * inv_q_var).matrix();
  g.log_std = (w * ((T(2) * (p_log_std.array() - q_log_std.array())).exp() - T(1))).matrix();
  return g;
}

}  // namespace recall::numkit
