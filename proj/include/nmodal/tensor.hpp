#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmodal/error.hpp"

namespace nmodal {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), ErrorKind::dimension_mismatch,
          "cosine_similarity: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double na = a.norm();
  const double nb = b.norm();
  require(na > 0.0 && nb > 0.0, ErrorKind::zero_norm, "cosine_similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

inline Vector l2_normalize(const Vector& a) {
  const double n = a.norm();
  require(n > 0.0, ErrorKind::zero_norm, "l2_normalize of a zero vector");
  return a / n;
}

// Exact GELU, x * Phi(x).
inline double gelu(double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline Vector gelu(const Vector& x) { return x.unaryExpr([](double v) { return gelu(v); }); }

inline constexpr double kLayerNormEps = 1e-5;

/// Layer normalisation with the population (1/n) variance.
/// A constant input yields exactly `bias` as long as var + eps > 0.
inline Vector layer_norm(const Vector& x, const Vector& gain, const Vector& bias,
                         double eps = kLayerNormEps) {
  require(x.size() == gain.size() && x.size() == bias.size(), ErrorKind::dimension_mismatch,
          "layer_norm: input, gain and bias lengths differ");
  require(x.size() > 0, ErrorKind::invalid_argument, "layer_norm of an empty vector");
  require(eps >= 0.0, ErrorKind::invalid_argument, "layer_norm eps must be non-negative");
  const double n = static_cast<double>(x.size());
  const double mean = x.sum() / n;
  const Vector centered = x.array() - mean;
  const double var = centered.squaredNorm() / n;
  require(std::isfinite(var), ErrorKind::numeric, "layer_norm: non-finite input");
  require(var + eps > 0.0, ErrorKind::zero_norm, "layer_norm: zero variance with eps = 0");
  const double inv_std = 1.0 / std::sqrt(var + eps);
  return (gain.array() * (centered.array() * inv_std) + bias.array()).matrix();
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

  bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update; `step` is the 1-based step index.
inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                      std::uint64_t step, const AdamConfig& cfg = {}) {
  require(params.size() == grads.size() && state.m.size() == params.size() &&
              state.v.size() == params.size(),
          ErrorKind::dimension_mismatch, "adam_step: parameter, gradient and moment sizes differ");
  require(step >= 1, ErrorKind::invalid_argument, "adam_step: step index starts at 1");
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

template <typename Derived>
std::span<double> as_span(Eigen::PlainObjectBase<Derived>& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

template <typename Derived>
std::span<const double> as_span(const Eigen::PlainObjectBase<Derived>& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

/// Normalises every row in place and returns the pre-normalisation norms.
inline Vector normalize_rows(Matrix& x) {
  Vector norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    require(norms[i] > 0.0, ErrorKind::zero_norm, "row " + std::to_string(i) + " has zero norm");
    x.row(i) /= norms[i];
  }
  return norms;
}

}  // namespace nmodal
