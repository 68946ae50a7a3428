#pragma once

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "aisle/errors.hpp"

/**
 * \file
 * \brief Self-normalised importance sampling in log space.
 *
 * Weights are never exponentiated before the maximum log-weight has been
 * subtracted, so weight ranges far beyond the double exponent range are safe.
 */

namespace aisle {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Per-particle log importance weights log w(z^k). Non-empty and finite.
class LogWeights {
 public:
  explicit LogWeights(Vector values) : values_(std::move(values)) {
    if (values_.size() == 0) throw InvalidInput("log-weights: empty");
    for (Eigen::Index k = 0; k < values_.size(); ++k) {
      if (!std::isfinite(values_[k])) {
        throw InvalidInput("log-weights: entry " + std::to_string(k) + " is not finite");
      }
    }
  }

  [[nodiscard]] const Vector& values() const noexcept { return values_; }
  [[nodiscard]] Eigen::Index size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](Eigen::Index k) const { return values_[k]; }

 private:
  Vector values_;
};

/// Self-normalised weights: non-negative, summing to one.
class NormalizedWeights {
 public:
  /// Validating constructor for weights computed elsewhere.
  static NormalizedWeights from_values(Vector values, double tolerance = 1e-12) {
    if (values.size() == 0) throw InvalidInput("normalized weights: empty");
    for (Eigen::Index k = 0; k < values.size(); ++k) {
      if (!(values[k] >= 0.0) || !std::isfinite(values[k])) {
        throw InvalidInput("normalized weights: entry " + std::to_string(k) + " is not in [0,1]");
      }
    }
    if (std::abs(values.sum() - 1.0) > tolerance) {
      throw InvalidInput("normalized weights: entries do not sum to one");
    }
    return NormalizedWeights(std::move(values));
  }

  [[nodiscard]] const Vector& values() const noexcept { return values_; }
  [[nodiscard]] Eigen::Index size() const noexcept { return values_.size(); }
  [[nodiscard]] double operator[](Eigen::Index k) const { return values_[k]; }

 private:
  explicit NormalizedWeights(Vector values) : values_(std::move(values)) {}
  friend NormalizedWeights self_normalize(const LogWeights& log_weights);

  Vector values_;
};

/// Softmax of the log-weights with max-subtraction.
inline NormalizedWeights self_normalize(const LogWeights& log_weights) {
  const Vector& lw = log_weights.values();
  Vector w = (lw.array() - lw.maxCoeff()).exp();
  w /= w.sum();
  return NormalizedWeights(std::move(w));
}

inline NormalizedWeights self_normalize(const Vector& log_weights) {
  return self_normalize(LogWeights(log_weights));
}

/// log-sum-exp of the log-weights.
inline double log_sum_exp(const LogWeights& log_weights) {
  const Vector& lw = log_weights.values();
  const double m = lw.maxCoeff();
  return m + std::log((lw.array() - m).exp().sum());
}

/// log of the unbiased evidence estimate (1/K) sum_k w(z^k).
inline double log_evidence_estimate(const LogWeights& log_weights) {
  return log_sum_exp(log_weights) - std::log(static_cast<double>(log_weights.size()));
}

/// Weighted average sum_k w_k f_k, with one column of `f_values` per particle.
inline Vector snis_expectation(const NormalizedWeights& weights, const Matrix& f_values) {
  if (f_values.cols() != weights.size()) {
    throw InvalidInput("snis_expectation: " + std::to_string(f_values.cols()) +
                       " function values for " + std::to_string(weights.size()) + " weights");
  }
  return f_values * weights.values();
}

/// Effective sample size 1 / sum_k w_k^2, in [1, K].
inline double ess(const NormalizedWeights& weights) {
  return 1.0 / weights.values().squaredNorm();
}

/// Weights proportional to w^alpha.
inline NormalizedWeights temper(const LogWeights& log_weights, double alpha) {
  return self_normalize(LogWeights(alpha * log_weights.values()));
}

struct RegularizedWeights {
  double alpha_star = 1.0;
  NormalizedWeights weights;
};

inline constexpr double kAlphaTolerance = 1e-8;
inline constexpr int kAlphaMaxIterations = 200;

/// Tempers the weights with the largest alpha in [0, 1] whose effective
/// sample size is still at least eta * K. Bisection keeps the lower bracket
/// feasible, so the returned weights always satisfy the ESS target.
inline RegularizedWeights regularize_weights(const LogWeights& log_weights, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) {
    throw InvalidInput("regularize_weights: eta must lie in (0, 1], got " + std::to_string(eta));
  }
  // Relative slack absorbs rounding in 1 / sum(w^2), e.g. ESS of K equal weights at eta = 1.
  const double target = eta * static_cast<double>(log_weights.size()) * (1.0 - 1e-12);

  auto full = self_normalize(log_weights);
  if (ess(full) >= target) return {1.0, std::move(full)};

  // ESS(0) = K >= target, ESS(1) < target.
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < kAlphaMaxIterations && hi - lo > kAlphaTolerance; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ess(temper(log_weights, mid)) >= target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return {lo, temper(log_weights, lo)};
}

}  // namespace aisle
