#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <Eigen/Dense>

#include "aisle/errors.hpp"
#include "aisle/gaussian_model.hpp"

/**
 * \file
 * \brief Ground truth for verification: finite differences, closed-form
 * Gaussian divergences, 1-D quadrature and a brute-force alpha* search.
 *
 * Nothing in the estimator or harness headers includes this file.
 */

namespace aisle::oracles {

struct FdSpec {
  double step = 1e-5;
};

/// Central-difference gradient of f at `point`.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& point,
                          FdSpec spec = {}) {
  if (!(spec.step > 0.0)) throw InvalidInput("fd_gradient: step must be positive");
  Vector grad(point.size());
  Vector probe = point;
  for (Eigen::Index j = 0; j < point.size(); ++j) {
    probe[j] = point[j] + spec.step;
    const double up = f(probe);
    probe[j] = point[j] - spec.step;
    const double down = f(probe);
    probe[j] = point[j];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::domain_error("fd_gradient: non-finite evaluation at component " + std::to_string(j));
    }
    grad[j] = (up - down) / (2.0 * spec.step);
  }
  return grad;
}

/// Log-density of N(mean, cov) via an LDLT factorisation.
inline double gaussian_log_density(const Vector& z, const Vector& mean, const Matrix& cov) {
  Eigen::LDLT<Matrix> ldlt(cov);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw std::domain_error("gaussian_log_density: covariance is not positive definite");
  }
  const Vector r = z - mean;
  const double log_det = ldlt.vectorD().array().log().sum();
  return -0.5 * (static_cast<double>(z.size()) * kLog2Pi + log_det + r.dot(ldlt.solve(r)));
}

/// KL(N(mean1, cov1) || N(mean2, cov2)).
inline double gaussian_kl(const Vector& mean1, const Matrix& cov1, const Vector& mean2, const Matrix& cov2) {
  Eigen::LLT<Matrix> chol1(cov1);
  Eigen::LLT<Matrix> chol2(cov2);
  if (chol1.info() != Eigen::Success || chol2.info() != Eigen::Success) {
    throw std::domain_error("gaussian_kl: covariance is not positive definite");
  }
  const auto dim = static_cast<double>(mean1.size());
  const double log_det1 = 2.0 * Matrix(chol1.matrixL()).diagonal().array().log().sum();
  const double log_det2 = 2.0 * Matrix(chol2.matrixL()).diagonal().array().log().sum();
  const Vector diff = mean2 - mean1;
  const double trace = chol2.solve(cov1).trace();
  return 0.5 * (trace + diff.dot(chol2.solve(diff)) - dim + log_det2 - log_det1);
}

inline Matrix proposal_cov(const ProposalParams& phi) {
  return (2.0 * phi.c().array()).exp().matrix().asDiagonal();
}

/// -grad_phi KL(posterior || q_phi), by finite differences of the closed form.
inline Vector inclusive_kl_phi_gradient_oracle(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                               FdSpec spec = {}) {
  const auto post = posterior_params(model, x);
  const auto dim = phi.dim();
  auto kl = [&](const Vector& flat) {
    const auto q = ProposalParams::from_flat(flat, dim);
    return gaussian_kl(post.nu, post.cov, q.mean(x), proposal_cov(q));
  };
  return -fd_gradient(kl, phi.flatten(), spec);
}

/// -grad_phi KL(q_phi || posterior), by finite differences of the closed form.
inline Vector exclusive_kl_phi_gradient_oracle(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                               FdSpec spec = {}) {
  const auto post = posterior_params(model, x);
  const auto dim = phi.dim();
  auto kl = [&](const Vector& flat) {
    const auto q = ProposalParams::from_flat(flat, dim);
    return gaussian_kl(q.mean(x), proposal_cov(q), post.nu, post.cov);
  };
  return -fd_gradient(kl, phi.flatten(), spec);
}

/// Adaptive Gauss-Kronrod integral of f over [lo, hi].
inline double integrate_1d(const std::function<double(double)>& f, double lo, double hi,
                           double relative_tolerance = 1e-9) {
  double error = 0.0;
  const double value =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 20, relative_tolerance, &error);
  return value;
}

/// chi^2(posterior || q) = int (pi/q - 1)^2 q dz for D = 1, by quadrature over
/// a 12-standard-deviation window. Requires 2/P - 1/C > 0, i.e. C > P/2;
/// otherwise pi^2/q is not integrable.
inline double chisq_divergence_oracle_1d(const ModelSpec& model, const ProposalParams& phi, const Vector& x) {
  if (model.dim() != 1) throw InvalidInput("chisq_divergence_oracle_1d: D must be 1");
  const auto post = posterior_params(model, x);
  const double p_var = post.cov(0, 0);
  const double q_var = std::exp(2.0 * phi.c()[0]);
  const double q_mean = phi.mean(x)[0];
  if (!(2.0 / p_var - 1.0 / q_var > 0.0)) {
    throw std::domain_error("chisq_divergence_oracle_1d: integral diverges (2/P - 1/C <= 0)");
  }
  // pi^2/q is a Gaussian kernel with variance 1 / (2/P - 1/C).
  const double kernel_var = 1.0 / (2.0 / p_var - 1.0 / q_var);
  const double kernel_mean = kernel_var * (2.0 * post.nu[0] / p_var - q_mean / q_var);
  const double lo = std::min({post.nu[0] - 12.0 * std::sqrt(p_var), q_mean - 12.0 * std::sqrt(q_var),
                              kernel_mean - 12.0 * std::sqrt(kernel_var)});
  const double hi = std::max({post.nu[0] + 12.0 * std::sqrt(p_var), q_mean + 12.0 * std::sqrt(q_var),
                              kernel_mean + 12.0 * std::sqrt(kernel_var)});

  auto integrand = [&](double z) {
    const double log_pi = -0.5 * (kLog2Pi + std::log(p_var) + (z - post.nu[0]) * (z - post.nu[0]) / p_var);
    const double log_q = -0.5 * (kLog2Pi + std::log(q_var) + (z - q_mean) * (z - q_mean) / q_var);
    const double ratio = std::exp(log_pi - log_q);
    return (ratio - 1.0) * (ratio - 1.0) * std::exp(log_q);
  };
  return integrate_1d(integrand, lo, hi);
}

/// -grad_phi chi^2(posterior || q) for D = 1, finite differences of the
/// quadrature.
inline Vector chisq_phi_gradient_oracle_1d(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                           FdSpec spec = {}) {
  auto chisq = [&](const Vector& flat) {
    return chisq_divergence_oracle_1d(model, ProposalParams::from_flat(flat, 1), x);
  };
  return -fd_gradient(chisq, phi.flatten(), spec);
}

/// Largest alpha on the grid {0, step, 2 step, ...} within [0, 1] whose
/// tempered effective sample size is at least eta * K. Every grid point is
/// visited, so no monotonicity in alpha is assumed.
inline double alpha_star_grid_oracle(const Vector& log_weights, double eta, double step = 1e-6) {
  if (!(step > 0.0 && step <= 1.0)) throw InvalidInput("alpha_star_grid_oracle: step must lie in (0, 1]");
  const double target = eta * static_cast<double>(log_weights.size());
  const Vector shifted = log_weights.array() - log_weights.maxCoeff();
  const auto steps = static_cast<long>(std::llround(1.0 / step));

  // w_k^{s step} built by repeated multiplication, re-anchored with exp()
  // every 1024 points to keep rounding drift negligible.
  const Vector ratio = (step * shifted.array()).exp();
  Vector w(shifted.size());
  double best = 0.0;
  for (long s = 0; s <= steps; ++s) {
    if (s % 1024 == 0) {
      w = (static_cast<double>(s) * step * shifted.array()).exp();
    } else {
      w = w.cwiseProduct(ratio);
      w = (w.array() < 1e-290).select(0.0, w);
    }
    const double sum = w.sum();
    if (sum * sum >= target * w.squaredNorm()) best = static_cast<double>(s) * step;
  }
  return best;
}

}  // namespace aisle::oracles
