#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "aisle/errors.hpp"
#include "aisle/importance.hpp"
#include "aisle/rng.hpp"

/**
 * \file
 * \brief Linear-Gaussian benchmark model and its fully-factored Gaussian
 * proposal.
 *
 * Generative model: z ~ N(mu, Sigma), x | z ~ N(z, I), with theta = mu and a
 * known covariance Sigma. Proposal: q(z | x) = N(A x + b, diag(exp(2 c))),
 * reparametrised as z = A x + b + exp(c) * e with e ~ N(0, I).
 *
 * Gradients use denominator layout. The flattened proposal parameter vector is
 * (a_1, ..., a_D, b, c), where a_d is the d-th row of A.
 */

namespace aisle {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2 pi)

namespace detail {

inline void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw InvalidInput(std::string(what) + ": dimension " + std::to_string(got) + ", expected " +
                       std::to_string(want));
  }
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.array().isFinite().all(); }

}  // namespace detail

/// Length of the flattened proposal parameter vector, D^2 + 2D.
constexpr Eigen::Index phi_size(Eigen::Index dim) { return dim * dim + 2 * dim; }
/// Offset of row a_d in the flattened layout.
constexpr Eigen::Index a_offset(Eigen::Index d, Eigen::Index dim) { return d * dim; }
constexpr Eigen::Index b_offset(Eigen::Index dim) { return dim * dim; }
constexpr Eigen::Index c_offset(Eigen::Index dim) { return dim * dim + dim; }

/// Prior mean theta = mu and fixed prior covariance Sigma, with the
/// factorisations every density and gradient needs.
class ModelSpec {
 public:
  ModelSpec(Vector mu, Matrix sigma) : mu_(std::move(mu)), sigma_(std::move(sigma)) {
    const auto dim = sigma_.rows();
    if (dim == 0 || sigma_.cols() != dim) throw InvalidInput("ModelSpec: Sigma must be square and non-empty");
    detail::require_dim(mu_.size(), dim, "ModelSpec mu");
    if (!detail::all_finite(sigma_) || !detail::all_finite(mu_)) {
      throw InvalidInput("ModelSpec: non-finite entries");
    }
    if ((sigma_ - sigma_.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
      throw InvalidInput("ModelSpec: Sigma is not symmetric");
    }
    sigma_chol_.compute(sigma_);
    if (sigma_chol_.info() != Eigen::Success) {
      throw InvalidInput("ModelSpec: Sigma is not positive definite");
    }
    const Matrix identity = Matrix::Identity(dim, dim);
    sigma_inv_ = sigma_chol_.solve(identity);
    sigma_inv_ = 0.5 * (sigma_inv_ + sigma_inv_.transpose()).eval();

    marginal_chol_.compute(identity + sigma_);
    Eigen::LLT<Matrix> precision_chol(sigma_inv_ + identity);
    if (marginal_chol_.info() != Eigen::Success || precision_chol.info() != Eigen::Success) {
      throw InvalidInput("ModelSpec: posterior covariance is not positive definite");
    }
    posterior_cov_ = precision_chol.solve(identity);
    posterior_cov_ = 0.5 * (posterior_cov_ + posterior_cov_.transpose()).eval();

    log_det_sigma_ = 2.0 * sigma_chol_.matrixLLT().diagonal().array().log().sum();
    log_det_marginal_ = 2.0 * marginal_chol_.matrixLLT().diagonal().array().log().sum();
  }

  /// Same covariance, new prior mean; reuses the cached factorisations.
  [[nodiscard]] ModelSpec with_mu(Vector mu) const {
    detail::require_dim(mu.size(), dim(), "ModelSpec::with_mu");
    ModelSpec copy = *this;
    copy.mu_ = std::move(mu);
    return copy;
  }

  [[nodiscard]] Eigen::Index dim() const noexcept { return mu_.size(); }
  [[nodiscard]] const Vector& mu() const noexcept { return mu_; }
  [[nodiscard]] const Matrix& sigma() const noexcept { return sigma_; }
  [[nodiscard]] const Matrix& sigma_inv() const noexcept { return sigma_inv_; }
  /// P = (Sigma^{-1} + I)^{-1}.
  [[nodiscard]] const Matrix& posterior_cov() const noexcept { return posterior_cov_; }
  [[nodiscard]] const Eigen::LLT<Matrix>& sigma_chol() const noexcept { return sigma_chol_; }
  [[nodiscard]] const Eigen::LLT<Matrix>& marginal_chol() const noexcept { return marginal_chol_; }
  [[nodiscard]] double log_det_sigma() const noexcept { return log_det_sigma_; }
  [[nodiscard]] double log_det_marginal() const noexcept { return log_det_marginal_; }

 private:
  Vector mu_;
  Matrix sigma_;
  Matrix sigma_inv_;
  Matrix posterior_cov_;
  Eigen::LLT<Matrix> sigma_chol_;
  Eigen::LLT<Matrix> marginal_chol_;
  double log_det_sigma_ = 0.0;
  double log_det_marginal_ = 0.0;
};

/// Proposal parameters phi = (A, b, c) with C = diag(exp(2 c)).
class ProposalParams {
 public:
  ProposalParams(Matrix a, Vector b, Vector c) : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {
    const auto dim = b_.size();
    if (dim == 0) throw InvalidInput("ProposalParams: empty");
    detail::require_dim(a_.rows(), dim, "ProposalParams A rows");
    detail::require_dim(a_.cols(), dim, "ProposalParams A cols");
    detail::require_dim(c_.size(), dim, "ProposalParams c");
    if (!detail::all_finite(a_) || !detail::all_finite(b_) || !detail::all_finite(c_)) {
      throw InvalidInput("ProposalParams: non-finite entries");
    }
  }

  /// Inverse of flatten().
  static ProposalParams from_flat(const Eigen::Ref<const Vector>& flat, Eigen::Index dim) {
    detail::require_dim(flat.size(), phi_size(dim), "ProposalParams::from_flat");
    Matrix a(dim, dim);
    for (Eigen::Index d = 0; d < dim; ++d) a.row(d) = flat.segment(a_offset(d, dim), dim).transpose();
    return {std::move(a), flat.segment(b_offset(dim), dim), flat.segment(c_offset(dim), dim)};
  }

  [[nodiscard]] Vector flatten() const {
    const auto dim = this->dim();
    Vector flat(phi_size(dim));
    for (Eigen::Index d = 0; d < dim; ++d) flat.segment(a_offset(d, dim), dim) = a_.row(d).transpose();
    flat.segment(b_offset(dim), dim) = b_;
    flat.segment(c_offset(dim), dim) = c_;
    return flat;
  }

  [[nodiscard]] Eigen::Index dim() const noexcept { return b_.size(); }
  [[nodiscard]] const Matrix& a() const noexcept { return a_; }
  [[nodiscard]] const Vector& b() const noexcept { return b_; }
  [[nodiscard]] const Vector& c() const noexcept { return c_; }

  /// A x + b.
  [[nodiscard]] Vector mean(const Vector& x) const {
    detail::require_dim(x.size(), dim(), "proposal mean x");
    return a_ * x + b_;
  }
  /// Diagonal of C^{1/2}.
  [[nodiscard]] Vector scale() const { return c_.array().exp(); }
  /// Diagonal of C^{-1/2}.
  [[nodiscard]] Vector inv_scale() const { return (-c_.array()).exp(); }

 private:
  Matrix a_;
  Vector b_;
  Vector c_;
};

// --- densities ---------------------------------------------------------------

/// log N(z; mu, Sigma) + log N(x; z, I).
inline double log_gamma(const ModelSpec& model, const Vector& x, const Vector& z) {
  const auto dim = model.dim();
  detail::require_dim(x.size(), dim, "log_gamma x");
  detail::require_dim(z.size(), dim, "log_gamma z");
  const Vector r = z - model.mu();
  const double prior_quad = r.dot(model.sigma_chol().solve(r));
  const double lik_quad = (x - z).squaredNorm();
  return -static_cast<double>(dim) * kLog2Pi - 0.5 * model.log_det_sigma() - 0.5 * prior_quad -
         0.5 * lik_quad;
}

inline double log_q(const ProposalParams& phi, const Vector& x, const Vector& z) {
  detail::require_dim(z.size(), phi.dim(), "log_q z");
  const Vector e = (z - phi.mean(x)).cwiseProduct(phi.inv_scale());
  return -0.5 * static_cast<double>(phi.dim()) * kLog2Pi - phi.c().sum() - 0.5 * e.squaredNorm();
}

/// h(e) = A x + b + C^{1/2} e.
inline Vector reparam_forward(const ProposalParams& phi, const Vector& x, const Vector& e) {
  detail::require_dim(e.size(), phi.dim(), "reparam_forward e");
  return phi.mean(x) + phi.scale().cwiseProduct(e);
}

/// h^{-1}(z) = C^{-1/2} (z - A x - b).
inline Vector reparam_inverse(const ProposalParams& phi, const Vector& x, const Vector& z) {
  detail::require_dim(z.size(), phi.dim(), "reparam_inverse z");
  return (z - phi.mean(x)).cwiseProduct(phi.inv_scale());
}

struct PosteriorParams {
  Vector nu;
  Matrix cov;
};

/// Exact posterior N(nu, P) with nu = P (Sigma^{-1} mu + x).
inline PosteriorParams posterior_params(const ModelSpec& model, const Vector& x) {
  detail::require_dim(x.size(), model.dim(), "posterior_params x");
  return {model.posterior_cov() * (model.sigma_inv() * model.mu() + x), model.posterior_cov()};
}

/// log Z = log N(x; mu, I + Sigma).
inline double log_marginal_likelihood(const ModelSpec& model, const Vector& x) {
  detail::require_dim(x.size(), model.dim(), "log_marginal_likelihood x");
  const Vector r = x - model.mu();
  const double quad = r.dot(model.marginal_chol().solve(r));
  return -0.5 * static_cast<double>(model.dim()) * kLog2Pi - 0.5 * model.log_det_marginal() - 0.5 * quad;
}

/// Maximum-likelihood prior mean: the componentwise sample mean.
inline Vector theta_ml(std::span<const Vector> observations) {
  if (observations.empty()) throw InvalidInput("theta_ml: no observations");
  Vector mean = Vector::Zero(observations.front().size());
  for (const auto& x : observations) {
    detail::require_dim(x.size(), mean.size(), "theta_ml observation");
    mean += x;
  }
  return mean / static_cast<double>(observations.size());
}

// --- gradients ----------------------------------------------------------------

/// grad_theta log gamma = Sigma^{-1} (z - mu).
inline Vector grad_theta_log_gamma(const ModelSpec& model, const Vector& z) {
  detail::require_dim(z.size(), model.dim(), "grad_theta_log_gamma z");
  return model.sigma_chol().solve(z - model.mu());
}

/// grad_z log gamma = Sigma^{-1} (mu - z) + x - z.
inline Vector grad_z_log_gamma(const ModelSpec& model, const Vector& x, const Vector& z) {
  detail::require_dim(x.size(), model.dim(), "grad_z_log_gamma x");
  return model.sigma_chol().solve(model.mu() - z) + x - z;
}

/// grad_z log q = -C^{-1} (z - A x - b).
inline Vector grad_z_log_q(const ProposalParams& phi, const Vector& x, const Vector& z) {
  const Vector inv_scale = phi.inv_scale();
  return -(z - phi.mean(x)).cwiseProduct(inv_scale).cwiseProduct(inv_scale);
}

/// grad_z log w = grad_z log gamma - grad_z log q.
inline Vector grad_z_log_weight(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                const Vector& z) {
  return grad_z_log_gamma(model, x, z) - grad_z_log_q(phi, x, z);
}

/// Score grad_phi log q(z) in the flattened layout.
inline Vector score_phi(const ProposalParams& phi, const Vector& x, const Vector& z) {
  const auto dim = phi.dim();
  const Vector e = reparam_inverse(phi, x, z);
  const Vector scaled = e.cwiseProduct(phi.inv_scale());  // C^{-1/2} e
  Vector out(phi_size(dim));
  for (Eigen::Index d = 0; d < dim; ++d) out.segment(a_offset(d, dim), dim) = scaled[d] * x;
  out.segment(b_offset(dim), dim) = scaled;
  out.segment(c_offset(dim), dim) = e.array().square() - 1.0;
  return out;
}

/// Path derivative: the phi-gradient of log w(h_phi(e)) taken through h only,
/// evaluated at e = h^{-1}(z), in the flattened layout.
inline Vector path_derivative(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                              const Vector& z) {
  const auto dim = phi.dim();
  const Vector g = grad_z_log_weight(model, phi, x, z);
  const Vector e = reparam_inverse(phi, x, z);
  Vector out(phi_size(dim));
  for (Eigen::Index d = 0; d < dim; ++d) out.segment(a_offset(d, dim), dim) = g[d] * x;
  out.segment(b_offset(dim), dim) = g;
  out.segment(c_offset(dim), dim) = e.cwiseProduct(phi.scale()).cwiseProduct(g);
  return out;
}

// --- particle sets --------------------------------------------------------------

/// K reparametrised particles for one observation, with everything the
/// estimators consume. Column k of each matrix belongs to particle k.
struct ParticleSet {
  Vector x;
  Matrix noise;              ///< e^k, D x K
  Matrix particles;          ///< z^k = h(e^k), D x K
  LogWeights log_weights;    ///< log gamma(z^k) - log q(z^k)
  NormalizedWeights weights; ///< self-normalised weights
  Matrix grad_theta;         ///< grad_theta log gamma(z^k), D x K
  Matrix grad_z_log_w;       ///< grad_z log w(z^k), D x K
  Matrix scaled_noise;       ///< C^{-1/2} e^k: score a/b blocks, D x K
  Matrix score_c;            ///< e^k * e^k - 1, D x K
  Matrix path_c;             ///< e^k * C^{1/2} grad_z log w, D x K

  [[nodiscard]] Eigen::Index size() const noexcept { return noise.cols(); }
  [[nodiscard]] Eigen::Index dim() const noexcept { return noise.rows(); }

  /// Flattened score of particle k.
  [[nodiscard]] Vector score(Eigen::Index k) const {
    return expand(scaled_noise.col(k), score_c.col(k));
  }

  /// Flattened path derivative of particle k.
  [[nodiscard]] Vector path(Eigen::Index k) const {
    return expand(grad_z_log_w.col(k), path_c.col(k));
  }

  /// sum_k coeffs_k * score(k), using the rank-one structure of the A-block.
  [[nodiscard]] Vector score_combination(const Vector& coeffs) const {
    return expand(scaled_noise * coeffs, score_c * coeffs);
  }

  /// sum_k coeffs_k * path(k), using the rank-one structure of the A-block.
  [[nodiscard]] Vector path_combination(const Vector& coeffs) const {
    return expand(grad_z_log_w * coeffs, path_c * coeffs);
  }

 private:
  // Builds (u_1 x, ..., u_D x, u, v) for the b-block u and c-block v.
  [[nodiscard]] Vector expand(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) const {
    const auto dim = this->dim();
    Vector out(phi_size(dim));
    for (Eigen::Index d = 0; d < dim; ++d) out.segment(a_offset(d, dim), dim) = u[d] * x;
    out.segment(b_offset(dim), dim) = u;
    out.segment(c_offset(dim), dim) = v;
    return out;
  }
};

/// Builds a particle set from given standard-normal noise (one column per
/// particle). Throws InvalidInput if any log-weight is not finite.
inline ParticleSet particles_from_noise(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                        Matrix noise) {
  const auto dim = model.dim();
  detail::require_dim(phi.dim(), dim, "particle set proposal");
  detail::require_dim(x.size(), dim, "particle set x");
  detail::require_dim(noise.rows(), dim, "particle set noise");
  if (noise.cols() == 0) throw InvalidInput("particle set: K must be at least 1");

  const Vector mean = phi.mean(x);
  const Vector scale = phi.scale();
  const Vector inv_scale = phi.inv_scale();

  Matrix z = (scale.asDiagonal() * noise).colwise() + mean;
  Matrix centered = z.colwise() - model.mu();
  Matrix grad_theta = model.sigma_chol().solve(centered);

  const double prior_const = -static_cast<double>(dim) * kLog2Pi - 0.5 * model.log_det_sigma();
  const double q_const = -0.5 * static_cast<double>(dim) * kLog2Pi - phi.c().sum();
  Matrix residual = (-z).colwise() + x;  // x - z
  const Eigen::RowVectorXd lw_row =
      (prior_const - q_const) - 0.5 * centered.cwiseProduct(grad_theta).colwise().sum().array() -
      0.5 * residual.colwise().squaredNorm().array() + 0.5 * noise.colwise().squaredNorm().array();
  Vector lw = lw_row.transpose();

  LogWeights log_weights(std::move(lw));
  auto weights = self_normalize(log_weights);

  Matrix scaled_noise = inv_scale.asDiagonal() * noise;
  Matrix grad_z_log_w = residual - grad_theta + scaled_noise;
  Matrix score_c = noise.array().square() - 1.0;
  Matrix path_c = noise.cwiseProduct(scale.asDiagonal() * grad_z_log_w);

  return ParticleSet{x,
                     std::move(noise),
                     std::move(z),
                     std::move(log_weights),
                     std::move(weights),
                     std::move(grad_theta),
                     std::move(grad_z_log_w),
                     std::move(scaled_noise),
                     std::move(score_c),
                     std::move(path_c)};
}

/// Draws K i.i.d. particles from q. Noise is consumed particle by particle,
/// dimension by dimension.
inline ParticleSet sample_particles(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                    Eigen::Index num_particles, Engine& engine) {
  if (num_particles < 1) throw InvalidInput("sample_particles: K must be at least 1");
  StandardNormal normal;
  Matrix noise(model.dim(), num_particles);
  for (Eigen::Index k = 0; k < num_particles; ++k) {
    for (Eigen::Index d = 0; d < model.dim(); ++d) noise(d, k) = normal(engine);
  }
  return particles_from_noise(model, phi, x, std::move(noise));
}

}  // namespace aisle
