#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aisle/gaussian_model.hpp"
#include "aisle/importance.hpp"
#include "aisle/parallel.hpp"
#include "aisle/rng.hpp"

namespace aisle {

/// Proposal-gradient estimators. Every estimator returns an ascent direction:
/// for the IWAE family the gradient of the bound, for the adaptive
/// importance-sampling family the negated divergence gradient.
enum class EstimatorKind : int {
  Iwae,
  IwaeStl,
  IwaeDreg,
  Rws,  ///< also the KL-based adaptive estimator without reparametrisation
  RwsDreg,
  AisleKl,  ///< equal to IwaeStl, computed independently
  AisleChisqNorep,
  AisleChisq,  ///< equal to 2K * IwaeDreg, computed independently
  AisleKlNorep = Rws,
};

inline constexpr std::array<EstimatorKind, 8> kAllEstimators{
    EstimatorKind::Iwae,    EstimatorKind::IwaeStl, EstimatorKind::IwaeDreg,        EstimatorKind::Rws,
    EstimatorKind::RwsDreg, EstimatorKind::AisleKl, EstimatorKind::AisleChisqNorep, EstimatorKind::AisleChisq};

inline std::string_view to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::Iwae: return "iwae";
    case EstimatorKind::IwaeStl: return "iwae_stl";
    case EstimatorKind::IwaeDreg: return "iwae_dreg";
    case EstimatorKind::Rws: return "rws";
    case EstimatorKind::RwsDreg: return "rws_dreg";
    case EstimatorKind::AisleKl: return "aisle_kl";
    case EstimatorKind::AisleChisqNorep: return "aisle_chisq_norep";
    case EstimatorKind::AisleChisq: return "aisle_chisq";
  }
  throw InvalidInput("unknown estimator kind " + std::to_string(static_cast<int>(kind)));
}

inline std::optional<EstimatorKind> parse_estimator(std::string_view name) {
  if (name == "aisle_kl_norep") return EstimatorKind::AisleKlNorep;
  for (auto kind : kAllEstimators) {
    if (to_string(kind) == name) return kind;
  }
  return std::nullopt;
}

/// True for estimators built only from path derivatives.
inline bool is_score_free(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::IwaeStl:
    case EstimatorKind::IwaeDreg:
    case EstimatorKind::RwsDreg:
    case EstimatorKind::AisleKl:
    case EstimatorKind::AisleChisq: return true;
    default: return false;
  }
}

struct GradientEstimate {
  Vector phi_grad;
  Vector theta_grad;
  EstimatorKind kind;
  Eigen::Index num_particles;
};

/// Shared theta-gradient: self-normalised average of grad_theta log gamma.
inline Vector theta_gradient(const ParticleSet& ps) { return snis_expectation(ps.weights, ps.grad_theta); }

/// phi-gradient of `kind` with the given normalised weights in place of the
/// particle set's own.
inline Vector phi_gradient(EstimatorKind kind, const ParticleSet& ps, const NormalizedWeights& weights) {
  if (weights.size() != ps.size()) {
    throw InvalidInput("phi_gradient: " + std::to_string(weights.size()) + " weights for " +
                       std::to_string(ps.size()) + " particles");
  }
  const Vector& v = weights.values();
  const auto num = ps.size();
  const double k_particles = static_cast<double>(num);

  switch (kind) {
    // IWAE family: rank-one combinations over the whole particle set.
    case EstimatorKind::Iwae:
      return ps.path_combination(v) - ps.score_combination(v);
    case EstimatorKind::IwaeStl:
      return ps.path_combination(v);
    case EstimatorKind::IwaeDreg:
      return ps.path_combination(v.cwiseAbs2());
    case EstimatorKind::Rws:
      return ps.score_combination(v);
    case EstimatorKind::RwsDreg:
      return ps.path_combination(v - v.cwiseAbs2());

    // Adaptive importance-sampling family: per-particle accumulation.
    case EstimatorKind::AisleKl: {
      Vector grad = Vector::Zero(phi_size(ps.dim()));
      for (Eigen::Index k = 0; k < num; ++k) grad.noalias() += v[k] * ps.path(k);
      return grad;
    }
    case EstimatorKind::AisleChisqNorep: {
      Vector grad = Vector::Zero(phi_size(ps.dim()));
      for (Eigen::Index k = 0; k < num; ++k) grad.noalias() += (k_particles * v[k] * v[k]) * ps.score(k);
      return grad;
    }
    case EstimatorKind::AisleChisq: {
      Vector grad = Vector::Zero(phi_size(ps.dim()));
      for (Eigen::Index k = 0; k < num; ++k) grad.noalias() += (2.0 * k_particles * v[k] * v[k]) * ps.path(k);
      return grad;
    }
  }
  throw InvalidInput("phi_gradient: unknown estimator kind " + std::to_string(static_cast<int>(kind)));
}

inline Vector phi_gradient(EstimatorKind kind, const ParticleSet& ps) { return phi_gradient(kind, ps, ps.weights); }

/// phi-gradient with weights tempered to an effective sample size of at
/// least eta * K.
inline Vector phi_gradient_regularized(EstimatorKind kind, const ParticleSet& ps, double eta) {
  const auto regularized = regularize_weights(ps.log_weights, eta);
  return phi_gradient(kind, ps, regularized.weights);
}

inline GradientEstimate estimate_gradient(EstimatorKind kind, const ParticleSet& ps,
                                          std::optional<double> eta = std::nullopt) {
  return {eta ? phi_gradient_regularized(kind, ps, *eta) : phi_gradient(kind, ps), theta_gradient(ps), kind,
          ps.size()};
}

// --- Monte Carlo moments ----------------------------------------------------------

/// Componentwise mean and standard error (plus standard deviation) of a
/// vector-valued Monte Carlo estimator.
struct MomentEstimate {
  Vector mean;
  Vector sd;
  Vector se;
  std::size_t samples = 0;
};

namespace detail {

// Welford accumulator; blocks are merged with Chan's pairwise update.
struct Moments {
  std::size_t n = 0;
  Vector mean;
  Vector m2;

  void add(const Vector& value) {
    if (n == 0) {
      mean = Vector::Zero(value.size());
      m2 = Vector::Zero(value.size());
    }
    ++n;
    const Vector delta = value - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta.cwiseProduct(value - mean);
  }

  void merge(const Moments& other) {
    if (other.n == 0) return;
    if (n == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n);
    const double nb = static_cast<double>(other.n);
    const double total = na + nb;
    const Vector delta = other.mean - mean;
    mean += delta * (nb / total);
    m2 += other.m2 + delta.cwiseAbs2() * (na * nb / total);
    n += other.n;
  }
};

inline constexpr std::size_t kMomentBlock = 256;

}  // namespace detail

/// Evaluates draw(m) for m in [0, samples) across workers and reduces the
/// results in a fixed block order, so the output does not depend on the
/// worker count. `draw` returns `outputs` vectors per sample, each reduced
/// separately.
template <class Draw>
std::vector<MomentEstimate> monte_carlo_moments(std::size_t samples, std::size_t outputs, std::size_t threads,
                                                Draw&& draw) {
  if (samples < 2) throw InvalidInput("monte_carlo_moments: need at least 2 samples");
  const std::size_t blocks = (samples + detail::kMomentBlock - 1) / detail::kMomentBlock;
  std::vector<std::vector<detail::Moments>> partial(blocks, std::vector<detail::Moments>(outputs));
  parallel_for(blocks, threads, [&](std::size_t block) {
    const std::size_t begin = block * detail::kMomentBlock;
    const std::size_t end = std::min(samples, begin + detail::kMomentBlock);
    for (std::size_t m = begin; m < end; ++m) {
      const std::vector<Vector> values = draw(m);
      for (std::size_t o = 0; o < outputs; ++o) partial[block][o].add(values[o]);
    }
  });

  std::vector<MomentEstimate> result(outputs);
  for (std::size_t o = 0; o < outputs; ++o) {
    detail::Moments total;
    for (std::size_t block = 0; block < blocks; ++block) total.merge(partial[block][o]);
    const double n = static_cast<double>(total.n);
    Vector sd = (total.m2 / (n - 1.0)).cwiseSqrt();
    Vector se = sd / std::sqrt(n);
    result[o] = {std::move(total.mean), std::move(sd), std::move(se), total.n};
  }
  return result;
}

/// Mean and standard error of several phi-gradient estimators (and,
/// optionally, the theta-gradient as the last entry) over `samples`
/// independent particle sets of size K. All estimators share the particle
/// sets; sample m uses the stream (seed, MonteCarlo, m, stream_index).
inline std::vector<MomentEstimate> expected_gradients(std::span<const EstimatorKind> kinds, const ModelSpec& model,
                                                      const ProposalParams& phi, const Vector& x,
                                                      std::size_t samples, Eigen::Index num_particles,
                                                      std::uint64_t seed, bool include_theta = false,
                                                      std::optional<double> eta = std::nullopt,
                                                      std::size_t threads = 0, std::uint64_t stream_index = 0) {
  const std::size_t outputs = kinds.size() + (include_theta ? 1 : 0);
  return monte_carlo_moments(samples, outputs, threads, [&](std::size_t m) {
    auto engine = make_stream(seed, StreamDomain::MonteCarlo, m, stream_index);
    const auto ps = sample_particles(model, phi, x, num_particles, engine);
    std::vector<Vector> values;
    values.reserve(outputs);
    if (eta) {
      const auto regularized = regularize_weights(ps.log_weights, *eta);
      for (auto kind : kinds) values.push_back(phi_gradient(kind, ps, regularized.weights));
    } else {
      for (auto kind : kinds) values.push_back(phi_gradient(kind, ps));
    }
    if (include_theta) values.push_back(theta_gradient(ps));
    return values;
  });
}

inline MomentEstimate expected_gradient(EstimatorKind kind, const ModelSpec& model, const ProposalParams& phi,
                                        const Vector& x, std::size_t samples, Eigen::Index num_particles,
                                        std::uint64_t seed, std::size_t threads = 0) {
  const std::array<EstimatorKind, 1> kinds{kind};
  return expected_gradients(kinds, model, phi, x, samples, num_particles, seed, false, std::nullopt, threads)
      .front();
}

}  // namespace aisle
