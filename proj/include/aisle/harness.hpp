#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "aisle/estimators.hpp"
#include "aisle/gaussian_model.hpp"
#include "aisle/optimizers.hpp"
#include "aisle/parallel.hpp"
#include "aisle/rng.hpp"

namespace aisle {

enum class Scenario { Diagonal, ArCorrelated };

inline std::string_view to_string(Scenario scenario) {
  return scenario == Scenario::Diagonal ? "diagonal" : "ar_correlated";
}

inline std::optional<Scenario> parse_scenario(std::string_view name) {
  if (name == "diagonal") return Scenario::Diagonal;
  if (name == "ar_correlated") return Scenario::ArCorrelated;
  return std::nullopt;
}

/// Prior covariance: I, or (0.95^{|d-d'|+1}).
inline Matrix make_sigma(Scenario scenario, Eigen::Index dim) {
  if (scenario == Scenario::Diagonal) return Matrix::Identity(dim, dim);
  Matrix sigma(dim, dim);
  for (Eigen::Index d = 0; d < dim; ++d) {
    for (Eigen::Index e = 0; e < dim; ++e) {
      sigma(d, e) = std::pow(0.95, static_cast<double>(std::abs(d - e) + 1));
    }
  }
  return sigma;
}

struct ExperimentConfig {
  Scenario scenario = Scenario::Diagonal;
  int dim = 2;
  int num_particles = 10;
  int num_observations = 25;
  EstimatorKind estimator = EstimatorKind::AisleKl;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::optional<double> eta;  ///< weight regularisation; unset means none
  int iterations = 10000;
  int replicates = 250;
  std::uint64_t master_seed = 0;

  void validate() const {
    if (dim < 1) throw InvalidInput("D must be at least 1");
    if (num_particles < 1) throw InvalidInput("K must be at least 1");
    if (num_observations < 1) throw InvalidInput("N must be at least 1");
    if (iterations < 1) throw InvalidInput("iterations must be at least 1");
    if (replicates < 1) throw InvalidInput("replicates must be at least 1");
    if (eta && !(*eta > 0.0 && *eta <= 1.0)) throw InvalidInput("eta must lie in (0, 1]");
  }
};

/// Synthetic data set for one replicate, with theta fixed at its ML value.
struct ReplicateData {
  Vector true_mu;
  ModelSpec model;  ///< prior mean set to theta_star
  std::vector<Vector> observations;
  Vector theta_star;
  Vector b_star;  ///< P Sigma^{-1} theta_star, the intercept of the posterior mean
};

/// Draws mu ~ N(0, I), then N observations z ~ N(mu, Sigma), x ~ N(z, I),
/// from the stream (master_seed, Dataset, replicate).
inline ReplicateData generate_replicate_data(const ExperimentConfig& config, std::uint64_t replicate) {
  const Eigen::Index dim = config.dim;
  auto engine = make_stream(config.master_seed, StreamDomain::Dataset, replicate);
  StandardNormal normal;
  auto draw = [&] {
    Vector v(dim);
    for (Eigen::Index d = 0; d < dim; ++d) v[d] = normal(engine);
    return v;
  };

  Vector mu = draw();
  const ModelSpec truth(mu, make_sigma(config.scenario, dim));
  const Matrix chol = truth.sigma_chol().matrixL();
  std::vector<Vector> observations;
  observations.reserve(static_cast<std::size_t>(config.num_observations));
  for (int n = 0; n < config.num_observations; ++n) {
    const Vector z = mu + chol * draw();
    observations.push_back(z + draw());
  }

  Vector theta_star = theta_ml(observations);
  ModelSpec model = truth.with_mu(theta_star);
  Vector b_star = model.posterior_cov() * (model.sigma_inv() * theta_star);
  return {std::move(mu), std::move(model), std::move(observations), std::move(theta_star), std::move(b_star)};
}

/// Every entry of (A, b, c) i.i.d. standard normal, drawn in flattened order.
inline ProposalParams init_phi(Eigen::Index dim, Engine& engine) {
  StandardNormal normal;
  Vector flat(phi_size(dim));
  for (Eigen::Index j = 0; j < flat.size(); ++j) flat[j] = normal(engine);
  return ProposalParams::from_flat(flat, dim);
}

/// Mean over components of |b_d - b*_d|.
inline double b_error(const ProposalParams& phi, const Vector& b_star) {
  return (phi.b() - b_star).cwiseAbs().mean();
}

using ErrorTrajectory = std::vector<double>;

/// Where and why a replicate stopped.
struct AbortRecord {
  std::uint64_t replicate = 0;
  long iteration = 0;
  EstimatorKind estimator = EstimatorKind::Iwae;
  std::string reason;
};

class NumericalAbort : public std::runtime_error {
 public:
  explicit NumericalAbort(AbortRecord record)
      : std::runtime_error("replicate " + std::to_string(record.replicate) + " aborted at iteration " +
                           std::to_string(record.iteration) + " (" + std::string(to_string(record.estimator)) +
                           "): " + record.reason),
        record_(std::move(record)) {}

  [[nodiscard]] const AbortRecord& record() const noexcept { return record_; }

 private:
  AbortRecord record_;
};

/// Optimises phi from `phi0` on the replicate's data and returns the b-error
/// before the first step and after each step. Particles for (iteration i,
/// observation n) come from the stream (master_seed, Particles, replicate, i, n).
inline ErrorTrajectory run_replicate(const ExperimentConfig& config, const ReplicateData& data,
                                     const ProposalParams& phi0, std::uint64_t replicate) {
  const Eigen::Index dim = config.dim;
  const auto num_obs = static_cast<double>(data.observations.size());
  Vector params = phi0.flatten();
  Optimizer optimizer(config.optimizer, params.size());

  ErrorTrajectory errors;
  errors.reserve(static_cast<std::size_t>(config.iterations) + 1);
  errors.push_back(b_error(phi0, data.b_star));

  Vector grad(params.size());
  for (long i = 1; i <= config.iterations; ++i) {
    auto abort = [&](std::string reason) {
      throw NumericalAbort({replicate, i, config.estimator, std::move(reason)});
    };
    try {
      const auto phi = ProposalParams::from_flat(params, dim);
      grad.setZero();
      for (std::size_t n = 0; n < data.observations.size(); ++n) {
        auto engine = make_stream(config.master_seed, StreamDomain::Particles, replicate,
                                  static_cast<std::uint64_t>(i), n);
        const auto ps = sample_particles(data.model, phi, data.observations[n], config.num_particles, engine);
        grad += config.eta ? phi_gradient_regularized(config.estimator, ps, *config.eta)
                           : phi_gradient(config.estimator, ps);
      }
      grad /= num_obs;
      if (grad.hasNaN()) abort("NaN gradient");
      optimizer.step(params, grad);
    } catch (const InvalidInput& error) {
      abort(error.what());
    }
    errors.push_back((params.segment(b_offset(dim), dim) - data.b_star).cwiseAbs().mean());
  }
  return errors;
}

/// Full replicate: fresh data set and phi0 from (master_seed, ProposalInit, replicate).
inline ErrorTrajectory run_replicate(const ExperimentConfig& config, std::uint64_t replicate) {
  config.validate();
  const auto data = generate_replicate_data(config, replicate);
  auto engine = make_stream(config.master_seed, StreamDomain::ProposalInit, replicate);
  const auto phi0 = init_phi(config.dim, engine);
  return run_replicate(config, data, phi0, replicate);
}

/// Pointwise median; for an even count the lower of the two middle values.
inline ErrorTrajectory aggregate(std::span<const ErrorTrajectory> trajectories) {
  if (trajectories.empty()) throw InvalidInput("aggregate: no trajectories");
  const auto length = trajectories.front().size();
  for (const auto& t : trajectories) {
    if (t.size() != length) throw InvalidInput("aggregate: trajectories differ in length");
  }
  ErrorTrajectory median(length);
  std::vector<double> column(trajectories.size());
  const auto mid = (trajectories.size() - 1) / 2;
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t r = 0; r < trajectories.size(); ++r) column[r] = trajectories[r][i];
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
    median[i] = column[mid];
  }
  return median;
}

struct ExperimentResult {
  ExperimentConfig config;
  ErrorTrajectory median;  ///< over completed replicates; empty if none completed
  std::size_t completed = 0;
  std::vector<AbortRecord> aborts;
};

/// Runs every replicate (in parallel across `threads` workers) and aggregates
/// the completed ones. Aborted replicates are reported, never silently dropped.
inline ExperimentResult run_experiment(const ExperimentConfig& config, std::size_t threads = 0) {
  config.validate();
  const auto count = static_cast<std::size_t>(config.replicates);
  std::vector<std::optional<ErrorTrajectory>> trajectories(count);
  std::vector<std::optional<AbortRecord>> aborts(count);
  parallel_for(count, threads, [&](std::size_t r) {
    try {
      trajectories[r] = run_replicate(config, r);
    } catch (const NumericalAbort& abort) {
      aborts[r] = abort.record();
    }
  });

  ExperimentResult result{config, {}, 0, {}};
  std::vector<ErrorTrajectory> completed;
  for (std::size_t r = 0; r < count; ++r) {
    if (trajectories[r]) completed.push_back(std::move(*trajectories[r]));
    if (aborts[r]) result.aborts.push_back(std::move(*aborts[r]));
  }
  result.completed = completed.size();
  if (!completed.empty()) result.median = aggregate(completed);
  return result;
}

// --- CSV output ---------------------------------------------------------------------

inline constexpr std::string_view kTrajectoryCsvHeader =
    "scenario,D,K,N,estimator,optimizer,eta,replicates,iteration,median_error";

/// Formats with 17 significant digits.
inline std::string format_real(double value) {
  std::ostringstream out;
  out << std::setprecision(17) << value;
  return out.str();
}

/// Rows for one experiment; an unset eta is written as an empty field.
inline void write_trajectory_rows(std::ostream& out, const ExperimentResult& result) {
  const auto& c = result.config;
  const std::string prefix = std::string(to_string(c.scenario)) + ',' + std::to_string(c.dim) + ',' +
                             std::to_string(c.num_particles) + ',' + std::to_string(c.num_observations) + ',' +
                             std::string(to_string(c.estimator)) + ',' + std::string(to_string(c.optimizer)) +
                             ',' + (c.eta ? format_real(*c.eta) : std::string()) + ',' +
                             std::to_string(c.replicates) + ',';
  for (std::size_t i = 0; i < result.median.size(); ++i) {
    out << prefix << i << ',' << format_real(result.median[i]) << '\n';
  }
}

// --- signal-to-noise sweeps ---------------------------------------------------------

struct SnrRow {
  std::string estimator;  ///< estimator name, or "theta" for the theta-gradient
  Eigen::Index num_particles = 0;
  double median_snr = 0.0;
  double slope = 0.0;  ///< least-squares slope of log median SNR against log K
};

inline constexpr std::string_view kSnrCsvHeader = "estimator,K,median_snr,slope";

/// Median over components of |mean_j| / sd_j; components with zero spread are
/// skipped.
inline double median_snr(const MomentEstimate& moments) {
  std::vector<double> ratios;
  for (Eigen::Index j = 0; j < moments.mean.size(); ++j) {
    if (moments.sd[j] > 0.0) ratios.push_back(std::abs(moments.mean[j]) / moments.sd[j]);
  }
  if (ratios.empty()) return std::numeric_limits<double>::infinity();
  const auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2);
  std::nth_element(ratios.begin(), mid, ratios.end());
  if (ratios.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(ratios.begin(), mid);
  return 0.5 * (lower + upper);
}

/// Ordinary least-squares slope of y against x.
inline double fit_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidInput("fit_slope: need at least two paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
  }
  return sxy / sxx;
}

/// Per-component SNR of each estimator (and optionally the theta-gradient)
/// for every K in the grid, summarised by the component median and its
/// log-log slope in K. Every K uses its own independent streams.
inline std::vector<SnrRow> snr_sweep(const ModelSpec& model, const ProposalParams& phi, const Vector& x,
                                     std::span<const EstimatorKind> kinds, std::span<const Eigen::Index> k_grid,
                                     std::size_t samples, std::uint64_t seed, bool include_theta = false,
                                     std::size_t threads = 0) {
  if (samples < 100) throw InvalidInput("snr_sweep: need at least 100 samples");
  if (k_grid.empty()) throw InvalidInput("snr_sweep: empty K grid");
  const std::size_t series = kinds.size() + (include_theta ? 1 : 0);
  std::vector<std::vector<double>> snr(series);
  for (std::size_t g = 0; g < k_grid.size(); ++g) {
    const auto moments = expected_gradients(kinds, model, phi, x, samples, k_grid[g], seed, include_theta,
                                            std::nullopt, threads, g + 1);
    for (std::size_t s = 0; s < series; ++s) snr[s].push_back(median_snr(moments[s]));
  }

  std::vector<double> log_k;
  for (auto k : k_grid) log_k.push_back(std::log(static_cast<double>(k)));
  std::vector<SnrRow> rows;
  for (std::size_t s = 0; s < series; ++s) {
    std::vector<double> log_snr;
    for (double v : snr[s]) log_snr.push_back(std::log(v));
    const double slope = k_grid.size() >= 2 ? fit_slope(log_k, log_snr) : 0.0;
    const std::string name = s < kinds.size() ? std::string(to_string(kinds[s])) : "theta";
    for (std::size_t g = 0; g < k_grid.size(); ++g) rows.push_back({name, k_grid[g], snr[s][g], slope});
  }
  return rows;
}

inline void write_snr_rows(std::ostream& out, std::span<const SnrRow> rows) {
  for (const auto& row : rows) {
    out << row.estimator << ',' << row.num_particles << ',' << format_real(row.median_snr) << ','
        << format_real(row.slope) << '\n';
  }
}

}  // namespace aisle
