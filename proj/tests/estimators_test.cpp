#include <array>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "aisle/checks.hpp"
#include "aisle/estimators.hpp"
#include "aisle/oracles.hpp"

using aisle::EstimatorKind;
using aisle::Matrix;
using aisle::ModelSpec;
using aisle::ProposalParams;
using aisle::Vector;

namespace {

// |mean - want| <= 4 SE componentwise, with SE combined from both sides when
// the reference is itself a Monte Carlo estimate.
void expect_within_se(const Vector& mean, const Vector& se, const Vector& want, double sigmas = 4.0) {
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    EXPECT_LE(std::abs(mean[j] - want[j]), sigmas * se[j]) << "component " << j << ": " << mean[j] << " vs "
                                                            << want[j];
  }
}

}  // namespace

TEST(EstimatorKind, NamesRoundTrip) {
  for (auto kind : aisle::kAllEstimators) EXPECT_EQ(aisle::parse_estimator(aisle::to_string(kind)), kind);
  EXPECT_EQ(aisle::parse_estimator("aisle_kl_norep"), EstimatorKind::Rws);
  EXPECT_FALSE(aisle::parse_estimator("vae").has_value());
  EXPECT_THROW(aisle::to_string(static_cast<EstimatorKind>(42)), aisle::InvalidInput);
}

TEST(ThetaGradient, SingleParticleAndEqualParticles) {
  aisle::checks::InstanceGenerator gen(1);
  const auto model = gen.model(3);
  const auto phi = gen.proposal(3);
  const Vector x = gen.normal_vector(3);
  const auto one = aisle::sample_particles(model, phi, x, 1, gen.engine());
  EXPECT_LE((aisle::theta_gradient(one) - aisle::grad_theta_log_gamma(model, one.particles.col(0)))
                .cwiseAbs()
                .maxCoeff(),
            1e-14);

  Matrix noise(3, 5);
  noise.colwise() = gen.normal_vector(3);
  const auto same = aisle::particles_from_noise(model, phi, x, noise);
  EXPECT_LE((aisle::theta_gradient(same) - aisle::grad_theta_log_gamma(model, same.particles.col(0)))
                .cwiseAbs()
                .maxCoeff(),
            1e-13);
}

TEST(ThetaGradient, ApproachesEvidenceGradient) {
  aisle::checks::InstanceGenerator gen(2);
  const auto model = gen.model(2);
  const Vector x = gen.normal_vector(2, 2.0);
  const auto post = aisle::posterior_params(model, x);
  const ProposalParams phi(Matrix::Zero(2, 2), post.nu, (1.5 * post.cov.diagonal().cwiseSqrt()).array().log().matrix());
  auto engine = aisle::make_stream(2, aisle::StreamDomain::Test, 0);
  const auto ps = aisle::sample_particles(model, phi, x, 100000, engine);
  const Vector est = aisle::theta_gradient(ps);

  auto log_z = [&](const Vector& mu) { return aisle::log_marginal_likelihood(model.with_mu(mu), x); };
  const Vector want = aisle::oracles::fd_gradient(log_z, model.mu());
  const Vector analytic = model.marginal_chol().solve(x - model.mu());
  EXPECT_LE((want - analytic).cwiseAbs().maxCoeff(), 1e-6);

  const Vector& w = ps.weights.values();
  for (Eigen::Index d = 0; d < 2; ++d) {
    const double se =
        std::sqrt((w.array().square() * (ps.grad_theta.row(d).transpose().array() - est[d]).square()).sum());
    EXPECT_LE(std::abs(est[d] - want[d]), 4.0 * se) << d;
  }
}

TEST(PhiGradient, SingleParticleReductions) {
  aisle::checks::InstanceGenerator gen(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dim = gen.uniform_int(1, 5);
    const auto model = gen.model(dim);
    const auto phi = gen.proposal(dim);
    const Vector x = gen.normal_vector(dim);
    const auto ps = aisle::sample_particles(model, phi, x, 1, gen.engine());
    const Vector d1 = ps.path(0);
    EXPECT_EQ(aisle::phi_gradient(EstimatorKind::RwsDreg, ps), Vector::Zero(aisle::phi_size(dim)));
    EXPECT_LE((aisle::phi_gradient(EstimatorKind::AisleKl, ps) - d1).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((aisle::phi_gradient(EstimatorKind::IwaeStl, ps) - d1).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(PhiGradient, FormulasAgainstPerParticleSums) {
  aisle::checks::InstanceGenerator gen(4);
  const auto model = gen.model(3);
  const auto phi = gen.proposal(3);
  const Vector x = gen.normal_vector(3);
  const auto ps = aisle::sample_particles(model, phi, x, 9, gen.engine());
  const Vector& v = ps.weights.values();
  const double k = 9.0;

  std::array<Vector, 8> want;
  for (auto& w : want) w = Vector::Zero(aisle::phi_size(3));
  for (Eigen::Index j = 0; j < 9; ++j) {
    const Vector z = ps.particles.col(j);
    const Vector s = aisle::score_phi(phi, x, z);
    const Vector d = aisle::path_derivative(model, phi, x, z);
    want[0] += v[j] * (d - s);
    want[1] += v[j] * d;
    want[2] += v[j] * v[j] * d;
    want[3] += v[j] * s;
    want[4] += (v[j] - v[j] * v[j]) * d;
    want[5] += v[j] * d;
    want[6] += k * v[j] * v[j] * s;
    want[7] += 2.0 * k * v[j] * v[j] * d;
  }
  for (std::size_t e = 0; e < aisle::kAllEstimators.size(); ++e) {
    const auto kind = aisle::kAllEstimators[e];
    EXPECT_LE(aisle::checks::relative_error(aisle::phi_gradient(kind, ps), want[e]), 1e-12)
        << aisle::to_string(kind);
  }
}

TEST(PhiGradient, WeightCountMismatchThrows) {
  aisle::checks::InstanceGenerator gen(5);
  const auto model = gen.model(2);
  const auto ps = aisle::sample_particles(model, gen.proposal(2), gen.normal_vector(2), 3, gen.engine());
  EXPECT_THROW(aisle::phi_gradient(EstimatorKind::Iwae, ps, aisle::self_normalize(Vector::Zero(4))),
               aisle::InvalidInput);
  EXPECT_THROW(aisle::phi_gradient(static_cast<EstimatorKind>(99), ps), aisle::InvalidInput);
}

TEST(PhiGradient, IdentitiesOnRandomCorpus) {
  aisle::checks::IdentityCorpusOptions options;
  options.configurations = 200;
  for (const auto& check : aisle::checks::identity_checks(5, options)) {
    EXPECT_TRUE(check.passed()) << check.name << ": " << check.value;
  }
}

TEST(PhiGradient, ZeroVarianceAtExactPosterior) {
  const auto report = aisle::checks::zero_variance_checks(6, 3, 16, 200);
  for (const auto& check : report.score_free) EXPECT_TRUE(check.passed()) << check.name << ": " << check.value;
  for (const auto& check : report.score_based) EXPECT_TRUE(check.passed()) << check.name << ": " << check.value;
  EXPECT_TRUE(report.log_weight_spread.passed()) << report.log_weight_spread.value;

  // Variance of the score-free estimators is exactly negligible, not just small.
  aisle::checks::InstanceGenerator gen(7);
  const ModelSpec model(gen.normal_vector(3), Matrix::Identity(3, 3));
  const auto phi = aisle::checks::optimal_diagonal_proposal(model.mu());
  const Vector x = gen.normal_vector(3);
  for (auto kind : aisle::kAllEstimators) {
    if (!aisle::is_score_free(kind)) continue;
    const auto mc = aisle::expected_gradient(kind, model, phi, x, 1000, 16, 7, 1);
    EXPECT_LE(mc.sd.cwiseAbs2().maxCoeff(), 1e-20) << aisle::to_string(kind);
  }
}

TEST(PhiGradientRegularized, NoOpCases) {
  aisle::checks::InstanceGenerator gen(8);
  const auto model = gen.model(2);
  const auto phi = gen.proposal(2);
  const Vector x = gen.normal_vector(2);
  const auto ps = aisle::sample_particles(model, phi, x, 6, gen.engine());
  const double eta = 0.5 * aisle::ess(ps.weights) / 6.0;  // alpha* = 1
  for (auto kind : aisle::kAllEstimators) {
    EXPECT_EQ(aisle::phi_gradient_regularized(kind, ps, eta), aisle::phi_gradient(kind, ps));
  }

  Matrix noise(2, 4);
  noise.colwise() = gen.normal_vector(2);
  const auto same = aisle::particles_from_noise(model, phi, x, noise);
  for (auto kind : aisle::kAllEstimators) {
    EXPECT_EQ(aisle::phi_gradient_regularized(kind, same, 0.9), aisle::phi_gradient(kind, same));
  }
}

TEST(PhiGradientRegularized, RescuesDegenerateRwsDreg) {
  // Two particles whose log-weights differ by about 2e4.
  const ModelSpec model(Vector::Zero(1), Matrix::Identity(1, 1));
  const ProposalParams phi(Matrix::Zero(1, 1), Vector::Zero(1), Vector::Constant(1, std::log(0.05)));
  const Vector x = Vector::Zero(1);
  Matrix noise(1, 2);
  noise << 0.0, 200.0;
  const auto ps = aisle::particles_from_noise(model, phi, x, noise);
  ASSERT_GT(std::abs(ps.log_weights[1] - ps.log_weights[0]), 500.0);
  const Vector raw = aisle::phi_gradient(EstimatorKind::RwsDreg, ps);
  const Vector reg = aisle::phi_gradient_regularized(EstimatorKind::RwsDreg, ps, 0.8);
  EXPECT_EQ(raw.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(reg.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(EstimateGradient, CarriesThetaAndKind) {
  aisle::checks::InstanceGenerator gen(9);
  const auto model = gen.model(2);
  const auto ps = aisle::sample_particles(model, gen.proposal(2), gen.normal_vector(2), 5, gen.engine());
  const auto g = aisle::estimate_gradient(EstimatorKind::IwaeDreg, ps);
  EXPECT_EQ(g.kind, EstimatorKind::IwaeDreg);
  EXPECT_EQ(g.num_particles, 5);
  EXPECT_EQ(g.phi_grad, aisle::phi_gradient(EstimatorKind::IwaeDreg, ps));
  EXPECT_EQ(g.theta_grad, aisle::theta_gradient(ps));
}

TEST(MonteCarloMoments, MatchesDirectComputationAndIgnoresThreads) {
  auto draw = [](std::size_t m) {
    auto engine = aisle::make_stream(3, aisle::StreamDomain::Test, m);
    aisle::StandardNormal normal;
    Vector v(2);
    v << normal(engine), 3.0 + 2.0 * normal(engine);
    return std::vector<Vector>{v};
  };
  const std::size_t samples = 1000;
  const auto a = aisle::monte_carlo_moments(samples, 1, 1, draw).front();
  const auto b = aisle::monte_carlo_moments(samples, 1, 4, draw).front();
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.sd, b.sd);

  Matrix all(2, samples);
  for (std::size_t m = 0; m < samples; ++m) all.col(static_cast<Eigen::Index>(m)) = draw(m).front();
  const Vector mean = all.rowwise().mean();
  const Vector var = (all.colwise() - mean).cwiseAbs2().rowwise().sum() / (samples - 1.0);
  EXPECT_LE((a.mean - mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.sd - var.cwiseSqrt()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((a.se - var.cwiseSqrt() / std::sqrt(1000.0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(aisle::monte_carlo_moments(1, 1, 1, draw), aisle::InvalidInput);
}

TEST(ExpectedGradient, DregIsUnbiasedForIwae) {
  aisle::checks::InstanceGenerator gen(10);
  const auto model = gen.model(2);
  const Vector x = gen.normal_vector(2);
  const auto post = aisle::posterior_params(model, x);
  const ProposalParams phi(0.8 * post.cov, post.nu - 0.8 * post.cov * x + Vector::Constant(2, 0.3),
                           (1.2 * post.cov.diagonal().cwiseSqrt()).array().log().matrix());
  const std::array<EstimatorKind, 2> kinds{EstimatorKind::Iwae, EstimatorKind::IwaeDreg};
  const auto mc = aisle::expected_gradients(kinds, model, phi, x, 100000, 5, 10);
  // Shared particle sets: compare via the mean of the paired difference.
  const auto diff = aisle::monte_carlo_moments(100000, 1, 0, [&](std::size_t m) {
    auto engine = aisle::make_stream(10, aisle::StreamDomain::MonteCarlo, m, 0);
    const auto ps = aisle::sample_particles(model, phi, x, 5, engine);
    return std::vector<Vector>{aisle::phi_gradient(EstimatorKind::Iwae, ps) -
                               aisle::phi_gradient(EstimatorKind::IwaeDreg, ps)};
  }).front();
  EXPECT_LE((diff.mean - (mc[0].mean - mc[1].mean)).cwiseAbs().maxCoeff(), 1e-9);
  expect_within_se(diff.mean, diff.se, Vector::Zero(diff.mean.size()));
}

TEST(ExpectedGradient, IwaeAtOneParticleIsExclusiveKlGradient) {
  aisle::checks::InstanceGenerator gen(11);
  const auto model = gen.model(2);
  const Vector x = gen.normal_vector(2);
  const auto phi = gen.proposal(2, 0.3, 0.3);
  const auto mc = aisle::expected_gradient(EstimatorKind::Iwae, model, phi, x, 100000, 1, 11);
  expect_within_se(mc.mean, mc.se, aisle::oracles::exclusive_kl_phi_gradient_oracle(model, phi, x));
}

TEST(ExpectedGradient, RwsBiasShrinksWithK) {
  aisle::checks::InstanceGenerator gen(12);
  const auto model = gen.model(2);
  const Vector x = gen.normal_vector(2);
  const auto post = aisle::posterior_params(model, x);
  const ProposalParams phi(Matrix::Zero(2, 2), post.nu + Vector::Constant(2, 0.4),
                           (1.6 * post.cov.diagonal().cwiseSqrt()).array().log().matrix());
  const Vector oracle = aisle::oracles::inclusive_kl_phi_gradient_oracle(model, phi, x);
  const auto small = aisle::expected_gradient(EstimatorKind::Rws, model, phi, x, 20000, 10, 12);
  const auto large = aisle::expected_gradient(EstimatorKind::Rws, model, phi, x, 2000, 1000, 13);
  EXPECT_LT((large.mean - oracle).norm(), (small.mean - oracle).norm());
}

TEST(ExpectedGradient, IwaeMeanVanishesNearPosteriorAtLargeK) {
  // The score term cancels the path term in expectation as K grows; at the
  // exact-posterior proposal every particle set gives a zero mean gradient.
  aisle::checks::InstanceGenerator gen(13);
  const ModelSpec model(gen.normal_vector(2), Matrix::Identity(2, 2));
  const Vector x = gen.normal_vector(2);
  const auto phi = aisle::checks::optimal_diagonal_proposal(model.mu());
  const auto mc = aisle::expected_gradient(EstimatorKind::Iwae, model, phi, x, 100000, 512, 13);
  expect_within_se(mc.mean, mc.se, Vector::Zero(mc.mean.size()));
}

TEST(ExpectedGradient, IndependentOfThreadCount) {
  aisle::checks::InstanceGenerator gen(14);
  const auto model = gen.model(2);
  const auto phi = gen.proposal(2);
  const Vector x = gen.normal_vector(2);
  const auto a = aisle::expected_gradient(EstimatorKind::AisleChisq, model, phi, x, 3000, 8, 14, 1);
  const auto b = aisle::expected_gradient(EstimatorKind::AisleChisq, model, phi, x, 3000, 8, 14, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.se, b.se);
}
