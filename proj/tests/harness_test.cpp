#include <array>
#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "aisle/checks.hpp"
#include "aisle/harness.hpp"

using aisle::EstimatorKind;
using aisle::ExperimentConfig;
using aisle::Matrix;
using aisle::Scenario;
using aisle::Vector;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.dim = 2;
  c.num_particles = 4;
  c.num_observations = 5;
  c.iterations = 30;
  c.replicates = 3;
  c.master_seed = 42;
  return c;
}

}  // namespace

TEST(Scenario, SigmaShapes) {
  EXPECT_EQ(aisle::make_sigma(Scenario::Diagonal, 3), Matrix::Identity(3, 3));
  const Matrix ar = aisle::make_sigma(Scenario::ArCorrelated, 4);
  EXPECT_DOUBLE_EQ(ar(0, 0), 0.95);
  EXPECT_DOUBLE_EQ(ar(0, 3), std::pow(0.95, 4));
  EXPECT_EQ(ar, ar.transpose());
  EXPECT_NO_THROW(aisle::ModelSpec(Vector::Zero(10), aisle::make_sigma(Scenario::ArCorrelated, 10)));
  EXPECT_EQ(aisle::parse_scenario("ar_correlated"), Scenario::ArCorrelated);
  EXPECT_FALSE(aisle::parse_scenario("banded").has_value());
}

TEST(ExperimentConfig, Validation) {
  EXPECT_NO_THROW(ExperimentConfig{}.validate());
  auto c = small_config();
  c.num_particles = 0;
  EXPECT_THROW(c.validate(), aisle::InvalidInput);
  c = small_config();
  c.eta = 0.0;
  EXPECT_THROW(c.validate(), aisle::InvalidInput);
  c.eta = 1.0;
  EXPECT_NO_THROW(c.validate());
  c = small_config();
  c.iterations = 0;
  EXPECT_THROW(c.validate(), aisle::InvalidInput);
}

TEST(ReplicateData, BStarIsHalfThetaForIdentityPrior) {
  auto c = small_config();
  const auto data = aisle::generate_replicate_data(c, 0);
  EXPECT_LE((data.b_star - 0.5 * data.theta_star).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(data.model.mu(), data.theta_star);
  EXPECT_EQ(data.observations.size(), 5u);
  EXPECT_EQ(data.theta_star, aisle::theta_ml(data.observations));
}

TEST(ReplicateData, DeterministicAndIndependentAcrossReplicates) {
  auto c = small_config();
  c.scenario = Scenario::ArCorrelated;
  const auto a = aisle::generate_replicate_data(c, 3);
  const auto b = aisle::generate_replicate_data(c, 3);
  const auto other = aisle::generate_replicate_data(c, 4);
  EXPECT_EQ(a.true_mu, b.true_mu);
  for (std::size_t n = 0; n < a.observations.size(); ++n) EXPECT_EQ(a.observations[n], b.observations[n]);
  EXPECT_NE(a.true_mu, other.true_mu);
}

TEST(ReplicateData, ObservationsHaveMarginalMean) {
  auto c = small_config();
  c.num_observations = 10000;
  c.scenario = Scenario::ArCorrelated;
  const auto data = aisle::generate_replicate_data(c, 1);
  // x ~ N(mu, I + Sigma).
  const Matrix cov = Matrix::Identity(2, 2) + aisle::make_sigma(Scenario::ArCorrelated, 2);
  const Vector mean = data.theta_star;
  for (Eigen::Index d = 0; d < 2; ++d) {
    EXPECT_LE(std::abs(mean[d] - data.true_mu[d]), 4.0 * std::sqrt(cov(d, d) / 10000.0)) << d;
  }
}

TEST(InitPhi, LayoutAndMoments) {
  auto engine = aisle::make_stream(1, aisle::StreamDomain::ProposalInit, 0);
  auto again = aisle::make_stream(1, aisle::StreamDomain::ProposalInit, 0);
  const auto a = aisle::init_phi(3, engine);
  const auto b = aisle::init_phi(3, again);
  EXPECT_EQ(a.flatten(), b.flatten());
  EXPECT_EQ(a.flatten().size(), 15);

  const int draws = 10000;
  double sum = 0.0;
  double sq = 0.0;
  long n = 0;
  for (int r = 0; r < draws; ++r) {
    auto e = aisle::make_stream(2, aisle::StreamDomain::ProposalInit, r);
    const Vector flat = aisle::init_phi(2, e).flatten();
    sum += flat.sum();
    sq += flat.squaredNorm();
    n += flat.size();
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_LE(std::abs(mean), 4.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(Aggregate, Examples) {
  const std::vector<aisle::ErrorTrajectory> one{{3.0, 2.0, 1.0}};
  EXPECT_EQ(aisle::aggregate(one), one.front());
  const std::vector<aisle::ErrorTrajectory> constant{{5.0, 5.0}, {5.0, 5.0}, {5.0, 5.0}, {5.0, 5.0}};
  EXPECT_EQ(aisle::aggregate(constant), (aisle::ErrorTrajectory{5.0, 5.0}));
  const std::vector<aisle::ErrorTrajectory> three{{1.0}, {9.0}, {2.0}};
  EXPECT_EQ(aisle::aggregate(three), (aisle::ErrorTrajectory{2.0}));
  const std::vector<aisle::ErrorTrajectory> even{{4.0}, {1.0}, {3.0}, {2.0}};
  EXPECT_EQ(aisle::aggregate(even), (aisle::ErrorTrajectory{2.0}));
  const std::vector<aisle::ErrorTrajectory> ragged{{1.0, 2.0}, {1.0}};
  EXPECT_THROW(aisle::aggregate(ragged), aisle::InvalidInput);
  EXPECT_THROW(aisle::aggregate(std::vector<aisle::ErrorTrajectory>{}), aisle::InvalidInput);
}

TEST(RunReplicate, LengthAndNonnegativity) {
  const auto c = small_config();
  const auto t = aisle::run_replicate(c, 0);
  ASSERT_EQ(t.size(), static_cast<std::size_t>(c.iterations) + 1);
  for (double e : t) EXPECT_GE(e, 0.0);
}

TEST(RunReplicate, RwsDregAtOneParticleNeverMoves) {
  auto c = small_config();
  c.num_particles = 1;
  c.estimator = EstimatorKind::RwsDreg;
  for (auto opt : {aisle::OptimizerKind::SgaL1, aisle::OptimizerKind::Adam}) {
    c.optimizer = opt;
    const auto t = aisle::run_replicate(c, 1);
    for (double e : t) EXPECT_EQ(e, t.front());
  }
}

TEST(RunReplicate, ExactPosteriorProposalHasZeroErrorAndGradient) {
  auto c = small_config();
  c.num_observations = 1;
  const auto data = aisle::generate_replicate_data(c, 0);
  // With one observation, A = I/2, b = theta/2, C = I/2 is the exact posterior.
  // Both optimizers normalise the step, so rounding noise would still move phi;
  // check the gradient itself instead of the trajectory.
  const auto phi0 = aisle::checks::optimal_diagonal_proposal(data.theta_star);
  EXPECT_LE(aisle::b_error(phi0, data.b_star), 1e-15);
  for (std::uint64_t i = 1; i <= 30; ++i) {
    auto engine = aisle::make_stream(c.master_seed, aisle::StreamDomain::Particles, 0, i, 0);
    const auto ps = aisle::sample_particles(data.model, phi0, data.observations.front(), c.num_particles, engine);
    EXPECT_LE(aisle::phi_gradient(EstimatorKind::IwaeStl, ps).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(RunReplicate, OptimisationReducesError) {
  auto c = small_config();
  c.iterations = 400;
  c.num_particles = 10;
  c.estimator = EstimatorKind::AisleKl;
  const auto t = aisle::run_replicate(c, 2);
  EXPECT_LT(t.back(), 0.5 * t.front());
}

TEST(RunExperiment, DeterministicAcrossThreadCounts) {
  auto c = small_config();
  c.eta = 0.8;
  const auto a = aisle::run_experiment(c, 1);
  const auto b = aisle::run_experiment(c, 3);
  EXPECT_EQ(a.median, b.median);
  EXPECT_EQ(a.completed, 3u);
  EXPECT_TRUE(a.aborts.empty());

  std::ostringstream sa, sb;
  aisle::write_trajectory_rows(sa, a);
  aisle::write_trajectory_rows(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(RunExperiment, AbortsAreRecorded) {
  // exp(800) overflows, so the very first gradient is infinite.
  auto c = small_config();
  const auto data = aisle::generate_replicate_data(c, 0);
  const aisle::ProposalParams phi0(Matrix::Zero(2, 2), Vector::Zero(2), Vector::Constant(2, -800.0));
  try {
    aisle::run_replicate(c, data, phi0, 7);
    FAIL() << "expected a numerical abort";
  } catch (const aisle::NumericalAbort& abort) {
    EXPECT_EQ(abort.record().replicate, 7u);
    EXPECT_EQ(abort.record().iteration, 1);
    EXPECT_EQ(abort.record().estimator, c.estimator);
  }
}

TEST(Csv, TrajectoryFormat) {
  aisle::ExperimentResult result{small_config(), {0.1, 1.0 / 3.0}, 3, {}};
  std::ostringstream out;
  aisle::write_trajectory_rows(out, result);
  EXPECT_EQ(out.str(),
            "diagonal,2,4,5,aisle_kl,adam,,3,0,0.10000000000000001\n"
            "diagonal,2,4,5,aisle_kl,adam,,3,1,0.33333333333333331\n");
  result.config.eta = 0.8;
  std::ostringstream with_eta;
  aisle::write_trajectory_rows(with_eta, result);
  EXPECT_NE(with_eta.str().find(",0.80000000000000004,3,0,"), std::string::npos);
  EXPECT_EQ(aisle::kTrajectoryCsvHeader, "scenario,D,K,N,estimator,optimizer,eta,replicates,iteration,median_error");
}

TEST(Snr, MedianAndSlope) {
  aisle::MomentEstimate m{Vector(3), Vector(3), Vector(3), 10};
  m.mean << 1.0, -4.0, 0.0;
  m.sd << 1.0, 1.0, 2.0;
  EXPECT_DOUBLE_EQ(aisle::median_snr(m), 1.0);
  m.sd[2] = 0.0;
  EXPECT_DOUBLE_EQ(aisle::median_snr(m), 2.5);

  const std::array<double, 3> x{0.0, 1.0, 2.0};
  const std::array<double, 3> y{1.0, 0.5, 0.0};
  EXPECT_NEAR(aisle::fit_slope(x, y), -0.5, 1e-15);
  EXPECT_THROW(aisle::fit_slope(std::span<const double>(x.data(), 1), std::span<const double>(y.data(), 1)),
               aisle::InvalidInput);
}

TEST(Snr, SweepShapeAndDeterminism) {
  aisle::ExperimentConfig c;
  c.num_observations = 1;
  const auto data = aisle::generate_replicate_data(c, 0);
  const aisle::ModelSpec model = data.model.with_mu(data.true_mu);
  const auto phi = aisle::checks::optimal_diagonal_proposal(data.true_mu + Vector::Constant(2, 0.5));
  const std::array<EstimatorKind, 2> kinds{EstimatorKind::Iwae, EstimatorKind::IwaeStl};
  const std::array<Eigen::Index, 4> grid{1, 4, 16, 64};
  const auto a = aisle::snr_sweep(model, phi, data.observations.front(), kinds, grid, 500, 3, true, 1);
  const auto b = aisle::snr_sweep(model, phi, data.observations.front(), kinds, grid, 500, 3, true, 2);
  ASSERT_EQ(a.size(), 12u);
  EXPECT_EQ(a[8].estimator, "theta");
  for (std::size_t r = 0; r < a.size(); ++r) {
    EXPECT_EQ(a[r].median_snr, b[r].median_snr);
    EXPECT_EQ(a[r].slope, a[r / 4 * 4].slope);
  }
  EXPECT_THROW(aisle::snr_sweep(model, phi, data.observations.front(), kinds, grid, 50, 3), aisle::InvalidInput);
}
