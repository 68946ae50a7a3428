// Compares the spread of several proposal-gradient estimators at the exact
// posterior and slightly away from it.
#include <cmath>
#include <iostream>

#include "aisle/estimators.hpp"
#include "aisle/gaussian_model.hpp"

int main() {
  using namespace aisle;
  constexpr Eigen::Index dim = 3;
  constexpr Eigen::Index particles = 16;

  const ModelSpec model(Vector::LinSpaced(dim, -1.0, 1.0), Matrix::Identity(dim, dim));
  const Vector x = Vector::Constant(dim, 0.3);

  for (double offset : {0.0, 0.1}) {
    // A = I/2, b = mu/2, C = I/2 is the exact posterior when Sigma = I.
    const ProposalParams phi(0.5 * Matrix::Identity(dim, dim), 0.5 * model.mu() + Vector::Constant(dim, offset),
                             Vector::Constant(dim, 0.5 * std::log(0.5)));
    std::cout << "b offset " << offset << '\n';
    for (auto kind : {EstimatorKind::Iwae, EstimatorKind::IwaeStl, EstimatorKind::IwaeDreg, EstimatorKind::Rws}) {
      const auto moments = expected_gradient(kind, model, phi, x, 2000, particles, 42);
      std::cout << "  " << to_string(kind) << ": max component SD " << moments.sd.maxCoeff() << '\n';
    }
  }
}
