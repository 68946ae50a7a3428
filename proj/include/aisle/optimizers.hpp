#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "aisle/errors.hpp"

namespace aisle {

enum class OptimizerKind { SgaL1, Adam };

inline std::string_view to_string(OptimizerKind kind) {
  return kind == OptimizerKind::SgaL1 ? "sga_l1" : "adam";
}

inline std::optional<OptimizerKind> parse_optimizer(std::string_view name) {
  if (name == "sga_l1") return OptimizerKind::SgaL1;
  if (name == "adam") return OptimizerKind::Adam;
  return std::nullopt;
}

/// Gradient-ascent optimiser with step size i^{-1/2} at step i.
///
/// SgaL1 moves along g / ||g||_1 (a zero gradient leaves the parameters
/// unchanged). Adam uses the usual bias-corrected moment estimates with
/// beta1 = 0.9, beta2 = 0.999, eps = 1e-8 added outside the square root.
class Optimizer {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  Optimizer(OptimizerKind kind, Eigen::Index num_params)
      : kind_(kind), m_(Eigen::VectorXd::Zero(num_params)), v_(Eigen::VectorXd::Zero(num_params)) {}

  [[nodiscard]] OptimizerKind kind() const noexcept { return kind_; }
  /// Index of the next step, starting at 1.
  [[nodiscard]] long iteration() const noexcept { return iteration_; }
  [[nodiscard]] const Eigen::VectorXd& first_moment() const noexcept { return m_; }
  [[nodiscard]] const Eigen::VectorXd& second_moment() const noexcept { return v_; }

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grad) {
    if (params.size() != m_.size() || grad.size() != m_.size()) {
      throw InvalidInput("Optimizer::step: expected " + std::to_string(m_.size()) + " parameters");
    }
    if (!grad.allFinite()) throw InvalidInput("Optimizer::step: gradient is not finite");

    const double i = static_cast<double>(iteration_);
    const double rate = 1.0 / std::sqrt(i);
    if (kind_ == OptimizerKind::SgaL1) {
      const double l1 = grad.lpNorm<1>();
      if (l1 > 0.0) params += (rate / l1) * grad;
    } else {
      m_ = kBeta1 * m_ + (1.0 - kBeta1) * grad;
      v_ = kBeta2 * v_ + (1.0 - kBeta2) * grad.cwiseAbs2();
      const double m_correction = 1.0 - std::pow(kBeta1, i);
      const double v_correction = 1.0 - std::pow(kBeta2, i);
      params.array() += rate * (m_.array() / m_correction) /
                        ((v_.array() / v_correction).sqrt() + kEpsilon);
    }
    ++iteration_;
  }

 private:
  OptimizerKind kind_;
  long iteration_ = 1;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
};

}  // namespace aisle
