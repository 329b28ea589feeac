#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace photonbench::lsq {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Fills the residual vector for parameters `p`; fills the Jacobian
/// d(residual)/d(p) when `jacobian` is non-null.
using ResidualFunction = std::function<void(const Vector &p, Vector &residuals, Matrix *jacobian)>;

struct Options {
  int max_iterations = 200;
  double relative_tolerance = 1e-8; ///< on the objective
  double initial_damping = 1e-3;
};

struct Result {
  Vector params;
  double cost = 0.0;         ///< 0.5·|r|²
  Matrix jtj_inverse;        ///< (JᵀJ)⁻¹ at the solution (pseudo-inverse if singular)
  int iterations = 0;
  bool converged = false;
  bool iteration_limit = false;
  std::vector<double> cost_history; ///< objective after every accepted step
};

/// Damped Gauss-Newton (Levenberg-Marquardt) with Marquardt diagonal scaling.
/// Steps that do not lower the objective are rejected and the damping raised.
Result levenberg_marquardt(const ResidualFunction &f, Vector initial, std::size_t n_residuals,
                           const Options &options = {});

} // namespace photonbench::lsq
