#include <photonbench/lsq.hpp>

#include <cmath>
#include <limits>

namespace photonbench::lsq {

namespace {

double half_squared_norm(const Vector &r) {
  const double s = r.squaredNorm();
  return std::isfinite(s) ? 0.5 * s : std::numeric_limits<double>::infinity();
}

} // namespace

Result levenberg_marquardt(const ResidualFunction &f, Vector initial, std::size_t n_residuals,
                           const Options &options) {
  const auto n_params = initial.size();
  Result result;
  result.params = std::move(initial);

  Vector r(static_cast<Eigen::Index>(n_residuals));
  Matrix jac(static_cast<Eigen::Index>(n_residuals), n_params);
  f(result.params, r, &jac);
  result.cost = half_squared_norm(r);
  result.cost_history.push_back(result.cost);

  double damping = options.initial_damping;
  Vector trial_r(static_cast<Eigen::Index>(n_residuals));

  while (result.iterations < options.max_iterations) {
    if (result.cost == 0.0) {
      result.converged = true;
      break;
    }
    const Matrix jtj = jac.transpose() * jac;
    const Vector gradient = jac.transpose() * r;
    Vector diag = jtj.diagonal();
    for (Eigen::Index i = 0; i < diag.size(); ++i)
      diag[i] = std::max(diag[i], 1e-12 * std::max(1.0, jtj.diagonal().maxCoeff()));

    ++result.iterations;
    Matrix damped = jtj;
    damped.diagonal() += damping * diag;
    const Vector step = damped.ldlt().solve(-gradient);
    const Vector trial = result.params + step;
    f(trial, trial_r, nullptr);
    const double trial_cost = half_squared_norm(trial_r);

    if (step.allFinite() && trial_cost < result.cost) {
      const double decrease = result.cost - trial_cost;
      result.params = trial;
      result.cost = trial_cost;
      result.cost_history.push_back(trial_cost);
      f(result.params, r, &jac);
      const bool gauss_newton_like = damping <= 1.0;
      damping = std::max(damping / 10.0, 1e-15);
      // heavily damped steps are short by construction; they do not signal convergence
      if (gauss_newton_like && decrease <= options.relative_tolerance * (trial_cost + decrease)) {
        result.converged = true;
        break;
      }
    } else {
      damping *= 10.0;
      if (damping > 1e16) {
        // No descent direction left at working precision: a stationary point.
        result.converged = true;
        break;
      }
    }
  }
  result.iteration_limit = !result.converged;

  const Matrix jtj = jac.transpose() * jac;
  result.jtj_inverse = jtj.completeOrthogonalDecomposition().pseudoInverse();
  return result;
}

} // namespace photonbench::lsq
