#pragma once

#include <Eigen/Core>

#include <limits>
#include <string>

namespace deeprc::optim {

/// Solver tolerances. All default to 1e-8.
struct SolverOptions {
  double primal_tol = 1e-8;  ///< relative primal residual (equalities + inequalities)
  double dual_tol = 1e-8;    ///< relative dual (stationarity) residual
  double gap_tol = 1e-8;     ///< relative complementarity gap
  int max_iterations = 200;
  double static_reg = 1e-9;  ///< static KKT regularization
};

/// Convex quadratic program
///
///   min  1/2 x' quad_cost x + lin_cost' x
///   s.t. eq_lhs   x  = eq_rhs
///        ineq_lhs x <= ineq_rhs   (row-wise)
///
/// quad_cost must be symmetric positive semidefinite; a zero matrix turns the
/// problem into an LP. Empty (0-row) constraint blocks are allowed.
struct QuadraticProgram {
  Eigen::Index num_vars = 0;
  Eigen::MatrixXd quad_cost;
  Eigen::VectorXd lin_cost;
  Eigen::MatrixXd eq_lhs;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_lhs;
  Eigen::VectorXd ineq_rhs;

  /// Checks dimensions and symmetry (1e-10 absolute) and, when `check_psd`
  /// is set, that eigenvalues are >= -1e-9. Throws std::invalid_argument.
  void validate(bool check_psd = false) const;
};

enum class QpStatus { optimal, infeasible, numerical_failure };

struct QpSolution {
  QpStatus status = QpStatus::numerical_failure;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double eq_residual = 0.0;      ///< ||eq_lhs x - eq_rhs||_inf
  double ineq_violation = 0.0;   ///< max(ineq_lhs x - ineq_rhs, 0)
  std::string message;
};

/// Solves a convex QP (or LP when quad_cost is zero) with a primal-dual
/// interior-point method. Deterministic: identical inputs give identical
/// output bits. Infeasible problems produce status=infeasible; breakdowns
/// produce status=numerical_failure with a diagnostic message.
QpSolution solve_qp(const QuadraticProgram& p, const SolverOptions& opts = {});

}  // namespace deeprc::optim
