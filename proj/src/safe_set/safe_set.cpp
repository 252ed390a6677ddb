#include "deeprc/safe_set/safe_set.hpp"

#include <stdexcept>
#include <string>

namespace deeprc::safe_set {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double stage_cost(const VectorXd& u, const VectorXd& y, const MatrixXd& q, const MatrixXd& r,
                  const VectorXd& u_target, const VectorXd& y_target) {
  const VectorXd du = u - u_target, dy = y - y_target;
  return du.dot(r * du) + dy.dot(q * dy);
}

double cost_to_go(const lin_plant::Trajectory& traj, int t, const MatrixXd& q, const MatrixXd& r,
                  const VectorXd& u_target, const VectorXd& y_target) {
  if (t < 0 || t > traj.length) throw std::out_of_range("cost_to_go: t outside [0, T]");
  double sum = 0.0;
  for (int k = t; k < traj.length; ++k)
    sum += stage_cost(traj.input(k), traj.output(k), q, r, u_target, y_target);
  return sum;
}

MatrixXd SafeSet::state_matrix() const {
  if (samples.empty()) return {};
  MatrixXd s(samples.front().state.value.size(), size());
  for (Index i = 0; i < size(); ++i) s.col(i) = samples[i].state.value;
  return s;
}

VectorXd SafeSet::cost_vector() const {
  VectorXd c(size());
  for (Index i = 0; i < size(); ++i) c[i] = samples[i].cost_to_go;
  return c;
}

MatrixXd SafeSet::input_matrix() const {
  if (samples.empty()) return {};
  MatrixXd u(samples.front().next_input.size(), size());
  for (Index i = 0; i < size(); ++i) u.col(i) = samples[i].next_input;
  return u;
}

void add_trajectory(SafeSet& ss, const lin_plant::Trajectory& traj, const MatrixXd& q,
                    const MatrixXd& r, const VectorXd& u_target, const VectorXd& y_target,
                    const robust::Box& input_box, const robust::Box& output_box, int iteration_id,
                    bool nominal_branch, double terminal_tol) {
  const auto terminal = behavior::extended_state(traj, traj.length);
  const double terminal_err = (terminal.value - ss.target.value).cwiseAbs().maxCoeff();
  if (terminal_err > terminal_tol)
    throw std::invalid_argument("safe_set: trajectory does not end at the target state (err " +
                                std::to_string(terminal_err) + ")");
  for (int t = 0; t < traj.length; ++t) {
    const Index iu = input_box.first_violation(traj.input(t));
    if (iu >= 0)
      throw std::invalid_argument("safe_set: input constraint " +
                                  std::string(iu < input_box.dim() ? "lower" : "upper") + " #" +
                                  std::to_string(iu % input_box.dim()) + " violated at t=" +
                                  std::to_string(t));
    const Index iy = output_box.first_violation(traj.output(t));
    if (iy >= 0)
      throw std::invalid_argument("safe_set: output constraint " +
                                  std::string(iy < output_box.dim() ? "lower" : "upper") + " #" +
                                  std::to_string(iy % output_box.dim()) + " violated at t=" +
                                  std::to_string(t));
  }

  ss.samples.reserve(ss.samples.size() + traj.length + 1);
  for (int t = 0; t < traj.length; ++t) {
    Sample s;
    s.state = behavior::extended_state(traj, t);
    s.cost_to_go = cost_to_go(traj, t, q, r, u_target, y_target);
    s.next_input = traj.input(t);
    s.iteration_id = iteration_id;
    s.time_index = t;
    s.nominal_branch = nominal_branch;
    ss.samples.push_back(std::move(s));
  }
  // Terminal sample snapped onto the target equilibrium.
  Sample tail;
  tail.state = ss.target;
  tail.cost_to_go = 0.0;
  tail.next_input = u_target;
  tail.iteration_id = iteration_id;
  tail.time_index = traj.length;
  tail.nominal_branch = nominal_branch;
  ss.samples.push_back(std::move(tail));
}

TerminalCost terminal_cost(const SafeSet& ss, const behavior::ExtendedState& xi,
                           const optim::SolverOptions& opts) {
  if (ss.samples.empty()) throw std::invalid_argument("terminal_cost: empty safe set");
  const Index s = ss.size();
  const Index nxi = xi.value.size();

  optim::QuadraticProgram p;
  p.num_vars = s;
  p.quad_cost = MatrixXd::Zero(s, s);
  p.lin_cost = ss.cost_vector();
  p.eq_lhs = MatrixXd::Ones(1, s);
  p.eq_rhs = VectorXd::Ones(1);
  // Hull membership relaxed to a +-membership_tol band around xi.
  const MatrixXd states = ss.state_matrix();
  p.ineq_lhs.resize(2 * nxi + s, s);
  p.ineq_rhs.resize(2 * nxi + s);
  p.ineq_lhs.topRows(nxi) = states;
  p.ineq_rhs.head(nxi) = xi.value.array() + ss.membership_tol;
  p.ineq_lhs.middleRows(nxi, nxi) = -states;
  p.ineq_rhs.segment(nxi, nxi) = -(xi.value.array() - ss.membership_tol);
  p.ineq_lhs.bottomRows(s) = -MatrixXd::Identity(s, s);
  p.ineq_rhs.tail(s).setZero();

  const auto sol = optim::solve_qp(p, opts);
  TerminalCost out;
  if (sol.status == optim::QpStatus::infeasible) return out;
  if (sol.status != optim::QpStatus::optimal)
    throw std::runtime_error("terminal_cost: LP failed (" + sol.message + ")");
  out.feasible = true;
  out.value = sol.objective;
  out.gamma = sol.x.cwiseMax(0.0);
  return out;
}

VectorXd safe_policy(const SafeSet& ss, const VectorXd& gamma) {
  if (gamma.size() != ss.size()) throw std::invalid_argument("safe_policy: weight size mismatch");
  return ss.input_matrix() * gamma;
}

}  // namespace deeprc::safe_set
