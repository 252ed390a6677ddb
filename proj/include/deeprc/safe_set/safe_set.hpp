#pragma once

#include <Eigen/Core>

#include <vector>

#include "deeprc/behavior/behavior.hpp"
#include "deeprc/optim/qp.hpp"
#include "deeprc/robust/box.hpp"

namespace deeprc::safe_set {

/// Stage cost h(u, y) = ||u - u_target||^2_R + ||y - y_target||^2_Q.
double stage_cost(const Eigen::VectorXd& u, const Eigen::VectorXd& y, const Eigen::MatrixXd& q,
                  const Eigen::MatrixXd& r, const Eigen::VectorXd& u_target,
                  const Eigen::VectorXd& y_target);

/// Tail cost of a stored trajectory from time t (0 at t = T).
double cost_to_go(const lin_plant::Trajectory& traj, int t, const Eigen::MatrixXd& q,
                  const Eigen::MatrixXd& r, const Eigen::VectorXd& u_target,
                  const Eigen::VectorXd& y_target);

struct Sample {
  behavior::ExtendedState state;
  double cost_to_go = 0.0;
  Eigen::VectorXd next_input;  ///< input applied at this sample (target input at t = T)
  int iteration_id = 0;
  int time_index = 0;
  bool nominal_branch = false;  ///< true when produced by the tube controller's nominal system
};

/// Convex safe set: extended states along past safe trajectories with their
/// costs-to-go. Grows append-only; never pruned.
struct SafeSet {
  std::vector<Sample> samples;
  behavior::ExtendedState target;
  double membership_tol = 1e-7;  ///< equality relaxation in the terminal-cost LP

  Eigen::Index size() const { return static_cast<Eigen::Index>(samples.size()); }
  /// n_xi x size matrix of stored states.
  Eigen::MatrixXd state_matrix() const;
  Eigen::VectorXd cost_vector() const;
  /// m x size matrix of stored next inputs.
  Eigen::MatrixXd input_matrix() const;
};

/// Appends every (state, cost-to-go, input) sample of a safe trajectory,
/// t in [0, T]. The trajectory must end at the target extended state within
/// terminal_tol (the stored terminal sample is snapped onto the target) and
/// stay inside the given boxes; violations throw with the first offending
/// constraint named.
void add_trajectory(SafeSet& ss, const lin_plant::Trajectory& traj, const Eigen::MatrixXd& q,
                    const Eigen::MatrixXd& r, const Eigen::VectorXd& u_target,
                    const Eigen::VectorXd& y_target, const robust::Box& input_box,
                    const robust::Box& output_box, int iteration_id, bool nominal_branch,
                    double terminal_tol = 1e-4);

struct TerminalCost {
  bool feasible = false;
  double value = 0.0;
  Eigen::VectorXd gamma;
};

/// Terminal-cost LP: cheapest convex combination of stored samples matching
/// xi (within membership_tol). Infeasible when xi lies outside the hull.
TerminalCost terminal_cost(const SafeSet& ss, const behavior::ExtendedState& xi,
                           const optim::SolverOptions& opts = {});

/// Safe policy: convex combination of the stored next inputs under gamma.
Eigen::VectorXd safe_policy(const SafeSet& ss, const Eigen::VectorXd& gamma);

}  // namespace deeprc::safe_set
