#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <utility>

#include "deeprc/robust/box.hpp"

namespace deeprc::lin_plant {

/// Discrete-time LTI plant x+ = Ax + Bu, y = Cx + Du. Ground truth for the
/// closed-loop harness and test oracles only; the controllers never see it.
struct PlantModel {
  Eigen::MatrixXd a, b, c, d;
  Eigen::Index n = 0, m = 0, p = 0;

  /// Throws std::invalid_argument on dimension mismatch, an unobservable
  /// (A,C) pair or an unstabilizable (A,B) pair.
  PlantModel(Eigen::MatrixXd a_, Eigen::MatrixXd b_, Eigen::MatrixXd c_, Eigen::MatrixXd d_,
             double rank_tol = 1e-9);

  /// Minimum history length making the observability stack full rank.
  int lag() const;
};

/// One iteration's input/output record, indexed t in [-ell, length-1]. The
/// ell-step prefix holds the constant start pair (u_start, y_start); windows
/// reaching further back are padded with the same pair, which is exact when
/// the start is an equilibrium.
struct Trajectory {
  Eigen::MatrixXd inputs;   // m x (ell + length)
  Eigen::MatrixXd outputs;  // p x (ell + length)
  int ell = 0;
  int length = 0;  // T, number of post-prefix steps

  Trajectory() = default;
  Trajectory(Eigen::MatrixXd u, Eigen::MatrixXd y, int ell_);

  Eigen::VectorXd input(int t) const { return column(inputs, t); }
  Eigen::VectorXd output(int t) const { return column(outputs, t); }

  /// Stacked col(u_{t_end-depth+1}, ..., u_{t_end}); indices before -ell are
  /// padded with the start input.
  Eigen::VectorXd input_window(int t_end, int depth) const { return window(inputs, t_end, depth); }
  Eigen::VectorXd output_window(int t_end, int depth) const { return window(outputs, t_end, depth); }

  Eigen::Index input_dim() const { return inputs.rows(); }
  Eigen::Index output_dim() const { return outputs.rows(); }

private:
  Eigen::VectorXd column(const Eigen::MatrixXd& sig, int t) const;
  Eigen::VectorXd window(const Eigen::MatrixXd& sig, int t_end, int depth) const;
};

/// One exact plant update. Throws on dimension mismatch.
std::pair<Eigen::VectorXd, Eigen::VectorXd> step(const PlantModel& plant, const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& u);

/// Stabilizing state-feedback gain K (u = K x, rho(A+BK) < 1) from the
/// discrete algebraic Riccati equation, solved by fixed-point iteration to
/// 1e-10 elementwise. Optionally returns the Riccati cost matrix P.
/// Throws on an unstabilizable pair or non-convergence.
Eigen::MatrixXd dare_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                          const Eigen::MatrixXd& qw, const Eigen::MatrixXd& rw,
                          Eigen::MatrixXd* cost_matrix = nullptr);

/// Steady state (x_ss, u_ss) holding the output at y_ref. Throws when no
/// consistent steady state exists.
std::pair<Eigen::VectorXd, Eigen::VectorXd> steady_state_for_output(const PlantModel& plant,
                                                                    const Eigen::VectorXd& y_ref);

/// Reconstructs the plant state at the window end from an input/output
/// window of at least lag() steps. Oracle utility for harness and tests.
Eigen::VectorXd state_from_window(const PlantModel& plant, const Eigen::VectorXd& u_window,
                                  const Eigen::VectorXd& y_window);

/// Exact non-minimal extended-state realization xi+ = Atil xi + Btil u with
/// xi = col(u-history, y-history) over an ell-step window, ell >= lag().
/// Harness/oracle utility; the controllers estimate this map from data.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> extended_dynamics_from_plant(const PlantModel& plant,
                                                                         int ell);

struct InitConfig {
  Eigen::MatrixXd lqr_q;  // extended-state weight for the seeding LQR
  Eigen::MatrixXd lqr_r;  // input weight
  double noise_amplitude = 0.05;
  int noise_steps = 20;
  Eigen::VectorXd u_start, y_start;
  Eigen::VectorXd u_target, y_target;
  int ell = 0;
  double terminal_tol = 1e-4;
  int step_cap = 20000;
  robust::Box input_box, output_box;  // safety envelope for the seeded run
};

/// Seeded safe trajectory: LQR tracking of the target with uniform input
/// disturbances on the first noise_steps steps. Deterministic per seed.
/// Throws if the run violates the boxes or fails to converge within the cap.
Trajectory generate_initial_trajectory(const PlantModel& plant, const InitConfig& cfg,
                                       std::uint64_t seed);

/// The linearized four-tank benchmark plant (n=4, m=2, p=2, D=0).
PlantModel four_tank();

}  // namespace deeprc::lin_plant
