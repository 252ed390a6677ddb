#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "deeprc/behavior/behavior.hpp"
#include "deeprc/optim/qp.hpp"
#include "deeprc/robust/tube.hpp"
#include "deeprc/safe_set/safe_set.hpp"

namespace deeprc::controllers {

enum class StepMode { nominal, tube_lkb, end_to_end };

/// Frozen per-iteration controller configuration.
struct ControllerContext {
  StepMode mode = StepMode::nominal;
  int horizon = 0;  ///< N, at least ell
  behavior::HankelBlocks blocks;
  safe_set::SafeSet safe_set;
  robust::Box input_box, output_box;  ///< tightened boxes in tube modes
  Eigen::MatrixXd gain;               ///< error feedback K (tube modes)
  robust::RpiSet rpi;
  Eigen::MatrixXd q, r;
  Eigen::VectorXd u_target, y_target;
  double excitation_eps = 1e-3;      ///< epsilon in the excitation constraint
  double disturbance_penalty = 10.0; ///< lambda on ||d||_1
  robust::Box disturbance_box;
  int nbar = 0;
  int ell = 0;
  Eigen::Index m = 0, p = 0;
  int state_dim = 0;  ///< n, for the rank condition
  double g_damping = 1e-10;
  optim::SolverOptions qp_opts;

  /// Checks the rank condition for depth ell + horizon, horizon >= ell and
  /// epsilon <= disturbance bound. Throws std::invalid_argument.
  void validate() const;
};

struct StepResult {
  Eigen::VectorXd applied_input;   ///< u_t (excludes any externally added d)
  Eigen::VectorXd nominal_input;   ///< v_0 (tube modes; equals applied for nominal)
  Eigen::VectorXd nominal_output;  ///< z_0 prediction
  Eigen::VectorXd disturbance;     ///< d chosen inside the step (end-to-end)
  double predicted_cost = 0.0;     ///< optimal objective J*_N (plus penalty in end-to-end)
  Eigen::VectorXd gamma;
  bool feasible = false;
  int rank_after = 0;       ///< pool rank after the step (filled by run_iteration)
  int disjunct_index = -1;  ///< end-to-end: kernel column of the active disjunct
  int disjunct_sign = 0;    ///< end-to-end: sign of the active disjunct
  bool explored = false;    ///< a pool column was appended this step
};

/// Nominal controller step: one QP over (g, u, y, gamma) with the safe-set
/// terminal constraint embedded. Throws on an infeasible QP.
StepResult nominal_step(const ControllerContext& ctx, const behavior::ExtendedState& xi);

/// Tube controller step on the nominal state zeta; the applied input is
/// K (xi - zeta) + v0*. Throws on an infeasible QP.
StepResult tube_step(const ControllerContext& ctx, const behavior::ExtendedState& xi,
                     const behavior::ExtendedState& zeta);

/// True when col(y_window, u_window, u_candidate) lies in the image of the
/// pool's excitation matrix col(Y_up, U), i.e. the candidate input adds no
/// new information and a disturbance must be designed.
bool excitation_needed(const behavior::HankelPool& pool, const Eigen::VectorXd& y_window,
                       const Eigen::VectorXd& u_window, const Eigen::VectorXd& u_candidate,
                       double image_tol);

/// Left-kernel disturbance: picks the kernel basis column with the largest
/// input-block 1-norm, scales that block to unit 1-norm and returns
/// d = +-dbar sign(kappa_u) so the appended column is guaranteed novel.
/// Throws "exploration stalled" when no kernel column touches the input.
Eigen::VectorXd design_disturbance(const behavior::HankelPool& pool,
                                   const Eigen::VectorXd& y_window,
                                   const Eigen::VectorXd& u_window,
                                   const Eigen::VectorXd& u_candidate,
                                   const robust::Box& disturbance_box, double excitation_eps);

/// End-to-end step: the tube QP augmented with (d, |d|) variables and the
/// two-sided excitation disjunction, solved by enumerating one convex QP per
/// non-redundant (kernel column, sign) pair. Equivalent to the big-M MIQP.
/// Throws when every disjunct is infeasible.
StepResult end_to_end_step(const ControllerContext& ctx, const behavior::ExtendedState& xi,
                           const behavior::ExtendedState& zeta, const behavior::HankelPool& pool,
                           const Eigen::VectorXd& y_window, const Eigen::VectorXd& u_window);

struct StepRecord {
  int iteration = 0;
  int t = 0;
  bool feasible = false;
  bool nominal_mode = false;
  double predicted_cost = 0.0;
  double stage_cost = 0.0;     ///< h(u_t, y_t) of the applied pair
  double disturbance_norm = 0.0;
  bool explored = false;
};

struct IterationKnobs {
  bool explore = false;          ///< LKB exploration active (tube modes)
  bool passive_appends = false;  ///< append every window with end >= nbar-1
  double image_tol = 1e-7;
  double terminal_tol = 1e-4;
  int step_cap = 10000;
  int full_rank = 0;  ///< m (ell+nbar) + n
};

struct IterationResult {
  lin_plant::Trajectory real;
  lin_plant::Trajectory nominal;  ///< equals real in nominal mode
  std::vector<std::pair<int, int>> rank_trace;  ///< (columns, rank) after each append
  std::vector<StepRecord> steps;
  int steps_with_disturbance = 0;
  int appended_columns = 0;
  bool rank_completed = false;
};

/// One closed-loop iteration from the start state to the target ball.
/// Mutates the pool through exploration / passive appends. Throws when the
/// step cap is reached before convergence.
IterationResult run_iteration(const ControllerContext& ctx, const lin_plant::PlantModel& plant,
                              const Eigen::VectorXd& x_start, behavior::HankelPool& pool,
                              int iteration_id, const IterationKnobs& knobs);

/// Experiment-level strategy (Algorithm 1 and its baselines).
enum class ExperimentMode { nominal_fixed, passive, two_stage_lkb, one_stage };

std::string mode_label(ExperimentMode mode);

struct RunConfig {
  ExperimentMode mode = ExperimentMode::two_stage_lkb;
  int ell = 0;
  int nbar = 0;
  int state_dim = 0;
  Eigen::MatrixXd q, r;
  Eigen::VectorXd u_start, y_start, u_target, y_target;
  robust::Box input_box, output_box, disturbance_box;
  Eigen::MatrixXd tube_q, tube_r;
  int rpi_horizon = 50;
  double rpi_alpha_tol = 1e-6;
  double excitation_eps = 1e-3;
  double disturbance_penalty = 10.0;
  double image_tol = 1e-7;
  double rank_tol = 1e-6;
  double terminal_tol = 1e-4;
  double convergence_tol = 1e-6;
  int max_iterations = 4;
  int step_cap_factor = 10;
  double g_damping = 1e-10;
  optim::SolverOptions qp_opts;
};

struct IterationRecord {
  int j = 0;
  int horizon = 0;
  double cost_real = 0.0;
  double cost_nominal = 0.0;
  int steps = 0;
  double wall_ms = 0.0;
  bool tube_branch = false;
};

struct RunResult {
  std::vector<IterationRecord> iterations;  ///< j = 0 row included
  std::vector<std::pair<int, int>> rank_trace;  ///< starts at the initial pool state
  std::vector<lin_plant::Trajectory> real_trajectories;     ///< index j
  std::vector<lin_plant::Trajectory> nominal_trajectories;  ///< index j
  std::vector<StepRecord> step_records;
  safe_set::SafeSet final_safe_set;
  int initial_rank = 0;
  int full_rank = 0;
  int steps_with_disturbance = 0;
  int appended_columns = 0;
  bool converged = false;
};

/// Full repetitive run: iterates run_iteration, grows the safe set per
/// branch, switches to the nominal controller once the target rank is
/// reached, and stops on trajectory convergence or the iteration cap.
RunResult run_deeprc(const RunConfig& cfg, const lin_plant::PlantModel& plant,
                     const lin_plant::Trajectory& initial);

}  // namespace deeprc::controllers
