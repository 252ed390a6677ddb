#pragma once

#include <Eigen/Core>

#include <utility>
#include <vector>

#include "deeprc/lin_plant/plant.hpp"

namespace deeprc::behavior {

/// Stacked history col(u_{t-ell..t-1}, y_{t-ell..t-1}), dimension (m+p)*ell.
struct ExtendedState {
  Eigen::VectorXd value;
  Eigen::Index m = 0, p = 0;
  int ell = 0;

  ExtendedState() = default;
  ExtendedState(Eigen::VectorXd v, Eigen::Index m_, Eigen::Index p_, int ell_);

  Eigen::VectorXd input_history() const { return value.head(m * ell); }
  Eigen::VectorXd output_history() const { return value.tail(p * ell); }
  /// Most recent input in the history window (u_{t-1}).
  Eigen::VectorXd last_input() const { return value.segment(m * (ell - 1), m); }

  /// History advanced by one step with the applied pair (u_t, y_t).
  ExtendedState shifted(const Eigen::VectorXd& u, const Eigen::VectorXd& y) const;

  /// Constant history at an equilibrium pair.
  static ExtendedState equilibrium(const Eigen::VectorXd& u, const Eigen::VectorXd& y, int ell);
};

/// Extended state of a trajectory at time t in [0, T]; the prefix supplies
/// history before t = ell.
ExtendedState extended_state(const lin_plant::Trajectory& traj, int t);

/// Hankel matrix of the given depth: column k stacks signal columns
/// k..k+depth-1. signal is q x len with len >= depth.
Eigen::MatrixXd hankel(const Eigen::MatrixXd& signal, int depth);

/// Singular values above rel_tol * sigma_max. Zero matrices have rank 0.
int numerical_rank(const Eigen::MatrixXd& m, double rel_tol);

/// Identifiability at depth L (Hankel spans all length-L trajectories):
/// rank H_L(u, y) == m L + n. Signals are q x len matrices.
bool check_identifiability(const Eigen::MatrixXd& u, const Eigen::MatrixXd& y, int depth, int n,
                           double rel_tol = 1e-6);

/// Column pool of depth-(ell + nbar) trajectory windows shared by every
/// controller horizon; shallower Hankel blocks are re-windowed from it.
class HankelPool {
public:
  HankelPool(Eigen::Index m, Eigen::Index p, int ell, int nbar, double rank_tol);

  /// Pool seeded with every depth-(ell+nbar) window of a trajectory
  /// (ends t in [nbar-1, T-1]). A trajectory shorter than the depth
  /// contributes nothing.
  static HankelPool from_trajectory(const lin_plant::Trajectory& traj, int nbar, double rank_tol,
                                    int traj_id = 0);

  /// Appends the window ending at t (history padded with the trajectory's
  /// start pair when the window reaches past the prefix) and refreshes the
  /// cached rank. Throws when the window would need post-T data.
  void append(const lin_plant::Trajectory& traj, int t, int traj_id);

  /// Appends an already-assembled depth-long window (stacked inputs and
  /// outputs) and refreshes the cached rank.
  void append_window(const Eigen::VectorXd& u_window, const Eigen::VectorXd& y_window,
                     int traj_id, int t);

  int depth() const { return ell_ + nbar_; }
  int ell() const { return ell_; }
  int nbar() const { return nbar_; }
  Eigen::Index input_dim() const { return m_; }
  Eigen::Index output_dim() const { return p_; }
  Eigen::Index columns() const { return u_cols_.cols(); }
  int rank() const { return rank_cache_; }
  double rank_tol() const { return rank_tol_; }
  /// Full identifiability rank m*depth + n for a given state dimension.
  int full_rank(int n) const { return static_cast<int>(m_) * depth() + n; }

  const Eigen::MatrixXd& input_columns() const { return u_cols_; }
  const Eigen::MatrixXd& output_columns() const { return y_cols_; }
  /// (trajectory id, window end time) per column.
  const std::vector<std::pair<int, int>>& tags() const { return tags_; }

  /// Stacked col(u_cols, y_cols).
  Eigen::MatrixXd stacked() const;

private:
  Eigen::Index m_, p_;
  int ell_, nbar_;
  double rank_tol_;
  Eigen::MatrixXd u_cols_, y_cols_;
  std::vector<std::pair<int, int>> tags_;
  int rank_cache_ = 0;

  void refresh_rank();
};

/// Copy-append convenience over HankelPool::append.
HankelPool append_column(const HankelPool& pool, const lin_plant::Trajectory& traj, int t,
                         int traj_id = 0);

/// Row partition of depth-(t_ini + horizon) windows re-derived from the pool.
struct HankelBlocks {
  Eigen::MatrixXd u_past, y_past, u_future, y_future;
  int t_ini = 0, horizon = 0;
  Eigen::Index m = 0, p = 0;

  Eigen::Index columns() const { return u_past.cols(); }
  /// col(U_P, Y_P, U_F, Y_F).
  Eigen::MatrixXd stacked() const;
};

/// Every contiguous depth-(t_ini + horizon) segment of the stored windows,
/// deduplicated per (trajectory, end time) and emitted in sorted order.
/// Throws when the pool depth is smaller than t_ini + horizon.
HankelBlocks partition(const HankelPool& pool, int t_ini, int horizon);

/// Largest horizon N <= nbar with rank(depth ell+N re-windowed pool) equal to
/// m(ell+N) + n, searched descending from nbar; 0 when none qualifies.
int max_horizon(const HankelPool& pool, int n);

/// Data-driven response: minimum-norm g with col(U_P, Y_P, U_F) g =
/// col(u_ini, y_ini, u), then y = Y_F g. When expected_rank > 0 the stacked
/// blocks must have exactly that numerical rank. Throws if the initial
/// window is inconsistent with the data span.
Eigen::VectorXd predict(const HankelBlocks& blocks, const Eigen::VectorXd& u_ini,
                        const Eigen::VectorXd& y_ini, const Eigen::VectorXd& u,
                        int expected_rank = -1, double rank_tol = 1e-6);

/// One-step extended-state predictor (Atil, Btil) from horizon-1 blocks via
/// the pseudoinverse of col(U_P, Y_P, U_F).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> estimate_extended_dynamics(const HankelBlocks& blocks);

}  // namespace deeprc::behavior
