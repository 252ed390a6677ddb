#include "deeprc/behavior/behavior.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

namespace deeprc::behavior {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

ExtendedState::ExtendedState(VectorXd v, Index m_, Index p_, int ell_)
    : value(std::move(v)), m(m_), p(p_), ell(ell_) {
  if (value.size() != (m + p) * ell) throw std::invalid_argument("extended state: dimension mismatch");
}

ExtendedState ExtendedState::shifted(const VectorXd& u, const VectorXd& y) const {
  if (u.size() != m || y.size() != p) throw std::invalid_argument("extended state: shift dimension");
  VectorXd v(value.size());
  v.head(m * (ell - 1)) = value.segment(m, m * (ell - 1));
  v.segment(m * (ell - 1), m) = u;
  v.segment(m * ell, p * (ell - 1)) = value.segment(m * ell + p, p * (ell - 1));
  v.tail(p) = y;
  return ExtendedState(std::move(v), m, p, ell);
}

ExtendedState ExtendedState::equilibrium(const VectorXd& u, const VectorXd& y, int ell) {
  VectorXd v((u.size() + y.size()) * ell);
  for (int k = 0; k < ell; ++k) v.segment(k * u.size(), u.size()) = u;
  for (int k = 0; k < ell; ++k) v.segment(ell * u.size() + k * y.size(), y.size()) = y;
  return ExtendedState(std::move(v), u.size(), y.size(), ell);
}

ExtendedState extended_state(const lin_plant::Trajectory& traj, int t) {
  if (t < 0 || t > traj.length) throw std::out_of_range("extended_state: t outside [0, T]");
  const int ell = traj.ell;
  VectorXd v((traj.input_dim() + traj.output_dim()) * ell);
  v.head(traj.input_dim() * ell) = traj.input_window(t - 1, ell);
  v.tail(traj.output_dim() * ell) = traj.output_window(t - 1, ell);
  return ExtendedState(std::move(v), traj.input_dim(), traj.output_dim(), ell);
}

MatrixXd hankel(const MatrixXd& signal, int depth) {
  const Index q = signal.rows(), len = signal.cols();
  if (depth < 1 || len < depth) throw std::invalid_argument("hankel: depth exceeds signal length");
  MatrixXd h(q * depth, len - depth + 1);
  for (Index c = 0; c < h.cols(); ++c)
    for (int k = 0; k < depth; ++k) h.block(k * q, c, q, 1) = signal.col(c + k);
  return h;
}

int numerical_rank(const MatrixXd& m, double rel_tol) {
  if (rel_tol <= 0.0) throw std::invalid_argument("numerical_rank: rel_tol must be positive");
  if (m.size() == 0) return 0;
  Eigen::BDCSVD<MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0) return 0;
  int r = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > rel_tol * sv[0]) ++r;
  return r;
}

bool check_identifiability(const MatrixXd& u, const MatrixXd& y, int depth, int n, double rel_tol) {
  if (u.cols() != y.cols()) throw std::invalid_argument("check_identifiability: length mismatch");
  if (u.cols() < depth) throw std::invalid_argument("check_identifiability: signal shorter than depth");
  MatrixXd h(static_cast<Index>((u.rows() + y.rows()) * depth), u.cols() - depth + 1);
  h.topRows(u.rows() * depth) = hankel(u, depth);
  h.bottomRows(y.rows() * depth) = hankel(y, depth);
  return numerical_rank(h, rel_tol) == static_cast<int>(u.rows()) * depth + n;
}

HankelPool::HankelPool(Index m, Index p, int ell, int nbar, double rank_tol)
    : m_(m), p_(p), ell_(ell), nbar_(nbar), rank_tol_(rank_tol) {
  if (ell < 1 || nbar < 1) throw std::invalid_argument("pool: ell and nbar must be positive");
  u_cols_.resize(m_ * depth(), 0);
  y_cols_.resize(p_ * depth(), 0);
}

HankelPool HankelPool::from_trajectory(const lin_plant::Trajectory& traj, int nbar, double rank_tol,
                                       int traj_id) {
  HankelPool pool(traj.input_dim(), traj.output_dim(), traj.ell, nbar, rank_tol);
  const Index cols = std::max<Index>(0, traj.length - (nbar - 1));
  pool.u_cols_.resize(Eigen::NoChange, cols);
  pool.y_cols_.resize(Eigen::NoChange, cols);
  for (Index c = 0; c < cols; ++c) {
    const int t = nbar - 1 + static_cast<int>(c);
    pool.u_cols_.col(c) = traj.input_window(t, pool.depth());
    pool.y_cols_.col(c) = traj.output_window(t, pool.depth());
    pool.tags_.emplace_back(traj_id, t);
  }
  pool.refresh_rank();
  return pool;
}

void HankelPool::append(const lin_plant::Trajectory& traj, int t, int traj_id) {
  if (traj.input_dim() != m_ || traj.output_dim() != p_)
    throw std::invalid_argument("pool: trajectory dimension mismatch");
  if (t >= traj.length) throw std::out_of_range("pool: window end beyond trajectory");
  const Index h = u_cols_.cols();
  u_cols_.conservativeResize(Eigen::NoChange, h + 1);
  y_cols_.conservativeResize(Eigen::NoChange, h + 1);
  u_cols_.col(h) = traj.input_window(t, depth());
  y_cols_.col(h) = traj.output_window(t, depth());
  tags_.emplace_back(traj_id, t);
  refresh_rank();
}

MatrixXd HankelPool::stacked() const {
  MatrixXd s(u_cols_.rows() + y_cols_.rows(), u_cols_.cols());
  s.topRows(u_cols_.rows()) = u_cols_;
  s.bottomRows(y_cols_.rows()) = y_cols_;
  return s;
}

void HankelPool::refresh_rank() { rank_cache_ = numerical_rank(stacked(), rank_tol_); }

HankelPool append_column(const HankelPool& pool, const lin_plant::Trajectory& traj, int t,
                         int traj_id) {
  HankelPool next = pool;
  next.append(traj, t, traj_id);
  return next;
}

MatrixXd HankelBlocks::stacked() const {
  MatrixXd s(u_past.rows() + y_past.rows() + u_future.rows() + y_future.rows(), u_past.cols());
  s.topRows(u_past.rows()) = u_past;
  s.middleRows(u_past.rows(), y_past.rows()) = y_past;
  s.middleRows(u_past.rows() + y_past.rows(), u_future.rows()) = u_future;
  s.bottomRows(y_future.rows()) = y_future;
  return s;
}

HankelBlocks partition(const HankelPool& pool, int t_ini, int horizon) {
  const int sub = t_ini + horizon;
  if (sub < 1 || sub > pool.depth()) throw std::invalid_argument("partition: depth too small");
  const Index m = pool.input_dim(), p = pool.output_dim();

  // Distinct (trajectory, end time) sub-windows in deterministic sorted order.
  std::map<std::pair<int, int>, std::pair<Index, int>> windows;  // key -> (column, offset step)
  const auto& tags = pool.tags();
  for (Index c = 0; c < pool.columns(); ++c) {
    const auto [traj_id, t_end] = tags[c];
    for (int start = 0; start + sub <= pool.depth(); ++start) {
      const int sub_end = t_end - (pool.depth() - sub) + start;
      windows.try_emplace({traj_id, sub_end}, c, start);
    }
  }

  HankelBlocks blocks;
  blocks.t_ini = t_ini;
  blocks.horizon = horizon;
  blocks.m = m;
  blocks.p = p;
  const Index cols = static_cast<Index>(windows.size());
  blocks.u_past.resize(m * t_ini, cols);
  blocks.y_past.resize(p * t_ini, cols);
  blocks.u_future.resize(m * horizon, cols);
  blocks.y_future.resize(p * horizon, cols);
  Index out = 0;
  for (const auto& [key, src] : windows) {
    const auto [col, start] = src;
    blocks.u_past.col(out) = pool.input_columns().block(start * m, col, m * t_ini, 1);
    blocks.u_future.col(out) =
        pool.input_columns().block((start + t_ini) * m, col, m * horizon, 1);
    blocks.y_past.col(out) = pool.output_columns().block(start * p, col, p * t_ini, 1);
    blocks.y_future.col(out) =
        pool.output_columns().block((start + t_ini) * p, col, p * horizon, 1);
    ++out;
  }
  return blocks;
}

int max_horizon(const HankelPool& pool, int n) {
  if (pool.columns() == 0) return 0;
  for (int horizon = pool.nbar(); horizon >= 1; --horizon) {
    const int depth = pool.ell() + horizon;
    const HankelBlocks blocks = partition(pool, pool.ell(), horizon);
    if (numerical_rank(blocks.stacked(), pool.rank_tol()) ==
        static_cast<int>(pool.input_dim()) * depth + n)
      return horizon;
  }
  return 0;
}

VectorXd predict(const HankelBlocks& blocks, const VectorXd& u_ini, const VectorXd& y_ini,
                 const VectorXd& u, int expected_rank, double rank_tol) {
  if (u_ini.size() != blocks.u_past.rows() || y_ini.size() != blocks.y_past.rows() ||
      u.size() != blocks.u_future.rows())
    throw std::invalid_argument("predict: dimension mismatch");
  if (expected_rank > 0 && numerical_rank(blocks.stacked(), rank_tol) != expected_rank)
    throw std::runtime_error("predict: blocks do not satisfy the rank condition");

  MatrixXd stack(blocks.u_past.rows() + blocks.y_past.rows() + blocks.u_future.rows(),
                 blocks.columns());
  stack.topRows(blocks.u_past.rows()) = blocks.u_past;
  stack.middleRows(blocks.u_past.rows(), blocks.y_past.rows()) = blocks.y_past;
  stack.bottomRows(blocks.u_future.rows()) = blocks.u_future;
  VectorXd rhs(stack.rows());
  rhs << u_ini, y_ini, u;

  const Eigen::BDCSVD<MatrixXd> svd(stack, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd g = svd.solve(rhs);
  const double resid = (stack * g - rhs).cwiseAbs().maxCoeff();
  if (resid > 1e-6 * (1.0 + rhs.cwiseAbs().maxCoeff()))
    throw std::runtime_error("predict: initial window inconsistent with the data span (residual " +
                             std::to_string(resid) + ")");
  return blocks.y_future * g;
}

std::pair<MatrixXd, MatrixXd> estimate_extended_dynamics(const HankelBlocks& blocks) {
  if (blocks.horizon != 1)
    throw std::invalid_argument("estimate_extended_dynamics: horizon-1 blocks required");
  const Index m = blocks.m, p = blocks.p;
  const int ell = blocks.t_ini;
  const Index nxi = (m + p) * ell;

  MatrixXd stack(nxi + m, blocks.columns());
  stack.topRows(m * ell) = blocks.u_past;
  stack.middleRows(m * ell, p * ell) = blocks.y_past;
  stack.bottomRows(m) = blocks.u_future;

  MatrixXd shifted(nxi, blocks.columns());
  shifted.topRows(m * (ell - 1)) = blocks.u_past.bottomRows(m * (ell - 1));
  shifted.middleRows(m * (ell - 1), m) = blocks.u_future;
  shifted.middleRows(m * ell, p * (ell - 1)) = blocks.y_past.bottomRows(p * (ell - 1));
  shifted.bottomRows(p) = blocks.y_future;

  const MatrixXd map =
      shifted * stack.completeOrthogonalDecomposition().pseudoInverse();
  return {map.leftCols(nxi), map.rightCols(m)};
}

}  // namespace deeprc::behavior
