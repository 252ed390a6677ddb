#include "deeprc/controllers/controllers.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

namespace deeprc::controllers {

using behavior::ExtendedState;
using behavior::HankelPool;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// ---------------------------------------------------------------------------
// Tracking QP assembly: decision stack x = [g; u; y; gamma] (+ [d+; d-]).

struct QpLayout {
  Index g0 = 0, u0 = 0, y0 = 0, gamma0 = 0, d0 = -1;
  Index ng = 0, nu = 0, ny = 0, ngamma = 0;
  double const_offset = 0.0;
};

std::pair<optim::QuadraticProgram, QpLayout> build_tracking_qp(const ControllerContext& ctx,
                                                               const VectorXd& u_ini,
                                                               const VectorXd& y_ini,
                                                               bool with_disturbance) {
  const Index m = ctx.m, p = ctx.p;
  const int ell = ctx.ell, horizon = ctx.horizon;
  const Index ng = ctx.blocks.columns();
  const Index nu = m * horizon, ny = p * horizon;
  const Index ngamma = ctx.safe_set.size();
  const Index nxi = (m + p) * ell;
  const Index nd = with_disturbance ? 2 * m : 0;

  QpLayout lay;
  lay.ng = ng;
  lay.nu = nu;
  lay.ny = ny;
  lay.ngamma = ngamma;
  lay.g0 = 0;
  lay.u0 = ng;
  lay.y0 = ng + nu;
  lay.gamma0 = ng + nu + ny;
  lay.d0 = with_disturbance ? ng + nu + ny + ngamma : -1;

  optim::QuadraticProgram qp;
  qp.num_vars = ng + nu + ny + ngamma + nd;

  // Objective: sum_k h(u_k, y_k) + gamma' J + damping ||g||^2 (+ lambda ||d||_1).
  qp.quad_cost = MatrixXd::Zero(qp.num_vars, qp.num_vars);
  qp.lin_cost = VectorXd::Zero(qp.num_vars);
  qp.quad_cost.block(lay.g0, lay.g0, ng, ng) =
      2.0 * ctx.g_damping * MatrixXd::Identity(ng, ng);
  for (int k = 0; k < horizon; ++k) {
    qp.quad_cost.block(lay.u0 + k * m, lay.u0 + k * m, m, m) = 2.0 * ctx.r;
    qp.lin_cost.segment(lay.u0 + k * m, m) = -2.0 * ctx.r * ctx.u_target;
    qp.quad_cost.block(lay.y0 + k * p, lay.y0 + k * p, p, p) = 2.0 * ctx.q;
    qp.lin_cost.segment(lay.y0 + k * p, p) = -2.0 * ctx.q * ctx.y_target;
  }
  qp.lin_cost.segment(lay.gamma0, ngamma) = ctx.safe_set.cost_vector();
  if (with_disturbance)
    qp.lin_cost.segment(lay.d0, nd).setConstant(ctx.disturbance_penalty);
  lay.const_offset = horizon * (ctx.u_target.dot(ctx.r * ctx.u_target) +
                                ctx.y_target.dot(ctx.q * ctx.y_target));

  // Equalities: data span, (u, y) links, terminal hull membership, sum gamma.
  const Index me = m * ell + p * ell + nu + ny + nxi + 1;
  qp.eq_lhs = MatrixXd::Zero(me, qp.num_vars);
  qp.eq_rhs = VectorXd::Zero(me);
  Index row = 0;
  qp.eq_lhs.block(row, lay.g0, m * ell, ng) = ctx.blocks.u_past;
  qp.eq_rhs.segment(row, m * ell) = u_ini;
  row += m * ell;
  qp.eq_lhs.block(row, lay.g0, p * ell, ng) = ctx.blocks.y_past;
  qp.eq_rhs.segment(row, p * ell) = y_ini;
  row += p * ell;
  qp.eq_lhs.block(row, lay.g0, nu, ng) = ctx.blocks.u_future;
  qp.eq_lhs.block(row, lay.u0, nu, nu) = -MatrixXd::Identity(nu, nu);
  row += nu;
  qp.eq_lhs.block(row, lay.g0, ny, ng) = ctx.blocks.y_future;
  qp.eq_lhs.block(row, lay.y0, ny, ny) = -MatrixXd::Identity(ny, ny);
  row += ny;
  // Terminal window equals the gamma combination of stored states.
  const MatrixXd states = ctx.safe_set.state_matrix();
  qp.eq_lhs.block(row, lay.u0 + (horizon - ell) * m, m * ell, m * ell) =
      MatrixXd::Identity(m * ell, m * ell);
  qp.eq_lhs.block(row, lay.gamma0, m * ell, ngamma) = -states.topRows(m * ell);
  row += m * ell;
  qp.eq_lhs.block(row, lay.y0 + (horizon - ell) * p, p * ell, p * ell) =
      MatrixXd::Identity(p * ell, p * ell);
  qp.eq_lhs.block(row, lay.gamma0, p * ell, ngamma) = -states.bottomRows(p * ell);
  row += p * ell;
  qp.eq_lhs.block(row, lay.gamma0, 1, ngamma).setOnes();
  qp.eq_rhs[row] = 1.0;

  // Inequalities: stagewise boxes, gamma >= 0 (+ disturbance split rows).
  const Index mi = 2 * (nu + ny) + ngamma + (with_disturbance ? 2 * m + nd : 0);
  qp.ineq_lhs = MatrixXd::Zero(mi, qp.num_vars);
  qp.ineq_rhs = VectorXd::Zero(mi);
  Index irow = 0;
  for (int k = 0; k < horizon; ++k) {
    qp.ineq_lhs.block(irow, lay.u0 + k * m, m, m) = MatrixXd::Identity(m, m);
    qp.ineq_rhs.segment(irow, m) = ctx.input_box.upper;
    irow += m;
    qp.ineq_lhs.block(irow, lay.u0 + k * m, m, m) = -MatrixXd::Identity(m, m);
    qp.ineq_rhs.segment(irow, m) = -ctx.input_box.lower;
    irow += m;
    qp.ineq_lhs.block(irow, lay.y0 + k * p, p, p) = MatrixXd::Identity(p, p);
    qp.ineq_rhs.segment(irow, p) = ctx.output_box.upper;
    irow += p;
    qp.ineq_lhs.block(irow, lay.y0 + k * p, p, p) = -MatrixXd::Identity(p, p);
    qp.ineq_rhs.segment(irow, p) = -ctx.output_box.lower;
    irow += p;
  }
  qp.ineq_lhs.block(irow, lay.gamma0, ngamma, ngamma) = -MatrixXd::Identity(ngamma, ngamma);
  irow += ngamma;
  if (with_disturbance) {
    // d = d+ - d- within the disturbance box, both parts nonnegative.
    qp.ineq_lhs.block(irow, lay.d0, m, m) = MatrixXd::Identity(m, m);
    qp.ineq_lhs.block(irow, lay.d0 + m, m, m) = -MatrixXd::Identity(m, m);
    qp.ineq_rhs.segment(irow, m) = ctx.disturbance_box.upper;
    irow += m;
    qp.ineq_lhs.block(irow, lay.d0, m, m) = -MatrixXd::Identity(m, m);
    qp.ineq_lhs.block(irow, lay.d0 + m, m, m) = MatrixXd::Identity(m, m);
    qp.ineq_rhs.segment(irow, m) = -ctx.disturbance_box.lower;
    irow += m;
    qp.ineq_lhs.block(irow, lay.d0, nd, nd) = -MatrixXd::Identity(nd, nd);
    irow += nd;
  }
  return {std::move(qp), lay};
}

StepResult extract_step(const ControllerContext& ctx, const optim::QpSolution& sol,
                        const QpLayout& lay, const char* who) {
  if (sol.status == optim::QpStatus::infeasible)
    throw std::runtime_error(std::string(who) + ": QP infeasible (recursive feasibility violated)");
  if (sol.status != optim::QpStatus::optimal)
    throw std::runtime_error(std::string(who) + ": QP solve failed: " + sol.message);
  StepResult res;
  res.feasible = true;
  res.nominal_input = sol.x.segment(lay.u0, ctx.m);
  res.nominal_output = sol.x.segment(lay.y0, ctx.p);
  res.applied_input = res.nominal_input;
  res.gamma = sol.x.segment(lay.gamma0, lay.ngamma).cwiseMax(0.0);
  res.predicted_cost = sol.objective + lay.const_offset;
  res.disturbance = VectorXd::Zero(ctx.m);
  return res;
}

// ---------------------------------------------------------------------------
// Excitation machinery.

struct ExcitationData {
  MatrixXd matrix;  // col(Y_up, U), rows p (L-1) + m L
  Eigen::BDCSVD<MatrixXd> svd;
  int rank = 0;
  MatrixXd kernel;  // orthonormal left-kernel basis
};

ExcitationData excitation_data(const HankelPool& pool) {
  const Index m = pool.input_dim(), p = pool.output_dim();
  const int depth = pool.depth();
  ExcitationData ex;
  ex.matrix.resize(p * (depth - 1) + m * depth, pool.columns());
  ex.matrix.topRows(p * (depth - 1)) = pool.output_columns().topRows(p * (depth - 1));
  ex.matrix.bottomRows(m * depth) = pool.input_columns();
  ex.svd.compute(ex.matrix, Eigen::ComputeFullU);
  const auto& sv = ex.svd.singularValues();
  const double smax = sv.size() ? sv[0] : 0.0;
  ex.rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > pool.rank_tol() * smax) ++ex.rank;
  ex.kernel = ex.svd.matrixU().rightCols(ex.matrix.rows() - ex.rank);
  return ex;
}

VectorXd excitation_vector(const VectorXd& y_window, const VectorXd& u_window,
                           const VectorXd& u_candidate) {
  VectorXd v(y_window.size() + u_window.size() + u_candidate.size());
  v << y_window, u_window, u_candidate;
  return v;
}

bool in_image(const ExcitationData& ex, const VectorXd& v, double image_tol) {
  const MatrixXd u_range = ex.svd.matrixU().leftCols(ex.rank);
  const VectorXd residual = v - u_range * (u_range.transpose() * v);
  return residual.norm() <= image_tol * std::max(v.norm(), 1e-300);
}

// 2D polygon clip of the non-exciting region; returns the (column, sign)
// disjuncts whose halfplane touches it. sign +1 maps to sigma = +.
struct Disjunct {
  int column;
  int sign;
};

std::vector<Disjunct> reduce_disjuncts(const MatrixXd& kernel_u, const VectorXd& beta,
                                       double eps) {
  const Index kdim = kernel_u.cols();
  std::vector<Disjunct> all;
  for (Index i = 0; i < kdim; ++i) {
    if (kernel_u.col(i).cwiseAbs().maxCoeff() <= 1e-12) continue;
    all.push_back({static_cast<int>(i), +1});
    all.push_back({static_cast<int>(i), -1});
  }
  if (kernel_u.rows() != 2) return all;  // polygon reduction only in the plane

  // Forbidden polygon P_f = { v : -eps < beta_i + k_i' v < eps } clipped
  // against a large bounding square.
  constexpr double kBig = 1e6;
  std::vector<Eigen::Vector2d> poly = {
      {-kBig, -kBig}, {kBig, -kBig}, {kBig, kBig}, {-kBig, kBig}};
  const auto clip = [&](const Eigen::Vector2d& a, double b) {
    // keep { v : a' v <= b }
    std::vector<Eigen::Vector2d> out;
    const std::size_t n = poly.size();
    for (std::size_t k = 0; k < n && !poly.empty(); ++k) {
      const Eigen::Vector2d& cur = poly[k];
      const Eigen::Vector2d& nxt = poly[(k + 1) % n];
      const double fc = a.dot(cur) - b, fn = a.dot(nxt) - b;
      if (fc <= 0) out.push_back(cur);
      if ((fc < 0 && fn > 0) || (fc > 0 && fn < 0)) {
        const double t = fc / (fc - fn);
        out.push_back(cur + t * (nxt - cur));
      }
    }
    poly = std::move(out);
  };
  for (const auto& dj : all) {
    const Eigen::Vector2d a = dj.sign * kernel_u.col(dj.column);
    clip(a, eps - dj.sign * beta[dj.column]);
    if (poly.empty()) break;
  }
  if (poly.empty()) return {};  // every v excites some column; caller free-scans

  // Keep disjuncts whose boundary comes within tolerance of the polygon:
  // min over vertices of (eps - sigma(beta + k'v)) == 0 marks a facet.
  std::vector<Disjunct> kept;
  for (const auto& dj : all) {
    double slack = std::numeric_limits<double>::infinity();
    for (const auto& v : poly) {
      const double value = dj.sign * (beta[dj.column] + kernel_u.col(dj.column).dot(v.matrix()));
      slack = std::min(slack, eps - value);
    }
    if (slack <= 1e-9 * (1.0 + eps)) kept.push_back(dj);
  }
  return kept;
}

VectorXd window_padded(const std::vector<VectorXd>& record, const VectorXd& pad, int t_end,
                       int depth) {
  const Index q = pad.size();
  VectorXd out(q * depth);
  for (int k = 0; k < depth; ++k) {
    const int t = t_end - depth + 1 + k;
    out.segment(k * q, q) =
        (t >= 0 && t < static_cast<int>(record.size())) ? record[t] : pad;
  }
  return out;
}

}  // namespace

void ControllerContext::validate() const {
  if (horizon < ell) throw std::invalid_argument("context: horizon below ell");
  if (blocks.columns() == 0) throw std::invalid_argument("context: empty Hankel blocks");
  const int want = static_cast<int>(m) * (ell + horizon) + state_dim;
  const int have = behavior::numerical_rank(blocks.stacked(), 1e-6);
  if (have != want)
    throw std::invalid_argument("context: rank condition fails (rank " + std::to_string(have) +
                                ", need " + std::to_string(want) + ")");
  if (mode != StepMode::nominal) {
    const VectorXd dbar =
        disturbance_box.lower.cwiseAbs().cwiseMax(disturbance_box.upper.cwiseAbs());
    if (dbar.size() == 0 || excitation_eps > dbar.minCoeff())
      throw std::invalid_argument("context: excitation epsilon exceeds the disturbance bound");
  }
  if (safe_set.size() == 0) throw std::invalid_argument("context: empty safe set");
}

StepResult nominal_step(const ControllerContext& ctx, const ExtendedState& xi) {
  auto [qp, lay] = build_tracking_qp(ctx, xi.input_history(), xi.output_history(), false);
  const auto sol = optim::solve_qp(qp, ctx.qp_opts);
  return extract_step(ctx, sol, lay, "nominal_step");
}

StepResult tube_step(const ControllerContext& ctx, const ExtendedState& xi,
                     const ExtendedState& zeta) {
  auto [qp, lay] = build_tracking_qp(ctx, zeta.input_history(), zeta.output_history(), false);
  const auto sol = optim::solve_qp(qp, ctx.qp_opts);
  StepResult res = extract_step(ctx, sol, lay, "tube_step");
  res.applied_input = ctx.gain * (xi.value - zeta.value) + res.nominal_input;
  return res;
}

bool excitation_needed(const HankelPool& pool, const VectorXd& y_window, const VectorXd& u_window,
                       const VectorXd& u_candidate, double image_tol) {
  const auto ex = excitation_data(pool);
  return in_image(ex, excitation_vector(y_window, u_window, u_candidate), image_tol);
}

VectorXd design_disturbance(const HankelPool& pool, const VectorXd& y_window,
                            const VectorXd& u_window, const VectorXd& u_candidate,
                            const robust::Box& disturbance_box, double excitation_eps) {
  const Index m = pool.input_dim();
  const auto ex = excitation_data(pool);

  // Kernel column with the strongest input block.
  Index best = -1;
  double best_l1 = 1e-12;
  for (Index i = 0; i < ex.kernel.cols(); ++i) {
    const double l1 = ex.kernel.col(i).tail(m).cwiseAbs().sum();
    if (l1 > best_l1) {
      best_l1 = l1;
      best = i;
    }
  }
  if (best < 0)
    throw std::runtime_error(
        "design_disturbance: exploration stalled (no kernel direction reaches the input)");

  // Scale the input block to unit 1-norm, then push along its sign pattern.
  const VectorXd kappa = ex.kernel.col(best) / best_l1;
  const VectorXd kappa_u = kappa.tail(m);
  const double c = kappa.dot(excitation_vector(y_window, u_window, u_candidate));
  const double sigma = c >= 0.0 ? 1.0 : -1.0;
  const VectorXd dbar =
      disturbance_box.lower.cwiseAbs().cwiseMax(disturbance_box.upper.cwiseAbs());
  VectorXd d(m);
  for (Index i = 0; i < m; ++i) {
    const double s = kappa_u[i] > 0.0 ? 1.0 : (kappa_u[i] < 0.0 ? -1.0 : 0.0);
    d[i] = sigma * dbar[i] * s;
  }
  if (std::abs(c + d.dot(kappa_u)) < excitation_eps)
    throw std::runtime_error("design_disturbance: excitation margin not met (|c + d'k| = " +
                             std::to_string(std::abs(c + d.dot(kappa_u))) + ")");
  return d;
}

StepResult end_to_end_step(const ControllerContext& ctx, const ExtendedState& xi,
                           const ExtendedState& zeta, const HankelPool& pool,
                           const VectorXd& y_window, const VectorXd& u_window) {
  const Index m = ctx.m;
  const auto ex = excitation_data(pool);
  const Index kdim = ex.kernel.cols();
  const VectorXd feedback = ctx.gain * (xi.value - zeta.value);

  // Constant part beta_i = kappa_i' [y_win; u_win; k0] (u0 = v0 + k0).
  const VectorXd base_vec = excitation_vector(y_window, u_window, feedback);
  const VectorXd beta = ex.kernel.transpose() * base_vec;
  const MatrixXd kernel_u = ex.kernel.bottomRows(m);

  // Base relaxation: the tube QP without the excitation constraint. Its
  // value lower-bounds every disjunct, so a disjunct already satisfied at
  // the base optimum with d = 0 is globally optimal.
  auto [base_qp, lay] = build_tracking_qp(ctx, zeta.input_history(), zeta.output_history(), false);
  const auto base_sol = optim::solve_qp(base_qp, ctx.qp_opts);
  StepResult base = extract_step(ctx, base_sol, lay, "end_to_end_step(base)");
  const VectorXd v_base = base.nominal_input;
  for (Index i = 0; i < kdim; ++i) {
    for (const int sigma : {+1, -1}) {
      if (sigma * (beta[i] + kernel_u.col(i).dot(v_base)) >= ctx.excitation_eps - 1e-12) {
        base.applied_input = v_base + feedback;
        base.disjunct_index = static_cast<int>(i);
        base.disjunct_sign = sigma;
        return base;
      }
    }
  }

  const auto candidates = reduce_disjuncts(kernel_u, beta, ctx.excitation_eps);
  if (candidates.empty())
    throw std::runtime_error("end_to_end_step: no excitation disjunct available");

  auto [qp, dlay] = build_tracking_qp(ctx, zeta.input_history(), zeta.output_history(), true);
  const Index erow = qp.ineq_lhs.rows();
  qp.ineq_lhs.conservativeResize(erow + 1, Eigen::NoChange);
  qp.ineq_rhs.conservativeResize(erow + 1);

  StepResult best;
  double best_value = std::numeric_limits<double>::infinity();
  int best_col = -1, best_sign = 0;
  VectorXd best_d;
  for (const auto& dj : candidates) {
    // sigma (beta + k'(v0 + d+ - d-)) >= eps as a row of the QP.
    qp.ineq_lhs.row(erow).setZero();
    const VectorXd k = kernel_u.col(dj.column);
    qp.ineq_lhs.row(erow).segment(dlay.u0, m) = -dj.sign * k.transpose();
    qp.ineq_lhs.row(erow).segment(dlay.d0, m) = -dj.sign * k.transpose();
    qp.ineq_lhs.row(erow).segment(dlay.d0 + m, m) = dj.sign * k.transpose();
    qp.ineq_rhs[erow] = dj.sign * beta[dj.column] - ctx.excitation_eps;

    const auto sol = optim::solve_qp(qp, ctx.qp_opts);
    if (sol.status != optim::QpStatus::optimal) continue;
    const double value = sol.objective + dlay.const_offset;
    if (value < best_value - 1e-12) {
      best_value = value;
      best = StepResult{};
      best.feasible = true;
      best.nominal_input = sol.x.segment(dlay.u0, m);
      best.nominal_output = sol.x.segment(dlay.y0, ctx.p);
      best.gamma = sol.x.segment(dlay.gamma0, dlay.ngamma).cwiseMax(0.0);
      best.predicted_cost = value;
      best_d = sol.x.segment(dlay.d0, m) - sol.x.segment(dlay.d0 + m, m);
      best_col = dj.column;
      best_sign = dj.sign;
    }
  }
  if (best_col < 0)
    throw std::runtime_error(
        "end_to_end_step: all excitation disjuncts infeasible (contradicts recursive "
        "feasibility)");
  best.disturbance = best_d;
  best.disjunct_index = best_col;
  best.disjunct_sign = best_sign;
  best.applied_input = best.nominal_input + feedback + best_d;
  return best;
}

IterationResult run_iteration(const ControllerContext& ctx, const lin_plant::PlantModel& plant,
                              const VectorXd& x_start, HankelPool& pool, int iteration_id,
                              const IterationKnobs& knobs) {
  const Index m = ctx.m, p = ctx.p;
  const int depth = pool.depth();
  const VectorXd u_pad = ctx.safe_set.samples.empty() ? VectorXd::Zero(m)
                                                      : VectorXd(ctx.u_targetish());
  (void)u_pad;
  IterationResult out;

  std::vector<VectorXd> us, ys, vs, zs;
  VectorXd x = x_start;
  // Start pair doubles as the pre-iteration equilibrium padding.
  const VectorXd u_start_pad = ctx.start_input();
  const VectorXd y_start_pad = ctx.start_output();
  ExtendedState xi = ExtendedState::equilibrium(u_start_pad, y_start_pad, ctx.ell);
  ExtendedState zeta = xi;
  const ExtendedState xi_target =
      ExtendedState::equilibrium(ctx.u_target, ctx.y_target, ctx.ell);

  int steps = -1;
  for (int t = 0; t < knobs.step_cap; ++t) {
    const bool rank_open = pool.rank() < knobs.full_rank;
    const bool window_ready = knobs.explore && t >= ctx.horizon - 1 && rank_open;

    StepResult res;
    VectorXd d = VectorXd::Zero(m);
    if (ctx.mode == StepMode::nominal) {
      res = nominal_step(ctx, xi);
    } else if (ctx.mode == StepMode::end_to_end && window_ready) {
      const VectorXd y_win = window_padded(ys, y_start_pad, t - 1, depth - 1);
      const VectorXd u_win = window_padded(us, u_start_pad, t - 1, depth - 1);
      res = end_to_end_step(ctx, xi, zeta, pool, y_win, u_win);
      d = res.disturbance;
      res.explored = true;
    } else {
      res = tube_step(ctx, xi, zeta);
      if (ctx.mode == StepMode::tube_lkb && window_ready) {
        const VectorXd y_win = window_padded(ys, y_start_pad, t - 1, depth - 1);
        const VectorXd u_win = window_padded(us, u_start_pad, t - 1, depth - 1);
        if (excitation_needed(pool, y_win, u_win, res.applied_input, knobs.image_tol)) {
          d = design_disturbance(pool, y_win, u_win, res.applied_input, ctx.disturbance_box,
                                 ctx.excitation_eps);
          res.explored = true;
        }
      }
    }

    const VectorXd u_t = res.applied_input + (ctx.mode == StepMode::end_to_end ? VectorXd::Zero(m)
                                                                               : d);
    auto [x_next, y_t] = lin_plant::step(plant, x, u_t);
    us.push_back(u_t);
    ys.push_back(y_t);
    if (ctx.mode == StepMode::nominal) {
      vs.push_back(u_t);
      zs.push_back(y_t);
    } else {
      vs.push_back(res.nominal_input);
      zs.push_back(res.nominal_output);
    }
    x = x_next;
    xi = xi.shifted(u_t, y_t);
    zeta = ctx.mode == StepMode::nominal ? xi : zeta.shifted(res.nominal_input, res.nominal_output);

    // Pool updates: exploration appends the just-completed window; passive
    // appends every window deep enough to avoid prefix padding.
    const bool explored_step = res.explored && (ctx.mode == StepMode::end_to_end || d.cwiseAbs().maxCoeff() > 0.0);
    if (explored_step || (knobs.passive_appends && t >= pool.nbar() - 1)) {
      pool.append_window(window_padded(us, u_start_pad, t, depth),
                         window_padded(ys, y_start_pad, t, depth), iteration_id, t);
      out.rank_trace.emplace_back(static_cast<int>(pool.columns()), pool.rank());
      ++out.appended_columns;
      if (explored_step && d.cwiseAbs().maxCoeff() > 0.0) ++out.steps_with_disturbance;
    }

    StepRecord rec;
    rec.iteration = iteration_id;
    rec.t = t;
    rec.feasible = res.feasible;
    rec.nominal_mode = ctx.mode == StepMode::nominal;
    rec.predicted_cost = res.predicted_cost;
    rec.stage_cost = safe_set::stage_cost(u_t, y_t, ctx.q, ctx.r, ctx.u_target, ctx.y_target);
    rec.disturbance_norm = d.cwiseAbs().maxCoeff();
    rec.explored = explored_step;
    out.steps.push_back(rec);

    const double err_real = (xi.value - xi_target.value).cwiseAbs().maxCoeff();
    const double err_nom =
        ctx.mode == StepMode::nominal ? 0.0 : (zeta.value - xi_target.value).cwiseAbs().maxCoeff();
    if (std::max(err_real, err_nom) <= knobs.terminal_tol) {
      steps = t + 1;
      break;
    }
  }
  if (steps < 0)
    throw std::runtime_error("run_iteration: iteration did not converge within the step cap");

  out.rank_completed = pool.rank() >= knobs.full_rank;
  // Package the records as prefixed trajectories.
  MatrixXd u_all(m, ctx.ell + steps), y_all(p, ctx.ell + steps);
  MatrixXd v_all(m, ctx.ell + steps), z_all(p, ctx.ell + steps);
  for (int k = 0; k < ctx.ell; ++k) {
    u_all.col(k) = u_start_pad;
    y_all.col(k) = y_start_pad;
    v_all.col(k) = u_start_pad;
    z_all.col(k) = y_start_pad;
  }
  for (int t = 0; t < steps; ++t) {
    u_all.col(ctx.ell + t) = us[t];
    y_all.col(ctx.ell + t) = ys[t];
    v_all.col(ctx.ell + t) = vs[t];
    z_all.col(ctx.ell + t) = zs[t];
  }
  out.real = lin_plant::Trajectory(u_all, y_all, ctx.ell);
  out.nominal = lin_plant::Trajectory(v_all, z_all, ctx.ell);
  return out;
}

}  // namespace deeprc::controllers
