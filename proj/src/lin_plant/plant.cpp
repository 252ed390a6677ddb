#include "deeprc/lin_plant/plant.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "deeprc/rng.hpp"

namespace deeprc::lin_plant {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

int rank_of(const MatrixXd& m, double rel_tol) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv[0] <= 0.0) return 0;
  int r = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv[i] > rel_tol * sv[0]) ++r;
  return r;
}

MatrixXd observability_stack(const MatrixXd& a, const MatrixXd& c, int depth) {
  MatrixXd obs(c.rows() * depth, a.rows());
  MatrixXd cak = c;
  for (int k = 0; k < depth; ++k) {
    obs.middleRows(k * c.rows(), c.rows()) = cak;
    cak = cak * a;
  }
  return obs;
}

double spectral_radius(const MatrixXd& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

PlantModel::PlantModel(MatrixXd a_, MatrixXd b_, MatrixXd c_, MatrixXd d_, double rank_tol)
    : a(std::move(a_)), b(std::move(b_)), c(std::move(c_)), d(std::move(d_)) {
  n = a.rows();
  m = b.cols();
  p = c.rows();
  if (a.cols() != n) throw std::invalid_argument("plant: A must be square");
  if (b.rows() != n) throw std::invalid_argument("plant: B row count mismatch");
  if (c.cols() != n) throw std::invalid_argument("plant: C column count mismatch");
  if (d.rows() != p || d.cols() != m) throw std::invalid_argument("plant: D dimension mismatch");

  if (rank_of(observability_stack(a, c, static_cast<int>(n)), rank_tol) != n)
    throw std::invalid_argument("plant: (A, C) is not observable");

  // PBH test on strictly unstable eigenvalues. Marginally stable modes are
  // tolerated here; dare_gain reports them through non-convergence instead.
  Eigen::EigenSolver<MatrixXd> es(a);
  for (Index i = 0; i < n; ++i) {
    const std::complex<double> lam = es.eigenvalues()[i];
    if (std::abs(lam) <= 1.0 + 1e-9) continue;
    Eigen::MatrixXcd pbh(n, n + m);
    pbh.leftCols(n) = a.cast<std::complex<double>>() - lam * Eigen::MatrixXcd::Identity(n, n);
    pbh.rightCols(m) = b.cast<std::complex<double>>();
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(pbh);
    const auto& sv = svd.singularValues();
    int r = 0;
    for (Index k = 0; k < sv.size(); ++k)
      if (sv[k] > rank_tol * sv[0]) ++r;
    if (r != n) throw std::invalid_argument("plant: (A, B) is not stabilizable");
  }
}

int PlantModel::lag() const {
  for (int depth = 1; depth <= n; ++depth) {
    if (rank_of(observability_stack(a, c, depth), 1e-9) == n) return depth;
  }
  throw std::logic_error("plant: lag not found for an observable pair");
}

Trajectory::Trajectory(MatrixXd u, MatrixXd y, int ell_) : inputs(std::move(u)), outputs(std::move(y)), ell(ell_) {
  if (inputs.cols() != outputs.cols()) throw std::invalid_argument("trajectory: length mismatch");
  length = static_cast<int>(inputs.cols()) - ell;
  if (length < 1) throw std::invalid_argument("trajectory: need at least one post-prefix step");
}

VectorXd Trajectory::column(const MatrixXd& sig, int t) const {
  if (t < -ell || t >= length) throw std::out_of_range("trajectory: time index out of range");
  return sig.col(t + ell);
}

VectorXd Trajectory::window(const MatrixXd& sig, int t_end, int depth) const {
  if (t_end >= length || depth < 1) throw std::out_of_range("trajectory: bad window");
  const Index q = sig.rows();
  VectorXd out(q * depth);
  for (int k = 0; k < depth; ++k) {
    const int t = t_end - depth + 1 + k;
    // Times before the stored prefix repeat the start pair (equilibrium).
    out.segment(k * q, q) = sig.col(std::max(t, -ell) + ell);
  }
  return out;
}

std::pair<VectorXd, VectorXd> step(const PlantModel& plant, const VectorXd& x, const VectorXd& u) {
  if (x.size() != plant.n || u.size() != plant.m)
    throw std::invalid_argument("step: dimension mismatch");
  return {plant.a * x + plant.b * u, plant.c * x + plant.d * u};
}

MatrixXd dare_gain(const MatrixXd& a, const MatrixXd& b, const MatrixXd& qw, const MatrixXd& rw,
                   MatrixXd* cost_matrix) {
  const Index n = a.rows(), m = b.cols();
  if (a.cols() != n || b.rows() != n || qw.rows() != n || qw.cols() != n || rw.rows() != m ||
      rw.cols() != m)
    throw std::invalid_argument("dare_gain: dimension mismatch");

  MatrixXd pmat = qw;
  constexpr int kMaxIter = 10000;
  bool converged = false;
  for (int it = 0; it < kMaxIter; ++it) {
    const MatrixXd btp = b.transpose() * pmat;
    const MatrixXd gain_term = (rw + btp * b).ldlt().solve(btp * a);
    const MatrixXd next = a.transpose() * pmat * a - a.transpose() * pmat * b * gain_term + qw;
    const double delta = (next - pmat).cwiseAbs().maxCoeff();
    pmat = 0.5 * (next + next.transpose());  // keep symmetric against drift
    if (delta <= 1e-10) {
      converged = true;
      break;
    }
    if (!pmat.allFinite()) throw std::runtime_error("dare_gain: iteration diverged (pair not stabilizable?)");
  }
  if (!converged) throw std::runtime_error("dare_gain: no convergence within 10000 iterations");

  const MatrixXd btp = b.transpose() * pmat;
  const MatrixXd k = -(rw + btp * b).ldlt().solve(btp * a);
  const double rho = spectral_radius(a + b * k);
  if (rho >= 1.0)
    throw std::runtime_error("dare_gain: closed loop not stable (rho=" + std::to_string(rho) + ")");
  if (cost_matrix) *cost_matrix = pmat;
  return k;
}

std::pair<VectorXd, VectorXd> steady_state_for_output(const PlantModel& plant,
                                                      const VectorXd& y_ref) {
  if (y_ref.size() != plant.p) throw std::invalid_argument("steady_state: output size mismatch");
  const Index n = plant.n, m = plant.m, p = plant.p;
  MatrixXd sys(n + p, n + m);
  sys.topLeftCorner(n, n) = plant.a - MatrixXd::Identity(n, n);
  sys.topRightCorner(n, m) = plant.b;
  sys.bottomLeftCorner(p, n) = plant.c;
  sys.bottomRightCorner(p, m) = plant.d;
  VectorXd rhs = VectorXd::Zero(n + p);
  rhs.tail(p) = y_ref;
  const VectorXd sol = sys.completeOrthogonalDecomposition().solve(rhs);
  if ((sys * sol - rhs).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + y_ref.cwiseAbs().maxCoeff()))
    throw std::runtime_error("steady_state: no steady state reaches the requested output");
  return {sol.head(n), sol.tail(m)};
}

VectorXd state_from_window(const PlantModel& plant, const VectorXd& u_window,
                           const VectorXd& y_window) {
  const Index m = plant.m, p = plant.p;
  if (u_window.size() % m != 0 || y_window.size() % p != 0)
    throw std::invalid_argument("state_from_window: window size mismatch");
  const int steps = static_cast<int>(u_window.size() / m);
  if (steps != static_cast<int>(y_window.size() / p) || steps < plant.lag())
    throw std::invalid_argument("state_from_window: need at least lag() steps");

  // y_window = obs * x0 + toeplitz * u_window; least-squares for x0, then
  // roll the state to the window end.
  const MatrixXd obs = observability_stack(plant.a, plant.c, steps);
  MatrixXd toep = MatrixXd::Zero(p * steps, m * steps);
  for (int row = 0; row < steps; ++row) toep.block(row * p, row * m, p, m) = plant.d;
  MatrixXd apow = MatrixXd::Identity(plant.n, plant.n);
  for (int diag = 1; diag < steps; ++diag) {
    const MatrixXd markov = plant.c * apow * plant.b;  // C A^{diag-1} B
    for (int row = diag; row < steps; ++row)
      toep.block(row * p, (row - diag) * m, p, m) = markov;
    apow = plant.a * apow;
  }
  const VectorXd rhs = y_window - toep * u_window;
  VectorXd x = obs.completeOrthogonalDecomposition().solve(rhs);
  if ((obs * x - rhs).cwiseAbs().maxCoeff() > 1e-6)
    throw std::runtime_error("state_from_window: window inconsistent with the plant");
  for (int k = 0; k < steps; ++k) x = plant.a * x + plant.b * u_window.segment(k * m, m);
  return x;
}

std::pair<MatrixXd, MatrixXd> extended_dynamics_from_plant(const PlantModel& plant, int ell) {
  const Index n = plant.n, m = plant.m, p = plant.p;
  if (ell < plant.lag()) throw std::invalid_argument("extended_dynamics: ell below the lag");
  const Index nxi = (m + p) * ell;

  // x at the window end as a linear map of xi = col(u_hist, y_hist):
  // x_{t-ell} = pinv(obs) (y_hist - toep u_hist), rolled forward ell steps.
  const MatrixXd obs = observability_stack(plant.a, plant.c, ell);
  MatrixXd toep = MatrixXd::Zero(p * ell, m * ell);
  for (int row = 0; row < ell; ++row) toep.block(row * p, row * m, p, m) = plant.d;
  MatrixXd apow = MatrixXd::Identity(n, n);
  for (int diag = 1; diag < ell; ++diag) {
    const MatrixXd markov = plant.c * apow * plant.b;
    for (int row = diag; row < ell; ++row) toep.block(row * p, (row - diag) * m, p, m) = markov;
    apow = plant.a * apow;
  }
  const MatrixXd obs_pinv = obs.completeOrthogonalDecomposition().pseudoInverse();
  MatrixXd reach = MatrixXd::Zero(n, m * ell);  // x_t contribution of u_hist
  MatrixXd aell = MatrixXd::Identity(n, n);
  for (int k = ell - 1; k >= 0; --k) {
    reach.middleCols(k * m, m) = aell * plant.b;
    aell = plant.a * aell;
  }
  MatrixXd x_from_xi(n, nxi);  // x_t = A^ell x_{t-ell} + reach u_hist
  x_from_xi.leftCols(m * ell) = reach - aell * obs_pinv * toep;
  x_from_xi.rightCols(p * ell) = aell * obs_pinv;

  MatrixXd atil = MatrixXd::Zero(nxi, nxi), btil = MatrixXd::Zero(nxi, m);
  atil.block(0, m, m * (ell - 1), m * (ell - 1)).setIdentity();           // u-history shift
  atil.block(m * ell, m * ell + p, p * (ell - 1), p * (ell - 1)).setIdentity();  // y-history shift
  atil.bottomRows(p) = plant.c * x_from_xi;                               // new output
  btil.block(m * (ell - 1), 0, m, m).setIdentity();                        // new input
  btil.bottomRows(p) = plant.d;
  return {atil, btil};
}

Trajectory generate_initial_trajectory(const PlantModel& plant, const InitConfig& cfg,
                                       std::uint64_t seed) {
  const Index m = plant.m, p = plant.p;
  if (cfg.ell < 1) throw std::invalid_argument("init: ell must be >= 1");
  if (cfg.u_start.size() != m || cfg.y_start.size() != p || cfg.u_target.size() != m ||
      cfg.y_target.size() != p)
    throw std::invalid_argument("init: start/target dimension mismatch");

  const auto [x_start, u_start_ss] = steady_state_for_output(plant, cfg.y_start);
  if ((u_start_ss - cfg.u_start).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument("init: (u_start, y_start) is not an equilibrium pair");
  const auto [x_target, u_target_ss] = steady_state_for_output(plant, cfg.y_target);
  if ((u_target_ss - cfg.u_target).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument("init: (u_target, y_target) is not an equilibrium pair");

  // The seeding controller regulates the extended state, mirroring the
  // model-free setting where the physical state is not measurable.
  const Index nxi = (m + p) * cfg.ell;
  if (cfg.lqr_q.rows() != nxi || cfg.lqr_q.cols() != nxi)
    throw std::invalid_argument("init: lqr_q must be (m+p)ell x (m+p)ell");
  const auto [atil, btil] = extended_dynamics_from_plant(plant, cfg.ell);
  const MatrixXd gain = dare_gain(atil, btil, cfg.lqr_q, cfg.lqr_r);

  Rng rng(seed);
  std::vector<VectorXd> us, ys;
  VectorXd x = x_start;
  const VectorXd xi_target = [&] {
    VectorXd v(nxi);
    for (int k = 0; k < cfg.ell; ++k) v.segment(k * m, m) = cfg.u_target;
    for (int k = 0; k < cfg.ell; ++k) v.segment(cfg.ell * m + k * p, p) = cfg.y_target;
    return v;
  }();
  VectorXd xi(nxi);
  for (int k = 0; k < cfg.ell; ++k) {
    xi.segment(k * m, m) = cfg.u_start;
    xi.segment(cfg.ell * m + k * p, p) = cfg.y_start;
  }

  int steps = -1;
  for (int t = 0; t < cfg.step_cap; ++t) {
    VectorXd u = cfg.u_target + gain * (xi - xi_target);
    if (t < cfg.noise_steps) {
      for (Index i = 0; i < m; ++i) u[i] += rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
    }
    auto [x_next, y] = step(plant, x, u);
    if (cfg.input_box.dim() == m && !cfg.input_box.contains(u))
      throw std::runtime_error("init: input constraint violated at t=" + std::to_string(t) +
                               " (reduce noise_amplitude)");
    if (cfg.output_box.dim() == p && !cfg.output_box.contains(y))
      throw std::runtime_error("init: output constraint violated at t=" + std::to_string(t) +
                               " (reduce noise_amplitude)");
    us.push_back(u);
    ys.push_back(y);
    x = x_next;

    VectorXd xi_next(nxi);
    xi_next.head(m * (cfg.ell - 1)) = xi.segment(m, m * (cfg.ell - 1));
    xi_next.segment(m * (cfg.ell - 1), m) = u;
    xi_next.segment(m * cfg.ell, p * (cfg.ell - 1)) = xi.segment(m * cfg.ell + p, p * (cfg.ell - 1));
    xi_next.tail(p) = y;
    xi = xi_next;
    if ((xi - xi_target).cwiseAbs().maxCoeff() <= cfg.terminal_tol) {
      steps = t + 1;
      break;
    }
  }
  if (steps < 0) throw std::runtime_error("init: trajectory did not converge within the step cap");

  MatrixXd u_all(m, cfg.ell + steps), y_all(p, cfg.ell + steps);
  for (int k = 0; k < cfg.ell; ++k) {
    u_all.col(k) = cfg.u_start;
    y_all.col(k) = cfg.y_start;
  }
  for (int t = 0; t < steps; ++t) {
    u_all.col(cfg.ell + t) = us[t];
    y_all.col(cfg.ell + t) = ys[t];
  }
  return Trajectory(std::move(u_all), std::move(y_all), cfg.ell);
}

PlantModel four_tank() {
  MatrixXd a(4, 4), b(4, 2), c(2, 4);
  a << 1, 0, 0.1, 0,  //
      0, 1, 0, 0.1,   //
      0, 0, 1, 0,     //
      0, 0, 0, 1;
  b << 0.1, 0,  //
      0, 0.1,   //
      0, 0.1,   //
      0.1, 0;
  c << 1, 0, 0, 0,  //
      0, 1, 0, 0;
  return PlantModel(a, b, c, MatrixXd::Zero(2, 2));
}

}  // namespace deeprc::lin_plant
