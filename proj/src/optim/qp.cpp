#include "deeprc/optim/qp.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace deeprc::optim {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Max step length alpha in [0, cap] keeping v + alpha dv >= 0.
double max_step(const VectorXd& v, const VectorXd& dv, double cap) {
  double a = cap;
  for (Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  }
  return a;
}

// Assembles the quasidefinite KKT matrix
//   [ P + r I    A'        G'      ]
//   [ A         -r I       0       ]
//   [ G          0        -(W + r) ]
// with W refreshed per iteration through the returned diagonal slots.
struct KktSystem {
  Index n, me, mi;
  SpMat mat;
  std::vector<Index> w_slot;  // index into mat.valuePtr() for each W diagonal entry
  Eigen::SimplicialLDLT<SpMat> ldlt;
  bool analyzed = false;

  KktSystem(const QuadraticProgram& p, double reg) {
    n = p.num_vars;
    me = p.eq_lhs.rows();
    mi = p.ineq_lhs.rows();
    const Index dim = n + me + mi;
    std::vector<Triplet> trips;
    trips.reserve(static_cast<std::size_t>(dim) * 8);
    // Upper-left block: P + reg I (store full symmetric matrix).
    for (Index j = 0; j < n; ++j) {
      for (Index i = 0; i < n; ++i) {
        const double v = p.quad_cost(i, j);
        if (v != 0.0 || i == j) trips.emplace_back(i, j, v + (i == j ? reg : 0.0));
      }
    }
    for (Index i = 0; i < me; ++i) {
      for (Index j = 0; j < n; ++j) {
        const double v = p.eq_lhs(i, j);
        if (v != 0.0) {
          trips.emplace_back(n + i, j, v);
          trips.emplace_back(j, n + i, v);
        }
      }
      trips.emplace_back(n + i, n + i, -reg);
    }
    for (Index i = 0; i < mi; ++i) {
      for (Index j = 0; j < n; ++j) {
        const double v = p.ineq_lhs(i, j);
        if (v != 0.0) {
          trips.emplace_back(n + me + i, j, v);
          trips.emplace_back(j, n + me + i, v);
        }
      }
      trips.emplace_back(n + me + i, n + me + i, -1.0);
    }
    mat.resize(dim, dim);
    mat.setFromTriplets(trips.begin(), trips.end());
    mat.makeCompressed();
    // Locate the W diagonal slots in the compressed storage.
    w_slot.resize(mi);
    for (Index i = 0; i < mi; ++i) {
      const Index col = n + me + i;
      bool found = false;
      for (SpMat::InnerIterator it(mat, col); it; ++it) {
        if (it.row() == col) {
          w_slot[i] = static_cast<Index>(&it.valueRef() - mat.valuePtr());
          found = true;
          break;
        }
      }
      if (!found) throw std::logic_error("kkt: missing diagonal slot");
    }
  }

  void set_w(const VectorXd& w, double reg) {
    for (Index i = 0; i < mi; ++i) mat.valuePtr()[w_slot[i]] = -(w[i] + reg);
  }

  bool factorize() {
    if (!analyzed) {
      ldlt.analyzePattern(mat);
      analyzed = true;
    }
    ldlt.factorize(mat);
    return ldlt.info() == Eigen::Success;
  }

  // Solve with one round of iterative refinement against the same matrix.
  VectorXd solve(const VectorXd& rhs) const {
    VectorXd x = ldlt.solve(rhs);
    const VectorXd r = rhs - mat * x;
    x += ldlt.solve(r);
    return x;
  }
};

}  // namespace

void QuadraticProgram::validate(bool check_psd) const {
  const Index n = num_vars;
  if (n <= 0) throw std::invalid_argument("qp: num_vars must be positive");
  if (quad_cost.rows() != n || quad_cost.cols() != n)
    throw std::invalid_argument("qp: quad_cost must be num_vars x num_vars");
  if (lin_cost.size() != n) throw std::invalid_argument("qp: lin_cost size mismatch");
  if (eq_lhs.rows() != eq_rhs.size())
    throw std::invalid_argument("qp: eq_lhs/eq_rhs row mismatch");
  if (eq_lhs.rows() > 0 && eq_lhs.cols() != n)
    throw std::invalid_argument("qp: eq_lhs column count mismatch");
  if (ineq_lhs.rows() != ineq_rhs.size())
    throw std::invalid_argument("qp: ineq_lhs/ineq_rhs row mismatch");
  if (ineq_lhs.rows() > 0 && ineq_lhs.cols() != n)
    throw std::invalid_argument("qp: ineq_lhs column count mismatch");
  const double asym = (quad_cost - quad_cost.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) throw std::invalid_argument("qp: quad_cost not symmetric");
  if (check_psd) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(quad_cost, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-9)
      throw std::invalid_argument("qp: quad_cost not positive semidefinite");
  }
}

QpSolution solve_qp(const QuadraticProgram& p, const SolverOptions& opts) {
  p.validate(false);

  const Index n = p.num_vars;
  const Index me = p.eq_lhs.rows();
  const Index mi = p.ineq_lhs.rows();
  const double reg = opts.static_reg;

  QpSolution sol;
  sol.x = VectorXd::Zero(n);

  const auto objective = [&](const VectorXd& x) {
    return 0.5 * x.dot(p.quad_cost * x) + p.lin_cost.dot(x);
  };
  const auto fill_residuals = [&](const VectorXd& x) {
    sol.eq_residual = me ? inf_norm(p.eq_lhs * x - p.eq_rhs) : 0.0;
    sol.ineq_violation = mi ? std::max(0.0, (p.ineq_lhs * x - p.ineq_rhs).maxCoeff()) : 0.0;
  };

  KktSystem kkt(p, reg);

  // Scales for relative convergence tests.
  const double bscale = 1.0 + (me ? inf_norm(p.eq_rhs) : 0.0);
  const double hscale = 1.0 + (mi ? inf_norm(p.ineq_rhs) : 0.0);
  const double qscale = 1.0 + inf_norm(p.lin_cost);

  // Starting point: one KKT solve with W = I (CVXOPT-style initialization).
  VectorXd x, y, s, z;
  {
    kkt.set_w(VectorXd::Ones(mi), reg);
    if (!kkt.factorize()) {
      sol.message = "initial KKT factorization failed";
      return sol;
    }
    VectorXd rhs(n + me + mi);
    rhs.head(n) = -p.lin_cost;
    rhs.segment(n, me) = p.eq_rhs;
    rhs.tail(mi) = p.ineq_rhs;
    const VectorXd sol0 = kkt.solve(rhs);
    x = sol0.head(n);
    y = sol0.segment(n, me);
    const VectorXd zhat = sol0.tail(mi);
    // s = -z_hat solves Gx + s = h for the relaxed system; shift both cones
    // into the strict interior.
    s = -zhat;
    z = zhat;
    if (mi > 0) {
      const double smin = s.minCoeff();
      if (smin <= 1e-4) s.array() += 1.0 - smin;
      const double zmin = z.minCoeff();
      if (zmin <= 1e-4) z.array() += 1.0 - zmin;
    }
  }

  if (mi == 0) {
    // Pure equality-constrained problem: Newton-refine the initialization
    // solve against the true (unregularized) optimality system.
    int iters = 1;
    for (; iters <= 5; ++iters) {
      const VectorXd rd = p.quad_cost * x + p.lin_cost +
                          (me ? VectorXd(p.eq_lhs.transpose() * y) : VectorXd::Zero(n));
      const VectorXd rp = me ? VectorXd(p.eq_lhs * x - p.eq_rhs) : VectorXd();
      const double dres = inf_norm(rd) / (qscale + inf_norm(p.quad_cost * x));
      const double pres = me ? inf_norm(rp) / bscale : 0.0;
      if (dres <= opts.dual_tol && pres <= opts.primal_tol) {
        sol.status = QpStatus::optimal;
        sol.x = x;
        sol.objective = objective(x);
        sol.iterations = iters;
        fill_residuals(x);
        return sol;
      }
      VectorXd rhs(n + me);
      rhs.head(n) = -rd;
      if (me) rhs.tail(me) = -rp;
      const VectorXd d = kkt.solve(rhs);
      if (!d.allFinite()) break;
      x += d.head(n);
      if (me) y += d.tail(me);
    }
    sol.message = "equality KKT solve did not reach tolerance (singular or inconsistent system)";
    sol.x = x;
    sol.iterations = iters;
    fill_residuals(x);
    return sol;
  }

  const double tau = 0.99;
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    const VectorXd px = p.quad_cost * x;
    const VectorXd rd = px + p.lin_cost + (me ? VectorXd(p.eq_lhs.transpose() * y) : VectorXd::Zero(n)) +
                        p.ineq_lhs.transpose() * z;
    const VectorXd rp = me ? VectorXd(p.eq_lhs * x - p.eq_rhs) : VectorXd();
    const VectorXd rg = p.ineq_lhs * x + s - p.ineq_rhs;
    const double mu = s.dot(z) / static_cast<double>(mi);

    const double pres = std::max(me ? inf_norm(rp) / bscale : 0.0, inf_norm(rg) / hscale);
    const double dres = inf_norm(rd) / (qscale + inf_norm(px));
    const double obj = objective(x);
    const double gap_rel = mu / (1.0 + std::abs(obj));

    if (pres <= opts.primal_tol && dres <= opts.dual_tol && gap_rel <= opts.gap_tol) {
      sol.status = QpStatus::optimal;
      sol.x = x;
      sol.objective = obj;
      sol.iterations = iter;
      fill_residuals(x);
      return sol;
    }

    // Primal infeasibility certificate: z >= 0, A'y + G'z ~ 0, b'y + h'z < 0.
    {
      const double theta = (me ? p.eq_rhs.dot(y) : 0.0) + p.ineq_rhs.dot(z);
      if (theta < -1e-12) {
        const VectorXd cert = (me ? VectorXd(p.eq_lhs.transpose() * y) : VectorXd::Zero(n)) +
                              p.ineq_lhs.transpose() * z;
        if (inf_norm(cert) <= 1e-8 * (-theta)) {
          sol.status = QpStatus::infeasible;
          sol.x = x;
          sol.iterations = iter;
          sol.message = "primal infeasibility certificate found";
          fill_residuals(x);
          return sol;
        }
      }
    }
    // Dual infeasibility certificate (objective unbounded below along x).
    {
      const double xn = inf_norm(x);
      if (xn > 1e8) {
        const VectorXd xhat = x / xn;
        const bool flat = inf_norm(p.quad_cost * xhat) <= 1e-8 &&
                          (me == 0 || inf_norm(p.eq_lhs * xhat) <= 1e-8) &&
                          (p.ineq_lhs * xhat).maxCoeff() <= 1e-8 && p.lin_cost.dot(xhat) < -1e-10;
        if (flat) {
          sol.status = QpStatus::numerical_failure;
          sol.x = x;
          sol.iterations = iter;
          sol.message = "problem appears unbounded below (dual infeasible)";
          return sol;
        }
      }
    }

    const VectorXd w = s.cwiseQuotient(z);
    kkt.set_w(w, reg);
    if (!kkt.factorize()) {
      sol.message = "KKT factorization failed";
      sol.x = x;
      sol.iterations = iter;
      fill_residuals(x);
      return sol;
    }

    VectorXd rhs(n + me + mi);
    rhs.head(n) = -rd;
    if (me) rhs.segment(n, me) = -rp;
    // Affine predictor: complementarity target 0.
    rhs.tail(mi) = -rg + s;
    const VectorXd da = kkt.solve(rhs);
    const VectorXd dz_a = da.tail(mi);
    const VectorXd ds_a = -(s + w.cwiseProduct(dz_a));

    const double ap = max_step(s, ds_a, 1.0);
    const double ad = max_step(z, dz_a, 1.0);
    const double a_aff = std::min(ap, ad);
    const double mu_aff = (s + a_aff * ds_a).dot(z + a_aff * dz_a) / static_cast<double>(mi);
    double sigma = std::pow(mu_aff / mu, 3);
    sigma = std::clamp(sigma, 0.0, 1.0);

    // Corrector: complementarity target sigma*mu - Mehrotra correction.
    const VectorXd rc =
        s.cwiseProduct(z) + ds_a.cwiseProduct(dz_a) - VectorXd::Constant(mi, sigma * mu);
    rhs.tail(mi) = -rg + rc.cwiseQuotient(z);
    const VectorXd d = kkt.solve(rhs);
    const VectorXd dx = d.head(n);
    const VectorXd dy = me ? VectorXd(d.segment(n, me)) : VectorXd();
    const VectorXd dz = d.tail(mi);
    const VectorXd ds = -(rc.cwiseQuotient(z) + w.cwiseProduct(dz));

    const double alpha = tau * std::min(max_step(s, ds, 1.0 / tau), max_step(z, dz, 1.0 / tau));
    x += alpha * dx;
    if (me) y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;

    if (!x.allFinite() || !s.allFinite() || !z.allFinite()) {
      sol.message = "iterates diverged (non-finite values)";
      sol.iterations = iter;
      return sol;
    }
  }

  sol.status = QpStatus::numerical_failure;
  sol.x = x;
  sol.objective = objective(x);
  sol.iterations = opts.max_iterations;
  fill_residuals(x);
  sol.message = "maximum iterations reached without convergence";
  return sol;
}

}  // namespace deeprc::optim
