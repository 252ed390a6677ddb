#include "deeprc/robust/tube.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <stdexcept>
#include <string>

#include "deeprc/lin_plant/plant.hpp"

namespace deeprc::robust {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

RpiSet rpi_outer_box(const MatrixXd& a_cl, const MatrixXd& b_tilde, const Box& dist_box, int s,
                     double alpha_tol, Index m, Index p, int ell) {
  const Index nxi = a_cl.rows();
  if (a_cl.cols() != nxi || b_tilde.rows() != nxi)
    throw std::invalid_argument("rpi: dimension mismatch");
  if (dist_box.dim() != b_tilde.cols()) throw std::invalid_argument("rpi: disturbance size mismatch");
  if (s < 1) throw std::invalid_argument("rpi: s must be >= 1");
  if ((dist_box.lower.array() > 0).any() || (dist_box.upper.array() < 0).any())
    throw std::invalid_argument("rpi: disturbance set must contain 0");
  if (a_cl.eigenvalues().cwiseAbs().maxCoeff() >= 1.0)
    throw std::invalid_argument("rpi: closed-loop matrix is not stable");

  RpiSet rpi;
  rpi.truncation_s = s;
  rpi.m = m;
  rpi.p = p;
  rpi.ell = ell;

  // Symmetric per-channel bound |d_i| <= dbar_i covering the box.
  const VectorXd dbar = dist_box.lower.cwiseAbs().cwiseMax(dist_box.upper.cwiseAbs());
  if (dbar.maxCoeff() == 0.0) {
    rpi.radius = VectorXd::Zero(nxi);
    rpi.contraction_alpha = 0.0;
    return rpi;
  }

  // Partial sum S_s = sum_{i<s} |A^i B| dbar and the s-step image bound.
  VectorXd partial = VectorXd::Zero(nxi);
  MatrixXd apow_b = b_tilde;
  for (int i = 0; i < s; ++i) {
    partial += apow_b.cwiseAbs() * dbar;
    apow_b = a_cl * apow_b;
  }
  VectorXd tail = VectorXd::Zero(nxi);  // support of A^s (sum set) per coordinate
  for (int i = 0; i < s; ++i) {
    tail += apow_b.cwiseAbs() * dbar;
    apow_b = a_cl * apow_b;
  }
  double alpha = 0.0;
  for (Index k = 0; k < nxi; ++k) {
    if (partial[k] <= 0.0) {
      if (tail[k] > 0.0)
        throw std::runtime_error("rpi: tail reaches coordinates the partial sum misses; increase s");
      continue;
    }
    alpha = std::max(alpha, tail[k] / partial[k]);
  }
  if (alpha >= 1.0 - alpha_tol)
    throw std::runtime_error("rpi: contraction alpha=" + std::to_string(alpha) +
                             " too close to 1; increase s");
  rpi.contraction_alpha = alpha;
  // Covers box(F_s) + alpha box(F_s) + alpha^2 ... >= box of the full
  // disturbance reach set, which is what the tube argument consumes
  // (errors always start at 0 when an iteration begins).
  rpi.radius = partial / (1.0 - alpha);
  return rpi;
}

Box tighten(const Box& box, const RpiSet& rpi, TightenSelector selector) {
  if (box.dim() == 0) throw std::invalid_argument("tighten: empty box");
  const VectorXd r =
      selector == TightenSelector::last_input ? rpi.input_radii() : rpi.output_radii();
  if (r.size() != box.dim()) throw std::invalid_argument("tighten: selector size mismatch");
  const VectorXd lo = box.lower + r, hi = box.upper - r;
  if ((lo.array() > hi.array()).any())
    throw std::runtime_error("tighten: tightened box is empty (disturbance set too large)");
  return Box(lo, hi);
}

MatrixXd tube_gain(const MatrixXd& a_tilde, const MatrixXd& b_tilde, const MatrixXd& qk,
                   const MatrixXd& rk) {
  return lin_plant::dare_gain(a_tilde, b_tilde, qk, rk);
}

}  // namespace deeprc::robust
