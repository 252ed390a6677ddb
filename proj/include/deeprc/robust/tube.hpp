#pragma once

#include <Eigen/Core>

#include "deeprc/robust/box.hpp"

namespace deeprc::robust {

/// Box outer approximation of the robust positive invariant set for the
/// error dynamics e+ = (Atil + Btil K) e + Btil d, d in D.
struct RpiSet {
  Eigen::VectorXd radius;  ///< per-coordinate support bound, dimension n_xi
  double contraction_alpha = 0.0;
  int truncation_s = 0;
  Eigen::Index m = 0, p = 0;  ///< extended-state layout
  int ell = 0;

  /// Radii of the last-input coordinates of e.
  Eigen::VectorXd input_radii() const { return radius.segment(m * (ell - 1), m); }
  /// Radii of the last-output coordinates of e.
  Eigen::VectorXd output_radii() const { return radius.tail(p); }
};

/// Truncated Minkowski-sum box with geometric tail bound: radius =
/// (1 - alpha)^{-1} sum_{i<s} rowabs(A_cl^i Btil) dbar, alpha the support
/// ratio of the s-step image against the partial-sum box. Contains every
/// error trajectory driven from e = 0 by disturbances in dist_box.
/// Throws when rho(A_cl) >= 1 or the tail does not contract at this s.
RpiSet rpi_outer_box(const Eigen::MatrixXd& a_cl, const Eigen::MatrixXd& b_tilde,
                     const Box& dist_box, int s, double alpha_tol, Eigen::Index m, Eigen::Index p,
                     int ell);

enum class TightenSelector { last_input, last_output };

/// U (-) E_u or Y (-) E_y: shrinks each side by the selected error radii.
/// Throws when the tightened box is empty.
Box tighten(const Box& box, const RpiSet& rpi, TightenSelector selector);

/// Stabilizing tube gain for the estimated extended pair via the DARE.
Eigen::MatrixXd tube_gain(const Eigen::MatrixXd& a_tilde, const Eigen::MatrixXd& b_tilde,
                          const Eigen::MatrixXd& qk, const Eigen::MatrixXd& rk);

}  // namespace deeprc::robust
