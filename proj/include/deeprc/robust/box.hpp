#pragma once

#include <Eigen/Core>

#include <stdexcept>

namespace deeprc::robust {

/// Axis-aligned box { x : lower <= x <= upper }.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Box() = default;
  Box(Eigen::VectorXd lo, Eigen::VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size()) throw std::invalid_argument("box: bound size mismatch");
    if ((lower.array() > upper.array()).any()) throw std::invalid_argument("box: lower > upper");
  }

  /// Symmetric box [-r, r]^dim.
  static Box symmetric(const Eigen::VectorXd& r) { return Box(-r, r); }

  Eigen::Index dim() const { return lower.size(); }

  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const {
    return (x.array() >= lower.array() - tol).all() && (x.array() <= upper.array() + tol).all();
  }

  /// Index of the first violated face, or -1 when x is inside. Lower faces
  /// are reported as i, upper faces as dim() + i.
  Eigen::Index first_violation(const Eigen::VectorXd& x, double tol = 0.0) const {
    for (Eigen::Index i = 0; i < dim(); ++i) {
      if (x[i] < lower[i] - tol) return i;
      if (x[i] > upper[i] + tol) return dim() + i;
    }
    return -1;
  }
};

}  // namespace deeprc::robust
