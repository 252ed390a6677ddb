#include "deeprc/safe_set/safe_set.hpp"

#include <doctest.h>

#include <Eigen/Dense>

#include "deeprc/rng.hpp"

using namespace deeprc;
using namespace deeprc::safe_set;
using behavior::ExtendedState;
using lin_plant::Trajectory;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Tiny 1-input/1-output setting with ell = 1: extended states are (u, y)
// pairs, which keeps hull geometry easy to reason about.
struct Setup {
  MatrixXd q = MatrixXd::Identity(1, 1);
  MatrixXd r = MatrixXd::Identity(1, 1);
  VectorXd u_target = VectorXd::Zero(1);
  VectorXd y_target = VectorXd::Zero(1);
  robust::Box ubox = robust::Box::symmetric(VectorXd::Constant(1, 10.0));
  robust::Box ybox = robust::Box::symmetric(VectorXd::Constant(1, 10.0));

  SafeSet empty_set() const {
    SafeSet ss;
    ss.target = ExtendedState::equilibrium(u_target, y_target, 1);
    return ss;
  }

  // Trajectory visiting the given (u, y) pairs then settling at the target.
  Trajectory traj(std::vector<std::pair<double, double>> pts) const {
    const int len = static_cast<int>(pts.size()) + 1;
    MatrixXd u(1, 1 + len), y(1, 1 + len);
    u(0, 0) = 0.0;
    y(0, 0) = 0.0;
    for (int i = 0; i < len - 1; ++i) {
      u(0, 1 + i) = pts[i].first;
      y(0, 1 + i) = pts[i].second;
    }
    u(0, len) = 0.0;
    y(0, len) = 0.0;
    return Trajectory(u, y, 1);
  }
};

}  // namespace

TEST_CASE("cost_to_go: zero at T and along constant target trajectories") {
  Setup s;
  const Trajectory tr = s.traj({{1.0, 2.0}, {0.5, 0.25}});
  CHECK(cost_to_go(tr, tr.length, s.q, s.r, s.u_target, s.y_target) == 0.0);
  // h-sums telescope: J(0) = h(0) + J(1).
  const double j0 = cost_to_go(tr, 0, s.q, s.r, s.u_target, s.y_target);
  const double j1 = cost_to_go(tr, 1, s.q, s.r, s.u_target, s.y_target);
  CHECK(j0 == doctest::Approx(j1 + stage_cost(tr.input(0), tr.output(0), s.q, s.r, s.u_target,
                                              s.y_target)));

  MatrixXd cu = MatrixXd::Zero(1, 6), cy = MatrixXd::Zero(1, 6);
  const Trajectory constant(cu, cy, 1);
  for (int t = 0; t <= constant.length; ++t)
    CHECK(cost_to_go(constant, t, s.q, s.r, s.u_target, s.y_target) == 0.0);
}

TEST_CASE("add_trajectory: sample count, Bellman телescoping, snap at target") {
  Setup s;
  SafeSet ss = s.empty_set();
  const Trajectory tr = s.traj({{1.0, 2.0}, {0.5, 0.25}});
  add_trajectory(ss, tr, s.q, s.r, s.u_target, s.y_target, s.ubox, s.ybox, 0, false);
  CHECK(ss.size() == tr.length + 1);
  // Costs-to-go nonincreasing along the trajectory; terminal exactly 0.
  for (int i = 1; i < ss.size(); ++i) CHECK(ss.samples[i].cost_to_go <= ss.samples[i - 1].cost_to_go);
  CHECK(ss.samples.back().cost_to_go == 0.0);
  CHECK((ss.samples.back().state.value - ss.target.value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("add_trajectory: rejects unsafe and non-terminal trajectories") {
  Setup s;
  SafeSet ss = s.empty_set();
  // Ends away from the target.
  MatrixXd u(1, 3), y(1, 3);
  u << 0, 1, 1;
  y << 0, 1, 1;
  CHECK_THROWS_WITH_AS(add_trajectory(ss, Trajectory(u, y, 1), s.q, s.r, s.u_target, s.y_target,
                                      s.ubox, s.ybox, 0, false),
                       doctest::Contains("does not end at the target"), std::invalid_argument);
  // Violates the input box; diagnostic names the constraint.
  const Trajectory wild = s.traj({{20.0, 0.0}});
  CHECK_THROWS_WITH_AS(add_trajectory(ss, wild, s.q, s.r, s.u_target, s.y_target, s.ubox, s.ybox, 0,
                                      false),
                       doctest::Contains("input constraint"), std::invalid_argument);
}

TEST_CASE("terminal_cost: target costs zero, stored samples bounded by cost-to-go") {
  Setup s;
  SafeSet ss = s.empty_set();
  add_trajectory(ss, s.traj({{1.0, 2.0}, {0.5, 0.25}}), s.q, s.r, s.u_target, s.y_target, s.ubox,
                 s.ybox, 0, false);

  const auto at_target = terminal_cost(ss, ss.target);
  REQUIRE(at_target.feasible);
  CHECK(at_target.value == doctest::Approx(0.0).epsilon(1e-8));

  for (const auto& sample : ss.samples) {
    const auto tc = terminal_cost(ss, sample.state);
    REQUIRE(tc.feasible);
    CHECK(tc.value <= sample.cost_to_go + 1e-7);
  }

  // A state far outside the hull is infeasible.
  ExtendedState outside = ss.target;
  outside.value = VectorXd::Constant(2, 100.0);
  CHECK_FALSE(terminal_cost(ss, outside).feasible);
}

namespace {

Sample make_sample(double u, double y, double ctg, int iter, int t) {
  Sample s;
  s.state = ExtendedState::equilibrium(VectorXd::Constant(1, u), VectorXd::Constant(1, y), 1);
  s.cost_to_go = ctg;
  s.next_input = VectorXd::Constant(1, u);
  s.iteration_id = iter;
  s.time_index = t;
  return s;
}

}  // namespace

TEST_CASE("terminal_cost: two-sample midpoint matches the closed form") {
  Setup s;
  SafeSet ss = s.empty_set();
  ss.samples.push_back(make_sample(1.0, 2.0, 6.0, 0, 0));
  ss.samples.push_back(make_sample(0.0, 0.0, 0.0, 0, 1));

  // Midpoint of the two stored samples: only gamma = (1/2, 1/2) matches it,
  // so the LP value must be exactly half the interior cost-to-go.
  ExtendedState mid = ss.target;
  mid.value = 0.5 * (ss.samples[0].state.value + ss.samples[1].state.value);
  const auto tc = terminal_cost(ss, mid);
  REQUIRE(tc.feasible);
  CHECK(tc.value == doctest::Approx(3.0).epsilon(1e-6));
  CHECK(tc.value <= 0.5 * (6.0 + 0.0) + 1e-8);
}

TEST_CASE("terminal_cost: hull idempotence and improvement by cheaper data") {
  Setup s;
  SafeSet ss = s.empty_set();
  ss.samples.push_back(make_sample(2.0, 0.0, 10.0, 0, 0));
  ss.samples.push_back(make_sample(0.0, 0.0, 0.0, 0, 1));

  std::vector<ExtendedState> queries;
  for (const auto& sample : ss.samples) queries.push_back(sample.state);
  {
    ExtendedState q = ss.target;
    q.value = VectorXd::Zero(2);
    q.value[0] = 1.0;  // midpoint (1, 0), value 5
    queries.push_back(q);
  }
  std::vector<double> before;
  for (const auto& xi : queries) before.push_back(terminal_cost(ss, xi).value);
  CHECK(before.back() == doctest::Approx(5.0).epsilon(1e-6));

  // Duplicating the stored samples changes no query value.
  ss.samples.push_back(make_sample(2.0, 0.0, 10.0, 1, 0));
  ss.samples.push_back(make_sample(0.0, 0.0, 0.0, 1, 1));
  for (std::size_t i = 0; i < queries.size(); ++i)
    CHECK(terminal_cost(ss, queries[i]).value == doctest::Approx(before[i]).epsilon(1e-6));

  // A strictly cheaper pass through (2, 0) lowers the midpoint value.
  ss.samples.push_back(make_sample(2.0, 0.0, 4.0, 2, 0));
  CHECK(terminal_cost(ss, queries.back()).value == doctest::Approx(2.0).epsilon(1e-6));

  // Monotone sets: all previous queries stay feasible with no larger value.
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto tc = terminal_cost(ss, queries[i]);
    CHECK(tc.feasible);
    CHECK(tc.value <= before[i] + 1e-7);
  }
}

TEST_CASE("safe_policy: single-sample weights and target fixed point") {
  Setup s;
  SafeSet ss = s.empty_set();
  add_trajectory(ss, s.traj({{1.0, 2.0}}), s.q, s.r, s.u_target, s.y_target, s.ubox, s.ybox, 0,
                 false);
  VectorXd gamma = VectorXd::Zero(ss.size());
  gamma[0] = 1.0;
  CHECK((safe_policy(ss, gamma) - ss.samples[0].next_input).cwiseAbs().maxCoeff() == 0.0);

  const auto tc = terminal_cost(ss, ss.target);
  REQUIRE(tc.feasible);
  CHECK((safe_policy(ss, tc.gamma) - s.u_target).cwiseAbs().maxCoeff() < 1e-6);
}
