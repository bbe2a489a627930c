#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "heatsd/closed_loop.hpp"
#include "support/test_models.hpp"

using namespace heatsd;
using fixtures::desk_model;

namespace {

FeedbackLaw zero_law(double T) {
  FeedbackLaw law;
  law.params.gamma = 0.5;
  law.params.T = T;
  return law;
}

const FeedbackLaw& desk_law() {
  static const FeedbackLaw law = [] {
    const auto& mdl = desk_model();
    return synthesize(mdl, 0.5, 1.0,
                      calibrate_C0(mdl, default_calibration_range(mdl, 12), 1.1));
  }();
  return law;
}

StateVector unit_mode(const SpectralModel& mdl, int j) {
  StateVector z = StateVector::Zero(mdl.n());
  z[j - 1] = 1.0;
  return z;
}

}  // namespace

TEST_CASE("free flow under the zero law matches the exact exponential") {
  const auto& mdl = desk_model();

  // Stable mode: contracts by e^{-2 lambda_2 T} per period.
  const Trajectory decay = simulate(mdl, zero_law(1.0), unit_mode(mdl, 2), 1, 0.5);
  REQUIRE(decay.period_norms.size() == 2);
  CHECK(decay.period_norms[1] / decay.period_norms[0] ==
        Catch::Approx(std::exp(-2.0 * mdl.eigenvalues[1])).epsilon(1e-12));

  // Unstable mode: grows by e^{2|lambda_1| T}, within 1% of the continuum e^2.
  const Trajectory grow = simulate(mdl, zero_law(1.0), unit_mode(mdl, 1), 1, 0.5);
  CHECK(grow.period_norms[1] / grow.period_norms[0] ==
        Catch::Approx(std::exp(-2.0 * mdl.eigenvalues[0])).epsilon(1e-12));
  CHECK(grow.period_norms[1] / grow.period_norms[0] ==
        Catch::Approx(std::exp(2.0)).epsilon(0.01));
}

TEST_CASE("snapshot grid structure") {
  const auto& mdl = desk_model();
  const Trajectory traj = simulate(mdl, zero_law(1.0), unit_mode(mdl, 2), 2, 0.3);
  REQUIRE(!traj.snapshots.empty());
  CHECK(traj.snapshots.front().t == 0.0);
  CHECK(traj.snapshots.back().t == Catch::Approx(4.0).margin(1e-12));
  for (std::size_t i = 1; i < traj.snapshots.size(); ++i)
    CHECK(traj.snapshots[i].t > traj.snapshots[i - 1].t);
  // Schedule breakpoints are present: sampling instant and window edges.
  auto has_time = [&](double t) {
    for (const auto& s : traj.snapshots)
      if (std::abs(s.t - t) < 1e-9) return true;
    return false;
  };
  CHECK(has_time(0.75));
  CHECK(has_time(1.0));
  CHECK(has_time(1.5));
  CHECK(has_time(2.75));
  // Output grid times as well.
  CHECK(has_time(0.3));
  CHECK(has_time(0.6));
  CHECK(traj.controls.size() == 2);
  CHECK(traj.period_norms.size() == 3);
}

TEST_CASE("snapshots carry the exact eigenbasis evolution") {
  const auto& mdl = desk_model();
  const FeedbackLaw& law = desk_law();
  Rng rng(19);
  const StateVector y0 = rng.unit_vector(mdl.n());
  const Trajectory traj = simulate(mdl, law, y0, 1, 0.25);

  auto state_at = [&](double t) -> StateVector {
    for (const auto& s : traj.snapshots)
      if (std::abs(s.t - t) < 1e-9) return s.state;
    FAIL("snapshot missing");
    return StateVector();
  };

  // Before actuation the loop is the free flow.
  CHECK((state_at(0.75) - semigroup_apply(mdl, 0.75, y0)).norm() < 1e-12);

  // Reconstruct one full period by hand from the primitives.
  const Eigen::VectorXd u = apply_feedback(
      mdl, law, observe(mdl, Mask::observation, semigroup_apply(mdl, 0.75, y0)));
  REQUIRE(traj.controls.size() == 1);
  CHECK((traj.controls[0] - u).norm() == 0.0);
  const StateVector y_mid = semigroup_apply(mdl, 0.5, semigroup_apply(mdl, 1.0, y0)) +
                            duhamel_const(mdl, 0.5, u);
  CHECK((state_at(1.5) - y_mid).norm() < 1e-12 * y_mid.norm());
  const StateVector y_end = semigroup_apply(mdl, 0.5, y_mid);
  CHECK((state_at(2.0) - y_end).norm() < 1e-12 * y_end.norm());
  CHECK(traj.period_norms[1] == Catch::Approx(y_end.norm()).epsilon(1e-12));
}

TEST_CASE("control lookup respects the actuation window") {
  const auto& mdl = desk_model();
  const Trajectory traj = simulate(mdl, desk_law(), unit_mode(mdl, 1), 2, 0.5);
  const auto nc = static_cast<Eigen::Index>(mdl.control_mask.size());
  CHECK(control_at(traj, 0.5, nc).norm() == 0.0);          // free flow
  CHECK(control_at(traj, 1.25, nc).norm() > 0.0);          // actuation window
  CHECK((control_at(traj, 1.25, nc) - traj.controls[0]).norm() == 0.0);
  CHECK(control_at(traj, 1.75, nc).norm() == 0.0);         // coasting
  CHECK((control_at(traj, 3.2, nc) - traj.controls[1]).norm() == 0.0);
  CHECK(control_at(traj, 100.0, nc).norm() == 0.0);        // beyond the horizon
}

TEST_CASE("synthesized law contracts the desk model") {
  const auto& mdl = desk_model();
  const FeedbackLaw& law = desk_law();
  Rng rng(19);
  const StateVector y0 = rng.unit_vector(mdl.n());
  const Trajectory traj = simulate(mdl, law, y0, 3, 0.25);
  const DecayReport rep = verify_decay(mdl, traj, law, 0.5, 1.0);
  CHECK(rep.pass);
  CHECK(rep.violations.empty());
  CHECK(rep.contraction_threshold == Catch::Approx(std::exp(-1.0)).epsilon(1e-14));
  // The loop beats the guaranteed rate by a wide margin on this model.
  CHECK(rep.worst_two_period_ratio < 0.01);
  CHECK(rep.worst_two_period_ratio > 0.0);
  CHECK(rep.worst_bound_margin <= 1.0 + 1e-9);
}

TEST_CASE("decay verification flags the uncontrolled unstable mode") {
  const auto& mdl = desk_model();
  const FeedbackLaw law = zero_law(1.0);
  const Trajectory traj = simulate(mdl, law, unit_mode(mdl, 1), 3, 0.5);
  const DecayReport rep = verify_decay(mdl, traj, law, 0.5, 1.0);
  CHECK_FALSE(rep.pass);
  CHECK(!rep.violations.empty());
  CHECK(rep.worst_two_period_ratio ==
        Catch::Approx(std::exp(2.0)).epsilon(0.01));
  bool has_period_violation = false, has_pointwise_violation = false;
  for (const auto& v : rep.violations) {
    if (v.n >= 0) has_period_violation = true;
    if (v.n == -1) has_pointwise_violation = true;
    CHECK(v.ratio > 1.0);
  }
  CHECK(has_period_violation);
  CHECK(has_pointwise_violation);
}

TEST_CASE("divergence guard halts a runaway loop") {
  const auto& mdl = desk_model();
  FeedbackLaw bad = zero_law(1.0);
  const auto nc = static_cast<Eigen::Index>(mdl.control_mask.size());
  const auto no = static_cast<Eigen::Index>(mdl.observation_mask.size());
  bad.f_list.push_back(Eigen::VectorXd::Constant(nc, 1e14));
  bad.h_list.push_back(Eigen::VectorXd::Constant(no, 1.0));
  try {
    simulate(mdl, bad, unit_mode(mdl, 1), 2, 0.5);
    FAIL("runaway state accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::divergence);
  }
}

TEST_CASE("simulation validates its arguments") {
  const auto& mdl = desk_model();
  const FeedbackLaw law = zero_law(1.0);
  const StateVector y0 = unit_mode(mdl, 1);
  CHECK_THROWS_AS(simulate(mdl, law, y0, 0, 0.5), Error);
  CHECK_THROWS_AS(simulate(mdl, law, y0, 1, 0.0), Error);
  CHECK_THROWS_AS(simulate(mdl, law, y0.head(5), 1, 0.5), Error);
  StateVector bad = y0;
  bad[0] = std::nan("");
  CHECK_THROWS_AS(simulate(mdl, law, bad, 1, 0.5), Error);
  CHECK_THROWS_AS(simulate(mdl, zero_law(0.0), y0, 1, 0.5), Error);
}
