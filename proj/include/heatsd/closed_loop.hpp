#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "heatsd/errors.hpp"
#include "heatsd/feedback.hpp"
#include "heatsd/model.hpp"

namespace heatsd {

// Sampled-data closed loop over periods [2iT, (2i+2)T):
//   free flow on [2iT, (2i+1)T), state sampled at (2i+3/4)T,
//   the feedback value held constant on [(2i+1)T, (2i+3/2)T),
//   free flow on [(2i+3/2)T, (2i+2)T).
// Evolution is exact in the eigenbasis; there is no time-stepping error.

struct Snapshot {
  double t = 0.0;
  StateVector state;
};

struct Trajectory {
  double T = 0.0;
  int n_periods = 0;
  std::vector<Snapshot> snapshots;          // strictly increasing times
  std::vector<double> period_norms;         // ||y(2nT)||, n = 0..n_periods
  std::vector<Eigen::VectorXd> controls;    // constant control of each window
};

// The control values in force at time t: the stored window vector inside an
// actuation window, zeros elsewhere.
inline Eigen::VectorXd control_at(const Trajectory& traj, double t,
                                  Eigen::Index control_size) {
  const double period = 2.0 * traj.T;
  const int i = static_cast<int>(std::floor(t / period));
  if (i >= 0 && i < static_cast<int>(traj.controls.size())) {
    const double off = t - i * period;
    if (off >= traj.T && off < 1.5 * traj.T) return traj.controls[i];
  }
  return Eigen::VectorXd::Zero(control_size);
}

namespace detail {

// Snapshot times: every schedule breakpoint plus the output_dt grid, merged,
// deduplicated at rounding distance.
inline std::vector<double> snapshot_times(double T, int n_periods, double output_dt) {
  std::vector<double> ts;
  const double t_end = 2.0 * n_periods * T;
  for (int i = 0; i < n_periods; ++i) {
    const double t0 = 2.0 * i * T;
    ts.push_back(t0);
    ts.push_back(t0 + 0.75 * T);
    ts.push_back(t0 + T);
    ts.push_back(t0 + 1.5 * T);
  }
  ts.push_back(t_end);
  for (double t = 0.0; t < t_end; t += output_dt) ts.push_back(t);
  std::sort(ts.begin(), ts.end());
  const double tol = 1e-12 * (t_end + 1.0);
  std::vector<double> out;
  for (double t : ts)
    if (out.empty() || t - out.back() > tol) out.push_back(t);
  return out;
}

}  // namespace detail

inline Trajectory simulate(const SpectralModel& mdl, const FeedbackLaw& law,
                           const StateVector& y0, int n_periods, double output_dt) {
  require(y0.size() == mdl.n(), ErrorKind::input, "initial state has wrong size");
  require(y0.allFinite(), ErrorKind::input, "initial state must be finite");
  require(n_periods >= 1, ErrorKind::domain, "need at least one period");
  require(std::isfinite(output_dt) && output_dt > 0.0, ErrorKind::domain,
          "output_dt must be positive");
  const double T = law.params.T;
  require(std::isfinite(T) && T > 0.0, ErrorKind::domain, "law has no valid period");

  Trajectory traj;
  traj.T = T;
  traj.n_periods = n_periods;
  const double guard = 1e12 * y0.norm();
  auto check = [&](double t, const StateVector& y) {
    require(y.allFinite() && y.norm() <= guard, ErrorKind::divergence,
            "state diverged at t = " + std::to_string(t) +
                " (non-finite or above 1e12 x initial norm)");
  };

  const std::vector<double> times = detail::snapshot_times(T, n_periods, output_dt);
  const double t_end = 2.0 * n_periods * T;
  const double tol = 1e-12 * (t_end + 1.0);
  std::size_t next_time = 0;

  StateVector y_start = y0;  // state at period start 2iT
  traj.period_norms.push_back(y_start.norm());
  for (int i = 0; i < n_periods; ++i) {
    const double t0 = 2.0 * i * T;
    // Sample at offset 3T/4, i.e. strictly before the actuation window.
    const StateVector y_sample = semigroup_apply(mdl, 0.75 * T, y_start);
    const Eigen::VectorXd u =
        apply_feedback(mdl, law, observe(mdl, Mask::observation, y_sample));
    const StateVector y_window = semigroup_apply(mdl, T, y_start);
    const StateVector y_coast =
        semigroup_apply(mdl, 0.5 * T, y_window) + duhamel_const(mdl, 0.5 * T, u);

    auto state_at = [&](double off) -> StateVector {
      off = std::max(off, 0.0);
      if (off <= T) return semigroup_apply(mdl, off, y_start);
      if (off <= 1.5 * T)
        return semigroup_apply(mdl, off - T, y_window) +
               duhamel_const(mdl, off - T, u);
      return semigroup_apply(mdl, off - 1.5 * T, y_coast);
    };

    const double t1 = t0 + 2.0 * T;
    while (next_time < times.size() && times[next_time] < t1 - tol) {
      const double t = times[next_time];
      StateVector y = state_at(t - t0);
      check(t, y);
      traj.snapshots.push_back({t, std::move(y)});
      ++next_time;
    }

    traj.controls.push_back(u);
    y_start = semigroup_apply(mdl, 0.5 * T, y_coast);
    check(t1, y_start);
    traj.period_norms.push_back(y_start.norm());
  }
  // Whatever survives dedup at or beyond the final period boundary is t_end.
  while (next_time < times.size()) {
    traj.snapshots.push_back({times[next_time], y_start});
    ++next_time;
  }
  return traj;
}

// --- guarantee verification -----------------------------------------------------

struct DecayViolation {
  int n = -1;        // period index for contraction failures, -1 for pointwise
  double t = 0.0;
  double ratio = 0.0;  // actual / allowed
};

struct DecayReport {
  bool pass = true;
  double contraction_threshold = 0.0;     // e^{-2 gamma T}
  double worst_two_period_ratio = 0.0;    // max ||y((2n+2)T)|| / ||y(2nT)||
  double worst_bound_margin = 0.0;        // max ||y(t)|| / envelope(t)
  std::vector<DecayViolation> violations;
};

// Checks the two guarantees of the synthesized loop on a finished trajectory:
// (a) two-period contraction by e^{-2 gamma T};
// (b) pointwise envelope (1 + T/2 ||F||) e^{(2 gamma0 + 3 gamma) T} e^{-gamma t} ||y0||.
inline DecayReport verify_decay(const SpectralModel& mdl, const Trajectory& traj,
                                const FeedbackLaw& law, double gamma, double T) {
  require(std::isfinite(gamma) && gamma > 0.0, ErrorKind::domain,
          "gamma must be positive");
  require(std::isfinite(T) && T > 0.0, ErrorKind::domain, "T must be positive");
  require(!traj.period_norms.empty(), ErrorKind::input, "trajectory has no periods");

  DecayReport rep;
  rep.contraction_threshold = std::exp(-2.0 * gamma * T);
  for (std::size_t n = 0; n + 1 < traj.period_norms.size(); ++n) {
    const double from = traj.period_norms[n];
    const double to = traj.period_norms[n + 1];
    if (from > 0.0) rep.worst_two_period_ratio =
        std::max(rep.worst_two_period_ratio, to / from);
    if (to > rep.contraction_threshold * from + 1e-9 * std::max(from, 1e-300)) {
      rep.pass = false;
      rep.violations.push_back({static_cast<int>(n), 2.0 * (n + 1) * T,
                                from > 0.0 ? to / from : std::numeric_limits<double>::infinity()});
    }
  }

  const double y0_norm = traj.period_norms.front();
  const double envelope0 =
      (1.0 + 0.5 * T * law.op_norm) * std::exp((2.0 * mdl.gamma0 + 3.0 * gamma) * T);
  for (const Snapshot& s : traj.snapshots) {
    const double allowed = envelope0 * std::exp(-gamma * s.t) * y0_norm;
    const double actual = s.state.norm();
    if (allowed > 0.0)
      rep.worst_bound_margin = std::max(rep.worst_bound_margin, actual / allowed);
    if (actual > allowed * (1.0 + 1e-9) + 1e-300) {
      rep.pass = false;
      rep.violations.push_back({-1, s.t, allowed > 0.0 ? actual / allowed
                                                       : std::numeric_limits<double>::infinity()});
    }
  }
  return rep;
}

}  // namespace heatsd
