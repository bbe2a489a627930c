#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "heatsd/gram.hpp"
#include "heatsd/rng.hpp"
#include "support/oracles.hpp"
#include "support/test_models.hpp"

using namespace heatsd;
using fixtures::desk_model;

TEST_CASE("Gram matrix matches the entrywise mask sum") {
  const auto& mdl = desk_model();
  for (Mask m : {Mask::control, Mask::observation}) {
    const Eigen::MatrixXd B = gram_matrix(mdl, m, 5);
    const Eigen::MatrixXd ref = oracles::gram_entrywise(mdl, m, 5);
    CHECK((B - ref).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((B - B.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    for (int i = 0; i < 5; ++i) {
      CHECK(B(i, i) > 0.0);
      CHECK(B(i, i) < 1.0);  // strictly localized masks observe a strict part
    }
  }
}

TEST_CASE("Gram matrix refuses numerically singular blocks") {
  const auto& mdl = desk_model();
  try {
    gram_matrix(mdl, Mask::control, 12);
    FAIL("singular Gram block accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::resolution);
  }
}

TEST_CASE("Gram spectrum stays positive far below the formed-matrix floor") {
  const auto& mdl = desk_model();
  Eigen::VectorXd prev_min(1);
  prev_min[0] = 2.0;
  for (int M : {2, 5, 8, 12, 16}) {
    const Eigen::VectorXd spec = gram_spectrum(mdl, Mask::control, M);
    REQUIRE(spec.size() == M);
    CHECK(spec[0] > 0.0);
    for (int i = 0; i + 1 < M; ++i) CHECK(spec[i] <= spec[i + 1]);
    CHECK(spec[M - 1] <= 1.0 + 1e-12);
    CHECK(spec[0] < prev_min[0]);  // smallest eigenvalue falls with M
    prev_min[0] = spec[0];
  }
  // Where the formed matrix is still safe, both routes agree.
  const Eigen::MatrixXd B = oracles::gram_entrywise(mdl, Mask::control, 5);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const Eigen::VectorXd spec = gram_spectrum(mdl, Mask::control, 5);
  for (int i = 0; i < 5; ++i)
    CHECK(spec[i] == Catch::Approx(es.eigenvalues()[i]).epsilon(1e-9).margin(1e-12));
}

TEST_CASE("inverse quadratic form agrees with a dense solve and is coercive") {
  const auto& mdl = desk_model();
  const Eigen::MatrixXd B = oracles::gram_entrywise(mdl, Mask::control, 5);
  Rng rng(17);
  for (int t = 0; t < 10; ++t) {
    const Eigen::VectorXd a = rng.normal_vector(5);
    const double q = gram_inverse_quadratic(mdl, Mask::control, 5, a);
    const double ref = a.dot(B.ldlt().solve(a));
    CHECK(q == Catch::Approx(ref).epsilon(1e-8));
    CHECK(q >= (1.0 - 1e-9) * a.squaredNorm());  // B has spectrum in (0, 1]
  }
}

TEST_CASE("masked angles match three independent formulations") {
  const auto& mdl = desk_model();
  for (Mask m : {Mask::control, Mask::observation}) {
    CHECK(theta(mdl, m, 1) == Catch::Approx(oracles::theta1_scan(mdl, m)).epsilon(1e-12));
    for (int k = 2; k <= 4; ++k)
      CHECK(theta(mdl, m, k) ==
            Catch::Approx(oracles::theta_gev(mdl, m, k)).epsilon(1e-8));
    for (int k = 2; k <= 8; ++k)
      CHECK(theta(mdl, m, k) ==
            Catch::Approx(oracles::theta_normal_equations(mdl, m, k)).epsilon(1e-6));
  }
}

TEST_CASE("masked angle regression values") {
  const auto& mdl = desk_model();
  CHECK(1.0 - theta(mdl, Mask::control, 1) ==
        Catch::Approx(1.450405e-01).epsilon(1e-5));
  CHECK(1.0 - theta(mdl, Mask::control, 11) ==
        Catch::Approx(2.282595e-09).epsilon(1e-3));
  // Sits just above the dependence gate: a regression on solver accuracy.
  CHECK(1.0 - theta(mdl, Mask::control, 12) ==
        Catch::Approx(3.884887e-10).epsilon(1e-2));
  // On the observation mask the 13th mode is numerically dependent.
  try {
    theta(mdl, Mask::observation, 12);
    FAIL("dependent mode family accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degeneracy);
  }
  CHECK_THROWS_AS(theta(mdl, Mask::control, 0), Error);
  CHECK_THROWS_AS(theta(mdl, Mask::control, mdl.n()), Error);
}

TEST_CASE("amplification factor") {
  const auto& mdl = desk_model();
  CHECK(tau(mdl, Mask::control, 1) == 1.0);
  CHECK(tau(mdl, Mask::control, 5) ==
        Catch::Approx(16744.77486233868).epsilon(1e-6));
  CHECK(tau(mdl, Mask::control, 6) > tau(mdl, Mask::control, 5));
  // Definition check against individually computed angles.
  double prod = 1.0;
  for (int k = 1; k < 5; ++k) prod *= 1.0 - theta(mdl, Mask::control, k);
  CHECK(tau(mdl, Mask::control, 5) == Catch::Approx(std::sqrt(5.0 / prod)));
}

TEST_CASE("gram_data bundles the individual quantities") {
  const auto& mdl = desk_model();
  const GramData g = gram_data(mdl, Mask::observation, 4);
  CHECK((g.B - gram_matrix(mdl, Mask::observation, 4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((g.spectrum - gram_spectrum(mdl, Mask::observation, 4)).norm() == 0.0);
  REQUIRE(g.theta.size() == 3);
  for (int k = 1; k <= 3; ++k)
    CHECK(g.theta[k - 1] == theta(mdl, Mask::observation, k));
  CHECK(g.tau == tau(mdl, Mask::observation, 4));
}

TEST_CASE("coercivity constant calibration") {
  const auto& mdl = desk_model();
  const auto range = default_calibration_range(mdl, 12);
  REQUIRE(range.size() == 11);
  CHECK(range.front() == 2);
  CHECK(range.back() == 12);

  const CalibratedConstant cal = calibrate_C0(mdl, range, 1.1);
  CHECK(cal.C0 == Catch::Approx(3.223026573911298).epsilon(1e-6));
  CHECK(cal.safety_factor == 1.1);
  REQUIRE(cal.samples.size() == 22);  // both masks at each M

  // The constant dominates every sampled ratio with the safety margin.
  double worst = 0.0;
  for (const auto& s : cal.samples) {
    CHECK(s.lambda_min > 0.0);
    CHECK(s.ratio <= cal.C0 / 1.1 + 1e-12);
    worst = std::max(worst, s.ratio);
  }
  CHECK(cal.C0 == Catch::Approx(1.1 * worst).epsilon(1e-14));

  // And therefore bounds the inverse quadratic form on the sampled range.
  Rng rng(23);
  for (const auto& s : cal.samples) {
    const double lim =
        std::exp(cal.C0 * coercivity_exponent_scale(mdl, mdl.eigenvalues[s.M - 1]));
    for (int t = 0; t < 5; ++t) {
      const Eigen::VectorXd a = rng.unit_vector(s.M);
      CHECK(gram_inverse_quadratic(mdl, s.mask, s.M, a) <= lim * (1.0 + 1e-9));
    }
  }

  // A range touching the nonpositive part of the spectrum is rejected.
  try {
    calibrate_C0(mdl, {1, 2}, 1.1);
    FAIL("negative-eigenvalue calibration accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::precondition);
  }
  CHECK_THROWS_AS(calibrate_C0(mdl, {}, 1.1), Error);
  CHECK_THROWS_AS(calibrate_C0(mdl, range, 0.5), Error);
}

TEST_CASE("interpolation averages stay within the amplification factor") {
  const auto& mdl = desk_model();
  const InterpolationReport rep = check_interpolation_averages(mdl, 0.0, 0.5, 5, 200, 1);
  CHECK(rep.trials == 200);
  CHECK(rep.violations == 0);
  CHECK(rep.tau_M == Catch::Approx(tau(mdl, Mask::control, 5)));
  CHECK(rep.max_ratio > 0.1);
  CHECK(rep.max_ratio <= rep.tau_M);

  CHECK_THROWS_AS(check_interpolation_averages(mdl, 0.5, 0.5, 5, 10), Error);
  CHECK_THROWS_AS(check_interpolation_averages(mdl, 0.0, 0.5, 5, 0), Error);
}
