#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "heatsd/errors.hpp"
#include "heatsd/model.hpp"
#include "heatsd/rng.hpp"

namespace heatsd {

// Observation Gram matrix of the leading M modes restricted to a mask:
// B(i,j) = <xi_i, xi_j> over the masked nodes. Eigenvalues lie in (0, 1].
// Fails once the matrix is numerically singular; spectral quantities of
// near-singular blocks are available through gram_spectrum /
// gram_inverse_quadratic, which work on the factor and never form B.
inline Eigen::MatrixXd gram_matrix(const SpectralModel& mdl, Mask m, int M) {
  const Eigen::MatrixXd X = scaled_mask_block(mdl, m, M);
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues();
  const double lmin = sv[sv.size() - 1] * sv[sv.size() - 1];
  require(lmin >= 1e-14, ErrorKind::resolution,
          "Gram matrix of " + std::to_string(M) +
              " masked modes is numerically singular (smallest eigenvalue " +
              std::to_string(lmin) + "); increase n_grid or reduce M");
  return X.transpose() * X;
}

// Eigenvalues of the Gram matrix, ascending, computed as squared singular
// values of the masked mode block. This stays nonnegative and resolves tiny
// eigenvalues far below the floor where an eigensolve of the formed matrix
// turns negative.
inline Eigen::VectorXd gram_spectrum(const SpectralModel& mdl, Mask m, int M) {
  const Eigen::MatrixXd X = scaled_mask_block(mdl, m, M);
  Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues();
  Eigen::VectorXd out(M);
  for (int i = 0; i < M; ++i) out[i] = sv[M - 1 - i] * sv[M - 1 - i];
  return out;
}

// alpha' B_M^{-1} alpha evaluated through the SVD of the mask block.
inline double gram_inverse_quadratic(const SpectralModel& mdl, Mask m, int M,
                                     const Eigen::VectorXd& alpha) {
  require(alpha.size() == M, ErrorKind::input, "coefficient vector has wrong size");
  const Eigen::MatrixXd X = scaled_mask_block(mdl, m, M);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinV);
  double acc = 0.0;
  for (int i = 0; i < M; ++i) {
    const double s = svd.singularValues()[i];
    require(s > 0.0, ErrorKind::resolution,
            "masked mode block is exactly rank deficient");
    const double c = svd.matrixV().col(i).dot(alpha) / s;
    acc += c * c;
  }
  return acc;
}

// theta_k: norm of the orthogonal projection of the normalized masked mode
// k+1 onto the span of the first k masked modes. Equal to the closed form
// sqrt(v' B_k^{-1} v)/||xi_{k+1}||_mask, but evaluated via a QR projection,
// which keeps full accuracy where the normal-equations form loses half the
// digits to squaring.
inline double theta(const SpectralModel& mdl, Mask m, int k) {
  require(k >= 1 && k <= mdl.n() - 1, ErrorKind::domain, "mode count out of range");
  const Eigen::MatrixXd X = scaled_mask_block(mdl, m, k + 1);
  const Eigen::VectorXd x_next = X.col(k);
  const double nrm = x_next.norm();
  require(nrm > 0.0, ErrorKind::degeneracy,
          "mode " + std::to_string(k + 1) + " vanishes on the mask");
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X.leftCols(k));
  const double proj = (qr.householderQ().adjoint() * x_next).head(k).norm();
  const double th = proj / nrm;
  require(th < 1.0 - 1e-10, ErrorKind::degeneracy,
          "masked modes 1.." + std::to_string(k + 1) +
              " are numerically dependent (theta = " + std::to_string(th) +
              "); refine the grid");
  return th;
}

// Amplification factor tau_M = sqrt(M / prod_{k<M} (1 - theta_k)); tau_1 = 1.
inline double tau(const SpectralModel& mdl, Mask m, int M) {
  require(M >= 1 && M <= mdl.n(), ErrorKind::domain, "mode count out of range");
  double prod = 1.0;
  for (int k = 1; k < M; ++k) prod *= 1.0 - theta(mdl, m, k);
  return std::sqrt(M / prod);
}

struct GramData {
  Eigen::MatrixXd B;
  Eigen::VectorXd theta;  // theta_1 .. theta_{M-1}
  double tau = 1.0;
  Eigen::VectorXd spectrum;  // eigenvalues of B, ascending
};

inline GramData gram_data(const SpectralModel& mdl, Mask m, int M) {
  GramData g;
  g.B = gram_matrix(mdl, m, M);
  g.spectrum = gram_spectrum(mdl, m, M);
  g.theta.resize(M - 1);
  for (int k = 1; k < M; ++k) g.theta[k - 1] = theta(mdl, m, k);
  g.tau = tau(mdl, m, M);
  return g;
}

// --- coercivity calibration ---------------------------------------------------

struct CalibrationSample {
  Mask mask = Mask::control;
  int M = 0;
  double lambda_min = 0.0;  // smallest Gram eigenvalue
  double ratio = 0.0;       // ln(1/lambda_min) / (1 + gamma0^(2/3) + sqrt(lambda_M))
};

struct CalibratedConstant {
  double C0 = 0.0;
  double safety_factor = 1.0;
  std::vector<CalibrationSample> samples;
};

inline double coercivity_exponent_scale(const SpectralModel& mdl, double lambda_M) {
  return 1.0 + std::pow(mdl.gamma0, 2.0 / 3.0) + std::sqrt(lambda_M);
}

// Fits the one free constant of the Gram coercivity bound
//   alpha' B_M^{-1} alpha <= exp(C0 (1 + gamma0^(2/3) + sqrt(lambda_M))) |alpha|^2
// by sampling the smallest Gram eigenvalue over M_range on both masks and
// taking the worst ratio, inflated by a safety factor. Holds by construction
// on every sampled M.
inline CalibratedConstant calibrate_C0(const SpectralModel& mdl,
                                       const std::vector<int>& M_range,
                                       double safety_factor = 1.1) {
  require(!M_range.empty(), ErrorKind::config, "calibration range is empty");
  require(std::isfinite(safety_factor) && safety_factor >= 1.0, ErrorKind::config,
          "safety factor must be >= 1");
  CalibratedConstant cal;
  cal.safety_factor = safety_factor;
  double worst = 0.0;
  for (int M : M_range) {
    require(M >= 1 && M <= mdl.n(), ErrorKind::domain, "mode count out of range");
    const double lam = mdl.eigenvalues[M - 1];
    require(lam >= 0.0, ErrorKind::precondition,
            "calibration range admits only nonnegative eigenvalues; lambda_" +
                std::to_string(M) + " = " + std::to_string(lam));
    for (Mask m : {Mask::control, Mask::observation}) {
      CalibrationSample s;
      s.mask = m;
      s.M = M;
      s.lambda_min = gram_spectrum(mdl, m, M)[0];
      require(s.lambda_min > 0.0, ErrorKind::resolution,
              "masked mode block is exactly rank deficient");
      s.ratio = std::log(1.0 / s.lambda_min) / coercivity_exponent_scale(mdl, lam);
      worst = std::max(worst, s.ratio);
      cal.samples.push_back(s);
    }
  }
  cal.C0 = safety_factor * worst;
  return cal;
}

// Modes the calibration sweep may sample: indices above the nonpositive part
// of the spectrum, capped by the grid.
inline std::vector<int> default_calibration_range(const SpectralModel& mdl,
                                                  int M_max = 12) {
  std::vector<int> r;
  for (int M = std::max(2, mdl.n_nonpositive + 1); M <= std::min(M_max, mdl.n()); ++M)
    r.push_back(M);
  require(!r.empty(), ErrorKind::config,
          "no admissible mode counts below M_max = " + std::to_string(M_max));
  return r;
}

// --- interpolation-average check ----------------------------------------------

struct InterpolationReport {
  double max_ratio = 0.0;  // worst half-interval / full-interval masked average
  double tau_M = 1.0;
  int trials = 0;
  int violations = 0;
};

// Monte-Carlo check that for states evolving under the adjoint flow, the
// masked time-average over the first half of [T1, T2] never exceeds tau_M
// times the average over the whole interval.
inline InterpolationReport check_interpolation_averages(const SpectralModel& mdl,
                                                        double T1, double T2, int M,
                                                        int trials,
                                                        std::uint64_t seed = 0,
                                                        Mask m = Mask::control) {
  require(std::isfinite(T1) && std::isfinite(T2) && T1 >= 0.0 && T1 < T2,
          ErrorKind::domain, "need 0 <= T1 < T2");
  require(M >= 1 && M <= mdl.n(), ErrorKind::domain, "mode count out of range");
  require(trials >= 1, ErrorKind::domain, "need at least one trial");

  const double dt = T2 - T1;
  Eigen::VectorXd w_full(M), w_half(M);
  for (int j = 0; j < M; ++j) {
    const double lam = mdl.eigenvalues[j];
    w_full[j] = phi_factor(lam, dt);
    w_half[j] = w_full[j] - phi_factor(lam, dt / 2.0);
    require(std::isfinite(w_full[j]) && std::isfinite(w_half[j]), ErrorKind::domain,
            "time-average weights overflow for mode " + std::to_string(j + 1));
  }

  InterpolationReport rep;
  rep.tau_M = tau(mdl, m, M);
  rep.trials = trials;
  const Eigen::MatrixXd X = scaled_mask_block(mdl, m, M);
  const double scale_t = 1.0 / std::sqrt(dt);
  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    const Eigen::VectorXd phi_hat = rng.normal_vector(M);
    const double full = scale_t * (X * w_full.cwiseProduct(phi_hat)).norm();
    const double half = scale_t * (X * w_half.cwiseProduct(phi_hat)).norm();
    if (full > 0.0) rep.max_ratio = std::max(rep.max_ratio, half / full);
    if (half > rep.tau_M * full + 1e-10 * std::max(full, 1e-300)) ++rep.violations;
  }
  return rep;
}

}  // namespace heatsd
