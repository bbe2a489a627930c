#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "heatsd/errors.hpp"
#include "heatsd/gram.hpp"
#include "heatsd/model.hpp"

namespace heatsd {

// Steer the leading-M projection of the state into the eps*||zeta|| ball at
// time T2, starting from zeta at T1, with minimal control norm.
// SNP: control distributed on the actuation subdomain, constant in time.
// INP: one impulse on the observation subdomain at time tau.
struct SnpProblem {
  double T1 = 0.0;
  double T2 = 0.0;
  int M = 0;
  double eps = 0.0;
  StateVector zeta;
};

struct InpProblem {
  double T1 = 0.0;
  double T2 = 0.0;
  double tau = 0.0;  // impulse instant, T1 < tau < T2
  int M = 0;
  double eps = 0.0;
  StateVector zeta;
};

struct SolverOptions {
  int max_iterations = 100000;    // total budget across both phases
  int fista_iterations = 20000;   // accelerated proximal-gradient phase
  double kkt_tol_factor = 1e-10;  // tolerance = factor * (1 + |beta|)
};

struct MinNormSolution {
  Eigen::VectorXd minimizer;     // coordinates of the optimal profile, length M
  Eigen::VectorXd control;       // control values on the mask
  double control_norm = 0.0;     // masked discrete norm of `control`
  double kkt_residual = 0.0;     // first-order optimality residual
  bool is_zero = false;          // exact zero-control criterion |beta| <= eps*||zeta||
  int iterations = 0;
  const char* method = "zero";   // "zero", "fista", or "newton"
};

namespace detail {

inline void validate_common(const SpectralModel& mdl, double T1, double T2, int M,
                            double eps, const StateVector& zeta) {
  require(std::isfinite(T1) && std::isfinite(T2) && T1 >= 0.0 && T1 < T2,
          ErrorKind::domain, "need 0 <= T1 < T2");
  require(M >= 1 && M <= mdl.n(), ErrorKind::domain, "mode count out of range");
  require(std::isfinite(eps) && eps > 0.0, ErrorKind::domain, "eps must be positive");
  require(zeta.size() == mdl.n(), ErrorKind::input, "zeta has wrong size");
  require(zeta.allFinite(), ErrorKind::input, "zeta must be finite");
}

// Flowed projection coefficients beta_j = exp(-lambda_j dT) <zeta, xi_j>.
inline Eigen::VectorXd flowed_projection(const SpectralModel& mdl, double dT, int M,
                                         const StateVector& zeta) {
  Eigen::VectorXd beta(M);
  for (int j = 0; j < M; ++j) beta[j] = std::exp(-mdl.eigenvalues[j] * dT) * zeta[j];
  require(beta.allFinite(), ErrorKind::domain, "flowed projection overflows");
  return beta;
}

// Minimizes 0.5 b'Qb + beta'b + r|b| with Q = R'R symmetric PSD.
// Phase 1 is FISTA with the norm term handled by its proximal map (block
// soft-threshold); phase 2, entered only if the tolerance is still out of
// reach, is a safeguarded Newton iteration on the radial multiplier s of the
// stationarity system (Q + sI) b = -beta, s|b| = r, whose shifted solves stay
// well conditioned however singular Q is.
struct ReducedResult {
  Eigen::VectorXd b;
  double kkt = 0.0;
  int iterations = 0;
  const char* method = "zero";
};

inline double kkt_residual_at(const Eigen::MatrixXd& Q, const Eigen::VectorXd& beta,
                              double r, const Eigen::VectorXd& b) {
  const double nb = b.norm();
  if (nb == 0.0) return std::max(0.0, beta.norm() - r);
  return (Q * b + beta + (r / nb) * b).norm();
}

inline ReducedResult solve_reduced(const Eigen::MatrixXd& Q, const Eigen::VectorXd& beta,
                                   double r, const SolverOptions& opts) {
  ReducedResult res;
  const int M = static_cast<int>(beta.size());
  res.b = Eigen::VectorXd::Zero(M);
  if (beta.norm() <= r) {
    res.method = "zero";
    return res;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q, Eigen::EigenvaluesOnly);
  const double q_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
  const double tol = opts.kkt_tol_factor * (1.0 + beta.norm());
  // Residuals cannot resolve below the rounding floor of forming Q b + beta.
  auto floor_for = [&](const Eigen::VectorXd& b) {
    const double eps_m = std::numeric_limits<double>::epsilon();
    return 4.0 * eps_m * (q_max * b.norm() + beta.norm() + r);
  };

  // Phase 1: FISTA with gradient step 1/L and adaptive restart.
  const double L = std::max(q_max, 1e-300);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(M), y = x, x_prev = x;
  double t_mom = 1.0;
  for (int it = 0; it < std::min(opts.fista_iterations, opts.max_iterations); ++it) {
    ++res.iterations;
    Eigen::VectorXd u = y - (Q * y + beta) / L;
    const double nu = u.norm();
    const double shrink = nu > 0.0 ? std::max(0.0, 1.0 - (r / L) / nu) : 0.0;
    x_prev = x;
    x = shrink * u;
    if ((y - x).dot(x - x_prev) > 0.0) {
      t_mom = 1.0;
      y = x;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom));
      y = x + ((t_mom - 1.0) / t_next) * (x - x_prev);
      t_mom = t_next;
    }
    res.kkt = kkt_residual_at(Q, beta, r, x);
    if (res.kkt <= std::max(tol, floor_for(x))) {
      res.b = x;
      res.method = "fista";
      return res;
    }
  }

  // Phase 2: radial Newton. psi(s) = s*||(Q+sI)^{-1} beta|| - r is increasing
  // with psi(inf) = |beta| - r > 0, so a bracketed root exists.
  auto shifted_solve = [&](double s, Eigen::VectorXd& v) {
    Eigen::LLT<Eigen::MatrixXd> llt(Q + s * Eigen::MatrixXd::Identity(M, M));
    if (llt.info() != Eigen::Success) return false;
    v = llt.solve(beta);
    return true;
  };
  double lo = 0.0;                          // psi(lo) < 0 or lo = 0
  double hi = q_max + beta.norm() / r + 1.0;  // guarantees psi(hi) >= 0
  Eigen::VectorXd v(M), w(M);
  {
    Eigen::LLT<Eigen::MatrixXd> llt;
    while (true) {
      llt.compute(Q + hi * Eigen::MatrixXd::Identity(M, M));
      v = llt.solve(beta);
      if (hi * v.norm() - r >= 0.0) break;
      hi *= 2.0;
      require(std::isfinite(hi), ErrorKind::convergence, "multiplier bracket diverged");
    }
  }
  double s = std::min(hi, r / std::max(beta.norm(), 1e-300) * (q_max + 1.0) + r);
  s = std::max(s, 1e-300);
  for (int it = 0; it < 400 && res.iterations < opts.max_iterations; ++it) {
    ++res.iterations;
    if (!(s > lo && s < hi) || !shifted_solve(s, v)) {
      s = 0.5 * (lo + hi);
      if (!shifted_solve(s, v)) {  // rounding made Q + sI indefinite: raise lo
        lo = s;
        continue;
      }
    }
    const double g = v.norm();
    const double psi = s * g - r;
    if (psi < 0.0) lo = s; else hi = s;
    Eigen::LLT<Eigen::MatrixXd> llt(Q + s * Eigen::MatrixXd::Identity(M, M));
    w = llt.solve(v);
    const double dpsi = g - s * v.dot(w) / std::max(g, 1e-300);
    const double step = dpsi > 0.0 ? psi / dpsi : 0.0;
    res.b = -v;
    res.kkt = kkt_residual_at(Q, beta, r, res.b);
    if (res.kkt <= std::max(tol, floor_for(res.b))) {
      res.method = "newton";
      return res;
    }
    if (hi - lo <= 8.0 * std::numeric_limits<double>::epsilon() * hi) break;
    s = step != 0.0 ? s - step : 0.5 * (lo + hi);
  }
  res.b = -v;
  res.kkt = kkt_residual_at(Q, beta, r, res.b);
  if (res.kkt <= std::max(tol, floor_for(res.b))) {
    res.method = "newton";
    return res;
  }
  fail(ErrorKind::convergence,
       "minimal-norm solver stalled at kkt residual " + std::to_string(res.kkt) +
           " (tolerance " + std::to_string(tol) + ", " +
           std::to_string(res.iterations) + " iterations)");
}

}  // namespace detail

inline MinNormSolution solve_snp(const SpectralModel& mdl, const SnpProblem& p,
                                 const SolverOptions& opts = {}) {
  detail::validate_common(mdl, p.T1, p.T2, p.M, p.eps, p.zeta);
  const double dT = p.T2 - p.T1;
  const int M = p.M;

  Eigen::VectorXd alpha(M);
  for (int j = 0; j < M; ++j) {
    alpha[j] = phi_factor(mdl.eigenvalues[j], dT);
    require(std::isfinite(alpha[j]) && alpha[j] > 0.0, ErrorKind::domain,
            "time-average weight overflows for mode " + std::to_string(j + 1));
  }
  // Factor R with R'R = D B_M D / dT, assembled from the mask block directly.
  const Eigen::MatrixXd R =
      scaled_mask_block(mdl, Mask::control, M) * alpha.asDiagonal() / std::sqrt(dT);
  const Eigen::MatrixXd Q = R.transpose() * R;
  const Eigen::VectorXd beta = detail::flowed_projection(mdl, dT, M, p.zeta);
  const double r = p.eps * p.zeta.norm();

  detail::ReducedResult red = detail::solve_reduced(Q, beta, r, opts);
  MinNormSolution sol;
  sol.minimizer = red.b;
  sol.kkt_residual = red.kkt;
  sol.iterations = red.iterations;
  sol.method = red.method;
  sol.is_zero = beta.norm() <= r;

  const auto& idx = mdl.mask(Mask::control);
  Eigen::MatrixXd modes_blk(static_cast<Eigen::Index>(idx.size()), M);
  for (std::size_t k = 0; k < idx.size(); ++k)
    modes_blk.row(static_cast<Eigen::Index>(k)) = mdl.modes.row(idx[k]).head(M);
  sol.control = modes_blk * alpha.cwiseProduct(red.b) / dT;
  sol.control_norm = masked_norm(mdl, Mask::control, sol.control);
  return sol;
}

inline MinNormSolution solve_inp(const SpectralModel& mdl, const InpProblem& p,
                                 const SolverOptions& opts = {}) {
  detail::validate_common(mdl, p.T1, p.T2, p.M, p.eps, p.zeta);
  require(std::isfinite(p.tau) && p.T1 < p.tau && p.tau < p.T2, ErrorKind::domain,
          "impulse instant must lie strictly inside (T1, T2)");
  const double dT = p.T2 - p.T1;
  const int M = p.M;

  Eigen::VectorXd decay(M);
  for (int j = 0; j < M; ++j) {
    decay[j] = std::exp(-mdl.eigenvalues[j] * (p.T2 - p.tau));
    require(std::isfinite(decay[j]), ErrorKind::domain,
            "impulse flow weight overflows for mode " + std::to_string(j + 1));
  }
  const Eigen::MatrixXd R =
      scaled_mask_block(mdl, Mask::observation, M) * decay.asDiagonal();
  const Eigen::MatrixXd Q = R.transpose() * R;
  const Eigen::VectorXd beta = detail::flowed_projection(mdl, dT, M, p.zeta);
  const double r = p.eps * p.zeta.norm();

  detail::ReducedResult red = detail::solve_reduced(Q, beta, r, opts);
  MinNormSolution sol;
  sol.minimizer = red.b;
  sol.kkt_residual = red.kkt;
  sol.iterations = red.iterations;
  sol.method = red.method;
  sol.is_zero = beta.norm() <= r;

  const auto& idx = mdl.mask(Mask::observation);
  Eigen::MatrixXd modes_blk(static_cast<Eigen::Index>(idx.size()), M);
  for (std::size_t k = 0; k < idx.size(); ++k)
    modes_blk.row(static_cast<Eigen::Index>(k)) = mdl.modes.row(idx[k]).head(M);
  sol.control = modes_blk * decay.cwiseProduct(red.b);
  sol.control_norm = masked_norm(mdl, Mask::observation, sol.control);
  return sol;
}

// --- computable norm bounds ----------------------------------------------------

struct NormBounds {
  double lower = 0.0;           // asserted bound on the control norm
  double upper_advisory = 0.0;  // reported only; depends on the calibrated constant
  bool has_upper = false;
};

namespace detail {

inline double checked_gap(const SpectralModel& mdl, double dT, int M,
                          const StateVector& zeta, double eps) {
  const double lam_M = mdl.eigenvalues[M - 1];
  require(lam_M >= 0.0, ErrorKind::precondition,
          "hypothesis lambda_M >= 0 fails (lambda_" + std::to_string(M) + " = " +
              std::to_string(lam_M) + ")");
  const double rho = flowed_projection(mdl, dT, M, zeta).norm();
  const double thr = eps * zeta.norm();
  require(rho > thr, ErrorKind::precondition,
          "hypothesis ||P_M e^{A dT} zeta|| > eps ||zeta|| fails (" +
              std::to_string(rho) + " <= " + std::to_string(thr) + ")");
  return rho - thr;
}

}  // namespace detail

inline NormBounds snp_bounds(const SpectralModel& mdl, const SnpProblem& p,
                             const CalibratedConstant* cal = nullptr) {
  detail::validate_common(mdl, p.T1, p.T2, p.M, p.eps, p.zeta);
  const double dT = p.T2 - p.T1;
  const double gap = detail::checked_gap(mdl, dT, p.M, p.zeta, p.eps);
  NormBounds nb;
  nb.lower = gap / phi_factor(mdl.eigenvalues[0], dT);
  if (cal) {
    const double lam_M = mdl.eigenvalues[p.M - 1];
    const double c1 = cal->C0 / 2.0;
    const double alpha_M = phi_factor(lam_M, dT);
    nb.upper_advisory = std::exp(c1 * coercivity_exponent_scale(mdl, lam_M)) *
                        (1.0 / phi_factor(mdl.gamma0, dT) + p.eps / alpha_M) *
                        p.zeta.norm();
    nb.has_upper = true;
  }
  return nb;
}

inline NormBounds inp_bounds(const SpectralModel& mdl, const InpProblem& p,
                             const CalibratedConstant* cal = nullptr) {
  detail::validate_common(mdl, p.T1, p.T2, p.M, p.eps, p.zeta);
  require(std::isfinite(p.tau) && p.T1 < p.tau && p.tau < p.T2, ErrorKind::domain,
          "impulse instant must lie strictly inside (T1, T2)");
  const double dT = p.T2 - p.T1;
  const double gap = detail::checked_gap(mdl, dT, p.M, p.zeta, p.eps);
  NormBounds nb;
  nb.lower = std::exp(mdl.eigenvalues[0] * (p.T2 - p.tau)) * gap;
  if (cal) {
    const double lam_M = mdl.eigenvalues[p.M - 1];
    const double c1 = cal->C0 / 2.0;
    nb.upper_advisory = std::exp(c1 * coercivity_exponent_scale(mdl, lam_M)) *
                        (std::exp(-mdl.eigenvalues[0] * (p.tau - p.T1)) +
                         std::exp(lam_M * (p.T2 - p.tau)) * p.eps) *
                        p.zeta.norm();
    nb.has_upper = true;
  }
  return nb;
}

}  // namespace heatsd
