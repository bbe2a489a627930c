#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "heatsd/errors.hpp"

namespace heatsd {

// Modal coefficient vector of a grid function in the eigenbasis.
using StateVector = Eigen::VectorXd;

struct Interval {
  double a = 0.0;
  double b = 0.0;
  double length() const { return b - a; }
};

// Which of the two distinguished subdomains a masked operation acts on.
enum class Mask {
  control,      // actuation subdomain
  observation,  // sensing subdomain
};

// Finite-difference discretization request for the operator
//   A = d^2/dx^2 - V(x)  on (0, domain_length),  Dirichlet ends.
// `potential` holds either one value (constant V) or one value per grid node.
struct ModelConfig {
  double domain_length = 0.0;
  int n_grid = 0;
  Eigen::VectorXd potential;
  Interval omega;   // control subdomain
  Interval omega1;  // observation subdomain
};

namespace detail {

inline std::vector<Eigen::Index> interior_indices(const Eigen::VectorXd& grid,
                                                  const Interval& iv) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    if (grid[i] > iv.a && grid[i] < iv.b) idx.push_back(i);
  return idx;
}

inline void validate_interval(const Interval& iv, double L, const std::string& name) {
  require(std::isfinite(iv.a) && std::isfinite(iv.b), ErrorKind::config,
          name + " endpoints must be finite");
  require(iv.a >= 0.0 && iv.b <= L && iv.a < iv.b, ErrorKind::config,
          name + " must satisfy 0 <= a < b <= domain_length");
}

}  // namespace detail

inline void validate_config(const ModelConfig& c) {
  require(std::isfinite(c.domain_length) && c.domain_length > 0.0, ErrorKind::config,
          "domain_length must be positive and finite");
  require(c.n_grid >= 3, ErrorKind::config, "n_grid must be at least 3");
  require(c.potential.size() == 1 || c.potential.size() == c.n_grid, ErrorKind::config,
          "potential must hold one value or n_grid values");
  require(c.potential.allFinite(), ErrorKind::input, "potential values must be finite");
  detail::validate_interval(c.omega, c.domain_length, "omega");
  detail::validate_interval(c.omega1, c.domain_length, "omega1");
}

// Spectral data of the discretized operator -A_h: eigenvalues ascending,
// eigenvector columns orthonormal in the trapezoid-free discrete inner
// product <u, v> = h * sum_i u_i v_i.
struct SpectralModel {
  ModelConfig config;
  double h = 0.0;
  Eigen::VectorXd grid;         // interior nodes x_i = i*h
  Eigen::VectorXd potential;    // V at each node
  Eigen::VectorXd eigenvalues;  // lambda_1 <= ... <= lambda_n
  Eigen::MatrixXd modes;        // column j-1 holds xi_j on the grid
  double gamma0 = 0.0;          // max_i |V(x_i)|
  int n_nonpositive = 0;        // count of eigenvalues <= 0
  std::vector<Eigen::Index> control_mask;
  std::vector<Eigen::Index> observation_mask;

  int n() const { return static_cast<int>(eigenvalues.size()); }
  const std::vector<Eigen::Index>& mask(Mask m) const {
    return m == Mask::control ? control_mask : observation_mask;
  }
};

inline SpectralModel build_model(const ModelConfig& config) {
  validate_config(config);
  const int n = config.n_grid;
  SpectralModel mdl;
  mdl.config = config;
  mdl.h = config.domain_length / (n + 1);
  mdl.grid.resize(n);
  for (int i = 0; i < n; ++i) mdl.grid[i] = (i + 1) * mdl.h;
  mdl.potential = config.potential.size() == 1
                      ? Eigen::VectorXd::Constant(n, config.potential[0])
                      : config.potential;

  mdl.control_mask = detail::interior_indices(mdl.grid, config.omega);
  mdl.observation_mask = detail::interior_indices(mdl.grid, config.omega1);
  require(!mdl.control_mask.empty(), ErrorKind::config,
          "omega contains no interior grid point");
  require(!mdl.observation_mask.empty(), ErrorKind::config,
          "omega1 contains no interior grid point");

  const double ih2 = 1.0 / (mdl.h * mdl.h);
  Eigen::VectorXd diag = Eigen::VectorXd::Constant(n, 2.0 * ih2) + mdl.potential;
  Eigen::VectorXd sub = Eigen::VectorXd::Constant(n - 1, -ih2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  require(es.info() == Eigen::Success, ErrorKind::resolution,
          "tridiagonal eigensolve failed");

  mdl.eigenvalues = es.eigenvalues();
  // Euclidean-orthonormal columns rescaled so <xi_j, xi_k> = delta_jk in the
  // discrete inner product; fixed sign so the result is toolchain-stable.
  mdl.modes = es.eigenvectors() / std::sqrt(mdl.h);
  for (int j = 0; j < n; ++j) {
    Eigen::Index imax = 0;
    mdl.modes.col(j).cwiseAbs().maxCoeff(&imax);
    if (mdl.modes(imax, j) < 0.0) mdl.modes.col(j) = -mdl.modes.col(j);
  }

  mdl.gamma0 = mdl.potential.cwiseAbs().maxCoeff();
  mdl.n_nonpositive =
      static_cast<int>((mdl.eigenvalues.array() <= 0.0).count());
  return mdl;
}

// --- grid-function utilities ------------------------------------------------

// A_h v on the grid: second difference plus potential, Dirichlet ends.
inline Eigen::VectorXd apply_elliptic(const SpectralModel& mdl,
                                      const Eigen::VectorXd& v) {
  require(v.size() == mdl.n(), ErrorKind::input, "grid function has wrong size");
  const int n = mdl.n();
  const double ih2 = 1.0 / (mdl.h * mdl.h);
  Eigen::VectorXd out(n);
  for (int i = 0; i < n; ++i) {
    const double left = i > 0 ? v[i - 1] : 0.0;
    const double right = i + 1 < n ? v[i + 1] : 0.0;
    out[i] = ih2 * (2.0 * v[i] - left - right) + mdl.potential[i] * v[i];
  }
  return out;
}

inline Eigen::VectorXd to_grid(const SpectralModel& mdl, const StateVector& y) {
  require(y.size() == mdl.n(), ErrorKind::input, "state has wrong size");
  return mdl.modes * y;
}

inline StateVector from_grid(const SpectralModel& mdl, const Eigen::VectorXd& v) {
  require(v.size() == mdl.n(), ErrorKind::input, "grid function has wrong size");
  return mdl.h * (mdl.modes.transpose() * v);
}

inline double grid_norm(const SpectralModel& mdl, const Eigen::VectorXd& v) {
  return std::sqrt(mdl.h) * v.norm();
}

// --- masked operations -------------------------------------------------------

// Values of a state on the masked nodes (restriction; no re-extension).
inline Eigen::VectorXd observe(const SpectralModel& mdl, Mask m, const StateVector& y) {
  require(y.size() == mdl.n(), ErrorKind::input, "state has wrong size");
  const auto& idx = mdl.mask(m);
  Eigen::VectorXd vals(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) vals[k] = mdl.modes.row(idx[k]).dot(y);
  return vals;
}

// Adjoint of observe: extend masked values by zero, expand in the eigenbasis.
inline StateVector inject(const SpectralModel& mdl, Mask m, const Eigen::VectorXd& vals) {
  const auto& idx = mdl.mask(m);
  require(vals.size() == static_cast<Eigen::Index>(idx.size()), ErrorKind::input,
          "masked values have wrong size");
  StateVector y = StateVector::Zero(mdl.n());
  for (std::size_t k = 0; k < idx.size(); ++k)
    y += (mdl.h * vals[k]) * mdl.modes.row(idx[k]).transpose();
  return y;
}

inline double masked_inner(const SpectralModel& mdl, Mask m, const Eigen::VectorXd& u,
                           const Eigen::VectorXd& v) {
  const auto sz = static_cast<Eigen::Index>(mdl.mask(m).size());
  require(u.size() == sz && v.size() == sz, ErrorKind::input,
          "masked values have wrong size");
  return mdl.h * u.dot(v);
}

inline double masked_norm(const SpectralModel& mdl, Mask m, const Eigen::VectorXd& u) {
  return std::sqrt(masked_inner(mdl, m, u, u));
}

// Masked mode block with rows scaled by sqrt(h): Euclidean products of its
// columns realize the masked discrete inner products of the first M modes.
inline Eigen::MatrixXd scaled_mask_block(const SpectralModel& mdl, Mask m, int M) {
  require(M >= 1 && M <= mdl.n(), ErrorKind::domain, "mode count out of range");
  const auto& idx = mdl.mask(m);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(idx.size()), M);
  const double s = std::sqrt(mdl.h);
  for (std::size_t k = 0; k < idx.size(); ++k)
    X.row(static_cast<Eigen::Index>(k)) = s * mdl.modes.row(idx[k]).head(M);
  return X;
}

// --- evolution ----------------------------------------------------------------

// Keep the leading M modal coefficients, zero the rest.
inline StateVector project(const SpectralModel& mdl, int M, const StateVector& y) {
  require(y.size() == mdl.n(), ErrorKind::input, "state has wrong size");
  require(M >= 0 && M <= mdl.n(), ErrorKind::domain, "mode count out of range");
  StateVector out = StateVector::Zero(mdl.n());
  out.head(M) = y.head(M);
  return out;
}

inline StateVector semigroup_apply(const SpectralModel& mdl, double t,
                                   const StateVector& y) {
  require(y.size() == mdl.n(), ErrorKind::input, "state has wrong size");
  require(std::isfinite(t) && t >= 0.0, ErrorKind::domain,
          "evolution time must be nonnegative");
  return ((-t * mdl.eigenvalues.array()).exp() * y.array()).matrix();
}

// (1 - exp(-lambda t)) / lambda, switching to a Taylor expansion near
// lambda*t = 0 where the direct quotient loses all significant digits.
inline double phi_factor(double lambda, double t) {
  const double z = lambda * t;
  if (std::abs(z) < 1e-6)
    return t * (1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0);
  return -std::expm1(-z) / lambda;
}

// State reached from zero after time t under a control held constant on the
// actuation subdomain: coefficient j is phi_factor(lambda_j, t) * u_j.
inline StateVector duhamel_const(const SpectralModel& mdl, double t,
                                 const Eigen::VectorXd& control_values) {
  require(std::isfinite(t) && t >= 0.0, ErrorKind::domain,
          "evolution time must be nonnegative");
  StateVector u = inject(mdl, Mask::control, control_values);
  for (int j = 0; j < mdl.n(); ++j) u[j] *= phi_factor(mdl.eigenvalues[j], t);
  return u;
}

// Exponential time-average weight of mode j over [T1, T2] sampled at T2:
// integral of exp(-lambda_j (T2 - t)) dt, always positive for T2 > T1.
inline double mode_average_weight(double lambda, double T1, double T2) {
  return phi_factor(lambda, T2 - T1);
}

// Number of leading modes whose discrete eigenvalues track the continuous
// ones to about 1%: the second-difference symbol deficit is ~(x_j^2)/3 with
// x_j = j*pi/(2(n+1)), so j must stay below 2(n+1)*sqrt(0.03)/pi.
inline int trustworthy_mode_count(const SpectralModel& mdl) {
  const int n = mdl.n();
  const int j = static_cast<int>(std::floor(2.0 * (n + 1) * std::sqrt(0.03) / M_PI));
  return std::max(0, std::min(j, n));
}

}  // namespace heatsd
