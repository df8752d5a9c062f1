#ifndef REFPRIOR_SPECTRAL_HPP
#define REFPRIOR_SPECTRAL_HPP

#include <Eigen/Dense>

#include "refprior/design.hpp"
#include "refprior/gp_model.hpp"
#include "refprior/kernels.hpp"

namespace refprior {

// Tuning knobs for spectral_quadratic_form. rel_tol drives the adaptive
// quadrature on the truncated frequency domain, tail_tol is the budget for
// the analytically bounded omitted tail (relative to the running estimate),
// and max_nodes caps the abscissa count before the routine gives up.
// mc_samples and seed only matter for designs in dimension two or higher,
// where the integral is estimated by importance sampling instead.
struct SpectralOptions {
  double rel_tol = 1e-9;
  double tail_tol = 1e-8;
  long max_nodes = 2000000;
  long mc_samples = 1000000;
  unsigned long seed = 20260814;
};

// Both sides of the frequency-domain identity
//   xi^T Sigma_theta xi  =  M_r theta^r I_theta(xi),
// where M_r is the closed-form spectral mass of the kernel family and
// I_theta(xi) integrates the scaled spectral weight against the squared
// modulus of sum_j xi_j exp(i <s, x_j>). Supported families: matern,
// rational_quadratic, squared_exponential.
struct SpectralReport {
  double theta = 0.0;
  Eigen::VectorXd xi;
  double quadratic_form_direct = 0.0;    // xi^T Sigma_theta xi
  double quadratic_form_spectral = 0.0;  // M_r theta^r I_theta(xi)
  double rel_error = 0.0;
  long nodes = 0;            // quadrature abscissas, or Monte Carlo draws
  bool monte_carlo = false;  // true once the design dimension exceeds 1
  double std_error = 0.0;    // Monte Carlo standard error, 0 otherwise
};

// Evaluates both sides of the identity above. Dimension 1 uses adaptive
// Gauss-Kronrod quadrature on [0, S] with S grown until the omitted tail,
// bounded analytically per family, drops below tail_tol of the estimate.
// Higher dimensions draw mc_samples frequencies from the normalized spectral
// density (closed-form samplers per family) and average the oscillatory
// factor; the estimator then targets xi^T Sigma_theta xi directly.
// Throws parameter_error on an unsupported family, a dimension mismatch, a
// zero probe vector or a non-positive theta, and quadrature_error (message
// carries the node count) if the node cap is hit before convergence.
SpectralReport spectral_quadratic_form(const KernelSpec& kernel,
                                       const DesignSet& design,
                                       const Eigen::VectorXd& xi, double theta,
                                       const SpectralOptions& options = {});

// One point of the derivative-domination check on
//   F_theta = r theta^-1 Sigma_theta - dSigma_theta/dtheta.
// F_theta should be positive semi-definite for the three smooth families at
// every theta, and its largest eigenvalue relative to Sigma_theta (t2, the
// top generalized eigenvalue of the pencil (F_theta, Sigma_theta)) should
// stay below a family-specific ceiling:
//   matern                (2 nu + r) / theta   at every theta
//   rational_quadratic    r + 2                once theta is large
//   squared_exponential   theta                once theta is large
// "Large" means theta >= asymptotic_factor * max distance; below that the
// rational_quadratic / squared_exponential comparison is reported but not
// enforced (bound_in_force = false).
struct FMatrixReport {
  double theta = 0.0;
  double f_min_eigenvalue = 0.0;
  double f_scale = 0.0;  // largest |eigenvalue| of F_theta
  double t2 = 0.0;
  double family_bound = 0.0;
  bool bound_in_force = false;
  bool positive_semidefinite = false;  // min eig >= -1e-10 * f_scale
  bool bound_satisfied = false;        // raw comparison t2 <= bound + 1e-8
  bool passes = false;  // positive_semidefinite and (satisfied or not in force)
};

// Assembles F_theta from the kernel evaluated on the model's design (the
// model is rebuilt if its kernel differs from the one passed in) and solves
// the two eigenproblems. Throws parameter_error on an unsupported family and
// not_positive_definite if Sigma_theta fails its Cholesky factorization, in
// which case the generalized eigenproblem is meaningless at this theta.
FMatrixReport f_matrix_check(const GpModel& model, const KernelSpec& kernel,
                             double theta, double asymptotic_factor = 10.0);

}  // namespace refprior

#endif  // REFPRIOR_SPECTRAL_HPP
