#ifndef REFPRIOR_OBJECTIVE_HPP
#define REFPRIOR_OBJECTIVE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "refprior/gp_model.hpp"

namespace refprior {

// Objective prior density on the correlation length, up to one global
// normalizing constant:
//   pi(theta)^2 = tr[M^2] - tr[M]^2 / m,  M = (W' Sigma W)^-1 (W' dSigma W).
// Returns log pi(theta); -inf when the bracket underflows to zero. Requires
// at least two complement dimensions (m >= 2), otherwise the bracket is
// identically zero and no objective prior exists on this scale.
double log_reference_prior(const GpModel& model, const CorrelationState& state);

// Same quantity through the full-matrix projector route; kept as an
// independent route for verification, never collapsed into the primary one.
double log_reference_prior_qform(const GpModel& model,
                                 const CorrelationState& state);

// The two bracket routes underneath the priors, exposed for direct checks.
// The complement form is assembled as a centered Frobenius norm, which keeps
// it nonnegative in floating point; the projector form can dip below zero by
// rounding and throws consistency_error if it does so beyond tolerance.
double prior_bracket_wform(const Eigen::MatrixXd& chol_lower,
                           const Eigen::MatrixXd& dsigma_w);
double prior_bracket_qform(const Eigen::MatrixXd& sigma,
                           const Eigen::MatrixXd& dsigma,
                           const Eigen::MatrixXd& h);

// Marginal density of the data with the location-scale parameters
// integrated out under their flat/scale-invariant prior:
//   log L(theta) = lgamma(m/2) - log 2 - (m/2) log pi
//                + (1/2) log det(H'H) - (1/2) log det(W' Sigma W)
//                - (m/2) log( y' W (W' Sigma W)^-1 W' y ).
// Valid for m >= 1; throws degenerate_observations when W'y = 0.
double log_integrated_likelihood(const GpModel& model,
                                 const CorrelationState& state,
                                 const Eigen::VectorXd& y);

struct PosteriorOptions {
  double theta_min = 0.0;  // <= 0 means automatic bracketing
  double theta_max = 0.0;
  double rel_tol = 1e-6;     // adaptive quadrature target on the normalizer
  double tail_tol = 1e-8;    // admissible relative mass beyond the bracket
  int grid_points = 257;     // resolution of the exported curve
  int threads = 1;
};

struct PosteriorCurve {
  std::vector<double> theta;      // log-uniform grid
  std::vector<double> log_prior;  // unnormalized
  std::vector<double> log_lik;
  std::vector<double> log_post;   // log_prior + log_lik
  double theta_min = 0.0;
  double theta_max = 0.0;
  double log_normalizer = 0.0;  // log integral of exp(log_post) d(theta)
  double left_tail_bound = 0.0;   // relative mass estimates beyond the ends
  double right_tail_bound = 0.0;
  long function_evals = 0;
  bool truncated_by_pd_failure = false;  // bracket shrunk at a Cholesky wall
  double pd_failure_theta = 0.0;
};

// Normalized posterior over theta. Throws quadrature_error when the mass
// cannot be bracketed within tolerance, degenerate_observations when
// W'y = 0, identifiability_error when m < 2.
PosteriorCurve build_posterior_curve(const GpModel& model,
                                     const Eigen::VectorXd& y,
                                     const PosteriorOptions& options);

struct MapResult {
  double theta = 0.0;
  double log_post = 0.0;
  bool at_boundary = false;
};

// Posterior mode over the curve's bracket (golden-section refinement of the
// grid argmax).
MapResult map_theta(const GpModel& model, const Eigen::VectorXd& y,
                    const PosteriorCurve& curve);

struct PredictionResult {
  Eigen::VectorXd mean;
  Eigen::MatrixXd quantiles;  // rows follow points; two columns per level,
                              // lower bound then upper bound
  std::vector<double> levels;      // central interval coverages requested
  Eigen::VectorXd exact_interpolation;  // 1.0 where the point hits a design row
};

// Posterior-mixture prediction at new locations: a location-scale t at every
// grid theta, mixed with the posterior weights. quantile levels are central
// coverages, e.g. 0.5, 0.9.
PredictionResult predict(const GpModel& model, const Eigen::VectorXd& y,
                         const PosteriorCurve& curve,
                         const Eigen::MatrixXd& new_points,
                         const std::vector<double>& levels);

struct ConditionalDraws {
  std::vector<double> theta;
  std::vector<double> sigma2;
  Eigen::MatrixXd beta;  // draws x p
};

// Exact-conditional sampling of (theta, sigma^2, beta) given the data:
// theta by inverse-CDF on the curve, sigma^2 from its inverse-gamma
// conditional, beta from its Gaussian conditional. Fully determined by seed.
ConditionalDraws sample_conditional(const GpModel& model,
                                    const Eigen::VectorXd& y,
                                    const PosteriorCurve& curve, int draws,
                                    std::uint64_t seed);

}  // namespace refprior

#endif  // REFPRIOR_OBJECTIVE_HPP
