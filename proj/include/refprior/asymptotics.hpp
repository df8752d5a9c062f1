#ifndef REFPRIOR_ASYMPTOTICS_HPP
#define REFPRIOR_ASYMPTOTICS_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "refprior/design.hpp"
#include "refprior/gp_model.hpp"
#include "refprior/kernels.hpp"

namespace refprior {

// Entrywise power of the pairwise distance matrix. The exponent must lie in
// (0, 2]; the diagonal stays exactly zero.
Eigen::MatrixXd distance_power_matrix(const DesignSet& design, double exponent);

// Inertia of a symmetric matrix: eigenvalue counts by sign under an absolute
// tolerance. eigenvalues are sorted ascending.
struct SignedSpectrum {
  int n_positive = 0;
  int n_negative = 0;
  int n_zero = 0;
  std::vector<double> eigenvalues;
  double tolerance = 0.0;

  int rank() const { return n_positive + n_negative; }
};

// tol < 0 selects the default dim * machine epsilon * max|eigenvalue|.
// Throws parameter_error when the input is not symmetric.
SignedSpectrum signed_spectrum(const Eigen::MatrixXd& matrix, double tol = -1.0);

// Scalar factor of the form coef * theta^theta_power * log(theta)^log_power.
// `text` spells the symbolic expression, including the one subcase where the
// factor is a two-term sum and the power fields only give leading behavior.
struct PowerLawTag {
  double theta_power = 0.0;
  double log_power = 0.0;
  double coef = 1.0;
  std::string text;
};

// Large-theta structure of W^T Sigma_theta W, written as
//   g(theta) * (W^T D W + gstar(theta) * W^T Dstar W + remainder)
// with the remainder negligible against gstar. The case label drives the
// predicted decay rates of the correlation-length prior and of the
// integrated likelihood.
enum class ExpansionCase {
  case_1a,         // leading slot nonsingular after projection
  case_1b,         // singular, but the two slots share no kernel direction
  case_2_usual,    // shared kernel direction, generic subcase
  case_2_special,  // adjacent rank-one slots proportional to each other
  matern_log_branch,  // integer-smoothness slots D^(k) all vanish up to the
                      // log-weighted one, leaving gstar = 1/log(theta)
};
std::string to_string(ExpansionCase c);

struct ExpansionReport {
  ExpansionCase case_label = ExpansionCase::case_1a;
  // Refinement inside matern_log_branch, where the nonsingular and singular
  // arms keep different predicted rates: "1a" or "1b". Empty otherwise.
  std::string subcase;

  // Slot indices in units of the distance power: slot k carries entries
  // d^(2k), so k1 and k2 may be the fractional smoothness value. k2 is -1
  // when no second slot exists and Dstar is the zero matrix.
  double k1 = 0.0;
  double k2 = -1.0;

  Eigen::MatrixXd d_matrix;      // coefficient-scaled leading slot, n x n
  Eigen::MatrixXd dstar_matrix;  // subleading slot; zero matrix when absent
  std::string d_tag;             // which slot the matrix came from
  std::string dstar_tag;

  PowerLawTag g;
  PowerLawTag g_star;

  int m = 0;             // complement dimension n - p
  int rank_leading = 0;  // rank of W^T D W
  // Proportionality factor b with W^T Dstar_raw W = b W^T D_raw W in the
  // special subcase (raw means without series coefficients); 0 otherwise.
  double special_factor = 0.0;

  // Predicted large-theta envelopes: prior = O(theta^a log(theta)^b) and
  // likelihood likewise. Log powers are reported separately so integer
  // smoothness branches stay exact.
  double predicted_prior_exponent = 0.0;
  double predicted_prior_log_power = 0.0;
  double predicted_lik_exponent = 0.0;
  double predicted_lik_log_power = 0.0;
};

// Computes the projected slots W^T D^(k) W in dominance order, selects the
// leading pair per the kernel family's expansion, and classifies the case.
// Requires a squared-exponential, rational-quadratic or Matern (1 <= nu <= 12)
// kernel and n - p >= 2. Rank decisions near the tolerance boundary throw
// ambiguity_error instead of guessing. If `kernel` differs from the kernel
// stored in `model`, the model is rebuilt on the same design and basis.
ExpansionReport expansion_report(const GpModel& model, const KernelSpec& kernel);

// Nested kernel chain of the projected slots: each slot is compressed onto
// the subspace surviving the earlier ones and the chain descends through the
// kernel of that compression, reaching the trivial space after finitely many
// slots. The subspace alive when the chain closes is the critical subspace;
// the smallest eigenvalue of W^T Sigma W decays like theta^-e with e the
// closing slot's decay order. The data direction W^T y must keep a relative
// component above 1e-8 inside the critical subspace for the posterior mass
// argument to be observable in floating point.
struct NondegeneracyReport {
  bool passes = false;
  double margin = 0.0;             // in [0, 1]
  int critical_subspace_dim = 0;
  int intersection_depth = 0;      // index of the slot whose kernel closes the chain
  double terminating_exponent = 0.0;  // theta-decay order of the closing slot
  Eigen::MatrixXd critical_basis;  // m x critical_subspace_dim, orthonormal
};

NondegeneracyReport nondegeneracy_check(const GpModel& model,
                                        const KernelSpec& kernel,
                                        const Eigen::VectorXd& y);

// Least-squares fit of log f against log theta, optionally with a
// log(log theta) regressor for branches whose envelope carries a log factor.
struct SlopeFit {
  double slope = 0.0;          // coefficient of log theta
  double log_log_coef = 0.0;   // coefficient of log log theta (0 if unused)
  double intercept = 0.0;
  double residual_rms = 0.0;
  bool with_log_log = false;
};

// Requires at least 8 nodes spanning at least two decades, all values finite.
// The log-log regressor additionally requires theta > 1 throughout.
SlopeFit fit_tail_slope(const std::vector<double>& theta,
                        const std::vector<double>& log_f,
                        bool with_log_log = false);

// Measured growth exponent of ||(W^T Sigma_theta W)^{-1}|| along a theta grid
// together with the structural ceiling: the terminating exponent of the
// kernel-intersection chain for squared-exponential and rational-quadratic
// kernels, and 2 nu for Matern kernels. Grid points where the projected
// correlation stops being numerically positive definite truncate the fit.
struct InverseNormReport {
  double measured_exponent = 0.0;
  double predicted_ceiling = 0.0;
  int points_used = 0;
  bool truncated = false;
  SlopeFit fit;
};

InverseNormReport inverse_norm_exponent(const GpModel& model,
                                        const KernelSpec& kernel,
                                        const std::vector<double>& thetas);

// Leading large-theta correction of the plain (unprojected) correlation
// matrix, Sigma_theta = 11^T + g0(theta) D + smaller terms: the envelope g0,
// the order of the neglected part, the distance power q carried by D, and
// whether D is nonsingular for generic designs with n > r + 2.
struct KernelTailMetadata {
  PowerLawTag g0;
  double remainder_power = 0.0;  // neglected part is O(theta^remainder_power ...)
  double remainder_log_power = 0.0;
  double q = 0.0;
  bool d_nonsingular_generic = false;
};

KernelTailMetadata kernel_tail_metadata(const KernelSpec& spec);

}  // namespace refprior

#endif  // REFPRIOR_ASYMPTOTICS_HPP
