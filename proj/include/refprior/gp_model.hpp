#ifndef REFPRIOR_GP_MODEL_HPP
#define REFPRIOR_GP_MODEL_HPP

#include <Eigen/Dense>
#include <vector>

#include "refprior/design.hpp"
#include "refprior/kernels.hpp"

namespace refprior {

// Model skeleton: locations, kernel, trend basis H and an orthonormal
// complement W with W^T W = I and H^T W = 0 (W = I when the basis is empty).
// wr = W R carries an extra orthogonal rotation that maps W^T 1 onto a
// multiple of the first coordinate axis; quadratic forms through wr equal
// those through W, but the rank-one block contributed by the constant part
// of the correlation stays confined to a single entry, which preserves the
// small pivots of W^T Sigma W in floating point.
struct GpModel {
  DesignSet design;
  KernelSpec kernel;
  RegressionBasis basis;
  Eigen::MatrixXd h;   // n x p
  Eigen::MatrixXd w;   // n x (n - p)
  Eigen::MatrixXd wr;  // n x (n - p)

  // Large-theta machinery: wr^T [entry matrix] wr for every expansion term
  // of the kernel, in the order returned by expansion_terms.
  std::vector<SeriesTerm> series_terms;
  std::vector<Eigen::MatrixXd> series_mats;

  int n() const { return static_cast<int>(h.rows()); }
  int p() const { return static_cast<int>(h.cols()); }
  int m() const { return n() - p(); }
};

GpModel make_model(const DesignSet& design, const KernelSpec& kernel,
                   const RegressionBasis& basis);

// Everything theta-dependent. sigma_w and dsigma_w are expressed in the
// rotated complement basis, i.e. wr^T Sigma wr and wr^T (dSigma/dtheta) wr,
// assembled so that entries of size far below 1 keep relative accuracy.
// chol_lower is the lower Cholesky factor of sigma_w.
struct CorrelationState {
  double theta = 0.0;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd dsigma;
  Eigen::MatrixXd sigma_w;
  Eigen::MatrixXd dsigma_w;
  Eigen::MatrixXd chol_lower;
  bool series_path = false;

  double logdet_sigma_w() const;
};

// Threshold factor: the expansion-based assembly engages once
// theta >= kSeriesThetaFactor * max distance.
inline constexpr double kSeriesThetaFactor = 20.0;

CorrelationState make_correlation(const GpModel& model, double theta);

// Lower Cholesky factor of a symmetric positive definite matrix. Throws
// not_positive_definite carrying theta_label and the offending pivot.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& mat, double theta_label);

// Generalized least squares projector Q = I - H (H^T Sigma^-1 H)^-1 H^T
// Sigma^-1 (identity when p = 0).
Eigen::MatrixXd gls_projector(const GpModel& model, const CorrelationState& state);

// Residuals of the two structural identities tying the complement form to
// the projector form, evaluated on a concrete state:
//   a1: max |Sigma^-1 Q - WR (WR^T Sigma WR)^-1 WR^T| (absolute)
//   a1_scale: max |Sigma^-1 Q|, the natural comparison scale
//   logdet: |log det Sigma + log det(H^T Sigma^-1 H) - log det(H^T H)
//            - log det(W^T Sigma W)|
struct IdentityResiduals {
  double a1 = 0.0;
  double a1_scale = 0.0;
  double logdet = 0.0;
};

IdentityResiduals verify_identities(const GpModel& model,
                                    const CorrelationState& state);

}  // namespace refprior

#endif  // REFPRIOR_GP_MODEL_HPP
