#include "refprior/gp_model.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "refprior/errors.hpp"

namespace refprior {

namespace {

// Deterministic sign convention: the largest-magnitude entry of each column
// is made positive, so repeated builds give bit-identical complements.
void fix_column_signs(Eigen::MatrixXd& mat) {
  for (int j = 0; j < mat.cols(); ++j) {
    int idx = 0;
    mat.col(j).cwiseAbs().maxCoeff(&idx);
    if (mat(idx, j) < 0.0) mat.col(j) = -mat.col(j);
  }
}

Eigen::MatrixXd complement_basis(const Eigen::MatrixXd& h) {
  const int n = static_cast<int>(h.rows());
  const int p = static_cast<int>(h.cols());
  if (p == 0) return Eigen::MatrixXd::Identity(n, n);
  if (p >= n)
    throw identifiability_error(
        "regression basis has as many columns as observations");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(h, Eigen::ComputeFullU);
  const auto& sv = svd.singularValues();
  const double tol = 1e-10 * sv(0) * std::max(n, p);
  if (!(sv(p - 1) > tol))
    throw identifiability_error(
        "regression basis is numerically rank deficient");
  Eigen::MatrixXd w = svd.matrixU().rightCols(n - p);
  fix_column_signs(w);
  return w;
}

// Symmetric Householder reflector R with R^T u proportional to e_1 (identity
// when u is already negligible, i.e. the constant vector lies in the span of
// the basis).
Eigen::MatrixXd rotation_to_first_axis(const Eigen::VectorXd& u) {
  const int m = static_cast<int>(u.size());
  Eigen::MatrixXd r = Eigen::MatrixXd::Identity(m, m);
  const double norm = u.norm();
  if (norm < 1e-12) return r;
  Eigen::VectorXd v = u;
  v(0) += (u(0) >= 0.0 ? norm : -norm);
  const double vsq = v.squaredNorm();
  if (vsq == 0.0) return r;
  r -= (2.0 / vsq) * (v * v.transpose());
  return r;
}

// Value of coef * theta^p * log(theta)^l and its theta derivative.
void term_weight(const SeriesTerm& t, double theta, double* val, double* der) {
  const double lt = std::log(theta);
  const double pw = std::pow(theta, t.theta_power);
  const double lg = (t.log_theta != 0) ? lt : 1.0;
  *val = t.coef * pw * lg;
  double d = t.theta_power * pw * lg;
  if (t.log_theta != 0) d += pw;
  *der = t.coef * d / theta;
}

}  // namespace

GpModel make_model(const DesignSet& design, const KernelSpec& kernel,
                   const RegressionBasis& basis) {
  validate_kernel(kernel);
  GpModel model;
  model.design = design;
  model.kernel = kernel;
  model.basis = basis;
  model.h = basis.evaluate(design.points);
  model.w = complement_basis(model.h);

  const Eigen::VectorXd u =
      model.w.transpose() * Eigen::VectorXd::Ones(design.n());
  model.wr = model.w * rotation_to_first_axis(u);

  model.series_terms = expansion_terms(kernel, 12);
  const int n = design.n();
  model.series_mats.reserve(model.series_terms.size());
  for (const auto& term : model.series_terms) {
    Eigen::MatrixXd entry(n, n);
    for (int i = 0; i < n; ++i) {
      entry(i, i) = series_entry(term, 0.0);
      for (int j = i + 1; j < n; ++j) {
        entry(i, j) = series_entry(term, design.distances(i, j));
        entry(j, i) = entry(i, j);
      }
    }
    model.series_mats.push_back(model.wr.transpose() * entry * model.wr);
  }
  return model;
}

double CorrelationState::logdet_sigma_w() const {
  return 2.0 * chol_lower.diagonal().array().log().sum();
}

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& mat, double theta_label) {
  const int m = static_cast<int>(mat.rows());
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j) {
    double pivot = mat(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0) || !std::isfinite(pivot))
      throw not_positive_definite(
          "correlation matrix lost positive definiteness (pivot " +
              std::to_string(pivot) + " at theta " + std::to_string(theta_label) +
              ")",
          theta_label, pivot);
    l(j, j) = std::sqrt(pivot);
    for (int i = j + 1; i < m; ++i) {
      const double s = mat(i, j) - l.row(i).head(j).dot(l.row(j).head(j));
      l(i, j) = s / l(j, j);
    }
  }
  return l;
}

CorrelationState make_correlation(const GpModel& model, double theta) {
  if (!(theta > 0.0) || !std::isfinite(theta))
    throw parameter_error("theta must be finite and positive");
  const int n = model.n();
  const auto& dist = model.design.distances;

  CorrelationState state;
  state.theta = theta;
  state.sigma.setIdentity(n, n);
  state.dsigma.setZero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double k = eval_kernel(model.kernel, dist(i, j), theta);
      const double dk = eval_kernel_dtheta(model.kernel, dist(i, j), theta);
      state.sigma(i, j) = k;
      state.sigma(j, i) = k;
      state.dsigma(i, j) = dk;
      state.dsigma(j, i) = dk;
    }
  }

  state.series_path =
      theta >= kSeriesThetaFactor * model.design.max_distance;
  const int m = model.m();
  if (state.series_path) {
    state.sigma_w.setZero(m, m);
    state.dsigma_w.setZero(m, m);
    for (size_t k = 0; k < model.series_terms.size(); ++k) {
      double val = 0.0, der = 0.0;
      term_weight(model.series_terms[k], theta, &val, &der);
      state.sigma_w.noalias() += val * model.series_mats[k];
      state.dsigma_w.noalias() += der * model.series_mats[k];
    }
  } else {
    // Split Sigma = ones ones^T + E with E zero on the diagonal and
    // K - 1 off it, so the complement form keeps relative accuracy in
    // entries far below 1.
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double v = eval_kernel_m1(model.kernel, dist(i, j), theta);
        e(i, j) = v;
        e(j, i) = v;
      }
    }
    const Eigen::VectorXd t =
        model.wr.transpose() * Eigen::VectorXd::Ones(n);
    state.sigma_w.noalias() = model.wr.transpose() * e * model.wr;
    state.sigma_w.noalias() += t * t.transpose();
    state.dsigma_w.noalias() =
        model.wr.transpose() * state.dsigma * model.wr;
  }
  state.sigma_w = 0.5 * (state.sigma_w + state.sigma_w.transpose()).eval();
  state.dsigma_w = 0.5 * (state.dsigma_w + state.dsigma_w.transpose()).eval();
  state.chol_lower = cholesky_lower(state.sigma_w, theta);
  return state;
}

Eigen::MatrixXd gls_projector(const GpModel& model,
                              const CorrelationState& state) {
  const int n = model.n();
  if (model.p() == 0) return Eigen::MatrixXd::Identity(n, n);
  Eigen::LLT<Eigen::MatrixXd> llt(state.sigma);
  if (llt.info() != Eigen::Success)
    throw not_positive_definite(
        "full correlation matrix is not positive definite at theta " +
            std::to_string(state.theta),
        state.theta, std::numeric_limits<double>::quiet_NaN());
  const Eigen::MatrixXd x = llt.solve(model.h);        // Sigma^-1 H
  const Eigen::MatrixXd g = model.h.transpose() * x;   // H^T Sigma^-1 H
  return Eigen::MatrixXd::Identity(n, n) -
         model.h * g.llt().solve(x.transpose());
}

IdentityResiduals verify_identities(const GpModel& model,
                                    const CorrelationState& state) {
  const int n = model.n();
  Eigen::LLT<Eigen::MatrixXd> llt(state.sigma);
  if (llt.info() != Eigen::Success)
    throw not_positive_definite(
        "full correlation matrix is not positive definite at theta " +
            std::to_string(state.theta),
        state.theta, std::numeric_limits<double>::quiet_NaN());
  const Eigen::MatrixXd sigma_inv =
      llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd lhs = sigma_inv * gls_projector(model, state);

  // WR (WR^T Sigma WR)^-1 WR^T through the stored Cholesky factor.
  const auto& l = state.chol_lower;
  Eigen::MatrixXd inner = model.wr.transpose();
  l.triangularView<Eigen::Lower>().solveInPlace(inner);
  l.transpose().triangularView<Eigen::Upper>().solveInPlace(inner);
  const Eigen::MatrixXd rhs = model.wr * inner;

  IdentityResiduals out;
  out.a1 = (lhs - rhs).cwiseAbs().maxCoeff();
  out.a1_scale = lhs.cwiseAbs().maxCoeff();

  double logdet_sigma = 0.0;
  for (int i = 0; i < n; ++i) logdet_sigma += 2.0 * std::log(llt.matrixL()(i, i));
  double lhs_logdet = logdet_sigma;
  if (model.p() > 0) {
    const Eigen::MatrixXd x = llt.solve(model.h);
    const Eigen::MatrixXd g = model.h.transpose() * x;
    const Eigen::MatrixXd hth = model.h.transpose() * model.h;
    const Eigen::LLT<Eigen::MatrixXd> lg(g), lh(hth);
    for (int i = 0; i < model.p(); ++i) {
      lhs_logdet += 2.0 * std::log(lg.matrixL()(i, i));
      lhs_logdet -= 2.0 * std::log(lh.matrixL()(i, i));
    }
  }
  out.logdet = std::abs(lhs_logdet - state.logdet_sigma_w());
  return out;
}

}  // namespace refprior
