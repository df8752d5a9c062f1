#include "refprior/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <thread>
#include <utility>
#include <vector>

#include "refprior/errors.hpp"

namespace refprior {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logdet_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  double s = 0.0;
  const auto& l = llt.matrixLLT();
  for (int i = 0; i < l.rows(); ++i) s += 2.0 * std::log(l(i, i));
  return s;
}

// Common likelihood ingredients at one theta: generalized least squares
// through the full matrix plus the complement-form residual quadratic.
struct GlsParts {
  Eigen::VectorXd beta_hat;      // p
  Eigen::MatrixXd g;             // H' Sigma^-1 H
  Eigen::LLT<Eigen::MatrixXd> g_llt;
  Eigen::LLT<Eigen::MatrixXd> sigma_llt;
  double quad = 0.0;             // y' W (W'SW)^-1 W'y
};

GlsParts gls_parts(const GpModel& model, const CorrelationState& state,
                   const Eigen::VectorXd& y) {
  GlsParts parts;
  parts.sigma_llt.compute(state.sigma);
  if (parts.sigma_llt.info() != Eigen::Success)
    throw not_positive_definite(
        "full correlation matrix is not positive definite at theta " +
            std::to_string(state.theta),
        state.theta, std::numeric_limits<double>::quiet_NaN());
  const Eigen::VectorXd v = model.wr.transpose() * y;
  Eigen::VectorXd z = v;
  state.chol_lower.triangularView<Eigen::Lower>().solveInPlace(z);
  parts.quad = z.squaredNorm();
  if (model.p() > 0) {
    const Eigen::MatrixXd x = parts.sigma_llt.solve(model.h);
    parts.g = model.h.transpose() * x;
    parts.g_llt.compute(parts.g);
    if (parts.g_llt.info() != Eigen::Success)
      throw not_positive_definite(
          "H' Sigma^-1 H lost positive definiteness at theta " +
              std::to_string(state.theta),
          state.theta, std::numeric_limits<double>::quiet_NaN());
    parts.beta_hat = parts.g_llt.solve(x.transpose() * y);
  } else {
    parts.beta_hat.resize(0);
  }
  return parts;
}

}  // namespace

double prior_bracket_wform(const Eigen::MatrixXd& chol_lower,
                           const Eigen::MatrixXd& dsigma_w) {
  const int m = static_cast<int>(dsigma_w.rows());
  // M = L^-1 A L^-T is symmetric; the bracket is the squared Frobenius norm
  // of its trace-free part, a sum of squares that cannot go negative.
  Eigen::MatrixXd t = dsigma_w;
  chol_lower.triangularView<Eigen::Lower>().solveInPlace(t);
  Eigen::MatrixXd msym = t.transpose();
  chol_lower.triangularView<Eigen::Lower>().solveInPlace(msym);
  msym = 0.5 * (msym + msym.transpose()).eval();
  const double center = msym.trace() / m;
  msym.diagonal().array() -= center;
  return msym.squaredNorm();
}

double prior_bracket_qform(const Eigen::MatrixXd& sigma,
                           const Eigen::MatrixXd& dsigma,
                           const Eigen::MatrixXd& h) {
  const int n = static_cast<int>(sigma.rows());
  const int p = static_cast<int>(h.cols());
  const int m = n - p;
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw not_positive_definite(
        "full correlation matrix is not positive definite", 0.0,
        std::numeric_limits<double>::quiet_NaN());
  Eigen::MatrixXd sq;  // Sigma^-1 Q
  if (p == 0) {
    sq = llt.solve(Eigen::MatrixXd::Identity(n, n));
  } else {
    const Eigen::MatrixXd x = llt.solve(h);  // Sigma^-1 H
    const Eigen::MatrixXd g = h.transpose() * x;
    const Eigen::MatrixXd q =
        Eigen::MatrixXd::Identity(n, n) - h * g.llt().solve(x.transpose());
    sq = llt.solve(q);
  }
  const Eigen::MatrixXd b = dsigma * sq;
  const double t2 = b.trace();
  const double t1 = b.cwiseProduct(b.transpose()).sum();
  const double bracket = t1 - t2 * t2 / m;
  const double scale = std::abs(t1) + t2 * t2 / m;
  if (bracket < -1e-10 * scale)
    throw consistency_error(
        "projector-form prior bracket is negative beyond rounding: " +
        std::to_string(bracket));
  return std::max(bracket, 0.0);
}

double log_reference_prior(const GpModel& model,
                           const CorrelationState& state) {
  if (model.m() < 2)
    throw identifiability_error(
        "the objective prior needs at least two complement dimensions "
        "(n - p >= 2)");
  const double bracket = prior_bracket_wform(state.chol_lower, state.dsigma_w);
  if (bracket <= 0.0) return kNegInf;
  return 0.5 * std::log(bracket);
}

double log_reference_prior_qform(const GpModel& model,
                                 const CorrelationState& state) {
  if (model.m() < 2)
    throw identifiability_error(
        "the objective prior needs at least two complement dimensions "
        "(n - p >= 2)");
  const double bracket =
      prior_bracket_qform(state.sigma, state.dsigma, model.h);
  if (bracket <= 0.0) return kNegInf;
  return 0.5 * std::log(bracket);
}

double log_integrated_likelihood(const GpModel& model,
                                 const CorrelationState& state,
                                 const Eigen::VectorXd& y) {
  if (y.size() != model.n())
    throw design_error("observation vector length does not match the design");
  const int m = model.m();
  if (m < 1)
    throw identifiability_error("no complement dimensions left (p >= n)");
  const Eigen::VectorXd v = model.wr.transpose() * y;
  // The complement component only survives rounding noise when the data sit
  // in the span of the regression basis; treat that as degenerate.
  const double eps = std::numeric_limits<double>::epsilon();
  if (v.norm() <= 64.0 * eps * y.norm() || y.norm() == 0.0)
    throw degenerate_observations(
        "observations lie in the span of the regression basis, leaving "
        "nothing to infer the correlation length from");
  Eigen::VectorXd z = v;
  state.chol_lower.triangularView<Eigen::Lower>().solveInPlace(z);
  const double quad = z.squaredNorm();
  double logdet_hth = 0.0;
  if (model.p() > 0) {
    Eigen::LLT<Eigen::MatrixXd> llt(
        Eigen::MatrixXd(model.h.transpose() * model.h));
    logdet_hth = logdet_from_llt(llt);
  }
  return std::lgamma(0.5 * m) - std::numbers::ln2 -
         0.5 * m * std::log(M_PI) + 0.5 * logdet_hth -
         0.5 * state.logdet_sigma_w() - 0.5 * m * std::log(quad);
}

namespace {

// Memoizing evaluator of the unnormalized log posterior on the u = log(theta)
// axis, recording the lowest theta at which the factorization failed.
class PostEval {
 public:
  PostEval(const GpModel& model, const Eigen::VectorXd& y)
      : model_(model), y_(y) {}

  double log_post(double u) {
    auto it = cache_.find(u);
    if (it != cache_.end()) return it->second;
    double v;
    try {
      const auto state = make_correlation(model_, std::exp(u));
      v = log_reference_prior(model_, state) +
          log_integrated_likelihood(model_, state, y_);
    } catch (const not_positive_definite&) {
      pd_failed_ = true;
      pd_theta_ = std::min(pd_theta_, std::exp(u));
      v = kNegInf;
    }
    ++evals_;
    cache_.emplace(u, v);
    return v;
  }

  long evals() const { return evals_; }
  bool pd_failed() const { return pd_failed_; }
  double pd_theta() const { return pd_theta_; }

 private:
  const GpModel& model_;
  const Eigen::VectorXd& y_;
  std::map<double, double> cache_;
  long evals_ = 0;
  bool pd_failed_ = false;
  double pd_theta_ = std::numeric_limits<double>::infinity();
};

// Integrand on the u axis after peak shift: exp(log_post(u) + u - shift).
double shifted_integrand(PostEval& ev, double u, double shift) {
  const double lp = ev.log_post(u);
  if (lp == kNegInf) return 0.0;
  return std::exp(lp + u - shift);
}

double simpson(double fa, double fm, double fb, double h) {
  return h / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_segment(PostEval& ev, double a, double b, double fa,
                        double fm, double fb, double whole, double eps,
                        double shift, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = shifted_integrand(ev, lm, shift);
  const double frm = shifted_integrand(ev, rm, shift);
  const double left = simpson(fa, flm, fm, m - a);
  const double right = simpson(fm, frm, fb, b - m);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * eps)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_segment(ev, a, m, fa, flm, fm, left, 0.5 * eps, shift,
                          depth - 1) +
         adaptive_segment(ev, m, b, fm, frm, fb, right, 0.5 * eps, shift,
                          depth - 1);
}

// One-sided mass estimate beyond endpoint u0, from the local decay rate of
// the shifted integrand. step is signed toward the interior; cap_span bounds
// the extrapolation range when the curve is too flat for an exponential
// bound.
double tail_mass(PostEval& ev, double u0, double step, double shift,
                 double cap_span) {
  const double f0 = shifted_integrand(ev, u0, shift);
  if (f0 == 0.0) return 0.0;
  const double f1 = shifted_integrand(ev, u0 + step, shift);  // inward
  if (f1 <= 0.0) return f0 * cap_span;
  const double slope = std::log(f1 / f0) / std::abs(step);
  if (slope > 0.1) return f0 / slope;  // > 0 when decaying outward
  return f0 * cap_span;
}

}  // namespace

PosteriorCurve build_posterior_curve(const GpModel& model,
                                     const Eigen::VectorXd& y,
                                     const PosteriorOptions& options) {
  if (model.m() < 2)
    throw identifiability_error(
        "the objective posterior needs n - p >= 2");
  if (!(options.rel_tol > 0.0) || !(options.tail_tol > 0.0) ||
      options.grid_points < 16)
    throw parameter_error("invalid posterior options");

  const double dbar = model.design.median_distance;
  const bool automatic = !(options.theta_min > 0.0 && options.theta_max > 0.0);
  double lo = automatic ? 1e-4 * dbar : options.theta_min;
  double hi = automatic ? 1e4 * dbar : options.theta_max;
  if (!(lo > 0.0) || !(hi > lo))
    throw parameter_error("posterior bracket must satisfy 0 < min < max");
  const double hard_lo = std::log(1e-8 * dbar);
  const double hard_hi = std::log(1e8 * dbar);

  PostEval ev(model, y);
  double ua = std::log(lo);
  double ub = std::log(hi);

  // Coarse scan; grows outward until the ends carry no appreciable mass.
  const int kCoarse = 129;
  auto scan_max = [&](double a, double b) {
    double best = kNegInf;
    for (int i = 0; i < kCoarse; ++i) {
      const double u = a + (b - a) * i / (kCoarse - 1);
      best = std::max(best, ev.log_post(u) + u);
    }
    return best;
  };
  double shift = scan_max(ua, ub);
  if (shift == kNegInf)
    throw quadrature_error(
        "posterior mass vanished on the whole bracket; the data carry no "
        "signal on this scale");

  if (automatic) {
    for (int round = 0; round < 6; ++round) {
      bool grew = false;
      if (shifted_integrand(ev, ua, shift) > options.tail_tol &&
          ua > hard_lo) {
        ua = std::max(hard_lo, ua - std::numbers::ln10 * 2);
        grew = true;
      }
      if (shifted_integrand(ev, ub, shift) > options.tail_tol &&
          ub < hard_hi) {
        ub = std::min(hard_hi, ub + std::numbers::ln10 * 2);
        grew = true;
      }
      if (!grew) break;
      shift = std::max(shift, scan_max(ua, ub));
    }
  }

  // Piecewise adaptive Simpson over the coarse cells.
  const double step = (ub - ua) / (kCoarse - 1);
  double coarse_total = 0.0;
  std::vector<double> fvals(kCoarse);
  for (int i = 0; i < kCoarse; ++i)
    fvals[static_cast<size_t>(i)] =
        shifted_integrand(ev, ua + i * step, shift);
  for (int i = 0; i + 1 < kCoarse; ++i)
    coarse_total +=
        0.5 * step *
        (fvals[static_cast<size_t>(i)] + fvals[static_cast<size_t>(i) + 1]);
  if (coarse_total <= 0.0)
    throw quadrature_error("posterior mass vanished on the whole bracket");

  double total = 0.0;
  const double eps_cell =
      options.rel_tol * coarse_total / (kCoarse - 1);
  for (int i = 0; i + 1 < kCoarse; ++i) {
    const double a = ua + i * step;
    const double b = a + step;
    const double fa = fvals[static_cast<size_t>(i)];
    const double fb = fvals[static_cast<size_t>(i) + 1];
    const double fm = shifted_integrand(ev, 0.5 * (a + b), shift);
    const double whole = simpson(fa, fm, fb, step);
    total += adaptive_segment(ev, a, b, fa, fm, fb, whole, eps_cell, shift,
                              24);
  }
  if (!(total > 0.0) || !std::isfinite(total))
    throw quadrature_error("posterior normalizer is not finite");

  PosteriorCurve curve;
  curve.theta_min = std::exp(ua);
  curve.theta_max = std::exp(ub);
  curve.log_normalizer = std::log(total) + shift;
  curve.left_tail_bound = tail_mass(ev, ua, step, shift, ua - hard_lo) / total;
  curve.right_tail_bound =
      tail_mass(ev, ub, -step, shift, hard_hi - ub) / total;
  curve.truncated_by_pd_failure = ev.pd_failed();
  curve.pd_failure_theta = ev.pd_failed() ? ev.pd_theta() : 0.0;

  if (automatic &&
      curve.left_tail_bound + curve.right_tail_bound > 10.0 * options.tail_tol)
    throw quadrature_error(
        "posterior tails could not be closed within tolerance; mass bound " +
        std::to_string(curve.left_tail_bound + curve.right_tail_bound));

  // Exported curve on its own uniform log grid, evaluated in parallel.
  const int g = options.grid_points;
  curve.theta.resize(static_cast<size_t>(g));
  curve.log_prior.assign(static_cast<size_t>(g), kNegInf);
  curve.log_lik.assign(static_cast<size_t>(g), kNegInf);
  curve.log_post.assign(static_cast<size_t>(g), kNegInf);
  auto eval_range = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const double u = ua + (ub - ua) * i / (g - 1);
      const double theta = std::exp(u);
      curve.theta[static_cast<size_t>(i)] = theta;
      try {
        const auto state = make_correlation(model, theta);
        const double lp = log_reference_prior(model, state);
        const double ll = log_integrated_likelihood(model, state, y);
        curve.log_prior[static_cast<size_t>(i)] = lp;
        curve.log_lik[static_cast<size_t>(i)] = ll;
        curve.log_post[static_cast<size_t>(i)] = lp + ll;
      } catch (const not_positive_definite&) {
        // Entries stay at -inf past the factorization wall.
      }
    }
  };
  const int workers = std::max(1, std::min(options.threads, g));
  if (workers == 1) {
    eval_range(0, g);
  } else {
    std::vector<std::thread> pool;
    const int chunk = (g + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(g, begin + chunk);
      if (begin < end) pool.emplace_back(eval_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  curve.function_evals = ev.evals();
  return curve;
}

MapResult map_theta(const GpModel& model, const Eigen::VectorXd& y,
                    const PosteriorCurve& curve) {
  const int g = static_cast<int>(curve.theta.size());
  if (g < 3) throw parameter_error("posterior curve is too coarse");
  int best = 0;
  for (int i = 1; i < g; ++i)
    if (curve.log_post[static_cast<size_t>(i)] >
        curve.log_post[static_cast<size_t>(best)])
      best = i;

  MapResult out;
  if (best == 0 || best == g - 1) {
    out.theta = curve.theta[static_cast<size_t>(best)];
    out.log_post = curve.log_post[static_cast<size_t>(best)];
    out.at_boundary = true;
    return out;
  }

  PostEval ev(model, y);
  double a = std::log(curve.theta[static_cast<size_t>(best - 1)]);
  double b = std::log(curve.theta[static_cast<size_t>(best + 1)]);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = ev.log_post(x1);
  double f2 = ev.log_post(x2);
  while (b - a > 1e-8) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = ev.log_post(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = ev.log_post(x1);
    }
  }
  const double u = 0.5 * (a + b);
  out.theta = std::exp(u);
  out.log_post = ev.log_post(u);
  out.at_boundary = false;
  return out;
}

namespace {

// Regularized incomplete beta by Lentz's continued fraction.
double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return h;
}

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double lbeta =
      std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  const double front =
      std::exp(a * std::log(x) + b * std::log1p(-x) - lbeta);
  // front is symmetric under (a, b, x) -> (b, a, 1 - x).
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_cdf(double t, double dof) {
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * inc_beta(0.5 * dof, 0.5, x);
  return (t >= 0.0) ? 1.0 - tail : tail;
}

// Per-theta predictive pieces at the new points: location, scale, dof.
struct ThetaPredict {
  double weight = 0.0;
  Eigen::VectorXd mu;
  Eigen::VectorXd sd;
};

}  // namespace

PredictionResult predict(const GpModel& model, const Eigen::VectorXd& y,
                         const PosteriorCurve& curve,
                         const Eigen::MatrixXd& new_points,
                         const std::vector<double>& levels) {
  if (new_points.cols() != model.design.dim())
    throw design_error("prediction points live in the wrong dimension");
  for (double lev : levels)
    if (!(lev > 0.0) || !(lev < 1.0))
      throw parameter_error("interval levels must lie in (0, 1)");
  const int g = static_cast<int>(curve.theta.size());
  const int q = static_cast<int>(new_points.rows());
  const int m = model.m();

  // Posterior weights by the trapezoid rule on the exported grid.
  std::vector<double> w(static_cast<size_t>(g), 0.0);
  {
    const double du = std::log(curve.theta_max / curve.theta_min) / (g - 1);
    double mx = kNegInf;
    for (int i = 0; i < g; ++i)
      mx = std::max(mx, curve.log_post[static_cast<size_t>(i)] +
                            std::log(curve.theta[static_cast<size_t>(i)]));
    double tot = 0.0;
    for (int i = 0; i < g; ++i) {
      const double lp = curve.log_post[static_cast<size_t>(i)];
      if (lp == kNegInf) continue;
      double v = std::exp(lp + std::log(curve.theta[static_cast<size_t>(i)]) -
                          mx) *
                 du;
      if (i == 0 || i == g - 1) v *= 0.5;
      w[static_cast<size_t>(i)] = v;
      tot += v;
    }
    if (!(tot > 0.0))
      throw quadrature_error("posterior weights vanished on the curve grid");
    for (auto& v : w) v /= tot;
  }

  // Exact hits on design rows short-circuit to interpolation.
  Eigen::VectorXd exact = Eigen::VectorXd::Zero(q);
  Eigen::VectorXi hit_row = Eigen::VectorXi::Constant(q, -1);
  for (int j = 0; j < q; ++j)
    for (int i = 0; i < model.n(); ++i)
      if ((new_points.row(j) - model.design.points.row(i)).norm() == 0.0) {
        exact(j) = 1.0;
        hit_row(j) = i;
        break;
      }

  std::vector<ThetaPredict> parts;
  parts.reserve(static_cast<size_t>(g));
  const Eigen::MatrixXd hstar = model.basis.evaluate(new_points);
  for (int i = 0; i < g; ++i) {
    if (w[static_cast<size_t>(i)] < 1e-12) continue;
    const double theta = curve.theta[static_cast<size_t>(i)];
    GlsParts parts_i;
    try {
      parts_i = gls_parts(model, make_correlation(model, theta), y);
    } catch (const not_positive_definite&) {
      // The full matrix can lose rank in the far tail even where the
      // complement form still factors; those points carry negligible mass
      // and the mixture renormalizes over the survivors.
      continue;
    }
    ThetaPredict tp;
    tp.weight = w[static_cast<size_t>(i)];
    tp.mu.resize(q);
    tp.sd.resize(q);
    const Eigen::VectorXd resid =
        (model.p() > 0) ? (y - model.h * parts_i.beta_hat).eval() : y;
    const Eigen::VectorXd alpha = parts_i.sigma_llt.solve(resid);
    for (int j = 0; j < q; ++j) {
      if (hit_row(j) >= 0) {
        tp.mu(j) = y(hit_row(j));
        tp.sd(j) = 0.0;
        continue;
      }
      Eigen::VectorXd kstar(model.n());
      for (int r = 0; r < model.n(); ++r)
        kstar(r) = eval_kernel(
            model.kernel,
            (new_points.row(j) - model.design.points.row(r)).norm(), theta);
      const Eigen::VectorXd sik = parts_i.sigma_llt.solve(kstar);
      double mu = kstar.dot(alpha);
      double c2 = 1.0 - kstar.dot(sik);
      if (model.p() > 0) {
        mu += hstar.row(j).dot(parts_i.beta_hat);
        const Eigen::VectorXd delta =
            hstar.row(j).transpose() - model.h.transpose() * sik;
        c2 += delta.dot(parts_i.g_llt.solve(delta));
      }
      tp.mu(j) = mu;
      tp.sd(j) = std::sqrt(std::max(c2, 0.0) * parts_i.quad / m);
    }
    parts.push_back(std::move(tp));
  }
  if (parts.empty())
    throw quadrature_error("no posterior grid point carries weight");

  PredictionResult out;
  out.levels = levels;
  out.exact_interpolation = exact;
  out.mean.resize(q);
  out.quantiles.resize(q, 2 * static_cast<int>(levels.size()));
  for (int j = 0; j < q; ++j) {
    double mean = 0.0, wsum = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& tp : parts) {
      mean += tp.weight * tp.mu(j);
      wsum += tp.weight;
      lo = std::min(lo, tp.mu(j) - 50.0 * tp.sd(j) - 1e-12);
      hi = std::max(hi, tp.mu(j) + 50.0 * tp.sd(j) + 1e-12);
    }
    mean /= wsum;
    out.mean(j) = mean;
    auto mix_cdf = [&](double x) {
      double c = 0.0;
      for (const auto& tp : parts) {
        if (tp.sd(j) == 0.0)
          c += tp.weight * (x >= tp.mu(j) ? 1.0 : 0.0);
        else
          c += tp.weight * student_cdf((x - tp.mu(j)) / tp.sd(j), m);
      }
      return c / wsum;
    };
    auto solve_q = [&](double target) {
      double a = lo, b = hi;
      for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (a + b);
        if (mix_cdf(mid) < target) a = mid; else b = mid;
      }
      return 0.5 * (a + b);
    };
    for (size_t lv = 0; lv < levels.size(); ++lv) {
      const double alpha = 0.5 * (1.0 - levels[lv]);
      out.quantiles(j, static_cast<int>(2 * lv)) = solve_q(alpha);
      out.quantiles(j, static_cast<int>(2 * lv + 1)) = solve_q(1.0 - alpha);
    }
  }
  return out;
}

namespace {

// Reproducible uniforms / normals / gammas from a raw 64-bit stream, kept
// free of standard-library distribution internals so the draws are identical
// across platforms for a given seed.
struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform() {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
  }
  double normal() {
    // Box-Muller, discarding the paired deviate for simplicity.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  // Marsaglia-Tsang, valid for shape >= 1.
  double gamma(double shape) {
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 &&
          std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return d * v;
    }
  }
};

}  // namespace

ConditionalDraws sample_conditional(const GpModel& model,
                                    const Eigen::VectorXd& y,
                                    const PosteriorCurve& curve, int draws,
                                    std::uint64_t seed) {
  if (draws < 1) throw parameter_error("number of draws must be positive");
  const int g = static_cast<int>(curve.theta.size());
  const int m = model.m();
  if (m < 2)
    throw identifiability_error("conditional sampling needs n - p >= 2");

  // Discrete theta weights on the exported grid (trapezoid in log theta).
  std::vector<double> cdf(static_cast<size_t>(g), 0.0);
  {
    double mx = kNegInf;
    for (int i = 0; i < g; ++i)
      mx = std::max(mx, curve.log_post[static_cast<size_t>(i)] +
                            std::log(curve.theta[static_cast<size_t>(i)]));
    double acc = 0.0;
    for (int i = 0; i < g; ++i) {
      const double lp = curve.log_post[static_cast<size_t>(i)];
      double v = (lp == kNegInf)
                     ? 0.0
                     : std::exp(lp +
                                std::log(curve.theta[static_cast<size_t>(i)]) -
                                mx);
      if (i == 0 || i == g - 1) v *= 0.5;
      acc += v;
      cdf[static_cast<size_t>(i)] = acc;
    }
    if (!(acc > 0.0))
      throw quadrature_error("posterior weights vanished on the curve grid");
    for (auto& v : cdf) v /= acc;
  }

  Rng rng(seed);
  ConditionalDraws out;
  out.theta.resize(static_cast<size_t>(draws));
  out.sigma2.resize(static_cast<size_t>(draws));
  out.beta.resize(draws, model.p());

  std::map<int, std::pair<GlsParts, Eigen::MatrixXd>> cache;
  for (int k = 0; k < draws; ++k) {
    const double u = rng.uniform();
    const int idx = static_cast<int>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const int i = std::min(idx, g - 1);
    auto it = cache.find(i);
    if (it == cache.end()) {
      const auto state =
          make_correlation(model, curve.theta[static_cast<size_t>(i)]);
      auto parts = gls_parts(model, state, y);
      Eigen::MatrixXd lg;
      if (model.p() > 0) lg = parts.g_llt.matrixL();
      it = cache.emplace(i, std::make_pair(std::move(parts), std::move(lg)))
               .first;
    }
    const auto& parts = it->second.first;
    out.theta[static_cast<size_t>(k)] = curve.theta[static_cast<size_t>(i)];
    const double chi2 = 2.0 * rng.gamma(0.5 * m);
    const double sigma2 = parts.quad / chi2;
    out.sigma2[static_cast<size_t>(k)] = sigma2;
    if (model.p() > 0) {
      Eigen::VectorXd z(model.p());
      for (int j = 0; j < model.p(); ++j) z(j) = rng.normal();
      // beta | rest ~ N(beta_hat, sigma2 G^-1); G = L L' gives
      // beta = beta_hat + sigma L^-T z.
      it->second.second.transpose()
          .triangularView<Eigen::Upper>()
          .solveInPlace(z);
      out.beta.row(k) =
          (parts.beta_hat + std::sqrt(sigma2) * z).transpose();
    }
  }
  return out;
}

}  // namespace refprior
