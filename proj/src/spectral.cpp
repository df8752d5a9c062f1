#include "refprior/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "refprior/bessel.hpp"
#include "refprior/errors.hpp"

namespace refprior {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Matern frequency-scale constant: the kernel argument is alpha * d / theta.
double matern_alpha(const KernelSpec& spec) {
  return spec.parametrization == MaternVariant::hw94 ? 2.0 * std::sqrt(spec.nu)
                                                     : 1.0;
}

void validate_spectral_family(const KernelSpec& kernel) {
  validate_kernel(kernel);
  switch (kernel.family) {
    case KernelFamily::matern:
    case KernelFamily::rational_quadratic:
    case KernelFamily::squared_exponential:
      return;
    default:
      throw parameter_error(
          "spectral machinery supports matern, rational_quadratic and "
          "squared_exponential only; got " +
          to_string(kernel.family));
  }
}

// Closed-form spectral mass M_r. Assembled in log space because the matern
// factor alpha^(2 nu) can reach 1e100 at large nu.
double spectral_mass(const KernelSpec& spec, int r) {
  const double rh = 0.5 * r;
  switch (spec.family) {
    case KernelFamily::squared_exponential:
      return std::pow(2.0 * std::sqrt(kPi), -r);
    case KernelFamily::rational_quadratic:
      return std::exp((1.0 - spec.nu) * std::log(2.0) -
                      rh * std::log(2.0 * kPi) - std::lgamma(spec.nu));
    case KernelFamily::matern: {
      const double alpha = matern_alpha(spec);
      return std::exp(std::lgamma(spec.nu + rh) +
                      2.0 * spec.nu * std::log(alpha) - rh * std::log(kPi) -
                      std::lgamma(spec.nu));
    }
    default:
      throw parameter_error("unsupported family in spectral_mass");
  }
}

// Radial spectral weight in the scaled frequency s (dimension 1). The theta
// dependence sits entirely here; the oscillatory factor is theta-free.
double frequency_weight(const KernelSpec& spec, double theta, double s) {
  switch (spec.family) {
    case KernelFamily::squared_exponential:
      return std::exp(-0.25 * theta * theta * s * s);
    case KernelFamily::rational_quadratic: {
      const double a = spec.nu - 0.5;
      const double z = theta * s;
      if (z <= 0.0) {
        // Limit value of z^a K_a(z); only reachable if a caller evaluates the
        // endpoint, which the Gauss nodes never do.
        if (a == 0.0) return std::numeric_limits<double>::infinity();
        const double aa = std::abs(a);
        return std::exp((aa - 1.0) * std::log(2.0) + std::lgamma(aa));
      }
      return std::pow(z, a) * bessel_knu(a, z);
    }
    case KernelFamily::matern: {
      const double alpha = matern_alpha(spec);
      const double z2 = alpha * alpha + theta * theta * s * s;
      return std::pow(z2, -0.5 - spec.nu);
    }
    default:
      throw parameter_error("unsupported family in frequency_weight");
  }
}

// |sum_j xi_j exp(i s x_j)|^2 expanded into sum_t c_t cos(delta_t s); the
// first term is the zero-frequency diagonal |xi|^2.
struct CosineSum {
  std::vector<double> coef;
  std::vector<double> freq;
  double max_freq = 0.0;

  double operator()(double s) const {
    double acc = coef[0];
    for (size_t t = 1; t < coef.size(); ++t)
      acc += coef[t] * std::cos(freq[t] * s);
    return acc;
  }
};

CosineSum make_cosine_sum(const DesignSet& design, const Eigen::VectorXd& xi) {
  CosineSum sum;
  const int n = static_cast<int>(xi.size());
  sum.coef.reserve(1 + n * (n - 1) / 2);
  sum.freq.reserve(1 + n * (n - 1) / 2);
  sum.coef.push_back(xi.squaredNorm());
  sum.freq.push_back(0.0);
  for (int j = 0; j < n; ++j)
    for (int k = j + 1; k < n; ++k) {
      sum.coef.push_back(2.0 * xi[j] * xi[k]);
      sum.freq.push_back(design.distances(j, k));
    }
  sum.max_freq = design.max_distance;
  return sum;
}

// Gauss-Kronrod 7-15 pair on [-1, 1].
constexpr double kKronrodX[15] = {
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898,  0.405845151377397,  0.586087235467691,
    0.741531185599394,  0.864864423359769,  0.949107912342759,
    0.991455371120813};
constexpr double kKronrodW[15] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728, 0.204432940075298,
    0.190350578064785, 0.169004726639267, 0.140653259715525,
    0.104790010322250, 0.063092092629979, 0.022935322010529};
constexpr double kGaussW[7] = {0.129484966168870, 0.279705391489277,
                               0.381830050505119, 0.417959183673469,
                               0.381830050505119, 0.279705391489277,
                               0.129484966168870};

struct Panel {
  double a = 0.0;
  double b = 0.0;
  double value = 0.0;
  double error = 0.0;
  bool operator<(const Panel& other) const { return error < other.error; }
};

// Shared state of the global refinement loop: a worst-first panel queue plus
// running totals over every accepted panel.
struct Integrator {
  std::priority_queue<Panel> queue;
  double value = 0.0;
  double error = 0.0;
  long nodes = 0;
};

template <typename F>
Panel evaluate_panel(const F& f, double a, double b) {
  const double half = 0.5 * (b - a);
  const double mid = 0.5 * (a + b);
  double kronrod = 0.0;
  double gauss = 0.0;
  for (int i = 0; i < 15; ++i) {
    const double fv = f(mid + half * kKronrodX[i]);
    kronrod += kKronrodW[i] * fv;
    if (i % 2 == 1) gauss += kGaussW[i / 2] * fv;
  }
  Panel panel;
  panel.a = a;
  panel.b = b;
  panel.value = kronrod * half;
  panel.error = std::abs(kronrod - gauss) * half;
  return panel;
}

[[noreturn]] void throw_nonconvergence(long nodes, double reach) {
  throw quadrature_error(
      "frequency-domain quadrature did not converge within " +
      std::to_string(nodes) + " nodes (domain truncated at s = " +
      std::to_string(reach) + ")");
}

// Seeds [a, b] with panels fine enough that the fastest cosine cannot alias
// through the Kronrod rule unnoticed, then leaves the rest to refinement.
template <typename F>
void push_segment(Integrator& integ, const F& f, double a, double b,
                  double max_freq, long max_nodes) {
  const double width_cap = max_freq > 0.0 ? kPi / max_freq : (b - a);
  const long count =
      std::max<long>(4, static_cast<long>(std::ceil((b - a) / width_cap)));
  if (integ.nodes + 15 * count > max_nodes)
    throw_nonconvergence(integ.nodes, b);
  for (long i = 0; i < count; ++i) {
    const double lo = a + (b - a) * static_cast<double>(i) / count;
    const double hi = a + (b - a) * static_cast<double>(i + 1) / count;
    Panel panel = evaluate_panel(f, lo, hi);
    integ.nodes += 15;
    integ.value += panel.value;
    integ.error += panel.error;
    integ.queue.push(panel);
  }
}

template <typename F>
void refine(Integrator& integ, const F& f, double rel_tol, long max_nodes) {
  while (integ.error >
         rel_tol * std::max(std::abs(integ.value),
                            std::numeric_limits<double>::min())) {
    if (integ.nodes + 30 > max_nodes)
      throw_nonconvergence(integ.nodes, integ.queue.top().b);
    Panel worst = integ.queue.top();
    integ.queue.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    Panel left = evaluate_panel(f, worst.a, mid);
    Panel right = evaluate_panel(f, mid, worst.b);
    integ.nodes += 30;
    integ.value += left.value + right.value - worst.value;
    integ.error += left.error + right.error - worst.error;
    integ.queue.push(left);
    integ.queue.push(right);
  }
}

// int_S^inf of the matern weight, by the binomial expansion of
// (1 + alpha^2 / z^2)^(-nu - 1/2) inside (theta s)^(-1-2nu). The caller
// guarantees theta S is large enough that the term ratio stays below 1/2,
// so the first omitted term bounds the remainder up to a factor 2.
double matern_diagonal_tail(const KernelSpec& spec, double theta, double S,
                            double* remainder_bound) {
  const double alpha = matern_alpha(spec);
  const double z = theta * S;
  double acc = 0.0;
  double coef = 1.0;
  double term = 0.0;
  for (int k = 0; k < 80; ++k) {
    term = coef * std::pow(z, -2.0 * spec.nu - 2.0 * k) /
           (2.0 * spec.nu + 2.0 * k);
    acc += term;
    if (std::abs(term) < 1e-18 * std::abs(acc)) break;
    coef *= -(spec.nu + 0.5 + k) * alpha * alpha / (k + 1.0);
  }
  *remainder_bound = 2.0 * std::abs(term) / theta;
  return acc / theta;
}

// Frequency beyond which the matern tail expansion is safely geometric.
double matern_tail_start(const KernelSpec& spec, double theta) {
  const double alpha = matern_alpha(spec);
  return alpha * std::sqrt(std::max(4.0, 2.0 * spec.nu + 2.0)) / theta;
}

// Upper bound on the omitted piece 2 int_S^inf w(s) osc(s) ds together with
// the analytic correction added back for the matern diagonal. Returns false
// when no trustworthy bound is available yet and the domain must grow.
bool tail_state(const KernelSpec& spec, double theta, double S,
                const CosineSum& osc, double* bound, double* correction) {
  *bound = std::numeric_limits<double>::infinity();
  *correction = 0.0;
  double total_mass = 0.0;
  for (double c : osc.coef) total_mass += std::abs(c);
  switch (spec.family) {
    case KernelFamily::squared_exponential: {
      const double zs = 0.25 * theta * theta * S * S;
      *bound = 2.0 * total_mass * 2.0 / (theta * theta * S) * std::exp(-zs);
      return true;
    }
    case KernelFamily::rational_quadratic: {
      // Valid once z^a K_a(z) exp(z/2) is decreasing, i.e. once
      // K_{a-1}(z) >= K_a(z) / 2; then w(s) <= w(S) exp(-theta (s - S) / 2).
      const double a = spec.nu - 0.5;
      const double z = theta * S;
      if (!(bessel_knu(a - 1.0, z) >= 0.5 * bessel_knu(a, z))) return false;
      const double wS = frequency_weight(spec, theta, S);
      *bound = 2.0 * total_mass * wS * 2.0 / theta;
      return true;
    }
    case KernelFamily::matern: {
      if (theta * S < matern_alpha(spec) *
                          std::sqrt(std::max(4.0, 2.0 * spec.nu + 2.0)))
        return false;
      double remainder = 0.0;
      const double diag_tail =
          matern_diagonal_tail(spec, theta, S, &remainder);
      *correction = 2.0 * osc.coef[0] * diag_tail;
      double cross = 0.0;
      for (size_t t = 1; t < osc.coef.size(); ++t)
        cross += std::abs(osc.coef[t]) / osc.freq[t];
      const double wS = frequency_weight(spec, theta, S);
      *bound = 2.0 * (2.0 * wS * cross + osc.coef[0] * remainder);
      return true;
    }
    default:
      throw parameter_error("unsupported family in tail_state");
  }
}

// Deterministic dimension-1 evaluation of I_theta(xi) over the full real
// line (twice the half-line integral), with the truncation tail bounded
// analytically and kept below tail_tol of the estimate.
double integrate_line(const KernelSpec& spec, double theta,
                      const CosineSum& osc, const SpectralOptions& options,
                      long* nodes_out) {
  const auto f = [&](double s) {
    return frequency_weight(spec, theta, s) * osc(s);
  };
  double reach = 10.0 / theta;
  if (spec.family == KernelFamily::matern)
    reach = std::max(reach, matern_tail_start(spec, theta) * 1.05);

  Integrator integ;
  push_segment(integ, f, 0.0, reach, osc.max_freq, options.max_nodes);
  for (;;) {
    refine(integ, f, options.rel_tol, options.max_nodes);
    double bound = 0.0;
    double correction = 0.0;
    const bool usable =
        tail_state(spec, theta, reach, osc, &bound, &correction);
    const double estimate = 2.0 * integ.value + correction;
    if (usable &&
        bound <= options.tail_tol *
                     std::max(std::abs(estimate),
                              std::numeric_limits<double>::min())) {
      *nodes_out = integ.nodes;
      return estimate;
    }
    push_segment(integ, f, reach, 2.0 * reach, osc.max_freq,
                 options.max_nodes);
    reach *= 2.0;
  }
}

// Draws one scaled frequency from the normalized spectral density. Each
// family reduces to Gaussians plus one scalar mixing variable.
struct FrequencySampler {
  KernelSpec spec;
  double theta = 0.0;
  std::mt19937_64 rng;
  std::normal_distribution<double> gauss{0.0, 1.0};

  explicit FrequencySampler(const KernelSpec& s, double th, unsigned long seed)
      : spec(s), theta(th), rng(seed) {}

  void draw(Eigen::VectorXd& s) {
    const int r = static_cast<int>(s.size());
    switch (spec.family) {
      case KernelFamily::squared_exponential: {
        const double scale = std::sqrt(2.0) / theta;
        for (int j = 0; j < r; ++j) s[j] = scale * gauss(rng);
        return;
      }
      case KernelFamily::rational_quadratic: {
        // Gamma(nu) scale mixture of Gaussians.
        std::gamma_distribution<double> mix(spec.nu, 1.0);
        const double t = mix(rng);
        const double scale = std::sqrt(2.0 * t) / theta;
        for (int j = 0; j < r; ++j) s[j] = scale * gauss(rng);
        return;
      }
      case KernelFamily::matern: {
        // Multivariate Student-t with 2 nu degrees of freedom.
        std::gamma_distribution<double> chisq(spec.nu, 2.0);
        const double chi = chisq(rng);
        const double scale = matern_alpha(spec) / (theta * std::sqrt(chi));
        for (int j = 0; j < r; ++j) s[j] = scale * gauss(rng);
        return;
      }
      default:
        throw parameter_error("unsupported family in FrequencySampler");
    }
  }
};

// Importance-sampled estimate in dimension >= 2. Because the sampling
// density is the normalized weight itself, the sample mean of the
// oscillatory factor estimates xi^T Sigma_theta xi directly.
void monte_carlo_form(const KernelSpec& spec, const DesignSet& design,
                      const Eigen::VectorXd& xi, double theta,
                      const SpectralOptions& options, SpectralReport* report) {
  if (options.mc_samples < 2)
    throw parameter_error("mc_samples must be at least 2");
  FrequencySampler sampler(spec, theta, options.seed);
  const int n = design.n();
  Eigen::VectorXd s(design.dim());
  double sum = 0.0;
  double sum_sq = 0.0;
  for (long it = 0; it < options.mc_samples; ++it) {
    sampler.draw(s);
    double re = 0.0;
    double im = 0.0;
    for (int j = 0; j < n; ++j) {
      const double phase = design.points.row(j).dot(s);
      re += xi[j] * std::cos(phase);
      im += xi[j] * std::sin(phase);
    }
    const double value = re * re + im * im;
    sum += value;
    sum_sq += value * value;
  }
  const double mean = sum / static_cast<double>(options.mc_samples);
  const double var =
      std::max(0.0, sum_sq / static_cast<double>(options.mc_samples) -
                        mean * mean);
  report->quadratic_form_spectral = mean;
  report->std_error = std::sqrt(var / static_cast<double>(options.mc_samples));
  report->nodes = options.mc_samples;
  report->monte_carlo = true;
}

Eigen::MatrixXd correlation_full(const KernelSpec& spec,
                                 const DesignSet& design, double theta) {
  const int n = design.n();
  Eigen::MatrixXd sigma(n, n);
  for (int i = 0; i < n; ++i) {
    sigma(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double k = eval_kernel(spec, design.distances(i, j), theta);
      sigma(i, j) = k;
      sigma(j, i) = k;
    }
  }
  return sigma;
}

Eigen::MatrixXd correlation_dtheta(const KernelSpec& spec,
                                   const DesignSet& design, double theta) {
  const int n = design.n();
  Eigen::MatrixXd dsigma = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double dk = eval_kernel_dtheta(spec, design.distances(i, j), theta);
      dsigma(i, j) = dk;
      dsigma(j, i) = dk;
    }
  return dsigma;
}

void validate_theta(double theta) {
  if (!(theta > 0.0) || !std::isfinite(theta))
    throw parameter_error("theta must be positive and finite");
}

}  // namespace

SpectralReport spectral_quadratic_form(const KernelSpec& kernel,
                                       const DesignSet& design,
                                       const Eigen::VectorXd& xi, double theta,
                                       const SpectralOptions& options) {
  validate_spectral_family(kernel);
  validate_theta(theta);
  if (xi.size() != design.n())
    throw parameter_error("probe vector length " + std::to_string(xi.size()) +
                          " does not match the design size " +
                          std::to_string(design.n()));
  if (!xi.allFinite() || xi.isZero(0.0))
    throw parameter_error("probe vector must be finite and nonzero");

  SpectralReport report;
  report.theta = theta;
  report.xi = xi;
  const Eigen::MatrixXd sigma = correlation_full(kernel, design, theta);
  report.quadratic_form_direct = xi.dot(sigma * xi);

  if (design.dim() == 1) {
    CosineSum osc = make_cosine_sum(design, xi);
    const double line =
        integrate_line(kernel, theta, osc, options, &report.nodes);
    report.quadratic_form_spectral =
        spectral_mass(kernel, 1) * theta * line;
  } else {
    monte_carlo_form(kernel, design, xi, theta, options, &report);
  }

  report.rel_error =
      std::abs(report.quadratic_form_spectral - report.quadratic_form_direct) /
      std::max(std::abs(report.quadratic_form_direct),
               std::numeric_limits<double>::min());
  return report;
}

FMatrixReport f_matrix_check(const GpModel& model, const KernelSpec& kernel,
                             double theta, double asymptotic_factor) {
  validate_spectral_family(kernel);
  validate_theta(theta);
  if (!(asymptotic_factor > 0.0) || !std::isfinite(asymptotic_factor))
    throw parameter_error("asymptotic_factor must be positive and finite");

  const DesignSet& design = model.design;
  const int r = design.dim();
  const Eigen::MatrixXd sigma = correlation_full(kernel, design, theta);
  const Eigen::MatrixXd f_matrix =
      (r / theta) * sigma - correlation_dtheta(kernel, design, theta);

  FMatrixReport report;
  report.theta = theta;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> f_eigen(f_matrix);
  report.f_min_eigenvalue = f_eigen.eigenvalues().minCoeff();
  report.f_scale = std::max(std::abs(f_eigen.eigenvalues().minCoeff()),
                            std::abs(f_eigen.eigenvalues().maxCoeff()));
  report.positive_semidefinite =
      report.f_min_eigenvalue >= -1e-10 * report.f_scale;

  // Fails loudly (not spuriously on the projected form) when Sigma_theta is
  // numerically indefinite: the pencil has no meaning at such a theta.
  cholesky_lower(sigma, theta);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> pencil(
      f_matrix, sigma, Eigen::EigenvaluesOnly | Eigen::Ax_lBx);
  report.t2 = pencil.eigenvalues().maxCoeff();

  switch (kernel.family) {
    case KernelFamily::matern:
      report.family_bound = (2.0 * kernel.nu + r) / theta;
      report.bound_in_force = true;
      break;
    case KernelFamily::rational_quadratic:
      report.family_bound = r + 2.0;
      report.bound_in_force = theta >= asymptotic_factor * design.max_distance;
      break;
    case KernelFamily::squared_exponential:
      report.family_bound = theta;
      report.bound_in_force = theta >= asymptotic_factor * design.max_distance;
      break;
    default:
      throw parameter_error("unsupported family in f_matrix_check");
  }
  report.bound_satisfied = report.t2 <= report.family_bound + 1e-8;
  report.passes = report.positive_semidefinite &&
                  (report.bound_satisfied || !report.bound_in_force);
  return report;
}

}  // namespace refprior
