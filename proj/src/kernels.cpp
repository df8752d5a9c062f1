#include "refprior/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "refprior/bessel.hpp"
#include "refprior/errors.hpp"

namespace refprior {

namespace {

constexpr double kEulerGamma = 0.57721566490153286060651209008240;

// psi(n) = -gamma + H_{n-1} for positive integer n.
double digamma_int(int n) {
  double h = 0.0;
  for (int j = 1; j < n; ++j) h += 1.0 / j;
  return -kEulerGamma + h;
}

// Scale factor c in z = c * s for the Matern argument.
double matern_c(const KernelSpec& spec) {
  return spec.parametrization == MaternVariant::hw94 ? 2.0 * std::sqrt(spec.nu)
                                                     : 1.0;
}

bool matern_integer(double nu, int* n_out) {
  const int n = static_cast<int>(std::lround(nu));
  if (n >= 1 && nu == static_cast<double>(n)) {
    *n_out = n;
    return true;
  }
  return false;
}

// Small-argument Matern evaluation through the ascending series of
// z^nu K_nu(z), written in u = z^2 / 4. Returns K - 1; the caller adds the
// leading 1 back when the full value is wanted. When deriv is non-null it
// receives u * d(K)/du, a form that stays finite all the way to u = 0.
double matern_series_m1(double nu, double u, double* deriv) {
  const double kTol = 1e-19;
  double value = 0.0;
  double dvalue = 0.0;

  int nu_int = 0;
  if (matern_integer(nu, &nu_int)) {
    // Polynomial part, m = 1 .. nu-1 (the m = 0 term is the subtracted 1).
    double t = 1.0;
    for (int m = 0; m + 1 < nu_int; ++m) {
      t *= -u / ((m + 1.0) * (nu_int - m - 1.0));
      value += t;
      dvalue += (m + 1.0) * t;
    }
    // Logarithmic part: (-1)^nu sum_m u^{nu+m} / ((nu-1)! m! (m+nu)!) *
    // (psi(m+1) + psi(nu+m+1) - ln u).
    double lead = (nu_int % 2 == 0) ? 1.0 : -1.0;
    for (int j = 1; j < nu_int; ++j) lead /= j;   // 1/(nu-1)!
    for (int j = 1; j <= nu_int; ++j) lead /= j;  // 1/nu!
    double base = lead * std::pow(u, nu_int);
    double psi_a = digamma_int(1);
    double psi_b = digamma_int(nu_int + 1);
    const double lnu = std::log(u);
    for (int m = 0; m < 200; ++m) {
      const double brace = psi_a + psi_b - lnu;
      value += base * brace;
      dvalue += ((nu_int + m) * brace - 1.0) * base;
      if (std::abs(base) * (std::abs(brace) + 1.0) < kTol * (std::abs(value) + 1.0))
        break;
      psi_a += 1.0 / (m + 1.0);
      psi_b += 1.0 / (nu_int + m + 1.0);
      base *= u / ((m + 1.0) * (nu_int + m + 1.0));
    }
  } else {
    // Integral part: t_m = Gamma(nu-m) (-u)^m / (m! Gamma(nu)), from m = 1.
    double t = 1.0;
    for (int m = 0; m < 200; ++m) {
      t *= -u / ((m + 1.0) * (nu - m - 1.0));
      value += t;
      dvalue += (m + 1.0) * t;
      if (std::abs(t) < kTol * (std::abs(value) + 1.0)) break;
    }
    // Fractional part: u^nu sum_m Gamma(-nu-m) (-u)^m / (m! Gamma(nu)).
    const double gnu = std::tgamma(nu);
    double r = -M_PI / (nu * std::sin(M_PI * nu) * gnu * gnu);
    const double unu = std::pow(u, nu);
    double frac = 0.0;
    double dfrac = 0.0;
    for (int m = 0; m < 200; ++m) {
      frac += r;
      dfrac += (nu + m) * r;
      if (std::abs(r) < kTol * (std::abs(frac) + 1.0)) break;
      r *= -u / ((m + 1.0) * (-nu - m - 1.0));
    }
    value += unu * frac;
    dvalue += unu * dfrac;
  }

  if (deriv != nullptr) *deriv = dvalue;
  return value;
}

// Direct evaluation 2^{1-nu}/Gamma(nu) z^nu K_nu(z), assembled in logs so the
// z^nu growth and the e^{-z} decay never meet at an overflow.
double matern_direct(double nu, double z) {
  const double log_pref =
      (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(z) - z;
  return std::exp(log_pref) * bessel_knu_scaled(nu, z);
}

double matern_direct_dz(double nu, double z) {
  // d/dz [2^{1-nu}/Gamma(nu) z^nu K_nu(z)] = -2^{1-nu}/Gamma(nu) z^nu K_{nu-1}(z).
  const double log_pref =
      (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(z) - z;
  return -std::exp(log_pref) * bessel_knu_scaled(nu - 1.0, z);
}

void check_point(double d, double theta) {
  if (!(d >= 0.0) || !std::isfinite(d))
    throw parameter_error("distance must be finite and nonnegative");
  if (!(theta > 0.0) || !std::isfinite(theta))
    throw parameter_error("theta must be finite and positive");
}

// Ordering used by expansion_terms: dominant terms at large theta first.
bool term_before(const SeriesTerm& a, const SeriesTerm& b) {
  if (a.theta_power != b.theta_power) return a.theta_power > b.theta_power;
  if (a.log_theta != b.log_theta) return a.log_theta > b.log_theta;
  return a.log_dist < b.log_dist;
}

}  // namespace

KernelFamily family_from_string(const std::string& name) {
  if (name == "spherical") return KernelFamily::spherical;
  if (name == "power_exponential" || name == "powexp")
    return KernelFamily::power_exponential;
  if (name == "squared_exponential" || name == "gaussian" || name == "se")
    return KernelFamily::squared_exponential;
  if (name == "rational_quadratic" || name == "rq")
    return KernelFamily::rational_quadratic;
  if (name == "matern") return KernelFamily::matern;
  throw parameter_error("unknown kernel family: " + name);
}

std::string to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::spherical: return "spherical";
    case KernelFamily::power_exponential: return "power_exponential";
    case KernelFamily::squared_exponential: return "squared_exponential";
    case KernelFamily::rational_quadratic: return "rational_quadratic";
    case KernelFamily::matern: return "matern";
  }
  throw parameter_error("unknown kernel family enum value");
}

void validate_kernel(const KernelSpec& spec) {
  switch (spec.family) {
    case KernelFamily::spherical:
    case KernelFamily::squared_exponential:
      return;
    case KernelFamily::power_exponential:
      if (!(spec.q > 0.0) || !(spec.q <= 2.0) || !std::isfinite(spec.q))
        throw parameter_error("power_exponential requires q in (0, 2]");
      return;
    case KernelFamily::rational_quadratic:
      if (!(spec.nu > 0.0) || !std::isfinite(spec.nu))
        throw parameter_error("rational_quadratic requires nu > 0");
      return;
    case KernelFamily::matern:
      // The cap keeps Gamma(nu)^2 inside double range in the series path.
      if (!(spec.nu > 0.0) || !(spec.nu <= 50.0))
        throw parameter_error("matern requires nu in (0, 50]");
      return;
  }
  throw parameter_error("unknown kernel family enum value");
}

double eval_kernel(const KernelSpec& spec, double d, double theta) {
  validate_kernel(spec);
  check_point(d, theta);
  const double s = d / theta;
  switch (spec.family) {
    case KernelFamily::spherical:
      if (s >= 1.0) return 0.0;
      return 1.0 + s * (-1.5 + 0.5 * s * s);
    case KernelFamily::power_exponential: {
      const double sq = (spec.q == 2.0) ? s * s : std::pow(s, spec.q);
      return std::exp(-sq);
    }
    case KernelFamily::squared_exponential:
      return std::exp(-s * s);
    case KernelFamily::rational_quadratic:
      return std::exp(-spec.nu * std::log1p(s * s));
    case KernelFamily::matern: {
      if (d == 0.0) return 1.0;
      const double z = matern_c(spec) * s;
      // The series carries K - 1; adding the 1 back is harmless here since
      // K stays near 1 on that branch.
      if (z <= 1.0) return 1.0 + matern_series_m1(spec.nu, 0.25 * z * z, nullptr);
      return matern_direct(spec.nu, z);
    }
  }
  throw parameter_error("unknown kernel family enum value");
}

double eval_kernel_m1(const KernelSpec& spec, double d, double theta) {
  validate_kernel(spec);
  check_point(d, theta);
  const double s = d / theta;
  switch (spec.family) {
    case KernelFamily::spherical:
      if (s >= 1.0) return -1.0;
      return s * (-1.5 + 0.5 * s * s);
    case KernelFamily::power_exponential: {
      const double sq = (spec.q == 2.0) ? s * s : std::pow(s, spec.q);
      return std::expm1(-sq);
    }
    case KernelFamily::squared_exponential:
      return std::expm1(-s * s);
    case KernelFamily::rational_quadratic:
      return std::expm1(-spec.nu * std::log1p(s * s));
    case KernelFamily::matern: {
      if (d == 0.0) return 0.0;
      const double z = matern_c(spec) * s;
      if (z <= 1.0) return matern_series_m1(spec.nu, 0.25 * z * z, nullptr);
      // Beyond the switch K is bounded away from 1 and the subtraction
      // costs at most one decimal digit.
      return matern_direct(spec.nu, z) - 1.0;
    }
  }
  throw parameter_error("unknown kernel family enum value");
}

double eval_kernel_dtheta(const KernelSpec& spec, double d, double theta) {
  validate_kernel(spec);
  check_point(d, theta);
  if (d == 0.0) return 0.0;
  const double s = d / theta;
  switch (spec.family) {
    case KernelFamily::spherical:
      if (s >= 1.0) return 0.0;
      return 1.5 * (s / theta) * (1.0 - s * s);
    case KernelFamily::power_exponential: {
      const double sq = (spec.q == 2.0) ? s * s : std::pow(s, spec.q);
      return (spec.q / theta) * sq * std::exp(-sq);
    }
    case KernelFamily::squared_exponential:
      return (2.0 / theta) * s * s * std::exp(-s * s);
    case KernelFamily::rational_quadratic:
      return (2.0 * spec.nu / theta) * s * s *
             std::exp(-(spec.nu + 1.0) * std::log1p(s * s));
    case KernelFamily::matern: {
      const double z = matern_c(spec) * s;
      if (z <= 1.0) {
        double u_dvdu = 0.0;
        matern_series_m1(spec.nu, 0.25 * z * z, &u_dvdu);
        // dK/dtheta = (u dK/du) * (du/dtheta) / u and du/dtheta = -2u/theta.
        return u_dvdu * (-2.0 / theta);
      }
      // dz/dtheta = -z/theta.
      return matern_direct_dz(spec.nu, z) * (-z / theta);
    }
  }
  throw parameter_error("unknown kernel family enum value");
}

std::vector<SeriesTerm> expansion_terms(const KernelSpec& spec, int k_max) {
  validate_kernel(spec);
  if (k_max < 0 || k_max > 64)
    throw parameter_error("expansion order must lie in [0, 64]");
  std::vector<SeriesTerm> terms;
  switch (spec.family) {
    case KernelFamily::spherical:
      terms.push_back({0.0, 0, 0.0, false, 1.0});
      if (k_max >= 1) terms.push_back({-1.0, 0, 1.0, false, -1.5});
      if (k_max >= 2) terms.push_back({-3.0, 0, 3.0, false, 0.5});
      break;
    case KernelFamily::power_exponential: {
      double c = 1.0;
      for (int m = 0; m * spec.q <= 2.0 * k_max + 1e-12; ++m) {
        terms.push_back({-spec.q * m, 0, spec.q * m, false, c});
        c *= -1.0 / (m + 1.0);
      }
      break;
    }
    case KernelFamily::squared_exponential: {
      double c = 1.0;
      for (int k = 0; k <= k_max; ++k) {
        terms.push_back({-2.0 * k, 0, 2.0 * k, false, c});
        c *= -1.0 / (k + 1.0);
      }
      break;
    }
    case KernelFamily::rational_quadratic: {
      double c = 1.0;
      for (int k = 0; k <= k_max; ++k) {
        terms.push_back({-2.0 * k, 0, 2.0 * k, false, c});
        c *= -(spec.nu + k) / (k + 1.0);
      }
      break;
    }
    case KernelFamily::matern: {
      const double nu = spec.nu;
      const double c = matern_c(spec);
      const double w = 0.25 * c * c;  // u = w d^2 / theta^2
      int nu_int = 0;
      if (matern_integer(nu, &nu_int)) {
        double t = 1.0;  // a_m w^m along the polynomial part
        for (int m = 0; m < nu_int && m <= k_max; ++m) {
          terms.push_back({-2.0 * m, 0, 2.0 * m, false, t});
          t *= -w / ((m + 1.0) * (nu_int - m - 1.0));
        }
        double lead = (nu_int % 2 == 0) ? 1.0 : -1.0;
        for (int j = 1; j < nu_int; ++j) lead /= j;
        for (int j = 1; j <= nu_int; ++j) lead /= j;
        double base = lead * std::pow(w, nu_int);
        double psi_a = digamma_int(1);
        double psi_b = digamma_int(nu_int + 1);
        const double lnw = std::log(w);
        for (int m = 0; 2.0 * (nu_int + m) <= 2.0 * k_max + 1e-12; ++m) {
          const double p = -2.0 * (nu_int + m);
          const double dp = 2.0 * (nu_int + m);
          // ln u = ln w + 2 ln d - 2 ln theta splits each slot three ways.
          terms.push_back({p, 1, dp, false, 2.0 * base});
          terms.push_back({p, 0, dp, false, base * (psi_a + psi_b - lnw)});
          terms.push_back({p, 0, dp, true, -2.0 * base});
          psi_a += 1.0 / (m + 1.0);
          psi_b += 1.0 / (nu_int + m + 1.0);
          base *= w / ((m + 1.0) * (nu_int + m + 1.0));
        }
      } else {
        double t = 1.0;
        for (int m = 0; m <= k_max; ++m) {
          terms.push_back({-2.0 * m, 0, 2.0 * m, false, t});
          t *= -w / ((m + 1.0) * (nu - m - 1.0));
        }
        const double gnu = std::tgamma(nu);
        double r = -M_PI / (nu * std::sin(M_PI * nu) * gnu * gnu) *
                   std::pow(w, nu);
        for (int m = 0; 2.0 * (nu + m) <= 2.0 * k_max + 1e-12; ++m) {
          terms.push_back({-2.0 * (nu + m), 0, 2.0 * (nu + m), false, r});
          r *= -w / ((m + 1.0) * (-nu - m - 1.0));
        }
      }
      break;
    }
  }
  std::sort(terms.begin(), terms.end(), term_before);
  return terms;
}

double series_entry(const SeriesTerm& term, double d) {
  if (d == 0.0) {
    if (term.dist_power == 0.0 && !term.log_dist) return 1.0;
    return 0.0;
  }
  double v = std::pow(d, term.dist_power);
  if (term.log_dist) v *= std::log(d);
  return v;
}

SeriesCoefficients series_coefficients(const KernelSpec& spec, int k_max) {
  validate_kernel(spec);
  if (k_max < 0 || k_max > 12)
    throw parameter_error("expansion order must lie in [0, 12]");
  if (spec.family == KernelFamily::spherical ||
      spec.family == KernelFamily::power_exponential)
    throw parameter_error(
        "large-theta power series is only available for squared_exponential, "
        "rational_quadratic and matern kernels");

  SeriesCoefficients out;
  out.k_max = k_max;
  out.a.assign(static_cast<size_t>(k_max) + 1, 0.0);

  if (spec.family == KernelFamily::squared_exponential) {
    double c = 1.0;
    for (int k = 0; k <= k_max; ++k) {
      out.a[static_cast<size_t>(k)] = c;
      c *= -1.0 / (k + 1.0);
    }
    out.remainder_power = 2.0 * (k_max + 1);
    return out;
  }
  if (spec.family == KernelFamily::rational_quadratic) {
    double c = 1.0;
    for (int k = 0; k <= k_max; ++k) {
      out.a[static_cast<size_t>(k)] = c;
      c *= -(spec.nu + k) / (k + 1.0);
    }
    out.remainder_power = 2.0 * (k_max + 1);
    return out;
  }

  const double nu = spec.nu;
  const double w = 0.25 * matern_c(spec) * matern_c(spec);
  int nu_int = 0;
  if (matern_integer(nu, &nu_int)) {
    // Integer order: plain coefficients stop below nu, then a log(theta)
    // slot paired with the companion matrix takes over.
    double t = 1.0;
    for (int m = 0; m <= k_max && m < nu_int; ++m) {
      out.a[static_cast<size_t>(m)] = t;
      t *= -w / ((m + 1.0) * (nu_int - m - 1.0));
    }
    if (nu_int <= k_max) {
      double lead = (nu_int % 2 == 0) ? 1.0 : -1.0;
      for (int j = 1; j < nu_int; ++j) lead /= j;
      for (int j = 1; j <= nu_int; ++j) lead /= j;
      out.has_log_term = true;
      out.log_coef = 2.0 * lead * std::pow(w, nu_int);
      out.remainder_power = 2.0 * (nu_int + 1);
      out.remainder_has_log = true;
    } else {
      out.remainder_power = 2.0 * (k_max + 1);
    }
    return out;
  }

  // Noninteger order: plain coefficients at every integer slot plus one
  // fractional slot at exponent 2 nu (always reported).
  double t = 1.0;
  for (int m = 0; m <= k_max; ++m) {
    out.a[static_cast<size_t>(m)] = t;
    t *= -w / ((m + 1.0) * (nu - m - 1.0));
  }
  const double gnu = std::tgamma(nu);
  out.has_fractional = true;
  out.fractional_coef =
      -M_PI / (nu * std::sin(M_PI * nu) * gnu * gnu) * std::pow(w, nu);
  out.fractional_exponent = 2.0 * nu;
  out.remainder_power =
      std::min(2.0 * (k_max + 1), 2.0 * nu + 2.0);
  return out;
}

double matern_log_companion_entry(const KernelSpec& spec, double d) {
  validate_kernel(spec);
  int nu_int = 0;
  if (spec.family != KernelFamily::matern ||
      !matern_integer(spec.nu, &nu_int))
    throw parameter_error(
        "log companion entries exist only for integer-nu matern kernels");
  if (d == 0.0) return 0.0;
  const double w = 0.25 * matern_c(spec) * matern_c(spec);
  // Slot basis: theta^{-2nu} [log(theta) d^{2nu} + companion(d)] after
  // factoring the common 2 base coefficient; companion(d) =
  // d^{2nu} ((psi(1) + psi(nu+1) - ln w)/2 - ln d).
  const double brace =
      0.5 * (digamma_int(1) + digamma_int(nu_int + 1) - std::log(w)) -
      std::log(d);
  return std::pow(d, 2.0 * nu_int) * brace;
}

}  // namespace refprior
