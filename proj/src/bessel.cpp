#include "refprior/bessel.hpp"

#include <cmath>
#include <limits>

#include "refprior/errors.hpp"

namespace refprior {
namespace {

constexpr double kEulerGamma = 0.57721566490153286060651209008240243;
constexpr double kEps = std::numeric_limits<double>::epsilon();

double sinhc(double x) {
  if (std::abs(x) < 1e-5) return 1.0 + x * x / 6.0;
  return std::sinh(x) / x;
}

// Temme's auxiliary gamma combinations for |mu| <= 1/2:
//   gam1 = [1/Gamma(1-mu) - 1/Gamma(1+mu)] / (2 mu)   (-> -EulerGamma at mu=0)
//   gam2 = [1/Gamma(1-mu) + 1/Gamma(1+mu)] / 2
// Built from ln(1/Gamma(1+x)) = gamma x - sum_{k>=2} (-1)^k zeta(k) x^k / k,
// split into even/odd parts so the mu -> 0 limit needs no special casing.
void temme_gamma(double mu, double& gam1, double& gam2, double& gplus, double& gminus) {
  const double mu2 = mu * mu;
  double even = 0.0;              // (g(mu) + g(-mu)) / 2
  double odd_over_mu = kEulerGamma;  // (g(mu) - g(-mu)) / (2 mu), g = ln(1/Gamma(1+.))
  double p_even = mu2;            // mu^k, even k from 2
  double p_odd = mu2;             // mu^(k-1), odd k from 3
  for (int k = 2; k < 64; k += 2) {
    const double te = std::riemann_zeta(double(k)) * p_even / k;
    const double to = std::riemann_zeta(double(k + 1)) * p_odd / (k + 1);
    even -= te;
    odd_over_mu += to;
    p_even *= mu2;
    p_odd *= mu2;
    if (te < 1e-20 && to < 1e-20) break;
  }
  const double odd = odd_over_mu * mu;
  const double ee = std::exp(even);
  gplus = ee * std::exp(odd);    // 1/Gamma(1+mu)
  gminus = ee * std::exp(-odd);  // 1/Gamma(1-mu)
  gam1 = -ee * odd_over_mu * sinhc(odd);
  gam2 = ee * std::cosh(odd);
}

// K_mu(z) and K_{mu+1}(z) for z <= 2, |mu| <= 1/2 (Temme 1975).
void temme_series(double mu, double z, double& kmu, double& kmu1) {
  double gam1, gam2, gplus, gminus;
  temme_gamma(mu, gam1, gam2, gplus, gminus);

  const double d = std::log(2.0 / z);
  const double sigma = mu * d;
  const double pimu = M_PI * mu;
  const double fact = (std::abs(pimu) < 1e-15) ? 1.0 : pimu / std::sin(pimu);

  double f = fact * (gam1 * std::cosh(sigma) + gam2 * d * sinhc(sigma));
  double p = 0.5 * std::exp(sigma) / gplus;   // (1/2)(z/2)^{-mu} Gamma(1+mu)
  double q = 0.5 * std::exp(-sigma) / gminus; // (1/2)(z/2)^{+mu} Gamma(1-mu)
  const double z2 = 0.25 * z * z;
  double c = 1.0;
  double sum0 = f;
  double sum1 = p;
  for (int k = 1; k < 200; ++k) {
    f = (k * f + p + q) / (k * k - mu * mu);
    p /= (k - mu);
    q /= (k + mu);
    c *= z2 / k;
    const double d0 = c * f;
    const double d1 = c * (p - k * f);
    sum0 += d0;
    sum1 += d1;
    if (std::abs(d0) < std::abs(sum0) * 0.5 * kEps) break;
  }
  kmu = sum0;
  kmu1 = sum1 * 2.0 / z;
}

// Steed/Thompson-Barnett CF2 for z > 2: returns exp(z) K_mu and exp(z) K_{mu+1}.
void cf2_scaled(double mu, double z, double& kmu, double& kmu1) {
  const double mu2 = mu * mu;
  double b = 2.0 * (1.0 + z);
  double d = 1.0 / b;
  double h = d;
  double delh = d;
  double q1 = 0.0;
  double q2 = 1.0;
  const double a1 = 0.25 - mu2;
  double q = a1;
  double c = a1;
  double a = -a1;
  double s = 1.0 + q * delh;
  for (int i = 2; i < 10000; ++i) {
    a -= 2.0 * (i - 1);
    c = -a * c / i;
    const double qnew = (q1 - b * q2) / a;
    q1 = q2;
    q2 = qnew;
    q += c * qnew;
    b += 2.0;
    d = 1.0 / (b + a * d);
    delh = (b * d - 1.0) * delh;
    h += delh;
    const double dels = q * delh;
    s += dels;
    if (std::abs(dels / s) < kEps) break;
  }
  h = a1 * h;
  kmu = std::sqrt(M_PI / (2.0 * z)) / s;
  kmu1 = kmu * (mu + z + 0.5 - h) / z;
}

double knu_impl(double nu, double z, bool scaled) {
  if (!(z > 0.0)) throw parameter_error("bessel_knu: z must be positive");
  nu = std::abs(nu);
  const int n = int(nu + 0.5);
  const double mu = nu - n;  // in [-1/2, 1/2]

  double kmu, kp;
  if (z <= 2.0) {
    temme_series(mu, z, kmu, kp);
    if (scaled) {
      const double ez = std::exp(z);
      kmu *= ez;
      kp *= ez;
    }
  } else {
    cf2_scaled(mu, z, kmu, kp);
    if (!scaled) {
      const double emz = std::exp(-z);
      kmu *= emz;
      kp *= emz;
    }
  }
  if (n == 0) return kmu;
  for (int j = 1; j < n; ++j) {
    const double knext = kmu + (2.0 * (mu + j) / z) * kp;
    kmu = kp;
    kp = knext;
  }
  return kp;
}

}  // namespace

double bessel_knu(double nu, double z) { return knu_impl(nu, z, false); }

double bessel_knu_scaled(double nu, double z) { return knu_impl(nu, z, true); }

}  // namespace refprior
