#ifndef REFPRIOR_KERNELS_HPP
#define REFPRIOR_KERNELS_HPP

#include <string>
#include <vector>

namespace refprior {

enum class KernelFamily {
  spherical,
  power_exponential,
  squared_exponential,
  rational_quadratic,
  matern,
};

// Argument convention for the Matern family. hw94 evaluates
// 2^{1-nu}/Gamma(nu) (2 sqrt(nu) s)^nu K_nu(2 sqrt(nu) s); bdos drops the
// 2 sqrt(nu) factor.
enum class MaternVariant { hw94, bdos };

struct KernelSpec {
  KernelFamily family = KernelFamily::squared_exponential;
  double q = 1.0;    // power_exponential exponent, q in (0, 2]
  double nu = 1.0;   // rational_quadratic / matern smoothness, nu > 0
  MaternVariant parametrization = MaternVariant::hw94;
};

KernelFamily family_from_string(const std::string& name);
std::string to_string(KernelFamily family);

// Throws parameter_error on out-of-domain q / nu.
void validate_kernel(const KernelSpec& spec);

// Isotropic correlation K(d/theta). Range (0, 1] except the spherical family
// which hits 0 beyond its support.
double eval_kernel(const KernelSpec& spec, double d, double theta);

// K(d/theta) - 1 without cancellation (expm1 / series forms). The large-theta
// machinery depends on this carrying full relative accuracy when K is near 1.
double eval_kernel_m1(const KernelSpec& spec, double d, double theta);

// Analytic d/dtheta of K(d/theta); exactly 0 at d = 0. The spherical family
// has a kink at d = theta where the right limit (0) is returned.
double eval_kernel_dtheta(const KernelSpec& spec, double d, double theta);

// One term of the large-theta expansion of Sigma_theta entries:
//   coef * theta^theta_power * log(theta)^log_theta * d^dist_power [* ln d].
// Terms are sorted by decreasing magnitude at large theta (smaller |power|
// first; at equal power the log(theta) term leads). For the spherical family
// the finite term list is exact only while theta >= max distance.
struct SeriesTerm {
  double theta_power = 0.0;
  int log_theta = 0;
  double dist_power = 0.0;
  bool log_dist = false;
  double coef = 0.0;
};

// All terms with theta exponent >= -2*k_max. Supports every family
// (power-exponential and spherical expansions are entire / exact).
std::vector<SeriesTerm> expansion_terms(const KernelSpec& spec, int k_max);

// Evaluate the entry basis of one term at distance d (the d^p [ln d] factor,
// with the limit value 0 at d = 0 for positive powers).
double series_entry(const SeriesTerm& term, double d);

// Coefficient view of the expansion around theta = infinity:
//   Sigma_theta = sum_k a_k theta^{-2k} D^(k)  (+ fractional / log terms).
// Only the families with a genuine power-series expansion are supported;
// spherical and power-exponential requests throw parameter_error.
struct SeriesCoefficients {
  std::vector<double> a;            // a_0 .. a_k_max
  int k_max = 0;
  bool has_fractional = false;      // matern, noninteger nu
  double fractional_coef = 0.0;     // multiplies theta^{-2nu} D^(nu)
  double fractional_exponent = 0.0; // 2 nu
  bool has_log_term = false;        // matern, integer nu
  double log_coef = 0.0;            // multiplies log(theta) theta^{-2nu} D^(nu)
  double remainder_power = 0.0;     // first omitted term is O(theta^{-remainder_power})
  bool remainder_has_log = false;
};

SeriesCoefficients series_coefficients(const KernelSpec& spec, int k_max);

// Entries of the constant companion matrix paired with the log(theta) slot of
// the integer-nu Matern expansion (zero diagonal).
double matern_log_companion_entry(const KernelSpec& spec, double d);

}  // namespace refprior

#endif  // REFPRIOR_KERNELS_HPP
