#ifndef REFPRIOR_BESSEL_HPP
#define REFPRIOR_BESSEL_HPP

namespace refprior {

// Modified Bessel function of the second kind K_nu(z), z > 0.
//
// Temme's series below z = 2, a Thompson-Barnett continued fraction above,
// then stable upward recurrence in the order. Symmetric in nu. For very
// small z together with a large order the value overflows to +inf; callers
// that need K_nu inside products with z^nu should assemble in log space
// (see the Matern evaluation) or use the scaled variant.
double bessel_knu(double nu, double z);

// exp(z) * K_nu(z); avoids the exp(-z) underflow for z beyond ~700.
double bessel_knu_scaled(double nu, double z);

}  // namespace refprior

#endif  // REFPRIOR_BESSEL_HPP
