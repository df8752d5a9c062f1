#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "refprior/errors.hpp"
#include "refprior/kernels.hpp"

using namespace refprior;

namespace {

KernelSpec spherical_spec() { return {KernelFamily::spherical, 1.0, 1.0, MaternVariant::hw94}; }
KernelSpec powexp_spec(double q) { return {KernelFamily::power_exponential, q, 1.0, MaternVariant::hw94}; }
KernelSpec se_spec() { return {KernelFamily::squared_exponential, 1.0, 1.0, MaternVariant::hw94}; }
KernelSpec rq_spec(double nu) { return {KernelFamily::rational_quadratic, 1.0, nu, MaternVariant::hw94}; }
KernelSpec matern_spec(double nu, MaternVariant v = MaternVariant::hw94) {
  return {KernelFamily::matern, 1.0, nu, v};
}

double rel_err(double got, double want) {
  if (want == 0.0) return std::abs(got);
  return std::abs(got - want) / std::abs(want);
}

const std::vector<KernelSpec> kAllSpecs = {
    spherical_spec(),     powexp_spec(0.5),   powexp_spec(1.0),
    powexp_spec(1.7),     se_spec(),          rq_spec(0.4),
    rq_spec(1.0),         rq_spec(2.6),       matern_spec(0.3),
    matern_spec(0.5),     matern_spec(1.0),   matern_spec(1.5),
    matern_spec(2.2),     matern_spec(3.0),   matern_spec(4.5),
    matern_spec(7.0),     matern_spec(0.5, MaternVariant::bdos),
    matern_spec(3.0, MaternVariant::bdos),
};

}  // namespace

TEST_CASE("closed-form values") {
  // Spherical polynomial.
  CHECK(eval_kernel(spherical_spec(), 0.5, 1.0) == doctest::Approx(0.3125).epsilon(1e-15));
  CHECK(eval_kernel(spherical_spec(), 1.0, 1.0) == 0.0);
  CHECK(eval_kernel(spherical_spec(), 2.0, 1.0) == 0.0);
  CHECK(eval_kernel(spherical_spec(), 3.0, 4.0) ==
        doctest::Approx(1.0 - 1.5 * 0.75 + 0.5 * 0.75 * 0.75 * 0.75).epsilon(1e-15));

  // Exponential-type families.
  CHECK(rel_err(eval_kernel(powexp_spec(1.0), 1.0, 1.0), std::exp(-1.0)) < 1e-15);
  CHECK(rel_err(eval_kernel(powexp_spec(0.5), 4.0, 1.0), std::exp(-2.0)) < 1e-15);
  CHECK(rel_err(eval_kernel(se_spec(), 1.0, 1.0), std::exp(-1.0)) < 1e-15);
  CHECK(rel_err(eval_kernel(se_spec(), 3.0, 2.0), std::exp(-2.25)) < 1e-15);

  // Rational quadratic.
  CHECK(rel_err(eval_kernel(rq_spec(1.0), 1.0, 1.0), 0.5) < 1e-15);
  CHECK(rel_err(eval_kernel(rq_spec(2.0), 1.0, 1.0), 0.25) < 1e-15);
  CHECK(rel_err(eval_kernel(rq_spec(0.5), std::sqrt(3.0), 1.0), 0.5) < 1e-14);

  // Half-integer Matern closed forms.
  for (double s : {0.01, 0.3, 1.0, 2.7}) {
    const double z1 = std::sqrt(2.0) * s;
    CHECK(rel_err(eval_kernel(matern_spec(0.5), s, 1.0), std::exp(-z1)) < 1e-13);
    CHECK(rel_err(eval_kernel(matern_spec(0.5, MaternVariant::bdos), s, 1.0),
                  std::exp(-s)) < 1e-13);
    const double z3 = std::sqrt(6.0) * s;
    CHECK(rel_err(eval_kernel(matern_spec(1.5), s, 1.0), (1.0 + z3) * std::exp(-z3)) < 1e-13);
    const double z5 = std::sqrt(10.0) * s;
    CHECK(rel_err(eval_kernel(matern_spec(2.5), s, 1.0),
                  (1.0 + z5 + z5 * z5 / 3.0) * std::exp(-z5)) < 1e-13);
  }
}

TEST_CASE("matern reference values") {
  struct Ref { double nu; MaternVariant v; double s; double val; };
  // 50-digit arbitrary-precision evaluations of the defining formula.
  const std::vector<Ref> refs = {
      {0.3, MaternVariant::hw94, 0.25, 0.58187471180928172889},
      {0.3, MaternVariant::hw94, 1.7, 0.090126883585417689356},
      {2.2, MaternVariant::hw94, 0.2, 0.93360241668225114299},
      {2.2, MaternVariant::hw94, 0.37, 0.80599540074587957299},
      {2.2, MaternVariant::hw94, 2.5, 0.011992960279178102796},
      {7.0, MaternVariant::hw94, 0.1, 0.98841452637081129266},
      {7.0, MaternVariant::hw94, 0.8, 0.49612919670819256004},
      {1.0, MaternVariant::hw94, 0.15, 0.91679761003719749366},
      {1.0, MaternVariant::hw94, 1.2, 0.20093961301159723789},
      {3.0, MaternVariant::bdos, 0.5, 0.96965483640516025603},
      {3.0, MaternVariant::bdos, 4.0, 0.2390793953340453718},
      {4.5, MaternVariant::hw94, 0.12, 0.98172229565588946327},
  };
  for (const auto& r : refs) {
    CAPTURE(r.nu);
    CAPTURE(r.s);
    CHECK(rel_err(eval_kernel(matern_spec(r.nu, r.v), r.s, 1.0), r.val) < 1e-13);
  }
}

TEST_CASE("kernel minus one carries full relative accuracy") {
  struct Ref { double nu; double s; double val; };
  // 50-digit evaluations of K - 1 at small s, where the direct subtraction
  // would lose most of the significand.
  const std::vector<Ref> refs = {
      {1.5, 1e-3, -2.9951055175765453228e-6},
      {1.0, 1e-3, -1.3661086808702155331e-5},
      {0.4, 1e-4, -7.3403716480452892674e-4},
      {2.0, 1e-2, -1.9982273116760926836e-4},
  };
  for (const auto& r : refs) {
    CAPTURE(r.nu);
    CHECK(rel_err(eval_kernel_m1(matern_spec(r.nu), r.s, 1.0), r.val) < 1e-12);
  }

  // Smooth analytic families against hand series.
  CHECK(rel_err(eval_kernel_m1(se_spec(), 1e-4, 1.0), -1e-8 + 0.5e-16) < 1e-13);
  CHECK(rel_err(eval_kernel_m1(rq_spec(0.7), 1e-4, 1.0), -0.7e-8) < 1e-8);
  CHECK(rel_err(eval_kernel_m1(powexp_spec(1.0), 1e-6, 1.0),
                std::expm1(-1e-6)) < 1e-15);

  // Consistency with the plain evaluation at moderate arguments.
  for (const auto& spec : kAllSpecs) {
    for (double s : {0.2, 0.7, 1.3}) {
      CHECK(std::abs(1.0 + eval_kernel_m1(spec, s, 1.0) - eval_kernel(spec, s, 1.0)) < 1e-15);
    }
  }
}

TEST_CASE("series and bessel branches of matern agree at the switch") {
  // The implementation changes representation at z = c s = 1. Both sides
  // and an independent standard-library evaluation must agree there. The
  // perturbation is small enough that the kernel's own slope contributes
  // less than 2e-12 to the gap.
  for (double nu : {0.3, 0.5, 1.0, 1.5, 2.0, 2.2, 3.0, 4.5, 7.0}) {
    const auto spec = matern_spec(nu);
    const double c = 2.0 * std::sqrt(nu);
    const double s_switch = 1.0 / c;
    const double lo = eval_kernel(spec, s_switch * (1.0 - 1e-12), 1.0);
    const double hi = eval_kernel(spec, s_switch * (1.0 + 1e-12), 1.0);
    CHECK(std::abs(lo - hi) < 1e-11);

    for (double z : {0.05, 0.4, 0.9, 1.1, 1.8}) {
      const double s = z / c;
      const double ref = std::pow(2.0, 1.0 - nu) / std::tgamma(nu) *
                         std::pow(z, nu) * std::cyl_bessel_k(nu, z);
      CHECK(rel_err(eval_kernel(spec, s, 1.0), ref) < 5e-10);
    }
  }
}

TEST_CASE("analytic theta derivative matches central differences") {
  std::mt19937_64 rng(20260814);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (const auto& spec : kAllSpecs) {
    for (int trial = 0; trial < 40; ++trial) {
      const double theta = std::exp(std::log(0.05) + unif(rng) * std::log(20.0 / 0.05));
      double s = std::exp(std::log(0.02) + unif(rng) * std::log(5.0 / 0.02));
      // The spherical family has a kink at s = 1 where no two-sided
      // derivative exists.
      if (spec.family == KernelFamily::spherical && std::abs(s - 1.0) < 0.05) s = 0.8;
      const double d = s * theta;
      const double h = theta * 6e-6;
      const double fd = (eval_kernel(spec, d, theta + h) - eval_kernel(spec, d, theta - h)) / (2.0 * h);
      const double an = eval_kernel_dtheta(spec, d, theta);
      CAPTURE(to_string(spec.family));
      CAPTURE(s);
      CAPTURE(theta);
      if (std::abs(fd) > 1e-12) {
        CHECK(rel_err(an, fd) < 1e-6);
      } else {
        CHECK(std::abs(an - fd) < 1e-10);
      }
    }
    CHECK(eval_kernel_dtheta(spec, 0.0, 1.7) == 0.0);
  }
}

TEST_CASE("power exponential with q = 2 reproduces squared exponential") {
  for (double s : {1e-8, 1e-3, 0.1, 0.9, 1.0, 2.5, 7.0}) {
    CHECK(eval_kernel(powexp_spec(2.0), s, 1.0) == eval_kernel(se_spec(), s, 1.0));
    CHECK(eval_kernel_m1(powexp_spec(2.0), s, 1.0) == eval_kernel_m1(se_spec(), s, 1.0));
    CHECK(eval_kernel_dtheta(powexp_spec(2.0), s, 1.0) ==
          eval_kernel_dtheta(se_spec(), s, 1.0));
  }
}

TEST_CASE("basic range and monotonicity") {
  for (const auto& spec : kAllSpecs) {
    CHECK(eval_kernel(spec, 0.0, 1.0) == 1.0);
    CHECK(eval_kernel_m1(spec, 0.0, 1.0) == 0.0);
    double prev = 1.0;
    for (double s = 0.05; s < 6.0; s += 0.05) {
      const double v = eval_kernel(spec, s, 1.0);
      CHECK(v <= 1.0);
      CHECK(v >= 0.0);
      CHECK(v <= prev + 1e-14);
      prev = v;
    }
  }
}

TEST_CASE("series coefficients for the smooth families") {
  // Squared exponential: a_k = (-1)^k / k!.
  {
    const auto sc = series_coefficients(se_spec(), 3);
    REQUIRE(sc.a.size() == 4);
    CHECK(sc.a[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sc.a[1] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(sc.a[2] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sc.a[3] == doctest::Approx(-1.0 / 6.0).epsilon(1e-15));
    CHECK_FALSE(sc.has_fractional);
    CHECK_FALSE(sc.has_log_term);
    CHECK(sc.remainder_power == doctest::Approx(8.0));
  }
  // Rational quadratic: a_k = (-1)^k nu (nu+1) ... (nu+k-1) / k!.
  {
    const auto sc = series_coefficients(rq_spec(1.0), 3);
    CHECK(sc.a[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sc.a[1] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(sc.a[2] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sc.a[3] == doctest::Approx(-1.0).epsilon(1e-15));
  }
  {
    const auto sc = series_coefficients(rq_spec(0.7), 3);
    CHECK(sc.a[1] == doctest::Approx(-0.7).epsilon(1e-15));
    CHECK(sc.a[2] == doctest::Approx(0.7 * 1.7 / 2.0).epsilon(1e-15));
    CHECK(sc.a[3] == doctest::Approx(-0.7 * 1.7 * 2.7 / 6.0).epsilon(1e-14));
  }
  // Noninteger Matern: plain slots plus one fractional slot at 2 nu.
  {
    const auto sc = series_coefficients(matern_spec(1.5), 2);
    CHECK(sc.a[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sc.a[1] == doctest::Approx(-3.0).epsilon(1e-14));
    CHECK(sc.a[2] == doctest::Approx(-4.5).epsilon(1e-14));
    REQUIRE(sc.has_fractional);
    CHECK(sc.fractional_exponent == doctest::Approx(3.0));
    CHECK(sc.fractional_coef == doctest::Approx(std::sqrt(24.0)).epsilon(1e-13));
    CHECK(sc.remainder_power == doctest::Approx(5.0));
    CHECK_FALSE(sc.has_log_term);
  }
  // Integer Matern: plain slots below nu, then the log(theta) slot.
  {
    const auto sc = series_coefficients(matern_spec(1.0), 2);
    CHECK(sc.a[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sc.a[1] == 0.0);
    REQUIRE(sc.has_log_term);
    CHECK(sc.log_coef == doctest::Approx(-2.0).epsilon(1e-14));
    CHECK(sc.remainder_has_log);
  }
  {
    const auto sc = series_coefficients(matern_spec(2.0), 3);
    CHECK(sc.a[1] == doctest::Approx(-2.0).epsilon(1e-14));
    REQUIRE(sc.has_log_term);
    CHECK(sc.log_coef == doctest::Approx(4.0).epsilon(1e-14));
    CHECK(sc.remainder_power == doctest::Approx(6.0));
  }
  CHECK_THROWS_AS(series_coefficients(spherical_spec(), 2), parameter_error);
  CHECK_THROWS_AS(series_coefficients(powexp_spec(1.0), 2), parameter_error);
  CHECK_THROWS_AS(series_coefficients(se_spec(), 13), parameter_error);
}

TEST_CASE("expansion terms reconstruct the kernel at large theta") {
  // Summing the terms beyond the leading 1 must reproduce K(d/theta) - 1 to
  // far below its own size. This pins every constant in the expansion,
  // including the log-slot companions of integer orders; skipping the
  // leading term keeps the comparison free of unit-scale rounding.
  const double theta = 1000.0;
  for (const auto& spec : kAllSpecs) {
    const double lt = std::log(theta);
    for (double d : {0.6, 1.4, 2.3}) {
      double sum = 0.0;
      for (const auto& t : expansion_terms(spec, 6)) {
        if (t.theta_power == 0.0) continue;
        double v = t.coef * std::pow(theta, t.theta_power) * series_entry(t, d);
        if (t.log_theta) v *= lt;
        sum += v;
      }
      const double m1 = eval_kernel_m1(spec, d, theta);
      CAPTURE(to_string(spec.family));
      CAPTURE(spec.nu);
      CAPTURE(d);
      CHECK(std::abs(sum - m1) < 1e-11 * std::abs(m1));
    }
  }
}

TEST_CASE("log companion entries complete the integer-order slot") {
  // For integer nu the theta^{-2nu} part of the expansion is
  // log_coef * (log(theta) d^{2nu} + companion(d)). Fitting the kernel at
  // two theta values separates the log and constant parts numerically.
  for (int nu : {1, 2}) {
    const auto spec = matern_spec(nu);
    const auto sc = series_coefficients(spec, nu);
    const double d = 1.3;
    const double t1 = 3e3, t2 = 6e3;
    // Work with K - 1 so the unit-scale constant never enters the floating
    // point sums; the k = 0 coefficient is that constant.
    auto residual = [&](double th) {
      double rem = eval_kernel_m1(spec, d, th);
      double pw = 1.0 / (th * th);
      for (int k = 1; k < nu; ++k) {
        rem -= sc.a[static_cast<size_t>(k)] * pw * std::pow(d, 2.0 * k);
        pw /= th * th;
      }
      return rem / std::pow(th, -2.0 * nu);
    };
    // residual(th) = log_coef * (log(th) d^{2nu} + companion) + O(th^{-2}).
    const double r1 = residual(t1);
    const double r2 = residual(t2);
    const double slope = (r2 - r1) / (std::log(t2) - std::log(t1));
    const double intercept = r1 - slope * std::log(t1);
    CAPTURE(nu);
    CHECK(rel_err(slope, sc.log_coef * std::pow(d, 2.0 * nu)) < 1e-5);
    CHECK(rel_err(intercept, sc.log_coef * matern_log_companion_entry(spec, d)) < 1e-4);
  }
  CHECK_THROWS_AS(matern_log_companion_entry(matern_spec(1.5), 1.0), parameter_error);
  CHECK_THROWS_AS(matern_log_companion_entry(se_spec(), 1.0), parameter_error);
}

TEST_CASE("expansion terms are ordered by dominance") {
  for (const auto& spec : kAllSpecs) {
    const auto terms = expansion_terms(spec, 5);
    REQUIRE(!terms.empty());
    CHECK(terms.front().theta_power == 0.0);
    CHECK(terms.front().coef == doctest::Approx(1.0));
    for (size_t i = 1; i < terms.size(); ++i) {
      const auto& a = terms[i - 1];
      const auto& b = terms[i];
      const bool ordered = a.theta_power > b.theta_power ||
                           (a.theta_power == b.theta_power && a.log_theta >= b.log_theta);
      CHECK(ordered);
    }
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS(eval_kernel(powexp_spec(0.0), 1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(powexp_spec(2.5), 1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(rq_spec(0.0), 1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(matern_spec(0.0), 1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(matern_spec(51.0), 1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(se_spec(), -1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(se_spec(), 1.0, 0.0), parameter_error);
  CHECK_THROWS_AS(eval_kernel(se_spec(), 1.0, -2.0), parameter_error);
  CHECK_THROWS_AS(family_from_string("triangular"), parameter_error);
  CHECK(family_from_string("matern") == KernelFamily::matern);
  CHECK(family_from_string("rq") == KernelFamily::rational_quadratic);
  CHECK(to_string(KernelFamily::spherical) == "spherical");
}
