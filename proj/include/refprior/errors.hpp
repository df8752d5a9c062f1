#ifndef REFPRIOR_ERRORS_HPP
#define REFPRIOR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace refprior {

// Two error families, matching the CLI exit-code contract:
//   input_error   -> exit 1 (bad flags, malformed files, out-of-domain parameters)
//   numeric_error -> exit 2 (contract violations discovered during computation)

class input_error : public std::runtime_error {
 public:
  explicit input_error(const std::string& msg) : std::runtime_error(msg) {}
};

class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Kernel or solver parameter outside its domain (q, nu, theta, k_max, ...).
class parameter_error : public input_error {
 public:
  using input_error::input_error;
};

// Design matrix problems: empty, ragged CSV, duplicate rows, size mismatch.
class design_error : public input_error {
 public:
  using input_error::input_error;
};

// Basis matrix H fails the rank contract (rank < p or p >= n).
class identifiability_error : public input_error {
 public:
  using input_error::input_error;
};

// Cholesky pivot failure on a correlation matrix. Carries the theta at which
// it happened and the offending pivot so callers can report the regime.
class not_positive_definite : public numeric_error {
 public:
  not_positive_definite(const std::string& msg, double theta, double pivot)
      : numeric_error(msg), theta(theta), pivot(pivot) {}
  double theta;
  double pivot;
};

// W'y vanishes (exactly, or below the nondegeneracy threshold when enforced).
class degenerate_observations : public numeric_error {
 public:
  using numeric_error::numeric_error;
};

// Posterior quadrature could not meet its tolerance / tail-closure contract.
class quadrature_error : public numeric_error {
 public:
  using numeric_error::numeric_error;
};

// Eigenvalue sign/rank classification sits inside the ambiguity band.
class ambiguity_error : public numeric_error {
 public:
  using numeric_error::numeric_error;
};

// Internal consistency violated beyond tolerance (e.g. prior bracket < 0).
class consistency_error : public numeric_error {
 public:
  using numeric_error::numeric_error;
};

}  // namespace refprior

#endif  // REFPRIOR_ERRORS_HPP
