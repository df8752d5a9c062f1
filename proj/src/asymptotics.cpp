#include "refprior/asymptotics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "refprior/errors.hpp"

namespace refprior {

namespace {

constexpr double kRankRelTol = 1e-9;     // eigenvalue cut, relative to max|lambda|
constexpr double kAmbiguityGap = 10.0;   // required ratio across the cut
constexpr double kNullRelLow = 1e-12;    // projection treated as the zero matrix
constexpr double kNullRelHigh = 1e-9;    // projection treated as genuinely nonzero
constexpr int kSlotCap = 12;             // highest distance power examined is d^(2*12)

bool is_integer_smoothness(double nu, int* n_out) {
  const int n = static_cast<int>(std::lround(nu));
  if (n >= 1 && nu == static_cast<double>(n)) {
    *n_out = n;
    return true;
  }
  return false;
}

bool same_kernel(const KernelSpec& a, const KernelSpec& b) {
  return a.family == b.family && a.q == b.q && a.nu == b.nu &&
         a.parametrization == b.parametrization;
}

// Families with a genuine slot decomposition at large theta. Everything else
// is rejected up front; the q = 2 power-exponential kernel must be requested
// through the squared_exponential family to land here.
void validate_scope(const KernelSpec& kernel) {
  validate_kernel(kernel);
  switch (kernel.family) {
    case KernelFamily::squared_exponential:
    case KernelFamily::rational_quadratic:
      return;
    case KernelFamily::matern:
      if (kernel.nu < 1.0)
        throw parameter_error("slot classification requires matern smoothness >= 1");
      if (kernel.nu > static_cast<double>(kSlotCap))
        throw parameter_error("slot classification supports matern smoothness <= 12");
      return;
    case KernelFamily::spherical:
    case KernelFamily::power_exponential:
      throw parameter_error(
          "slot classification covers squared-exponential, rational-quadratic "
          "and matern kernels only (use squared_exponential for the q = 2 "
          "power-exponential kernel)");
  }
  throw parameter_error("unknown kernel family enum value");
}

std::string power_text(double coef, double theta_power, double log_power) {
  std::ostringstream os;
  if (coef != 1.0) os << coef << " ";
  bool wrote = false;
  if (theta_power != 0.0) {
    os << "theta^" << theta_power;
    wrote = true;
  }
  if (log_power != 0.0) {
    if (wrote) os << " ";
    if (log_power == 1.0)
      os << "log(theta)";
    else
      os << "log(theta)^" << log_power;
    wrote = true;
  }
  if (!wrote) os << "1";
  return os.str();
}

PowerLawTag make_tag(double coef, double theta_power, double log_power) {
  PowerLawTag tag;
  tag.coef = coef;
  tag.theta_power = theta_power;
  tag.log_power = log_power;
  tag.text = power_text(coef, theta_power, log_power);
  return tag;
}

// One matrix-valued term of the projected large-theta expansion, kept in
// dominance order (slower theta decay first; the log-weighted slot ahead of
// its plain companion at equal power).
struct Slot {
  double index = 0.0;        // entries are d^(2*index)
  double theta_power = 0.0;  // weight theta^theta_power
  int log_theta = 0;         // weight carries log(theta)^log_theta
  bool companion = false;    // entries mix d^(2 nu) and d^(2 nu) log d
  double coef = 0.0;         // series coefficient of the weight
  std::string tag;
  Eigen::MatrixXd raw;        // n x n entry matrix, no coefficient
  Eigen::MatrixXd projected;  // W^T raw W
  bool non_null = false;
};

Eigen::MatrixXd entry_power_matrix(const DesignSet& design, double two_k) {
  const int n = design.n();
  if (two_k == 0.0) return Eigen::MatrixXd::Ones(n, n);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) out(i, j) = std::pow(design.distances(i, j), two_k);
  return out;
}

// Decides whether W^T raw W counts as the zero matrix, relative to the scale
// of the unprojected entries. The band between the two cutoffs is refused.
bool projection_null(const Eigen::MatrixXd& projected, const Eigen::MatrixXd& raw,
                     const std::string& tag) {
  const double scale = raw.norm();
  if (scale == 0.0) return true;
  const double rel = projected.norm() / scale;
  if (rel <= kNullRelLow) return true;
  if (rel >= kNullRelHigh) return false;
  std::ostringstream os;
  os << "cannot decide whether the projected " << tag
     << " vanishes: relative norm " << rel << " sits between " << kNullRelLow
     << " and " << kNullRelHigh;
  throw ambiguity_error(os.str());
}

std::string slot_tag(double index, int log_theta, bool companion) {
  std::ostringstream os;
  if (companion) {
    os << "companion slot (entries d^" << 2.0 * index << " (c0 - log d))";
  } else if (log_theta > 0) {
    os << "log-weighted slot (entries d^" << 2.0 * index << ")";
  } else {
    os << "power slot k=" << index << " (entries d^" << 2.0 * index << ")";
  }
  return os.str();
}

Slot make_slot(const GpModel& model, double index, double theta_power,
               int log_theta, bool companion, double coef) {
  Slot s;
  s.index = index;
  s.theta_power = theta_power;
  s.log_theta = log_theta;
  s.companion = companion;
  s.coef = coef;
  s.tag = slot_tag(index, log_theta, companion);
  if (companion) {
    const int n = model.n();
    s.raw = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (i != j)
          s.raw(i, j) = matern_log_companion_entry(model.kernel,
                                                   model.design.distances(i, j));
  } else {
    s.raw = entry_power_matrix(model.design, 2.0 * index);
  }
  s.projected = model.w.transpose() * s.raw * model.w;
  s.projected = 0.5 * (s.projected + s.projected.transpose()).eval();
  s.non_null = !projection_null(s.projected, s.raw, s.tag);
  return s;
}

// All slots of the kernel's expansion in dominance order. The matern families
// interleave their fractional or log-weighted slots among the integer powers.
std::vector<Slot> build_slots(const GpModel& model) {
  const KernelSpec& spec = model.kernel;
  std::vector<Slot> slots;
  if (spec.family == KernelFamily::squared_exponential ||
      spec.family == KernelFamily::rational_quadratic) {
    const SeriesCoefficients sc = series_coefficients(spec, kSlotCap);
    for (int k = 0; k <= kSlotCap; ++k)
      slots.push_back(make_slot(model, k, -2.0 * k, 0, false, sc.a[static_cast<size_t>(k)]));
    return slots;
  }
  int nu_int = 0;
  if (is_integer_smoothness(spec.nu, &nu_int)) {
    const SeriesCoefficients sc = series_coefficients(spec, nu_int);
    for (int k = 0; k < nu_int; ++k)
      slots.push_back(make_slot(model, k, -2.0 * k, 0, false, sc.a[static_cast<size_t>(k)]));
    slots.push_back(make_slot(model, nu_int, -2.0 * nu_int, 1, false, sc.log_coef));
    slots.push_back(make_slot(model, nu_int, -2.0 * nu_int, 0, true, sc.log_coef));
    return slots;
  }
  const int floor_nu = static_cast<int>(std::floor(spec.nu));
  const SeriesCoefficients sc = series_coefficients(spec, kSlotCap);
  for (int k = 0; k <= floor_nu; ++k)
    slots.push_back(make_slot(model, k, -2.0 * k, 0, false, sc.a[static_cast<size_t>(k)]));
  slots.push_back(make_slot(model, spec.nu, -2.0 * spec.nu, 0, false, sc.fractional_coef));
  for (int k = floor_nu + 1; k <= kSlotCap; ++k)
    slots.push_back(make_slot(model, k, -2.0 * k, 0, false, sc.a[static_cast<size_t>(k)]));
  return slots;
}

struct KernelSplit {
  int rank = 0;
  Eigen::MatrixXd kernel_basis;  // orthonormal columns spanning the kernel
};

// Rank / kernel split of a symmetric matrix with the relative eigenvalue cut.
// A blurred boundary (largest discarded vs smallest kept eigenvalue closer
// than a factor kAmbiguityGap) raises instead of guessing.
KernelSplit split_kernel(const Eigen::MatrixXd& sym, const std::string& what) {
  const int m = static_cast<int>(sym.rows());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success)
    throw consistency_error("eigenvalue decomposition failed on " + what);
  const Eigen::VectorXd& vals = es.eigenvalues();
  const double amax = vals.cwiseAbs().maxCoeff();
  KernelSplit out;
  if (amax == 0.0) {
    out.rank = 0;
    out.kernel_basis = Eigen::MatrixXd::Identity(m, m);
    return out;
  }
  const double cut = kRankRelTol * amax;
  double largest_zero = 0.0;
  double smallest_keep = std::numeric_limits<double>::infinity();
  std::vector<int> zero_idx;
  for (int i = 0; i < m; ++i) {
    const double a = std::abs(vals(i));
    if (a <= cut) {
      zero_idx.push_back(i);
      largest_zero = std::max(largest_zero, a);
    } else {
      smallest_keep = std::min(smallest_keep, a);
    }
  }
  if (!zero_idx.empty() && largest_zero > 0.0 &&
      smallest_keep / largest_zero < kAmbiguityGap) {
    std::ostringstream os;
    os << "rank decision on " << what << " is ambiguous: eigenvalue gap "
       << largest_zero << " .. " << smallest_keep << " around cut " << cut;
    throw ambiguity_error(os.str());
  }
  out.rank = m - static_cast<int>(zero_idx.size());
  out.kernel_basis = Eigen::MatrixXd(m, zero_idx.size());
  for (size_t c = 0; c < zero_idx.size(); ++c)
    out.kernel_basis.col(static_cast<Eigen::Index>(c)) =
        es.eigenvectors().col(zero_idx[c]);
  return out;
}

struct ChainResult {
  int closing_index = 0;           // slot index whose kernel closes the chain
  double terminating_exponent = 0.0;
  Eigen::MatrixXd critical;        // last nontrivial intersection, m x dim
};

// Nested kernel chain across the slots, with each slot compressed onto the
// subspace that survived the earlier ones. The compression matters: a slot
// can act nontrivially on the ambient space yet contribute nothing on the
// running subspace, and the small-eigenvalue ladder of W^T Sigma W follows
// the compressed chain (one eigenvalue of order theta^-2k per dimension
// retired at slot k), not the ambient kernel intersections.
ChainResult kernel_chain(const std::vector<Slot>& slots, int m) {
  ChainResult out;
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(m, m);
  out.critical = q;
  for (const Slot& slot : slots) {
    if (!slot.non_null) continue;
    Eigen::MatrixXd c = q.transpose() * slot.projected * q;
    c = 0.5 * (c + c.transpose()).eval();
    std::ostringstream os;
    os << "compressed " << slot.tag;
    if (projection_null(c, slot.raw, os.str())) continue;
    out.critical = q;
    const KernelSplit split = split_kernel(c, os.str());
    if (split.kernel_basis.cols() == 0) {
      out.closing_index = static_cast<int>(std::floor(slot.index));
      out.terminating_exponent = -slot.theta_power;
      return out;
    }
    q = (q * split.kernel_basis).eval();
  }
  throw consistency_error(
      "the projected expansion slots leave a shared kernel direction through "
      "order d^" + std::to_string(2 * kSlotCap) +
      "; the design is too degenerate for the slot classification");
}

const GpModel& effective_model(const GpModel& model, const KernelSpec& kernel,
                               GpModel& storage) {
  if (same_kernel(model.kernel, kernel)) return model;
  storage = make_model(model.design, kernel, model.basis);
  return storage;
}

// Whether the kernels of `count` consecutive slots starting at `first`
// intersect trivially. Null slots contribute the whole space and drop out.
bool joint_kernel_trivial(const std::vector<Slot>& slots, size_t first,
                          size_t count, int m) {
  Eigen::MatrixXd accum = Eigen::MatrixXd::Zero(m, m);
  for (size_t i = first; i < first + count && i < slots.size(); ++i) {
    if (!slots[i].non_null) continue;
    const Eigen::MatrixXd unit = slots[i].projected / slots[i].projected.norm();
    accum.noalias() += unit * unit;
  }
  accum = 0.5 * (accum + accum.transpose()).eval();
  return split_kernel(accum, "a slot group").kernel_basis.cols() == 0;
}

// Leading-pair selection for squared-exponential / rational-quadratic kernels:
// plain integer slots only.
void select_power_series(const std::vector<Slot>& slots, const GpModel& model,
                         ExpansionReport& rep, int* k1_pos, int* k2_pos) {
  int k1 = -1;
  for (size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].non_null) {
      k1 = static_cast<int>(i);
      break;
    }
  }
  if (k1 < 0)
    throw consistency_error("every projected slot vanishes; W^T Sigma W cannot "
                            "be positive definite");
  *k1_pos = k1;
  const KernelSplit lead = split_kernel(slots[static_cast<size_t>(k1)].projected,
                                        "the leading slot projection");
  rep.rank_leading = lead.rank;
  const bool nonsingular = lead.rank == model.m();
  if (nonsingular) {
    if (static_cast<size_t>(k1) + 1 >= slots.size())
      throw consistency_error("the leading slot sits at the examination cap "
                              "d^" + std::to_string(2 * kSlotCap));
    *k2_pos = k1 + 1;
    return;
  }
  for (size_t i = static_cast<size_t>(k1) + 1; i < slots.size(); ++i) {
    if (slots[i].non_null) {
      *k2_pos = static_cast<int>(i);
      return;
    }
  }
  throw consistency_error("no nonzero slot follows the singular leading slot "
                          "within order d^" + std::to_string(2 * kSlotCap));
}

ExpansionCase pair_case(const std::vector<Slot>& slots, int k1_pos, int k2_pos,
                        int m) {
  const size_t first = static_cast<size_t>(k1_pos);
  const size_t count = static_cast<size_t>(k2_pos - k1_pos) + 1;
  return joint_kernel_trivial(slots, first, count, m) ? ExpansionCase::case_1b
                                                      : ExpansionCase::case_2_usual;
}

}  // namespace

Eigen::MatrixXd distance_power_matrix(const DesignSet& design, double exponent) {
  if (!(exponent > 0.0) || exponent > 2.0)
    throw parameter_error("distance power exponent must lie in (0, 2]");
  return entry_power_matrix(design, exponent);
}

SignedSpectrum signed_spectrum(const Eigen::MatrixXd& matrix, double tol) {
  if (matrix.rows() != matrix.cols() || matrix.rows() == 0)
    throw parameter_error("signed spectrum needs a nonempty square matrix");
  const double scale = matrix.cwiseAbs().maxCoeff();
  const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-12 * std::max(1.0, scale))
    throw parameter_error("signed spectrum needs a symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix);
  if (es.info() != Eigen::Success)
    throw consistency_error("eigenvalue decomposition failed");
  SignedSpectrum out;
  const Eigen::VectorXd& vals = es.eigenvalues();
  const double amax = vals.cwiseAbs().maxCoeff();
  out.tolerance = tol >= 0.0
                      ? tol
                      : static_cast<double>(matrix.rows()) *
                            std::numeric_limits<double>::epsilon() * amax;
  out.eigenvalues.assign(vals.data(), vals.data() + vals.size());
  for (double v : out.eigenvalues) {
    if (std::abs(v) <= out.tolerance)
      ++out.n_zero;
    else if (v > 0.0)
      ++out.n_positive;
    else
      ++out.n_negative;
  }
  return out;
}

std::string to_string(ExpansionCase c) {
  switch (c) {
    case ExpansionCase::case_1a: return "1a";
    case ExpansionCase::case_1b: return "1b";
    case ExpansionCase::case_2_usual: return "2-usual";
    case ExpansionCase::case_2_special: return "2-special";
    case ExpansionCase::matern_log_branch: return "matern-log-branch";
  }
  throw parameter_error("unknown expansion case enum value");
}

ExpansionReport expansion_report(const GpModel& model, const KernelSpec& kernel) {
  validate_scope(kernel);
  GpModel storage;
  const GpModel& eff = effective_model(model, kernel, storage);
  if (eff.m() < 2)
    throw identifiability_error(
        "slot classification requires complement dimension n - p >= 2");

  ExpansionReport rep;
  rep.m = eff.m();
  const std::vector<Slot> slots = build_slots(eff);

  const bool rq_se = kernel.family == KernelFamily::squared_exponential ||
                     kernel.family == KernelFamily::rational_quadratic;
  int nu_int = 0;
  const bool integer_matern =
      kernel.family == KernelFamily::matern && is_integer_smoothness(kernel.nu, &nu_int);

  if (rq_se) {
    int k1_pos = 0, k2_pos = 0;
    select_power_series(slots, eff, rep, &k1_pos, &k2_pos);
    const Slot& s1 = slots[static_cast<size_t>(k1_pos)];
    const Slot& s2 = slots[static_cast<size_t>(k2_pos)];
    rep.k1 = s1.index;
    rep.k2 = s2.index;
    rep.d_matrix = s1.coef * s1.raw;
    rep.d_tag = s1.tag;
    rep.dstar_matrix = s2.coef * s2.raw;
    rep.dstar_tag = s2.tag;
    rep.g = make_tag(1.0, -2.0 * s1.index, 0.0);
    rep.g_star = make_tag(1.0, -2.0 * (s2.index - s1.index), 0.0);

    if (rep.rank_leading == rep.m) {
      rep.case_label = ExpansionCase::case_1a;
    } else {
      rep.case_label = pair_case(slots, k1_pos, k2_pos, rep.m);
      if (rep.case_label == ExpansionCase::case_2_usual &&
          k2_pos == k1_pos + 1 && rep.rank_leading == 1 &&
          static_cast<size_t>(k2_pos) + 1 < slots.size()) {
        // Adjacent slots with a rank-one leading projection: the subcase
        // hinges on whether the next slot is proportional to the leading one
        // while the third slot closes the remaining shared direction.
        const Eigen::MatrixXd& p1 = s1.projected;
        const Eigen::MatrixXd& p2 = s2.projected;
        const double b = (p1.array() * p2.array()).sum() / p1.squaredNorm();
        const double mismatch = (p2 - b * p1).norm();
        const bool proportional =
            mismatch <= 1e-9 * std::max(p2.norm(), std::abs(b) * p1.norm());
        if (proportional && b != 0.0 &&
            joint_kernel_trivial(slots, static_cast<size_t>(k1_pos), 3, rep.m)) {
          const Slot& s3 = slots[static_cast<size_t>(k2_pos) + 1];
          rep.case_label = ExpansionCase::case_2_special;
          rep.special_factor = b;
          rep.d_matrix = s1.raw;
          rep.d_tag = s1.tag + " (coefficients absorbed into g)";
          rep.dstar_matrix = s3.raw;
          rep.dstar_tag = s3.tag + " (coefficient absorbed into g*)";
          rep.k2 = s3.index;
          rep.g = make_tag(s1.coef, -2.0 * s1.index, 0.0);
          {
            std::ostringstream os;
            os << s1.coef << " theta^" << -2.0 * s1.index << " + "
               << s2.coef * b << " theta^" << -2.0 * s2.index;
            rep.g.text = os.str();
          }
          rep.g_star = make_tag(s3.coef / s1.coef, -4.0, 0.0);
          {
            std::ostringstream os;
            os << s3.coef << " theta^" << -2.0 * s3.index << " / g(theta)";
            rep.g_star.text = os.str();
          }
        }
      }
    }
  } else if (!integer_matern) {
    // Noninteger matern smoothness: integer slots below nu, then the
    // fractional slot, which is necessarily nonsingular when it leads.
    const int floor_nu = static_cast<int>(std::floor(kernel.nu));
    int k1_pos = -1;
    for (int k = 0; k <= floor_nu; ++k) {
      if (slots[static_cast<size_t>(k)].non_null) {
        k1_pos = k;
        break;
      }
    }
    const int frac_pos = floor_nu + 1;  // position of the d^(2 nu) slot
    if (k1_pos < 0) {
      const Slot& lead = slots[static_cast<size_t>(frac_pos)];
      if (!lead.non_null)
        throw consistency_error("every projected slot through the fractional "
                                "one vanishes; W^T Sigma W cannot be positive "
                                "definite");
      const KernelSplit split = split_kernel(lead.projected, "the fractional slot projection");
      rep.rank_leading = split.rank;
      if (split.rank != rep.m)
        throw consistency_error("the leading fractional slot projection must "
                                "be nonsingular when all integer slots vanish");
      rep.case_label = ExpansionCase::case_1a;
      rep.k1 = kernel.nu;
      rep.k2 = -1.0;
      rep.d_matrix = lead.coef * lead.raw;
      rep.d_tag = lead.tag;
      rep.dstar_matrix = Eigen::MatrixXd::Zero(eff.n(), eff.n());
      rep.dstar_tag = "absent (remainder only)";
      rep.g = make_tag(1.0, -2.0 * kernel.nu, 0.0);
      // Remainder scale relative to g: the first integer power above nu when
      // its projection survives, otherwise the next fractional term, which
      // sits two full orders further out.
      double rel_power = -2.0;
      if (frac_pos + 1 < static_cast<int>(slots.size()) &&
          slots[static_cast<size_t>(frac_pos) + 1].non_null)
        rel_power = -2.0 * (std::floor(kernel.nu) + 1.0 - kernel.nu);
      rep.g_star = make_tag(1.0, rel_power, 0.0);
    } else {
      const Slot& s1 = slots[static_cast<size_t>(k1_pos)];
      const KernelSplit lead = split_kernel(s1.projected, "the leading slot projection");
      rep.rank_leading = lead.rank;
      int k2_pos = -1;
      if (lead.rank == rep.m) {
        k2_pos = (k1_pos < floor_nu) ? k1_pos + 1 : frac_pos;
        rep.case_label = ExpansionCase::case_1a;
      } else {
        for (int i = k1_pos + 1; i <= frac_pos; ++i) {
          if (slots[static_cast<size_t>(i)].non_null) {
            k2_pos = i;
            break;
          }
        }
        if (k2_pos < 0)
          throw consistency_error("no nonzero slot follows the singular leading "
                                  "slot through the fractional order");
        rep.case_label = pair_case(slots, k1_pos, k2_pos, rep.m);
      }
      const Slot& s2 = slots[static_cast<size_t>(k2_pos)];
      rep.k1 = s1.index;
      rep.k2 = s2.index;
      rep.d_matrix = s1.coef * s1.raw;
      rep.d_tag = s1.tag;
      rep.dstar_matrix = s2.coef * s2.raw;
      rep.dstar_tag = s2.tag;
      rep.g = make_tag(1.0, -2.0 * s1.index, 0.0);
      rep.g_star = make_tag(1.0, -2.0 * (s2.index - s1.index), 0.0);
    }
  } else {
    // Integer matern smoothness: power slots below nu, then the log-weighted
    // slot, then its plain companion.
    const int log_pos = nu_int;        // slots 0..nu-1 are the powers
    const int comp_pos = nu_int + 1;
    int k1_pos = -1;
    for (int k = 0; k <= log_pos; ++k) {
      if (slots[static_cast<size_t>(k)].non_null) {
        k1_pos = k;
        break;
      }
    }
    if (k1_pos < 0) {
      // All powers and the log-weighted slot vanish; the companion leads and
      // must be nonsingular for W^T Sigma W to stay positive definite.
      const Slot& lead = slots[static_cast<size_t>(comp_pos)];
      if (!lead.non_null)
        throw consistency_error("every projected slot through the companion "
                                "vanishes; W^T Sigma W cannot be positive "
                                "definite");
      const KernelSplit split = split_kernel(lead.projected, "the companion slot projection");
      rep.rank_leading = split.rank;
      if (split.rank != rep.m)
        throw consistency_error("the leading companion slot projection must be "
                                "nonsingular when all earlier slots vanish");
      rep.case_label = ExpansionCase::case_1a;
      rep.k1 = kernel.nu;
      rep.k2 = -1.0;
      rep.d_matrix = lead.coef * lead.raw;
      rep.d_tag = lead.tag;
      rep.dstar_matrix = Eigen::MatrixXd::Zero(eff.n(), eff.n());
      rep.dstar_tag = "absent (remainder only)";
      rep.g = make_tag(1.0, -2.0 * kernel.nu, 0.0);
      // Remainder scale relative to g: the next surviving power matrix, which
      // enters with one log(theta) factor from its own expansion order. Falls
      // back to theta^-1 if nothing survives through the examination cap.
      rep.g_star = make_tag(1.0, -1.0, 0.0);
      for (int j = nu_int + 1; j <= kSlotCap; ++j) {
        const Eigen::MatrixXd raw = entry_power_matrix(eff.design, 2.0 * j);
        Eigen::MatrixXd proj = eff.w.transpose() * raw * eff.w;
        proj = 0.5 * (proj + proj.transpose()).eval();
        std::ostringstream os;
        os << "d^" << 2 * j << " remainder matrix";
        if (!projection_null(proj, raw, os.str())) {
          rep.g_star = make_tag(1.0, -2.0 * (j - nu_int), 1.0);
          break;
        }
      }
    } else if (k1_pos == log_pos) {
      // The log-weighted slot leads; its companion is the only slot left.
      const Slot& s1 = slots[static_cast<size_t>(log_pos)];
      const Slot& s2 = slots[static_cast<size_t>(comp_pos)];
      const KernelSplit lead = split_kernel(s1.projected, "the log slot projection");
      rep.rank_leading = lead.rank;
      rep.case_label = ExpansionCase::matern_log_branch;
      rep.k1 = kernel.nu;
      rep.k2 = kernel.nu;
      rep.d_matrix = s1.coef * s1.raw;
      rep.d_tag = s1.tag;
      rep.dstar_matrix = s2.coef * s2.raw;
      rep.dstar_tag = s2.tag;
      rep.g = make_tag(1.0, -2.0 * kernel.nu, 1.0);
      rep.g_star = make_tag(1.0, 0.0, -1.0);
      if (lead.rank == rep.m) {
        rep.subcase = "1a";
      } else {
        rep.subcase = "1b";
        if (!s2.non_null)
          throw consistency_error("the companion slot projection vanishes "
                                  "although the log slot is singular");
        Eigen::MatrixXd accum = Eigen::MatrixXd::Zero(rep.m, rep.m);
        const Eigen::MatrixXd u1 = s1.projected / s1.projected.norm();
        const Eigen::MatrixXd u2 = s2.projected / s2.projected.norm();
        accum = u1 * u1 + u2 * u2;
        accum = 0.5 * (accum + accum.transpose()).eval();
        const KernelSplit both = split_kernel(accum, "the log and companion slots");
        if (both.kernel_basis.cols() > 0)
          throw consistency_error("the log and companion slot projections share "
                                  "a kernel direction, which contradicts the "
                                  "matern decay bound");
      }
    } else {
      // A plain power slot leads.
      const Slot& s1 = slots[static_cast<size_t>(k1_pos)];
      const KernelSplit lead = split_kernel(s1.projected, "the leading slot projection");
      rep.rank_leading = lead.rank;
      int k2_pos = -1;
      if (lead.rank == rep.m) {
        k2_pos = k1_pos + 1;  // next power or, at nu - 1, the log slot
        rep.case_label = ExpansionCase::case_1a;
      } else {
        for (int i = k1_pos + 1; i <= comp_pos; ++i) {
          if (slots[static_cast<size_t>(i)].non_null) {
            k2_pos = i;
            break;
          }
        }
        if (k2_pos < 0)
          throw consistency_error("no nonzero slot follows the singular leading "
                                  "slot through the companion order");
        rep.case_label = pair_case(slots, k1_pos, k2_pos, rep.m);
      }
      const Slot& s2 = slots[static_cast<size_t>(k2_pos)];
      rep.k1 = s1.index;
      rep.k2 = s2.index;
      rep.d_matrix = s1.coef * s1.raw;
      rep.d_tag = s1.tag;
      rep.dstar_matrix = s2.coef * s2.raw;
      rep.dstar_tag = s2.tag;
      rep.g = make_tag(1.0, -2.0 * s1.index, 0.0);
      rep.g_star = make_tag(1.0, s2.theta_power - s1.theta_power,
                            static_cast<double>(s2.log_theta));
    }
  }

  // Predicted large-theta envelopes, driven by the case label and the shape
  // of g*. The prior follows the derivative of g* in the nonsingular case and
  // the logarithmic derivative otherwise; the likelihood picks up the square
  // root of g* whenever the leading slot is singular.
  switch (rep.case_label) {
    case ExpansionCase::case_1a:
      if (rep.g_star.theta_power != 0.0) {
        rep.predicted_prior_exponent = rep.g_star.theta_power - 1.0;
        rep.predicted_prior_log_power = rep.g_star.log_power;
      } else {
        rep.predicted_prior_exponent = -1.0;
        rep.predicted_prior_log_power = rep.g_star.log_power - 1.0;
      }
      rep.predicted_lik_exponent = 0.0;
      rep.predicted_lik_log_power = 0.0;
      break;
    case ExpansionCase::case_1b:
      rep.predicted_prior_exponent = -1.0;
      rep.predicted_prior_log_power = 0.0;
      rep.predicted_lik_exponent = 0.5 * rep.g_star.theta_power;
      rep.predicted_lik_log_power = 0.5 * rep.g_star.log_power;
      break;
    case ExpansionCase::case_2_usual:
      if (rq_se) {
        rep.predicted_prior_exponent = 1.0;
        rep.predicted_prior_log_power = 0.0;
        rep.predicted_lik_exponent = -3.0;
        rep.predicted_lik_log_power = 0.0;
      } else {
        rep.predicted_prior_exponent = -1.0;
        rep.predicted_prior_log_power = 0.0;
        rep.predicted_lik_exponent = 0.5 * rep.g_star.theta_power;
        rep.predicted_lik_log_power = 0.5 * rep.g_star.log_power;
      }
      break;
    case ExpansionCase::case_2_special:
      rep.predicted_prior_exponent = -1.0;
      rep.predicted_prior_log_power = 0.0;
      rep.predicted_lik_exponent = -1.0;
      rep.predicted_lik_log_power = 0.0;
      break;
    case ExpansionCase::matern_log_branch:
      if (rep.subcase == "1a") {
        rep.predicted_prior_exponent = -1.0;
        rep.predicted_prior_log_power = -2.0;
        rep.predicted_lik_exponent = 0.0;
        rep.predicted_lik_log_power = 0.0;
      } else {
        rep.predicted_prior_exponent = -1.0;
        rep.predicted_prior_log_power = -1.0;
        rep.predicted_lik_exponent = 0.0;
        rep.predicted_lik_log_power = -0.5;
      }
      break;
  }
  return rep;
}

NondegeneracyReport nondegeneracy_check(const GpModel& model,
                                        const KernelSpec& kernel,
                                        const Eigen::VectorXd& y) {
  validate_scope(kernel);
  GpModel storage;
  const GpModel& eff = effective_model(model, kernel, storage);
  if (y.size() != eff.n())
    throw parameter_error("observation vector length must match the design size");
  if (!y.allFinite())
    throw parameter_error("observations must be finite");

  const std::vector<Slot> slots = build_slots(eff);
  const ChainResult chain = kernel_chain(slots, eff.m());

  NondegeneracyReport rep;
  rep.intersection_depth = chain.closing_index;
  rep.terminating_exponent = chain.terminating_exponent;
  rep.critical_basis = chain.critical;
  rep.critical_subspace_dim = static_cast<int>(chain.critical.cols());

  const Eigen::VectorXd v = eff.w.transpose() * y;
  const double vnorm = v.norm();
  if (vnorm <= 64.0 * std::numeric_limits<double>::epsilon() * y.norm() ||
      y.norm() == 0.0) {
    rep.passes = false;
    rep.margin = 0.0;
    return rep;
  }
  rep.margin = (chain.critical.transpose() * v).norm() / vnorm;
  rep.passes = rep.margin > 1e-8;
  return rep;
}

SlopeFit fit_tail_slope(const std::vector<double>& theta,
                        const std::vector<double>& log_f, bool with_log_log) {
  const size_t n = theta.size();
  if (n != log_f.size())
    throw parameter_error("theta and log f sample lists differ in length");
  if (n < 8) throw parameter_error("slope fit needs at least 8 nodes");
  double tmin = std::numeric_limits<double>::infinity();
  double tmax = 0.0;
  for (size_t i = 0; i < n; ++i) {
    if (!(theta[i] > 0.0) || !std::isfinite(theta[i]) || !std::isfinite(log_f[i]))
      throw parameter_error("slope fit needs finite positive theta and finite "
                            "log f values");
    tmin = std::min(tmin, theta[i]);
    tmax = std::max(tmax, theta[i]);
  }
  if (tmax / tmin < 100.0 * (1.0 - 1e-12))
    throw parameter_error("slope fit needs the theta grid to span at least "
                          "two decades");
  if (with_log_log && tmin <= 1.0)
    throw parameter_error("the log log(theta) regressor needs theta > 1 "
                          "throughout");

  const int cols = with_log_log ? 3 : 2;
  Eigen::MatrixXd x(n, cols);
  Eigen::VectorXd b(n);
  for (size_t i = 0; i < n; ++i) {
    const double lt = std::log(theta[i]);
    x(static_cast<Eigen::Index>(i), 0) = 1.0;
    x(static_cast<Eigen::Index>(i), 1) = lt;
    if (with_log_log) x(static_cast<Eigen::Index>(i), 2) = std::log(lt);
    b(static_cast<Eigen::Index>(i)) = log_f[i];
  }
  const Eigen::VectorXd coef = x.colPivHouseholderQr().solve(b);
  SlopeFit fit;
  fit.intercept = coef(0);
  fit.slope = coef(1);
  fit.log_log_coef = with_log_log ? coef(2) : 0.0;
  fit.with_log_log = with_log_log;
  fit.residual_rms = (x * coef - b).norm() / std::sqrt(static_cast<double>(n));
  return fit;
}

InverseNormReport inverse_norm_exponent(const GpModel& model,
                                        const KernelSpec& kernel,
                                        const std::vector<double>& thetas) {
  validate_scope(kernel);
  GpModel storage;
  const GpModel& eff = effective_model(model, kernel, storage);
  if (thetas.size() < 8)
    throw parameter_error("inverse-norm measurement needs at least 8 grid points");
  std::vector<double> grid = thetas;
  std::sort(grid.begin(), grid.end());
  if (!(grid.front() > 0.0))
    throw parameter_error("theta grid must be positive");

  InverseNormReport rep;
  std::vector<double> used;
  std::vector<double> log_inv;
  for (double theta : grid) {
    double lmin = 0.0;
    try {
      const CorrelationState state = make_correlation(eff, theta);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(state.sigma_w);
      if (es.info() != Eigen::Success) {
        rep.truncated = true;
        break;
      }
      lmin = es.eigenvalues().minCoeff();
    } catch (const not_positive_definite&) {
      rep.truncated = true;
      break;
    }
    if (!(lmin > 0.0)) {
      rep.truncated = true;
      break;
    }
    used.push_back(theta);
    log_inv.push_back(-std::log(lmin));
  }
  rep.points_used = static_cast<int>(used.size());
  if (rep.points_used < 8 ||
      used.back() / used.front() < 100.0 * (1.0 - 1e-12))
    throw consistency_error("fewer than 8 usable grid points spanning two "
                            "decades remain after positive-definiteness "
                            "truncation");
  rep.fit = fit_tail_slope(used, log_inv, false);
  rep.measured_exponent = rep.fit.slope;

  if (kernel.family == KernelFamily::matern) {
    rep.predicted_ceiling = 2.0 * kernel.nu;
  } else {
    const std::vector<Slot> slots = build_slots(eff);
    rep.predicted_ceiling = kernel_chain(slots, eff.m()).terminating_exponent;
  }
  return rep;
}

KernelTailMetadata kernel_tail_metadata(const KernelSpec& spec) {
  validate_kernel(spec);
  KernelTailMetadata meta;
  switch (spec.family) {
    case KernelFamily::spherical:
      meta.g0 = make_tag(-1.5, -1.0, 0.0);
      meta.remainder_power = -3.0;
      meta.q = 1.0;
      meta.d_nonsingular_generic = true;
      return meta;
    case KernelFamily::power_exponential:
      if (spec.q == 2.0) break;  // falls through to the squared-exponential row
      meta.g0 = make_tag(-1.0, -spec.q, 0.0);
      meta.remainder_power = -2.0 * spec.q;
      meta.q = spec.q;
      meta.d_nonsingular_generic = true;
      return meta;
    case KernelFamily::squared_exponential:
      break;
    case KernelFamily::rational_quadratic:
      meta.g0 = make_tag(-spec.nu, -2.0, 0.0);
      meta.remainder_power = -4.0;
      meta.q = 2.0;
      meta.d_nonsingular_generic = false;
      return meta;
    case KernelFamily::matern: {
      int nu_int = 0;
      if (spec.nu < 1.0) {
        const SeriesCoefficients sc = series_coefficients(spec, 1);
        meta.g0 = make_tag(sc.fractional_coef, -2.0 * spec.nu, 0.0);
        meta.remainder_power = -2.0;
        meta.q = 2.0 * spec.nu;
        meta.d_nonsingular_generic = true;
      } else if (is_integer_smoothness(spec.nu, &nu_int)) {
        const SeriesCoefficients sc = series_coefficients(spec, nu_int);
        if (nu_int == 1) {
          meta.g0 = make_tag(sc.log_coef, -2.0, 1.0);
          meta.remainder_power = -2.0;
        } else {
          meta.g0 = make_tag(sc.a[1], -2.0, 0.0);
          meta.remainder_power = -2.0 * std::min(2.0, spec.nu);
          if (nu_int == 2) meta.remainder_log_power = 1.0;
        }
        meta.q = 2.0;
        meta.d_nonsingular_generic = false;
      } else {
        const SeriesCoefficients sc = series_coefficients(spec, 1);
        meta.g0 = make_tag(sc.a[1], -2.0, 0.0);
        meta.remainder_power = -2.0 * std::min(2.0, spec.nu);
        meta.q = 2.0;
        meta.d_nonsingular_generic = false;
      }
      return meta;
    }
  }
  meta.g0 = make_tag(-1.0, -2.0, 0.0);
  meta.remainder_power = -4.0;
  meta.q = 2.0;
  meta.d_nonsingular_generic = false;
  return meta;
}

}  // namespace refprior
