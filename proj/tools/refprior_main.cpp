// Command-line front end: ingestion, computation, diagnostics, report
// emission. Exit codes: 0 success, 1 input/config error, 2 numerical
// contract violation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "refprior/asymptotics.hpp"
#include "refprior/design.hpp"
#include "refprior/errors.hpp"
#include "refprior/gp_model.hpp"
#include "refprior/io.hpp"
#include "refprior/kernels.hpp"
#include "refprior/objective.hpp"
#include "refprior/spectral.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace refprior;

namespace {

// Resolved run configuration. Precedence: command-line flags over config
// file over the defaults below.
struct RunConfig {
  std::string design_path;
  std::string obs_path;
  std::string kernel_family = "squared_exponential";
  double kernel_q = 1.0;
  double kernel_nu = 1.0;
  std::string kernel_parametrization = "hw94";
  std::string basis_name = "constant";
  RegressionBasis custom_basis;     // used only when basis_name == "custom"
  bool have_custom_basis = false;
  double theta_min = 0.0;           // <= 0 selects automatic bracketing
  double theta_max = 0.0;
  double rtol = 1e-6;
  int grid_points = 257;
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;                  // 0 selects machine parallelism
  std::string new_points_path;      // predict only
  std::string config_path;
  bool dump_config = false;
  bool force = false;
};

// JSON value for one report numeric: finite numbers stay numbers, the
// infinities become the tokens "inf" / "-inf", NaN is refused.
json jnum(double v) {
  if (std::isnan(v)) throw consistency_error("refusing to serialize NaN");
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return json(v);
}

json jvec(const std::vector<double>& values) {
  json arr = json::array();
  for (double v : values) arr.push_back(jnum(v));
  return arr;
}

KernelSpec kernel_from_config(const RunConfig& cfg) {
  KernelSpec spec;
  spec.family = family_from_string(cfg.kernel_family);
  spec.q = cfg.kernel_q;
  spec.nu = cfg.kernel_nu;
  if (cfg.kernel_parametrization == "hw94")
    spec.parametrization = MaternVariant::hw94;
  else if (cfg.kernel_parametrization == "bdos")
    spec.parametrization = MaternVariant::bdos;
  else
    throw input_error("parametrization must be \"hw94\" or \"bdos\", got \"" +
                      cfg.kernel_parametrization + "\"");
  validate_kernel(spec);
  return spec;
}

RegressionBasis basis_from_config(const RunConfig& cfg) {
  if (cfg.basis_name == "custom") {
    if (!cfg.have_custom_basis)
      throw input_error(
          "basis \"custom\" needs monomial exponent lists; supply them "
          "through the config file's \"basis\" object");
    return cfg.custom_basis;
  }
  return basis_from_string(cfg.basis_name);
}

// Config-file "basis" entry: either a keyword string or an object
// {"monomials": [[e11,...],[e21,...],...], "combination"?: [[...],...]}.
void apply_basis_entry(const json& entry, RunConfig* cfg) {
  if (entry.is_string()) {
    cfg->basis_name = entry.get<std::string>();
    return;
  }
  if (!entry.is_object())
    throw input_error("config \"basis\" must be a keyword or an object");
  RegressionBasis basis;
  basis.kind = BasisKind::custom;
  bool have_monomials = false;
  for (const auto& [key, value] : entry.items()) {
    if (key == "monomials") {
      if (!value.is_array() || value.empty())
        throw input_error("config basis.monomials must be a nonempty array");
      for (const auto& row : value) {
        if (!row.is_array())
          throw input_error("config basis.monomials entries must be arrays");
        basis.monomials.push_back(row.get<std::vector<int>>());
      }
      have_monomials = true;
    } else if (key == "combination") {
      const auto rows = value.get<std::vector<std::vector<double>>>();
      if (rows.empty() || rows.front().empty())
        throw input_error("config basis.combination must be a 2d array");
      basis.combination.resize(static_cast<long>(rows.size()),
                               static_cast<long>(rows.front().size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows.front().size())
          throw input_error("config basis.combination rows differ in length");
        for (std::size_t j = 0; j < rows[i].size(); ++j)
          basis.combination(static_cast<long>(i), static_cast<long>(j)) =
              rows[i][j];
      }
    } else {
      throw input_error("unknown config basis field: " + key);
    }
  }
  if (!have_monomials)
    throw input_error("config basis object is missing \"monomials\"");
  cfg->basis_name = "custom";
  cfg->custom_basis = basis;
  cfg->have_custom_basis = true;
}

void apply_config_file(const std::string& path, RunConfig* cfg) {
  json obj;
  try {
    obj = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw input_error(path + ": not valid JSON: " + e.what());
  }
  if (!obj.is_object()) throw input_error(path + ": config must be an object");
  for (const auto& [key, value] : obj.items()) {
    try {
      if (key == "design") cfg->design_path = value.get<std::string>();
      else if (key == "obs") cfg->obs_path = value.get<std::string>();
      else if (key == "kernel") {
        if (value.is_string()) {
          cfg->kernel_family = value.get<std::string>();
        } else {
          KernelSpec spec = kernel_spec_from_json(value.dump());
          cfg->kernel_family = to_string(spec.family);
          cfg->kernel_q = spec.q;
          cfg->kernel_nu = spec.nu;
          cfg->kernel_parametrization =
              spec.parametrization == MaternVariant::hw94 ? "hw94" : "bdos";
        }
      } else if (key == "basis") apply_basis_entry(value, cfg);
      else if (key == "theta_min") cfg->theta_min = value.get<double>();
      else if (key == "theta_max") cfg->theta_max = value.get<double>();
      else if (key == "rtol") cfg->rtol = value.get<double>();
      else if (key == "grid") cfg->grid_points = value.get<int>();
      else if (key == "output_dir") cfg->output_dir = value.get<std::string>();
      else if (key == "seed") cfg->seed = value.get<std::uint64_t>();
      else if (key == "threads") cfg->threads = value.get<int>();
      else if (key == "new_points") cfg->new_points_path = value.get<std::string>();
      else if (key == "force") cfg->force = value.get<bool>();
      else throw input_error(path + ": unknown config field: " + key);
    } catch (const json::exception& e) {
      throw input_error(path + ": field \"" + key + "\": " + e.what());
    }
  }
}

json resolved_config(const RunConfig& cfg) {
  json out;
  out["design"] = cfg.design_path;
  out["obs"] = cfg.obs_path;
  out["kernel"] = json::parse(kernel_spec_to_json(kernel_from_config(cfg)));
  if (cfg.basis_name == "custom") {
    json b;
    b["monomials"] = cfg.custom_basis.monomials;
    if (cfg.custom_basis.combination.size() > 0) {
      json rows = json::array();
      for (long i = 0; i < cfg.custom_basis.combination.rows(); ++i) {
        json row = json::array();
        for (long j = 0; j < cfg.custom_basis.combination.cols(); ++j)
          row.push_back(jnum(cfg.custom_basis.combination(i, j)));
        rows.push_back(row);
      }
      b["combination"] = rows;
    }
    out["basis"] = b;
  } else {
    out["basis"] = cfg.basis_name;
  }
  out["theta_min"] = jnum(cfg.theta_min);
  out["theta_max"] = jnum(cfg.theta_max);
  out["rtol"] = jnum(cfg.rtol);
  out["grid"] = cfg.grid_points;
  out["output_dir"] = cfg.output_dir;
  out["seed"] = cfg.seed;
  out["threads"] = cfg.threads;
  out["new_points"] = cfg.new_points_path;
  out["force"] = cfg.force;
  return out;
}

int resolved_threads(const RunConfig& cfg) {
  if (cfg.threads > 0) return cfg.threads;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Deterministic parallel map over node indices: slot i is written by
// exactly one worker, so the result is independent of scheduling.
template <class Fn>
void parallel_nodes(int count, int workers, Fn&& fn) {
  workers = std::max(1, std::min(workers, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const int chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(count, begin + chunk);
    if (begin < end)
      pool.emplace_back([&fn, begin, end] {
        for (int i = begin; i < end; ++i) fn(i);
      });
  }
  for (auto& th : pool) th.join();
}

struct Workspace {
  fs::path dir;
  std::vector<std::string> outputs;  // file names relative to dir

  explicit Workspace(const std::string& output_dir) : dir(output_dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw input_error("cannot create output dir: " + output_dir +
                              " (" + ec.message() + ")");
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  void add(const std::string& name) { outputs.push_back(name); }
  void write_json(const std::string& name, const json& body) {
    write_text_file(path(name), body.dump(2) + "\n");
    add(name);
  }
  void write_manifest(const std::string& command, const RunConfig& cfg,
                      const std::string& status) {
    json man;
    man["command"] = command;
    man["config"] = resolved_config(cfg);
    std::vector<std::string> sorted = outputs;
    std::sort(sorted.begin(), sorted.end());
    man["outputs"] = sorted;
    man["status"] = status;
    write_text_file(path("manifest.json"), man.dump(2) + "\n");
  }
};

struct LoadedModel {
  DesignSet design;
  KernelSpec kernel;
  GpModel model;
};

LoadedModel load_model(const RunConfig& cfg) {
  if (cfg.design_path.empty())
    throw input_error("--design is required for this command");
  LoadedModel out;
  out.design = make_design(read_csv_matrix(cfg.design_path));
  out.kernel = kernel_from_config(cfg);
  RegressionBasis basis = basis_from_config(cfg);
  out.model = make_model(out.design, out.kernel, basis);
  log_note(1, "model: n=" + std::to_string(out.model.n()) +
                  " p=" + std::to_string(out.model.p()) +
                  " kernel=" + to_string(out.kernel.family));
  return out;
}

Eigen::VectorXd load_observations(const RunConfig& cfg, const GpModel& model) {
  if (cfg.obs_path.empty())
    throw input_error("--obs is required for this command");
  Eigen::VectorXd y = read_csv_vector(cfg.obs_path);
  if (y.size() != model.n())
    throw input_error("observations have " + std::to_string(y.size()) +
                      " rows but the design has " + std::to_string(model.n()));
  return y;
}

// The large-theta machinery handles these kernels; for the others the
// nondegeneracy gate and expansion diagnostics are unavailable.
bool expansion_supported(const KernelSpec& spec) {
  switch (spec.family) {
    case KernelFamily::squared_exponential:
    case KernelFamily::rational_quadratic:
      return true;
    case KernelFamily::matern:
      return spec.nu >= 1.0 && spec.nu <= 12.0;
    default:
      return false;
  }
}

json nondegeneracy_to_json(const NondegeneracyReport& rep) {
  json out;
  out["passes"] = rep.passes;
  out["margin"] = jnum(rep.margin);
  out["critical_subspace_dim"] = rep.critical_subspace_dim;
  out["intersection_depth"] = rep.intersection_depth;
  out["terminating_exponent"] = jnum(rep.terminating_exponent);
  return out;
}

// Shared gate for the observation-driven commands. Returns false (after
// writing the report and the manifest) when the run must stop with exit 2.
bool pass_nondegeneracy_gate(const LoadedModel& lm, const Eigen::VectorXd& y,
                             const RunConfig& cfg, Workspace* ws,
                             const std::string& command) {
  if (!expansion_supported(lm.kernel)) {
    log_note(1, "nondegeneracy gate skipped: kernel outside the expansion "
                "machinery");
    return true;
  }
  NondegeneracyReport rep = nondegeneracy_check(lm.model, lm.kernel, y);
  if (rep.passes) return true;
  ws->write_json("nondegeneracy.json", nondegeneracy_to_json(rep));
  ws->write_manifest(command, cfg, "nondegenerate: failed");
  if (cfg.force) {
    log_note(1, "nondegeneracy check failed; continuing under --force");
    return true;
  }
  std::cerr << "error: nondegeneracy check failed (margin "
            << format_numeric(rep.margin)
            << "): the observations are numerically degenerate for this "
               "design and basis, so the posterior-mass argument is not "
               "observable; rerun with --force to override\n";
  return false;
}

// theta grid for curve export when no observations drive the bracketing.
std::pair<double, double> prior_bounds(const RunConfig& cfg,
                                       const DesignSet& design) {
  double lo = cfg.theta_min;
  double hi = cfg.theta_max;
  if (lo <= 0.0) lo = 1e-3 * design.median_distance;
  if (hi <= 0.0) hi = 1e3 * design.median_distance;
  if (!(lo < hi))
    throw input_error("theta bounds must satisfy 0 < theta_min < theta_max");
  return {lo, hi};
}

int run_prior(const RunConfig& cfg) {
  Workspace ws(cfg.output_dir);
  LoadedModel lm = load_model(cfg);
  if (lm.model.m() < 2)
    throw identifiability_error(
        "the objective prior needs at least two complement dimensions "
        "(n - p >= 2)");
  auto [lo, hi] = prior_bounds(cfg, lm.design);
  const int g = std::max(2, cfg.grid_points);

  Eigen::MatrixXd curve(g, 2);
  const double ua = std::log(lo), ub = std::log(hi);
  parallel_nodes(g, resolved_threads(cfg), [&](int i) {
    const double theta = std::exp(ua + (ub - ua) * i / (g - 1));
    curve(i, 0) = theta;
    try {
      const auto state = make_correlation(lm.model, theta);
      curve(i, 1) = log_reference_prior(lm.model, state);
    } catch (const not_positive_definite&) {
      curve(i, 1) = -std::numeric_limits<double>::infinity();
    }
  });
  write_csv(ws.path("prior.csv"), {"theta", "log_prior"}, curve);
  ws.add("prior.csv");
  ws.write_manifest("prior", cfg, "ok");
  return 0;
}

PosteriorOptions posterior_options(const RunConfig& cfg) {
  PosteriorOptions opt;
  opt.theta_min = cfg.theta_min;
  opt.theta_max = cfg.theta_max;
  opt.rel_tol = cfg.rtol;
  opt.grid_points = std::max(3, cfg.grid_points);
  opt.threads = resolved_threads(cfg);
  return opt;
}

void write_posterior_outputs(const PosteriorCurve& curve, Workspace* ws) {
  const long g = static_cast<long>(curve.theta.size());
  Eigen::MatrixXd table(g, 5);
  for (long i = 0; i < g; ++i) {
    const auto k = static_cast<std::size_t>(i);
    table(i, 0) = curve.theta[k];
    table(i, 1) = curve.log_prior[k];
    table(i, 2) = curve.log_lik[k];
    table(i, 3) = curve.log_post[k];
    const double dens = curve.log_post[k] - curve.log_normalizer;
    table(i, 4) = std::isinf(dens) ? 0.0 : std::exp(dens);
  }
  write_csv(ws->path("posterior.csv"),
            {"theta", "log_prior", "log_lik", "log_post", "post_density"},
            table);
  ws->add("posterior.csv");

  json rep;
  rep["log_normalizer"] = jnum(curve.log_normalizer);
  rep["theta_min"] = jnum(curve.theta_min);
  rep["theta_max"] = jnum(curve.theta_max);
  rep["left_tail_bound"] = jnum(curve.left_tail_bound);
  rep["right_tail_bound"] = jnum(curve.right_tail_bound);
  rep["function_evals"] = curve.function_evals;
  rep["truncated_by_pd_failure"] = curve.truncated_by_pd_failure;
  rep["pd_failure_theta"] = jnum(curve.pd_failure_theta);
  ws->write_json("posterior.json", rep);
}

int run_posterior(const RunConfig& cfg) {
  Workspace ws(cfg.output_dir);
  LoadedModel lm = load_model(cfg);
  Eigen::VectorXd y = load_observations(cfg, lm.model);
  if (!pass_nondegeneracy_gate(lm, y, cfg, &ws, "posterior")) return 2;
  PosteriorCurve curve = build_posterior_curve(lm.model, y, posterior_options(cfg));
  write_posterior_outputs(curve, &ws);
  ws.write_manifest("posterior", cfg, "ok");
  return 0;
}

int run_predict(const RunConfig& cfg) {
  Workspace ws(cfg.output_dir);
  LoadedModel lm = load_model(cfg);
  Eigen::VectorXd y = load_observations(cfg, lm.model);
  if (cfg.new_points_path.empty())
    throw input_error("predict requires --new-points");
  Eigen::MatrixXd new_points = read_csv_matrix(cfg.new_points_path);
  if (new_points.cols() != lm.design.dim())
    throw input_error("new points have " + std::to_string(new_points.cols()) +
                      " columns but the design has " +
                      std::to_string(lm.design.dim()));
  if (!pass_nondegeneracy_gate(lm, y, cfg, &ws, "predict")) return 2;

  PosteriorCurve curve = build_posterior_curve(lm.model, y, posterior_options(cfg));
  PredictionResult pred = predict(lm.model, y, curve, new_points, {0.95});

  const long k = new_points.rows();
  const long r = new_points.cols();
  Eigen::MatrixXd table(k, r + 3);
  table.leftCols(r) = new_points;
  table.col(r) = pred.mean;
  table.col(r + 1) = pred.quantiles.col(0);
  table.col(r + 2) = pred.quantiles.col(1);
  std::vector<std::string> columns;
  for (long j = 0; j < r; ++j) columns.push_back("x" + std::to_string(j + 1));
  columns.insert(columns.end(), {"mean", "lo95", "hi95"});
  write_csv(ws.path("predictions.csv"), columns, table);
  ws.add("predictions.csv");

  write_posterior_outputs(curve, &ws);
  ws.write_manifest("predict", cfg, "ok");
  return 0;
}

int run_map(const RunConfig& cfg) {
  Workspace ws(cfg.output_dir);
  LoadedModel lm = load_model(cfg);
  Eigen::VectorXd y = load_observations(cfg, lm.model);
  if (!pass_nondegeneracy_gate(lm, y, cfg, &ws, "map")) return 2;
  PosteriorCurve curve = build_posterior_curve(lm.model, y, posterior_options(cfg));
  MapResult mode = map_theta(lm.model, y, curve);

  json rep;
  rep["theta"] = jnum(mode.theta);
  rep["log_post"] = jnum(mode.log_post);
  rep["at_boundary"] = mode.at_boundary;
  rep["log_normalizer"] = jnum(curve.log_normalizer);
  ws.write_json("map.json", rep);
  ws.write_manifest("map", cfg, "ok");
  return 0;
}

json power_law_to_json(const PowerLawTag& tag) {
  json out;
  out["theta_power"] = jnum(tag.theta_power);
  out["log_power"] = jnum(tag.log_power);
  out["coef"] = jnum(tag.coef);
  out["text"] = tag.text;
  return out;
}

json expansion_to_json(const ExpansionReport& rep) {
  json out;
  out["case"] = to_string(rep.case_label);
  out["subcase"] = rep.subcase;
  out["k1"] = jnum(rep.k1);
  out["k2"] = jnum(rep.k2);
  out["d_tag"] = rep.d_tag;
  out["dstar_tag"] = rep.dstar_tag;
  out["g"] = power_law_to_json(rep.g);
  out["g_star"] = power_law_to_json(rep.g_star);
  out["m"] = rep.m;
  out["rank_leading"] = rep.rank_leading;
  out["special_factor"] = jnum(rep.special_factor);
  out["predicted_prior_exponent"] = jnum(rep.predicted_prior_exponent);
  out["predicted_prior_log_power"] = jnum(rep.predicted_prior_log_power);
  out["predicted_lik_exponent"] = jnum(rep.predicted_lik_exponent);
  out["predicted_lik_log_power"] = jnum(rep.predicted_lik_log_power);
  return out;
}

json spectrum_to_json(const SignedSpectrum& spec) {
  json out;
  out["n_positive"] = spec.n_positive;
  out["n_negative"] = spec.n_negative;
  out["n_zero"] = spec.n_zero;
  out["tolerance"] = jnum(spec.tolerance);
  out["eigenvalues"] = jvec(spec.eigenvalues);
  return out;
}

// Measured-vs-predicted decay of one curve on a large-theta grid. The fit
// is skipped (fit = false) when fewer than 8 nodes survive factorization.
json slope_entry(const std::vector<double>& thetas,
                 const std::vector<double>& values, double predicted,
                 double predicted_log_power, double margin, bool* violated) {
  std::vector<double> ts, vs;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::isfinite(values[i])) {
      ts.push_back(thetas[i]);
      vs.push_back(values[i]);
    }
  }
  json out;
  out["predicted_exponent"] = jnum(predicted);
  out["predicted_log_power"] = jnum(predicted_log_power);
  out["margin"] = jnum(margin);
  if (ts.size() < 8 || ts.back() < 100.0 * ts.front()) {
    out["fit"] = false;
    out["pass"] = false;
    return out;
  }
  const bool with_log_log = predicted_log_power != 0.0 && ts.front() > 1.0;
  SlopeFit fit = fit_tail_slope(ts, vs, with_log_log);
  const bool pass = fit.slope <= predicted + margin;
  out["fit"] = true;
  out["measured_slope"] = jnum(fit.slope);
  out["log_log_coef"] = jnum(fit.log_log_coef);
  out["residual_rms"] = jnum(fit.residual_rms);
  out["points_used"] = static_cast<int>(ts.size());
  out["pass"] = pass;
  if (!pass) *violated = true;
  return out;
}

int run_diagnose(const RunConfig& cfg) {
  Workspace ws(cfg.output_dir);
  LoadedModel lm = load_model(cfg);
  Eigen::VectorXd y = load_observations(cfg, lm.model);
  if (!expansion_supported(lm.kernel))
    throw input_error(
        "diagnose needs a squared_exponential, rational_quadratic or "
        "matern (1 <= nu <= 12) kernel");

  json rep;
  KernelTailMetadata meta = kernel_tail_metadata(lm.kernel);
  rep["distance_power"] = jnum(meta.q);
  rep["signed_spectrum"] =
      spectrum_to_json(signed_spectrum(distance_power_matrix(lm.design, meta.q)));

  ExpansionReport expansion = expansion_report(lm.model, lm.kernel);
  rep["expansion"] = expansion_to_json(expansion);

  NondegeneracyReport nondeg = nondegeneracy_check(lm.model, lm.kernel, y);
  rep["nondegeneracy"] = nondegeneracy_to_json(nondeg);
  bool violated = !nondeg.passes && !cfg.force;

  // Tail regime: two decades, clear of the series-path switch point.
  const double lo = std::max(100.0, 25.0 * lm.design.max_distance);
  const double hi = 100.0 * lo;
  const int nodes = 17;
  std::vector<double> thetas(nodes), prior(nodes), lik(nodes);
  for (int i = 0; i < nodes; ++i) {
    thetas[static_cast<std::size_t>(i)] =
        lo * std::pow(hi / lo, static_cast<double>(i) / (nodes - 1));
    auto& lp = prior[static_cast<std::size_t>(i)];
    auto& ll = lik[static_cast<std::size_t>(i)];
    try {
      const auto state =
          make_correlation(lm.model, thetas[static_cast<std::size_t>(i)]);
      lp = log_reference_prior(lm.model, state);
      ll = log_integrated_likelihood(lm.model, state, y);
    } catch (const not_positive_definite&) {
      lp = ll = std::numeric_limits<double>::quiet_NaN();
    }
  }
  const double margin = 0.15;
  json fits;
  fits["theta_lo"] = jnum(lo);
  fits["theta_hi"] = jnum(hi);
  fits["prior"] = slope_entry(thetas, prior, expansion.predicted_prior_exponent,
                              expansion.predicted_prior_log_power, margin,
                              &violated);
  fits["likelihood"] =
      slope_entry(thetas, lik, expansion.predicted_lik_exponent,
                  expansion.predicted_lik_log_power, margin, &violated);

  InverseNormReport inv = inverse_norm_exponent(lm.model, lm.kernel, thetas);
  json invj;
  invj["measured_exponent"] = jnum(inv.measured_exponent);
  invj["predicted_ceiling"] = jnum(inv.predicted_ceiling);
  invj["points_used"] = inv.points_used;
  invj["truncated"] = inv.truncated;
  const bool inv_pass = inv.measured_exponent <= inv.predicted_ceiling + margin;
  invj["pass"] = inv_pass;
  if (!inv_pass) violated = true;
  fits["inverse_norm"] = invj;
  rep["tail_fits"] = fits;
  rep["bounds_violated"] = violated;

  ws.write_json("diagnose.json", rep);
  ws.write_manifest("diagnose", cfg, violated ? "bounds violated" : "ok");
  if (violated) {
    std::cerr << "error: diagnose found a predicted bound violated "
                 "(see diagnose.json)\n";
    return 2;
  }
  return 0;
}

// ---- validate: built-in corpus -------------------------------------------

DesignSet corpus_line() {
  Eigen::MatrixXd pts(5, 1);
  pts << 0.0, 0.7, 1.3, 2.4, 3.1;
  return make_design(pts);
}

DesignSet corpus_plane() {
  Eigen::MatrixXd pts(5, 2);
  pts << 0.0, 0.0, 0.9, 0.2, 0.4, 1.1, 1.6, 0.7, 1.2, 1.8;
  return make_design(pts);
}

std::vector<std::pair<std::string, KernelSpec>> corpus_kernels() {
  KernelSpec se;
  se.family = KernelFamily::squared_exponential;
  KernelSpec rq;
  rq.family = KernelFamily::rational_quadratic;
  rq.nu = 1.2;
  KernelSpec mat;
  mat.family = KernelFamily::matern;
  mat.nu = 1.5;
  return {{"se", se}, {"rq_1.2", rq}, {"matern_1.5", mat}};
}

json validate_identities(bool* all_pass) {
  json table = json::array();
  // theta = 10 sits deep in the flat regime where the correlation matrix
  // conditioning costs a few digits; the thresholds allow for that.
  const double rel_tol = 1e-8;
  const double logdet_tol = 1e-8;
  for (const auto& [dname, design] : {std::pair<std::string, DesignSet>{
                                          "line5", corpus_line()},
                                      {"plane5", corpus_plane()}}) {
    for (const auto& [kname, spec] : corpus_kernels()) {
      GpModel model = make_model(design, spec, basis_from_string("constant"));
      for (double theta : {0.5, 2.0, 10.0}) {
        const auto state = make_correlation(model, theta);
        IdentityResiduals res = verify_identities(model, state);
        const bool pass = res.a1 <= rel_tol * std::max(res.a1_scale, 1.0) &&
                          res.logdet <= logdet_tol;
        json row;
        row["design"] = dname;
        row["kernel"] = kname;
        row["theta"] = jnum(theta);
        row["projector_residual"] = jnum(res.a1);
        row["projector_scale"] = jnum(res.a1_scale);
        row["logdet_residual"] = jnum(res.logdet);
        row["pass"] = pass;
        table.push_back(row);
        if (!pass) *all_pass = false;
      }
    }
  }
  return table;
}

json validate_spectral(std::uint64_t seed, bool* all_pass) {
  json table = json::array();
  DesignSet line = corpus_line();
  Eigen::VectorXd xi(5);
  xi << 1.0, -1.0, 2.0, 0.5, -0.3;
  for (const auto& [kname, spec] : corpus_kernels()) {
    for (double theta : {0.5, 2.0}) {
      SpectralReport rep = spectral_quadratic_form(spec, line, xi, theta);
      const bool pass = rep.rel_error < 1e-4;
      json row;
      row["check"] = "quadratic_form";
      row["kernel"] = kname;
      row["theta"] = jnum(theta);
      row["rel_error"] = jnum(rep.rel_error);
      row["nodes"] = rep.nodes;
      row["pass"] = pass;
      table.push_back(row);
      if (!pass) *all_pass = false;
    }
  }

  // One sampled check in dimension two, honest error bar instead of a
  // deterministic tolerance.
  DesignSet plane = corpus_plane();
  Eigen::VectorXd xi2(5);
  xi2 << 0.8, -0.4, 1.1, -1.3, 0.6;
  KernelSpec se;
  se.family = KernelFamily::squared_exponential;
  SpectralOptions opt;
  opt.mc_samples = 100000;
  opt.seed = seed == 0 ? 20260814 : seed;
  SpectralReport mc = spectral_quadratic_form(se, plane, xi2, 1.0, opt);
  const bool mc_pass =
      std::abs(mc.quadratic_form_spectral - mc.quadratic_form_direct) <=
      6.0 * mc.std_error + 1e-12;
  json row;
  row["check"] = "quadratic_form_mc";
  row["kernel"] = "se";
  row["theta"] = jnum(1.0);
  row["std_error"] = jnum(mc.std_error);
  row["abs_error"] = jnum(
      std::abs(mc.quadratic_form_spectral - mc.quadratic_form_direct));
  row["pass"] = mc_pass;
  table.push_back(row);
  if (!mc_pass) *all_pass = false;
  return table;
}

json validate_bounds(bool* all_pass) {
  json table = json::array();
  DesignSet line = corpus_line();
  for (const auto& [kname, spec] : corpus_kernels()) {
    GpModel model = make_model(line, spec, basis_from_string("constant"));
    for (double theta : {0.5, 2.0, 10.0, 40.0 * line.max_distance}) {
      FMatrixReport rep = f_matrix_check(model, spec, theta);
      bool pass = rep.passes;
      json row;
      row["design"] = "line5";
      row["kernel"] = kname;
      row["theta"] = jnum(theta);
      row["f_min_eigenvalue"] = jnum(rep.f_min_eigenvalue);
      row["t2"] = jnum(rep.t2);
      row["family_bound"] = jnum(rep.family_bound);
      row["bound_in_force"] = rep.bound_in_force;

      // Pointwise prior ceiling through the pencil top eigenvalue.
      const auto state = make_correlation(model, theta);
      const double log_prior = log_reference_prior(model, state);
      const double ceiling = std::log(model.m() * rep.t2);
      row["log_prior"] = jnum(log_prior);
      row["log_ceiling"] = jnum(ceiling);
      if (!(log_prior <= ceiling + 1e-8)) pass = false;
      row["pass"] = pass;
      table.push_back(row);
      if (!pass) *all_pass = false;
    }
  }
  return table;
}

int run_validate(const RunConfig& cfg, bool do_identities, bool do_spectral,
                 bool do_bounds) {
  Workspace ws(cfg.output_dir);
  bool all_pass = true;
  json rep;
  if (do_identities) rep["identities"] = validate_identities(&all_pass);
  if (do_spectral) rep["spectral"] = validate_spectral(cfg.seed, &all_pass);
  if (do_bounds) rep["bounds"] = validate_bounds(&all_pass);
  rep["passed"] = all_pass;

  const std::string text = rep.dump(2) + "\n";
  std::cout << text;
  write_text_file(ws.path("validate.json"), text);
  ws.add("validate.json");
  ws.write_manifest("validate", cfg, all_pass ? "ok" : "failed");
  if (!all_pass) {
    std::cerr << "error: validation suite found violations "
                 "(see validate.json)\n";
    return 2;
  }
  return 0;
}

int dispatch(const RunConfig& cfg, const std::string& command,
             bool do_identities, bool do_spectral, bool do_bounds) {
  if (cfg.dump_config) {
    std::cout << resolved_config(cfg).dump(2) << "\n";
    return 0;
  }
  if (command == "prior") return run_prior(cfg);
  if (command == "posterior") return run_posterior(cfg);
  if (command == "predict") return run_predict(cfg);
  if (command == "map") return run_map(cfg);
  if (command == "diagnose") return run_diagnose(cfg);
  if (command == "validate")
    return run_validate(cfg, do_identities, do_spectral, do_bounds);
  throw input_error("unknown command: " + command);
}

void add_common_options(CLI::App* cmd, RunConfig* cfg) {
  cmd->add_option("--design", cfg->design_path,
                  "design CSV, n rows by r columns, header optional");
  cmd->add_option("--obs", cfg->obs_path, "observation CSV, single column");
  cmd->add_option("--kernel", cfg->kernel_family,
                  "kernel family: se | rq | matern | power_exponential | "
                  "spherical");
  cmd->add_option("--q", cfg->kernel_q, "power_exponential exponent in (0,2]");
  cmd->add_option("--nu", cfg->kernel_nu, "rq / matern smoothness");
  cmd->add_option("--parametrization", cfg->kernel_parametrization,
                  "matern argument convention: hw94 | bdos");
  cmd->add_option("--basis", cfg->basis_name,
                  "trend basis: none | constant | linear | custom");
  cmd->add_option("--theta-min", cfg->theta_min,
                  "lower theta bound; <= 0 selects automatic bracketing");
  cmd->add_option("--theta-max", cfg->theta_max,
                  "upper theta bound; <= 0 selects automatic bracketing");
  cmd->add_option("--rtol", cfg->rtol, "quadrature relative tolerance");
  cmd->add_option("--grid", cfg->grid_points, "exported curve resolution");
  cmd->add_option("--output-dir", cfg->output_dir, "report directory");
  cmd->add_option("--seed", cfg->seed, "seed for sampled checks");
  cmd->add_option("--threads", cfg->threads,
                  "worker threads for theta-node evaluation; 0 = machine "
                  "parallelism");
  cmd->add_option("--config", cfg->config_path,
                  "JSON config file; explicit flags win over its fields");
  cmd->add_flag("--dump-config", cfg->dump_config,
                "print the resolved configuration and exit");
  cmd->add_flag("--force", cfg->force,
                "proceed past a failed nondegeneracy gate");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  RunConfig cfg;

  // The config file must be applied before the flag pass so that flags win;
  // find it with a pre-scan.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) cfg.config_path = argv[i + 1];
    else if (arg.rfind("--config=", 0) == 0) cfg.config_path = arg.substr(9);
  }

  CLI::App app{
      "Objective Bayes for isotropic Gaussian-process regression: reference "
      "prior, integrated likelihood, posterior and diagnostics over the "
      "correlation length."};
  app.require_subcommand(1);

  CLI::App* prior = app.add_subcommand(
      "prior", "unnormalized log reference prior on a theta grid");
  CLI::App* posterior = app.add_subcommand(
      "posterior", "normalized posterior curve and quadrature report");
  CLI::App* predict = app.add_subcommand(
      "predict", "posterior-mixture prediction at new locations");
  CLI::App* map_cmd =
      app.add_subcommand("map", "posterior mode of the correlation length");
  CLI::App* diagnose = app.add_subcommand(
      "diagnose", "large-theta structure, nondegeneracy and tail-slope checks");
  CLI::App* validate = app.add_subcommand(
      "validate", "identity, spectral and bound suites on the built-in corpus");
  for (CLI::App* cmd : {prior, posterior, predict, map_cmd, diagnose, validate})
    add_common_options(cmd, &cfg);
  predict->add_option("--new-points", cfg.new_points_path,
                      "CSV of prediction locations, r columns");

  bool v_all = false, v_identities = false, v_spectral = false,
       v_bounds = false;
  validate->add_flag("--all", v_all, "run every suite (default)");
  validate->add_flag("--identities", v_identities,
                     "projector / determinant identity residuals");
  validate->add_flag("--spectral", v_spectral,
                     "frequency-domain quadratic-form checks");
  validate->add_flag("--bounds", v_bounds,
                     "derivative-domination and prior-ceiling checks");

  try {
    if (!cfg.config_path.empty()) apply_config_file(cfg.config_path, &cfg);
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      std::cout << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      std::cerr << "error: " << e.what() << "\n\n" << app.help();
      return 1;
    }
    const std::string command = app.get_subcommands().front()->get_name();
    if (command == "validate" && !v_identities && !v_spectral && !v_bounds)
      v_all = true;
    return dispatch(cfg, command, v_all || v_identities, v_all || v_spectral,
                    v_all || v_bounds);
  } catch (const input_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const numeric_error& e) {
    std::cerr << "numerical contract violation: " << e.what() << "\n";
    return 2;
  }
}

int main(int argc, char** argv) { return run_cli(argc, argv); }
