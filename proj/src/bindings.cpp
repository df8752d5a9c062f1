// Python surface: model assembly, prior / likelihood / posterior curves,
// prediction, nondegeneracy and large-theta diagnostics, and the
// frequency-domain cross-check.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "refprior/asymptotics.hpp"
#include "refprior/design.hpp"
#include "refprior/errors.hpp"
#include "refprior/gp_model.hpp"
#include "refprior/kernels.hpp"
#include "refprior/objective.hpp"
#include "refprior/spectral.hpp"

namespace py = pybind11;
using namespace refprior;

namespace {

KernelSpec spec_from_object(const py::object& kernel) {
  KernelSpec spec;
  if (py::isinstance<py::str>(kernel)) {
    spec.family = family_from_string(kernel.cast<std::string>());
  } else if (py::isinstance<py::dict>(kernel)) {
    for (const auto& item : kernel.cast<py::dict>()) {
      const std::string key = item.first.cast<std::string>();
      if (key == "family")
        spec.family = family_from_string(item.second.cast<std::string>());
      else if (key == "q")
        spec.q = item.second.cast<double>();
      else if (key == "nu")
        spec.nu = item.second.cast<double>();
      else if (key == "parametrization") {
        const std::string tag = item.second.cast<std::string>();
        if (tag == "hw94") spec.parametrization = MaternVariant::hw94;
        else if (tag == "bdos") spec.parametrization = MaternVariant::bdos;
        else throw parameter_error("parametrization must be hw94 or bdos");
      } else {
        throw parameter_error("unknown kernel field: " + key);
      }
    }
  } else {
    throw parameter_error("kernel must be a family name or a dict");
  }
  validate_kernel(spec);
  return spec;
}

py::dict spec_to_dict(const KernelSpec& spec) {
  py::dict out;
  out["family"] = to_string(spec.family);
  if (spec.family == KernelFamily::power_exponential) out["q"] = spec.q;
  if (spec.family == KernelFamily::rational_quadratic ||
      spec.family == KernelFamily::matern)
    out["nu"] = spec.nu;
  if (spec.family == KernelFamily::matern)
    out["parametrization"] =
        spec.parametrization == MaternVariant::hw94 ? "hw94" : "bdos";
  return out;
}

py::dict curve_to_dict(const PosteriorCurve& curve) {
  py::dict out;
  out["theta"] = curve.theta;
  out["log_prior"] = curve.log_prior;
  out["log_lik"] = curve.log_lik;
  out["log_post"] = curve.log_post;
  out["theta_min"] = curve.theta_min;
  out["theta_max"] = curve.theta_max;
  out["log_normalizer"] = curve.log_normalizer;
  out["left_tail_bound"] = curve.left_tail_bound;
  out["right_tail_bound"] = curve.right_tail_bound;
  out["function_evals"] = curve.function_evals;
  out["truncated_by_pd_failure"] = curve.truncated_by_pd_failure;
  return out;
}

class Gp {
 public:
  Gp(const Eigen::MatrixXd& points, const py::object& kernel,
     const std::string& basis)
      : model_(make_model(make_design(points), spec_from_object(kernel),
                          basis_from_string(basis))) {}

  int n() const { return model_.n(); }
  int p() const { return model_.p(); }
  py::dict kernel() const { return spec_to_dict(model_.kernel); }

  double log_prior(double theta) const {
    return log_reference_prior(model_, make_correlation(model_, theta));
  }

  double log_likelihood(double theta, const Eigen::VectorXd& y) const {
    return log_integrated_likelihood(model_, make_correlation(model_, theta),
                                     y);
  }

  py::dict posterior(const Eigen::VectorXd& y, double theta_min,
                     double theta_max, double rel_tol, int grid,
                     int threads) const {
    PosteriorOptions opt;
    opt.theta_min = theta_min;
    opt.theta_max = theta_max;
    opt.rel_tol = rel_tol;
    opt.grid_points = grid;
    opt.threads = threads;
    return curve_to_dict(build_posterior_curve(model_, y, opt));
  }

  py::dict map_estimate(const Eigen::VectorXd& y, double theta_min,
                        double theta_max) const {
    PosteriorOptions opt;
    opt.theta_min = theta_min;
    opt.theta_max = theta_max;
    const PosteriorCurve curve = build_posterior_curve(model_, y, opt);
    const MapResult res = map_theta(model_, y, curve);
    py::dict out;
    out["theta"] = res.theta;
    out["log_post"] = res.log_post;
    out["at_boundary"] = res.at_boundary;
    return out;
  }

  py::dict predict_at(const Eigen::VectorXd& y,
                      const Eigen::MatrixXd& new_points,
                      const std::vector<double>& levels) const {
    PosteriorOptions opt;
    const PosteriorCurve curve = build_posterior_curve(model_, y, opt);
    const PredictionResult res = predict(model_, y, curve, new_points, levels);
    py::dict out;
    out["mean"] = res.mean;
    out["quantiles"] = res.quantiles;
    out["levels"] = res.levels;
    out["exact_interpolation"] = res.exact_interpolation;
    return out;
  }

  py::dict nondegeneracy(const Eigen::VectorXd& y) const {
    const NondegeneracyReport rep =
        nondegeneracy_check(model_, model_.kernel, y);
    py::dict out;
    out["passes"] = rep.passes;
    out["margin"] = rep.margin;
    out["critical_subspace_dim"] = rep.critical_subspace_dim;
    out["intersection_depth"] = rep.intersection_depth;
    out["terminating_exponent"] = rep.terminating_exponent;
    return out;
  }

  py::dict expansion() const {
    const ExpansionReport rep = expansion_report(model_, model_.kernel);
    py::dict out;
    out["case"] = to_string(rep.case_label);
    out["subcase"] = rep.subcase;
    out["k1"] = rep.k1;
    out["k2"] = rep.k2;
    out["m"] = rep.m;
    out["rank_leading"] = rep.rank_leading;
    out["predicted_prior_exponent"] = rep.predicted_prior_exponent;
    out["predicted_prior_log_power"] = rep.predicted_prior_log_power;
    out["predicted_lik_exponent"] = rep.predicted_lik_exponent;
    out["predicted_lik_log_power"] = rep.predicted_lik_log_power;
    return out;
  }

  py::dict f_check(double theta, double asymptotic_factor) const {
    const FMatrixReport rep =
        f_matrix_check(model_, model_.kernel, theta, asymptotic_factor);
    py::dict out;
    out["theta"] = rep.theta;
    out["f_min_eigenvalue"] = rep.f_min_eigenvalue;
    out["t2"] = rep.t2;
    out["family_bound"] = rep.family_bound;
    out["bound_in_force"] = rep.bound_in_force;
    out["positive_semidefinite"] = rep.positive_semidefinite;
    out["passes"] = rep.passes;
    return out;
  }

  const GpModel& model() const { return model_; }

 private:
  GpModel model_;
};

py::dict spectral_check(const py::object& kernel,
                        const Eigen::MatrixXd& points,
                        const Eigen::VectorXd& xi, double theta,
                        double rel_tol, long mc_samples,
                        unsigned long seed) {
  SpectralOptions opt;
  opt.rel_tol = rel_tol;
  opt.mc_samples = mc_samples;
  opt.seed = seed;
  const SpectralReport rep = spectral_quadratic_form(
      spec_from_object(kernel), make_design(points), xi, theta, opt);
  py::dict out;
  out["quadratic_form_direct"] = rep.quadratic_form_direct;
  out["quadratic_form_spectral"] = rep.quadratic_form_spectral;
  out["rel_error"] = rep.rel_error;
  out["nodes"] = rep.nodes;
  out["monte_carlo"] = rep.monte_carlo;
  out["std_error"] = rep.std_error;
  return out;
}

}  // namespace

PYBIND11_MODULE(_refprior, m) {
  m.doc() =
      "Objective Bayes for isotropic Gaussian-process regression: reference "
      "prior, integrated likelihood, posterior and diagnostics over the "
      "correlation length.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const input_error& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const numeric_error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  py::class_<Gp>(m, "Gp")
      .def(py::init<const Eigen::MatrixXd&, const py::object&,
                    const std::string&>(),
           py::arg("points"), py::arg("kernel"),
           py::arg("basis") = "constant")
      .def_property_readonly("n", &Gp::n)
      .def_property_readonly("p", &Gp::p)
      .def_property_readonly("kernel", &Gp::kernel)
      .def("log_prior", &Gp::log_prior, py::arg("theta"))
      .def("log_likelihood", &Gp::log_likelihood, py::arg("theta"),
           py::arg("y"))
      .def("posterior", &Gp::posterior, py::arg("y"),
           py::arg("theta_min") = 0.0, py::arg("theta_max") = 0.0,
           py::arg("rel_tol") = 1e-6, py::arg("grid") = 257,
           py::arg("threads") = 1)
      .def("map_estimate", &Gp::map_estimate, py::arg("y"),
           py::arg("theta_min") = 0.0, py::arg("theta_max") = 0.0)
      .def("predict", &Gp::predict_at, py::arg("y"), py::arg("new_points"),
           py::arg("levels") = std::vector<double>{0.95})
      .def("nondegeneracy", &Gp::nondegeneracy, py::arg("y"))
      .def("expansion", &Gp::expansion)
      .def("f_check", &Gp::f_check, py::arg("theta"),
           py::arg("asymptotic_factor") = 10.0);

  m.def("eval_kernel",
        [](const py::object& kernel, double d, double theta) {
          return eval_kernel(spec_from_object(kernel), d, theta);
        },
        py::arg("kernel"), py::arg("d"), py::arg("theta"));
  m.def("eval_kernel_dtheta",
        [](const py::object& kernel, double d, double theta) {
          return eval_kernel_dtheta(spec_from_object(kernel), d, theta);
        },
        py::arg("kernel"), py::arg("d"), py::arg("theta"));
  m.def("kernel_spec",
        [](const py::object& kernel) {
          return spec_to_dict(spec_from_object(kernel));
        },
        py::arg("kernel"),
        "normalize a family name or dict to the canonical spec dict");
  m.def("spectral_quadratic_form", &spectral_check, py::arg("kernel"),
        py::arg("points"), py::arg("xi"), py::arg("theta"),
        py::arg("rel_tol") = 1e-9, py::arg("mc_samples") = 1000000,
        py::arg("seed") = 20260814);
}
