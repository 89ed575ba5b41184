// SPDX-License-Identifier: Apache-2.0
//
// Python bindings. Arrays cross as float64 numpy arrays; module errors raise
// diplab.DiplabError with a `kind` attribute matching the CLI categories.
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "diplab/earlystop.hpp"
#include "diplab/error.hpp"
#include "diplab/harness.hpp"
#include "diplab/lowrank.hpp"
#include "diplab/metrics.hpp"
#include "diplab/ntk.hpp"
#include "diplab/operators.hpp"

namespace py = pybind11;
using namespace diplab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<double> to_array(const std::vector<double>& v) { return py::array_t<double>(py::ssize_t(v.size()), v.data()); }

py::dict curves_dict(const CurveSet& c) {
  py::dict d;
  d["label"] = c.label;
  d["iteration"] = py::array_t<std::size_t>(py::ssize_t(c.iteration.size()), c.iteration.data());
  d["psnr"] = to_array(c.psnr);
  d["loss"] = to_array(c.loss);
  d["wmv"] = to_array(c.wmv);
  if (c.mse_theory) d["mse_theory"] = to_array(*c.mse_theory);
  return d;
}

ExperimentConfig config_from(const std::string& text, const std::map<std::string, std::string>& overrides) {
  ExperimentConfig cfg = parse_config(text);
  for (const auto& [k, v] : overrides) apply_override(cfg, k, v);
  return cfg;
}

py::dict recovery_dict(const RecoveryReport& r) {
  py::dict d;
  d["case"] = to_string(r.label);
  d["kernel_singular"] = r.kernel_singular;
  d["error_nonzero"] = r.error_nonzero;
  d["intersection_dim"] = r.intersection_dim;
  d["predicted_error"] = r.predicted_error;
  d["exact_error"] = r.exact_error;
  d["null_intersection_component"] = r.null_intersection_component;
  d["kernel_null_component"] = r.kernel_null_component;
  d["operator_null_component"] = r.operator_null_component;
  return d;
}

}  // namespace

PYBIND11_MODULE(_diplab, m) {
  m.doc() = "Deep image prior experiments: operators, NTK filtering, low-rank flows and the run harness";
  m.attr("__version__") = kLibraryVersion;
  m.attr("corpus_version") = kCorpusVersion;

  static py::exception<Error> error_type(m, "DiplabError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object inst = py::reinterpret_borrow<py::object>(error_type)(std::string(e.what()));
      inst.attr("kind") = std::string(to_string(e.kind()));
      PyErr_SetObject(error_type.ptr(), inst.ptr());
    }
  });

  // Operators
  py::class_<LinearOperator>(m, "LinearOperator")
      .def(py::init([](const Eigen::MatrixXd& a) { return LinearOperator(OperatorKind::gaussian_cs, a); }),
           py::arg("matrix"))
      .def_static("identity", &LinearOperator::identity, py::arg("n"))
      .def_static("mask", &LinearOperator::mask, py::arg("n"), py::arg("keep"))
      .def_static("box_mask", &LinearOperator::box_mask, py::arg("n"), py::arg("start"), py::arg("length"))
      .def_static("gaussian_cs", &LinearOperator::gaussian_cs, py::arg("m"), py::arg("n"), py::arg("seed"))
      .def_static("subsampled_dft", &LinearOperator::subsampled_dft, py::arg("n"), py::arg("frequencies"))
      .def_property_readonly("kind", [](const LinearOperator& op) { return to_string(op.kind()); })
      .def_property_readonly("shape", [](const LinearOperator& op) { return py::make_tuple(op.rows(), op.cols()); })
      .def_property_readonly("matrix", &LinearOperator::matrix)
      .def("apply", [](const LinearOperator& op, const Array& x) { return to_array(op.apply(to_tensor(x))); })
      .def("adjoint", [](const LinearOperator& op, const Array& w) { return to_array(op.adjoint(to_tensor(w))); })
      .def("rank", &LinearOperator::rank, py::arg("rel_tol") = 1e-10)
      .def("full_row_rank", &LinearOperator::full_row_rank, py::arg("rel_tol") = 1e-10);
  m.def("null_space_projector", &null_space_projector, py::arg("op"), py::arg("rel_tol") = 1e-10);

  m.def(
      "corrupt",
      [](const Array& y, const std::string& kind, double sigma, double sparsity, double amplitude, std::uint64_t seed) {
        NoiseModel n;
        require(kind == "gaussian" || kind == "impulse", ErrorKind::invalid_argument,
                "noise kind must be gaussian or impulse");
        n.kind = kind == "gaussian" ? NoiseKind::gaussian : NoiseKind::sparse_impulse;
        n.sigma = sigma;
        n.sparsity = sparsity;
        n.amplitude = amplitude;
        n.seed = seed;
        const Corruption c = corrupt_with_support(to_tensor(y), n);
        return py::make_tuple(to_array(c.y), c.impulse_support);
      },
      py::arg("y"), py::arg("kind") = "gaussian", py::arg("sigma") = 0.0, py::arg("sparsity") = 0.0,
      py::arg("amplitude") = 1.0, py::arg("seed") = 0, "Returns (noisy, impulse_support).");

  // Signals and metrics
  m.def(
      "make_signal",
      [](const std::string& kind, std::size_t length, std::uint64_t seed, std::size_t period, std::size_t pieces,
         std::size_t image_size) {
        SignalSpec s;
        s.kind = signal_kind_from_string(kind);
        s.length = length;
        s.seed = seed;
        s.period = period;
        s.pieces = pieces;
        s.image_size = image_size;
        return to_array(make_signal(s));
      },
      py::arg("kind") = "piecewise", py::arg("length") = 128, py::arg("seed") = 0, py::arg("period") = 16,
      py::arg("pieces") = 6, py::arg("image_size") = 32);
  m.def(
      "psnr", [](const Array& xhat, const Array& x, double peak) { return psnr(to_tensor(xhat), to_tensor(x), peak); },
      py::arg("xhat"), py::arg("x"), py::arg("peak"));

  // Early stopping
  m.def(
      "wmv",
      [](const std::vector<Array>& window) {
        std::vector<Tensor> w;
        for (const Array& a : window) w.push_back(to_tensor(a));
        return wmv(w);
      },
      py::arg("window"));
  py::class_<WmvDetector>(m, "WmvDetector")
      .def(py::init([](std::size_t window, std::size_t patience, double eps_rel) {
             return WmvDetector(EarlyStopConfig{window, patience, eps_rel});
           }),
           py::arg("window") = 100, py::arg("patience") = 500, py::arg("eps_rel") = 1e-3)
      .def(
          "observe",
          [](WmvDetector& d, const Array& x) {
            const EsDecision e = d.observe(to_tensor(x));
            return py::make_tuple(e.stop, e.t_es);
          },
          "Returns (stop, t_es).")
      .def_property_readonly("last_wmv", &WmvDetector::last_wmv)
      .def_property_readonly("observations", &WmvDetector::observations)
      .def_property_readonly("best_iteration", &WmvDetector::best_iteration)
      .def_property_readonly("best_iterate", [](const WmvDetector& d) { return to_array(d.best_iterate()); });

  // NTK
  py::class_<NtkModel>(m, "NtkModel")
      .def_static("from_kernel", &NtkModel::from_kernel, py::arg("kernel"), py::arg("rank_tol") = 1e-8)
      .def_readonly("kernel", &NtkModel::kernel)
      .def_readonly("eigenvalues", &NtkModel::eigenvalues)
      .def_readonly("eigenvectors", &NtkModel::eigenvectors)
      .def_readonly("singular_values", &NtkModel::singular_values)
      .def_readonly("jacobian", &NtkModel::jacobian)
      .def_property_readonly("size", &NtkModel::size)
      .def_property_readonly("rank", &NtkModel::rank)
      .def_property_readonly("condition_number", &NtkModel::condition_number);
  m.def(
      "network_ntk",
      [](const std::string& config_text, std::size_t signal, bool recentre,
         const std::map<std::string, std::string>& overrides) {
        const ExperimentConfig cfg = config_from(config_text, overrides);
        const ProblemInstance inst = make_instance(cfg, signal);
        const RunStart start = make_run_start(cfg, cfg.runs.front(), inst);
        const ComputeGraph graph =
            recentre ? zero_output_shift(start.net, start.params,
                                         start.net.input_name ? &start.init.at(*start.net.input_name) : nullptr)
                     : start.net.graph;
        const auto names = start.net.param_names();
        return build_ntk(graph, start.init, names);
      },
      py::arg("config_text"), py::arg("signal") = 0, py::arg("recentre") = false,
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Empirical NTK of the first run's network at theta_0 for one configured signal.");
  m.def("step_limit", &step_limit, py::arg("model"), py::arg("op"));
  m.def(
      "filter_iterate",
      [](const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& y, double eta, std::size_t steps,
         const Eigen::VectorXd& f0, std::size_t cadence) {
        const FilterResult r = filter_iterate(model, op, y, eta, steps, f0, cadence);
        Eigen::MatrixXd it(r.iterates.empty() ? 0 : r.iterates.front().size(), Eigen::Index(r.iterates.size()));
        for (std::size_t k = 0; k < r.iterates.size(); ++k) it.col(Eigen::Index(k)) = r.iterates[k];
        py::dict d;
        d["iterations"] = r.iterations;
        d["iterates"] = it;
        d["step_limit"] = r.step_limit;
        d["step_ok"] = r.step_ok;
        return d;
      },
      py::arg("model"), py::arg("op"), py::arg("y"), py::arg("eta"), py::arg("steps"),
      py::arg("f0") = Eigen::VectorXd(), py::arg("cadence") = 1, "Iterates are the columns of d['iterates'].");
  m.def("mse_curve", &mse_curve, py::arg("model"), py::arg("op"), py::arg("x"), py::arg("sigma"), py::arg("eta"),
        py::arg("steps"));
  m.def("spectral_bound", &spectral_bound, py::arg("model"), py::arg("x"), py::arg("m"));
  m.def(
      "classify_recovery",
      [](const NtkModel& model, const LinearOperator& op, const Eigen::VectorXd& x, double tol) {
        return recovery_dict(classify_recovery(model, op, x, tol));
      },
      py::arg("model"), py::arg("op"), py::arg("x"), py::arg("tol") = 1e-8);

  // Low rank
  py::class_<MeasurementSet>(m, "MeasurementSet")
      .def(py::init([](std::vector<Eigen::MatrixXd> mats) {
             MeasurementSet s{std::move(mats)};
             s.validate();
             return s;
           }),
           py::arg("matrices"))
      .def_readonly("matrices", &MeasurementSet::mats)
      .def("apply", &MeasurementSet::apply)
      .def("adjoint", &MeasurementSet::adjoint)
      .def("commutator_norm", &MeasurementSet::commutator_norm);
  py::class_<CommutingMeasurementSet>(m, "CommutingMeasurementSet")
      .def_static("from_matrices", &CommutingMeasurementSet::from_matrices, py::arg("matrices"), py::arg("tol") = 1e-10)
      .def_static("from_spectra", &CommutingMeasurementSet::from_spectra, py::arg("basis"), py::arg("spectra"))
      .def_static("diagonal", &CommutingMeasurementSet::diagonal, py::arg("spectra"))
      .def_static("random", &CommutingMeasurementSet::random, py::arg("n"), py::arg("m"), py::arg("seed"))
      .def_property_readonly("measurements", &CommutingMeasurementSet::measurements)
      .def_property_readonly("basis", &CommutingMeasurementSet::basis)
      .def_property_readonly("spectra", &CommutingMeasurementSet::spectra)
      .def("apply", &CommutingMeasurementSet::apply)
      .def("adjoint", &CommutingMeasurementSet::adjoint);
  py::class_<PlantedInstance>(m, "PlantedInstance")
      .def_readonly("meas", &PlantedInstance::meas)
      .def_readonly("x_true", &PlantedInstance::x_true)
      .def_readonly("y", &PlantedInstance::y);
  m.def("planted_instance", &planted_instance, py::arg("n"), py::arg("m"), py::arg("rank"), py::arg("seed"));
  m.def("scaled_init", &scaled_init, py::arg("n"), py::arg("r"), py::arg("alpha"), py::arg("seed"));
  m.def(
      "gradient_flow",
      [](const MeasurementSet& meas, const Eigen::VectorXd& y, const Eigen::MatrixXd& u0, double horizon, double dt,
         double residual_tol) {
        FlowOptions o;
        o.horizon = horizon;
        o.dt = dt;
        o.residual_tol = residual_tol;
        const FlowResult r = gradient_flow(meas, y, u0, o);
        py::dict d;
        d["x"] = r.final_state.x();
        d["u"] = r.final_state.u;
        d["s"] = r.final_state.s;
        d["t"] = r.final_state.t;
        d["loss"] = r.final_state.loss;
        d["converged"] = r.converged;
        d["steps"] = r.steps;
        return d;
      },
      py::arg("meas"), py::arg("y"), py::arg("u0"), py::arg("horizon") = 2e3, py::arg("dt") = 1e-2,
      py::arg("residual_tol") = 1e-8);
  m.def(
      "nuclear_oracle",
      [](const CommutingMeasurementSet& meas, const Eigen::VectorXd& y) {
        const NuclearSolution s = nuclear_oracle(meas, y);
        return py::make_tuple(s.x, s.objective);
      },
      py::arg("meas"), py::arg("y"), "Returns (X*, ||X*||_*).");
  m.def(
      "kkt_check",
      [](const CommutingMeasurementSet& meas, const Eigen::VectorXd& y, const Eigen::MatrixXd& x, double tol) {
        const KktCertificate k = kkt_check(meas, y, x, tol);
        py::dict d;
        d["pass"] = k.pass;
        d["reason"] = k.reason;
        d["nu"] = k.nu;
        d["primal_residual"] = k.primal_residual;
        d["psd_violation"] = k.psd_violation;
        d["dual_violation"] = k.dual_violation;
        d["slackness"] = k.slackness;
        return d;
      },
      py::arg("meas"), py::arg("y"), py::arg("x"), py::arg("tol") = 1e-3);
  m.def("numerical_rank", &numerical_rank, py::arg("x"), py::arg("rel") = 1e-3);

  // Harness
  m.def(
      "resolve_config",
      [](const std::string& text, const std::map<std::string, std::string>& overrides) {
        return to_ini(config_from(text, overrides));
      },
      py::arg("text"), py::arg("overrides") = std::map<std::string, std::string>{},
      "Parses, applies overrides and returns the resolved config text.");
  m.def(
      "run_experiment",
      [](const std::string& text, std::optional<std::string> out_dir,
         const std::map<std::string, std::string>& overrides) {
        ExperimentConfig cfg = config_from(text, overrides);
        if (out_dir) cfg.out_dir = *out_dir;
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg);
        }
        py::list out;
        for (const RunRecord& r : res.records) {
          py::dict d = curves_dict(r.curves);
          d["label"] = r.label;
          d["method"] = r.method;
          d["signal"] = r.signal_index;
          d["stop_iteration"] = r.stop_iteration;
          d["stop_psnr"] = r.stop_psnr;
          d["mask_density"] = r.mask_density;
          d["wall_seconds"] = r.wall_seconds;
          d["csv"] = r.csv.string();
          out.append(d);
        }
        return out;
      },
      py::arg("config_text"), py::arg("out_dir") = std::nullopt,
      py::arg("overrides") = std::map<std::string, std::string>{},
      "Runs every configured run on every signal; one dict of curves per (run, signal).");
  m.def(
      "read_curves_csv", [](const std::string& path) { return curves_dict(read_curves_csv(path)); }, py::arg("path"));
  m.def(
      "peak_variance_config", [](std::size_t iterations) { return to_ini(peak_variance_config(iterations)); },
      py::arg("iterations") = 3000);
  m.def(
      "method_comparison_config", [](std::size_t iterations) { return to_ini(method_comparison_config(iterations)); },
      py::arg("iterations") = 5000);
}
