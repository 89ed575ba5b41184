// SPDX-License-Identifier: Apache-2.0
//
// dipctl: command-line front end for the experiment harness.
//
//   dipctl solve --config run.ini --out runs/a [--method oes --sparsity 0.05 ...]
//   dipctl ntk   --config run.ini --out runs/ntk [--steps 2000 --gd]
//   dipctl mf    --n 6 --m 4 --r 2 --alphas 1e-1,1e-2,1e-3 --out runs/mf
//   dipctl sweep --config run.ini --key runs.lr --values 1e-4,1e-3 --out runs/sw
//
// Failures print one line `error:<category>: <message>` to stderr and exit
// with a category-specific nonzero code.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "diplab/error.hpp"
#include "diplab/harness.hpp"
#include "diplab/lowrank.hpp"
#include "diplab/metrics.hpp"
#include "diplab/ntk.hpp"

using namespace diplab;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = true) {
  if (with_config) {
    cmd->add_option("--config", c.config, "experiment config file");
    cmd->add_option("--set", c.sets, "override, KEY=VALUE with KEY like noise.sigma or run:vanilla.lr");
  }
  cmd->add_option("--seed", c.seed, "base seed; every seed becomes base + offset");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? parse_config("") : load_config(c.config);
  for (const std::string& s : c.sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos, ErrorKind::config, "--set expects KEY=VALUE, got '" + s + "'");
    apply_override(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.reseed(*c.seed);
  cfg.out_dir = c.out;
  return cfg;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec, ErrorKind::io, "cannot create '" + p.string() + "': " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open '" + p.string() + "' for writing");
  return f;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : ""; }

void write_summary(const ExperimentResult& res, std::ostream& os) {
  os << "label,method,signal,peak_psnr,peak_iteration,final_psnr,drop,stop_iteration,stop_psnr,mask_density,csv\n";
  for (const RunRecord& r : res.records) {
    const CurveSummary s = summarize(r.curves);
    os << r.label << ',' << r.method << ',' << r.signal_index << ',' << num(s.peak_psnr) << ',' << s.peak_iteration
       << ',' << num(s.final_psnr) << ',' << num(s.drop) << ','
       << (r.stop_iteration ? std::to_string(*r.stop_iteration) : "") << ',' << opt_num(r.stop_psnr) << ','
       << opt_num(r.mask_density) << ',' << r.csv.string() << '\n';
  }
}

// ---------------------------------------------------------------------------
// solve

struct SolveArgs {
  Common common;
  std::string method;
  std::optional<std::size_t> iterations;
  std::optional<std::string> lr, lambda, early_stop;
  std::optional<std::string> sparsity, tau, lambda_kl, mask_lr, mask_steps, subnet_lr;
};

int cmd_solve(const SolveArgs& a) {
  ExperimentConfig cfg = load(a.common);
  if (!a.method.empty()) {
    RunSpec run = cfg.runs.front();
    run.label = a.method;
    cfg.runs = {run};
    apply_override(cfg, "runs.method", a.method);
  }
  if (a.iterations) apply_override(cfg, "runs.iterations", std::to_string(*a.iterations));
  if (a.lr) apply_override(cfg, "runs.lr", *a.lr);
  if (a.lambda) apply_override(cfg, "runs.lambda", *a.lambda);
  if (a.early_stop) apply_override(cfg, "runs.early_stop", *a.early_stop);

  const std::vector<std::pair<std::string, const std::optional<std::string>*>> oes_flags{
      {"sparsity", &a.sparsity}, {"temperature", &a.tau},       {"lambda_kl", &a.lambda_kl},
      {"mask_lr", &a.mask_lr},   {"mask_steps", &a.mask_steps}, {"lr", &a.subnet_lr}};
  for (const auto& [key, val] : oes_flags) {
    if (!*val) continue;
    bool any = false;
    for (const RunSpec& r : std::vector<RunSpec>(cfg.runs))
      if (r.kind == RunKind::oes) {
        apply_override(cfg, "run:" + r.label + "." + key, **val);
        any = true;
      }
    require(any, ErrorKind::config, "OES flags need a run with method = oes (use --method oes)");
  }

  const ExperimentResult res = run_experiment(cfg);
  std::ofstream f = open_out(cfg.out_dir / "summary.csv");
  write_summary(res, f);
  write_summary(res, std::cout);
  return 0;
}

// ---------------------------------------------------------------------------
// ntk

struct NtkArgs {
  Common common;
  std::size_t steps = 2000;
  double eta_fraction = 0.5;
  std::size_t signal = 0;
  bool gd = false;
  bool recentre = false;
};

int cmd_ntk(const NtkArgs& a) {
  ExperimentConfig cfg = load(a.common);
  require(a.signal < cfg.signals, ErrorKind::config, "--signal is beyond the configured signal count");
  require(a.eta_fraction > 0.0 && a.eta_fraction < 1.0, ErrorKind::invalid_argument,
          "--eta-fraction must be in (0, 1)");
  ensure_dir(cfg.out_dir);
  const RunSpec& run = cfg.runs.front();
  const ProblemInstance inst = make_instance(cfg, a.signal);
  const RunStart start = make_run_start(cfg, run, inst);
  const ComputeGraph graph =
      a.recentre ? zero_output_shift(start.net, start.params,
                                     start.net.input_name ? &start.init.at(*start.net.input_name) : nullptr)
                 : start.net.graph;
  const auto names = start.net.param_names();
  const NtkModel model = build_ntk(graph, start.init, names);
  const LinearOperator& op = inst.prob.op;
  const double limit = step_limit(model, op);
  const double eta = a.eta_fraction * limit;
  const double peak = cfg.peak > 0.0 ? cfg.peak : default_peak(inst.truth);
  const Tensor x = inst.truth;
  const Eigen::VectorXd xv = x.to_eigen();

  {
    std::ofstream f = open_out(cfg.out_dir / "spectrum.csv");
    f << "index,eigenvalue,singular_value\n";
    for (Eigen::Index k = 0; k < model.eigenvalues.size(); ++k)
      f << k << ',' << num(model.eigenvalues(k)) << ',' << num(model.singular_values(k)) << '\n';
  }

  const Tensor f0 = forward_eval(graph, start.init);
  const FilterResult lin = filter_iterate(model, op, inst.prob.y.to_eigen(), eta, a.steps, f0.to_eigen());
  std::optional<std::vector<double>> theory;
  if (op.full_row_rank() && cfg.noise.kind == NoiseKind::gaussian && f0.flat().norm() == 0.0)
    theory = mse_curve(model, op, xv, cfg.noise.sigma, eta, a.steps);
  CurveSet filt;
  filt.label = "ntk-filter";
  for (std::size_t t = 0; t < a.steps; ++t) {
    const Tensor ft = Tensor::from_eigen(lin.iterates[t], x.shape());
    filt.iteration.push_back(t);
    filt.psnr.push_back(psnr(ft, x, peak));
    filt.loss.push_back(0.5 * (op.apply(lin.iterates[t]) - inst.prob.y.to_eigen()).squaredNorm());
    filt.wmv.push_back(std::numeric_limits<double>::quiet_NaN());
  }
  if (theory) filt.mse_theory = std::vector<double>(theory->begin(), theory->begin() + long(a.steps));
  emit_csv(filt, cfg.out_dir / "filter.csv");

  nlohmann::ordered_json report;
  report["n"] = model.size();
  report["rank"] = model.rank();
  report["condition_number"] = std::isfinite(model.condition_number()) ? nlohmann::ordered_json(model.condition_number())
                                                                         : nlohmann::ordered_json("inf");
  report["step_limit"] = limit;
  report["eta"] = eta;
  report["spectral_bound"] = spectral_bound(model, xv, op.rows());
  if (op.full_row_rank()) {
    const RecoveryReport rec = classify_recovery(model, op, xv);
    report["case"] = to_string(rec.label);
    report["kernel_singular"] = rec.kernel_singular;
    report["intersection_dim"] = rec.intersection_dim;
    report["limit_error_norm"] = rec.exact_error.norm();
    report["predicted_error_norm"] = rec.predicted_error.norm();
    report["kernel_null_component_norm"] = rec.kernel_null_component.norm();
    report["operator_null_component_norm"] = rec.operator_null_component.norm();
  } else {
    report["case"] = "operator-not-full-row-rank";
  }
  if (!theory) report["mse_theory"] = "omitted (needs f0 = 0, gaussian noise and a full-row-rank operator)";

  if (a.gd) {
    SolverConfig sc = run.solver;
    sc.method = Method::vanilla;
    sc.optimizer = OptimizerKind::gd;
    sc.lr = eta;
    sc.iterations = a.steps;
    sc.peak = cfg.peak;
    const SolveTrace tr = solve(Generator::of(start.net, graph), start.init, inst.prob, sc);
    CurveSet gd = curves_from_trace(tr, "gd");
    if (theory) gd.mse_theory = filt.mse_theory;
    emit_csv(gd, cfg.out_dir / "gd.csv");
    double worst = 0.0;
    for (std::size_t t = 0; t < std::min(tr.size(), filt.size()); ++t) worst = std::max(worst, std::abs(tr.psnr[t] - filt.psnr[t]));
    report["gd_vs_filter_max_psnr_gap"] = worst;
  }
  std::ofstream f = open_out(cfg.out_dir / "ntk_report.json");
  f << report.dump(2) << '\n';
  std::cout << report.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// mf

struct MfArgs {
  Common common;
  std::size_t n = 6, m = 4, r = 2;
  std::vector<double> alphas{1e-1, 1e-2, 1e-3, 1e-4};
  double sigma = 0.0;
  double horizon = 2e3;
  double kkt_tol = 1e-3;
};

int cmd_mf(const MfArgs& a) {
  const std::uint64_t seed = a.common.seed.value_or(0);
  require(!a.alphas.empty(), ErrorKind::invalid_argument, "--alphas is empty");
  for (double al : a.alphas) require(al > 0.0, ErrorKind::invalid_argument, "alphas must be positive");
  const fs::path out = a.common.out;
  ensure_dir(out);
  const PlantedInstance p = planted_instance(a.n, a.m, a.r, seed);
  Eigen::VectorXd y = p.y;
  if (a.sigma > 0.0) {
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> d(0.0, a.sigma);
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += d(rng);
  }
  const NuclearSolution oracle = nuclear_oracle(p.meas, y);
  FlowOptions fo;
  fo.horizon = a.horizon;

  std::ofstream f = open_out(out / "mf.csv");
  std::ofstream spec = open_out(out / "mf_spectra.csv");
  f << "alpha,distance,rel_distance,numerical_rank,loss,time,converged,kkt_pass,kkt_reason,primal_residual,"
       "psd_violation,dual_violation,slackness\n";
  spec << "alpha,index,eigenvalue\n";
  std::cout << "alpha,rel_distance,numerical_rank,kkt\n";
  for (double alpha : a.alphas) {
    const FlowResult fl = gradient_flow(p.meas.measurements(), y, scaled_init(a.n, a.n, alpha, seed + 2), fo);
    const Eigen::MatrixXd x = fl.final_state.x();
    const double dist = (x - oracle.x).norm();
    const double rel = dist / std::max(oracle.x.norm(), std::numeric_limits<double>::min());
    const KktCertificate k = kkt_check(p.meas, y, x, a.kkt_tol);
    f << num(alpha) << ',' << num(dist) << ',' << num(rel) << ',' << numerical_rank(x) << ','
      << num(fl.final_state.loss) << ',' << num(fl.final_state.t) << ',' << (fl.converged ? 1 : 0) << ','
      << (k.pass ? 1 : 0) << ',' << k.reason << ',' << num(k.primal_residual) << ',' << num(k.psd_violation) << ','
      << num(k.dual_violation) << ',' << num(k.slackness) << '\n';
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (x + x.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues().reverse();
    for (Eigen::Index i = 0; i < ev.size(); ++i) spec << num(alpha) << ',' << i << ',' << num(ev(i)) << '\n';
    std::cout << num(alpha) << ',' << num(rel) << ',' << numerical_rank(x) << ',' << k.reason << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  Common common;
  std::string key;
  std::vector<std::string> values;
};

int cmd_sweep(const SweepArgs& a) {
  require(!a.values.empty(), ErrorKind::config, "--values is empty");
  const ExperimentConfig base = load(a.common);
  ensure_dir(base.out_dir);
  std::ofstream f = open_out(base.out_dir / "sweep.csv");
  f << "value,label,signal,peak_psnr,peak_iteration,final_psnr,drop,stop_iteration,csv\n";
  std::cout << "value,label,mean_peak_psnr,mean_final_psnr\n";
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    ExperimentConfig cfg = base;
    apply_override(cfg, a.key, a.values[i]);
    cfg.out_dir = base.out_dir / ("v" + std::to_string(i));
    const ExperimentResult res = run_experiment(cfg);
    for (const RunRecord& r : res.records) {
      const CurveSummary s = summarize(r.curves);
      f << a.values[i] << ',' << r.label << ',' << r.signal_index << ',' << num(s.peak_psnr) << ','
        << s.peak_iteration << ',' << num(s.final_psnr) << ',' << num(s.drop) << ','
        << (r.stop_iteration ? std::to_string(*r.stop_iteration) : "") << ',' << r.csv.string() << '\n';
    }
    for (const RunSpec& run : cfg.runs) {
      double pk = 0.0, fin = 0.0;
      const auto recs = res.of(run.label);
      for (const RunRecord* r : recs) {
        const CurveSummary s = summarize(r->curves);
        pk += s.peak_psnr;
        fin += s.final_psnr;
      }
      std::cout << a.values[i] << ',' << run.label << ',' << num(pk / double(recs.size())) << ','
                << num(fin / double(recs.size())) << '\n';
    }
  }
  return 0;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::io: return 3;
    case ErrorKind::shape: return 4;
    case ErrorKind::unbound_leaf: return 5;
    case ErrorKind::invalid_argument: return 6;
    case ErrorKind::budget: return 7;
    case ErrorKind::divergence: return 8;
    case ErrorKind::infeasible: return 9;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dipctl: deep image prior experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kLibraryVersion);

  SolveArgs sa;
  CLI::App* solve_cmd = app.add_subcommand("solve", "run every configured solver on every signal");
  add_common(solve_cmd, sa.common);
  solve_cmd->add_option("--method", sa.method, "replace the runs with one run of this method");
  solve_cmd->add_option("--iterations", sa.iterations, "iterations T for every run");
  solve_cmd->add_option("--lr", sa.lr, "learning rate for every run");
  solve_cmd->add_option("--lambda", sa.lambda, "regularization weight for every run");
  solve_cmd->add_option("--early-stop", sa.early_stop, "early stopping W,P,eps for every run");
  solve_cmd->add_option("--sparsity", sa.sparsity, "OES kept fraction");
  solve_cmd->add_option("--tau", sa.tau, "OES concrete temperature");
  solve_cmd->add_option("--lambda-kl", sa.lambda_kl, "OES KL weight");
  solve_cmd->add_option("--mask-lr", sa.mask_lr, "OES mask-learning rate (stage 1)");
  solve_cmd->add_option("--mask-steps", sa.mask_steps, "OES mask-learning steps (stage 1)");
  solve_cmd->add_option("--subnet-lr", sa.subnet_lr, "OES subnetwork learning rate (stage 2)");

  NtkArgs na;
  CLI::App* ntk_cmd = app.add_subcommand("ntk", "kernel spectrum, filtering curves and recovery report");
  add_common(ntk_cmd, na.common);
  ntk_cmd->add_option("--steps", na.steps, "recursion steps")->capture_default_str();
  ntk_cmd->add_option("--eta-fraction", na.eta_fraction, "step size as a fraction of the stability limit")
      ->capture_default_str();
  ntk_cmd->add_option("--signal", na.signal, "signal index")->capture_default_str();
  ntk_cmd->add_flag("--gd", na.gd, "also train the network by gradient descent at the same step");
  ntk_cmd->add_flag("--recentre", na.recentre, "use f(theta) - f(theta0) so both start at zero");

  MfArgs ma;
  CLI::App* mf_cmd = app.add_subcommand("mf", "factored matrix-sensing alpha sweep");
  add_common(mf_cmd, ma.common, false);
  mf_cmd->add_option("--n", ma.n, "matrix size")->capture_default_str();
  mf_cmd->add_option("--m", ma.m, "measurement count")->capture_default_str();
  mf_cmd->add_option("--r", ma.r, "planted rank")->capture_default_str();
  mf_cmd->add_option("--alphas", ma.alphas, "initialization scales")->delimiter(',');
  mf_cmd->add_option("--sigma", ma.sigma, "measurement noise std")->capture_default_str();
  mf_cmd->add_option("--horizon", ma.horizon, "flow time horizon")->capture_default_str();
  mf_cmd->add_option("--kkt-tol", ma.kkt_tol, "certificate tolerance")->capture_default_str();

  SweepArgs wa;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "rerun the experiment over values of one config key");
  add_common(sweep_cmd, wa.common);
  sweep_cmd->add_option("--key", wa.key, "config key, e.g. runs.lr or noise.sigma")->required();
  sweep_cmd->add_option("--values", wa.values, "comma-separated values")->delimiter(',')->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error:usage: " << e.what() << '\n';
    return 64;
  }

  try {
    if (*solve_cmd) return cmd_solve(sa);
    if (*ntk_cmd) return cmd_ntk(na);
    if (*mf_cmd) return cmd_mf(ma);
    if (*sweep_cmd) return cmd_sweep(wa);
  } catch (const Error& e) {
    std::cerr << "error:" << to_string(e.kind()) << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << '\n';
    return 70;
  }
  return 0;
}
