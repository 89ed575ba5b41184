// SPDX-License-Identifier: Apache-2.0
#include "diplab/solvers.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "diplab/error.hpp"
#include "diplab/metrics.hpp"
#include "trace_recorder.hpp"

namespace diplab {

std::string to_string(Method m) {
  switch (m) {
    case Method::vanilla: return "vanilla";
    case Method::self_guided: return "self-guided";
    case Method::aseqdip: return "aseqdip";
    case Method::tv: return "tv";
    case Method::dop: return "dop";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "vanilla") return Method::vanilla;
  if (s == "self-guided") return Method::self_guided;
  if (s == "aseqdip") return Method::aseqdip;
  if (s == "tv" || s == "drp") return Method::tv;
  if (s == "dop") return Method::dop;
  throw Error(ErrorKind::config, "unknown solver method '" + s + "'");
}

void SolverConfig::validate() const {
  require(iterations >= 1, ErrorKind::invalid_argument, "iterations must be at least 1");
  require(lr > 0.0, ErrorKind::invalid_argument, "lr must be positive");
  require(lambda >= 0.0, ErrorKind::invalid_argument, "lambda must be non-negative");
  require(mc_samples >= 1, ErrorKind::invalid_argument, "mc_samples must be at least 1");
  require(perturbation_ratio >= 0.0, ErrorKind::invalid_argument, "perturbation ratio must be non-negative");
  require(inner_steps >= 1, ErrorKind::invalid_argument, "inner_steps must be at least 1");
  require(lr_ratio > 0.0, ErrorKind::invalid_argument, "lr_ratio must be positive");
  require(dop_init > 0.0, ErrorKind::invalid_argument, "dop init scale must be positive");
  early_stop.validate();
}

void InverseProblem::validate(std::size_t signal_size) const {
  require(y.size() == op.rows(), ErrorKind::shape,
          "measurement has " + std::to_string(y.size()) + " entries, operator has " + std::to_string(op.rows()) +
              " rows");
  require(op.cols() == signal_size, ErrorKind::shape,
          "operator acts on " + std::to_string(op.cols()) + " entries, generator emits " +
              std::to_string(signal_size));
  if (truth)
    require(truth->size() == signal_size, ErrorKind::shape, "ground truth size does not match the generator output");
}

namespace detail {

Recorder::Recorder(const SolverConfig& cfg, const InverseProblem& prob, std::string method)
    : cfg_(cfg), prob_(prob), detector_(cfg.early_stop), start_(std::chrono::steady_clock::now()) {
  trace_.method = std::move(method);
  if (prob.truth) peak_ = cfg.peak > 0.0 ? cfg.peak : default_peak(*prob.truth);
  trace_.loss.reserve(cfg.iterations);
  trace_.psnr.reserve(cfg.iterations);
  trace_.wmv.reserve(cfg.iterations);
}

bool Recorder::record(std::size_t t, double loss, const Tensor& iterate) {
  if (!std::isfinite(loss) || !iterate.all_finite()) {
    trace_.diverged = true;
    halted_ = true;
    return true;
  }
  trace_.loss.push_back(loss);
  trace_.psnr.push_back(prob_.truth ? psnr(iterate, *prob_.truth, peak_) : std::numeric_limits<double>::quiet_NaN());
  EsDecision d = detector_.observe(iterate);
  trace_.wmv.push_back(detector_.last_wmv());
  if (cfg_.snapshot_every > 0 && t % cfg_.snapshot_every == 0) trace_.snapshots.emplace_back(t, iterate);
  last_finite_ = iterate;
  if (d.stop && !trace_.stop_iteration) {
    trace_.stop_iteration = d.t_es;
    trace_.stop_iterate = detector_.best_iterate();
    if (cfg_.halt_on_stop) {
      halted_ = true;
      return true;
    }
  }
  return false;
}

SolveTrace Recorder::finish(const Tensor& x_final, LeafValues state) {
  if (trace_.diverged)
    trace_.x_hat = last_finite_;
  else if (halted_)
    trace_.x_hat = trace_.stop_iterate;
  else
    trace_.x_hat = x_final;
  trace_.final_state = std::move(state);
  trace_.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  return std::move(trace_);
}

double data_loss(const InverseProblem& prob, const Tensor& f, Eigen::VectorXd& residual) {
  residual = prob.op.matrix() * f.flat() - prob.y.flat();
  return 0.5 * residual.squaredNorm();
}

}  // namespace detail

namespace {

using detail::data_loss;
using detail::Recorder;

void check_setup(const Generator& gen, const LeafValues& init, const InverseProblem& prob, const SolverConfig& cfg) {
  require(gen.graph != nullptr, ErrorKind::invalid_argument, "generator has no graph");
  cfg.validate();
  prob.validate(gen.graph->output_size());
  for (const auto& leaf : gen.graph->leaves())
    require(init.count(leaf.name) != 0, ErrorKind::unbound_leaf, "leaf '" + leaf.name + "' is not bound");
}

Tensor seed_from(const InverseProblem& prob, const Eigen::VectorXd& r, const Shape& shape) {
  Tensor s(shape);
  s.flat() = prob.op.matrix().transpose() * r;
  return s;
}

const std::string& input_leaf(const Generator& gen, const char* method) {
  require(gen.input.has_value(), ErrorKind::invalid_argument,
          std::string(method) + " needs a generator with an input leaf");
  return *gen.input;
}

double population_std(const Tensor& z) {
  const double n = static_cast<double>(z.size());
  const double mean = z.flat().sum() / n;
  return std::sqrt((z.flat().array() - mean).square().sum() / n);
}

}  // namespace

SolveTrace solve_vanilla_masked(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                                const SolverConfig& cfg, const LeafValues* grad_mask, std::string label) {
  check_setup(gen, init, prob, cfg);
  std::vector<std::string> wrt = gen.params;
  if (cfg.train_input) wrt.push_back(input_leaf(gen, "training the input"));
  LeafValues state = init;
  Optimizer opt(cfg.optimizer);
  Recorder rec(cfg, prob, std::move(label));
  Eigen::VectorXd r;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tape tape(*gen.graph, state);
    const Tensor& f = tape.output();
    const double loss = data_loss(prob, f, r);
    if (rec.record(t, loss, f)) break;
    Gradient g = tape.backprop(seed_from(prob, r, f.shape()), wrt);
    if (grad_mask)
      for (auto& [name, gt] : g) {
        auto m = grad_mask->find(name);
        if (m != grad_mask->end()) gt.flat().array() *= m->second.flat().array();
      }
    opt.step(state, g, cfg.lr);
  }
  Tensor xf = rec.halted() ? Tensor() : forward_eval(*gen.graph, state);
  return rec.finish(xf, std::move(state));
}

SolveTrace solve_vanilla(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                         const SolverConfig& cfg) {
  return solve_vanilla_masked(gen, init, prob, cfg, nullptr, "vanilla");
}

SolveTrace solve_self_guided(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                             const SolverConfig& cfg) {
  check_setup(gen, init, prob, cfg);
  const std::string& zname = input_leaf(gen, "self-guided");
  std::vector<std::string> wrt = gen.params;
  wrt.push_back(zname);
  LeafValues state = init;
  const Shape out_shape = gen.graph->output_shape();
  if (cfg.lambda > 0.0)
    require(state.at(zname).size() == gen.graph->output_size(), ErrorKind::shape,
            "self-guided denoising term needs input and output of equal size");
  const double noise_std = cfg.perturbation_ratio * population_std(init.at(zname));
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t samples = cfg.mc_samples;

  Optimizer opt(cfg.optimizer);
  Recorder rec(cfg, prob, "self-guided");
  Eigen::VectorXd r;
  std::vector<LeafValues> views(samples);
  auto mean_output = [&](std::vector<Tape>* tapes) {
    Tensor fbar(out_shape);
    for (std::size_t j = 0; j < samples; ++j) {
      views[j] = state;
      if (noise_std > 0.0)
        for (double& v : views[j].at(zname).data()) v += noise_std * gauss(rng);
      if (tapes) {
        tapes->emplace_back(*gen.graph, views[j]);
        const Tensor& f = tapes->back().output();
        fbar = j == 0 ? f : fbar + f;
      } else {
        Tensor f = forward_eval(*gen.graph, views[j]);
        fbar = j == 0 ? f : fbar + f;
      }
    }
    if (samples > 1) fbar.flat() /= static_cast<double>(samples);
    return fbar;
  };

  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    std::vector<Tape> tapes;
    tapes.reserve(samples);
    Tensor fbar = mean_output(&tapes);
    double loss = data_loss(prob, fbar, r);
    Tensor seed = seed_from(prob, r, out_shape);
    Tensor diff;
    if (cfg.lambda > 0.0) {
      diff = Tensor(out_shape);
      diff.flat() = fbar.flat() - state.at(zname).flat();
      loss += 0.5 * cfg.lambda * diff.squared_norm();
      seed.flat() += cfg.lambda * diff.flat();
    }
    if (rec.record(t, loss, fbar)) break;
    if (samples > 1) seed.flat() /= static_cast<double>(samples);
    Gradient g = tapes[0].backprop(seed, wrt);
    for (std::size_t j = 1; j < samples; ++j) {
      Gradient gj = tapes[j].backprop(seed, wrt);
      for (auto& [name, gt] : g) gt.flat() += gj.at(name).flat();
    }
    if (cfg.lambda > 0.0) g.at(zname).flat() -= cfg.lambda * diff.flat();
    opt.step(state, g, cfg.lr);
  }
  Tensor xf = rec.halted() ? Tensor() : mean_output(nullptr);
  return rec.finish(xf, std::move(state));
}

SolveTrace solve_aseqdip(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                         const SolverConfig& cfg) {
  check_setup(gen, init, prob, cfg);
  const std::string& zname = input_leaf(gen, "aseqdip");
  require(init.at(zname).size() == gen.graph->output_size(), ErrorKind::shape,
          "aseqdip needs input and output of equal size");
  LeafValues state = init;
  const Shape zshape = state.at(zname).shape();
  Optimizer opt(cfg.optimizer);
  Recorder rec(cfg, prob, "aseqdip");
  Eigen::VectorXd r;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    if (t > 0 && t % cfg.inner_steps == 0) state.at(zname) = forward_eval(*gen.graph, state).reshaped(zshape);
    Tape tape(*gen.graph, state);
    const Tensor& f = tape.output();
    double loss = data_loss(prob, f, r);
    Tensor seed = seed_from(prob, r, f.shape());
    if (cfg.lambda > 0.0) {
      Eigen::VectorXd diff = f.flat() - state.at(zname).flat();
      loss += 0.5 * cfg.lambda * diff.squaredNorm();
      seed.flat() += cfg.lambda * diff;
    }
    if (rec.record(t, loss, f)) break;
    opt.step(state, tape.backprop(seed, gen.params), cfg.lr);
  }
  Tensor xf = rec.halted() ? Tensor() : forward_eval(*gen.graph, state);
  return rec.finish(xf, std::move(state));
}

namespace {

struct Axes {
  std::size_t outer;   // leading slices (channels)
  std::size_t h;       // first spatial extent
  std::size_t w;       // second spatial extent, 1 for 1D signals
  bool two_d;
};

Axes tv_axes(const Shape& s) {
  switch (s.size()) {
    case 1: return {1, s[0], 1, false};
    case 2: return {s[0], s[1], 1, false};
    case 3: return {s[0], s[1], s[2], true};
    default: throw Error(ErrorKind::shape, "total variation supports [n], [C, L] and [C, H, W] tensors");
  }
}

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

double tv_norm(const Tensor& x) {
  const Axes a = tv_axes(x.shape());
  double s = 0.0;
  for (std::size_t c = 0; c < a.outer; ++c) {
    const double* p = x.data().data() + c * a.h * a.w;
    for (std::size_t i = 0; i < a.h; ++i)
      for (std::size_t j = 0; j < a.w; ++j) {
        if (i + 1 < a.h) s += std::abs(p[(i + 1) * a.w + j] - p[i * a.w + j]);
        if (a.two_d && j + 1 < a.w) s += std::abs(p[i * a.w + j + 1] - p[i * a.w + j]);
      }
  }
  return s;
}

Tensor tv_subgradient(const Tensor& x) {
  const Axes a = tv_axes(x.shape());
  Tensor g(x.shape());
  for (std::size_t c = 0; c < a.outer; ++c) {
    const double* p = x.data().data() + c * a.h * a.w;
    double* q = g.data().data() + c * a.h * a.w;
    for (std::size_t i = 0; i < a.h; ++i)
      for (std::size_t j = 0; j < a.w; ++j) {
        if (i + 1 < a.h) {
          const double s = sgn(p[(i + 1) * a.w + j] - p[i * a.w + j]);
          q[(i + 1) * a.w + j] += s;
          q[i * a.w + j] -= s;
        }
        if (a.two_d && j + 1 < a.w) {
          const double s = sgn(p[i * a.w + j + 1] - p[i * a.w + j]);
          q[i * a.w + j + 1] += s;
          q[i * a.w + j] -= s;
        }
      }
  }
  return g;
}

SolveTrace solve_tv(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                    const SolverConfig& cfg) {
  check_setup(gen, init, prob, cfg);
  std::vector<std::string> wrt = cfg.trainable.empty() ? gen.params : cfg.trainable;
  for (const auto& name : wrt)
    require(gen.graph->find_leaf(name).has_value(), ErrorKind::invalid_argument,
            "trainable leaf '" + name + "' is not part of the generator");
  LeafValues state = init;
  Optimizer opt(cfg.optimizer);
  Recorder rec(cfg, prob, "tv");
  Eigen::VectorXd r;
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tape tape(*gen.graph, state);
    const Tensor& f = tape.output();
    double loss = data_loss(prob, f, r);
    Tensor seed = seed_from(prob, r, f.shape());
    if (cfg.lambda > 0.0) {
      loss += cfg.lambda * tv_norm(f);
      seed.flat() += cfg.lambda * tv_subgradient(f).flat();
    }
    if (rec.record(t, loss, f)) break;
    opt.step(state, tape.backprop(seed, wrt), cfg.lr);
  }
  Tensor xf = rec.halted() ? Tensor() : forward_eval(*gen.graph, state);
  return rec.finish(xf, std::move(state));
}

SolveTrace solve_dop(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                     const SolverConfig& cfg) {
  check_setup(gen, init, prob, cfg);
  static const std::string kG = "dop.g", kH = "dop.h";
  LeafValues state = init;
  const std::size_t m = prob.op.rows();
  state.insert_or_assign(kG, Tensor::filled({m}, cfg.dop_init));
  state.insert_or_assign(kH, Tensor::filled({m}, cfg.dop_init));
  const LrScale scale{{kG, cfg.lr_ratio}, {kH, cfg.lr_ratio}};
  Optimizer opt(cfg.optimizer);
  Recorder rec(cfg, prob, "dop");
  auto noise = [&] {
    Tensor s({m});
    s.flat() = state.at(kG).flat().array().square() - state.at(kH).flat().array().square();
    return s;
  };
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    Tape tape(*gen.graph, state);
    const Tensor& f = tape.output();
    Eigen::VectorXd r = prob.op.matrix() * f.flat() + noise().flat() - prob.y.flat();
    const double loss = 0.5 * r.squaredNorm();
    if (rec.record(t, loss, f)) break;
    Gradient g = tape.backprop(seed_from(prob, r, f.shape()), gen.params);
    Tensor gg({m}), gh({m});
    gg.flat() = 2.0 * r.cwiseProduct(state.at(kG).flat());
    gh.flat() = -2.0 * r.cwiseProduct(state.at(kH).flat());
    g.emplace(kG, std::move(gg));
    g.emplace(kH, std::move(gh));
    opt.step(state, g, cfg.lr, &scale);
  }
  Tensor xf = rec.halted() ? Tensor() : forward_eval(*gen.graph, state);
  Tensor s = noise();
  SolveTrace out = rec.finish(xf, std::move(state));
  out.noise_estimate = std::move(s);
  return out;
}

SolveTrace solve(const Generator& gen, const LeafValues& init, const InverseProblem& prob, const SolverConfig& cfg) {
  switch (cfg.method) {
    case Method::vanilla: return solve_vanilla(gen, init, prob, cfg);
    case Method::self_guided: return solve_self_guided(gen, init, prob, cfg);
    case Method::aseqdip: return solve_aseqdip(gen, init, prob, cfg);
    case Method::tv: return solve_tv(gen, init, prob, cfg);
    case Method::dop: return solve_dop(gen, init, prob, cfg);
  }
  throw Error(ErrorKind::invalid_argument, "unknown solver method");
}

}  // namespace diplab
