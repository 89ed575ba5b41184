// SPDX-License-Identifier: Apache-2.0
//
// DIP solver family. Every objective uses the 1/2 convention on squared
// norms, e.g. vanilla minimizes 1/2 ||A f(theta, z) - y||^2, so one GD step of
// size lr moves the output by lr K (A^T y - A^T A f) in the linearized regime.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "diplab/earlystop.hpp"
#include "diplab/graph.hpp"
#include "diplab/networks.hpp"
#include "diplab/operators.hpp"
#include "diplab/optim.hpp"

namespace diplab {

enum class Method { vanilla, self_guided, aseqdip, tv, dop };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct SolverConfig {
  Method method = Method::vanilla;
  std::size_t iterations = 1000;
  double lr = 1e-3;
  double lambda = 0.0;
  /// Perturbations averaged per self-guided step.
  std::size_t mc_samples = 4;
  /// Self-guided perturbation std as a multiple of std(z0).
  double perturbation_ratio = 0.05;
  /// Gradient steps between aSeqDIP input updates.
  std::size_t inner_steps = 4;
  /// Step-size ratio of the DOP noise variables g, h.
  double lr_ratio = 1.0;
  double dop_init = 1e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;
  /// Vanilla only: also descend on the network input.
  bool train_input = false;
  /// TV only: leaves to optimize; empty means every network parameter.
  std::vector<std::string> trainable;
  EarlyStopConfig early_stop;
  /// End the run at the early-stop decision and return the t_ES iterate.
  bool halt_on_stop = false;
  /// Keep every k-th iterate in the trace (0 keeps none).
  std::size_t snapshot_every = 0;
  /// PSNR peak; non-positive selects default_peak(truth).
  double peak = 0.0;

  void validate() const;
};

struct InverseProblem {
  LinearOperator op;
  Tensor y;
  std::optional<Tensor> truth;

  void validate(std::size_t signal_size) const;
};

/// The differentiable generator a solver drives: graph, the parameter leaves
/// it may update, and the optional input leaf.
struct Generator {
  const ComputeGraph* graph = nullptr;
  std::vector<std::string> params;
  std::optional<std::string> input;

  static Generator of(const Network& net) { return {&net.graph, net.param_names(), net.input_name}; }
  static Generator of(const Network& net, const ComputeGraph& graph) {
    return {&graph, net.param_names(), net.input_name};
  }
};

struct SolveTrace {
  std::string method;
  /// Per recorded iteration t = 0..T-1: values for the iterate before step t.
  std::vector<double> loss;
  std::vector<double> psnr;  // NaN without ground truth
  std::vector<double> wmv;   // NaN until the window is full
  std::vector<std::pair<std::size_t, Tensor>> snapshots;
  Tensor x_hat;
  std::optional<std::size_t> stop_iteration;  // early-stop t_ES
  Tensor stop_iterate;
  bool diverged = false;
  std::optional<Tensor> noise_estimate;  // DOP: g*g - h*h
  LeafValues final_state;
  double wall_seconds = 0.0;

  std::size_t size() const noexcept { return loss.size(); }
};

/// `init` binds every generator leaf (parameters and input).
SolveTrace solve_vanilla(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                         const SolverConfig& cfg);
SolveTrace solve_self_guided(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                             const SolverConfig& cfg);
SolveTrace solve_aseqdip(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                         const SolverConfig& cfg);
SolveTrace solve_tv(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                    const SolverConfig& cfg);
SolveTrace solve_dop(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                     const SolverConfig& cfg);

/// Vanilla descent with the gradient of each named leaf multiplied
/// elementwise by its mask before the optimizer step.
SolveTrace solve_vanilla_masked(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                                const SolverConfig& cfg, const LeafValues* grad_mask, std::string label);

/// Dispatch on cfg.method.
SolveTrace solve(const Generator& gen, const LeafValues& init, const InverseProblem& prob,
                 const SolverConfig& cfg);

/// Anisotropic total variation with forward differences along every spatial
/// axis ([n] and [C, L]: one axis; [C, H, W]: two axes).
double tv_norm(const Tensor& x);
/// A subgradient of tv_norm with sign(0) = 0.
Tensor tv_subgradient(const Tensor& x);

}  // namespace diplab
