// SPDX-License-Identifier: Apache-2.0
//
// Mask learning at initialization and subnetwork fitting.
//
// Each prunable parameter carries a keep-probability p = sigmoid(logit). The
// relaxed objective
//
//   E_m [1/2 ||A G(theta_in * m, z) - y||^2] + lambda_kl * sum KL(Ber(p) || Ber(p0))
//
// is estimated with binary-concrete samples
//   m = sigmoid((logit + log u - log(1 - u)) / tau),  u ~ U(0, 1).
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "diplab/graph.hpp"
#include "diplab/networks.hpp"
#include "diplab/solvers.hpp"

namespace diplab {

struct MaskDistribution {
  /// Logits per prunable leaf, in `names` order.
  std::vector<std::string> names;
  LeafValues logits;
  double temperature = 0.5;
  double target = 0.05;  // p0
  double lambda_kl = 0.0;

  /// Error(invalid_argument) on tau <= 0, p0 outside (0, 1), lambda_kl < 0,
  /// or logits missing for a listed name.
  void validate() const;
  std::size_t size() const;
  /// sigmoid(logits) for one leaf.
  Tensor probabilities(const std::string& name) const;
};

/// Weight leaves of the network, plus biases when requested.
std::vector<std::string> prunable_leaves(const Network& net, bool include_biases = false);

/// Every logit set to logit(init_prob).
MaskDistribution uniform_distribution(const Network& net, const ParamSet& params, double init_prob,
                                      const MaskDistribution& settings, bool include_biases = false);

double concrete_sample(double logit, double tau, double u);
/// d sample / d logit at fixed u.
double concrete_dlogit(double logit, double tau, double u);
/// KL(Ber(p) || Ber(p0)).
double bernoulli_kl(double p, double p0);

struct RelaxedObjective {
  double data = 0.0;  // sample mean of the data term
  double kl = 0.0;    // lambda_kl * sum KL
  LeafValues grad;    // d(data + kl) / d logits
};

/// Monte-Carlo value and pathwise gradient over `samples` relaxed masks.
RelaxedObjective relaxed_objective(const Generator& gen, const LeafValues& frozen, const InverseProblem& prob,
                                   const MaskDistribution& dist, std::mt19937_64& rng, std::size_t samples = 1);

struct MaskLearnConfig {
  std::size_t steps = 500;
  double lr = 1e-2;
  std::size_t samples = 1;
  std::uint64_t seed = 0;
};

struct MaskLearnResult {
  MaskDistribution dist;
  std::vector<double> objective;  // data + kl per step
};

/// Adam on the logits with the network weights frozen at `frozen`.
/// Error(divergence) on non-finite logits.
MaskLearnResult learn_mask(const Generator& gen, const LeafValues& frozen, const InverseProblem& prob,
                           MaskDistribution dist0, const MaskLearnConfig& cfg);

struct BinaryMask {
  std::vector<std::string> names;
  LeafValues bits;  // 0/1 tensors shaped like their leaves
  std::size_t kept = 0;
  std::size_t total = 0;

  double density() const { return total ? static_cast<double>(kept) / static_cast<double>(total) : 0.0; }
};

/// Keeps the ceil(sparsity * d) most probable parameters; ties go to the
/// lower flat index (leaves concatenated in `names` order).
BinaryMask threshold(const MaskDistribution& dist, double sparsity);

/// Mask with every bit set to `value` for the listed leaves of `params`.
BinaryMask constant_mask(const std::vector<std::string>& names, const LeafValues& params, bool value);

/// Vanilla descent from theta_in * mask with masked-out gradients zeroed.
SolveTrace train_subnet(const Generator& gen, const LeafValues& init, const BinaryMask& mask,
                        const InverseProblem& prob, const SolverConfig& cfg);

/// One row per leaf: name, dims joined by 'x', bit string.
void write_mask_csv(const std::string& path, const BinaryMask& mask);
BinaryMask read_mask_csv(const std::string& path);

}  // namespace diplab
