// SPDX-License-Identifier: Apache-2.0
#include "diplab/oes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "diplab/error.hpp"
#include "diplab/optim.hpp"

namespace diplab {

namespace {

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

void MaskDistribution::validate() const {
  require(temperature > 0.0, ErrorKind::invalid_argument, "mask temperature must be positive");
  require(target > 0.0 && target < 1.0, ErrorKind::invalid_argument, "mask target probability must be in (0, 1)");
  require(lambda_kl >= 0.0, ErrorKind::invalid_argument, "KL weight must be non-negative");
  require(!names.empty(), ErrorKind::invalid_argument, "mask distribution has no leaves");
  for (const auto& n : names)
    require(logits.count(n) == 1, ErrorKind::unbound_leaf, "mask distribution has no logits for '" + n + "'");
}

std::size_t MaskDistribution::size() const {
  std::size_t n = 0;
  for (const auto& name : names) n += logits.at(name).size();
  return n;
}

Tensor MaskDistribution::probabilities(const std::string& name) const {
  Tensor p = logits.at(name);
  for (double& v : p.data()) v = sigmoid(v);
  return p;
}

std::vector<std::string> prunable_leaves(const Network& net, bool include_biases) {
  std::vector<std::string> out;
  for (const auto& p : net.params)
    if (p.role == ParamRole::weight || (include_biases && p.role == ParamRole::bias)) out.push_back(p.name);
  return out;
}

MaskDistribution uniform_distribution(const Network& net, const ParamSet& params, double init_prob,
                                      const MaskDistribution& settings, bool include_biases) {
  require(init_prob > 0.0 && init_prob < 1.0, ErrorKind::invalid_argument, "initial keep probability must be in (0, 1)");
  MaskDistribution d;
  d.temperature = settings.temperature;
  d.target = settings.target;
  d.lambda_kl = settings.lambda_kl;
  d.names = prunable_leaves(net, include_biases);
  for (const auto& name : d.names) d.logits.emplace(name, Tensor::filled(params.values.at(name).shape(), logit(init_prob)));
  d.validate();
  return d;
}

double concrete_sample(double l, double tau, double u) { return sigmoid((l + logit(u)) / tau); }

double concrete_dlogit(double l, double tau, double u) {
  const double m = concrete_sample(l, tau, u);
  return m * (1.0 - m) / tau;
}

double bernoulli_kl(double p, double p0) {
  double kl = 0.0;
  if (p > 0.0) kl += p * std::log(p / p0);
  if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - p0));
  return kl;
}

RelaxedObjective relaxed_objective(const Generator& gen, const LeafValues& frozen, const InverseProblem& prob,
                                   const MaskDistribution& dist, std::mt19937_64& rng, std::size_t samples) {
  require(gen.graph != nullptr, ErrorKind::invalid_argument, "generator has no graph");
  require(samples >= 1, ErrorKind::invalid_argument, "need at least one mask sample");
  dist.validate();
  prob.validate(gen.graph->output_size());
  // Open interval so logit(u) stays finite.
  std::uniform_real_distribution<double> uni(std::nextafter(0.0, 1.0), 1.0);

  RelaxedObjective out;
  for (const auto& name : dist.names) out.grad.emplace(name, Tensor::zeros(dist.logits.at(name).shape()));
  LeafValues eff = frozen;
  LeafValues dmask;
  for (std::size_t s = 0; s < samples; ++s) {
    for (const auto& name : dist.names) {
      const Tensor& l = dist.logits.at(name);
      const Tensor& w = frozen.at(name);
      Tensor& e = eff.at(name);
      Tensor& dm = dmask.insert_or_assign(name, Tensor(l.shape())).first->second;
      for (std::size_t i = 0; i < l.size(); ++i) {
        const double u = uni(rng);
        const double m = concrete_sample(l[i], dist.temperature, u);
        e[i] = w[i] * m;
        dm[i] = w[i] * m * (1.0 - m) / dist.temperature;
      }
    }
    Tape tape(*gen.graph, eff);
    const Tensor r = prob.op.apply(tape.output()) - prob.y;
    out.data += 0.5 * r.squared_norm();
    const Gradient g = tape.backprop(prob.op.adjoint(r, gen.graph->output_shape()), dist.names);
    for (const auto& name : dist.names)
      out.grad.at(name).flat().array() += g.at(name).flat().array() * dmask.at(name).flat().array();
  }
  const double inv = 1.0 / static_cast<double>(samples);
  out.data *= inv;
  const double lp0 = logit(dist.target);
  for (const auto& name : dist.names) {
    Tensor& gr = out.grad.at(name);
    const Tensor& l = dist.logits.at(name);
    for (std::size_t i = 0; i < l.size(); ++i) {
      const double p = sigmoid(l[i]);
      gr[i] = gr[i] * inv + dist.lambda_kl * p * (1.0 - p) * (l[i] - lp0);
      out.kl += dist.lambda_kl * bernoulli_kl(p, dist.target);
    }
  }
  return out;
}

MaskLearnResult learn_mask(const Generator& gen, const LeafValues& frozen, const InverseProblem& prob,
                           MaskDistribution dist0, const MaskLearnConfig& cfg) {
  require(cfg.lr > 0.0, ErrorKind::invalid_argument, "mask learning rate must be positive");
  MaskLearnResult out;
  out.dist = std::move(dist0);
  out.dist.validate();
  std::mt19937_64 rng(cfg.seed);
  Optimizer opt(OptimizerKind::adam);
  out.objective.reserve(cfg.steps);
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    RelaxedObjective obj = relaxed_objective(gen, frozen, prob, out.dist, rng, cfg.samples);
    out.objective.push_back(obj.data + obj.kl);
    opt.step(out.dist.logits, obj.grad, cfg.lr);
    for (const auto& name : out.dist.names)
      require(out.dist.logits.at(name).flat().allFinite(), ErrorKind::divergence, "mask logits became non-finite");
  }
  return out;
}

BinaryMask threshold(const MaskDistribution& dist, double sparsity) {
  dist.validate();
  require(sparsity > 0.0 && sparsity < 1.0, ErrorKind::invalid_argument, "sparsity must be in (0, 1)");
  std::vector<double> flat;
  for (const auto& name : dist.names)
    for (double v : dist.logits.at(name).data()) flat.push_back(v);
  const std::size_t d = flat.size();
  // Guard against s * d landing a rounding error above an integer.
  const auto k = static_cast<std::size_t>(std::ceil(sparsity * static_cast<double>(d) - 1e-9));
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  // sigmoid is monotone, so ranking logits ranks probabilities.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return flat[a] > flat[b]; });
  std::vector<char> keep(d, 0);
  for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 1;

  BinaryMask out;
  out.names = dist.names;
  out.total = d;
  out.kept = k;
  std::size_t pos = 0;
  for (const auto& name : dist.names) {
    Tensor b(dist.logits.at(name).shape());
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = keep[pos++] ? 1.0 : 0.0;
    out.bits.emplace(name, std::move(b));
  }
  return out;
}

BinaryMask constant_mask(const std::vector<std::string>& names, const LeafValues& params, bool value) {
  BinaryMask out;
  out.names = names;
  for (const auto& name : names) {
    const Tensor& p = params.at(name);
    out.bits.emplace(name, Tensor::filled(p.shape(), value ? 1.0 : 0.0));
    out.total += p.size();
  }
  out.kept = value ? out.total : 0;
  return out;
}

SolveTrace train_subnet(const Generator& gen, const LeafValues& init, const BinaryMask& mask,
                        const InverseProblem& prob, const SolverConfig& cfg) {
  LeafValues start = init;
  for (const auto& name : mask.names) {
    auto it = start.find(name);
    require(it != start.end(), ErrorKind::unbound_leaf, "mask leaf '" + name + "' is not bound");
    const Tensor& b = mask.bits.at(name);
    require(b.shape() == it->second.shape(), ErrorKind::shape, "mask shape differs from leaf '" + name + "'");
    it->second.flat().array() *= b.flat().array();
  }
  return solve_vanilla_masked(gen, start, prob, cfg, &mask.bits, "oes");
}

void write_mask_csv(const std::string& path, const BinaryMask& mask) {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open '" + path + "' for writing");
  f << "leaf,shape,bits\n";
  for (const auto& name : mask.names) {
    const Tensor& b = mask.bits.at(name);
    f << name << ',';
    for (std::size_t i = 0; i < b.shape().size(); ++i) f << (i ? "x" : "") << b.shape()[i];
    f << ',';
    for (double v : b.data()) f << (v != 0.0 ? '1' : '0');
    f << '\n';
  }
  require(static_cast<bool>(f), ErrorKind::io, "failed writing '" + path + "'");
}

BinaryMask read_mask_csv(const std::string& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open '" + path + "'");
  std::string line;
  require(static_cast<bool>(std::getline(f, line)) && line == "leaf,shape,bits", ErrorKind::io,
          "'" + path + "' is not a mask file");
  BinaryMask out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(','), c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    require(c1 != std::string::npos && c2 != std::string::npos, ErrorKind::io, "malformed mask row: " + line);
    const std::string name = line.substr(0, c1);
    Shape shape;
    std::stringstream dims(line.substr(c1 + 1, c2 - c1 - 1));
    std::string tok;
    while (std::getline(dims, tok, 'x')) {
      require(!tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos, ErrorKind::io,
              "malformed mask shape: " + line);
      shape.push_back(std::stoul(tok));
    }
    const std::string bits = line.substr(c2 + 1);
    Tensor b(shape);
    require(bits.size() == b.size(), ErrorKind::io, "mask row length differs from its shape: " + name);
    for (std::size_t i = 0; i < b.size(); ++i) {
      require(bits[i] == '0' || bits[i] == '1', ErrorKind::io, "mask bits must be 0 or 1: " + name);
      b[i] = bits[i] == '1' ? 1.0 : 0.0;
      out.kept += bits[i] == '1';
    }
    out.total += b.size();
    out.names.push_back(name);
    out.bits.emplace(name, std::move(b));
  }
  return out;
}

}  // namespace diplab
