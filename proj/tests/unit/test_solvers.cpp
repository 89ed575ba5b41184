// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"

#include "diplab/error.hpp"
#include "diplab/metrics.hpp"
#include "diplab/networks.hpp"
#include "diplab/solvers.hpp"
#include "support/check.hpp"

using namespace diplab;
using testing::random_tensor;

namespace {

struct LinearGen {
  ComputeGraph graph;
  Eigen::MatrixXd m;
};

// f(theta) = M theta with a fixed n x p matrix M.
LinearGen linear_generator(std::size_t n, std::size_t p, std::uint64_t seed) {
  Tensor mt = random_tensor({n, p}, seed);
  GraphBuilder b;
  NodeId mc = b.constant(mt);
  NodeId th = b.leaf("theta", {p});
  LinearGen g{b.finish(b.matmul(mc, th)), Eigen::MatrixXd(n, p)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) g.m(long(i), long(j)) = mt[i * p + j];
  return g;
}

Tensor square_wave(std::size_t n) {
  Tensor x({1, n});
  for (std::size_t i = 0; i < n; ++i) x[i] = ((i / 8) % 2 == 0) ? 0.2 : 0.8;
  return x;
}

struct Cnn {
  Network net;
  LeafValues init;
};

Cnn small_cnn(std::size_t n, std::size_t width, std::uint64_t seed) {
  NetworkSpec s;
  s.depth = 3;
  s.channels = {width};
  s.output_shape = {1, n};
  Network net = build(s);
  ParamSet p = init_params(net, 1.0, seed);
  Tensor z = draw_input(net, seed + 1);
  LeafValues v = bind_leaves(p, &z);
  return {std::move(net), std::move(v)};
}

void check_same_trace(const SolveTrace& a, const SolveTrace& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    CHECK(a.loss[t] == b.loss[t]);
    CHECK(a.psnr[t] == b.psnr[t]);
  }
  CHECK(a.x_hat == b.x_hat);
}

}  // namespace

TEST_CASE("vanilla with y = f(theta0) stays put") {
  Cnn c = small_cnn(16, 4, 1);
  Tensor f0 = forward_eval(c.net.graph, c.init);
  InverseProblem prob{LinearOperator::identity(16), f0.reshaped({16}), f0};
  SolverConfig cfg;
  cfg.iterations = 20;
  cfg.optimizer = OptimizerKind::gd;
  cfg.peak = 1.0;
  SolveTrace tr = solve_vanilla(Generator::of(c.net), c.init, prob, cfg);
  REQUIRE(tr.size() == 20);
  for (double l : tr.loss) CHECK(l == 0.0);
  CHECK(tr.x_hat == f0);
}

TEST_CASE("linear generator converges to the least-squares fit") {
  LinearGen lg = linear_generator(10, 4, 3);
  auto a = LinearOperator::gaussian_cs(8, 10, 4);
  Tensor y = random_tensor({8}, 5);
  Generator gen{&lg.graph, {"theta"}, std::nullopt};
  LeafValues init{{"theta", Tensor::zeros({4})}};
  Eigen::MatrixXd am = a.matrix() * lg.m;
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(am.transpose() * am).eigenvalues().maxCoeff();
  SolverConfig cfg;
  cfg.optimizer = OptimizerKind::gd;
  cfg.lr = 1.0 / lmax;
  cfg.iterations = 20000;
  SolveTrace tr = solve_vanilla(gen, init, InverseProblem{a, y, std::nullopt}, cfg);
  Eigen::VectorXd theta = am.colPivHouseholderQr().solve(y.to_eigen());
  Eigen::VectorXd ref = lg.m * theta;
  CHECK(testing::rel_err(tr.x_hat.to_eigen(), ref) < 1e-6);
  // Descent: loss never increases for a step below 2/L.
  for (std::size_t t = 1; t < 100; ++t) CHECK(tr.loss[t] <= tr.loss[t - 1]);
}

TEST_CASE("self-guided degenerate config equals vanilla with a trainable input") {
  Cnn c = small_cnn(16, 6, 7);
  Tensor x = square_wave(16);
  InverseProblem prob{LinearOperator::identity(16), x.reshaped({16}) + 0.05 * random_tensor({16}, 8), x};
  SolverConfig base;
  base.iterations = 30;
  base.lr = 1e-2;
  SolverConfig van = base;
  van.train_input = true;
  SolverConfig sg = base;
  sg.method = Method::self_guided;
  sg.lambda = 0.0;
  sg.mc_samples = 1;
  sg.perturbation_ratio = 0.0;
  check_same_trace(solve(Generator::of(c.net), c.init, prob, van), solve(Generator::of(c.net), c.init, prob, sg));
}

TEST_CASE("aseqdip with one round and no autoencoding term equals vanilla") {
  Cnn c = small_cnn(16, 6, 9);
  Tensor x = square_wave(16);
  InverseProblem prob{LinearOperator::identity(16), x.reshaped({16}) + 0.05 * random_tensor({16}, 10), x};
  SolverConfig van;
  van.iterations = 30;
  van.lr = 1e-2;
  SolverConfig aq = van;
  aq.method = Method::aseqdip;
  aq.inner_steps = 30;
  check_same_trace(solve(Generator::of(c.net), c.init, prob, van), solve(Generator::of(c.net), c.init, prob, aq));
}

TEST_CASE("aseqdip with dominant autoencoding weight reaches a fixed point") {
  // f = Theta z with Theta trainable; huge lambda makes f(z) ~ z in one round.
  const std::size_t n = 8;
  GraphBuilder b;
  NodeId th = b.leaf("theta", {n, n});
  NodeId z = b.leaf("z", {n});
  ComputeGraph g = b.finish(b.matmul(th, z));
  Tensor z0 = random_tensor({n}, 11, 0.0, 0.1);
  LeafValues init{{"theta", 0.1 * random_tensor({n, n}, 12)}, {"z", z0}};
  const double lambda = 1e6;
  SolverConfig cfg;
  cfg.method = Method::aseqdip;
  cfg.optimizer = OptimizerKind::gd;
  cfg.lambda = lambda;
  cfg.inner_steps = 20;
  cfg.iterations = 20;
  cfg.lr = 0.5 / (lambda * z0.squared_norm());
  InverseProblem prob{LinearOperator::identity(n), random_tensor({n}, 13), std::nullopt};
  SolveTrace tr = solve_aseqdip(Generator{&g, {"theta"}, std::string("z")}, init, prob, cfg);
  const Tensor& zf = tr.final_state.at("z");
  CHECK((tr.x_hat.flat() - zf.flat()).norm() / zf.flat().norm() < 1e-2);
}

TEST_CASE("aseqdip rejects mismatched input and output") {
  NetworkSpec s;
  s.family = Family::deep_decoder_multi;
  s.depth = 2;
  s.channels = {4};
  s.output_shape = {1, 16};
  Network net = build(s);
  ParamSet p = init_params(net, 1.0, 1);
  Tensor z = draw_input(net, 2);
  SolverConfig cfg;
  cfg.method = Method::aseqdip;
  InverseProblem prob{LinearOperator::identity(16), Tensor::zeros({16}), std::nullopt};
  CHECK_THROWS_AS(solve(Generator::of(net), bind_leaves(p, &z), prob, cfg), Error);
}

TEST_CASE("total variation values and subgradient") {
  CHECK(tv_norm(Tensor::filled({3, 4, 4}, 2.0)) == 0.0);
  CHECK(tv_norm(Tensor(Shape{4}, {0, 1, 2, 3})) == 3.0);
  Tensor img(Shape{1, 2, 2}, {0, 1, 2, 4});
  CHECK(tv_norm(img) == 1.0 + 2.0 + 2.0 + 3.0);
  Tensor x = random_tensor({2, 5, 6}, 14);
  Tensor g = tv_subgradient(x);
  const double h = 1e-7;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor up = x, down = x;
    up[i] += h;
    down[i] -= h;
    CHECK(std::abs((tv_norm(up) - tv_norm(down)) / (2 * h) - g[i]) < 1e-6);
  }
  CHECK(tv_subgradient(Tensor::filled({5}, 1.0)) == Tensor::zeros({5}));
}

namespace {

// 1D TV denoising by projected gradient on the dual (box-constrained) problem.
Eigen::VectorXd prox_tv_1d(const Eigen::VectorXd& y, double lambda) {
  const long n = y.size();
  Eigen::VectorXd p = Eigen::VectorXd::Zero(n - 1);
  auto primal = [&] {
    Eigen::VectorXd x = y;
    for (long i = 0; i + 1 < n; ++i) {
      x(i) += p(i);
      x(i + 1) -= p(i);
    }
    return x;
  };
  for (int it = 0; it < 200000; ++it) {
    Eigen::VectorXd x = primal();
    for (long i = 0; i + 1 < n; ++i) p(i) = std::clamp(p(i) + 0.25 * (x(i + 1) - x(i)), -lambda, lambda);
  }
  return primal();
}

}  // namespace

TEST_CASE("tv solver on an identity generator reproduces TV denoising") {
  const std::size_t n = 48;
  Tensor x({n});
  for (std::size_t i = 0; i < n; ++i) x[i] = i < 16 ? 0.2 : (i < 32 ? 0.9 : 0.5);
  Tensor y = x + 0.1 * random_tensor({n}, 15);
  GraphBuilder b;
  NodeId th = b.leaf("theta", {n});
  ComputeGraph g = b.finish(b.scale(th, 1.0));
  Generator gen{&g, {"theta"}, std::nullopt};
  InverseProblem prob{LinearOperator::identity(n), y, x};
  std::vector<double> oracle_psnr;
  for (double lambda : {0.0, 0.1, 1.0}) {
    Eigen::VectorXd ref = lambda > 0 ? prox_tv_1d(y.to_eigen(), lambda) : y.to_eigen();
    oracle_psnr.push_back(psnr(Tensor::from_eigen(ref), x, 1.0));
    SolverConfig cfg;
    cfg.method = Method::tv;
    cfg.lambda = lambda;
    cfg.lr = 1e-3;
    cfg.iterations = 6000;
    SolveTrace tr = solve_tv(gen, LeafValues{{"theta", y}}, prob, cfg);
    CHECK(testing::rel_err(tr.x_hat.to_eigen(), ref) < 1e-2);
  }
  // Interior weight wins; no regularization keeps the noise.
  CHECK(oracle_psnr[1] > oracle_psnr[0]);
  CHECK(oracle_psnr[1] > oracle_psnr[2]);
}

TEST_CASE("tv solver honours the trainable subset") {
  Cnn c = small_cnn(16, 4, 16);
  Tensor x = square_wave(16);
  SolverConfig cfg;
  cfg.method = Method::tv;
  cfg.lambda = 0.01;
  cfg.iterations = 10;
  cfg.trainable = {"z", "conv2.bias"};
  InverseProblem prob{LinearOperator::identity(16), x.reshaped({16}), x};
  SolveTrace tr = solve_tv(Generator::of(c.net), c.init, prob, cfg);
  CHECK(tr.final_state.at("conv0.weight") == c.init.at("conv0.weight"));
  CHECK(!(tr.final_state.at("z") == c.init.at("z")));
  cfg.trainable = {"nope"};
  CHECK_THROWS_AS(solve_tv(Generator::of(c.net), c.init, prob, cfg), Error);
}

TEST_CASE("dop on clean data keeps the noise estimate small") {
  Cnn c = small_cnn(32, 32, 17);
  Tensor x = square_wave(32);
  InverseProblem prob{LinearOperator::identity(32), x.reshaped({32}), x};
  SolverConfig cfg;
  cfg.method = Method::dop;
  cfg.optimizer = OptimizerKind::gd;
  cfg.lr = 3e-3;  // below 2 / lambda_max of the kernel (about 250 here)
  cfg.iterations = 1000;
  SolveTrace tr = solve_dop(Generator::of(c.net), c.init, prob, cfg);
  REQUIRE(tr.noise_estimate.has_value());
  CHECK(tr.noise_estimate->flat().cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("early stop halting returns the t_ES iterate") {
  Cnn c = small_cnn(16, 4, 18);
  Tensor x = square_wave(16);
  InverseProblem prob{LinearOperator::identity(16), x.reshaped({16}), x};
  SolverConfig cfg;
  cfg.iterations = 2000;
  cfg.lr = 1e-2;
  cfg.early_stop = {10, 20, 1e-3};
  cfg.halt_on_stop = true;
  cfg.snapshot_every = 1;
  SolveTrace tr = solve_vanilla(Generator::of(c.net), c.init, prob, cfg);
  REQUIRE(tr.stop_iteration.has_value());
  CHECK(tr.size() < 2000);
  CHECK(tr.x_hat == tr.snapshots[*tr.stop_iteration].second);
  // PSNR column matches recomputation from the snapshots.
  for (const auto& [t, snap] : tr.snapshots) CHECK(std::abs(psnr(snap, x, default_peak(x)) - tr.psnr[t]) < 1e-9);
}

TEST_CASE("divergence aborts with the last finite iterate") {
  LinearGen lg = linear_generator(6, 6, 19);
  Generator gen{&lg.graph, {"theta"}, std::nullopt};
  SolverConfig cfg;
  cfg.optimizer = OptimizerKind::gd;
  cfg.lr = 1e3;
  cfg.iterations = 5000;
  InverseProblem prob{LinearOperator::identity(6), random_tensor({6}, 20), std::nullopt};
  SolveTrace tr = solve_vanilla(gen, LeafValues{{"theta", random_tensor({6}, 21)}}, prob, cfg);
  CHECK(tr.diverged);
  CHECK(tr.size() < 5000);
  CHECK(tr.x_hat.all_finite());
  for (double l : tr.loss) CHECK(std::isfinite(l));
}

TEST_CASE("config validation") {
  SolverConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.iterations = 1;
  cfg.lr = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(method_from_string("aseqdip") == Method::aseqdip);
  CHECK_THROWS_AS(method_from_string("magic"), Error);
}
