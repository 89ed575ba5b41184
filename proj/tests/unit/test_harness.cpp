// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"

#include "diplab/error.hpp"
#include "diplab/harness.hpp"
#include "diplab/metrics.hpp"
#include "json.hpp"

using namespace diplab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("diplab_harness_" + name);
  fs::remove_all(p);
  return p;
}

const char* kSmall = R"(
[experiment]
name = small
signals = 2
seed = 7

[signal]
kind = square-wave
length = 32
period = 4

[noise]
kind = gaussian
sigma = 0.1

[network]
family = dip-cnn-1d
depth = 3
channels = 4

[runs]
iterations = 15
lr = 1e-2

[run:vanilla]
method = vanilla

[run:es]
method = es-dip
early_stop = 3,2,1e-3
)";

ErrorKind kind_of_throw(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("desk signals are seeded, bounded and shaped") {
  for (SignalKind k : {SignalKind::square_wave, SignalKind::piecewise, SignalKind::image}) {
    SignalSpec s;
    s.kind = k;
    s.length = 64;
    s.image_size = 16;
    s.seed = 3;
    Tensor a = make_signal(s);
    CHECK(a == make_signal(s));
    CHECK(a.shape() == (k == SignalKind::image ? Shape{1, 16, 16} : Shape{1, 64}));
    CHECK(a.flat().minCoeff() >= 0.0);
    CHECK(a.flat().maxCoeff() <= 1.0);
    s.seed = 4;
    CHECK_FALSE(a == make_signal(s));
  }
  SignalSpec sq;
  sq.kind = SignalKind::square_wave;
  sq.length = 40;
  sq.period = 5;
  Tensor x = make_signal(sq);
  std::set<double> levels(x.data().begin(), x.data().end());
  CHECK(levels.size() == 2);
  std::size_t jumps = 0;
  for (std::size_t i = 1; i < 40; ++i) jumps += x[i] != x[i - 1];
  CHECK(jumps >= 6);

  auto corpus = desk_corpus(sq, 3);
  REQUIRE(corpus.size() == 3);
  sq.seed = 2;
  CHECK(corpus[2] == make_signal(sq));
}

TEST_CASE("operators for every task") {
  OperatorSpec s;
  CHECK(make_operator(s, 10).kind() == OperatorKind::identity);
  s.task = Task::inpaint;
  s.ratio = 0.7;
  LinearOperator m = make_operator(s, 10);
  CHECK(m.rows() == 7);
  CHECK(m.cols() == 10);
  s.box = true;
  LinearOperator b = make_operator(s, 10);
  CHECK(b.rows() == 7);
  // Centred hole of three entries: 3, 4, 5 removed.
  Tensor e = Tensor::from_values({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(b.apply(e).to_vector() == std::vector<double>{0, 1, 2, 6, 7, 8, 9});
  s.task = Task::cs;
  s.ratio = 0.5;
  CHECK(make_operator(s, 10).rows() == 5);
  s.task = Task::dft_recon;
  s.ratio = 0.5;
  // Frequencies 0..2 of n = 8 -> 1 + 2 + 2 rows.
  CHECK(make_operator(s, 8).rows() == 5);
  s.ratio = 0.0;
  CHECK_THROWS_AS(make_operator(s, 8), Error);
}

TEST_CASE("config parsing, inheritance and echo") {
  ExperimentConfig cfg = parse_config(kSmall);
  CHECK(cfg.name == "small");
  CHECK(cfg.signals == 2);
  CHECK(cfg.seeds.signal == 7);
  CHECK(cfg.seeds.solver == 12);
  REQUIRE(cfg.runs.size() == 2);
  CHECK(cfg.runs[0].label == "vanilla");
  CHECK(cfg.runs[1].kind == RunKind::es_dip);
  for (const auto& r : cfg.runs) {
    CHECK(r.network.channels == std::vector<std::size_t>{4});
    CHECK(r.solver.iterations == 15);
    CHECK(r.solver.lr == 1e-2);
  }
  CHECK(cfg.runs[1].solver.early_stop.window == 3);
  CHECK(cfg.runs[0].solver.early_stop.window == EarlyStopConfig{}.window);

  const std::string ini = to_ini(cfg);
  ExperimentConfig again = parse_config(ini);
  CHECK(to_ini(again) == ini);

  apply_override(cfg, "run:es.lr", "0.5");
  CHECK(cfg.runs[1].solver.lr == 0.5);
  CHECK(cfg.runs[0].solver.lr == 1e-2);
  apply_override(cfg, "network.depth", "4");
  CHECK(cfg.runs[0].network.depth == 4);
  CHECK(cfg.runs[1].network.depth == 4);
  apply_override(cfg, "noise.sigma", "0.2");
  CHECK(cfg.noise.sigma == 0.2);

  CHECK(kind_of_throw([&] { apply_override(cfg, "noise.colour", "red"); }) == ErrorKind::config);
  CHECK(kind_of_throw([&] { apply_override(cfg, "sigma", "1"); }) == ErrorKind::config);
  CHECK(kind_of_throw([] { parse_config("[runs]\nlr = fast\n"); }) == ErrorKind::config);
  CHECK(kind_of_throw([] { parse_config("[mystery]\na = 1\n"); }) == ErrorKind::config);
  CHECK(kind_of_throw([] { parse_config("[run:a]\nmethod = magic\n"); }) == ErrorKind::config);
  CHECK(kind_of_throw([] { parse_config("[run:a.b]\nmethod = vanilla\n"); }) == ErrorKind::config);
  CHECK(kind_of_throw([] { parse_config("[run:a]\nmethod = deep-decoder\n"); }) == ErrorKind::config);
  CHECK(kind_of_throw([] { load_config("/nonexistent/config.ini"); }) == ErrorKind::io);

  ExperimentConfig bare = parse_config("");
  REQUIRE(bare.runs.size() == 1);
  CHECK(bare.runs[0].method == "vanilla");
}

TEST_CASE("curve csv contract") {
  CurveSet c;
  c.label = "two";
  c.iteration = {0, 1};
  c.psnr = {12.5, 13.25};
  c.loss = {1.0, 0.5};
  c.wmv = {std::nan(""), 0.25};
  const fs::path dir = scratch_dir("csv");
  fs::create_directories(dir);
  emit_csv(c, dir / "two.csv");
  const std::string text = slurp(dir / "two.csv");
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
  CHECK(text.find('\r') == std::string::npos);
  CHECK(text.rfind("iteration,psnr,loss,wmv\n", 0) == 0);

  // Full-precision round trip.
  CurveSet r;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (std::size_t i = 0; i < 50; ++i) {
    r.iteration.push_back(i);
    r.psnr.push_back(u(rng));
    r.loss.push_back(std::exp(u(rng) / 50.0));
    r.wmv.push_back(u(rng) * 1e-9);
  }
  r.mse_theory = r.loss;
  emit_csv(r, dir / "r.csv");
  CurveSet back = read_curves_csv(dir / "r.csv");
  CHECK(back.iteration == r.iteration);
  CHECK(back.psnr == r.psnr);
  CHECK(back.loss == r.loss);
  CHECK(back.wmv == r.wmv);
  REQUIRE(back.mse_theory.has_value());
  CHECK(*back.mse_theory == *r.mse_theory);
  CHECK(slurp(dir / "r.csv").rfind("iteration,psnr,loss,wmv,mse_theory\n", 0) == 0);

  CurveSet nan_back = read_curves_csv(dir / "two.csv");
  CHECK(std::isnan(nan_back.wmv[0]));

  CurveSet bad = c;
  bad.loss.push_back(1.0);
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = c;
  bad.loss[1] = std::nan("");
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK_THROWS_AS(emit_csv(c, "/nonexistent/dir/x.csv"), Error);
  fs::remove_all(dir);
}

TEST_CASE("summaries and averages") {
  CurveSet a, b;
  a.iteration = {0, 1, 2};
  a.psnr = {10, 14, 12};
  a.loss = {3, 2, 1};
  a.wmv = {0, 0, 0};
  b.iteration = {0, 1};
  b.psnr = {12, 16};
  b.loss = {1, 1};
  b.wmv = {0, 0};
  CurveSummary s = summarize(a);
  CHECK(s.peak_psnr == 14);
  CHECK(s.peak_iteration == 1);
  CHECK(s.final_psnr == 12);
  CHECK(s.drop == 2);
  CurveSet m = average_curves({a, b}, "mean");
  CHECK(m.size() == 2);
  CHECK(m.psnr == std::vector<double>{11, 15});
  CHECK(m.loss == std::vector<double>{2, 1.5});
}

TEST_CASE("runs are deterministic and echo a reproducing manifest") {
  ExperimentConfig cfg = parse_config(kSmall);
  cfg.out_dir = scratch_dir("run_a");
  ExperimentResult a = run_experiment(cfg);
  REQUIRE(a.records.size() == 4);
  CHECK(a.of("vanilla").size() == 2);
  for (const auto& r : a.records) CHECK(fs::exists(r.csv));
  CHECK(a.of("vanilla")[0]->curves.size() == 15);
  // The es-dip run halts early with small window and patience.
  for (const auto* r : a.of("es")) {
    REQUIRE(r->stop_iteration.has_value());
    CHECK(r->curves.size() < 15);
    CHECK(r->stop_psnr.has_value());
  }

  const auto manifest = nlohmann::json::parse(slurp(cfg.out_dir / "manifest.json"));
  CHECK(manifest["seeds"]["signal"] == 7);
  CHECK(manifest["versions"]["corpus"] == kCorpusVersion);
  CHECK(manifest["runs"].size() == 4);
  CHECK(manifest["runs"][0]["wall_seconds"].get<double>() >= 0.0);

  ExperimentConfig echo = parse_config(manifest["config_ini"].get<std::string>());
  echo.out_dir = scratch_dir("run_b");
  ExperimentResult b = run_experiment(echo);
  for (std::size_t i = 0; i < a.records.size(); ++i)
    CHECK(slurp(a.records[i].csv) == slurp(b.records[i].csv));
  CHECK(to_ini(load_config(cfg.out_dir / "config.ini")) == to_ini(cfg));
  fs::remove_all(cfg.out_dir);
  fs::remove_all(echo.out_dir);
}

TEST_CASE("psnr column matches snapshots") {
  ExperimentConfig cfg = parse_config(kSmall);
  cfg.runs.resize(1);
  cfg.runs[0].solver.snapshot_every = 1;
  SolveTrace tr = run_single(cfg, cfg.runs[0], 1);
  SignalSpec s = cfg.signal;
  s.seed = cfg.seeds.signal + 1;
  const Tensor truth = make_signal(s);
  REQUIRE(tr.snapshots.size() == tr.size());
  for (const auto& [t, x] : tr.snapshots)
    CHECK(std::abs(psnr(x, truth, default_peak(truth)) - tr.psnr[t]) < 1e-9);
}

TEST_CASE("single-iteration config yields single-row curves") {
  ExperimentConfig cfg = parse_config(kSmall);
  apply_override(cfg, "runs.iterations", "1");
  cfg.runs.resize(1);
  cfg.signals = 1;
  cfg.out_dir = scratch_dir("one");
  ExperimentResult r = run_experiment(cfg);
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].curves.size() == 1);
  CurveSet back = read_curves_csv(r.records[0].csv);
  CHECK(back.size() == 1);
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("oes runs write a mask and other methods run end to end") {
  ExperimentConfig cfg = parse_config(std::string(kSmall) + R"(
[run:oes]
method = oes
sparsity = 0.25
mask_steps = 5

[run:aq]
method = aseqdip
input = measurement
lambda = 1

[run:dd]
method = deep-decoder
family = deep-decoder-multi
depth = 3
channels = 4
)");
  cfg.signals = 1;
  cfg.out_dir = scratch_dir("oes");
  ExperimentResult r = run_experiment(cfg);
  CHECK(r.records.size() == 5);
  const RunRecord* oes = r.of("oes").at(0);
  REQUIRE(oes->mask_density.has_value());
  CHECK(*oes->mask_density == doctest::Approx(0.25).epsilon(0.05));
  CHECK(fs::exists(cfg.out_dir / "oes_s0_mask.csv"));
  fs::remove_all(cfg.out_dir);
}

TEST_CASE("module errors carry run context") {
  ExperimentConfig cfg = parse_config(std::string(kSmall) + "\n[run:bad]\nmethod = aseqdip\ninput_channels = 3\n");
  try {
    run_experiment(cfg);
    FAIL("expected an Error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
    CHECK(std::string(e.what()).find("run 'bad' signal 0") != std::string::npos);
  }
}

TEST_CASE("desk protocol configs are valid") {
  ExperimentConfig pv = peak_variance_config(10);
  CHECK(pv.signals == 4);
  CHECK(pv.runs.size() == 1);
  ExperimentConfig mc = method_comparison_config(10);
  CHECK(mc.signals == 10);
  std::vector<std::string> methods;
  for (const auto& r : mc.runs) methods.push_back(r.method);
  CHECK(methods == std::vector<std::string>{"vanilla", "aseqdip", "self-guided", "deep-decoder", "dop", "oes", "es-dip"});
}
