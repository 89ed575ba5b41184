// SPDX-License-Identifier: Apache-2.0
#include "diplab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Core>
#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/version.hpp>
#include "json.hpp"

#include "diplab/error.hpp"
#include "diplab/metrics.hpp"
#include "diplab/oes.hpp"

namespace diplab {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Corpus

std::string to_string(SignalKind k) {
  switch (k) {
    case SignalKind::square_wave: return "square-wave";
    case SignalKind::piecewise: return "piecewise";
    case SignalKind::image: return "image";
  }
  return "?";
}

SignalKind signal_kind_from_string(const std::string& s) {
  if (s == "square-wave") return SignalKind::square_wave;
  if (s == "piecewise") return SignalKind::piecewise;
  if (s == "image") return SignalKind::image;
  throw Error(ErrorKind::config, "unknown signal kind '" + s + "'");
}

void SignalSpec::validate() const {
  if (kind == SignalKind::image) {
    require(image_size >= 2, ErrorKind::invalid_argument, "image size must be at least 2");
  } else {
    require(length >= 2, ErrorKind::invalid_argument, "signal length must be at least 2");
  }
  if (kind == SignalKind::square_wave) require(period >= 1, ErrorKind::invalid_argument, "period must be positive");
}

Tensor make_signal(const SignalSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  switch (spec.kind) {
    case SignalKind::square_wave: {
      const double lo = uniform(0.1, 0.4);
      const double hi = uniform(0.6, 0.9);
      const auto phase = static_cast<std::size_t>(u01(rng) * static_cast<double>(2 * spec.period));
      Tensor x({1, spec.length});
      for (std::size_t i = 0; i < spec.length; ++i) x[i] = ((i + phase) / spec.period) % 2 == 0 ? lo : hi;
      return x;
    }
    case SignalKind::piecewise: {
      std::vector<std::size_t> cuts(spec.pieces);
      for (auto& c : cuts) c = 1 + static_cast<std::size_t>(u01(rng) * static_cast<double>(spec.length - 1));
      std::sort(cuts.begin(), cuts.end());
      Tensor x({1, spec.length});
      double level = uniform(0.1, 0.9);
      std::size_t next = 0;
      for (std::size_t i = 0; i < spec.length; ++i) {
        while (next < cuts.size() && cuts[next] == i) {
          level = uniform(0.1, 0.9);
          ++next;
        }
        x[i] = level;
      }
      return x;
    }
    case SignalKind::image: {
      const std::size_t s = spec.image_size;
      const double sd = static_cast<double>(s);
      Tensor x({1, s, s});
      const double bg = uniform(0.1, 0.3);
      for (double& v : x.data()) v = bg;
      for (int r = 0; r < 3; ++r) {
        const double i0 = uniform(0.0, 0.7) * sd, j0 = uniform(0.0, 0.7) * sd;
        const double h = uniform(0.15, 0.4) * sd, w = uniform(0.15, 0.4) * sd;
        const double level = uniform(0.4, 0.9);
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j)
            if (double(i) >= i0 && double(i) < i0 + h && double(j) >= j0 && double(j) < j0 + w) x[i * s + j] = level;
      }
      for (int d = 0; d < 2; ++d) {
        const double ci = uniform(0.2, 0.8) * sd, cj = uniform(0.2, 0.8) * sd;
        const double rad = uniform(0.08, 0.2) * sd;
        const double level = uniform(0.5, 1.0);
        for (std::size_t i = 0; i < s; ++i)
          for (std::size_t j = 0; j < s; ++j) {
            const double di = double(i) + 0.5 - ci, dj = double(j) + 0.5 - cj;
            if (di * di + dj * dj <= rad * rad) x[i * s + j] = level;
          }
      }
      return x;
    }
  }
  throw Error(ErrorKind::invalid_argument, "invalid signal kind");
}

std::vector<Tensor> desk_corpus(const SignalSpec& spec, std::size_t count) {
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SignalSpec s = spec;
    s.seed = spec.seed + i;
    out.push_back(make_signal(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Operators

std::string to_string(Task t) {
  switch (t) {
    case Task::denoise: return "denoise";
    case Task::inpaint: return "inpaint";
    case Task::cs: return "cs";
    case Task::dft_recon: return "dft-recon";
  }
  return "?";
}

Task task_from_string(const std::string& s) {
  if (s == "denoise") return Task::denoise;
  if (s == "inpaint") return Task::inpaint;
  if (s == "cs") return Task::cs;
  if (s == "dft-recon") return Task::dft_recon;
  throw Error(ErrorKind::config, "unknown task '" + s + "'");
}

void OperatorSpec::validate() const {
  if (task != Task::denoise)
    require(ratio > 0.0 && ratio <= 1.0, ErrorKind::invalid_argument, "operator ratio must be in (0, 1]");
}

LinearOperator make_operator(const OperatorSpec& spec, std::size_t n) {
  spec.validate();
  const auto count = [&](double frac) {
    return std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(frac * static_cast<double>(n))), 1, n);
  };
  switch (spec.task) {
    case Task::denoise: return LinearOperator::identity(n);
    case Task::inpaint: {
      if (spec.box) {
        const std::size_t hole = n - count(spec.ratio);
        return LinearOperator::box_mask(n, (n - hole) / 2, hole);
      }
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(spec.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(count(spec.ratio));
      std::sort(idx.begin(), idx.end());
      return LinearOperator::mask(n, idx);
    }
    case Task::cs: return LinearOperator::gaussian_cs(count(spec.ratio), n, spec.seed);
    case Task::dft_recon: {
      const std::size_t kmax = std::clamp<std::size_t>(
          static_cast<std::size_t>(std::lround(spec.ratio * static_cast<double>(n / 2))), 0, n / 2);
      std::vector<std::size_t> freq(kmax + 1);
      std::iota(freq.begin(), freq.end(), 0);
      return LinearOperator::subsampled_dft(n, freq);
    }
  }
  throw Error(ErrorKind::invalid_argument, "invalid task");
}

// ---------------------------------------------------------------------------
// Config

void OesSettings::validate() const {
  require(sparsity > 0.0 && sparsity < 1.0, ErrorKind::invalid_argument, "oes sparsity must be in (0, 1)");
  require(mask_lr > 0.0, ErrorKind::invalid_argument, "oes mask lr must be positive");
  require(temperature > 0.0, ErrorKind::invalid_argument, "oes temperature must be positive");
  require(lambda_kl >= 0.0, ErrorKind::invalid_argument, "oes KL weight must be non-negative");
  require(target > 0.0 && target < 1.0, ErrorKind::invalid_argument, "oes target must be in (0, 1)");
  require(init_prob > 0.0 && init_prob < 1.0, ErrorKind::invalid_argument, "oes init probability must be in (0, 1)");
}

namespace {

RunKind kind_of(const std::string& method) {
  if (method == "oes") return RunKind::oes;
  if (method == "es-dip") return RunKind::es_dip;
  return RunKind::solver;
}

bool is_decoder(Family f) { return f == Family::deep_decoder_2layer || f == Family::deep_decoder_multi; }

}  // namespace

void RunSpec::validate() const {
  require(!label.empty(), ErrorKind::config, "run label must not be empty");
  require(label.find_first_of(" /\\.:,") == std::string::npos, ErrorKind::config,
          "run label '" + label + "' must not contain spaces, separators or dots");
  if (method == "deep-decoder")
    require(is_decoder(network.family), ErrorKind::config, "deep-decoder runs need a deep-decoder network family");
  else if (kind == RunKind::solver)
    method_from_string(method);
  if (kind == RunKind::oes) oes.validate();
  require(init_scale > 0.0, ErrorKind::invalid_argument, "init scale must be positive");
  solver.validate();
}

void ExperimentConfig::validate() const {
  require(signals >= 1, ErrorKind::config, "need at least one signal");
  require(!runs.empty(), ErrorKind::config, "experiment has no runs");
  signal.validate();
  op.validate();
  noise.validate();
  std::vector<std::string> labels;
  for (const auto& r : runs) {
    r.validate();
    require(std::find(labels.begin(), labels.end(), r.label) == labels.end(), ErrorKind::config,
            "duplicate run label '" + r.label + "'");
    labels.push_back(r.label);
  }
}

void ExperimentConfig::reseed(std::uint64_t base) {
  seeds.signal = base;
  seeds.noise = base + 1;
  seeds.params = base + 2;
  seeds.input = base + 3;
  seeds.operator_ = base + 4;
  seeds.solver = base + 5;
}

namespace {

template <class T>
T parse_as(const std::string& key, const std::string& value) {
  try {
    return boost::lexical_cast<T>(boost::trim_copy(value));
  } catch (const boost::bad_lexical_cast&) {
    throw Error(ErrorKind::config, "cannot parse '" + value + "' for key '" + key + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = boost::to_lower_copy(boost::trim_copy(value));
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorKind::config, "cannot parse '" + value + "' as a boolean for key '" + key + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  boost::split(parts, value, boost::is_any_of(","));
  for (auto& p : parts) boost::trim(p);
  parts.erase(std::remove(parts.begin(), parts.end(), std::string()), parts.end());
  return parts;
}

UpsampleMode upsample_from_string(const std::string& s) {
  if (s == "nearest") return UpsampleMode::nearest;
  if (s == "linear") return UpsampleMode::linear;
  throw Error(ErrorKind::config, "unknown upsample mode '" + s + "'");
}

std::string upsample_name(UpsampleMode m) { return m == UpsampleMode::nearest ? "nearest" : "linear"; }

EarlyStopConfig parse_early_stop(const std::string& key, const std::string& value) {
  const auto parts = split_list(value);
  require(parts.size() == 3, ErrorKind::config, "'" + key + "' expects W,P,eps");
  EarlyStopConfig es;
  es.window = parse_as<std::size_t>(key, parts[0]);
  es.patience = parse_as<std::size_t>(key, parts[1]);
  es.eps_rel = parse_as<double>(key, parts[2]);
  return es;
}

// Network keys, accepted in [network] and in run sections.
bool set_network_key(RunSpec& run, const std::string& key, const std::string& value) {
  NetworkSpec& n = run.network;
  if (key == "family") {
    n.family = family_from_string(boost::trim_copy(value));
  } else if (key == "depth") {
    n.depth = parse_as<std::size_t>(key, value);
  } else if (key == "channels") {
    n.channels.clear();
    for (const auto& c : split_list(value)) n.channels.push_back(parse_as<std::size_t>(key, c));
  } else if (key == "kernel_size") {
    n.kernel_size = parse_as<std::size_t>(key, value);
  } else if (key == "input_channels") {
    n.input_channels = parse_as<std::size_t>(key, value);
  } else if (key == "levels") {
    n.levels = parse_as<std::size_t>(key, value);
  } else if (key == "bias") {
    n.bias = parse_bool(key, value);
  } else if (key == "upsample") {
    n.upsample = upsample_from_string(boost::trim_copy(value));
  } else if (key == "init_scale") {
    run.init_scale = parse_as<double>(key, value);
  } else {
    return false;
  }
  return true;
}

bool set_early_stop_key(EarlyStopConfig& es, const std::string& key, const std::string& value) {
  if (key == "window")
    es.window = parse_as<std::size_t>(key, value);
  else if (key == "patience")
    es.patience = parse_as<std::size_t>(key, value);
  else if (key == "eps_rel")
    es.eps_rel = parse_as<double>(key, value);
  else
    return false;
  return true;
}

void set_run_key(RunSpec& run, const std::string& key, const std::string& value) {
  if (set_network_key(run, key, value)) return;
  SolverConfig& s = run.solver;
  OesSettings& o = run.oes;
  const std::string v = boost::trim_copy(value);
  if (key == "method") {
    run.method = v;
    run.kind = kind_of(v);
    if (run.kind == RunKind::solver && v != "deep-decoder") s.method = method_from_string(v);
    if (run.kind != RunKind::solver || v == "deep-decoder") s.method = Method::vanilla;
  } else if (key == "iterations") {
    s.iterations = parse_as<std::size_t>(key, value);
  } else if (key == "lr") {
    s.lr = parse_as<double>(key, value);
  } else if (key == "lambda") {
    s.lambda = parse_as<double>(key, value);
  } else if (key == "mc_samples") {
    s.mc_samples = parse_as<std::size_t>(key, value);
  } else if (key == "perturbation_ratio") {
    s.perturbation_ratio = parse_as<double>(key, value);
  } else if (key == "inner_steps") {
    s.inner_steps = parse_as<std::size_t>(key, value);
  } else if (key == "lr_ratio") {
    s.lr_ratio = parse_as<double>(key, value);
  } else if (key == "dop_init") {
    s.dop_init = parse_as<double>(key, value);
  } else if (key == "optimizer") {
    s.optimizer = optimizer_kind_from_string(v);
  } else if (key == "train_input") {
    s.train_input = parse_bool(key, value);
  } else if (key == "trainable") {
    s.trainable = split_list(value);
  } else if (key == "halt_on_stop") {
    s.halt_on_stop = parse_bool(key, value);
  } else if (key == "snapshot_every") {
    s.snapshot_every = parse_as<std::size_t>(key, value);
  } else if (key == "early_stop") {
    s.early_stop = parse_early_stop(key, value);
  } else if (key == "input") {
    if (v == "random")
      run.input_from_measurement = false;
    else if (v == "measurement")
      run.input_from_measurement = true;
    else
      throw Error(ErrorKind::config, "input must be 'random' or 'measurement', got '" + v + "'");
  } else if (key == "sparsity") {
    o.sparsity = parse_as<double>(key, value);
  } else if (key == "mask_steps") {
    o.mask_steps = parse_as<std::size_t>(key, value);
  } else if (key == "mask_lr") {
    o.mask_lr = parse_as<double>(key, value);
  } else if (key == "temperature") {
    o.temperature = parse_as<double>(key, value);
  } else if (key == "lambda_kl") {
    o.lambda_kl = parse_as<double>(key, value);
  } else if (key == "target") {
    o.target = parse_as<double>(key, value);
  } else if (key == "init_prob") {
    o.init_prob = parse_as<double>(key, value);
  } else if (key == "include_biases") {
    o.include_biases = parse_bool(key, value);
  } else {
    throw Error(ErrorKind::config, "unknown run key '" + key + "'");
  }
}

void set_key(ExperimentConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
  const std::string v = boost::trim_copy(value);
  if (section == "experiment") {
    if (key == "name")
      cfg.name = v;
    else if (key == "signals")
      cfg.signals = parse_as<std::size_t>(key, value);
    else if (key == "seed")
      cfg.reseed(parse_as<std::uint64_t>(key, value));
    else if (key == "out")
      cfg.out_dir = v;
    else if (key == "peak")
      cfg.peak = parse_as<double>(key, value);
    else if (key == "task")
      cfg.op.task = task_from_string(v);
    else
      throw Error(ErrorKind::config, "unknown key 'experiment." + key + "'");
  } else if (section == "signal") {
    SignalSpec& s = cfg.signal;
    if (key == "kind")
      s.kind = signal_kind_from_string(v);
    else if (key == "length")
      s.length = parse_as<std::size_t>(key, value);
    else if (key == "period")
      s.period = parse_as<std::size_t>(key, value);
    else if (key == "pieces")
      s.pieces = parse_as<std::size_t>(key, value);
    else if (key == "image_size")
      s.image_size = parse_as<std::size_t>(key, value);
    else
      throw Error(ErrorKind::config, "unknown key 'signal." + key + "'");
  } else if (section == "operator") {
    if (key == "task")
      cfg.op.task = task_from_string(v);
    else if (key == "ratio")
      cfg.op.ratio = parse_as<double>(key, value);
    else if (key == "box")
      cfg.op.box = parse_bool(key, value);
    else
      throw Error(ErrorKind::config, "unknown key 'operator." + key + "'");
  } else if (section == "noise") {
    NoiseModel& n = cfg.noise;
    if (key == "kind") {
      if (v == "gaussian")
        n.kind = NoiseKind::gaussian;
      else if (v == "impulse" || v == "sparse-impulse")
        n.kind = NoiseKind::sparse_impulse;
      else
        throw Error(ErrorKind::config, "unknown noise kind '" + v + "'");
    } else if (key == "sigma") {
      n.sigma = parse_as<double>(key, value);
    } else if (key == "sparsity") {
      n.sparsity = parse_as<double>(key, value);
    } else if (key == "amplitude") {
      n.amplitude = parse_as<double>(key, value);
    } else {
      throw Error(ErrorKind::config, "unknown key 'noise." + key + "'");
    }
  } else if (section == "seeds") {
    const auto s = parse_as<std::uint64_t>(key, value);
    if (key == "signal")
      cfg.seeds.signal = s;
    else if (key == "noise")
      cfg.seeds.noise = s;
    else if (key == "params")
      cfg.seeds.params = s;
    else if (key == "input")
      cfg.seeds.input = s;
    else if (key == "operator")
      cfg.seeds.operator_ = s;
    else if (key == "solver")
      cfg.seeds.solver = s;
    else
      throw Error(ErrorKind::config, "unknown key 'seeds." + key + "'");
  } else if (section == "network") {
    require(!cfg.runs.empty(), ErrorKind::config, "network keys need at least one run");
    for (auto& r : cfg.runs)
      if (!set_network_key(r, key, value)) throw Error(ErrorKind::config, "unknown key 'network." + key + "'");
  } else if (section == "early_stop") {
    for (auto& r : cfg.runs)
      if (!set_early_stop_key(r.solver.early_stop, key, value))
        throw Error(ErrorKind::config, "unknown key 'early_stop." + key + "'");
  } else if (section == "runs") {
    for (auto& r : cfg.runs) set_run_key(r, key, value);
  } else if (boost::starts_with(section, "run:")) {
    const std::string label = section.substr(4);
    auto it = std::find_if(cfg.runs.begin(), cfg.runs.end(), [&](const RunSpec& r) { return r.label == label; });
    require(it != cfg.runs.end(), ErrorKind::config, "no run labelled '" + label + "'");
    set_run_key(*it, key, value);
  } else {
    throw Error(ErrorKind::config, "unknown config section '" + section + "'");
  }
}

using Entries = std::vector<std::pair<std::string, std::string>>;

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw Error(ErrorKind::config, std::string("malformed config: ") + e.message() + " (line " +
                                       std::to_string(e.line()) + ")");
  }
  std::vector<std::pair<std::string, Entries>> sections;
  for (const auto& [name, node] : tree) {
    require(!node.empty() || node.data().empty(), ErrorKind::config, "config keys must live in sections: " + name);
    Entries e;
    for (const auto& [k, v] : node) e.emplace_back(k, v.data());
    sections.emplace_back(name, std::move(e));
  }

  ExperimentConfig cfg;
  // Runs first, so shared [network] / [early_stop] / [runs] defaults reach
  // every run; a run's own keys are applied last.
  for (const auto& [name, e] : sections)
    if (boost::starts_with(name, "run:")) {
      RunSpec r;
      r.label = name.substr(4);
      cfg.runs.push_back(std::move(r));
    }
  if (cfg.runs.empty()) cfg.runs.push_back(RunSpec{.label = "vanilla"});
  const char* order[] = {"experiment", "seeds", "signal", "operator", "noise", "network", "early_stop", "runs"};
  for (const char* want : order)
    for (const auto& [name, e] : sections)
      if (name == want)
        for (const auto& [k, v] : e) set_key(cfg, name, k, v);
  for (const auto& [name, e] : sections) {
    const bool known = std::find(std::begin(order), std::end(order), name) != std::end(order);
    if (known) continue;
    if (!boost::starts_with(name, "run:")) throw Error(ErrorKind::config, "unknown config section '" + name + "'");
    for (const auto& [k, v] : e) set_key(cfg, name, k, v);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::ostringstream o;
  o << "[experiment]\n"
    << "name = " << cfg.name << "\n"
    << "signals = " << cfg.signals << "\n"
    << "peak = " << fmt_double(cfg.peak) << "\n";
  if (!cfg.out_dir.empty()) o << "out = " << cfg.out_dir.string() << "\n";
  o << "\n[seeds]\n"
    << "signal = " << cfg.seeds.signal << "\nnoise = " << cfg.seeds.noise << "\nparams = " << cfg.seeds.params
    << "\ninput = " << cfg.seeds.input << "\noperator = " << cfg.seeds.operator_ << "\nsolver = " << cfg.seeds.solver
    << "\n";
  o << "\n[signal]\n"
    << "kind = " << to_string(cfg.signal.kind) << "\nlength = " << cfg.signal.length << "\nperiod = " << cfg.signal.period
    << "\npieces = " << cfg.signal.pieces << "\nimage_size = " << cfg.signal.image_size << "\n";
  o << "\n[operator]\n"
    << "task = " << to_string(cfg.op.task) << "\nratio = " << fmt_double(cfg.op.ratio)
    << "\nbox = " << (cfg.op.box ? "true" : "false") << "\n";
  o << "\n[noise]\n"
    << "kind = " << (cfg.noise.kind == NoiseKind::gaussian ? "gaussian" : "impulse")
    << "\nsigma = " << fmt_double(cfg.noise.sigma) << "\nsparsity = " << fmt_double(cfg.noise.sparsity)
    << "\namplitude = " << fmt_double(cfg.noise.amplitude) << "\n";
  for (const auto& r : cfg.runs) {
    const SolverConfig& s = r.solver;
    const NetworkSpec& n = r.network;
    o << "\n[run:" << r.label << "]\n"
      << "method = " << r.method << "\n"
      << "iterations = " << s.iterations << "\nlr = " << fmt_double(s.lr) << "\nlambda = " << fmt_double(s.lambda)
      << "\nmc_samples = " << s.mc_samples << "\nperturbation_ratio = " << fmt_double(s.perturbation_ratio)
      << "\ninner_steps = " << s.inner_steps << "\nlr_ratio = " << fmt_double(s.lr_ratio)
      << "\ndop_init = " << fmt_double(s.dop_init) << "\noptimizer = " << to_string(s.optimizer)
      << "\ntrain_input = " << (s.train_input ? "true" : "false");
    if (!s.trainable.empty()) o << "\ntrainable = " << boost::join(s.trainable, ",");
    o << "\nhalt_on_stop = " << (s.halt_on_stop ? "true" : "false") << "\nsnapshot_every = " << s.snapshot_every
      << "\nearly_stop = " << s.early_stop.window << "," << s.early_stop.patience << ","
      << fmt_double(s.early_stop.eps_rel) << "\ninput = " << (r.input_from_measurement ? "measurement" : "random");
    o << "\nfamily = " << to_string(n.family) << "\ndepth = " << n.depth << "\nchannels = ";
    for (std::size_t i = 0; i < n.channels.size(); ++i) o << (i ? "," : "") << n.channels[i];
    o << "\nkernel_size = " << n.kernel_size << "\ninput_channels = " << n.input_channels << "\nlevels = " << n.levels
      << "\nbias = " << (n.bias ? "true" : "false") << "\nupsample = " << upsample_name(n.upsample)
      << "\ninit_scale = " << fmt_double(r.init_scale) << "\n";
    if (r.kind == RunKind::oes) {
      const OesSettings& e = r.oes;
      o << "sparsity = " << fmt_double(e.sparsity) << "\nmask_steps = " << e.mask_steps
        << "\nmask_lr = " << fmt_double(e.mask_lr) << "\ntemperature = " << fmt_double(e.temperature)
        << "\nlambda_kl = " << fmt_double(e.lambda_kl) << "\ntarget = " << fmt_double(e.target)
        << "\ninit_prob = " << fmt_double(e.init_prob) << "\ninclude_biases = " << (e.include_biases ? "true" : "false")
        << "\n";
    }
  }
  return o.str();
}

void apply_override(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  require(dot != std::string::npos && dot > 0 && dot + 1 < dotted_key.size(), ErrorKind::config,
          "override key must look like section.key, got '" + dotted_key + "'");
  set_key(cfg, dotted_key.substr(0, dot), dotted_key.substr(dot + 1), value);
  cfg.validate();
}

// ---------------------------------------------------------------------------
// Curves

void CurveSet::validate() const {
  const std::size_t n = iteration.size();
  require(psnr.size() == n && loss.size() == n && wmv.size() == n, ErrorKind::invalid_argument,
          "curve set '" + label + "' has unequal column lengths");
  if (mse_theory)
    require(mse_theory->size() == n, ErrorKind::invalid_argument, "curve set '" + label + "' mse_theory length");
  const bool no_truth = std::all_of(psnr.begin(), psnr.end(), [](double v) { return std::isnan(v); });
  for (std::size_t i = 0; i < n; ++i) {
    require(std::isfinite(loss[i]), ErrorKind::invalid_argument, "curve set '" + label + "' has a non-finite loss");
    if (!no_truth)
      require(std::isfinite(psnr[i]), ErrorKind::invalid_argument, "curve set '" + label + "' has a non-finite psnr");
    require(!std::isinf(wmv[i]), ErrorKind::invalid_argument, "curve set '" + label + "' has an infinite wmv");
  }
}

CurveSet curves_from_trace(const SolveTrace& trace, std::string label) {
  CurveSet c;
  c.label = std::move(label);
  c.iteration.resize(trace.size());
  std::iota(c.iteration.begin(), c.iteration.end(), std::size_t{0});
  c.psnr = trace.psnr;
  c.loss = trace.loss;
  c.wmv = trace.wmv;
  return c;
}

std::string curves_to_csv(const CurveSet& curves) {
  curves.validate();
  std::string out = curves.mse_theory ? "iteration,psnr,loss,wmv,mse_theory\n" : "iteration,psnr,loss,wmv\n";
  for (std::size_t i = 0; i < curves.size(); ++i) {
    out += std::to_string(curves.iteration[i]);
    out += ',' + fmt_double(curves.psnr[i]) + ',' + fmt_double(curves.loss[i]) + ',' + fmt_double(curves.wmv[i]);
    if (curves.mse_theory) out += ',' + fmt_double((*curves.mse_theory)[i]);
    out += '\n';
  }
  return out;
}

void emit_csv(const CurveSet& curves, const std::filesystem::path& path) {
  const std::string text = curves_to_csv(curves);
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  f << text;
  require(static_cast<bool>(f), ErrorKind::io, "failed writing '" + path.string() + "'");
}

CurveSet read_curves_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), ErrorKind::io, "cannot open '" + path.string() + "'");
  std::string line;
  require(static_cast<bool>(std::getline(f, line)), ErrorKind::io, "'" + path.string() + "' is empty");
  CurveSet c;
  c.label = path.stem().string();
  bool theory = false;
  if (line == "iteration,psnr,loss,wmv,mse_theory")
    theory = true;
  else
    require(line == "iteration,psnr,loss,wmv", ErrorKind::io, "'" + path.string() + "' has an unexpected header");
  if (theory) c.mse_theory.emplace();
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto parts = split_list(line);
    require(parts.size() == (theory ? 5u : 4u), ErrorKind::io, "malformed curve row: " + line);
    auto num = [&](const std::string& s) {
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      require(end && *end == '\0', ErrorKind::io, "malformed number '" + s + "'");
      return v;
    };
    c.iteration.push_back(parse_as<std::size_t>("iteration", parts[0]));
    c.psnr.push_back(num(parts[1]));
    c.loss.push_back(num(parts[2]));
    c.wmv.push_back(num(parts[3]));
    if (theory) c.mse_theory->push_back(num(parts[4]));
  }
  return c;
}

CurveSummary summarize(const CurveSet& curves) {
  require(curves.size() > 0, ErrorKind::invalid_argument, "cannot summarize an empty curve set");
  CurveSummary s;
  std::size_t best = 0;
  for (std::size_t i = 1; i < curves.size(); ++i)
    if (curves.psnr[i] > curves.psnr[best]) best = i;
  s.peak_psnr = curves.psnr[best];
  s.peak_iteration = curves.iteration[best];
  s.final_psnr = curves.psnr.back();
  s.drop = s.peak_psnr - s.final_psnr;
  return s;
}

CurveSet average_curves(const std::vector<CurveSet>& curves, std::string label) {
  require(!curves.empty(), ErrorKind::invalid_argument, "no curves to average");
  std::size_t n = curves[0].size();
  for (const auto& c : curves) n = std::min(n, c.size());
  CurveSet out;
  out.label = std::move(label);
  out.iteration.assign(curves[0].iteration.begin(), curves[0].iteration.begin() + long(n));
  out.psnr.assign(n, 0.0);
  out.loss.assign(n, 0.0);
  out.wmv.assign(n, 0.0);
  const double inv = 1.0 / static_cast<double>(curves.size());
  for (const auto& c : curves)
    for (std::size_t i = 0; i < n; ++i) {
      out.psnr[i] += inv * c.psnr[i];
      out.loss[i] += inv * c.loss[i];
      out.wmv[i] += inv * c.wmv[i];
    }
  return out;
}

// ---------------------------------------------------------------------------
// Runs

std::vector<const RunRecord*> ExperimentResult::of(const std::string& label) const {
  std::vector<const RunRecord*> out;
  for (const auto& r : records)
    if (r.label == label) out.push_back(&r);
  return out;
}

CurveSet ExperimentResult::averaged(const std::string& label) const {
  std::vector<CurveSet> cs;
  for (const auto* r : of(label)) cs.push_back(r->curves);
  require(!cs.empty(), ErrorKind::invalid_argument, "no records for run '" + label + "'");
  return average_curves(cs, label);
}

ProblemInstance make_instance(const ExperimentConfig& cfg, std::size_t i) {
  SignalSpec s = cfg.signal;
  s.seed = cfg.seeds.signal + i;
  Tensor x = make_signal(s);
  OperatorSpec os = cfg.op;
  os.seed = cfg.seeds.operator_;
  LinearOperator op = make_operator(os, x.size());
  NoiseModel noise = cfg.noise;
  noise.seed = cfg.seeds.noise + i;
  Tensor y = corrupt(op.apply(x), noise);
  return {x, InverseProblem{std::move(op), std::move(y), x}};
}

RunStart make_run_start(const ExperimentConfig& cfg, const RunSpec& run, const ProblemInstance& inst) {
  NetworkSpec ns = run.network;
  ns.output_shape = ns.family == Family::deep_decoder_2layer ? Shape{inst.truth.size()} : inst.truth.shape();
  RunStart out{build(ns), {}, {}};
  out.params = init_params(out.net, run.init_scale, cfg.seeds.params);
  std::optional<Tensor> z;
  if (out.net.input_shape) {
    if (run.input_from_measurement) {
      Tensor aty = inst.prob.op.adjoint(inst.prob.y);
      require(aty.size() == shape_numel(*out.net.input_shape), ErrorKind::config,
              "input = measurement needs an input of " + std::to_string(aty.size()) + " entries, network takes " +
                  shape_to_string(*out.net.input_shape));
      z = aty.reshaped(*out.net.input_shape);
    } else {
      z = draw_input(out.net, cfg.seeds.input);
    }
  } else {
    require(!run.input_from_measurement, ErrorKind::config, "network has no input to start from the measurement");
  }
  out.init = bind_leaves(out.params, z ? &*z : nullptr);
  return out;
}

namespace {

SolveTrace solve_instance(const ExperimentConfig& cfg, const RunSpec& run, const ProblemInstance& inst,
                          std::optional<double>* mask_density, BinaryMask* mask_out) {
  const RunStart start = make_run_start(cfg, run, inst);
  const Network& net = start.net;
  const ParamSet& params = start.params;
  const LeafValues& init = start.init;
  Generator gen = Generator::of(net);
  SolverConfig sc = run.solver;
  sc.seed = cfg.seeds.solver;
  sc.peak = cfg.peak;

  switch (run.kind) {
    case RunKind::solver: return solve(gen, init, inst.prob, sc);
    case RunKind::es_dip:
      sc.method = Method::vanilla;
      sc.halt_on_stop = true;
      return solve(gen, init, inst.prob, sc);
    case RunKind::oes: {
      MaskDistribution settings;
      settings.temperature = run.oes.temperature;
      settings.target = run.oes.target;
      settings.lambda_kl = run.oes.lambda_kl;
      MaskDistribution d0 = uniform_distribution(net, params, run.oes.init_prob, settings, run.oes.include_biases);
      MaskLearnConfig mc;
      mc.steps = run.oes.mask_steps;
      mc.lr = run.oes.mask_lr;
      mc.seed = cfg.seeds.solver;
      MaskLearnResult learned = learn_mask(gen, init, inst.prob, std::move(d0), mc);
      BinaryMask mask = threshold(learned.dist, run.oes.sparsity);
      if (mask_density) *mask_density = mask.density();
      sc.method = Method::vanilla;
      SolveTrace tr = train_subnet(gen, init, mask, inst.prob, sc);
      if (mask_out) *mask_out = std::move(mask);
      return tr;
    }
  }
  throw Error(ErrorKind::invalid_argument, "invalid run kind");
}

}  // namespace

SolveTrace run_single(const ExperimentConfig& cfg, const RunSpec& run, std::size_t signal_index,
                      std::optional<double>* mask_density) {
  ProblemInstance inst = make_instance(cfg, signal_index);
  return solve_instance(cfg, run, inst, mask_density, nullptr);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const bool write = !cfg.out_dir.empty();
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    require(!ec, ErrorKind::io, "cannot create '" + cfg.out_dir.string() + "': " + ec.message());
  }
  ExperimentResult result;
  for (std::size_t i = 0; i < cfg.signals; ++i) {
    const ProblemInstance inst = make_instance(cfg, i);
    for (const auto& run : cfg.runs) {
      const std::string context = "run '" + run.label + "' signal " + std::to_string(i) + ": ";
      try {
        RunRecord rec;
        rec.label = run.label;
        rec.method = run.method;
        rec.signal_index = i;
        BinaryMask mask;
        SolveTrace tr = solve_instance(cfg, run, inst, &rec.mask_density, &mask);
        rec.curves = curves_from_trace(tr, run.label);
        rec.stop_iteration = tr.stop_iteration;
        if (tr.stop_iteration && !tr.stop_iterate.empty())
          rec.stop_psnr = psnr(tr.stop_iterate, inst.truth, cfg.peak > 0.0 ? cfg.peak : default_peak(inst.truth));
        rec.wall_seconds = tr.wall_seconds;
        if (write) {
          const std::string stem = run.label + "_s" + std::to_string(i);
          rec.csv = cfg.out_dir / (stem + ".csv");
          emit_csv(rec.curves, rec.csv);
          if (run.kind == RunKind::oes) write_mask_csv((cfg.out_dir / (stem + "_mask.csv")).string(), mask);
        }
        result.records.push_back(std::move(rec));
      } catch (const Error& e) {
        throw Error(e.kind(), context + e.what());
      }
    }
  }
  if (write) {
    const std::string ini = to_ini(cfg);
    {
      std::ofstream f(cfg.out_dir / "config.ini", std::ios::binary);
      require(static_cast<bool>(f << ini), ErrorKind::io, "failed writing config.ini");
    }
    nlohmann::ordered_json m;
    m["name"] = cfg.name;
    m["versions"] = {{"diplab", kLibraryVersion},
                     {"corpus", kCorpusVersion},
                     {"compiler", __VERSION__},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"boost", BOOST_LIB_VERSION}};
    m["seeds"] = {{"signal", cfg.seeds.signal},   {"noise", cfg.seeds.noise},
                  {"params", cfg.seeds.params},   {"input", cfg.seeds.input},
                  {"operator", cfg.seeds.operator_}, {"solver", cfg.seeds.solver}};
    m["config_ini"] = ini;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& r : result.records) {
      const CurveSummary s = summarize(r.curves);
      nlohmann::ordered_json j;
      j["label"] = r.label;
      j["method"] = r.method;
      j["signal"] = r.signal_index;
      j["csv"] = r.csv.filename().string();
      j["rows"] = r.curves.size();
      j["peak_psnr"] = s.peak_psnr;
      j["peak_iteration"] = s.peak_iteration;
      j["final_psnr"] = s.final_psnr;
      j["stop_iteration"] = r.stop_iteration ? nlohmann::ordered_json(*r.stop_iteration) : nlohmann::ordered_json();
      j["stop_psnr"] = r.stop_psnr ? nlohmann::ordered_json(*r.stop_psnr) : nlohmann::ordered_json();
      j["mask_density"] = r.mask_density ? nlohmann::ordered_json(*r.mask_density) : nlohmann::ordered_json();
      j["wall_seconds"] = r.wall_seconds;
      runs.push_back(std::move(j));
    }
    m["runs"] = std::move(runs);
    std::ofstream f(cfg.out_dir / "manifest.json", std::ios::binary);
    require(static_cast<bool>(f << m.dump(2) << '\n'), ErrorKind::io, "failed writing manifest.json");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Protocols

ExperimentConfig peak_variance_config(std::size_t iterations) {
  std::ostringstream o;
  o << "[experiment]\nname = peak-variance\nsignals = 4\nseed = 40\n"
    << "[signal]\nkind = piecewise\nlength = 128\npieces = 6\n"
    << "[noise]\nkind = gaussian\nsigma = " << fmt_double(25.0 / 255.0) << "\n"
    << "[run:vanilla]\nmethod = vanilla\noptimizer = adam\nlr = 1e-4\niterations = " << iterations << "\n"
    << "family = dip-cnn-1d\ndepth = 8\nlevels = 3\nchannels = 32\ninput_channels = 8\n";
  return parse_config(o.str());
}

ExperimentConfig method_comparison_config(std::size_t iterations) {
  std::ostringstream o;
  o << "[experiment]\nname = method-comparison\nsignals = 10\nseed = 60\n"
    << "[signal]\nkind = piecewise\nlength = 64\npieces = 6\n"
    << "[noise]\nkind = gaussian\nsigma = 0.01\n"
    << "[network]\nfamily = dip-cnn-1d\ndepth = 8\nlevels = 3\nchannels = 64\ninput_channels = 8\n"
    << "[runs]\niterations = " << iterations << "\n"
    << "[run:vanilla]\nmethod = vanilla\nlr = 1e-3\n"
    << "[run:aseqdip]\nmethod = aseqdip\nlr = 1e-4\nlambda = 1\ninput = measurement\ninput_channels = 1\n"
    << "[run:self-guided]\nmethod = self-guided\nlr = 3e-4\nlambda = 0.1\ninput = measurement\ninput_channels = 1\n"
    << "[run:deep-decoder]\nmethod = deep-decoder\nlr = 0.008\nfamily = deep-decoder-multi\ndepth = 4\nchannels = 16\n"
    << "[run:dop]\nmethod = dop\nlr = 1e-4\n"
    << "[run:oes]\nmethod = oes\nlr = 1e-3\nsparsity = 0.05\nmask_lr = 1e-2\nmask_steps = 500\n"
    << "[run:es-dip]\nmethod = es-dip\nlr = 1e-3\n";
  return parse_config(o.str());
}

}  // namespace diplab
