// SPDX-License-Identifier: Apache-2.0
//
// Desk corpus, experiment configuration, seeded runs and CSV curves.
//
// A run directory holds one `<label>_s<i>.csv` per (run, signal) pair, the
// resolved `config.ini`, and `manifest.json` with the config echo, seeds,
// versions and wall-clock times. Re-running the echoed config reproduces the
// CSV files bit for bit.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diplab/networks.hpp"
#include "diplab/operators.hpp"
#include "diplab/solvers.hpp"

namespace diplab {

inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr const char* kCorpusVersion = "desk-1";

// ---------------------------------------------------------------------------
// Corpus

enum class SignalKind { square_wave, piecewise, image };

std::string to_string(SignalKind k);
SignalKind signal_kind_from_string(const std::string& s);

struct SignalSpec {
  SignalKind kind = SignalKind::piecewise;
  /// 1D length; images use image_size x image_size.
  std::size_t length = 128;
  /// Square-wave half period.
  std::size_t period = 16;
  /// Piecewise-constant: number of random breakpoints.
  std::size_t pieces = 6;
  std::size_t image_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Values in [0, 1]; shape [1, n] for 1D kinds and [1, s, s] for images.
/// Square waves alternate between two seeded levels with a seeded phase;
/// piecewise signals draw breakpoints and levels; images are a few seeded
/// axis-aligned rectangles and discs on a constant background.
Tensor make_signal(const SignalSpec& spec);

/// `count` signals with seeds spec.seed, spec.seed + 1, ...
std::vector<Tensor> desk_corpus(const SignalSpec& spec, std::size_t count);

// ---------------------------------------------------------------------------
// Configuration

enum class Task { denoise, inpaint, cs, dft_recon };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct OperatorSpec {
  Task task = Task::denoise;
  /// Kept fraction (inpaint), m / n (cs), kept frequency fraction (dft-recon).
  double ratio = 0.5;
  /// Inpainting: remove a centred contiguous block instead of random pixels.
  bool box = false;
  std::uint64_t seed = 0;

  void validate() const;
};

LinearOperator make_operator(const OperatorSpec& spec, std::size_t n);

/// Optimal-eye-surgeon settings for runs with method = oes.
struct OesSettings {
  double sparsity = 0.05;
  std::size_t mask_steps = 500;
  double mask_lr = 1e-2;
  double temperature = 0.5;
  double lambda_kl = 0.0;
  double target = 0.05;
  double init_prob = 0.5;
  bool include_biases = false;

  void validate() const;
};

enum class RunKind { solver, oes, es_dip };

/// One curve family of an experiment.
struct RunSpec {
  std::string label;
  /// Solver methods, plus "oes", "es-dip" (vanilla halted at t_ES) and
  /// "deep-decoder" (vanilla on the run's network, which must be a decoder).
  std::string method = "vanilla";
  RunKind kind = RunKind::solver;
  SolverConfig solver;
  NetworkSpec network;
  double init_scale = 1.0;
  /// Start the network input at A^T y (reshaped) instead of a random draw.
  bool input_from_measurement = false;
  OesSettings oes;

  void validate() const;
};

struct ExperimentSeeds {
  std::uint64_t signal = 0;    // signal i uses signal + i
  std::uint64_t noise = 1;     // noise for signal i uses noise + i
  std::uint64_t params = 2;    // theta_0, shared by every signal
  std::uint64_t input = 3;     // z, shared by every signal
  std::uint64_t operator_ = 4;
  std::uint64_t solver = 5;
};

struct ExperimentConfig {
  std::string name = "experiment";
  SignalSpec signal;
  std::size_t signals = 1;
  OperatorSpec op;
  NoiseModel noise;
  ExperimentSeeds seeds;
  std::vector<RunSpec> runs;
  std::filesystem::path out_dir;
  /// PSNR peak; non-positive selects the ground-truth maximum.
  double peak = 0.0;

  void validate() const;
  /// Every seed as base + offset; `--seed N` on the CLI goes through this.
  void reseed(std::uint64_t base);
};

/// Sectioned key = value text (see README for the keys). Error(config) on
/// unknown sections or keys and on unparsable values.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Resolved config back to the same text format.
std::string to_ini(const ExperimentConfig& cfg);

/// Sets `section.key` as if it appeared in the config text, e.g.
/// "run:vanilla.lr" or "noise.sigma". Error(config) on bad keys.
void apply_override(ExperimentConfig& cfg, const std::string& dotted_key, const std::string& value);

// ---------------------------------------------------------------------------
// Curves

struct CurveSet {
  std::string label;
  std::vector<std::size_t> iteration;
  std::vector<double> psnr;
  std::vector<double> loss;
  /// NaN until the early-stop window is full.
  std::vector<double> wmv;
  std::optional<std::vector<double>> mse_theory;

  std::size_t size() const noexcept { return iteration.size(); }
  /// Error(invalid_argument) on unequal lengths or non-finite loss / psnr
  /// (psnr may be NaN throughout when no ground truth exists).
  void validate() const;
};

CurveSet curves_from_trace(const SolveTrace& trace, std::string label);

/// Header `iteration,psnr,loss,wmv[,mse_theory]`, 17 significant digits, LF.
void emit_csv(const CurveSet& curves, const std::filesystem::path& path);
std::string curves_to_csv(const CurveSet& curves);
CurveSet read_curves_csv(const std::filesystem::path& path);

struct CurveSummary {
  double peak_psnr = 0.0;
  std::size_t peak_iteration = 0;
  double final_psnr = 0.0;
  /// peak - final.
  double drop = 0.0;
};
CurveSummary summarize(const CurveSet& curves);

/// Pointwise mean over curves, truncated to the shortest.
CurveSet average_curves(const std::vector<CurveSet>& curves, std::string label);

// ---------------------------------------------------------------------------
// Runs

struct RunRecord {
  std::string label;
  std::string method;
  std::size_t signal_index = 0;
  CurveSet curves;
  std::optional<std::size_t> stop_iteration;
  /// PSNR of the early-stop iterate, when the detector fired.
  std::optional<double> stop_psnr;
  double wall_seconds = 0.0;
  /// OES only: kept / total of the hard mask.
  std::optional<double> mask_density;
  std::filesystem::path csv;
};

struct ExperimentResult {
  std::vector<RunRecord> records;

  /// Records of one run label in signal order.
  std::vector<const RunRecord*> of(const std::string& label) const;
  /// average_curves over the signals of one run label.
  CurveSet averaged(const std::string& label) const;
};

/// Executes every run on every signal. Writes CSVs, config.ini and
/// manifest.json when out_dir is set. Module errors are rethrown with the
/// run label and signal index prepended.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// Ground truth and inverse problem for signal i of an experiment.
struct ProblemInstance {
  Tensor truth;
  InverseProblem prob;
};
ProblemInstance make_instance(const ExperimentConfig& cfg, std::size_t signal_index);

/// Network, theta_0 and the full leaf binding (theta_0 plus z) a run starts from.
struct RunStart {
  Network net;
  ParamSet params;
  LeafValues init;
};
RunStart make_run_start(const ExperimentConfig& cfg, const RunSpec& run, const ProblemInstance& inst);

/// Solves one (run, signal) pair in memory.
SolveTrace run_single(const ExperimentConfig& cfg, const RunSpec& run, std::size_t signal_index,
                      std::optional<double>* mask_density = nullptr);

// ---------------------------------------------------------------------------
// Desk protocols

/// Four signals, shared theta_0 and z, Adam lr 1e-4, Gaussian noise 25/255.
ExperimentConfig peak_variance_config(std::size_t iterations = 3000);

/// Method comparison on ten signals at Gaussian noise std 0.01 (the [0, 1]
/// scale is assumed): vanilla, aseqdip, self-guided, deep-decoder, dop, oes,
/// es-dip.
ExperimentConfig method_comparison_config(std::size_t iterations = 5000);

}  // namespace diplab
