#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "igapod/machine.hpp"
#include "igapod/magnetostatics.hpp"
#include "igapod/pod.hpp"
#include "igapod/surrogate.hpp"

namespace igapod {

// ------------------------------------------------------------------ config

struct PipelineConfig {
  ParamRanges ranges;
  MachineDesign design = [] {
    MachineDesign d;
    d.mesh.level = 4;
    return d;
  }();
  int harmonics = 16;
  MachineSources sources = [] {
    MachineSources s;
    s.current_angle_deg = 340.0;
    return s;
  }();
  NonlinearOptions solver = [] {
    NonlinearOptions o;
    o.method = NonlinearMethod::newton;
    return o;
  }();
  double axial_length = 0.1;  // m, torque scaling

  int n_train = 128;
  int n_test = 32;
  int n_validation = 32;
  int sobol_skip = 1;

  PodSelector pod = PodSelector::mode_count(24);
  std::vector<int> hidden{256, 256};
  TrainConfig train = [] {
    TrainConfig t;
    t.epochs = 20000;
    t.batch_size = 32;
    return t;
  }();
  std::optional<SearchSpace> search;

  bool airgap_only = false;           // restrict snapshots to DoFs of the air-gap layer
  bool per_sample_stiffness = false;  // evaluation weighting: nonlinear K(u) instead of unit-nu K0(P)

  int bench_full_solves = 5;
  int bench_predictions = 1000;

  std::uint64_t seed = 42;
  int workers = 1;
  std::string out_dir = "run";

  int total_samples() const { return n_train + n_test + n_validation; }
  void check() const;  // ConfigError

  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are a ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::string& path);

  /// Hash of everything that determines artifacts (excludes out_dir and workers).
  std::string hash() const;
  /// Hash of the settings that determine the snapshots only.
  std::string snapshot_hash() const;
};

// ------------------------------------------------------------------ sampling

/// Sobol points in [0,1)^4 (Joe-Kuo direction numbers, Gray-code order).
class Sobol4 {
 public:
  Sobol4();
  std::array<double, 4> next();
  void skip(int n);

 private:
  std::array<std::array<std::uint32_t, 32>, 4> v_{};
  std::array<std::uint32_t, 4> x_{};
  std::uint32_t index_ = 0;
};

std::vector<std::array<double, 4>> sobol_unit(int n, int skip = 1);
std::vector<ParamVector> sobol_sample(const ParamRanges& ranges, int n, int skip = 1);

enum class Split { train, test, validation };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct SampleSpec {
  int index = 0;
  Split split = Split::train;
  ParamVector params;
};

/// Consecutive blocks of one Sobol stream: train, then test, then validation.
std::vector<SampleSpec> plan_samples(const PipelineConfig& config);

// ------------------------------------------------------------------ full-order model

struct FullSolution {
  Eigen::VectorXd u;
  int iterations = 0;
  double residual = 0.0;
  double torque = 0.0;        // rotor-side radius
  double torque_stator = 0.0; // stator-side radius
};

/// Torque evaluation radii: midpoints of the rotor and stator air layers.
std::array<double, 2> torque_radii(const MachineDesign& design);

/// Geometry, assembly and nonlinear solve for one parameter vector.
FullSolution solve_full(const PipelineConfig& config, const ParamVector& p);

/// Unit-reluctivity stiffness at the reference (midpoint) parameters.
SparseMatrix reference_weighting(const PipelineConfig& config);

/// Indices kept in the reduced model: all DoFs, or the air-gap layer DoFs.
std::vector<int> retained_dofs(const PipelineConfig& config);

// ------------------------------------------------------------------ snapshot store

struct SampleRecord {
  int index = 0;
  Split split = Split::train;
  ParamVector params;
  bool ok = false;
  std::string reason;
  int iterations = 0;
  double residual = 0.0;
  double torque = 0.0;
  double torque_stator = 0.0;
  std::string file;  // relative to the store directory
};

class SnapshotStore {
 public:
  /// Reads the manifest and verifies that every successful sample has its file.
  static SnapshotStore open(const std::string& out_dir);

  const std::string& dir() const { return dir_; }
  const std::string& config_hash() const { return config_hash_; }
  int num_dofs() const { return n_; }
  const std::vector<SampleRecord>& samples() const { return samples_; }
  std::vector<SampleRecord> samples(Split s) const;  // successful samples only

  /// UsageError if the store was produced with a different configuration.
  void check_config(const PipelineConfig& config) const;

  Eigen::VectorXd load(const SampleRecord& r) const;
  SnapshotMatrix matrix(Split s, const std::vector<int>& rows) const;

 private:
  std::string dir_;
  std::string config_hash_;
  int n_ = 0;
  std::vector<SampleRecord> samples_;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Solves all planned samples with `config.workers` threads and writes
/// snapshots/sample_XXXXX.bin plus manifest.json. Failed samples are recorded;
/// more than 10% failures raise NumericalError after the manifest is written.
SnapshotStore generate_snapshots(const PipelineConfig& config, const std::vector<SampleSpec>& plan,
                                 const ProgressFn& progress = {});
SnapshotStore generate_snapshots(const PipelineConfig& config, const ProgressFn& progress = {});

// ------------------------------------------------------------------ stages

/// POD of the training split; writes pod/basis.bin, pod/eigenvalues.csv, pod/decay.csv.
PodBasis run_pod(const PipelineConfig& config, const SnapshotStore& store);

/// Identifier linking a model to its basis.
std::string basis_id(const PodBasis& basis);

/// Projects train/test snapshots, trains, writes model/model.bin and model/history.csv.
TrainResult run_training(const PipelineConfig& config, const SnapshotStore& store, const PodBasis& basis,
                         const ProgressFn& progress = {});

struct Stats {
  double mean = 0.0;
  double max = 0.0;
  double std = 0.0;
  int count = 0;
  static Stats of(const std::vector<double>& v);
};

struct SplitReport {
  Stats field_error;   // surrogate vs full order, relative seminorm
  Stats pod_error;     // projection onto the basis
  Stats torque_error;  // |T_surrogate - T_full| / |T_full|
};

struct SampleEval {
  int index = 0;
  Split split = Split::train;
  ParamVector params;
  double field_error = 0.0;
  double pod_error = 0.0;
  double torque_full = 0.0;
  double torque_surrogate = 0.0;
  double torque_error = 0.0;
};

struct EvalReport {
  int modes = 0;
  int num_dofs = 0;
  std::map<std::string, SplitReport> splits;
  std::vector<SampleEval> samples;
  bool pod_below_dnn = true;  // validation mean POD error < mean surrogate error
  std::string basis_hash;
  std::string config_hash;

  nlohmann::json to_json() const;
};

/// Reduced coefficients predicted for a sample; the exact projection is given
/// so oracle predictors can be tested.
using Predictor = std::function<Eigen::VectorXd(const ParamVector&, const Eigen::VectorXd& exact_reduced)>;

EvalReport evaluate(const PipelineConfig& config, const SnapshotStore& store, const PodBasis& basis,
                    const Predictor& predictor, const ProgressFn& progress = {});

/// Evaluation of a trained model; writes eval/report.json and eval/samples.csv.
EvalReport run_evaluation(const PipelineConfig& config, const SnapshotStore& store, const PodBasis& basis,
                          const MlpModel& model, const ProgressFn& progress = {});

struct Prediction {
  Eigen::VectorXd reduced;
  Eigen::VectorXd coefficients;  // full DoF vector (zeros outside the retained DoFs)
  std::optional<double> torque;
  std::vector<std::string> warnings;
};

/// Forward pass and reconstruction; UsageError for incompatible artifacts.
Prediction predict(const PipelineConfig& config, const MlpModel& model, const PodBasis& basis, const ParamVector& p,
                   bool with_torque = true);

struct TimingReport {
  double full_solve_median = 0.0;  // seconds
  double predict_median = 0.0;     // seconds
  double speedup = 0.0;
  int full_solves = 0;
  int predictions = 0;

  nlohmann::json to_json() const;
};

/// Median of full solves at the reference parameters against median of
/// surrogate predictions (forward pass and reconstruction); writes timing.json.
TimingReport run_bench(const PipelineConfig& config, const MlpModel& model, const PodBasis& basis);

/// snapshot -> pod -> train -> eval.
EvalReport run_all(const PipelineConfig& config, const ProgressFn& progress = {});

}  // namespace igapod
