#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "igapod/errors.hpp"
#include "igapod/machine.hpp"

namespace igapod {

/// Per-component affine map x_n = (x - shift) / scale.
struct Normalizer {
  Eigen::VectorXd shift;
  Eigen::VectorXd scale;

  static Normalizer identity(int n);
  static Normalizer min_max(const Eigen::MatrixXd& samples);  // columns to [-1, 1]
  static Normalizer z_score(const Eigen::MatrixXd& samples);  // zero mean, unit deviation
  Eigen::MatrixXd normalize(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd denormalize(const Eigen::MatrixXd& x) const;
  int size() const { return static_cast<int>(shift.size()); }
  void check() const;
};

/// Fully connected network, ReLU on hidden layers, identity output.
/// Parameters are stored flat, layer by layer: weights (row-major) then biases.
struct MlpModel {
  std::vector<int> layer_sizes;
  Eigen::VectorXd theta;
  Normalizer input;
  Normalizer output;
  std::string basis_hash;

  /// He-uniform weights, zero biases, identity normalizers.
  static MlpModel create(const std::vector<int>& layer_sizes, std::uint64_t seed);

  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  Eigen::Index weight_offset(int layer) const;
  Eigen::Index bias_offset(int layer) const;

  Eigen::VectorXd forward(const ParamVector& p) const;
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const;  // one sample per column

  void check() const;
};

Eigen::VectorXd to_input(const ParamVector& p);

/// ||ref - pred||^2 / ||ref||^2. DomainError when ref is zero.
double relative_loss(const Eigen::VectorXd& ref, const Eigen::VectorXd& pred);

/// Inputs and reduced targets, one sample per column.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::MatrixXd Y;
  int size() const { return static_cast<int>(X.cols()); }
};

struct LossGradient {
  double data_loss = 0.0;  // mean relative loss over samples with a nonzero target
  double penalty = 0.0;    // l2 * ||theta||^2
  int used = 0;            // samples contributing to the mean
  Eigen::VectorXd grad;
};

/// Reverse-mode gradient of mean loss + l2 penalty; ReLU'(0) = 0.
LossGradient loss_and_gradient(const MlpModel& model, const Dataset& batch, double l2);

/// Mean relative loss without gradient.
double mean_loss(const MlpModel& model, const Dataset& data);

struct TrainConfig {
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double l2_regularization = 1e-6;
  int epochs = 5000;
  int batch_size = 0;  // 0: full batch
  std::uint64_t seed = 42;
  double early_stop_tolerance = 0.0;  // stop once the training loss falls below
  int test_interval = 100;
  int patience = 10;  // test checks without improvement

  void check() const;  // ConfigError
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

void adam_step(AdamState& state, Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const TrainConfig& config);

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch
  std::vector<int> test_epochs;
  std::vector<double> test_loss;
  int best_epoch = 0;
  std::string stop_reason;
  double seconds = 0.0;
};

struct TrainResult {
  MlpModel model;
  TrainHistory history;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, TrainHistory h) : NumericalError(what), history_(std::move(h)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

/// Fits normalizers on the training set and runs ADAM. With a test set the
/// parameters of the best test check are returned.
TrainResult train(const Dataset& train_set, const Dataset* test_set, const std::vector<int>& hidden,
                  const TrainConfig& config);

/// Random search over a declared grid, scored by the final test loss.
struct SearchSpace {
  std::vector<std::vector<int>> architectures;
  std::vector<double> learning_rates;
  std::vector<double> l2;
  int trials = 4;
};

struct SearchTrial {
  std::vector<int> hidden;
  double learning_rate = 0.0;
  double l2 = 0.0;
  double test_loss = 0.0;
};

struct SearchResult {
  TrainResult best;
  SearchTrial best_trial;
  std::vector<SearchTrial> trials;
};

SearchResult random_search(const Dataset& train_set, const Dataset& test_set, const SearchSpace& space,
                           const TrainConfig& base);

void save_model(const MlpModel& model, const std::string& path);
MlpModel load_model(const std::string& path);
nlohmann::json read_model_header(const std::string& path);

}  // namespace igapod
