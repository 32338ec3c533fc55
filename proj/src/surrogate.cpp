#include "igapod/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "igapod/container.hpp"

namespace igapod {

namespace {

constexpr const char* kModelMagic = "IGAPMLP";

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajor> weights(const MlpModel& m, const Eigen::VectorXd& theta, int l) {
  return {theta.data() + m.weight_offset(l), m.layer_sizes[static_cast<std::size_t>(l) + 1],
          m.layer_sizes[static_cast<std::size_t>(l)]};
}

Eigen::Map<RowMajor> weights(const MlpModel& m, Eigen::VectorXd& theta, int l) {
  return {theta.data() + m.weight_offset(l), m.layer_sizes[static_cast<std::size_t>(l) + 1],
          m.layer_sizes[static_cast<std::size_t>(l)]};
}

Eigen::Map<const Eigen::VectorXd> biases(const MlpModel& m, const Eigen::VectorXd& theta, int l) {
  return {theta.data() + m.bias_offset(l), m.layer_sizes[static_cast<std::size_t>(l) + 1]};
}

Eigen::Map<Eigen::VectorXd> biases(const MlpModel& m, Eigen::VectorXd& theta, int l) {
  return {theta.data() + m.bias_offset(l), m.layer_sizes[static_cast<std::size_t>(l) + 1]};
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Dataset subset(const Dataset& d, const std::vector<int>& idx, std::size_t begin, std::size_t end) {
  Dataset s;
  s.X.resize(d.X.rows(), static_cast<Eigen::Index>(end - begin));
  s.Y.resize(d.Y.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) {
    s.X.col(static_cast<Eigen::Index>(k - begin)) = d.X.col(idx[k]);
    s.Y.col(static_cast<Eigen::Index>(k - begin)) = d.Y.col(idx[k]);
  }
  return s;
}

}  // namespace

// ------------------------------------------------------------ normalizer

Normalizer Normalizer::identity(int n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)}; }

Normalizer Normalizer::min_max(const Eigen::MatrixXd& samples) {
  if (samples.cols() < 1) throw UsageError("normalizer needs at least one sample");
  const Eigen::VectorXd lo = samples.rowwise().minCoeff(), hi = samples.rowwise().maxCoeff();
  Normalizer n{0.5 * (hi + lo), 0.5 * (hi - lo)};
  for (Eigen::Index i = 0; i < n.scale.size(); ++i) {
    if (!(n.scale(i) > 0.0)) n.scale(i) = 1.0;
  }
  return n;
}

Normalizer Normalizer::z_score(const Eigen::MatrixXd& samples) {
  if (samples.cols() < 1) throw UsageError("normalizer needs at least one sample");
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const Eigen::VectorXd var = (samples.colwise() - mean).array().square().rowwise().mean();
  Normalizer n{mean, var.array().sqrt()};
  for (Eigen::Index i = 0; i < n.scale.size(); ++i) {
    if (!(n.scale(i) > 0.0)) n.scale(i) = 1.0;
  }
  return n;
}

Eigen::MatrixXd Normalizer::normalize(const Eigen::MatrixXd& x) const {
  return (x.colwise() - shift).array().colwise() / scale.array();
}

Eigen::MatrixXd Normalizer::denormalize(const Eigen::MatrixXd& x) const {
  return (x.array().colwise() * scale.array()).matrix().colwise() + shift;
}

void Normalizer::check() const {
  if (shift.size() != scale.size()) throw UsageError("normalizer shift and scale lengths differ");
  for (Eigen::Index i = 0; i < scale.size(); ++i) {
    if (!(scale(i) > 0.0) || !std::isfinite(scale(i)) || !std::isfinite(shift(i))) {
      throw UsageError("normalizer scales must be positive and finite");
    }
  }
}

// ------------------------------------------------------------ model

Eigen::Index MlpModel::weight_offset(int layer) const {
  Eigen::Index off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<Eigen::Index>(layer_sizes[static_cast<std::size_t>(l)] + 1) *
           layer_sizes[static_cast<std::size_t>(l) + 1];
  }
  return off;
}

Eigen::Index MlpModel::bias_offset(int layer) const {
  return weight_offset(layer) + static_cast<Eigen::Index>(layer_sizes[static_cast<std::size_t>(layer)]) *
                                    layer_sizes[static_cast<std::size_t>(layer) + 1];
}

MlpModel MlpModel::create(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  MlpModel m;
  m.layer_sizes = layer_sizes;
  if (layer_sizes.size() < 2) throw ConfigError("network needs at least an input and an output layer");
  for (int s : layer_sizes) {
    if (s < 1) throw ConfigError("layer sizes must be positive");
  }
  m.theta = Eigen::VectorXd::Zero(m.weight_offset(m.num_layers()));
  std::mt19937_64 rng(seed);
  for (int l = 0; l < m.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / layer_sizes[static_cast<std::size_t>(l)]);
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto W = weights(m, m.theta, l);
    for (Eigen::Index i = 0; i < W.rows(); ++i)
      for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = dist(rng);
  }
  m.input = Normalizer::identity(layer_sizes.front());
  m.output = Normalizer::identity(layer_sizes.back());
  return m;
}

void MlpModel::check() const {
  if (layer_sizes.size() < 2) throw UsageError("network needs at least two layers");
  if (theta.size() != weight_offset(num_layers())) throw UsageError("parameter count does not match layer sizes");
  input.check();
  output.check();
  if (input.size() != input_dim() || output.size() != output_dim()) {
    throw UsageError("normalizer dimensions do not match the network");
  }
}

Eigen::VectorXd to_input(const ParamVector& p) {
  const auto a = p.to_array();
  return Eigen::Map<const Eigen::Vector4d>(a.data());
}

Eigen::MatrixXd MlpModel::forward_batch(const Eigen::MatrixXd& X) const {
  if (X.rows() != input_dim()) throw UsageError("input dimension does not match the network");
  Eigen::MatrixXd a = input.normalize(X);
  for (int l = 0; l < num_layers(); ++l) {
    Eigen::MatrixXd z = weights(*this, theta, l) * a;
    z.colwise() += biases(*this, theta, l);
    a = l + 1 < num_layers() ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
  }
  return output.denormalize(a);
}

Eigen::VectorXd MlpModel::forward(const Eigen::VectorXd& x) const { return forward_batch(x); }

Eigen::VectorXd MlpModel::forward(const ParamVector& p) const { return forward(to_input(p)); }

// ------------------------------------------------------------ loss

double relative_loss(const Eigen::VectorXd& ref, const Eigen::VectorXd& pred) {
  if (ref.size() != pred.size()) throw UsageError("relative_loss: length mismatch");
  const double denom = ref.squaredNorm();
  if (!(denom > 0.0)) throw DomainError("relative_loss: zero reference vector");
  return (ref - pred).squaredNorm() / denom;
}

double mean_loss(const MlpModel& model, const Dataset& data) {
  const Eigen::MatrixXd pred = model.forward_batch(data.X);
  double sum = 0.0;
  int used = 0;
  for (Eigen::Index j = 0; j < data.Y.cols(); ++j) {
    const double denom = data.Y.col(j).squaredNorm();
    if (!(denom > 0.0)) continue;
    sum += (data.Y.col(j) - pred.col(j)).squaredNorm() / denom;
    ++used;
  }
  return used > 0 ? sum / used : 0.0;
}

LossGradient loss_and_gradient(const MlpModel& model, const Dataset& batch, double l2) {
  if (batch.size() < 1) throw UsageError("empty batch");
  if (batch.Y.rows() != model.output_dim()) throw UsageError("target dimension does not match the network");
  const int L = model.num_layers();
  std::vector<Eigen::MatrixXd> acts(static_cast<std::size_t>(L) + 1);
  std::vector<Eigen::MatrixXd> pre(static_cast<std::size_t>(L));
  acts[0] = model.input.normalize(batch.X);
  for (int l = 0; l < L; ++l) {
    Eigen::MatrixXd z = weights(model, model.theta, l) * acts[static_cast<std::size_t>(l)];
    z.colwise() += biases(model, model.theta, l);
    acts[static_cast<std::size_t>(l) + 1] = l + 1 < L ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
    pre[static_cast<std::size_t>(l)] = std::move(z);
  }
  const Eigen::MatrixXd pred = model.output.denormalize(acts.back());

  LossGradient out;
  Eigen::MatrixXd delta = Eigen::MatrixXd::Zero(pred.rows(), pred.cols());
  std::vector<double> denom(static_cast<std::size_t>(pred.cols()), 0.0);
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    denom[static_cast<std::size_t>(j)] = batch.Y.col(j).squaredNorm();
    if (denom[static_cast<std::size_t>(j)] > 0.0) ++out.used;
  }
  for (Eigen::Index j = 0; j < pred.cols(); ++j) {
    const double dn = denom[static_cast<std::size_t>(j)];
    if (!(dn > 0.0)) continue;
    const Eigen::VectorXd r = pred.col(j) - batch.Y.col(j);
    out.data_loss += r.squaredNorm() / dn;
    // d/d(normalized output) through the output de-normalization
    delta.col(j) = (2.0 / (dn * out.used)) * r.cwiseProduct(model.output.scale);
  }
  if (out.used > 0) out.data_loss /= out.used;

  out.grad = 2.0 * l2 * model.theta;
  out.penalty = l2 * model.theta.squaredNorm();
  for (int l = L - 1; l >= 0; --l) {
    auto gW = weights(model, out.grad, l);
    auto gb = biases(model, out.grad, l);
    gW += delta * acts[static_cast<std::size_t>(l)].transpose();
    gb += delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = weights(model, model.theta, l).transpose() * delta;
      const Eigen::MatrixXd& z = pre[static_cast<std::size_t>(l) - 1];
      delta = (z.array() > 0.0).select(back, 0.0);
    }
  }
  return out;
}

// ------------------------------------------------------------ optimizer

void TrainConfig::check() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam beta1 must lie in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam beta2 must lie in (0, 1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
  if (l2_regularization < 0.0) throw ConfigError("l2 regularization must be non-negative");
  if (batch_size < 0) throw ConfigError("batch size must be non-negative");
  if (test_interval < 1) throw ConfigError("test interval must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate}, {"adam_beta1", c.adam_beta1}, {"adam_beta2", c.adam_beta2},
       {"adam_epsilon", c.adam_epsilon}, {"l2_regularization", c.l2_regularization}, {"epochs", c.epochs},
       {"batch_size", c.batch_size}, {"seed", c.seed}, {"early_stop_tolerance", c.early_stop_tolerance},
       {"test_interval", c.test_interval}, {"patience", c.patience}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  c.l2_regularization = j.value("l2_regularization", c.l2_regularization);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.early_stop_tolerance = j.value("early_stop_tolerance", c.early_stop_tolerance);
  c.test_interval = j.value("test_interval", c.test_interval);
  c.patience = j.value("patience", c.patience);
}

void adam_step(AdamState& s, Eigen::VectorXd& theta, const Eigen::VectorXd& grad, const TrainConfig& c) {
  if (grad.size() != theta.size()) throw UsageError("adam_step: gradient length does not match parameters");
  if (s.m.size() == 0) {
    s.m = Eigen::VectorXd::Zero(theta.size());
    s.v = Eigen::VectorXd::Zero(theta.size());
  }
  if (s.m.size() != theta.size()) throw UsageError("adam_step: optimizer state does not match parameters");
  ++s.step;
  s.m = c.adam_beta1 * s.m + (1.0 - c.adam_beta1) * grad;
  s.v = c.adam_beta2 * s.v + (1.0 - c.adam_beta2) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(c.adam_beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.adam_beta2, static_cast<double>(s.step));
  theta.array() -= c.learning_rate * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + c.adam_epsilon);
}

// ------------------------------------------------------------ training

TrainResult train(const Dataset& train_set, const Dataset* test_set, const std::vector<int>& hidden,
                  const TrainConfig& config) {
  config.check();
  if (train_set.size() < 1) throw UsageError("training set is empty");
  if (train_set.X.rows() != 4) throw UsageError("training inputs must have 4 components");
  if (test_set && test_set->size() > 0 && test_set->Y.rows() != train_set.Y.rows()) {
    throw UsageError("test targets have a different dimension");
  }
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<int> sizes{4};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(static_cast<int>(train_set.Y.rows()));
  TrainResult res;
  MlpModel& model = res.model;
  model = MlpModel::create(sizes, config.seed);
  model.input = Normalizer::min_max(train_set.X);
  model.output = Normalizer::z_score(train_set.Y);

  const bool monitor = test_set != nullptr && test_set->size() > 0;
  const int n = train_set.size();
  const int bs = config.batch_size == 0 ? n : std::min(config.batch_size, n);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const Dataset full = bs == n ? train_set : Dataset{};

  AdamState adam;
  Eigen::VectorXd best_theta = model.theta;
  double best_test = std::numeric_limits<double>::infinity();
  int stale = 0;
  TrainHistory& h = res.history;
  h.stop_reason = "epoch limit";

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int batches = 0;
    if (bs == n) {
      const LossGradient g = loss_and_gradient(model, full, config.l2_regularization);
      epoch_loss = g.data_loss;
      batches = 1;
      adam_step(adam, model.theta, g.grad, config);
    } else {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (int start = 0; start < n; start += bs) {
        const Dataset b = subset(train_set, order, static_cast<std::size_t>(start),
                                 static_cast<std::size_t>(std::min(n, start + bs)));
        const LossGradient g = loss_and_gradient(model, b, config.l2_regularization);
        epoch_loss += g.data_loss;
        ++batches;
        adam_step(adam, model.theta, g.grad, config);
      }
    }
    epoch_loss /= batches;
    h.train_loss.push_back(epoch_loss);
    if (!std::isfinite(epoch_loss) || epoch_loss > 1e6) {
      h.stop_reason = "diverged";
      h.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch), h);
    }
    if (monitor && (epoch % config.test_interval == 0 || epoch == config.epochs)) {
      const double tl = mean_loss(model, *test_set);
      h.test_epochs.push_back(epoch);
      h.test_loss.push_back(tl);
      if (tl < best_test) {
        best_test = tl;
        best_theta = model.theta;
        h.best_epoch = epoch;
        stale = 0;
      } else if (++stale >= config.patience) {
        h.stop_reason = "early stop (test loss)";
        break;
      }
    }
    if (config.early_stop_tolerance > 0.0 && epoch_loss < config.early_stop_tolerance) {
      h.stop_reason = "tolerance reached";
      if (!monitor) h.best_epoch = epoch;
      break;
    }
  }
  if (monitor) {
    model.theta = best_theta;
  } else {
    h.best_epoch = static_cast<int>(h.train_loss.size());
  }
  h.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

SearchResult random_search(const Dataset& train_set, const Dataset& test_set, const SearchSpace& space,
                           const TrainConfig& base) {
  if (space.architectures.empty() || space.learning_rates.empty() || space.l2.empty() || space.trials < 1) {
    throw ConfigError("search space needs architectures, learning rates, l2 values and trials >= 1");
  }
  std::mt19937_64 rng(base.seed);
  auto pick = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  SearchResult out;
  double best = std::numeric_limits<double>::infinity();
  for (int t = 0; t < space.trials; ++t) {
    SearchTrial trial;
    trial.hidden = space.architectures[pick(space.architectures.size())];
    trial.learning_rate = space.learning_rates[pick(space.learning_rates.size())];
    trial.l2 = space.l2[pick(space.l2.size())];
    TrainConfig c = base;
    c.learning_rate = trial.learning_rate;
    c.l2_regularization = trial.l2;
    TrainResult r = train(train_set, &test_set, trial.hidden, c);
    trial.test_loss = mean_loss(r.model, test_set);
    out.trials.push_back(trial);
    if (trial.test_loss < best) {
      best = trial.test_loss;
      out.best = std::move(r);
      out.best_trial = trial;
    }
  }
  return out;
}

// ------------------------------------------------------------ persistence

void save_model(const MlpModel& model, const std::string& path) {
  model.check();
  nlohmann::json h;
  h["kind"] = "mlp";
  h["layer_sizes"] = model.layer_sizes;
  h["activation"] = "relu";
  h["output_activation"] = "identity";
  h["input_normalizer"] = {{"shift", to_vec(model.input.shift)}, {"scale", to_vec(model.input.scale)}};
  h["output_normalizer"] = {{"shift", to_vec(model.output.shift)}, {"scale", to_vec(model.output.scale)}};
  h["basis_hash"] = model.basis_hash;
  h["parameter_layout"] = "per layer: weights row-major (out x in), then biases";
  write_container(path, kModelMagic, h, to_vec(model.theta));
}

nlohmann::json read_model_header(const std::string& path) { return read_container_header(path, kModelMagic); }

MlpModel load_model(const std::string& path) {
  const Container c = read_container(path, kModelMagic);
  MlpModel m;
  try {
    if (c.header.at("activation") != "relu") throw IoError("unsupported activation in " + path);
    m.layer_sizes = c.header.at("layer_sizes").get<std::vector<int>>();
    m.input = {from_vec(c.header.at("input_normalizer").at("shift").get<std::vector<double>>()),
               from_vec(c.header.at("input_normalizer").at("scale").get<std::vector<double>>())};
    m.output = {from_vec(c.header.at("output_normalizer").at("shift").get<std::vector<double>>()),
                from_vec(c.header.at("output_normalizer").at("scale").get<std::vector<double>>())};
    m.basis_hash = c.header.value("basis_hash", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model header in " + path + ": " + e.what());
  }
  m.theta = from_vec(c.payload);
  try {
    m.check();
  } catch (const UsageError& e) {
    throw IoError("inconsistent model file " + path + ": " + e.what());
  }
  return m;
}

}  // namespace igapod
