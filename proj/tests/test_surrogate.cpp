#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>

#include "igapod/errors.hpp"
#include "igapod/surrogate.hpp"

using namespace igapod;

namespace {

Eigen::MatrixXd uniform(int rows, int cols, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd A(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) A(i, j) = u(rng);
  return A;
}

// Nonzero biases and non-trivial normalizers so every path is exercised.
MlpModel random_net(const std::vector<int>& sizes, std::uint64_t seed) {
  MlpModel m = MlpModel::create(sizes, seed);
  m.theta += 0.1 * uniform(static_cast<int>(m.theta.size()), 1, seed + 1);
  m.input = {uniform(sizes.front(), 1, seed + 2), uniform(sizes.front(), 1, seed + 3, 0.5, 2.0)};
  m.output = {uniform(sizes.back(), 1, seed + 4), uniform(sizes.back(), 1, seed + 5, 0.5, 2.0)};
  return m;
}

double total_loss(const MlpModel& m, const Dataset& d, double l2) {
  return mean_loss(m, d) + l2 * m.theta.squaredNorm();
}

// Worst componentwise relative deviation between backprop and central differences.
double gradient_check(const MlpModel& model, const Dataset& d, double l2) {
  const LossGradient g = loss_and_gradient(model, d, l2);
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < model.theta.size(); ++k) {
    MlpModel p = model, q = model;
    p.theta(k) += h;
    q.theta(k) -= h;
    const double fd = (total_loss(p, d, l2) - total_loss(q, d, l2)) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(g.grad(k)), 1e-4});
    worst = std::max(worst, std::abs(fd - g.grad(k)) / scale);
  }
  return worst;
}

Dataset linear_task(int n, std::uint64_t seed) {
  Dataset d;
  d.X = uniform(4, n, seed, 0.0, 1.0);
  Eigen::MatrixXd A(3, 4);
  A << 1.0, -0.5, 0.25, 2.0, 0.3, 0.3, -1.0, 0.5, -0.7, 1.1, 0.2, 0.1;
  d.Y = (A * d.X).colwise() + Eigen::Vector3d(2.0, -1.5, 1.0);
  return d;
}

}  // namespace

TEST_CASE("forward pass definitions") {
  MlpModel z = MlpModel::create({4, 5, 3}, 1);
  z.theta.setZero();
  z.output.shift = Eigen::Vector3d(0.5, -1.0, 2.0);
  CHECK(z.forward(Eigen::Vector4d(1, 2, 3, 4)) == z.output.shift);

  MlpModel lin = MlpModel::create({4, 2}, 3);
  const Eigen::VectorXd x = Eigen::Vector4d(0.1, -0.2, 0.3, 0.7);
  Eigen::MatrixXd W(2, 4);
  W << 1, 2, 3, 4, -1, 0.5, 0, 2;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) lin.theta(lin.weight_offset(0) + 4 * i + j) = W(i, j);
  lin.theta.segment(lin.bias_offset(0), 2) = Eigen::Vector2d(0.25, -0.5);
  CHECK((lin.forward(x) - (W * x + Eigen::Vector2d(0.25, -0.5))).norm() < 1e-15);

  const MlpModel m = random_net({4, 8, 8, 3}, 5);
  const Eigen::VectorXd a = m.forward(ParamVector{});
  const Eigen::VectorXd b = m.forward(ParamVector{});
  CHECK(a == b);
  CHECK(a.size() == 3);
  const Eigen::MatrixXd X = uniform(4, 6, 9);
  const Eigen::MatrixXd Yb = m.forward_batch(X);
  for (int j = 0; j < 6; ++j) CHECK((Yb.col(j) - m.forward(Eigen::VectorXd(X.col(j)))).norm() < 1e-14);
  CHECK_THROWS_AS(m.forward(Eigen::VectorXd::Zero(3)), UsageError);
}

TEST_CASE("relative loss") {
  const Eigen::Vector2d u(1, 0);
  CHECK(relative_loss(u, u) == 0.0);
  CHECK(relative_loss(u, Eigen::Vector2d::Zero()) == 1.0);
  CHECK(relative_loss(u, Eigen::Vector2d(0, 1)) == 2.0);
  const Eigen::VectorXd a = uniform(5, 1, 2), b = uniform(5, 1, 3);
  for (double c : {-3.0, 0.01, 7.5}) CHECK(relative_loss(c * a, c * b) == doctest::Approx(relative_loss(a, b)).epsilon(1e-12));
  CHECK_THROWS_AS(relative_loss(Eigen::Vector2d::Zero(), u), DomainError);
}

TEST_CASE("normalizers round trip and map training inputs into [-1, 1]") {
  const Eigen::MatrixXd X = uniform(4, 40, 17, -3.0, 5.0);
  const Normalizer mm = Normalizer::min_max(X);
  const Eigen::MatrixXd Xn = mm.normalize(X);
  CHECK(Xn.maxCoeff() <= 1.0 + 1e-15);
  CHECK(Xn.minCoeff() >= -1.0 - 1e-15);
  CHECK((mm.denormalize(Xn) - X).cwiseAbs().maxCoeff() < 1e-12);
  const Normalizer zs = Normalizer::z_score(X);
  const Eigen::MatrixXd Z = zs.normalize(X);
  CHECK(Z.rowwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  CHECK(((Z.array().square().rowwise().mean()) - 1.0).abs().maxCoeff() < 1e-12);
  CHECK((zs.denormalize(Z) - X).cwiseAbs().maxCoeff() < 1e-12);
  // Constant rows keep a unit scale.
  Eigen::MatrixXd C = X;
  C.row(2).setConstant(4.0);
  CHECK(Normalizer::min_max(C).scale(2) == 1.0);
  CHECK(Normalizer::z_score(C).scale(2) == 1.0);
}

TEST_CASE("backprop matches central differences on random small networks") {
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const int hidden = 3 + static_cast<int>(t % 6);
    const std::vector<int> sizes = t % 2 ? std::vector<int>{4, hidden, 3} : std::vector<int>{4, hidden, 5, 2};
    const MlpModel m = random_net(sizes, 100 + t);
    // Targets near the prediction keep the loss O(1) so differencing noise stays small.
    Dataset d{uniform(4, 7, 200 + t), Eigen::MatrixXd()};
    d.Y = m.forward_batch(d.X) + 0.5 * uniform(sizes.back(), 7, 300 + t);
    worst = std::max(worst, gradient_check(m, d, t % 3 == 0 ? 0.0 : 1e-3));
  }
  CAPTURE(worst);
  CHECK(worst < 1e-5);
}

TEST_CASE("gradient structure: zero data loss, duplicated batch") {
  const MlpModel m = random_net({4, 8, 3}, 7);
  Dataset d{uniform(4, 5, 8), Eigen::MatrixXd()};
  d.Y = m.forward_batch(d.X);
  const double l2 = 1e-2;
  const LossGradient g = loss_and_gradient(m, d, l2);
  CHECK(g.data_loss < 1e-28);
  CHECK((g.grad - 2.0 * l2 * m.theta).cwiseAbs().maxCoeff() < 1e-14);

  Dataset r{uniform(4, 5, 9), uniform(3, 5, 10)};
  Dataset rr{Eigen::MatrixXd(4, 10), Eigen::MatrixXd(3, 10)};
  rr.X << r.X, r.X;
  rr.Y << r.Y, r.Y;
  const LossGradient a = loss_and_gradient(m, r, l2), b = loss_and_gradient(m, rr, l2);
  CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.data_loss == doctest::Approx(b.data_loss).epsilon(1e-14));

  // Samples with a zero target are skipped.
  Dataset z = r;
  z.Y.col(0).setZero();
  CHECK(loss_and_gradient(m, z, 0.0).used == 4);
}

TEST_CASE("adam step") {
  TrainConfig c;
  c.learning_rate = 1e-2;
  AdamState s;
  Eigen::VectorXd theta = Eigen::Vector4d(1.0, -2.0, 0.5, 3.0);
  const Eigen::VectorXd g = Eigen::Vector4d(0.3, -4.0, 1e-3, -0.02);
  const Eigen::VectorXd before = theta;
  adam_step(s, theta, g, c);
  for (int i = 0; i < 4; ++i) {
    const double expected = -c.learning_rate * (g(i) > 0 ? 1.0 : -1.0);
    CHECK(std::abs((theta(i) - before(i)) - expected) < 1e-6 * c.learning_rate * 1e3);
  }
  AdamState z;
  Eigen::VectorXd t2 = before;
  for (int k = 0; k < 50; ++k) adam_step(z, t2, Eigen::VectorXd::Zero(4), c);
  CHECK(t2 == before);
  CHECK_THROWS_AS(adam_step(z, t2, Eigen::VectorXd::Zero(3), c), UsageError);
}

TEST_CASE("training learns a linear map and is reproducible") {
  const Dataset d = linear_task(64, 4);
  TrainConfig c;
  c.epochs = 2000;
  c.learning_rate = 3e-3;
  c.l2_regularization = 0.0;
  const TrainResult a = train(d, nullptr, {16}, c);
  CHECK(a.history.train_loss.size() <= 2000u);
  CHECK(mean_loss(a.model, d) < 1e-4);
  const TrainResult b = train(d, nullptr, {16}, c);
  CHECK(a.history.train_loss == b.history.train_loss);
  CHECK(a.model.theta == b.model.theta);
  CHECK(a.model.output_dim() == 3);

  TrainConfig mb = c;
  mb.epochs = 50;
  mb.batch_size = 16;
  const TrainResult m1 = train(d, nullptr, {8}, mb), m2 = train(d, nullptr, {8}, mb);
  CHECK(m1.history.train_loss == m2.history.train_loss);
}

TEST_CASE("early stopping on the test set keeps the best parameters") {
  const Dataset tr = linear_task(32, 1), te = linear_task(16, 2);
  TrainConfig c;
  c.epochs = 3000;
  c.test_interval = 50;
  c.patience = 3;
  const TrainResult r = train(tr, &te, {8}, c);
  REQUIRE(!r.history.test_loss.empty());
  const double best = *std::min_element(r.history.test_loss.begin(), r.history.test_loss.end());
  CHECK(mean_loss(r.model, te) == doctest::Approx(best).epsilon(1e-12));

  TrainConfig tol = c;
  tol.early_stop_tolerance = 1e-2;
  const TrainResult t = train(tr, nullptr, {8}, tol);
  CHECK(t.history.stop_reason == "tolerance reached");
  CHECK(t.history.train_loss.back() < 1e-2);
}

TEST_CASE("configuration errors and divergence") {
  const Dataset d = linear_task(8, 3);
  TrainConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(train(d, nullptr, {4}, c), ConfigError);
  c = TrainConfig{};
  c.adam_beta1 = 1.0;
  CHECK_THROWS_AS(c.check(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.check(), ConfigError);

  TrainConfig wild;
  wild.learning_rate = 1e4;
  wild.epochs = 200;
  try {
    train(d, nullptr, {16, 16}, wild);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(!e.history().train_loss.empty());
    CHECK(e.history().stop_reason == "diverged");
  }
}

TEST_CASE("random search returns the best trial") {
  const Dataset tr = linear_task(32, 5), te = linear_task(16, 6);
  SearchSpace s;
  s.architectures = {{4}, {8, 8}};
  s.learning_rates = {1e-3, 1e-2};
  s.l2 = {0.0, 1e-6};
  s.trials = 3;
  TrainConfig c;
  c.epochs = 300;
  const SearchResult r = random_search(tr, te, s, c);
  REQUIRE(r.trials.size() == 3u);
  for (const auto& t : r.trials) CHECK(r.best_trial.test_loss <= t.test_loss);
  CHECK(mean_loss(r.best.model, te) == doctest::Approx(r.best_trial.test_loss));
  CHECK_THROWS_AS(random_search(tr, te, SearchSpace{}, c), ConfigError);
}

TEST_CASE("model file round trip") {
  MlpModel m = random_net({4, 6, 5, 2}, 11);
  m.basis_hash = "abc123";
  const auto path = (std::filesystem::temp_directory_path() / "igapod_model_test.bin").string();
  save_model(m, path);
  const MlpModel l = load_model(path);
  CHECK(l.theta == m.theta);
  CHECK(l.input.shift == m.input.shift);
  CHECK(l.input.scale == m.input.scale);
  CHECK(l.output.shift == m.output.shift);
  CHECK(l.output.scale == m.output.scale);
  CHECK(l.basis_hash == "abc123");
  const Eigen::MatrixXd X = uniform(4, 5, 12);
  CHECK(l.forward_batch(X) == m.forward_batch(X));
  const auto h = read_model_header(path);
  CHECK(h["layer_sizes"] == std::vector<int>{4, 6, 5, 2});

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
  CHECK_THROWS_AS(load_model(path), IoError);
  CHECK(read_model_header(path)["activation"] == "relu");
  std::filesystem::resize_file(path, 10);
  CHECK_THROWS_AS(load_model(path), IoError);
  std::filesystem::remove(path);
}
