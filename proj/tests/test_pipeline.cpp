#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "igapod/container.hpp"
#include "igapod/errors.hpp"
#include "igapod/pipeline.hpp"
#include "igapod/postprocess.hpp"

using namespace igapod;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny(const std::string& name) {
  PipelineConfig c;
  c.design.mesh.level = 1;
  c.harmonics = 4;
  c.n_train = 12;
  c.n_test = 4;
  c.n_validation = 4;
  c.pod = PodSelector::mode_count(4);
  c.hidden = {8};
  c.train.epochs = 200;
  c.bench_full_solves = 1;
  c.bench_predictions = 20;
  c.out_dir = (fs::temp_directory_path() / ("igapod_pipeline_" + name)).string();
  fs::remove_all(c.out_dir);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double star_discrepancy_1d(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    d = std::max({d, (i + 1) / n - x[i], x[i] - i / n});
  }
  return d;
}

}  // namespace

TEST_CASE("Sobol points against the direction-number reference") {
  const auto p = sobol_unit(7, 1);
  const double ref[7][4] = {{0.5, 0.5, 0.5, 0.5},         {0.75, 0.25, 0.25, 0.25},     {0.25, 0.75, 0.75, 0.75},
                            {0.375, 0.375, 0.625, 0.875}, {0.875, 0.875, 0.125, 0.375}, {0.625, 0.125, 0.875, 0.625},
                            {0.125, 0.625, 0.375, 0.125}};
  for (int i = 0; i < 7; ++i)
    for (int d = 0; d < 4; ++d) CHECK(p[static_cast<std::size_t>(i)][static_cast<std::size_t>(d)] == ref[i][d]);

  const auto deep = sobol_unit(1025, 0);
  CHECK(deep[100] == std::array<double, 4>{0.4140625, 0.2578125, 0.7734375, 0.7265625});
  CHECK(deep[513] == std::array<double, 4>{0.5029296875, 0.7509765625, 0.4541015625, 0.4912109375});
  CHECK(deep[1024] == std::array<double, 4>{0.00146484375, 0.37646484375, 0.44775390625, 0.48681640625});
}

TEST_CASE("Sobol samples stay in range and beat pseudo-random discrepancy") {
  const ParamRanges r;
  const auto pts = sobol_sample(r, 1024);
  for (const ParamVector& p : pts) CHECK(r.contains(p));
  const auto unit = sobol_unit(1024);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int d = 0; d < 4; ++d) {
    std::vector<double> s, q;
    for (const auto& x : unit) s.push_back(x[static_cast<std::size_t>(d)]);
    for (int i = 0; i < 1024; ++i) q.push_back(u(rng));
    CHECK(star_discrepancy_1d(s) < star_discrepancy_1d(q));
  }
}

TEST_CASE("sample plan: consecutive disjoint splits") {
  PipelineConfig c;
  const auto plan = plan_samples(c);
  REQUIRE(plan.size() == 192u);
  CHECK(std::count_if(plan.begin(), plan.end(), [](auto& s) { return s.split == Split::train; }) == 128);
  CHECK(plan[127].split == Split::train);
  CHECK(plan[128].split == Split::test);
  CHECK(plan[160].split == Split::validation);
  std::vector<std::array<double, 4>> seen;
  for (const auto& s : plan) seen.push_back(s.params.to_array());
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("configuration JSON") {
  PipelineConfig c;
  c.seed = 7;
  c.pod = PodSelector::energy(0.999);
  c.search = SearchSpace{{{8}, {16, 16}}, {1e-3}, {0.0}, 2};
  const PipelineConfig d = PipelineConfig::from_json(c.to_json());
  CHECK(d.to_json() == c.to_json());
  CHECK(d.hash() == c.hash());

  PipelineConfig e = c;
  e.out_dir = "elsewhere";
  e.workers = 3;
  CHECK(e.hash() == c.hash());
  e.seed = 8;
  CHECK(e.hash() != c.hash());

  const PipelineConfig partial = PipelineConfig::from_json({{"mesh", {{"level", 2}}}, {"pod", {{"modes", 5}}}});
  CHECK(partial.design.mesh.level == 2);
  CHECK(partial.design.mesh.degree == 2);
  CHECK(partial.pod.kind == PodSelector::Kind::mode_count);
  CHECK(partial.pod.modes == 5);
  CHECK(partial.solver.method == NonlinearMethod::newton);

  CHECK_THROWS_AS(PipelineConfig::from_json({{"mesh", {{"levle", 2}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"samples", {{"train", 0}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"ranges", {{"lower", {1, 1, 1, 1}}, {"upper", {0, 2, 2, 2}}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"solver", {{"method", "magic"}}}}), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_json({{"harmonics", "eight"}}), ConfigError);
}

TEST_CASE("snapshot generation is deterministic and records failures") {
  PipelineConfig c = tiny("snap");
  std::vector<SampleSpec> plan = plan_samples(c);
  plan.resize(10);
  plan[3].params.mh = 40e-3;  // magnet reaches the shaft
  const SnapshotStore s = generate_snapshots(c, plan);
  int ok = 0;
  for (const SampleRecord& r : s.samples()) ok += r.ok;
  CHECK(ok == 9);
  CHECK(!s.samples()[3].ok);
  CHECK(s.samples()[3].reason.find("constraint") != std::string::npos);
  int files = 0;
  for (const auto& e : fs::directory_iterator(fs::path(c.out_dir) / "snapshots")) files += e.path().extension() == ".bin";
  CHECK(files == 9);

  const std::string first = slurp(fs::path(c.out_dir) / "snapshots" / "sample_00000.bin");
  const std::string manifest = slurp(fs::path(c.out_dir) / "manifest.json");
  PipelineConfig c2 = c;
  c2.workers = 2;
  generate_snapshots(c2, plan);
  CHECK(slurp(fs::path(c.out_dir) / "snapshots" / "sample_00000.bin") == first);
  CHECK(slurp(fs::path(c.out_dir) / "manifest.json") == manifest);

  const SnapshotStore reopened = SnapshotStore::open(c.out_dir);
  CHECK_NOTHROW(reopened.check_config(c));
  PipelineConfig other = c;
  other.harmonics = 5;
  CHECK_THROWS_AS(reopened.check_config(other), UsageError);
  other = c;
  other.hidden = {3};
  CHECK_NOTHROW(reopened.check_config(other));
  CHECK(reopened.load(reopened.samples()[0]).size() == reopened.num_dofs());

  // Stored torque equals a fresh full-order solve.
  const FullSolution f = solve_full(c, plan[0].params);
  CHECK(f.torque == reopened.samples()[0].torque);

  // More than 10% failures is a run-level error, after the manifest is written.
  std::vector<SampleSpec> bad(plan.begin(), plan.begin() + 4);
  bad[3].params.mh = 40e-3;
  CHECK_THROWS_AS(generate_snapshots(c, bad), NumericalError);
  const SnapshotStore partial = SnapshotStore::open(c.out_dir);
  CHECK(partial.samples(Split::train).size() == 3u);

  fs::remove(fs::path(c.out_dir) / "snapshots" / "sample_00000.bin");
  CHECK_THROWS_AS(SnapshotStore::open(c.out_dir), IoError);
  fs::remove_all(c.out_dir);
}

TEST_CASE("pod, training, evaluation and prediction stages") {
  PipelineConfig c = tiny("stages");
  const SnapshotStore store = generate_snapshots(c);
  const PodBasis basis = run_pod(c, store);
  CHECK(basis.modes() == 4);
  {
    std::ifstream in(fs::path(c.out_dir) / "pod" / "eigenvalues.csv");
    std::string line;
    std::getline(in, line);
    std::vector<double> ev;
    while (std::getline(in, line)) ev.push_back(std::stod(line.substr(line.find(',') + 1)));
    CHECK(ev.size() == 12u);
    CHECK(std::is_sorted(ev.rbegin(), ev.rend()));
  }
  PipelineConfig one = c;
  one.pod = PodSelector::mode_count(1);
  CHECK(run_pod(one, SnapshotStore::open(c.out_dir)).modes() == 1);
  PipelineConfig full = c;
  full.pod = PodSelector::energy(1.0 - 1e-12);
  const PodBasis fb = run_pod(full, SnapshotStore::open(c.out_dir));
  CHECK(fb.modes() == fb.rank);
  // Restore the configured basis on disk.
  const PodBasis b = run_pod(c, store);

  const TrainResult tr = run_training(c, store, b);
  {
    std::ifstream in(fs::path(c.out_dir) / "model" / "history.csv");
    int rows = -1;
    for (std::string line; std::getline(in, line);) ++rows;
    CHECK(rows == static_cast<int>(tr.history.train_loss.size()));
    CHECK(rows <= c.train.epochs);
  }
  PodBasis foreign = b;
  foreign.metadata["config_hash"] = "0000";
  CHECK_THROWS_AS(run_training(c, store, foreign), UsageError);

  // Oracle network: field error is exactly the POD error.
  const EvalReport oracle =
      evaluate(c, store, b, [](const ParamVector&, const Eigen::VectorXd& exact) { return exact; });
  for (const SampleEval& e : oracle.samples) CHECK(std::abs(e.field_error - e.pod_error) < 1e-10);

  const EvalReport rep = run_evaluation(c, store, b, tr.model);
  CHECK(rep.splits.size() == 3u);
  for (const auto& [name, s] : rep.splits) {
    CHECK(s.field_error.mean <= s.field_error.max);
    CHECK(s.pod_error.mean <= s.pod_error.max);
    CHECK(s.torque_error.mean <= s.torque_error.max);
    CHECK(s.field_error.mean >= 0.0);
  }
  CHECK(fs::exists(fs::path(c.out_dir) / "eval" / "report.json"));
  CHECK(fs::exists(fs::path(c.out_dir) / "eval" / "samples.csv"));

  // Prediction at a training point reproduces the evaluated error.
  const SampleRecord r0 = store.samples(Split::train)[0];
  const Prediction p = predict(c, tr.model, b, r0.params);
  CHECK(p.warnings.empty());
  Discretization d(build_machine_geometry(r0.params, c.design));
  const double err = seminorm_error(store.load(r0), p.coefficients, assemble_K0(d));
  CHECK(std::abs(err - rep.samples[0].field_error) < 1e-10);
  CHECK(std::abs(*p.torque - rep.samples[0].torque_surrogate) < 1e-10 * std::abs(rep.samples[0].torque_surrogate));

  ParamVector outside = r0.params;
  outside.alpha_deg = 25.0;
  CHECK(!predict(c, tr.model, b, outside, false).warnings.empty());
  MlpModel wrong = tr.model;
  wrong.basis_hash = "nope";
  CHECK_THROWS_AS(predict(c, wrong, b, r0.params), UsageError);

  const TimingReport t = run_bench(c, tr.model, b);
  CHECK(t.full_solve_median > 0.0);
  CHECK(t.predict_median > 0.0);
  CHECK(t.speedup == doctest::Approx(t.full_solve_median / t.predict_median));
  CHECK(fs::exists(fs::path(c.out_dir) / "timing.json"));
  fs::remove_all(c.out_dir);
}

TEST_CASE("air-gap variant keeps only the air layer DoFs") {
  PipelineConfig c = tiny("airgap");
  c.airgap_only = true;
  c.n_train = 8;
  c.pod = PodSelector::mode_count(3);
  const SnapshotStore store = generate_snapshots(c);
  const PodBasis b = run_pod(c, store);
  CHECK(b.size() < store.num_dofs());
  CHECK(b.size() == static_cast<int>(retained_dofs(c).size()));
  const EvalReport rep =
      evaluate(c, store, b, [](const ParamVector&, const Eigen::VectorXd& exact) { return exact; });
  for (const SampleEval& e : rep.samples) {
    CHECK(e.field_error == doctest::Approx(e.pod_error).epsilon(1e-10));
    CHECK(std::isfinite(e.torque_surrogate));
  }
  fs::remove_all(c.out_dir);
}

TEST_CASE("end-to-end runs are bit-identical") {
  PipelineConfig a = tiny("det_a");
  PipelineConfig b = tiny("det_b");
  const EvalReport ra = run_all(a);
  const EvalReport rb = run_all(b);
  CHECK(ra.to_json() == rb.to_json());
  for (const char* f : {"manifest.json", "snapshots/sample_00005.bin", "pod/basis.bin", "model/model.bin",
                        "eval/report.json", "eval/samples.csv"}) {
    CAPTURE(f);
    CHECK(slurp(fs::path(a.out_dir) / f) == slurp(fs::path(b.out_dir) / f));
  }
  fs::remove_all(a.out_dir);
  fs::remove_all(b.out_dir);
}

TEST_CASE("summary statistics") {
  const Stats s = Stats::of({1.0, 2.0, 3.0, 6.0});
  CHECK(s.mean == 3.0);
  CHECK(s.max == 6.0);
  CHECK(s.std == doctest::Approx(std::sqrt(3.5)));
  CHECK(s.count == 4);
  CHECK(Stats::of({}).count == 0);
}
