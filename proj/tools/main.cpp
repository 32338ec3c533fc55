#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>

#include "igapod/container.hpp"
#include "igapod/errors.hpp"
#include "igapod/pipeline.hpp"
#include "igapod/postprocess.hpp"

using namespace igapod;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> workers;
  bool quiet = false;
};

// Explicit --config wins; otherwise a config.json left in the output directory
// by an earlier stage; otherwise the built-in defaults.
PipelineConfig resolve_config(const GlobalOptions& g) {
  PipelineConfig c;
  if (!g.config.empty()) {
    c = PipelineConfig::load(g.config);
  } else {
    const fs::path saved = fs::path(g.out_dir.value_or(c.out_dir)) / "config.json";
    if (fs::exists(saved)) c = PipelineConfig::load(saved.string());
  }
  if (g.seed) c.seed = *g.seed;
  if (g.out_dir) c.out_dir = *g.out_dir;
  if (g.workers) c.workers = *g.workers;
  c.check();
  return c;
}

void save_config(const PipelineConfig& c) {
  fs::create_directories(c.out_dir);
  const fs::path path = fs::path(c.out_dir) / "config.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << c.to_json().dump(2) << "\n";
}

ProgressFn reporter(const GlobalOptions& g) {
  if (g.quiet) return {};
  return [](const std::string& msg) { std::cerr << msg << "\n"; };
}

std::string basis_path(const PipelineConfig& c) { return (fs::path(c.out_dir) / "pod" / "basis.bin").string(); }
std::string model_path(const PipelineConfig& c) { return (fs::path(c.out_dir) / "model" / "model.bin").string(); }

struct ParamOptions {
  std::optional<double> mag, mh, mw, alpha;

  void add(CLI::App* app) {
    app->add_option("--mag", mag, "magnet depth below the rotor surface [m]");
    app->add_option("--mh", mh, "magnet height [m]");
    app->add_option("--mw", mw, "magnet width [m]");
    app->add_option("--alpha", alpha, "rotor angle [deg]");
  }
  ParamVector resolve(const PipelineConfig& c) const {
    ParamVector p = c.ranges.midpoint();
    if (mag) p.mag = *mag;
    if (mh) p.mh = *mh;
    if (mw) p.mw = *mw;
    if (alpha) p.alpha_deg = *alpha;
    return p;
  }
};

json params_json(const ParamVector& p) {
  return {{"mag", p.mag}, {"mh", p.mh}, {"mw", p.mw}, {"alpha_deg", p.alpha_deg}};
}

ExportFormat format_of(const std::string& path) {
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".csv") return ExportFormat::csv;
  if (ext == ".vtk") return ExportFormat::vtk;
  throw UsageError("field export path must end in .csv or .vtk: " + path);
}

int cmd_geometry(const GlobalOptions& g, const ParamOptions& po, const std::string& output) {
  const PipelineConfig c = resolve_config(g);
  const ParamVector p = po.resolve(c);
  const MultiPatchModel m = build_machine_geometry(p, c.design);
  const ValidationReport rep = validate_geometry(m);
  json doc = geometry_to_json(m);
  doc["params"] = params_json(p);
  doc["validation"] = {{"ok", rep.ok}, {"min_det_jacobian", rep.min_det_jacobian}, {"issues", rep.issues.size()}};
  const std::string path = output.empty() ? (fs::path(c.out_dir) / "geometry.json").string() : output;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << doc.dump(2) << "\n";
  std::cout << m.patches.size() << " patches written to " << path << "\n" << rep.summary() << "\n";
  return rep.ok ? 0 : 2;
}

int cmd_sample(const GlobalOptions& g, const std::string& output) {
  const PipelineConfig c = resolve_config(g);
  std::ofstream file;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw IoError("cannot write '" + output + "'");
  }
  std::ostream& out = output.empty() ? std::cout : file;
  out << "index,split,mag,mh,mw,alpha_deg\n";
  char line[256];
  for (const SampleSpec& s : plan_samples(c)) {
    std::snprintf(line, sizeof line, "%d,%s,%.17g,%.17g,%.17g,%.17g\n", s.index, to_string(s.split), s.params.mag,
                  s.params.mh, s.params.mw, s.params.alpha_deg);
    out << line;
  }
  return 0;
}

int cmd_snapshot(const GlobalOptions& g) {
  const PipelineConfig c = resolve_config(g);
  save_config(c);
  const SnapshotStore store = generate_snapshots(c, reporter(g));
  std::cout << store.samples().size() << " samples, " << store.num_dofs() << " DoFs in " << c.out_dir << "\n";
  return 0;
}

int cmd_pod(const GlobalOptions& g) {
  const PipelineConfig c = resolve_config(g);
  const PodBasis b = run_pod(c, SnapshotStore::open(c.out_dir));
  std::cout << b.modes() << " modes, captured energy " << b.energy_captured << ", written to " << basis_path(c) << "\n";
  return 0;
}

int cmd_train(const GlobalOptions& g) {
  const PipelineConfig c = resolve_config(g);
  const TrainResult r = run_training(c, SnapshotStore::open(c.out_dir), load_basis(basis_path(c)), reporter(g));
  std::cout << "best epoch " << r.history.best_epoch << ", model written to " << model_path(c) << "\n";
  return 0;
}

int cmd_eval(const GlobalOptions& g) {
  const PipelineConfig c = resolve_config(g);
  const EvalReport rep = run_evaluation(c, SnapshotStore::open(c.out_dir), load_basis(basis_path(c)),
                                        load_model(model_path(c)), reporter(g));
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

int cmd_predict(const GlobalOptions& g, const ParamOptions& po, const std::string& field, int resolution,
                const std::string& coefficients, bool no_torque) {
  const PipelineConfig c = resolve_config(g);
  const ParamVector p = po.resolve(c);
  const Prediction pr = predict(c, load_model(model_path(c)), load_basis(basis_path(c)), p, !no_torque);
  for (const std::string& w : pr.warnings) std::cerr << "warning: " << w << "\n";
  json out = {{"params", params_json(p)}, {"reduced", std::vector<double>(pr.reduced.begin(), pr.reduced.end())}};
  if (pr.torque) out["torque"] = *pr.torque;
  if (!coefficients.empty()) {
    write_f64(coefficients, std::vector<double>(pr.coefficients.begin(), pr.coefficients.end()));
    out["coefficients"] = coefficients;
  }
  if (!field.empty()) {
    const ExportFormat fmt = format_of(field);
    Discretization d(build_machine_geometry(p, c.design));
    export_field(d, pr.coefficients, resolution, resolution, field, fmt);
    out["field"] = field;
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_bench(const GlobalOptions& g) {
  const PipelineConfig c = resolve_config(g);
  const TimingReport t = run_bench(c, load_model(model_path(c)), load_basis(basis_path(c)));
  std::cout << t.to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parametric machine field surrogate: snapshots, POD and network training"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "seed for initialization and shuffling");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--workers", g.workers, "concurrent snapshot solves")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "suppress progress messages");

  ParamOptions geo_params, pred_params;
  std::string geo_out, sample_out, field_out, coef_out;
  int resolution = 20;
  bool no_torque = false;

  CLI::App* geometry = app.add_subcommand("geometry", "build, validate and export the machine geometry");
  geo_params.add(geometry);
  geometry->add_option("-o,--output", geo_out, "JSON path (default <out-dir>/geometry.json)");
  CLI::App* sample = app.add_subcommand("sample", "print the Sobol sample plan as CSV");
  sample->add_option("-o,--output", sample_out, "CSV path (default stdout)");
  CLI::App* snapshot = app.add_subcommand("snapshot", "solve the full-order model for every sample");
  CLI::App* pod = app.add_subcommand("pod", "fit the POD basis on the training snapshots");
  CLI::App* train = app.add_subcommand("train", "train the network on reduced coefficients");
  CLI::App* eval = app.add_subcommand("eval", "evaluate the surrogate on all splits");
  CLI::App* pred = app.add_subcommand("predict", "surrogate field and torque for one parameter vector");
  pred_params.add(pred);
  pred->add_option("--field", field_out, "export the predicted field (.csv or .vtk)");
  pred->add_option("--resolution", resolution, "samples per patch direction for --field")->check(CLI::PositiveNumber);
  pred->add_option("--coefficients", coef_out, "write the coefficient vector as raw little-endian f64");
  pred->add_flag("--no-torque", no_torque, "skip the torque evaluation");
  CLI::App* bench = app.add_subcommand("bench", "time full solves against surrogate predictions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*geometry) return cmd_geometry(g, geo_params, geo_out);
    if (*sample) return cmd_sample(g, sample_out);
    if (*snapshot) return cmd_snapshot(g);
    if (*pod) return cmd_pod(g);
    if (*train) return cmd_train(g);
    if (*eval) return cmd_eval(g);
    if (*pred) return cmd_predict(g, pred_params, field_out, resolution, coef_out, no_torque);
    if (*bench) return cmd_bench(g);
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
