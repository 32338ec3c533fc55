#include "igapod/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "igapod/container.hpp"
#include "igapod/errors.hpp"
#include "igapod/postprocess.hpp"

namespace fs = std::filesystem;

namespace igapod {

namespace {

using json = nlohmann::json;

const char* method_name(NonlinearMethod m) { return m == NonlinearMethod::newton ? "newton" : "picard"; }

NonlinearMethod method_from(const std::string& s) {
  if (s == "newton") return NonlinearMethod::newton;
  if (s == "picard") return NonlinearMethod::picard;
  throw ConfigError("unknown nonlinear method '" + s + "' (expected newton or picard)");
}

// Rejects keys that the defaults do not know about.
void check_keys(const json& j, const json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError("unknown config key '" + where + it.key() + "'");
  }
}

void merge(json& base, const json& over, const std::string& where) {
  check_keys(over, base, where);
  for (auto it = over.begin(); it != over.end(); ++it) {
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object() && !slot.empty()) {
      merge(slot, it.value(), where + it.key() + ".");
    } else {
      slot = it.value();
    }
  }
}

std::ofstream open_text(const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out = open_text(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

SparseMatrix restrict_matrix(const SparseMatrix& K, const std::vector<int>& rows) {
  if (static_cast<Eigen::Index>(rows.size()) == K.rows()) return K;
  std::vector<int> map(static_cast<std::size_t>(K.rows()), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) map[static_cast<std::size_t>(rows[i])] = static_cast<int>(i);
  std::vector<Eigen::Triplet<double>> t;
  for (int k = 0; k < K.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(K, k); it; ++it) {
      const int r = map[static_cast<std::size_t>(it.row())], c = map[static_cast<std::size_t>(it.col())];
      if (r >= 0 && c >= 0) t.emplace_back(r, c, it.value());
    }
  }
  SparseMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.size()));
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

Eigen::VectorXd restrict_vector(const Eigen::VectorXd& u, const std::vector<int>& rows) {
  if (static_cast<Eigen::Index>(rows.size()) == u.size()) return u;
  Eigen::VectorXd r(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) r(static_cast<Eigen::Index>(i)) = u(rows[i]);
  return r;
}

Eigen::VectorXd embed(const Eigen::VectorXd& r, const std::vector<int>& rows, int n) {
  if (static_cast<int>(r.size()) == n) return r;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(n);
  for (std::size_t i = 0; i < rows.size(); ++i) u(rows[i]) = r(static_cast<Eigen::Index>(i));
  return u;
}

json params_json(const ParamVector& p) {
  return {{"mag", p.mag}, {"mh", p.mh}, {"mw", p.mw}, {"alpha_deg", p.alpha_deg}};
}

ParamVector params_from(const json& j) {
  return {j.at("mag").get<double>(), j.at("mh").get<double>(), j.at("mw").get<double>(),
          j.at("alpha_deg").get<double>()};
}

void notify(const ProgressFn& f, const std::string& msg) {
  if (f) f(msg);
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

MachineDesign design_at(const PipelineConfig& c) { return c.design; }

}  // namespace

// ------------------------------------------------------------------ config

void PipelineConfig::check() const {
  ranges.check();
  if (n_train < 1 || n_test < 1 || n_validation < 1) throw ConfigError("sample counts must be at least 1");
  if (sobol_skip < 0) throw ConfigError("sobol skip must be non-negative");
  if (harmonics < 1) throw ConfigError("harmonic count must be at least 1");
  if (design.mesh.level < 1) throw ConfigError("mesh level must be at least 1");
  if (!(axial_length > 0.0)) throw ConfigError("axial length must be positive");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (bench_full_solves < 1 || bench_predictions < 1) throw ConfigError("bench counts must be at least 1");
  if (pod.kind == PodSelector::Kind::mode_count && pod.modes < 1) throw ConfigError("pod modes must be at least 1");
  if (pod.kind == PodSelector::Kind::energy && !(pod.energy_tol > 0.0 && pod.energy_tol <= 1.0)) {
    throw ConfigError("pod energy tolerance must lie in (0, 1]");
  }
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden layer sizes must be positive");
  }
  train.check();
}

json PipelineConfig::to_json() const {
  json j;
  j["ranges"] = {{"lower", ranges.lower}, {"upper", ranges.upper}};
  j["mesh"] = {{"level", design.mesh.level}, {"degree", design.mesh.degree}};
  j["harmonics"] = harmonics;
  j["sources"] = {{"b_rem", sources.b_rem},
                  {"current_peak", sources.current_peak},
                  {"current_angle_deg", sources.current_angle_deg},
                  {"nonlinear_iron", sources.nonlinear_iron},
                  {"k1", sources.k1},
                  {"k2", sources.k2},
                  {"k3", sources.k3}};
  j["solver"] = {{"method", method_name(solver.method)},
                 {"tol", solver.tol},
                 {"max_iter", solver.max_iter},
                 {"relaxation", solver.relaxation}};
  j["axial_length"] = axial_length;
  j["samples"] = {{"train", n_train}, {"test", n_test}, {"validation", n_validation}, {"skip", sobol_skip}};
  if (pod.kind == PodSelector::Kind::mode_count) {
    j["pod"] = {{"modes", pod.modes}, {"energy_tol", nullptr}};
  } else {
    j["pod"] = {{"modes", nullptr}, {"energy_tol", pod.energy_tol}};
  }
  json tc = train;
  tc.erase("seed");
  j["network"] = {{"hidden", hidden}, {"train", tc}, {"search", nullptr}};
  if (search) {
    j["network"]["search"] = {{"architectures", search->architectures},
                              {"learning_rates", search->learning_rates},
                              {"l2", search->l2},
                              {"trials", search->trials}};
  }
  j["evaluation"] = {{"airgap_only", airgap_only}, {"per_sample_stiffness", per_sample_stiffness}};
  j["bench"] = {{"full_solves", bench_full_solves}, {"predictions", bench_predictions}};
  j["seed"] = seed;
  j["workers"] = workers;
  j["out_dir"] = out_dir;
  return j;
}

PipelineConfig PipelineConfig::from_json(const json& in) {
  json j = PipelineConfig{}.to_json();
  json known = j;
  known["network"]["search"] = {{"architectures", nullptr}, {"learning_rates", nullptr}, {"l2", nullptr},
                                {"trials", nullptr}};
  check_keys(in, known, "");
  try {
    for (auto it = in.begin(); it != in.end(); ++it) {
      const std::string& key = it.key();
      if (key == "network" && it.value().is_object()) {
        json net = it.value();
        if (net.contains("search")) {
          if (!net["search"].is_null()) check_keys(net["search"], known["network"]["search"], "network.search.");
          j["network"]["search"] = net["search"];
          net.erase("search");
        }
        merge(j["network"], net, "network.");
      } else if (key == "pod") {
        check_keys(it.value(), known["pod"], "pod.");
        const json& pod = it.value();
        const bool tol = pod.contains("energy_tol") && !pod["energy_tol"].is_null();
        const bool modes = pod.contains("modes") && !pod["modes"].is_null();
        if (tol && modes) throw ConfigError("pod: give either modes or energy_tol, not both");
        if (tol) j["pod"] = {{"modes", nullptr}, {"energy_tol", pod["energy_tol"]}};
        if (modes) j["pod"] = {{"modes", pod["modes"]}, {"energy_tol", nullptr}};
      } else if (it.value().is_object() && j[key].is_object()) {
        merge(j[key], it.value(), key + ".");
      } else {
        j[key] = it.value();
      }
    }

    PipelineConfig c;
    c.ranges.lower = j["ranges"]["lower"].get<std::array<double, 4>>();
    c.ranges.upper = j["ranges"]["upper"].get<std::array<double, 4>>();
    c.design.mesh.level = j["mesh"]["level"].get<int>();
    c.design.mesh.degree = j["mesh"]["degree"].get<int>();
    c.harmonics = j["harmonics"].get<int>();
    const json& s = j["sources"];
    c.sources.b_rem = s["b_rem"].get<double>();
    c.sources.current_peak = s["current_peak"].get<double>();
    c.sources.current_angle_deg = s["current_angle_deg"].get<double>();
    c.sources.nonlinear_iron = s["nonlinear_iron"].get<bool>();
    c.sources.k1 = s["k1"].get<double>();
    c.sources.k2 = s["k2"].get<double>();
    c.sources.k3 = s["k3"].get<double>();
    c.solver.method = method_from(j["solver"]["method"].get<std::string>());
    c.solver.tol = j["solver"]["tol"].get<double>();
    c.solver.max_iter = j["solver"]["max_iter"].get<int>();
    c.solver.relaxation = j["solver"]["relaxation"].get<double>();
    c.axial_length = j["axial_length"].get<double>();
    c.n_train = j["samples"]["train"].get<int>();
    c.n_test = j["samples"]["test"].get<int>();
    c.n_validation = j["samples"]["validation"].get<int>();
    c.sobol_skip = j["samples"]["skip"].get<int>();
    if (!j["pod"]["modes"].is_null()) {
      c.pod = PodSelector::mode_count(j["pod"]["modes"].get<int>());
    } else {
      c.pod = PodSelector::energy(j["pod"]["energy_tol"].get<double>());
    }
    c.hidden = j["network"]["hidden"].get<std::vector<int>>();
    c.train = j["network"]["train"].get<TrainConfig>();
    const json& sr = j["network"]["search"];
    if (!sr.is_null()) {
      SearchSpace sp;
      sp.architectures = sr.at("architectures").get<std::vector<std::vector<int>>>();
      sp.learning_rates = sr.at("learning_rates").get<std::vector<double>>();
      sp.l2 = sr.at("l2").get<std::vector<double>>();
      sp.trials = sr.value("trials", 4);
      c.search = sp;
    }
    c.airgap_only = j["evaluation"]["airgap_only"].get<bool>();
    c.per_sample_stiffness = j["evaluation"]["per_sample_stiffness"].get<bool>();
    c.bench_full_solves = j["bench"]["full_solves"].get<int>();
    c.bench_predictions = j["bench"]["predictions"].get<int>();
    c.seed = j["seed"].get<std::uint64_t>();
    c.workers = j["workers"].get<int>();
    c.out_dir = j["out_dir"].get<std::string>();
    c.train.seed = c.seed;
    c.check();
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string PipelineConfig::snapshot_hash() const {
  const json j = to_json();
  json s;
  for (const char* k : {"ranges", "mesh", "harmonics", "sources", "solver", "axial_length", "samples"}) s[k] = j[k];
  return fnv1a_hex(s.dump());
}

std::string PipelineConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");
  j.erase("workers");
  return fnv1a_hex(j.dump());
}

// ------------------------------------------------------------------ sampling

Sobol4::Sobol4() {
  // Joe-Kuo parameters (s, a, m_1..m_s) for dimensions 2..4; dimension 1 is van der Corput.
  struct Dim {
    unsigned s, a;
    std::array<std::uint32_t, 3> m;
  };
  const std::array<Dim, 3> dims{{{1, 0, {1, 0, 0}}, {2, 1, {1, 3, 0}}, {3, 1, {1, 3, 1}}}};
  for (unsigned k = 0; k < 32; ++k) v_[0][k] = 1u << (31 - k);
  for (std::size_t d = 0; d < dims.size(); ++d) {
    const Dim& D = dims[d];
    auto& v = v_[d + 1];
    for (unsigned k = 0; k < D.s; ++k) v[k] = D.m[k] << (31 - k);
    for (unsigned k = D.s; k < 32; ++k) {
      std::uint32_t x = v[k - D.s] ^ (v[k - D.s] >> D.s);
      for (unsigned i = 1; i < D.s; ++i) {
        if ((D.a >> (D.s - 1 - i)) & 1u) x ^= v[k - i];
      }
      v[k] = x;
    }
  }
}

std::array<double, 4> Sobol4::next() {
  std::array<double, 4> out;
  for (int d = 0; d < 4; ++d) out[static_cast<std::size_t>(d)] = x_[static_cast<std::size_t>(d)] * 0x1p-32;
  // Gray code: flip the direction number of the lowest zero bit of the index.
  unsigned c = 0;
  for (std::uint32_t i = index_; i & 1u; i >>= 1) ++c;
  for (int d = 0; d < 4; ++d) x_[static_cast<std::size_t>(d)] ^= v_[static_cast<std::size_t>(d)][c];
  ++index_;
  return out;
}

void Sobol4::skip(int n) {
  for (int i = 0; i < n; ++i) next();
}

std::vector<std::array<double, 4>> sobol_unit(int n, int skip) {
  if (n < 0 || skip < 0) throw ConfigError("sobol: counts must be non-negative");
  Sobol4 s;
  s.skip(skip);
  std::vector<std::array<double, 4>> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(s.next());
  return out;
}

std::vector<ParamVector> sobol_sample(const ParamRanges& ranges, int n, int skip) {
  ranges.check();
  std::vector<ParamVector> out;
  for (const auto& u : sobol_unit(n, skip)) out.push_back(ranges.map_unit(u));
  return out;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    default: return "validation";
  }
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "validation") return Split::validation;
  throw UsageError("unknown split '" + s + "'");
}

std::vector<SampleSpec> plan_samples(const PipelineConfig& c) {
  const auto pts = sobol_sample(c.ranges, c.total_samples(), c.sobol_skip);
  std::vector<SampleSpec> plan;
  for (int i = 0; i < c.total_samples(); ++i) {
    const Split s = i < c.n_train ? Split::train : i < c.n_train + c.n_test ? Split::test : Split::validation;
    plan.push_back({i, s, pts[static_cast<std::size_t>(i)]});
  }
  return plan;
}

// ------------------------------------------------------------------ full-order model

std::array<double, 2> torque_radii(const MachineDesign& d) {
  return {0.5 * (d.rotor_radius + d.airgap_interface_radius), 0.5 * (d.airgap_interface_radius + d.stator_bore_radius)};
}

FullSolution solve_full(const PipelineConfig& c, const ParamVector& p) {
  const MachineDesign design = design_at(c);
  Discretization d(build_machine_geometry(p, design));
  const MaterialSet m = machine_materials(p, d.model(), c.sources);
  const SaddleSolution s = solve_nonlinear(d, m, c.harmonics, c.solver);
  FullSolution out;
  out.u = s.coefficients();
  out.iterations = s.iterations;
  out.residual = s.residual_norm;
  const auto r = torque_radii(design);
  out.torque = torque(d, out.u, r[0], c.axial_length).torque;
  out.torque_stator = torque(d, out.u, r[1], c.axial_length).torque;
  return out;
}

SparseMatrix reference_weighting(const PipelineConfig& c) {
  Discretization d(build_machine_geometry(c.ranges.midpoint(), design_at(c)));
  const SparseMatrix K = assemble_K0(d);
  if (!c.airgap_only) return K;
  return restrict_matrix(K, d.airgap_dofs());
}

std::vector<int> retained_dofs(const PipelineConfig& c) {
  Discretization d(build_machine_geometry(c.ranges.midpoint(), design_at(c)));
  if (c.airgap_only) return d.airgap_dofs();
  std::vector<int> all(static_cast<std::size_t>(d.num_dofs()));
  for (int i = 0; i < d.num_dofs(); ++i) all[static_cast<std::size_t>(i)] = i;
  return all;
}

// ------------------------------------------------------------------ snapshot store

namespace {

json record_json(const SampleRecord& r) {
  json j = {{"index", r.index}, {"split", to_string(r.split)}, {"params", params_json(r.params)}, {"ok", r.ok}};
  if (r.ok) {
    j["file"] = r.file;
    j["iterations"] = r.iterations;
    j["residual"] = r.residual;
    j["torque"] = r.torque;
    j["torque_stator"] = r.torque_stator;
  } else {
    j["reason"] = r.reason;
  }
  return j;
}

SampleRecord record_from(const json& j) {
  SampleRecord r;
  r.index = j.at("index").get<int>();
  r.split = split_from_string(j.at("split").get<std::string>());
  r.params = params_from(j.at("params"));
  r.ok = j.at("ok").get<bool>();
  if (r.ok) {
    r.file = j.at("file").get<std::string>();
    r.iterations = j.at("iterations").get<int>();
    r.residual = j.at("residual").get<double>();
    r.torque = j.at("torque").get<double>();
    r.torque_stator = j.at("torque_stator").get<double>();
  } else {
    r.reason = j.value("reason", std::string());
  }
  return r;
}

}  // namespace

SnapshotStore SnapshotStore::open(const std::string& out_dir) {
  const fs::path mp = fs::path(out_dir) / "manifest.json";
  std::ifstream in(mp);
  if (!in) throw IoError("no snapshot manifest at " + mp.string());
  SnapshotStore s;
  s.dir_ = out_dir;
  try {
    json j;
    in >> j;
    s.config_hash_ = j.at("config_hash").get<std::string>();
    s.n_ = j.at("num_dofs").get<int>();
    for (const json& r : j.at("samples")) s.samples_.push_back(record_from(r));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + mp.string() + ": " + e.what());
  }
  for (const SampleRecord& r : s.samples_) {
    if (!r.ok) continue;
    const fs::path f = fs::path(out_dir) / r.file;
    std::error_code ec;
    if (!fs::exists(f) || fs::file_size(f, ec) != static_cast<std::uintmax_t>(s.n_) * 8u) {
      throw IoError("snapshot file missing or wrong size: " + f.string());
    }
  }
  return s;
}

std::vector<SampleRecord> SnapshotStore::samples(Split sp) const {
  std::vector<SampleRecord> out;
  for (const SampleRecord& r : samples_) {
    if (r.ok && r.split == sp) out.push_back(r);
  }
  return out;
}

void SnapshotStore::check_config(const PipelineConfig& c) const {
  if (c.snapshot_hash() != config_hash_) {
    throw UsageError("snapshot store in " + dir_ + " was generated with a different configuration (hash " +
                     config_hash_ + ", current " + c.snapshot_hash() + ")");
  }
}

Eigen::VectorXd SnapshotStore::load(const SampleRecord& r) const {
  if (!r.ok) throw UsageError("sample " + std::to_string(r.index) + " has no snapshot");
  const std::vector<double> v = read_f64((fs::path(dir_) / r.file).string());
  if (static_cast<int>(v.size()) != n_) throw IoError("snapshot length mismatch in " + r.file);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), n_);
}

SnapshotMatrix SnapshotStore::matrix(Split sp, const std::vector<int>& rows) const {
  const auto recs = samples(sp);
  SnapshotMatrix S;
  S.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(recs.size()));
  for (std::size_t j = 0; j < recs.size(); ++j) {
    S.data.col(static_cast<Eigen::Index>(j)) = restrict_vector(load(recs[j]), rows);
    S.params.push_back(recs[j].params);
  }
  return S;
}

SnapshotStore generate_snapshots(const PipelineConfig& c, const std::vector<SampleSpec>& plan,
                                 const ProgressFn& progress) {
  c.check();
  if (plan.empty()) throw ConfigError("no samples planned");
  const fs::path root(c.out_dir);
  std::error_code ec;
  fs::create_directories(root / "snapshots", ec);
  if (ec) throw IoError("cannot create " + (root / "snapshots").string() + ": " + ec.message());

  Discretization ref(build_machine_geometry(c.ranges.midpoint(), design_at(c)));
  const int n = ref.num_dofs();

  std::vector<SampleRecord> records(plan.size());
  std::vector<double> seconds(plan.size(), 0.0);
  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t k = next++; k < plan.size(); k = next++) {
      const SampleSpec& spec = plan[k];
      SampleRecord& r = records[k];
      r.index = spec.index;
      r.split = spec.split;
      r.params = spec.params;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const FullSolution s = solve_full(c, spec.params);
        if (s.u.size() != n) throw NumericalError("DoF count differs from the reference layout");
        char name[64];
        std::snprintf(name, sizeof name, "snapshots/sample_%05d.bin", spec.index);
        r.file = name;
        write_f64((root / r.file).string(), std::vector<double>(s.u.data(), s.u.data() + s.u.size()));
        r.ok = true;
        r.iterations = s.iterations;
        r.residual = s.residual;
        r.torque = s.torque;
        r.torque_stator = s.torque_stator;
      } catch (const std::exception& e) {
        r.ok = false;
        r.reason = e.what();
      }
      seconds[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const int count = ++done;
      if (progress) {
        std::lock_guard<std::mutex> lock(log_mutex);
        progress("snapshot " + std::to_string(count) + "/" + std::to_string(plan.size()) + " sample " +
                 std::to_string(spec.index) + (r.ok ? " ok (" + std::to_string(r.iterations) + " it)" : " FAILED: " + r.reason));
      }
    }
  };
  const int nw = std::max(1, std::min<int>(c.workers, static_cast<int>(plan.size())));
  if (nw == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < nw; ++i) pool.emplace_back(worker);
  }

  json manifest;
  manifest["format"] = "igapod-snapshots";
  manifest["version"] = 1;
  manifest["config_hash"] = c.snapshot_hash();
  for (const char* k : {"ranges", "mesh", "harmonics", "sources", "solver", "axial_length", "samples"}) {
    manifest["config"][k] = c.to_json()[k];
  }
  manifest["num_dofs"] = n;
  manifest["n_rotor"] = ref.dofs().n_rotor;
  manifest["n_stator"] = ref.dofs().n_stator;
  manifest["payload"] = "raw little-endian float64, num_dofs values, rotor DoFs first";
  int failures = 0;
  json list = json::array();
  for (const SampleRecord& r : records) {
    list.push_back(record_json(r));
    if (!r.ok) ++failures;
  }
  manifest["samples"] = list;
  manifest["failures"] = failures;
  write_json(root / "manifest.json", manifest);

  json timing = json::array();
  for (std::size_t k = 0; k < records.size(); ++k) timing.push_back({{"index", records[k].index}, {"seconds", seconds[k]}});
  write_json(root / "snapshots" / "timing.json", {{"workers", nw}, {"samples", timing}});

  if (failures * 10 > static_cast<int>(plan.size())) {
    throw NumericalError(std::to_string(failures) + " of " + std::to_string(plan.size()) +
                         " samples failed (more than 10%); see manifest.json");
  }
  return SnapshotStore::open(c.out_dir);
}

SnapshotStore generate_snapshots(const PipelineConfig& c, const ProgressFn& progress) {
  return generate_snapshots(c, plan_samples(c), progress);
}

// ------------------------------------------------------------------ POD

std::string basis_id(const PodBasis& b) {
  return fnv1a_hex(fnv1a_hex(b.Q.data(), static_cast<std::size_t>(b.Q.size()) * sizeof(double)) + b.weighting_id);
}

PodBasis run_pod(const PipelineConfig& c, const SnapshotStore& store) {
  store.check_config(c);
  const std::vector<int> rows = retained_dofs(c);
  const SparseMatrix W = reference_weighting(c);
  const SnapshotMatrix S = store.matrix(Split::train, rows);
  if (S.data.cols() < 2) throw UsageError("POD needs at least two training snapshots");
  PodBasis b = weighted_pod(S, W, c.pod);
  b.metadata = {{"config_hash", store.config_hash()},
                {"snapshots", S.data.cols()},
                {"airgap_only", c.airgap_only},
                {"retained_dofs", rows.size()},
                {"weighting", "unit-reluctivity stiffness at the midpoint parameters"}};

  const fs::path dir = fs::path(c.out_dir) / "pod";
  save_basis(b, (dir / "basis.bin").string());
  {
    std::ofstream out = open_text(dir / "eigenvalues.csv");
    out << "index,eigenvalue,cumulative_energy\n";
    const double total = b.all_eigenvalues.sum();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b.all_eigenvalues.size(); ++i) {
      acc += b.all_eigenvalues(i);
      out << i + 1 << "," << fmt(b.all_eigenvalues(i)) << "," << fmt(acc / total) << "\n";
    }
  }
  // Reconstruction error against the number of modes, from one full-rank basis.
  {
    const PodBasis full = weighted_pod(S, W, PodSelector::mode_count(static_cast<int>(S.data.cols())));
    std::ofstream out = open_text(dir / "decay.csv");
    out << "modes,train_mean,train_max,validation_mean,validation_max\n";
    const SnapshotMatrix V = store.matrix(Split::validation, rows);
    auto curves = [&](const Eigen::MatrixXd& U) {
      const Eigen::MatrixXd C = full.Q.transpose() * (W * U);
      Eigen::MatrixXd err(full.modes(), U.cols());
      for (Eigen::Index j = 0; j < U.cols(); ++j) {
        const double norm2 = U.col(j).dot(W * U.col(j));
        double acc = 0.0;
        for (int m = 0; m < full.modes(); ++m) {
          acc += C(m, j) * C(m, j);
          err(m, j) = std::sqrt(std::max(0.0, 1.0 - acc / norm2));
        }
      }
      return err;
    };
    const Eigen::MatrixXd et = curves(S.data);
    const Eigen::MatrixXd ev = V.data.cols() > 0 ? curves(V.data) : Eigen::MatrixXd::Zero(full.modes(), 1);
    for (int m = 0; m < full.modes(); ++m) {
      out << m + 1 << "," << fmt(et.row(m).mean()) << "," << fmt(et.row(m).maxCoeff()) << "," << fmt(ev.row(m).mean())
          << "," << fmt(ev.row(m).maxCoeff()) << "\n";
    }
  }
  return b;
}

// ------------------------------------------------------------------ training

namespace {

Dataset make_dataset(const SnapshotStore& store, Split sp, const std::vector<int>& rows, const PodBasis& b,
                     const SparseMatrix& W) {
  const SnapshotMatrix S = store.matrix(sp, rows);
  Dataset d;
  d.X.resize(4, S.data.cols());
  for (std::size_t j = 0; j < S.params.size(); ++j) d.X.col(static_cast<Eigen::Index>(j)) = to_input(S.params[j]);
  d.Y = project_columns(b, W, S.data);
  return d;
}

void check_basis(const PodBasis& b, const SnapshotStore& store) {
  if (b.metadata.value("config_hash", std::string()) != store.config_hash()) {
    throw UsageError("basis was not built from this snapshot store (config hash mismatch)");
  }
  if (b.metadata.value("retained_dofs", -1) < 0) throw UsageError("basis metadata lacks retained_dofs");
}

}  // namespace

TrainResult run_training(const PipelineConfig& c, const SnapshotStore& store, const PodBasis& basis,
                         const ProgressFn& progress) {
  store.check_config(c);
  check_basis(basis, store);
  const std::vector<int> rows = retained_dofs(c);
  const SparseMatrix W = reference_weighting(c);
  const Dataset tr = make_dataset(store, Split::train, rows, basis, W);
  const Dataset te = make_dataset(store, Split::test, rows, basis, W);
  TrainConfig tc = c.train;
  tc.seed = c.seed;

  TrainResult res;
  if (c.search) {
    SearchResult sr = random_search(tr, te, *c.search, tc);
    for (const SearchTrial& t : sr.trials) {
      std::string arch;
      for (int h : t.hidden) arch += (arch.empty() ? "" : "x") + std::to_string(h);
      notify(progress, "search trial " + arch + " lr " + fmt(t.learning_rate) + " l2 " + fmt(t.l2) + " test loss " +
                           fmt(t.test_loss));
    }
    res = std::move(sr.best);
  } else {
    res = train(tr, &te, c.hidden, tc);
  }
  res.model.basis_hash = basis_id(basis);
  notify(progress, "training stopped after " + std::to_string(res.history.train_loss.size()) + " epochs (" +
                       res.history.stop_reason + "), best epoch " + std::to_string(res.history.best_epoch));

  const fs::path dir = fs::path(c.out_dir) / "model";
  save_model(res.model, (dir / "model.bin").string());
  std::ofstream out = open_text(dir / "history.csv");
  out << "epoch,train_loss,test_loss\n";
  std::size_t t = 0;
  for (std::size_t e = 0; e < res.history.train_loss.size(); ++e) {
    out << e + 1 << "," << fmt(res.history.train_loss[e]) << ",";
    if (t < res.history.test_epochs.size() && res.history.test_epochs[t] == static_cast<int>(e + 1)) {
      out << fmt(res.history.test_loss[t++]);
    }
    out << "\n";
  }
  return res;
}

// ------------------------------------------------------------------ evaluation

Stats Stats::of(const std::vector<double>& v) {
  Stats s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) {
    sum += x;
    s.max = std::max(s.max, x);
  }
  s.mean = sum / s.count;
  double var = 0.0;
  for (double x : v) var += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(var / s.count);
  return s;
}

namespace {

json stats_json(const Stats& s) { return {{"mean", s.mean}, {"max", s.max}, {"std", s.std}, {"count", s.count}}; }

}  // namespace

json EvalReport::to_json() const {
  json j;
  j["modes"] = modes;
  j["num_dofs"] = num_dofs;
  j["basis_hash"] = basis_hash;
  j["config_hash"] = config_hash;
  for (const auto& [name, s] : splits) {
    j["splits"][name] = {{"field_error", stats_json(s.field_error)},
                         {"pod_error", stats_json(s.pod_error)},
                         {"torque_error", stats_json(s.torque_error)}};
  }
  j["pod_below_dnn"] = pod_below_dnn;
  if (!pod_below_dnn) j["flag"] = "mean POD error exceeds the surrogate error on validation: m may be over-sized";
  return j;
}

EvalReport evaluate(const PipelineConfig& c, const SnapshotStore& store, const PodBasis& basis,
                    const Predictor& predictor, const ProgressFn& progress) {
  store.check_config(c);
  check_basis(basis, store);
  const std::vector<int> rows = retained_dofs(c);
  const SparseMatrix W = reference_weighting(c);
  const MachineDesign design = design_at(c);
  const double r_torque = torque_radii(design)[0];

  EvalReport rep;
  rep.modes = basis.modes();
  rep.num_dofs = basis.size();
  rep.basis_hash = basis_id(basis);
  rep.config_hash = store.config_hash();
  std::map<std::string, std::vector<double>> field, pod, tq;
  int count = 0;
  for (const SampleRecord& r : store.samples()) {
    if (!r.ok) continue;
    const Eigen::VectorXd u = store.load(r);
    const Eigen::VectorXd ur = restrict_vector(u, rows);
    const Eigen::VectorXd exact = project(basis, W, ur);
    const Eigen::VectorXd pred = predictor(r.params, exact);
    const Eigen::VectorXd ut = reconstruct(basis, pred);
    const Eigen::VectorXd up = reconstruct(basis, exact);

    Discretization d(build_machine_geometry(r.params, design));
    SparseMatrix K;
    if (c.per_sample_stiffness) {
      K = assemble_stiffness(d, machine_materials(r.params, d.model(), c.sources), &u);
    } else {
      K = assemble_K0(d);
    }
    K = restrict_matrix(K, rows);

    SampleEval e;
    e.index = r.index;
    e.split = r.split;
    e.params = r.params;
    e.field_error = seminorm_error(ur, ut, K);
    e.pod_error = seminorm_error(ur, up, K);
    e.torque_full = r.torque;
    e.torque_surrogate = torque(d, embed(ut, rows, store.num_dofs()), r_torque, c.axial_length).torque;
    e.torque_error = std::abs(e.torque_surrogate - e.torque_full) / std::max(std::abs(e.torque_full), 1e-300);
    rep.samples.push_back(e);
    const std::string sp = to_string(r.split);
    field[sp].push_back(e.field_error);
    pod[sp].push_back(e.pod_error);
    tq[sp].push_back(e.torque_error);
    if (++count % 16 == 0) notify(progress, "evaluated " + std::to_string(count) + " samples");
  }
  for (const auto& [sp, v] : field) {
    rep.splits[sp] = {Stats::of(v), Stats::of(pod[sp]), Stats::of(tq[sp])};
  }
  if (rep.splits.count("validation")) {
    const SplitReport& v = rep.splits["validation"];
    rep.pod_below_dnn = v.pod_error.mean < v.field_error.mean;
  }
  return rep;
}

EvalReport run_evaluation(const PipelineConfig& c, const SnapshotStore& store, const PodBasis& basis,
                          const MlpModel& model, const ProgressFn& progress) {
  if (model.basis_hash != basis_id(basis)) throw UsageError("model was trained on a different basis");
  if (model.output_dim() != basis.modes()) throw UsageError("model output dimension differs from the basis size");
  const EvalReport rep = evaluate(
      c, store, basis, [&](const ParamVector& p, const Eigen::VectorXd&) { return model.forward(p); }, progress);
  const fs::path dir = fs::path(c.out_dir) / "eval";
  write_json(dir / "report.json", rep.to_json());
  std::ofstream out = open_text(dir / "samples.csv");
  out << "index,split,mag,mh,mw,alpha_deg,field_error,pod_error,torque_full,torque_surrogate,torque_error\n";
  for (const SampleEval& e : rep.samples) {
    out << e.index << "," << to_string(e.split) << "," << fmt(e.params.mag) << "," << fmt(e.params.mh) << ","
        << fmt(e.params.mw) << "," << fmt(e.params.alpha_deg) << "," << fmt(e.field_error) << "," << fmt(e.pod_error)
        << "," << fmt(e.torque_full) << "," << fmt(e.torque_surrogate) << "," << fmt(e.torque_error) << "\n";
  }
  return rep;
}

// ------------------------------------------------------------------ prediction and timing

Prediction predict(const PipelineConfig& c, const MlpModel& model, const PodBasis& basis, const ParamVector& p,
                   bool with_torque) {
  if (model.basis_hash != basis_id(basis)) throw UsageError("model and basis files do not belong together");
  if (model.output_dim() != basis.modes()) throw UsageError("model output dimension differs from the basis size");
  Prediction out;
  if (!c.ranges.contains(p)) out.warnings.push_back("parameters outside the training ranges: extrapolating");
  out.reduced = model.forward(p);
  const Eigen::VectorXd r = reconstruct(basis, out.reduced);
  if (with_torque || r.size() != basis.size()) {
    Discretization d(build_machine_geometry(p, design_at(c)));
    const std::vector<int> rows = c.airgap_only ? d.airgap_dofs() : std::vector<int>{};
    out.coefficients = c.airgap_only ? embed(r, rows, d.num_dofs()) : r;
    if (out.coefficients.size() != d.num_dofs()) throw UsageError("basis size does not match the machine mesh");
    if (with_torque) out.torque = torque(d, out.coefficients, torque_radii(c.design)[0], c.axial_length).torque;
  } else {
    out.coefficients = r;
  }
  return out;
}

json TimingReport::to_json() const {
  return {{"full_solve_median_s", full_solve_median},
          {"predict_median_s", predict_median},
          {"speedup", speedup},
          {"full_solves", full_solves},
          {"predictions", predictions}};
}

TimingReport run_bench(const PipelineConfig& c, const MlpModel& model, const PodBasis& basis) {
  if (model.basis_hash != basis_id(basis)) throw UsageError("model and basis files do not belong together");
  using clock = std::chrono::steady_clock;
  const ParamVector p = c.ranges.midpoint();
  std::vector<double> full, fast;
  for (int i = 0; i < c.bench_full_solves; ++i) {
    const auto t0 = clock::now();
    const FullSolution s = solve_full(c, p);
    full.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    if (s.u.size() == 0) throw NumericalError("empty solution");
  }
  double sink = 0.0;
  for (int i = 0; i < c.bench_predictions; ++i) {
    const auto t0 = clock::now();
    const Eigen::VectorXd u = basis.Q * model.forward(p);
    fast.push_back(std::chrono::duration<double>(clock::now() - t0).count());
    sink += u(0);
  }
  TimingReport t;
  t.full_solves = c.bench_full_solves;
  t.predictions = c.bench_predictions;
  t.full_solve_median = median(full);
  t.predict_median = median(fast);
  t.speedup = t.predict_median > 0.0 ? t.full_solve_median / t.predict_median : 0.0;
  if (!std::isfinite(sink)) throw NumericalError("non-finite prediction in benchmark");
  write_json(fs::path(c.out_dir) / "timing.json", t.to_json());
  return t;
}

EvalReport run_all(const PipelineConfig& c, const ProgressFn& progress) {
  c.check();
  std::error_code ec;
  fs::create_directories(c.out_dir, ec);
  json cfg = c.to_json();
  write_json(fs::path(c.out_dir) / "config.json", cfg);
  const SnapshotStore store = generate_snapshots(c, progress);
  notify(progress, "pod");
  const PodBasis basis = run_pod(c, store);
  notify(progress, "pod: " + std::to_string(basis.modes()) + " modes, energy " + fmt(basis.energy_captured));
  const TrainResult tr = run_training(c, store, basis, progress);
  notify(progress, "evaluation");
  return run_evaluation(c, store, basis, tr.model, progress);
}

}  // namespace igapod
