#include "igapod/pod.hpp"

#include <Eigen/Eigenvalues>
#include <bit>
#include <cmath>

#include "igapod/container.hpp"
#include "igapod/errors.hpp"
#include "igapod/postprocess.hpp"

namespace igapod {

namespace {

constexpr const char* kBasisMagic = "IGAPPOD";
constexpr double kRankCutoff = 1e-12;

void check_symmetric(const SparseMatrix& W) {
  if (W.rows() != W.cols()) throw UsageError("weighting matrix is not square");
  const SparseMatrix D = SparseMatrix(W.transpose()) - W;
  double worst = 0.0;
  for (int k = 0; k < D.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(D, k); it; ++it) worst = std::max(worst, std::abs(it.value()));
  }
  if (worst > 1e-10) throw UsageError("weighting matrix is not symmetric (max asymmetry " + std::to_string(worst) + ")");
}

void check_weighting(const PodBasis& basis, const SparseMatrix& W) {
  if (W.rows() != basis.size()) throw UsageError("weighting matrix dimension does not match the basis");
  if (weighting_hash(W) != basis.weighting_id) {
    throw UsageError("weighting matrix differs from the one the basis was built with");
  }
}

}  // namespace

void SnapshotMatrix::check() const {
  if (data.cols() < 1 || data.rows() < 1) throw UsageError("snapshot matrix is empty");
  if (!params.empty() && params.size() != static_cast<std::size_t>(data.cols())) {
    throw UsageError("snapshot parameters do not match the number of columns");
  }
}

std::string weighting_hash(const SparseMatrix& W) {
  SparseMatrix A = W;
  A.makeCompressed();
  std::vector<std::uint64_t> words{static_cast<std::uint64_t>(A.rows()), static_cast<std::uint64_t>(A.cols())};
  for (int k = 0; k < A.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) {
      if (it.value() == 0.0) continue;
      words.push_back(static_cast<std::uint64_t>(it.row()));
      words.push_back(static_cast<std::uint64_t>(it.col()));
      words.push_back(std::bit_cast<std::uint64_t>(it.value()));
    }
  }
  return fnv1a_hex(words.data(), words.size() * sizeof(std::uint64_t));
}

PodBasis weighted_pod(const SnapshotMatrix& S, const SparseMatrix& W, const PodSelector& selector) {
  S.check();
  if (W.rows() != S.data.rows()) throw UsageError("weighting matrix dimension does not match the snapshots");
  check_symmetric(W);
  if (selector.kind == PodSelector::Kind::energy && !(selector.energy_tol > 0.0 && selector.energy_tol <= 1.0)) {
    throw ConfigError("energy tolerance must lie in (0, 1]");
  }
  if (selector.kind == PodSelector::Kind::mode_count && selector.modes < 1) {
    throw ConfigError("mode count must be at least 1");
  }

  const Eigen::MatrixXd WS = W * S.data;
  Eigen::MatrixXd C = S.data.transpose() * WS;
  C = 0.5 * (C + C.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  if (es.info() != Eigen::Success) throw NumericalError("Gram matrix eigen decomposition failed");

  const Eigen::Index M = C.rows();
  Eigen::VectorXd lambda = es.eigenvalues().reverse().cwiseMax(0.0);
  Eigen::MatrixXd phi = es.eigenvectors().rowwise().reverse();

  PodBasis b;
  b.all_eigenvalues = lambda;
  const double total = lambda.sum();
  if (!(lambda(0) > 0.0)) throw NumericalError("snapshot matrix has zero weighted energy");
  int rank = 0;
  while (rank < M && lambda(rank) > kRankCutoff * lambda(0)) ++rank;
  b.rank = rank;

  int m = 0;
  if (selector.kind == PodSelector::Kind::mode_count) {
    m = selector.modes;
    if (m > rank) {
      m = rank;
      b.truncated_to_rank = true;
    }
  } else {
    double acc = 0.0;
    while (m < rank) {
      acc += lambda(m++);
      if (acc / total >= selector.energy_tol) break;
    }
  }

  b.eigenvalues = lambda.head(m);
  b.energy_captured = b.eigenvalues.sum() / total;
  b.Q = S.data * phi.leftCols(m);
  for (int i = 0; i < m; ++i) {
    b.Q.col(i) /= std::sqrt(lambda(i));
    Eigen::Index arg = 0;
    b.Q.col(i).cwiseAbs().maxCoeff(&arg);
    if (b.Q(arg, i) < 0.0) b.Q.col(i) *= -1.0;
  }
  b.weighting_id = weighting_hash(W);
  return b;
}

Eigen::VectorXd project(const PodBasis& basis, const SparseMatrix& W, const Eigen::VectorXd& u) {
  check_weighting(basis, W);
  if (u.size() != basis.size()) throw UsageError("vector length does not match the basis");
  return basis.Q.transpose() * (W * u);
}

Eigen::MatrixXd project_columns(const PodBasis& basis, const SparseMatrix& W, const Eigen::MatrixXd& U) {
  check_weighting(basis, W);
  if (U.rows() != basis.size()) throw UsageError("vector length does not match the basis");
  return basis.Q.transpose() * (W * U);
}

Eigen::VectorXd reconstruct(const PodBasis& basis, const Eigen::VectorXd& reduced) {
  if (reduced.size() != basis.modes()) throw UsageError("reduced vector length does not match the basis");
  return basis.Q * reduced;
}

double reconstruction_error(const PodBasis& basis, const SparseMatrix& W, const Eigen::VectorXd& u) {
  return seminorm_error(u, reconstruct(basis, project(basis, W, u)), W);
}

void save_basis(const PodBasis& basis, const std::string& path) {
  nlohmann::json h;
  h["kind"] = "pod_basis";
  h["N"] = basis.size();
  h["m"] = basis.modes();
  h["rank"] = basis.rank;
  h["truncated_to_rank"] = basis.truncated_to_rank;
  h["energy_captured"] = basis.energy_captured;
  h["eigenvalues"] = std::vector<double>(basis.eigenvalues.data(), basis.eigenvalues.data() + basis.eigenvalues.size());
  h["all_eigenvalues"] =
      std::vector<double>(basis.all_eigenvalues.data(), basis.all_eigenvalues.data() + basis.all_eigenvalues.size());
  h["weighting_hash"] = basis.weighting_id;
  h["metadata"] = basis.metadata;
  write_container(path, kBasisMagic, h, std::vector<double>(basis.Q.data(), basis.Q.data() + basis.Q.size()));
}

nlohmann::json read_basis_header(const std::string& path) { return read_container_header(path, kBasisMagic); }

PodBasis load_basis(const std::string& path) {
  const Container c = read_container(path, kBasisMagic);
  PodBasis b;
  try {
    const auto n = c.header.at("N").get<Eigen::Index>();
    const auto m = c.header.at("m").get<Eigen::Index>();
    if (static_cast<std::size_t>(n * m) != c.payload.size()) throw IoError("basis payload size mismatch: " + path);
    b.Q = Eigen::Map<const Eigen::MatrixXd>(c.payload.data(), n, m);
    const auto ev = c.header.at("eigenvalues").get<std::vector<double>>();
    const auto all = c.header.at("all_eigenvalues").get<std::vector<double>>();
    b.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), static_cast<Eigen::Index>(ev.size()));
    b.all_eigenvalues = Eigen::Map<const Eigen::VectorXd>(all.data(), static_cast<Eigen::Index>(all.size()));
    b.rank = c.header.at("rank").get<int>();
    b.truncated_to_rank = c.header.at("truncated_to_rank").get<bool>();
    b.energy_captured = c.header.at("energy_captured").get<double>();
    b.weighting_id = c.header.at("weighting_hash").get<std::string>();
    b.metadata = c.header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed basis header in " + path + ": " + e.what());
  }
  return b;
}

}  // namespace igapod
