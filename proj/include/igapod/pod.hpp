#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "igapod/machine.hpp"
#include "igapod/magnetostatics.hpp"

namespace igapod {

/// Column j holds the coefficient vector of the solution at params[j].
struct SnapshotMatrix {
  Eigen::MatrixXd data;
  std::vector<ParamVector> params;

  void check() const;  // UsageError on empty data or misaligned params
};

/// Truncation rule: a fixed mode count, or the smallest m whose relative
/// cumulative energy reaches energy_tol.
struct PodSelector {
  enum class Kind { mode_count, energy };
  Kind kind = Kind::energy;
  int modes = 0;
  double energy_tol = 0.9999;

  static PodSelector mode_count(int m) { return {Kind::mode_count, m, 0.0}; }
  static PodSelector energy(double tol) { return {Kind::energy, 0, tol}; }
};

struct PodBasis {
  Eigen::MatrixXd Q;                // N x m, W-orthonormal columns
  Eigen::VectorXd eigenvalues;      // retained, descending
  Eigen::VectorXd all_eigenvalues;  // full spectrum of the Gram matrix, descending, clipped at 0
  double energy_captured = 0.0;
  int rank = 0;                     // eigenvalues above the cutoff
  bool truncated_to_rank = false;   // requested more modes than the rank allows
  std::string weighting_id;
  nlohmann::json metadata = nlohmann::json::object();

  int modes() const { return static_cast<int>(Q.cols()); }
  int size() const { return static_cast<int>(Q.rows()); }
};

/// Content hash of a sparse matrix (dimensions, pattern and values).
std::string weighting_hash(const SparseMatrix& W);

/// Method of snapshots on the Gram matrix S^T W S.
PodBasis weighted_pod(const SnapshotMatrix& S, const SparseMatrix& W, const PodSelector& selector);

/// Reduced coefficients Q^T W u. UsageError when W is not the basis weighting.
Eigen::VectorXd project(const PodBasis& basis, const SparseMatrix& W, const Eigen::VectorXd& u);
Eigen::MatrixXd project_columns(const PodBasis& basis, const SparseMatrix& W, const Eigen::MatrixXd& U);

Eigen::VectorXd reconstruct(const PodBasis& basis, const Eigen::VectorXd& reduced);

/// W-seminorm relative error of reconstruct(project(u)). DomainError for u^T W u = 0.
double reconstruction_error(const PodBasis& basis, const SparseMatrix& W, const Eigen::VectorXd& u);

void save_basis(const PodBasis& basis, const std::string& path);
PodBasis load_basis(const std::string& path);
nlohmann::json read_basis_header(const std::string& path);

}  // namespace igapod
