#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <functional>
#include <vector>

#include "igapod/geometry.hpp"
#include "igapod/machine.hpp"

namespace igapod {

using SparseMatrix = Eigen::SparseMatrix<double>;

inline constexpr double kMu0 = 4e-7 * 3.14159265358979323846;
inline constexpr double kNu0 = 1.0 / kMu0;

/// nu(B^2): either a constant or min(k1 * exp(k2 * B^2) + k3, nu_max).
struct Reluctivity {
  enum class Kind { constant, exponential };
  Kind kind = Kind::constant;
  double nu = kNu0;
  double k1 = 0.0, k2 = 0.0, k3 = 0.0;
  double nu_max = kNu0;  // deep saturation never exceeds vacuum reluctivity

  static Reluctivity constant(double nu);
  static Reluctivity exponential(double k1, double k2, double k3);

  double operator()(double b_squared) const;
  double derivative(double b_squared) const;  // d nu / d(B^2)
  double integral(double b_squared) const;    // int_0^{B^2} nu(t) dt
  bool field_dependent() const { return kind == Kind::exponential && k2 != 0.0; }
  void check() const;  // ConfigError for non-positive or negative coefficients
};

struct MaterialSet {
  Reluctivity iron = Reluctivity::exponential(3.8, 2.17, 396.2);
  Reluctivity air = Reluctivity::constant(kNu0);
  Reluctivity magnet = Reluctivity::constant(kNu0 / 1.05);
  Reluctivity coil = Reluctivity::constant(kNu0);

  double b_rem = 0.0;        // tesla
  double magnet_angle = 0.0; // beta, radians; remanence direction (-sin beta, cos beta)
  std::vector<double> slot_current;  // A/m^2 for patches with source_slot >= 0
  double coil_current = 0.0;         // A/m^2 for coil patches without a slot index

  const Reluctivity& reluctivity(MaterialTag t) const;
  Vec2 remanence() const;
  double current(const Patch& p) const;
};

/// Source settings of the built-in machine.
struct MachineSources {
  double b_rem = 1.0;
  double current_peak = 4e6;          // A/m^2
  double current_angle_deg = 0.0;     // electrical offset of the current phasor
  bool nonlinear_iron = true;
  double k1 = 3.8, k2 = 2.17, k3 = 396.2;
};

/// Materials for a machine sample: magnet direction follows the rotor, slot
/// currents follow the electrical angle pole_pairs * alpha.
MaterialSet machine_materials(const ParamVector& p, const MultiPatchModel& model,
                              const MachineSources& src = {});

/// Global numbering after merging conforming interfaces, eliminating Dirichlet
/// nodes and folding anti-periodic slaves onto their masters with sign -1.
struct DofMap {
  std::vector<std::vector<int>> global;     // per patch, per control point; -1 if fixed to zero
  std::vector<std::vector<double>> sign;    // +1, or -1 for slave copies
  int n_rotor = 0;
  int n_stator = 0;
  int n_fixed_nodes = 0;

  int size() const { return n_rotor + n_stator; }
};

DofMap build_dof_map(const MultiPatchModel& model);

/// Mapped quadrature data, cached per geometry.
struct QuadElement {
  int patch = 0;
  std::vector<int> cps;  // patch-local control point indices
  int first_qp = 0;
  int n_qp = 0;
};

class Discretization {
 public:
  explicit Discretization(MultiPatchModel model, int quad_points = 0);

  const MultiPatchModel& model() const { return model_; }
  const DofMap& dofs() const { return dofs_; }
  int num_dofs() const { return dofs_.size(); }
  int num_qp() const { return static_cast<int>(qp_weight_.size()); }

  const std::vector<QuadElement>& elements() const { return elements_; }
  double qp_weight(int q) const { return qp_weight_[static_cast<std::size_t>(q)]; }  // w * det J
  const Vec2& qp_point(int q) const { return qp_x_[static_cast<std::size_t>(q)]; }
  const Eigen::VectorXd& qp_values(int q) const { return qp_n_[static_cast<std::size_t>(q)]; }
  const Eigen::Matrix2Xd& qp_grads(int q) const { return qp_grad_[static_cast<std::size_t>(q)]; }

  /// Coefficient of a patch control point in the global vector u.
  double coefficient(const Eigen::VectorXd& u, int patch, int cp) const;

  /// Global DoFs whose control point lies in a patch touching the sliding interface.
  std::vector<int> airgap_dofs() const;

 private:
  MultiPatchModel model_;
  DofMap dofs_;
  std::vector<QuadElement> elements_;
  std::vector<double> qp_weight_;
  std::vector<Vec2> qp_x_;
  std::vector<Eigen::VectorXd> qp_n_;
  std::vector<Eigen::Matrix2Xd> qp_grad_;
};

/// Reluctivity at every quadrature point for the field of `u` (null: B = 0).
std::vector<double> reluctivity_at_points(const Discretization& d, const MaterialSet& m,
                                          const Eigen::VectorXd* u);

/// K_ij = int nu grad B_i . grad B_j over the eliminated DoF space; block
/// diagonal with the rotor block first.
SparseMatrix assemble_stiffness(const Discretization& d, const std::vector<double>& nu_qp);
SparseMatrix assemble_stiffness(const Discretization& d, const MaterialSet& m,
                                const Eigen::VectorXd* linearization = nullptr);

/// Unit reluctivity stiffness used as POD weighting.
SparseMatrix assemble_K0(const Discretization& d);

/// Coil current and magnet remanence load vector.
Eigen::VectorXd assemble_rhs(const Discretization& d, const MaterialSet& m);

/// int f v dx for a given scalar source.
Eigen::VectorXd assemble_load(const Discretization& d, const std::function<double(const Vec2&)>& f);

/// Harmonic orders k = pole_pairs * (2j + 1), j < H.
std::vector<int> harmonic_orders(int pole_pairs, int H);

struct MortarBlocks {
  Eigen::MatrixXd G_rt;  // n_rotor x 2H, columns [cos k1, sin k1, cos k2, ...]
  Eigen::MatrixXd G_st;  // n_stator x 2H
  std::vector<int> orders;
};

/// Coupling of interface traces with the harmonic multiplier space. The rotor
/// side is measured in its own frame so that rotation enters only via R_alpha.
MortarBlocks assemble_mortar(const Discretization& d, int H);

/// Block-diagonal rotation, block k = [[cos k a, -sin k a], [sin k a, cos k a]].
Eigen::MatrixXd rotation_matrix(double alpha, const std::vector<int>& orders);

struct SaddleSystem {
  SparseMatrix K_rt, K_st;
  Eigen::MatrixXd G_rt, G_st;
  Eigen::MatrixXd R;
  Eigen::VectorXd b_rt, b_st;
};

struct SaddleSolution {
  Eigen::VectorXd u_rt, u_st, lambda;
  double residual_norm = 0.0;
  int iterations = 0;
  std::vector<double> update_history;

  Eigen::VectorXd coefficients() const;  // (u_rt, u_st) stacked
};

SaddleSystem make_system(const Discretization& d, const SparseMatrix& K, const Eigen::VectorXd& b,
                         const MortarBlocks& mortar);

/// Schur-complement solve of [[K_rt, 0, -G_rt], [0, K_st, G_st R], [-G_rt^T, R^T G_st^T, 0]].
SaddleSolution solve_linear(const SaddleSystem& sys, double tol = 1e-10);

enum class NonlinearMethod { picard, newton };

struct NonlinearOptions {
  NonlinearMethod method = NonlinearMethod::picard;
  double tol = 1e-6;
  int max_iter = 50;
  double relaxation = 0.7;  // Picard: under-relaxation of the reluctivity update
};

/// Magnetic energy minus the work of the sources; minimized by the solution.
double magnetic_energy(const Discretization& d, const MaterialSet& m, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& b);

/// Picard iteration on the reluctivity, or Newton with a backtracking line
/// search on the magnetic energy. One iteration when nothing depends on B.
SaddleSolution solve_nonlinear(const Discretization& d, const MaterialSet& m, int H,
                               const NonlinearOptions& opt = {});

struct FieldValue {
  double a_z = 0.0;
  Vec2 b = Vec2::Zero();
};

FieldValue evaluate_field(const Discretization& d, const Eigen::VectorXd& u, int patch, double xi_u,
                          double xi_v);

struct InterfaceJump {
  double max_abs = 0.0;
  double rms = 0.0;
  double reference = 0.0;  // max |A_z| over the samples
};

/// Samples |A_rotor - A_stator| along the sliding interface (anti-periodic images
/// are used where the rotated rotor does not cover the stator sector).
InterfaceJump interface_jump(const Discretization& d, const Eigen::VectorXd& u, int n_samples = 50);

}  // namespace igapod
