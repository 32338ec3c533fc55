#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "igapod/spline.hpp"

namespace igapod {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

enum class MaterialTag { iron, air, magnet, coil };
enum class Subdomain { rotor, stator };
/// Patch edges in the reference square: south v=0, east u=1, north v=1, west u=0.
enum class Edge { south, east, north, west };
enum class BoundaryTag { dirichlet, antiperiodic_master, antiperiodic_slave, airgap, natural };

const char* to_string(MaterialTag t);
const char* to_string(Subdomain s);
const char* to_string(Edge e);
const char* to_string(BoundaryTag t);

/// Tensor-product NURBS map from [0,1]^2 to one physical subdomain.
/// Control points and weights are stored u-fastest: index i + n_u * j.
struct Patch {
  KnotVector ku;
  KnotVector kv;
  std::vector<Vec2> control_points;
  std::vector<double> weights;
  MaterialTag material = MaterialTag::iron;
  Subdomain subdomain = Subdomain::rotor;
  std::string name;
  int source_slot = -1;  // coil patches: index of the slot current

  int n_u() const { return ku.num_basis(); }
  int n_v() const { return kv.num_basis(); }
  int index(int i, int j) const { return i + n_u() * j; }

  /// Throws ConfigError when the control net does not match the knot vectors.
  void check_dimensions() const;

  /// Patch-local control point indices along an edge, in increasing parameter order.
  std::vector<int> edge_indices(Edge e) const;
  /// Knot vector running along an edge.
  const KnotVector& edge_knots(Edge e) const;
};

Vec2 map_point(const Patch& patch, double u, double v);
/// Columns are dx/du and dx/dv.
Mat2 jacobian(const Patch& patch, double u, double v);

/// Inverse map by damped Newton iteration; nullopt when x is not inside the patch.
std::optional<Vec2> inverse_map(const Patch& patch, const Vec2& x, double tol = 1e-12);

/// Conforming shared edge between two patches of the same subdomain.
struct Interface {
  int patch_a;
  Edge edge_a;
  int patch_b;
  Edge edge_b;
  bool reversed = false;
};

/// Pair of edges identified by the anti-periodic condition u_slave = -u_master.
struct PeriodicLink {
  int master_patch;
  Edge master_edge;
  int slave_patch;
  Edge slave_edge;
  bool reversed = false;
};

struct EdgeTag {
  int patch;
  Edge edge;
  BoundaryTag tag;
};

/// How the interface coordinate is measured on the mortar interface.
struct MortarFrame {
  enum class Shape { arc, flat };
  Shape shape = Shape::arc;
  // flat interfaces: angle-like coordinate theta = (x - origin) / length * sector_angle
  double origin = 0.0;
  double length = 1.0;
};

struct MultiPatchModel {
  std::vector<Patch> patches;
  std::vector<Interface> interfaces;
  std::vector<PeriodicLink> periodic_links;
  std::vector<EdgeTag> boundary_tags;
  int pole_pairs = 1;
  double sector_angle = 0.0;  // radians
  double rotor_angle = 0.0;   // radians, rigid rotation of the rotor patches
  double airgap_radius = 0.0;
  double airgap_inner = 0.0;  // rotor surface radius
  double airgap_outer = 0.0;  // stator bore radius
  MortarFrame mortar;

  std::optional<BoundaryTag> tag_of(int patch, Edge e) const;
};

struct ValidationIssue {
  std::string kind;  // "jacobian", "interface", "tag"
  std::string location;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  double min_det_jacobian = 0.0;
  std::vector<ValidationIssue> issues;

  std::string summary() const;
};

/// Jacobian positivity at every Gauss point, interface conformity and tag
/// completeness. Report-only; never throws.
ValidationReport validate_geometry(const MultiPatchModel& model, int quad_points = 0);

/// Inserts knots in every patch so each span is split into `parts` pieces.
Patch refine_patch(const Patch& patch, int parts_u, int parts_v);

/// `levels` rounds of midpoint knot insertion on all patches; geometry is preserved exactly.
MultiPatchModel refine(const MultiPatchModel& model, int levels);

/// Rigid rotation of a control net about the origin.
void rotate_patch(Patch& patch, double angle);

nlohmann::json geometry_to_json(const MultiPatchModel& model);

/// Affine patch of the axis-aligned box [lo, hi] with uniform knots.
Patch rectangle_patch(const Vec2& lo, const Vec2& hi, int degree, int n_el_u, int n_el_v);

/// Exact annular sector: u runs radially from r_in to r_out, v runs in angle
/// from theta0 to theta1 (radians, span below pi). Quadratic in both directions.
Patch annulus_patch(double r_in, double r_out, double theta0, double theta1, int n_el_u, int n_el_v);

}  // namespace igapod
