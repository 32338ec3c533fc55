#pragma once

#include <span>
#include <vector>

namespace igapod {

/// Open (clamped) knot vector on [0,1] with its polynomial degree.
///
/// End knots are repeated exactly degree+1 times and interior knots at most
/// degree times, so every patch edge interpolates its boundary control points.
class KnotVector {
 public:
  KnotVector(std::vector<double> knots, int degree);

  /// Uniform open knot vector with `n_elements` equal spans.
  static KnotVector open_uniform(int degree, int n_elements);

  int degree() const { return degree_; }
  int size() const { return static_cast<int>(knots_.size()); }
  int num_basis() const { return size() - degree_ - 1; }
  double operator[](int i) const { return knots_[static_cast<std::size_t>(i)]; }
  std::span<const double> knots() const { return knots_; }

  /// Distinct knot values, ascending (element boundaries).
  std::vector<double> breakpoints() const;
  int num_elements() const { return static_cast<int>(breakpoints().size()) - 1; }

  /// Index i with knots[i] <= xi < knots[i+1]; xi = 1 maps to the last
  /// non-degenerate span. Throws DomainError outside [0,1].
  int find_span(double xi) const;

  bool operator==(const KnotVector& other) const = default;

 private:
  std::vector<double> knots_;
  int degree_;
};

/// Nonzero basis functions at one parameter value.
/// ders[k][j] is the k-th derivative of basis function (span - p + j).
struct BasisEval {
  int span = 0;
  int degree = 0;
  std::vector<std::vector<double>> ders;

  int first_index() const { return span - degree; }
  std::span<const double> values() const { return ders.front(); }
};

/// Cox-de Boor evaluation of the p+1 nonzero B-splines and their derivatives
/// up to `deriv_order`. Orders above p yield zero rows.
BasisEval eval_bspline(const KnotVector& kv, double xi, int deriv_order = 0);

/// Rational (NURBS) basis N_i = w_i B_i / sum_j w_j B_j with derivatives by the
/// generalized quotient rule. `weights` has kv.num_basis() positive entries.
BasisEval eval_nurbs(const KnotVector& kv, std::span<const double> weights, double xi,
                     int deriv_order = 0);

/// Local table of the (p_u+1)(p_v+1) nonzero bivariate basis functions at one
/// point of the reference square, with first partial derivatives.
struct TensorBasis2D {
  std::vector<int> indices;  // patch-local index i + n_u * j
  std::vector<double> values;
  std::vector<double> d_u;
  std::vector<double> d_v;

  std::size_t size() const { return indices.size(); }
};

/// Tensor-product basis. `weights` (n_u * n_v, u fastest) selects the NURBS
/// variant; an empty span evaluates plain B-splines.
TensorBasis2D eval_tensor_2d(const KnotVector& ku, const KnotVector& kv,
                             std::span<const double> weights, double u, double v);

/// Gauss-Legendre rule on (-1, 1).
struct QuadRule {
  std::vector<double> points;
  std::vector<double> weights;
};

/// n_points in [1, 16]; ConfigError otherwise.
QuadRule gauss_rule(int n_points);

/// Boehm knot insertion on a curve with homogeneous control points
/// (each row holds `dim` coordinates, already multiplied by the weight).
/// Returns the refined knot vector; `points` is updated in place.
KnotVector insert_knot(const KnotVector& kv, std::vector<std::vector<double>>& points, double xi);

/// Knots that split every non-degenerate span into `parts` equal pieces.
std::vector<double> subdivision_knots(const KnotVector& kv, int parts);

}  // namespace igapod
