#include "igapod/spline.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "igapod/errors.hpp"

namespace igapod {

KnotVector::KnotVector(std::vector<double> knots, int degree)
    : knots_(std::move(knots)), degree_(degree) {
  if (degree_ < 0) throw ConfigError("knot vector: negative degree");
  const int m = size();
  if (m < 2 * (degree_ + 1)) {
    throw ConfigError("knot vector: need at least 2(p+1) knots, got " + std::to_string(m));
  }
  for (int i = 0; i + 1 < m; ++i) {
    if (knots_[i] > knots_[i + 1]) throw ConfigError("knot vector: knots must be non-decreasing");
  }
  if (knots_.front() != 0.0 || knots_.back() != 1.0) {
    throw ConfigError("knot vector: knots must span [0,1]");
  }
  for (int i = 0; i <= degree_; ++i) {
    if (knots_[i] != 0.0 || knots_[m - 1 - i] != 1.0) {
      throw ConfigError("knot vector: end knots must be repeated p+1 times");
    }
  }
  if (knots_[degree_ + 1] == 0.0 || knots_[m - degree_ - 2] == 1.0) {
    throw ConfigError("knot vector: end knots repeated more than p+1 times");
  }
  int run = 1;
  for (int i = degree_ + 2; i < m - degree_ - 1; ++i) {
    run = (knots_[i] == knots_[i - 1]) ? run + 1 : 1;
    if (run > std::max(degree_, 1)) {
      throw ConfigError("knot vector: interior knot multiplicity exceeds p");
    }
  }
}

KnotVector KnotVector::open_uniform(int degree, int n_elements) {
  if (n_elements < 1) throw ConfigError("open_uniform: need at least one element");
  std::vector<double> k(static_cast<std::size_t>(degree + 1), 0.0);
  for (int e = 1; e < n_elements; ++e) k.push_back(static_cast<double>(e) / n_elements);
  k.insert(k.end(), static_cast<std::size_t>(degree + 1), 1.0);
  return KnotVector(std::move(k), degree);
}

std::vector<double> KnotVector::breakpoints() const {
  std::vector<double> b;
  for (double k : knots_) {
    if (b.empty() || k != b.back()) b.push_back(k);
  }
  return b;
}

int KnotVector::find_span(double xi) const {
  if (!(xi >= 0.0 && xi <= 1.0)) {
    throw DomainError("find_span: parameter " + std::to_string(xi) + " outside [0,1]");
  }
  const int n = num_basis();
  if (xi >= knots_[n]) return n - 1;
  // Last index i in [p, n-1] with knots[i] <= xi.
  auto first = knots_.begin() + degree_;
  auto last = knots_.begin() + n + 1;
  auto it = std::upper_bound(first, last, xi);
  return static_cast<int>(it - knots_.begin()) - 1;
}

BasisEval eval_bspline(const KnotVector& kv, double xi, int deriv_order) {
  const int p = kv.degree();
  const int span = kv.find_span(xi);
  const int nd = std::max(deriv_order, 0);

  BasisEval out;
  out.span = span;
  out.degree = p;
  out.ders.assign(static_cast<std::size_t>(nd + 1), std::vector<double>(p + 1, 0.0));

  // Triangular table of basis values (lower) and knot differences (upper).
  std::vector<std::vector<double>> ndu(p + 1, std::vector<double>(p + 1, 0.0));
  std::vector<double> left(p + 1), right(p + 1);
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = xi - kv[span + 1 - j];
    right[j] = kv[span + j] - xi;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  for (int j = 0; j <= p; ++j) out.ders[0][j] = ndu[j][p];

  const int top = std::min(nd, p);
  std::vector<std::vector<double>> a(2, std::vector<double>(p + 1, 0.0));
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= top; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = (rk >= -1) ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      out.ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = p;
  for (int k = 1; k <= top; ++k) {
    for (int j = 0; j <= p; ++j) out.ders[k][j] *= factor;
    factor *= (p - k);
  }
  return out;
}

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

}  // namespace

BasisEval eval_nurbs(const KnotVector& kv, std::span<const double> weights, double xi,
                     int deriv_order) {
  if (static_cast<int>(weights.size()) != kv.num_basis()) {
    throw ConfigError("eval_nurbs: weight count does not match basis size");
  }
  BasisEval b = eval_bspline(kv, xi, deriv_order);
  const int p = b.degree;
  const int first = b.first_index();
  const int nd = static_cast<int>(b.ders.size()) - 1;

  // Weighted derivatives A_j^(k) and weight function derivatives W^(k).
  std::vector<double> wsum(nd + 1, 0.0);
  for (int k = 0; k <= nd; ++k) {
    for (int j = 0; j <= p; ++j) {
      b.ders[k][j] *= weights[first + j];
      wsum[k] += b.ders[k][j];
    }
  }
  for (int k = 0; k <= nd; ++k) {
    for (int j = 0; j <= p; ++j) {
      double v = b.ders[k][j];
      for (int i = 1; i <= k; ++i) v -= binomial(k, i) * wsum[i] * b.ders[k - i][j];
      b.ders[k][j] = v / wsum[0];
    }
  }
  return b;
}

TensorBasis2D eval_tensor_2d(const KnotVector& ku, const KnotVector& kv,
                             std::span<const double> weights, double u, double v) {
  const BasisEval bu = eval_bspline(ku, u, 1);
  const BasisEval bv = eval_bspline(kv, v, 1);
  const int nu = ku.num_basis();
  const int pu = ku.degree(), pv = kv.degree();
  const int fu = bu.first_index(), fv = bv.first_index();
  const std::size_t count = static_cast<std::size_t>((pu + 1) * (pv + 1));

  TensorBasis2D t;
  t.indices.resize(count);
  t.values.resize(count);
  t.d_u.resize(count);
  t.d_v.resize(count);
  std::size_t a = 0;
  for (int j = 0; j <= pv; ++j) {
    for (int i = 0; i <= pu; ++i, ++a) {
      t.indices[a] = (fu + i) + nu * (fv + j);
      t.values[a] = bu.ders[0][i] * bv.ders[0][j];
      t.d_u[a] = bu.ders[1][i] * bv.ders[0][j];
      t.d_v[a] = bu.ders[0][i] * bv.ders[1][j];
    }
  }
  if (weights.empty()) return t;

  if (static_cast<int>(weights.size()) != nu * kv.num_basis()) {
    throw ConfigError("eval_tensor_2d: weight count does not match control net");
  }
  double w = 0.0, wu = 0.0, wv = 0.0;
  for (std::size_t k = 0; k < count; ++k) {
    const double wi = weights[static_cast<std::size_t>(t.indices[k])];
    t.values[k] *= wi;
    t.d_u[k] *= wi;
    t.d_v[k] *= wi;
    w += t.values[k];
    wu += t.d_u[k];
    wv += t.d_v[k];
  }
  for (std::size_t k = 0; k < count; ++k) {
    const double r = t.values[k] / w;
    t.d_u[k] = (t.d_u[k] - r * wu) / w;
    t.d_v[k] = (t.d_v[k] - r * wv) / w;
    t.values[k] = r;
  }
  return t;
}

QuadRule gauss_rule(int n_points) {
  if (n_points < 1 || n_points > 16) {
    throw ConfigError("gauss_rule: n_points must be in [1,16], got " + std::to_string(n_points));
  }
  const int n = n_points;
  QuadRule rule;
  rule.points.assign(n, 0.0);
  rule.weights.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      // Legendre recurrence: p1 = P_n(z), p2 = P_{n-1}(z).
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      dp = n * (z * p1 - p2) / (z * z - 1.0);
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    rule.points[i] = -z;
    rule.points[n - 1 - i] = z;
    rule.weights[i] = rule.weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  if (n % 2 == 1) rule.points[n / 2] = 0.0;
  return rule;
}

KnotVector insert_knot(const KnotVector& kv, std::vector<std::vector<double>>& points, double xi) {
  const int p = kv.degree();
  const int k = kv.find_span(xi);
  const int n = kv.num_basis();
  if (static_cast<int>(points.size()) != n) {
    throw ConfigError("insert_knot: control point count does not match knot vector");
  }
  const std::size_t dim = points.front().size();
  std::vector<std::vector<double>> q(static_cast<std::size_t>(n + 1), std::vector<double>(dim));
  for (int i = 0; i <= k - p; ++i) q[i] = points[i];
  for (int i = k; i < n; ++i) q[i + 1] = points[i];
  for (int i = k - p + 1; i <= k; ++i) {
    const double a = (xi - kv[i]) / (kv[i + p] - kv[i]);
    for (std::size_t d = 0; d < dim; ++d) q[i][d] = a * points[i][d] + (1.0 - a) * points[i - 1][d];
  }
  points = std::move(q);

  std::vector<double> knots(kv.knots().begin(), kv.knots().end());
  knots.insert(knots.begin() + k + 1, xi);
  return KnotVector(std::move(knots), p);
}

std::vector<double> subdivision_knots(const KnotVector& kv, int parts) {
  std::vector<double> out;
  if (parts <= 1) return out;
  const auto b = kv.breakpoints();
  for (std::size_t e = 0; e + 1 < b.size(); ++e) {
    for (int s = 1; s < parts; ++s) out.push_back(b[e] + (b[e + 1] - b[e]) * s / parts);
  }
  return out;
}

}  // namespace igapod
