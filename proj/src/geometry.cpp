#include "igapod/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

#include "igapod/errors.hpp"

namespace igapod {

const char* to_string(MaterialTag t) {
  switch (t) {
    case MaterialTag::iron: return "iron";
    case MaterialTag::air: return "air";
    case MaterialTag::magnet: return "magnet";
    case MaterialTag::coil: return "coil";
  }
  return "?";
}

const char* to_string(Subdomain s) { return s == Subdomain::rotor ? "rotor" : "stator"; }

const char* to_string(Edge e) {
  switch (e) {
    case Edge::south: return "south";
    case Edge::east: return "east";
    case Edge::north: return "north";
    case Edge::west: return "west";
  }
  return "?";
}

const char* to_string(BoundaryTag t) {
  switch (t) {
    case BoundaryTag::dirichlet: return "dirichlet";
    case BoundaryTag::antiperiodic_master: return "antiperiodic_master";
    case BoundaryTag::antiperiodic_slave: return "antiperiodic_slave";
    case BoundaryTag::airgap: return "airgap";
    case BoundaryTag::natural: return "natural";
  }
  return "?";
}

void Patch::check_dimensions() const {
  const std::size_t n = static_cast<std::size_t>(n_u() * n_v());
  if (control_points.size() != n || weights.size() != n) {
    throw ConfigError("patch '" + name + "': control net size does not match knot vectors");
  }
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("patch '" + name + "': weights must be positive");
  }
}

std::vector<int> Patch::edge_indices(Edge e) const {
  std::vector<int> idx;
  switch (e) {
    case Edge::south:
      for (int i = 0; i < n_u(); ++i) idx.push_back(index(i, 0));
      break;
    case Edge::north:
      for (int i = 0; i < n_u(); ++i) idx.push_back(index(i, n_v() - 1));
      break;
    case Edge::west:
      for (int j = 0; j < n_v(); ++j) idx.push_back(index(0, j));
      break;
    case Edge::east:
      for (int j = 0; j < n_v(); ++j) idx.push_back(index(n_u() - 1, j));
      break;
  }
  return idx;
}

const KnotVector& Patch::edge_knots(Edge e) const {
  return (e == Edge::south || e == Edge::north) ? ku : kv;
}

Vec2 map_point(const Patch& patch, double u, double v) {
  const TensorBasis2D t = eval_tensor_2d(patch.ku, patch.kv, patch.weights, u, v);
  Vec2 x = Vec2::Zero();
  for (std::size_t a = 0; a < t.size(); ++a) {
    x += t.values[a] * patch.control_points[static_cast<std::size_t>(t.indices[a])];
  }
  return x;
}

Mat2 jacobian(const Patch& patch, double u, double v) {
  const TensorBasis2D t = eval_tensor_2d(patch.ku, patch.kv, patch.weights, u, v);
  Mat2 j = Mat2::Zero();
  for (std::size_t a = 0; a < t.size(); ++a) {
    const Vec2& p = patch.control_points[static_cast<std::size_t>(t.indices[a])];
    j.col(0) += t.d_u[a] * p;
    j.col(1) += t.d_v[a] * p;
  }
  return j;
}

std::optional<Vec2> inverse_map(const Patch& patch, const Vec2& x, double tol) {
  // Bounding box of the control net contains the patch (convex hull property).
  Vec2 lo = patch.control_points.front(), hi = lo;
  for (const Vec2& p : patch.control_points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double scale = std::max((hi - lo).norm(), 1e-300);
  const double slack = 1e-9 * scale;
  if ((x.array() < lo.array() - slack).any() || (x.array() > hi.array() + slack).any()) {
    return std::nullopt;
  }

  constexpr int kGrid = 8;
  Vec2 xi(0.5, 0.5);
  double best = std::numeric_limits<double>::infinity();
  for (int b = 0; b <= kGrid; ++b) {
    for (int a = 0; a <= kGrid; ++a) {
      const Vec2 s(static_cast<double>(a) / kGrid, static_cast<double>(b) / kGrid);
      const double d = (map_point(patch, s.x(), s.y()) - x).squaredNorm();
      if (d < best) {
        best = d;
        xi = s;
      }
    }
  }

  for (int it = 0; it < 60; ++it) {
    const Vec2 r = map_point(patch, xi.x(), xi.y()) - x;
    if (r.norm() <= tol * scale) break;
    const Mat2 j = jacobian(patch, xi.x(), xi.y());
    if (std::abs(j.determinant()) < 1e-300) return std::nullopt;
    Vec2 step = j.fullPivLu().solve(r);
    double damping = 1.0;
    Vec2 trial = (xi - step).cwiseMax(0.0).cwiseMin(1.0);
    while (damping > 1e-4 &&
           (map_point(patch, trial.x(), trial.y()) - x).norm() > r.norm()) {
      damping *= 0.5;
      trial = (xi - damping * step).cwiseMax(0.0).cwiseMin(1.0);
    }
    if ((trial - xi).norm() < 1e-16) {
      xi = trial;
      break;
    }
    xi = trial;
  }
  if ((map_point(patch, xi.x(), xi.y()) - x).norm() > 1e-8 * scale) return std::nullopt;
  return xi;
}

std::optional<BoundaryTag> MultiPatchModel::tag_of(int patch, Edge e) const {
  for (const EdgeTag& t : boundary_tags) {
    if (t.patch == patch && t.edge == e) return t.tag;
  }
  return std::nullopt;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  os << (ok ? "PASS" : "FAIL") << " (min det J = " << min_det_jacobian << ", " << issues.size()
     << " issue(s))";
  for (const ValidationIssue& i : issues) {
    os << "\n  [" << i.kind << "] " << i.location << ": " << i.message;
  }
  return os.str();
}

namespace {

std::string edge_name(const MultiPatchModel& m, int patch, Edge e) {
  std::ostringstream os;
  os << "patch " << patch;
  if (!m.patches[static_cast<std::size_t>(patch)].name.empty()) {
    os << " (" << m.patches[static_cast<std::size_t>(patch)].name << ")";
  }
  os << " edge " << to_string(e);
  return os.str();
}

bool edges_match(const Patch& a, Edge ea, const Patch& b, Edge eb, bool reversed, double tol,
                 std::string& why) {
  const KnotVector& ka = a.edge_knots(ea);
  const KnotVector& kb = b.edge_knots(eb);
  if (ka.degree() != kb.degree() || ka.size() != kb.size()) {
    why = "knot vectors differ";
    return false;
  }
  for (int i = 0; i < ka.size(); ++i) {
    const double other = reversed ? 1.0 - kb[kb.size() - 1 - i] : kb[i];
    if (std::abs(ka[i] - other) > 1e-12) {
      why = "knot vectors differ";
      return false;
    }
  }
  auto ia = a.edge_indices(ea);
  auto ib = b.edge_indices(eb);
  if (reversed) std::reverse(ib.begin(), ib.end());
  for (std::size_t k = 0; k < ia.size(); ++k) {
    const Vec2& pa = a.control_points[static_cast<std::size_t>(ia[k])];
    const Vec2& pb = b.control_points[static_cast<std::size_t>(ib[k])];
    const double wa = a.weights[static_cast<std::size_t>(ia[k])];
    const double wb = b.weights[static_cast<std::size_t>(ib[k])];
    if ((pa - pb).norm() > tol || std::abs(wa - wb) > 1e-12 * std::max(wa, wb)) {
      why = "control points or weights do not coincide";
      return false;
    }
  }
  return true;
}

}  // namespace

ValidationReport validate_geometry(const MultiPatchModel& model, int quad_points) {
  ValidationReport rep;
  rep.min_det_jacobian = std::numeric_limits<double>::infinity();

  double scale = 0.0;
  for (const Patch& p : model.patches) {
    for (const Vec2& c : p.control_points) scale = std::max(scale, c.norm());
  }
  const double tol = 1e-12 * std::max(scale, 1.0);

  for (std::size_t pi = 0; pi < model.patches.size(); ++pi) {
    const Patch& patch = model.patches[pi];
    try {
      patch.check_dimensions();
    } catch (const std::exception& e) {
      rep.issues.push_back({"dimensions", "patch " + std::to_string(pi), e.what()});
      continue;
    }
    const int nq_u = quad_points > 0 ? quad_points : patch.ku.degree() + 1;
    const int nq_v = quad_points > 0 ? quad_points : patch.kv.degree() + 1;
    const QuadRule qu = gauss_rule(nq_u), qv = gauss_rule(nq_v);
    const auto bu = patch.ku.breakpoints(), bv = patch.kv.breakpoints();
    bool reported = false;
    for (std::size_t ev = 0; ev + 1 < bv.size(); ++ev) {
      for (std::size_t eu = 0; eu + 1 < bu.size(); ++eu) {
        for (double gv : qv.points) {
          for (double gu : qu.points) {
            const double u = 0.5 * (bu[eu] + bu[eu + 1]) + 0.5 * (bu[eu + 1] - bu[eu]) * gu;
            const double v = 0.5 * (bv[ev] + bv[ev + 1]) + 0.5 * (bv[ev + 1] - bv[ev]) * gv;
            const double det = jacobian(patch, u, v).determinant();
            rep.min_det_jacobian = std::min(rep.min_det_jacobian, det);
            if (!(det > 0.0) && !reported) {
              std::ostringstream loc;
              loc << "patch " << pi << " (" << patch.name << ") at xi=(" << u << ", " << v << ")";
              rep.issues.push_back({"jacobian", loc.str(),
                                    "non-positive Jacobian determinant " + std::to_string(det)});
              reported = true;
            }
          }
        }
      }
    }
  }

  // Each edge must be covered exactly once by an interface, periodic link or tag.
  std::vector<std::array<int, 4>> cover(model.patches.size(), std::array<int, 4>{0, 0, 0, 0});
  auto touch = [&](int p, Edge e) {
    if (p >= 0 && static_cast<std::size_t>(p) < cover.size()) ++cover[p][static_cast<int>(e)];
  };
  for (const Interface& itf : model.interfaces) {
    touch(itf.patch_a, itf.edge_a);
    touch(itf.patch_b, itf.edge_b);
    const Patch& a = model.patches[static_cast<std::size_t>(itf.patch_a)];
    const Patch& b = model.patches[static_cast<std::size_t>(itf.patch_b)];
    std::string why;
    if (a.subdomain != b.subdomain) {
      rep.issues.push_back({"interface", edge_name(model, itf.patch_a, itf.edge_a),
                            "conforming interface crosses rotor/stator"});
    } else if (!edges_match(a, itf.edge_a, b, itf.edge_b, itf.reversed, tol, why)) {
      rep.issues.push_back({"interface",
                            edge_name(model, itf.patch_a, itf.edge_a) + " / " +
                                edge_name(model, itf.patch_b, itf.edge_b),
                            why});
    }
  }
  for (const EdgeTag& t : model.boundary_tags) touch(t.patch, t.edge);

  for (const PeriodicLink& l : model.periodic_links) {
    const auto tm = model.tag_of(l.master_patch, l.master_edge);
    const auto ts = model.tag_of(l.slave_patch, l.slave_edge);
    if (tm != BoundaryTag::antiperiodic_master || ts != BoundaryTag::antiperiodic_slave) {
      rep.issues.push_back({"tag", edge_name(model, l.master_patch, l.master_edge),
                            "periodic link without matching master/slave tags"});
    }
    const Patch& a = model.patches[static_cast<std::size_t>(l.master_patch)];
    const Patch& b = model.patches[static_cast<std::size_t>(l.slave_patch)];
    if (a.edge_indices(l.master_edge).size() != b.edge_indices(l.slave_edge).size()) {
      rep.issues.push_back({"interface", edge_name(model, l.master_patch, l.master_edge),
                            "periodic edges have different numbers of control points"});
    }
  }
  for (std::size_t p = 0; p < model.patches.size(); ++p) {
    for (int e = 0; e < 4; ++e) {
      const int c = cover[p][e];
      if (c == 0) {
        rep.issues.push_back({"tag", edge_name(model, static_cast<int>(p), static_cast<Edge>(e)),
                              "exterior edge carries no boundary tag"});
      } else if (c > 1) {
        rep.issues.push_back({"tag", edge_name(model, static_cast<int>(p), static_cast<Edge>(e)),
                              "edge tagged or matched more than once"});
      }
    }
  }
  rep.ok = rep.issues.empty();
  return rep;
}

Patch refine_patch(const Patch& patch, int parts_u, int parts_v) {
  Patch out = patch;
  const int nu = patch.n_u(), nv = patch.n_v();

  auto homog = [](const Vec2& p, double w) { return std::vector<double>{p.x() * w, p.y() * w, w}; };

  // u direction: refine every row.
  const auto new_u = subdivision_knots(patch.ku, parts_u);
  std::vector<std::vector<std::vector<double>>> rows(static_cast<std::size_t>(nv));
  KnotVector ku = patch.ku;
  for (int j = 0; j < nv; ++j) {
    auto& row = rows[static_cast<std::size_t>(j)];
    for (int i = 0; i < nu; ++i) {
      const std::size_t k = static_cast<std::size_t>(patch.index(i, j));
      row.push_back(homog(patch.control_points[k], patch.weights[k]));
    }
    KnotVector kk = patch.ku;
    for (double x : new_u) kk = insert_knot(kk, row, x);
    ku = kk;
  }
  const int nu2 = ku.num_basis();

  // v direction: refine every column of the u-refined net.
  const auto new_v = subdivision_knots(patch.kv, parts_v);
  KnotVector kv = patch.kv;
  std::vector<std::vector<std::vector<double>>> cols(static_cast<std::size_t>(nu2));
  for (int i = 0; i < nu2; ++i) {
    auto& col = cols[static_cast<std::size_t>(i)];
    for (int j = 0; j < nv; ++j) col.push_back(rows[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
    KnotVector kk = patch.kv;
    for (double x : new_v) kk = insert_knot(kk, col, x);
    kv = kk;
  }
  const int nv2 = kv.num_basis();

  out.ku = ku;
  out.kv = kv;
  out.control_points.assign(static_cast<std::size_t>(nu2 * nv2), Vec2::Zero());
  out.weights.assign(static_cast<std::size_t>(nu2 * nv2), 1.0);
  for (int j = 0; j < nv2; ++j) {
    for (int i = 0; i < nu2; ++i) {
      const auto& h = cols[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const std::size_t k = static_cast<std::size_t>(i + nu2 * j);
      out.weights[k] = h[2];
      out.control_points[k] = Vec2(h[0] / h[2], h[1] / h[2]);
    }
  }
  return out;
}

MultiPatchModel refine(const MultiPatchModel& model, int levels) {
  if (levels < 0) throw ConfigError("refine: levels must be non-negative");
  MultiPatchModel out = model;
  for (int l = 0; l < levels; ++l) {
    for (Patch& p : out.patches) p = refine_patch(p, 2, 2);
  }
  return out;
}

void rotate_patch(Patch& patch, double angle) {
  const Eigen::Rotation2Dd rot(angle);
  for (Vec2& p : patch.control_points) p = rot * p;
}

nlohmann::json geometry_to_json(const MultiPatchModel& model) {
  using nlohmann::json;
  json j;
  j["format"] = "igapod-geometry";
  j["version"] = 1;
  j["pole_pairs"] = model.pole_pairs;
  j["sector_angle_rad"] = model.sector_angle;
  j["rotor_angle_rad"] = model.rotor_angle;
  j["airgap"] = {{"inner_radius", model.airgap_inner},
                 {"interface_radius", model.airgap_radius},
                 {"outer_radius", model.airgap_outer}};
  json patches = json::array();
  for (const Patch& p : model.patches) {
    json jp;
    jp["name"] = p.name;
    jp["material"] = to_string(p.material);
    jp["subdomain"] = to_string(p.subdomain);
    if (p.source_slot >= 0) jp["source_slot"] = p.source_slot;
    jp["degree"] = {p.ku.degree(), p.kv.degree()};
    jp["knots_u"] = std::vector<double>(p.ku.knots().begin(), p.ku.knots().end());
    jp["knots_v"] = std::vector<double>(p.kv.knots().begin(), p.kv.knots().end());
    jp["n"] = {p.n_u(), p.n_v()};
    jp["weights"] = p.weights;
    json cps = json::array();
    for (const Vec2& c : p.control_points) cps.push_back({c.x(), c.y()});
    jp["control_points"] = cps;
    patches.push_back(jp);
  }
  j["patches"] = patches;
  json itfs = json::array();
  for (const Interface& i : model.interfaces) {
    itfs.push_back({{"patch_a", i.patch_a},
                    {"edge_a", to_string(i.edge_a)},
                    {"patch_b", i.patch_b},
                    {"edge_b", to_string(i.edge_b)},
                    {"reversed", i.reversed}});
  }
  j["interfaces"] = itfs;
  json links = json::array();
  for (const PeriodicLink& l : model.periodic_links) {
    links.push_back({{"master_patch", l.master_patch},
                     {"master_edge", to_string(l.master_edge)},
                     {"slave_patch", l.slave_patch},
                     {"slave_edge", to_string(l.slave_edge)},
                     {"reversed", l.reversed}});
  }
  j["periodic_links"] = links;
  json tags = json::array();
  for (const EdgeTag& t : model.boundary_tags) {
    tags.push_back({{"patch", t.patch}, {"edge", to_string(t.edge)}, {"tag", to_string(t.tag)}});
  }
  j["boundary_tags"] = tags;
  return j;
}

Patch rectangle_patch(const Vec2& lo, const Vec2& hi, int degree, int n_el_u, int n_el_v) {
  Patch p{KnotVector::open_uniform(degree, n_el_u), KnotVector::open_uniform(degree, n_el_v), {}, {}, MaterialTag::iron, Subdomain::rotor, ""};
  // Greville abscissae reproduce the identity map for any degree.
  auto greville = [](const KnotVector& k, int i) {
    double s = 0.0;
    for (int j = 1; j <= k.degree(); ++j) s += k[i + j];
    return k.degree() == 0 ? 0.5 * (k[i] + k[i + 1]) : s / k.degree();
  };
  for (int j = 0; j < p.n_v(); ++j) {
    for (int i = 0; i < p.n_u(); ++i) {
      const double gu = greville(p.ku, i), gv = greville(p.kv, j);
      p.control_points.emplace_back(lo.x() + (hi.x() - lo.x()) * gu, lo.y() + (hi.y() - lo.y()) * gv);
      p.weights.push_back(1.0);
    }
  }
  return p;
}

Patch annulus_patch(double r_in, double r_out, double theta0, double theta1, int n_el_u, int n_el_v) {
  const double half = 0.5 * (theta1 - theta0);
  const double w = std::cos(half);
  const double mid = 0.5 * (theta0 + theta1);
  Patch p{KnotVector({0, 0, 0, 1, 1, 1}, 2), KnotVector({0, 0, 0, 1, 1, 1}, 2), {}, {}, MaterialTag::iron, Subdomain::rotor, ""};
  p.control_points.resize(9);
  p.weights.resize(9);
  const double radii[3] = {r_in, 0.5 * (r_in + r_out), r_out};
  for (int i = 0; i < 3; ++i) {
    const double r = radii[i];
    p.control_points[static_cast<std::size_t>(p.index(i, 0))] = {r * std::cos(theta0), r * std::sin(theta0)};
    p.control_points[static_cast<std::size_t>(p.index(i, 1))] = {r / w * std::cos(mid), r / w * std::sin(mid)};
    p.control_points[static_cast<std::size_t>(p.index(i, 2))] = {r * std::cos(theta1), r * std::sin(theta1)};
    p.weights[static_cast<std::size_t>(p.index(i, 0))] = 1.0;
    p.weights[static_cast<std::size_t>(p.index(i, 1))] = w;
    p.weights[static_cast<std::size_t>(p.index(i, 2))] = 1.0;
  }
  return refine_patch(p, n_el_u, n_el_v);
}

}  // namespace igapod
