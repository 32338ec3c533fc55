#include "igapod/postprocess.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "igapod/errors.hpp"

namespace igapod {

namespace {

struct LayerPatch {
  int patch;
  bool along_u;  // the circle runs along u at fixed v, or along v at fixed u
  double level;  // fixed parameter of the circle of radius r
};

Vec2 uv_of(const LayerPatch& lp, double s) { return lp.along_u ? Vec2(s, lp.level) : Vec2(lp.level, s); }

// Air-layer patches on the requested side of the sliding interface and the
// parameter line that traces radius r in each of them.
std::vector<LayerPatch> layer_for_radius(const Discretization& d, double r) {
  const MultiPatchModel& m = d.model();
  const bool rotor_side = r <= m.airgap_radius;
  std::vector<LayerPatch> out;
  for (const EdgeTag& t : m.boundary_tags) {
    if (t.tag != BoundaryTag::airgap) continue;
    const Patch& p = m.patches[static_cast<std::size_t>(t.patch)];
    if ((p.subdomain == Subdomain::rotor) != rotor_side) continue;
    LayerPatch lp{t.patch, t.edge == Edge::north || t.edge == Edge::south, 0.0};
    auto radius_at = [&](double level) {
      lp.level = level;
      const Vec2 uv = uv_of(lp, 0.5);
      return map_point(p, uv.x(), uv.y()).norm();
    };
    double lo = 0.0, hi = 1.0;
    const double r0 = radius_at(0.0), r1 = radius_at(1.0);
    if (r < std::min(r0, r1) - 1e-12 || r > std::max(r0, r1) + 1e-12) {
      throw DomainError("torque: radius " + std::to_string(r) + " not covered by the air layer");
    }
    const bool increasing = r1 > r0;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      if ((radius_at(mid) < r) == increasing) lo = mid; else hi = mid;
    }
    lp.level = 0.5 * (lo + hi);
    out.push_back(lp);
  }
  if (out.empty()) throw ConfigError("torque: model has no air-gap layer patches");
  return out;
}

}  // namespace

TorqueResult torque(const Discretization& d, const Eigen::VectorXd& u, double r, double length,
                    int n_quadrature) {
  const MultiPatchModel& m = d.model();
  if (!(r > m.airgap_inner && r < m.airgap_outer)) {
    std::ostringstream os;
    os << "torque: radius " << r << " outside the air gap (" << m.airgap_inner << ", " << m.airgap_outer << ")";
    throw DomainError(os.str());
  }
  const QuadRule rule = gauss_rule(n_quadrature);
  double integral = 0.0, sweep = 0.0;
  for (const LayerPatch& lp : layer_for_radius(d, r)) {
    const Patch& p = m.patches[static_cast<std::size_t>(lp.patch)];
    const auto bp = (lp.along_u ? p.ku : p.kv).breakpoints();
    for (std::size_t e = 0; e + 1 < bp.size(); ++e) {
      const double h = bp[e + 1] - bp[e];
      for (std::size_t q = 0; q < rule.points.size(); ++q) {
        const double s = bp[e] + 0.5 * h * (rule.points[q] + 1.0);
        const Vec2 uv = uv_of(lp, s);
        const Vec2 x = map_point(p, uv.x(), uv.y());
        const Vec2 t = jacobian(p, uv.x(), uv.y()).col(lp.along_u ? 0 : 1);
        const double rr = x.squaredNorm();
        const double dphi = (x.x() * t.y() - x.y() * t.x()) / rr * 0.5 * h * rule.weights[q];
        const Vec2 b = evaluate_field(d, u, lp.patch, uv.x(), uv.y()).b;
        const double rn = std::sqrt(rr);
        const double br = (b.x() * x.x() + b.y() * x.y()) / rn;
        const double bphi = (-b.x() * x.y() + b.y() * x.x()) / rn;
        integral += br * bphi * dphi;
        sweep += dphi;
      }
    }
  }
  if (sweep < 0.0) integral = -integral;
  const double scale = 2.0 * std::numbers::pi / std::abs(sweep);
  TorqueResult res;
  res.torque = r * r * length / kMu0 * integral * scale;
  res.radius = r;
  res.length = length;
  res.n_quadrature = n_quadrature;
  return res;
}

double torque_from_field(const std::function<Vec2(const Vec2&)>& field, double r, double length,
                         double phi0, double phi1, int segments, int n_gauss, double scale) {
  if (segments < 1) throw ConfigError("torque_from_field: need at least one segment");
  const QuadRule rule = gauss_rule(n_gauss);
  const double h = (phi1 - phi0) / segments;
  double integral = 0.0;
  for (int s = 0; s < segments; ++s) {
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double phi = phi0 + h * (s + 0.5 * (rule.points[q] + 1.0));
      const Vec2 er(std::cos(phi), std::sin(phi)), ephi(-std::sin(phi), std::cos(phi));
      const Vec2 b = field(r * er);
      integral += b.dot(er) * b.dot(ephi) * 0.5 * h * rule.weights[q];
    }
  }
  return r * r * length / kMu0 * integral * scale;
}

double seminorm_error(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const SparseMatrix& K) {
  if (u.size() != v.size() || u.size() != K.rows()) {
    throw UsageError("seminorm_error: vector and matrix dimensions differ");
  }
  const double ref = u.dot(K * u);
  if (!(ref > 0.0)) throw DomainError("seminorm_error: reference has zero energy norm");
  const Eigen::VectorXd e = u - v;
  return std::sqrt(std::max(0.0, e.dot(K * e)) / ref);
}

std::vector<FieldRow> sample_field(const Discretization& d, const Eigen::VectorXd& u, int res_u, int res_v) {
  if (res_u < 1 || res_v < 1) throw ConfigError("sample_field: resolution must be at least 1");
  auto grid = [](int i, int n) { return n == 1 ? 0.5 : static_cast<double>(i) / (n - 1); };
  std::vector<FieldRow> rows;
  for (std::size_t p = 0; p < d.model().patches.size(); ++p) {
    for (int j = 0; j < res_v; ++j) {
      for (int i = 0; i < res_u; ++i) {
        const double s = grid(i, res_u), t = grid(j, res_v);
        const Vec2 x = map_point(d.model().patches[p], s, t);
        const FieldValue f = evaluate_field(d, u, static_cast<int>(p), s, t);
        rows.push_back({x.x(), x.y(), f.a_z, f.b.x(), f.b.y(), std::hypot(f.b.x(), f.b.y())});
      }
    }
  }
  return rows;
}

void export_field(const Discretization& d, const Eigen::VectorXd& u, int res_u, int res_v,
                  const std::string& path, ExportFormat format) {
  const auto rows = sample_field(d, u, res_u, res_v);
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  if (format == ExportFormat::csv) {
    std::fprintf(f, "x,y,A_z,B_x,B_y,B_mag\n");
    for (const FieldRow& r : rows) {
      std::fprintf(f, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.x, r.y, r.a_z, r.b_x, r.b_y, r.b_mag);
    }
  } else {
    // Curved patches: one quad cell per grid square, so the grid is unstructured.
    const std::size_t np = d.model().patches.size();
    std::fprintf(f, "# vtk DataFile Version 3.0\nfield samples\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    std::fprintf(f, "POINTS %zu double\n", rows.size());
    for (const FieldRow& r : rows) std::fprintf(f, "%.17g %.17g 0\n", r.x, r.y);
    const std::size_t cells = res_u > 1 && res_v > 1 ? np * static_cast<std::size_t>((res_u - 1) * (res_v - 1)) : 0;
    std::fprintf(f, "CELLS %zu %zu\n", cells, cells * 5);
    for (std::size_t p = 0; cells > 0 && p < np; ++p) {
      const std::size_t base = p * static_cast<std::size_t>(res_u * res_v);
      for (int j = 0; j + 1 < res_v; ++j) {
        for (int i = 0; i + 1 < res_u; ++i) {
          const std::size_t a = base + static_cast<std::size_t>(i + res_u * j);
          std::fprintf(f, "4 %zu %zu %zu %zu\n", a, a + 1, a + 1 + static_cast<std::size_t>(res_u),
                       a + static_cast<std::size_t>(res_u));
        }
      }
    }
    std::fprintf(f, "CELL_TYPES %zu\n", cells);
    for (std::size_t c = 0; c < cells; ++c) std::fprintf(f, "9\n");
    std::fprintf(f, "POINT_DATA %zu\nSCALARS A_z double 1\nLOOKUP_TABLE default\n", rows.size());
    for (const FieldRow& r : rows) std::fprintf(f, "%.17g\n", r.a_z);
    std::fprintf(f, "VECTORS B double\n");
    for (const FieldRow& r : rows) std::fprintf(f, "%.17g %.17g 0\n", r.b_x, r.b_y);
  }
  if (std::fclose(f) != 0) throw IoError("error while writing '" + path + "'");
}

std::vector<FieldRow> import_field_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "x,y,A_z,B_x,B_y,B_mag") {
    throw IoError("'" + path + "' is not a field CSV file");
  }
  std::vector<FieldRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    FieldRow r{};
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf", &r.x, &r.y, &r.a_z, &r.b_x, &r.b_y, &r.b_mag) != 6) {
      throw IoError("malformed row in '" + path + "': " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace igapod
