#include "igapod/machine.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "igapod/errors.hpp"

namespace igapod {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Vec2 polar(double r, double angle_deg) {
  return {r * std::cos(angle_deg * kDeg), r * std::sin(angle_deg * kDeg)};
}

// Rational quadratic curve with weights (1, w, 1).
struct Conic {
  Vec2 p0, p1, p2;
  double w;
};

Conic arc(double r, double from_deg, double to_deg) {
  const double half = 0.5 * (to_deg - from_deg) * kDeg;
  const double w = std::cos(half);
  return {polar(r, from_deg), polar(r / w, 0.5 * (from_deg + to_deg)), polar(r, to_deg), w};
}

Conic segment(const Vec2& a, const Vec2& b, double w) { return {a, 0.5 * (a + b), b, w}; }

// Ruled patch between two conics sharing the same weight: x = (1-v) bottom(u) + v top(u).
Patch ruled_patch(const Conic& bottom, const Conic& top, MaterialTag mat, Subdomain sub,
                  std::string name) {
  Patch p{KnotVector({0, 0, 0, 1, 1, 1}, 2), KnotVector({0, 0, 0, 1, 1, 1}, 2), {}, {}, mat, sub,
          std::move(name)};
  const Conic mid{0.5 * (bottom.p0 + top.p0), 0.5 * (bottom.p1 + top.p1), 0.5 * (bottom.p2 + top.p2),
                  bottom.w};
  for (const Conic* c : {&bottom, &mid, &top}) {
    p.control_points.insert(p.control_points.end(), {c->p0, c->p1, c->p2});
    p.weights.insert(p.weights.end(), {1.0, c->w, 1.0});
  }
  return p;
}

void require(bool ok, const std::string& constraint, const std::string& detail) {
  if (!ok) throw ParameterError("infeasible geometry: constraint '" + constraint + "' violated (" + detail + ")");
}

std::string mm(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v * 1e3 << " mm";
  return os.str();
}

// Element counts along u for a row of patches and along v for a column.
struct Grid {
  std::vector<int> cols;
  std::vector<int> rows;
};

void add_block(MultiPatchModel& m, const std::vector<Patch>& patches, const Grid& grid,
               std::size_t n_rows, std::size_t n_cols) {
  const int base = static_cast<int>(m.patches.size());
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      const Patch& coarse = patches[r * n_cols + c];
      m.patches.push_back(refine_patch(coarse, grid.cols[c], grid.rows[r]));
    }
  }
  auto id = [&](std::size_t r, std::size_t c) { return base + static_cast<int>(r * n_cols + c); };
  for (std::size_t r = 0; r < n_rows; ++r) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (c + 1 < n_cols) m.interfaces.push_back({id(r, c), Edge::east, id(r, c + 1), Edge::west});
      if (r + 1 < n_rows) m.interfaces.push_back({id(r, c), Edge::north, id(r + 1, c), Edge::south});
    }
  }
  // Cuts: the east side of the last column sits at the sector start (master).
  for (std::size_t r = 0; r < n_rows; ++r) {
    m.boundary_tags.push_back({id(r, n_cols - 1), Edge::east, BoundaryTag::antiperiodic_master});
    m.boundary_tags.push_back({id(r, 0), Edge::west, BoundaryTag::antiperiodic_slave});
    m.periodic_links.push_back({id(r, n_cols - 1), Edge::east, id(r, 0), Edge::west, false});
  }
}

}  // namespace

ParamVector ParamRanges::midpoint() const {
  std::array<double, 4> m{};
  for (int i = 0; i < 4; ++i) m[i] = 0.5 * (lower[i] + upper[i]);
  return ParamVector::from_array(m);
}

bool ParamRanges::contains(const ParamVector& p, double rel_tol) const {
  const auto a = p.to_array();
  for (int i = 0; i < 4; ++i) {
    const double slack = rel_tol * (upper[i] - lower[i]);
    if (a[i] < lower[i] - slack || a[i] > upper[i] + slack) return false;
  }
  return true;
}

ParamVector ParamRanges::map_unit(const std::array<double, 4>& unit) const {
  std::array<double, 4> out{};
  for (int i = 0; i < 4; ++i) out[i] = lower[i] + (upper[i] - lower[i]) * unit[i];
  return ParamVector::from_array(out);
}

void ParamRanges::check() const {
  for (int i = 0; i < 4; ++i) {
    if (!(lower[i] < upper[i])) throw ConfigError("parameter ranges: min must be below max");
  }
}

void check_feasibility(const ParamVector& p, const MachineDesign& d) {
  require(p.mh > 0.0 && p.mw > 0.0 && p.mag > 0.0, "positive magnet dimensions",
          "MAG, MH and MW must be positive");
  const double hw = 0.5 * p.mw;
  const double y_top = d.rotor_radius - p.mag;
  const double y_bot = y_top - p.mh;
  const double r_top = std::hypot(hw, y_top);
  require(r_top <= d.rotor_radius - d.margin, "magnet below rotor surface",
          "outer magnet corner at radius " + mm(r_top) + ", limit " + mm(d.rotor_radius - d.margin));
  require(y_bot >= d.shaft_radius + d.margin, "magnet above shaft",
          "inner magnet edge at " + mm(y_bot) + ", limit " + mm(d.shaft_radius + d.margin));
  const double half_sector = 90.0 / d.pole_pairs;
  for (double y : {y_bot, y_top}) {
    const double corner_angle = std::atan2(hw, y) / kDeg;
    const double dist = std::hypot(hw, y) * std::sin((half_sector - corner_angle) * kDeg);
    require(dist >= d.margin, "magnet inside pole pitch",
            "corner " + mm(dist) + " from the sector cut, limit " + mm(d.margin));
  }
  require(d.slot_opening > 0.0 && d.slot_opening <= 1.0, "slot opening", "slot_opening must lie in (0, 1]");
  require(d.column_split_deg < half_sector, "column split inside sector",
          "column split angle must be below half the pole pitch");
}

Patch elevate_bezier_patch(const Patch& patch, int degree) {
  const int p = patch.ku.degree();
  if (patch.kv.degree() != p || patch.ku.num_elements() != 1 || patch.kv.num_elements() != 1) {
    throw ConfigError("elevate_bezier_patch: expects a single-element patch of equal degrees");
  }
  if (degree < p) throw ConfigError("elevate_bezier_patch: cannot lower the degree");

  // Homogeneous control net, u fastest.
  int n = p + 1;
  std::vector<Eigen::Vector3d> h(static_cast<std::size_t>(n * n));
  for (std::size_t k = 0; k < h.size(); ++k) {
    const double w = patch.weights[k];
    h[k] = {patch.control_points[k].x() * w, patch.control_points[k].y() * w, w};
  }
  for (int q = p; q < degree; ++q) {
    const int m = q + 2;  // points after raising degree q -> q+1
    // along u
    std::vector<Eigen::Vector3d> hu(static_cast<std::size_t>(m * n));
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < m; ++i) {
        const double a = static_cast<double>(i) / (q + 1);
        Eigen::Vector3d v = Eigen::Vector3d::Zero();
        if (i > 0) v += a * h[static_cast<std::size_t>(i - 1 + n * j)];
        if (i < n) v += (1.0 - a) * h[static_cast<std::size_t>(i + n * j)];
        hu[static_cast<std::size_t>(i + m * j)] = v;
      }
    }
    // along v
    std::vector<Eigen::Vector3d> hv(static_cast<std::size_t>(m * m));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        const double a = static_cast<double>(j) / (q + 1);
        Eigen::Vector3d v = Eigen::Vector3d::Zero();
        if (j > 0) v += a * hu[static_cast<std::size_t>(i + m * (j - 1))];
        if (j < n) v += (1.0 - a) * hu[static_cast<std::size_t>(i + m * j)];
        hv[static_cast<std::size_t>(i + m * j)] = v;
      }
    }
    h = std::move(hv);
    n = m;
  }
  Patch out = patch;
  out.ku = KnotVector::open_uniform(degree, 1);
  out.kv = KnotVector::open_uniform(degree, 1);
  out.control_points.resize(h.size());
  out.weights.resize(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    out.weights[k] = h[k].z();
    out.control_points[k] = h[k].head<2>() / h[k].z();
  }
  return out;
}

MultiPatchModel build_machine_geometry(const ParamVector& p, const MachineDesign& d) {
  check_feasibility(p, d);
  const int L = d.mesh.level;
  if (L < 1) throw ConfigError("mesh level must be at least 1");
  if (d.mesh.degree < 2) throw ConfigError("machine geometry needs degree >= 2 for exact arcs");

  MultiPatchModel m;
  m.pole_pairs = d.pole_pairs;
  m.sector_angle = std::numbers::pi / d.pole_pairs;
  m.rotor_angle = p.alpha_deg * kDeg;
  m.airgap_inner = d.rotor_radius;
  m.airgap_radius = d.airgap_interface_radius;
  m.airgap_outer = d.stator_bore_radius;

  // Local frame: pole axis along +y, sector spans [90 - h, 90 + h] degrees,
  // u runs left to right (decreasing angle), v outward.
  const double h = 90.0 / d.pole_pairs;
  const double left = 90.0 + h, right = 90.0 - h;
  const double split_l = 90.0 + d.column_split_deg, split_r = 90.0 - d.column_split_deg;
  const double w_side = std::cos(0.5 * (h - d.column_split_deg) * kDeg);
  const double w_mid = std::cos(d.column_split_deg * kDeg);

  const double hw = 0.5 * p.mw;
  const double y_top = d.rotor_radius - p.mag;
  const double y_bot = y_top - p.mh;
  const Vec2 m_bl(-hw, y_bot), m_br(hw, y_bot), m_tl(-hw, y_top), m_tr(hw, y_top);
  const Vec2 c1l = polar(m_bl.norm(), left), c2l = polar(m_tl.norm(), left);
  const Vec2 c1r = polar(m_br.norm(), right), c2r = polar(m_tr.norm(), right);

  const double r_sh = d.shaft_radius, r_ro = d.rotor_radius, r_ag = d.airgap_interface_radius;
  using MT = MaterialTag;
  const Subdomain rt = Subdomain::rotor;
  std::vector<Patch> rotor = {
      ruled_patch(arc(r_sh, left, split_l), segment(c1l, m_bl, w_side), MT::iron, rt, "rotor_yoke_l"),
      ruled_patch(arc(r_sh, split_l, split_r), segment(m_bl, m_br, w_mid), MT::iron, rt, "rotor_yoke_c"),
      ruled_patch(arc(r_sh, split_r, right), segment(m_br, c1r, w_side), MT::iron, rt, "rotor_yoke_r"),
      ruled_patch(segment(c1l, m_bl, w_side), segment(c2l, m_tl, w_side), MT::air, rt, "pocket_l"),
      ruled_patch(segment(m_bl, m_br, w_mid), segment(m_tl, m_tr, w_mid), MT::magnet, rt, "magnet"),
      ruled_patch(segment(m_br, c1r, w_side), segment(m_tr, c2r, w_side), MT::air, rt, "pocket_r"),
      ruled_patch(segment(c2l, m_tl, w_side), arc(r_ro, left, split_l), MT::air, rt, "barrier_l"),
      ruled_patch(segment(m_tl, m_tr, w_mid), arc(r_ro, split_l, split_r), MT::iron, rt, "pole_shoe_c"),
      ruled_patch(segment(m_tr, c2r, w_side), arc(r_ro, split_r, right), MT::air, rt, "barrier_r"),
      ruled_patch(arc(r_ro, left, split_l), arc(r_ag, left, split_l), MT::air, rt, "rotor_gap_l"),
      ruled_patch(arc(r_ro, split_l, split_r), arc(r_ag, split_l, split_r), MT::air, rt, "rotor_gap_c"),
      ruled_patch(arc(r_ro, split_r, right), arc(r_ag, split_r, right), MT::air, rt, "rotor_gap_r"),
  };
  const Grid rotor_grid{{3 * L, 6 * L, 3 * L}, {2 * L, 2 * L, 2 * L, L}};

  // Stator: seven columns (half tooth, slot, tooth, slot, tooth, slot, half tooth).
  const double pitch = 2.0 * h / 6.0;  // slot pitch is a third of the pole pitch; slot = tooth width
  std::vector<double> cuts{left};
  cuts.push_back(left - 0.5 * pitch);
  for (int k = 0; k < 5; ++k) cuts.push_back(cuts.back() - pitch);
  cuts.push_back(right);
  // Bore-side cuts: slots narrow to slot_opening of their width, teeth widen into tips.
  std::vector<double> bore = cuts;
  for (int c = 1; c < 7; c += 2) {
    const double mid = 0.5 * (cuts[c] + cuts[c + 1]), half = 0.5 * d.slot_opening * (cuts[c] - cuts[c + 1]);
    bore[c] = mid + half;
    bore[c + 1] = mid - half;
  }
  const Subdomain st = Subdomain::stator;
  const double r_bo = d.stator_bore_radius, r_sb = d.slot_bottom_radius, r_so = d.stator_outer_radius;
  std::vector<Patch> stator;
  for (int c = 0; c < 7; ++c) {
    stator.push_back(ruled_patch(arc(r_ag, bore[c], bore[c + 1]), arc(r_bo, bore[c], bore[c + 1]),
                                 MT::air, st, "stator_gap_" + std::to_string(c)));
  }
  for (int c = 0; c < 7; ++c) {
    const bool slot = (c % 2 == 1);
    Patch pt = ruled_patch(arc(r_bo, bore[c], bore[c + 1]), arc(r_sb, cuts[c], cuts[c + 1]),
                           slot ? MT::coil : MT::iron, st,
                           (slot ? "slot_" : "tooth_") + std::to_string(c));
    // Slots are numbered by increasing global angle: column 5 -> 0, 3 -> 1, 1 -> 2.
    if (slot) pt.source_slot = (5 - c) / 2;
    stator.push_back(std::move(pt));
  }
  for (int c = 0; c < 7; ++c) {
    stator.push_back(ruled_patch(arc(r_sb, cuts[c], cuts[c + 1]), arc(r_so, cuts[c], cuts[c + 1]),
                                 MT::iron, st, "stator_yoke_" + std::to_string(c)));
  }
  const Grid stator_grid{{2 * L, L, 4 * L, L, 4 * L, L, 2 * L}, {L, 3 * L, 2 * L}};

  if (d.mesh.degree > 2) {
    for (Patch& pt : rotor) pt = elevate_bezier_patch(pt, d.mesh.degree);
    for (Patch& pt : stator) pt = elevate_bezier_patch(pt, d.mesh.degree);
  }

  add_block(m, rotor, rotor_grid, 4, 3);
  for (int c = 0; c < 3; ++c) {
    m.boundary_tags.push_back({c, Edge::south, BoundaryTag::dirichlet});
    m.boundary_tags.push_back({9 + c, Edge::north, BoundaryTag::airgap});
  }
  const int s0 = static_cast<int>(m.patches.size());
  add_block(m, stator, stator_grid, 3, 7);
  for (int c = 0; c < 7; ++c) {
    m.boundary_tags.push_back({s0 + c, Edge::south, BoundaryTag::airgap});
    m.boundary_tags.push_back({s0 + 14 + c, Edge::north, BoundaryTag::dirichlet});
  }

  // Local pole axis (90 deg) -> global sector [0, pitch]; the rotor also turns by alpha.
  const double to_global = -(90.0 - h) * kDeg;
  for (int k = 0; k < static_cast<int>(m.patches.size()); ++k) {
    Patch& pt = m.patches[static_cast<std::size_t>(k)];
    rotate_patch(pt, pt.subdomain == Subdomain::rotor ? to_global + m.rotor_angle : to_global);
  }
  return m;
}

}  // namespace igapod
