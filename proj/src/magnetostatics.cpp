#include "igapod/magnetostatics.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "igapod/errors.hpp"

namespace igapod {

Reluctivity Reluctivity::constant(double nu) {
  Reluctivity r;
  r.kind = Kind::constant;
  r.nu = nu;
  r.check();
  return r;
}

Reluctivity Reluctivity::exponential(double k1, double k2, double k3) {
  Reluctivity r;
  r.kind = Kind::exponential;
  r.k1 = k1;
  r.k2 = k2;
  r.k3 = k3;
  r.check();
  return r;
}

double Reluctivity::operator()(double b_squared) const {
  if (kind == Kind::constant) return nu;
  return std::min(k1 * std::exp(k2 * b_squared) + k3, nu_max);
}

double Reluctivity::derivative(double b_squared) const {
  if (kind == Kind::constant) return 0.0;
  const double e = k1 * std::exp(k2 * b_squared);
  return e + k3 < nu_max ? k2 * e : 0.0;
}

double Reluctivity::integral(double s) const {
  if (kind == Kind::constant) return nu * s;
  if (k2 == 0.0) return std::min(k1 + k3, nu_max) * s;
  const double knee = k1 > 0.0 && nu_max > k3 ? std::log((nu_max - k3) / k1) / k2 : s;
  const double t = std::min(s, knee);
  return k1 / k2 * std::expm1(k2 * t) + k3 * t + nu_max * std::max(0.0, s - knee);
}

void Reluctivity::check() const {
  if (kind == Kind::constant) {
    if (!(nu > 0.0)) throw ConfigError("reluctivity must be positive");
  } else if (k1 < 0.0 || k2 < 0.0 || k3 < 0.0 || !(k1 + k3 > 0.0)) {
    throw ConfigError("reluctivity coefficients k1, k2, k3 must be non-negative with k1 + k3 > 0");
  } else if (!(nu_max >= k1 + k3)) {
    throw ConfigError("reluctivity cap must not be below the unsaturated value k1 + k3");
  }
}

const Reluctivity& MaterialSet::reluctivity(MaterialTag t) const {
  switch (t) {
    case MaterialTag::iron: return iron;
    case MaterialTag::air: return air;
    case MaterialTag::magnet: return magnet;
    case MaterialTag::coil: return coil;
  }
  return air;
}

Vec2 MaterialSet::remanence() const {
  return b_rem * Vec2(-std::sin(magnet_angle), std::cos(magnet_angle));
}

double MaterialSet::current(const Patch& p) const {
  if (p.material != MaterialTag::coil) return 0.0;
  if (p.source_slot >= 0) {
    if (static_cast<std::size_t>(p.source_slot) >= slot_current.size()) {
      throw ConfigError("patch '" + p.name + "' references a slot without a current");
    }
    return slot_current[static_cast<std::size_t>(p.source_slot)];
  }
  return coil_current;
}

MaterialSet machine_materials(const ParamVector& p, const MultiPatchModel& model,
                              const MachineSources& src) {
  MaterialSet m;
  m.iron = src.nonlinear_iron ? Reluctivity::exponential(src.k1, src.k2, src.k3)
                              : Reluctivity::constant(src.k1 + src.k3);
  m.b_rem = src.b_rem;
  // Pole axis sits at the sector centre; the local build frame has it along +y.
  const double alpha = p.alpha_deg * std::numbers::pi / 180.0;
  m.magnet_angle = alpha + 0.5 * model.sector_angle - 0.5 * std::numbers::pi;
  const double phi_e = model.pole_pairs * alpha + src.current_angle_deg * std::numbers::pi / 180.0;
  // Slots A, -C, B in order of increasing angle.
  for (int k = 0; k < 3; ++k) {
    m.slot_current.push_back(src.current_peak * std::sin(phi_e - k * std::numbers::pi / 3.0));
  }
  return m;
}

// ---------------------------------------------------------------- DoF map

namespace {

struct SignedUnionFind {
  std::vector<int> parent;
  std::vector<double> parity;  // value(node) = parity * value(parent)
  std::vector<bool> zero;

  explicit SignedUnionFind(std::size_t n) : parent(n), parity(n, 1.0), zero(n, false) {
    for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<int>(i);
  }

  std::pair<int, double> find(int a) {
    double s = 1.0;
    int r = a;
    while (parent[static_cast<std::size_t>(r)] != r) {
      s *= parity[static_cast<std::size_t>(r)];
      r = parent[static_cast<std::size_t>(r)];
    }
    // path compression
    double s2 = s;
    int x = a;
    while (parent[static_cast<std::size_t>(x)] != x) {
      const int next = parent[static_cast<std::size_t>(x)];
      const double px = parity[static_cast<std::size_t>(x)];
      parent[static_cast<std::size_t>(x)] = r;
      parity[static_cast<std::size_t>(x)] = s2;
      s2 *= px;
      x = next;
    }
    return {r, s};
  }

  // Impose value(a) = s * value(b).
  void unite(int a, int b, double s) {
    auto [ra, sa] = find(a);
    auto [rb, sb] = find(b);
    if (ra == rb) {
      if (sa != s * sb) zero[static_cast<std::size_t>(ra)] = true;  // u = -u
      return;
    }
    // value(ra) = sa * value(a) = sa * s * sb * value(rb)
    parent[static_cast<std::size_t>(ra)] = rb;
    parity[static_cast<std::size_t>(ra)] = sa * s * sb;
    if (zero[static_cast<std::size_t>(ra)]) zero[static_cast<std::size_t>(rb)] = true;
  }
};

}  // namespace

DofMap build_dof_map(const MultiPatchModel& model) {
  const std::size_t np = model.patches.size();
  std::vector<int> offset(np + 1, 0);
  for (std::size_t p = 0; p < np; ++p) {
    model.patches[p].check_dimensions();
    offset[p + 1] = offset[p] + static_cast<int>(model.patches[p].control_points.size());
  }
  SignedUnionFind uf(static_cast<std::size_t>(offset[np]));
  auto node = [&](int patch, int cp) { return offset[static_cast<std::size_t>(patch)] + cp; };

  auto link_edges = [&](int pa, Edge ea, int pb, Edge eb, bool reversed, double s) {
    auto ia = model.patches[static_cast<std::size_t>(pa)].edge_indices(ea);
    auto ib = model.patches[static_cast<std::size_t>(pb)].edge_indices(eb);
    if (ia.size() != ib.size()) throw ConfigError("matched edges have different control point counts");
    if (reversed) std::reverse(ib.begin(), ib.end());
    for (std::size_t k = 0; k < ia.size(); ++k) uf.unite(node(pb, ib[k]), node(pa, ia[k]), s);
  };
  for (const Interface& itf : model.interfaces) {
    link_edges(itf.patch_a, itf.edge_a, itf.patch_b, itf.edge_b, itf.reversed, 1.0);
  }
  for (const PeriodicLink& l : model.periodic_links) {
    link_edges(l.master_patch, l.master_edge, l.slave_patch, l.slave_edge, l.reversed, -1.0);
  }
  for (const EdgeTag& t : model.boundary_tags) {
    if (t.tag != BoundaryTag::dirichlet) continue;
    for (int cp : model.patches[static_cast<std::size_t>(t.patch)].edge_indices(t.edge)) {
      uf.zero[static_cast<std::size_t>(uf.find(node(t.patch, cp)).first)] = true;
    }
  }

  DofMap map;
  map.global.resize(np);
  map.sign.resize(np);
  std::vector<int> root_id(static_cast<std::size_t>(offset[np]), -2);
  int next = 0;
  for (Subdomain sub : {Subdomain::rotor, Subdomain::stator}) {
    const int start = next;
    for (std::size_t p = 0; p < np; ++p) {
      const Patch& patch = model.patches[p];
      if (patch.subdomain != sub) continue;
      const int n = static_cast<int>(patch.control_points.size());
      map.global[p].assign(static_cast<std::size_t>(n), -1);
      map.sign[p].assign(static_cast<std::size_t>(n), 1.0);
      for (int cp = 0; cp < n; ++cp) {
        auto [r, s] = uf.find(node(static_cast<int>(p), cp));
        if (uf.zero[static_cast<std::size_t>(r)]) {
          ++map.n_fixed_nodes;
          continue;
        }
        int& id = root_id[static_cast<std::size_t>(r)];
        if (id == -2) id = next++;
        if (id < start) throw ConfigError("conforming interface joins rotor and stator patches");
        map.global[p][static_cast<std::size_t>(cp)] = id;
        map.sign[p][static_cast<std::size_t>(cp)] = s;
      }
    }
    (sub == Subdomain::rotor ? map.n_rotor : map.n_stator) = next - start;
  }
  return map;
}

// ---------------------------------------------------------- quadrature cache

Discretization::Discretization(MultiPatchModel model, int quad_points)
    : model_(std::move(model)), dofs_(build_dof_map(model_)) {
  for (std::size_t pi = 0; pi < model_.patches.size(); ++pi) {
    const Patch& patch = model_.patches[pi];
    const QuadRule qu = gauss_rule(quad_points > 0 ? quad_points : patch.ku.degree() + 1);
    const QuadRule qv = gauss_rule(quad_points > 0 ? quad_points : patch.kv.degree() + 1);
    const auto bu = patch.ku.breakpoints(), bv = patch.kv.breakpoints();
    for (std::size_t ev = 0; ev + 1 < bv.size(); ++ev) {
      for (std::size_t eu = 0; eu + 1 < bu.size(); ++eu) {
        QuadElement el;
        el.patch = static_cast<int>(pi);
        el.first_qp = num_qp();
        const double hu = bu[eu + 1] - bu[eu], hv = bv[ev + 1] - bv[ev];
        for (std::size_t b = 0; b < qv.points.size(); ++b) {
          for (std::size_t a = 0; a < qu.points.size(); ++a) {
            const double u = bu[eu] + 0.5 * hu * (qu.points[a] + 1.0);
            const double v = bv[ev] + 0.5 * hv * (qv.points[b] + 1.0);
            const TensorBasis2D t = eval_tensor_2d(patch.ku, patch.kv, patch.weights, u, v);
            if (el.cps.empty()) el.cps = t.indices;
            Mat2 J = Mat2::Zero();
            Vec2 x = Vec2::Zero();
            for (std::size_t k = 0; k < t.size(); ++k) {
              const Vec2& c = patch.control_points[static_cast<std::size_t>(t.indices[k])];
              x += t.values[k] * c;
              J.col(0) += t.d_u[k] * c;
              J.col(1) += t.d_v[k] * c;
            }
            const double det = J.determinant();
            if (!(det > 0.0)) {
              std::ostringstream os;
              os << "singular or inverted Jacobian (det " << det << ") in patch " << pi << " ('"
                 << patch.name << "') at xi=(" << u << ", " << v << ")";
              throw NumericalError(os.str());
            }
            const Mat2 JinvT = J.inverse().transpose();
            Eigen::Matrix2Xd g(2, static_cast<Eigen::Index>(t.size()));
            Eigen::VectorXd n(static_cast<Eigen::Index>(t.size()));
            for (std::size_t k = 0; k < t.size(); ++k) {
              g.col(static_cast<Eigen::Index>(k)) = JinvT * Vec2(t.d_u[k], t.d_v[k]);
              n(static_cast<Eigen::Index>(k)) = t.values[k];
            }
            qp_weight_.push_back(0.25 * hu * hv * qu.weights[a] * qv.weights[b] * det);
            qp_x_.push_back(x);
            qp_n_.push_back(std::move(n));
            qp_grad_.push_back(std::move(g));
          }
        }
        el.n_qp = num_qp() - el.first_qp;
        elements_.push_back(std::move(el));
      }
    }
  }
}

double Discretization::coefficient(const Eigen::VectorXd& u, int patch, int cp) const {
  const int g = dofs_.global[static_cast<std::size_t>(patch)][static_cast<std::size_t>(cp)];
  if (g < 0) return 0.0;
  return dofs_.sign[static_cast<std::size_t>(patch)][static_cast<std::size_t>(cp)] * u(g);
}

std::vector<int> Discretization::airgap_dofs() const {
  std::vector<bool> touch(model_.patches.size(), false);
  for (const EdgeTag& t : model_.boundary_tags) {
    if (t.tag == BoundaryTag::airgap) touch[static_cast<std::size_t>(t.patch)] = true;
  }
  std::vector<bool> in(static_cast<std::size_t>(num_dofs()), false);
  for (std::size_t p = 0; p < touch.size(); ++p) {
    if (!touch[p]) continue;
    for (int g : dofs_.global[p]) {
      if (g >= 0) in[static_cast<std::size_t>(g)] = true;
    }
  }
  std::vector<int> out;
  for (int g = 0; g < num_dofs(); ++g) {
    if (in[static_cast<std::size_t>(g)]) out.push_back(g);
  }
  return out;
}

// ---------------------------------------------------------------- assembly

namespace {

Vec2 gradient_at(const Discretization& d, const QuadElement& el, int q, const Eigen::VectorXd& u) {
  const Eigen::Matrix2Xd& g = d.qp_grads(q);
  Vec2 grad = Vec2::Zero();
  for (std::size_t k = 0; k < el.cps.size(); ++k) {
    grad += d.coefficient(u, el.patch, el.cps[k]) * g.col(static_cast<Eigen::Index>(k));
  }
  return grad;
}

}  // namespace

std::vector<double> reluctivity_at_points(const Discretization& d, const MaterialSet& m,
                                          const Eigen::VectorXd* u) {
  std::vector<double> nu(static_cast<std::size_t>(d.num_qp()));
  for (const QuadElement& el : d.elements()) {
    const Reluctivity& r = m.reluctivity(d.model().patches[static_cast<std::size_t>(el.patch)].material);
    for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) {
      const double b2 = (u && r.field_dependent()) ? gradient_at(d, el, q, *u).squaredNorm() : 0.0;
      nu[static_cast<std::size_t>(q)] = r(b2);
    }
  }
  return nu;
}

namespace {

std::vector<Vec2> gradients_at_points(const Discretization& d, const Eigen::VectorXd& u) {
  std::vector<Vec2> g(static_cast<std::size_t>(d.num_qp()));
  for (const QuadElement& el : d.elements()) {
    for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) g[static_cast<std::size_t>(q)] = gradient_at(d, el, q, u);
  }
  return g;
}

// With `grad` and `dnu` the Newton tangent term 2 nu' (grad u . grad B_i)(grad u . grad B_j) is added.
SparseMatrix assemble_matrix(const Discretization& d, const std::vector<double>& nu_qp,
                             const std::vector<Vec2>* grad, const std::vector<double>* dnu) {
  if (static_cast<int>(nu_qp.size()) != d.num_qp()) {
    throw ConfigError("assemble_stiffness: reluctivity table does not match quadrature points");
  }
  const DofMap& dm = d.dofs();
  std::vector<Eigen::Triplet<double>> trip;
  for (const QuadElement& el : d.elements()) {
    const Eigen::Index nb = static_cast<Eigen::Index>(el.cps.size());
    Eigen::MatrixXd ke = Eigen::MatrixXd::Zero(nb, nb);
    for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) {
      const std::size_t qi = static_cast<std::size_t>(q);
      const Eigen::Matrix2Xd& g = d.qp_grads(q);
      ke.noalias() += (nu_qp[qi] * d.qp_weight(q)) * (g.transpose() * g);
      if (grad && (*dnu)[qi] != 0.0) {
        const Eigen::VectorXd gu = g.transpose() * (*grad)[qi];
        ke.noalias() += (2.0 * (*dnu)[qi] * d.qp_weight(q)) * (gu * gu.transpose());
      }
    }
    const auto& glob = dm.global[static_cast<std::size_t>(el.patch)];
    const auto& sgn = dm.sign[static_cast<std::size_t>(el.patch)];
    for (Eigen::Index a = 0; a < nb; ++a) {
      const std::size_t ca = static_cast<std::size_t>(el.cps[static_cast<std::size_t>(a)]);
      if (glob[ca] < 0) continue;
      for (Eigen::Index b = 0; b < nb; ++b) {
        const std::size_t cb = static_cast<std::size_t>(el.cps[static_cast<std::size_t>(b)]);
        if (glob[cb] < 0) continue;
        trip.emplace_back(glob[ca], glob[cb], sgn[ca] * sgn[cb] * ke(a, b));
      }
    }
  }
  SparseMatrix K(d.num_dofs(), d.num_dofs());
  K.setFromTriplets(trip.begin(), trip.end());
  return K;
}

}  // namespace

SparseMatrix assemble_stiffness(const Discretization& d, const std::vector<double>& nu_qp) {
  return assemble_matrix(d, nu_qp, nullptr, nullptr);
}

SparseMatrix assemble_stiffness(const Discretization& d, const MaterialSet& m,
                                const Eigen::VectorXd* linearization) {
  return assemble_stiffness(d, reluctivity_at_points(d, m, linearization));
}

SparseMatrix assemble_K0(const Discretization& d) {
  return assemble_stiffness(d, std::vector<double>(static_cast<std::size_t>(d.num_qp()), 1.0));
}

namespace {

void scatter(const Discretization& d, const QuadElement& el, const Eigen::VectorXd& local,
             Eigen::VectorXd& b) {
  const auto& glob = d.dofs().global[static_cast<std::size_t>(el.patch)];
  const auto& sgn = d.dofs().sign[static_cast<std::size_t>(el.patch)];
  for (std::size_t k = 0; k < el.cps.size(); ++k) {
    const int g = glob[static_cast<std::size_t>(el.cps[k])];
    if (g >= 0) b(g) += sgn[static_cast<std::size_t>(el.cps[k])] * local(static_cast<Eigen::Index>(k));
  }
}

}  // namespace

Eigen::VectorXd assemble_rhs(const Discretization& d, const MaterialSet& m) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d.num_dofs());
  const Vec2 brem = m.remanence();
  // Magnet term: int nu (-B_rem,y, B_rem,x) . grad v.
  const Vec2 rotated(-brem.y(), brem.x());
  for (const QuadElement& el : d.elements()) {
    const Patch& patch = d.model().patches[static_cast<std::size_t>(el.patch)];
    const double j = m.current(patch);
    const bool magnet = patch.material == MaterialTag::magnet && m.b_rem != 0.0;
    if (j == 0.0 && !magnet) continue;
    const double nu = m.reluctivity(patch.material)(0.0);
    Eigen::VectorXd local = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(el.cps.size()));
    for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) {
      if (j != 0.0) local += (j * d.qp_weight(q)) * d.qp_values(q);
      if (magnet) local += (nu * d.qp_weight(q)) * (d.qp_grads(q).transpose() * rotated);
    }
    scatter(d, el, local, b);
  }
  return b;
}

Eigen::VectorXd assemble_load(const Discretization& d, const std::function<double(const Vec2&)>& f) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d.num_dofs());
  for (const QuadElement& el : d.elements()) {
    Eigen::VectorXd local = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(el.cps.size()));
    for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) {
      local += (f(d.qp_point(q)) * d.qp_weight(q)) * d.qp_values(q);
    }
    scatter(d, el, local, b);
  }
  return b;
}

// ------------------------------------------------------------------ mortar

std::vector<int> harmonic_orders(int pole_pairs, int H) {
  if (H < 1) throw ConfigError("harmonic count H must be at least 1");
  std::vector<int> k;
  for (int j = 0; j < H; ++j) k.push_back(pole_pairs * (2 * j + 1));
  return k;
}

namespace {

// Interface coordinate in the frame of the given side.
double interface_coord(const MultiPatchModel& m, const Vec2& x, bool rotor) {
  if (m.mortar.shape == MortarFrame::Shape::flat) {
    return (x.x() - m.mortar.origin) / m.mortar.length * m.sector_angle;
  }
  return std::atan2(x.y(), x.x()) - (rotor ? m.rotor_angle : 0.0);
}

Vec2 edge_param(Edge e, double t) {
  switch (e) {
    case Edge::south: return {t, 0.0};
    case Edge::north: return {t, 1.0};
    case Edge::west: return {0.0, t};
    case Edge::east: return {1.0, t};
  }
  return {t, 0.0};
}

}  // namespace

MortarBlocks assemble_mortar(const Discretization& d, int H) {
  const MultiPatchModel& m = d.model();
  MortarBlocks mb;
  mb.orders = harmonic_orders(m.pole_pairs, H);
  const Eigen::Index nh = 2 * H;
  mb.G_rt = Eigen::MatrixXd::Zero(d.dofs().n_rotor, nh);
  mb.G_st = Eigen::MatrixXd::Zero(d.dofs().n_stator, nh);
  const QuadRule rule = gauss_rule(10);

  for (const EdgeTag& tag : m.boundary_tags) {
    if (tag.tag != BoundaryTag::airgap) continue;
    const Patch& patch = m.patches[static_cast<std::size_t>(tag.patch)];
    const bool rotor = patch.subdomain == Subdomain::rotor;
    const int offset = rotor ? 0 : d.dofs().n_rotor;
    Eigen::MatrixXd& G = rotor ? mb.G_rt : mb.G_st;
    const auto& glob = d.dofs().global[static_cast<std::size_t>(tag.patch)];
    const auto& sgn = d.dofs().sign[static_cast<std::size_t>(tag.patch)];
    const bool along_u = tag.edge == Edge::south || tag.edge == Edge::north;
    const auto bp = patch.edge_knots(tag.edge).breakpoints();
    for (std::size_t e = 0; e + 1 < bp.size(); ++e) {
      const double h = bp[e + 1] - bp[e];
      for (std::size_t q = 0; q < rule.points.size(); ++q) {
        const double t = bp[e] + 0.5 * h * (rule.points[q] + 1.0);
        const Vec2 uv = edge_param(tag.edge, t);
        const TensorBasis2D tb = eval_tensor_2d(patch.ku, patch.kv, patch.weights, uv.x(), uv.y());
        Vec2 x = Vec2::Zero(), dx = Vec2::Zero();
        for (std::size_t k = 0; k < tb.size(); ++k) {
          const Vec2& c = patch.control_points[static_cast<std::size_t>(tb.indices[k])];
          x += tb.values[k] * c;
          dx += (along_u ? tb.d_u[k] : tb.d_v[k]) * c;
        }
        const double ds = 0.5 * h * rule.weights[q] * dx.norm();
        const double theta = interface_coord(m, x, rotor);
        for (std::size_t k = 0; k < tb.size(); ++k) {
          const int g = glob[static_cast<std::size_t>(tb.indices[k])];
          if (g < 0 || tb.values[k] == 0.0) continue;
          const double val = sgn[static_cast<std::size_t>(tb.indices[k])] * tb.values[k] * ds;
          for (int j = 0; j < H; ++j) {
            const double kt = mb.orders[static_cast<std::size_t>(j)] * theta;
            G(g - offset, 2 * j) += val * std::cos(kt);
            G(g - offset, 2 * j + 1) += val * std::sin(kt);
          }
        }
      }
    }
  }
  return mb;
}

Eigen::MatrixXd rotation_matrix(double alpha, const std::vector<int>& orders) {
  const Eigen::Index n = static_cast<Eigen::Index>(2 * orders.size());
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t j = 0; j < orders.size(); ++j) {
    const double c = std::cos(orders[j] * alpha), s = std::sin(orders[j] * alpha);
    const Eigen::Index i = static_cast<Eigen::Index>(2 * j);
    R(i, i) = c;
    R(i, i + 1) = -s;
    R(i + 1, i) = s;
    R(i + 1, i + 1) = c;
  }
  return R;
}

// ------------------------------------------------------------------- solve

Eigen::VectorXd SaddleSolution::coefficients() const {
  Eigen::VectorXd u(u_rt.size() + u_st.size());
  u << u_rt, u_st;
  return u;
}

SaddleSystem make_system(const Discretization& d, const SparseMatrix& K, const Eigen::VectorXd& b,
                         const MortarBlocks& mortar) {
  const int nr = d.dofs().n_rotor, ns = d.dofs().n_stator;
  SaddleSystem s;
  s.K_rt = K.topLeftCorner(nr, nr);
  s.K_st = K.bottomRightCorner(ns, ns);
  s.b_rt = b.head(nr);
  s.b_st = b.tail(ns);
  s.G_rt = mortar.G_rt;
  s.G_st = mortar.G_st;
  const double alpha = d.model().mortar.shape == MortarFrame::Shape::arc ? d.model().rotor_angle : 0.0;
  s.R = mortar.orders.empty() ? Eigen::MatrixXd() : rotation_matrix(alpha, mortar.orders);
  return s;
}

namespace {

using Factor = Eigen::SimplicialLDLT<SparseMatrix>;

void factorize(Factor& f, const SparseMatrix& K, const char* which) {
  if (K.rows() == 0) return;
  f.compute(K);
  if (f.info() != Eigen::Success) {
    throw NumericalError(std::string("factorization of the ") + which + " stiffness block failed");
  }
}

Eigen::MatrixXd solve_block(const Factor& f, const Eigen::MatrixXd& rhs) {
  if (rhs.rows() == 0) return rhs;
  return f.solve(rhs);
}

}  // namespace

SaddleSolution solve_linear(const SaddleSystem& sys, double tol) {
  Factor frt, fst;
  factorize(frt, sys.K_rt, "rotor");
  factorize(fst, sys.K_st, "stator");
  const Eigen::Index nh = sys.G_rt.cols();
  const bool coupled = nh > 0 && sys.K_rt.rows() > 0 && sys.K_st.rows() > 0;

  SaddleSolution sol;
  sol.iterations = 1;
  sol.lambda = Eigen::VectorXd::Zero(coupled ? nh : 0);
  Eigen::MatrixXd Gst_R, X_rt, X_st;
  if (coupled) {
    Gst_R = sys.G_st * sys.R;
    X_rt = solve_block(frt, sys.G_rt);
    X_st = solve_block(fst, Gst_R);
  }

  auto residual = [&](const Eigen::VectorXd& urt, const Eigen::VectorXd& ust, const Eigen::VectorXd& lam,
                      Eigen::VectorXd& r_rt, Eigen::VectorXd& r_st, Eigen::VectorXd& r_l) {
    r_rt = sys.b_rt - sys.K_rt * urt;
    r_st = sys.b_st - sys.K_st * ust;
    r_l = Eigen::VectorXd::Zero(lam.size());
    if (coupled) {
      r_rt += sys.G_rt * lam;
      r_st -= Gst_R * lam;
      r_l = sys.G_rt.transpose() * urt - Gst_R.transpose() * ust;
    }
  };

  Eigen::MatrixXd S;
  Eigen::LDLT<Eigen::MatrixXd> S_fact;
  if (coupled) {
    S = sys.G_rt.transpose() * X_rt + Gst_R.transpose() * X_st;
    S = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
    const double lmax = es.eigenvalues().maxCoeff(), lmin = es.eigenvalues().minCoeff();
    if (!(lmax > 0.0) || lmin < 1e-12 * lmax) {
      std::ostringstream os;
      os << "mortar coupling is rank deficient (Schur eigenvalue ratio " << lmin / lmax
         << "); reduce the harmonic count H or refine the interface mesh";
      throw NumericalError(os.str());
    }
    S_fact.compute(S);
  }

  // Solve for a right-hand side (f_rt, f_st, f_l); used for the solve and refinement steps.
  auto apply_inverse = [&](const Eigen::VectorXd& f_rt, const Eigen::VectorXd& f_st, const Eigen::VectorXd& f_l,
                           Eigen::VectorXd& urt, Eigen::VectorXd& ust, Eigen::VectorXd& lam) {
    const Eigen::VectorXd y_rt = solve_block(frt, f_rt);
    const Eigen::VectorXd y_st = solve_block(fst, f_st);
    if (coupled) {
      // third row: -G_rt^T u_rt + R^T G_st^T u_st = f_l
      const Eigen::VectorXd rhs = Gst_R.transpose() * y_st - sys.G_rt.transpose() * y_rt - f_l;
      lam = S_fact.solve(rhs);
      urt = y_rt + X_rt * lam;
      ust = y_st - X_st * lam;
    } else {
      urt = y_rt;
      ust = y_st;
      lam = Eigen::VectorXd::Zero(0);
    }
  };

  Eigen::VectorXd zero_l = Eigen::VectorXd::Zero(coupled ? nh : 0);
  apply_inverse(sys.b_rt, sys.b_st, zero_l, sol.u_rt, sol.u_st, sol.lambda);

  const double bnorm = std::sqrt(sys.b_rt.squaredNorm() + sys.b_st.squaredNorm());
  Eigen::VectorXd r_rt, r_st, r_l;
  for (int step = 0; step < 3; ++step) {
    residual(sol.u_rt, sol.u_st, sol.lambda, r_rt, r_st, r_l);
    const double rn = std::sqrt(r_rt.squaredNorm() + r_st.squaredNorm() + r_l.squaredNorm());
    sol.residual_norm = bnorm > 0.0 ? rn / bnorm : rn;
    if (sol.residual_norm <= tol || bnorm == 0.0) break;
    Eigen::VectorXd du_rt, du_st, dl;
    apply_inverse(r_rt, r_st, r_l, du_rt, du_st, dl);
    sol.u_rt += du_rt;
    sol.u_st += du_st;
    if (coupled) sol.lambda += dl;
  }
  if (sol.residual_norm > tol && bnorm > 0.0) {
    std::ostringstream os;
    os << "saddle-point residual " << sol.residual_norm << " above tolerance " << tol;
    throw NumericalError(os.str());
  }
  return sol;
}

double magnetic_energy(const Discretization& d, const MaterialSet& m, const Eigen::VectorXd& u,
                       const Eigen::VectorXd& b) {
  double w = 0.0;
  for (const QuadElement& el : d.elements()) {
    const Reluctivity& r = m.reluctivity(d.model().patches[static_cast<std::size_t>(el.patch)].material);
    for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) {
      w += 0.5 * d.qp_weight(q) * r.integral(gradient_at(d, el, q, u).squaredNorm());
    }
  }
  return w - b.dot(u);
}

namespace {

[[noreturn]] void not_converged(int max_iter, const std::vector<double>& history) {
  std::ostringstream os;
  os << "nonlinear iteration did not converge in " << max_iter << " iterations; update norms:";
  for (double h : history) os << ' ' << h;
  throw ConvergenceError(os.str(), history);
}

SaddleSolution solve_newton(const Discretization& d, const MaterialSet& m, const Eigen::VectorXd& b,
                            const MortarBlocks& mortar, const NonlinearOptions& opt) {
  // Initial iterate: linear solve with the unsaturated reluctivity.
  SaddleSolution sol = solve_linear(make_system(d, assemble_stiffness(d, m, nullptr), b, mortar));
  Eigen::VectorXd u = sol.coefficients();
  std::vector<double> history{1.0};
  double energy = magnetic_energy(d, m, u, b);
  for (int it = 2; it <= opt.max_iter; ++it) {
    const std::vector<Vec2> grad = gradients_at_points(d, u);
    std::vector<double> nu(grad.size()), dnu(grad.size());
    for (const QuadElement& el : d.elements()) {
      const Reluctivity& r = m.reluctivity(d.model().patches[static_cast<std::size_t>(el.patch)].material);
      for (int q = el.first_qp; q < el.first_qp + el.n_qp; ++q) {
        const double s = grad[static_cast<std::size_t>(q)].squaredNorm();
        nu[static_cast<std::size_t>(q)] = r(s);
        dnu[static_cast<std::size_t>(q)] = r.derivative(s);
      }
    }
    const SparseMatrix Ks = assemble_matrix(d, nu, nullptr, nullptr);
    const SparseMatrix Kt = assemble_matrix(d, nu, &grad, &dnu);
    // Kt u_new - G lambda = b - Ks u + Kt u: the full Newton iterate including the multiplier.
    const Eigen::VectorXd rhs = b - Ks * u + Kt * u;
    SaddleSolution trial = solve_linear(make_system(d, Kt, rhs, mortar));
    const Eigen::VectorXd dir = trial.coefficients() - u;
    const Eigen::VectorXd slope_vec = Ks * u - b;
    const double slope = slope_vec.dot(dir);
    double omega = 1.0, e_new = 0.0;
    Eigen::VectorXd u_new;
    for (int k = 0; k < 30; ++k) {
      u_new = u + omega * dir;
      e_new = magnetic_energy(d, m, u_new, b);
      if (e_new <= energy + 1e-4 * omega * std::min(slope, 0.0) + 1e-14 * std::abs(energy)) break;
      omega *= 0.5;
    }
    const double un = u_new.norm();
    const double update = un > 0.0 ? (u_new - u).norm() / un : 0.0;
    history.push_back(update);
    sol.lambda = sol.lambda + omega * (trial.lambda - sol.lambda);
    u = u_new;
    energy = e_new;
    if (update < opt.tol) {
      const int nr = d.dofs().n_rotor;
      sol.u_rt = u.head(nr);
      sol.u_st = u.tail(d.dofs().n_stator);
      sol.residual_norm = trial.residual_norm;
      sol.iterations = it;
      sol.update_history = history;
      return sol;
    }
  }
  not_converged(opt.max_iter, history);
}

}  // namespace

SaddleSolution solve_nonlinear(const Discretization& d, const MaterialSet& m, int H,
                               const NonlinearOptions& opt) {
  if (opt.max_iter < 1) throw ConfigError("max_iter must be at least 1");
  if (!(opt.tol > 0.0)) throw ConfigError("nonlinear tolerance must be positive");
  if (!(opt.relaxation > 0.0 && opt.relaxation <= 1.0)) throw ConfigError("relaxation must be in (0, 1]");
  bool field_dependent = false;
  for (const Patch& p : d.model().patches) {
    field_dependent = field_dependent || m.reluctivity(p.material).field_dependent();
  }

  const Eigen::VectorXd b = assemble_rhs(d, m);
  MortarBlocks mortar;
  if (d.dofs().n_rotor > 0 && d.dofs().n_stator > 0 && H > 0) mortar = assemble_mortar(d, H);
  if (field_dependent && opt.method == NonlinearMethod::newton && b.norm() > 0.0) {
    return solve_newton(d, m, b, mortar, opt);
  }

  std::vector<double> nu = reluctivity_at_points(d, m, nullptr);
  std::vector<double> history;
  Eigen::VectorXd u_prev = Eigen::VectorXd::Zero(d.num_dofs());
  for (int it = 1; it <= opt.max_iter; ++it) {
    SaddleSolution sol = solve_linear(make_system(d, assemble_stiffness(d, nu), b, mortar));
    const Eigen::VectorXd u = sol.coefficients();
    const double un = u.norm();
    const double update = un > 0.0 ? (u - u_prev).norm() / un : 0.0;
    history.push_back(update);
    if (!field_dependent || (it > 1 && update < opt.tol) || un == 0.0) {
      sol.iterations = it;
      sol.update_history = history;
      return sol;
    }
    const std::vector<double> nu_new = reluctivity_at_points(d, m, &u);
    for (std::size_t q = 0; q < nu.size(); ++q) nu[q] += opt.relaxation * (nu_new[q] - nu[q]);
    u_prev = u;
  }
  not_converged(opt.max_iter, history);
}

// ------------------------------------------------------------------ fields

FieldValue evaluate_field(const Discretization& d, const Eigen::VectorXd& u, int patch, double xi_u,
                          double xi_v) {
  const Patch& p = d.model().patches.at(static_cast<std::size_t>(patch));
  const TensorBasis2D t = eval_tensor_2d(p.ku, p.kv, p.weights, xi_u, xi_v);
  Mat2 J = Mat2::Zero();
  double a = 0.0, au = 0.0, av = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const Vec2& c = p.control_points[static_cast<std::size_t>(t.indices[k])];
    J.col(0) += t.d_u[k] * c;
    J.col(1) += t.d_v[k] * c;
    const double coef = d.coefficient(u, patch, t.indices[k]);
    a += t.values[k] * coef;
    au += t.d_u[k] * coef;
    av += t.d_v[k] * coef;
  }
  const Vec2 grad = J.inverse().transpose() * Vec2(au, av);
  FieldValue f;
  f.a_z = a;
  f.b = Vec2(grad.y(), -grad.x());
  return f;
}

namespace {

struct EdgeHit {
  int patch = -1;
  Vec2 uv;
};

// Point of one side's sliding edges at interface coordinate s (in that side's frame).
EdgeHit locate(const Discretization& d, bool rotor, double s) {
  const MultiPatchModel& m = d.model();
  const double lo = -0.25 * m.sector_angle;
  auto wrap = [&](double c) {
    if (m.mortar.shape == MortarFrame::Shape::flat) return c;
    const double two_pi = 2.0 * std::numbers::pi;
    return c - two_pi * std::floor((c - lo) / two_pi);
  };
  for (const EdgeTag& tag : m.boundary_tags) {
    if (tag.tag != BoundaryTag::airgap) continue;
    const Patch& p = m.patches[static_cast<std::size_t>(tag.patch)];
    if ((p.subdomain == Subdomain::rotor) != rotor) continue;
    auto coord = [&](double t) {
      const Vec2 uv = edge_param(tag.edge, t);
      return wrap(interface_coord(m, map_point(p, uv.x(), uv.y()), rotor));
    };
    const double c0 = coord(0.0), c1 = coord(1.0);
    if (s < std::min(c0, c1) || s > std::max(c0, c1)) continue;
    double a = 0.0, b = 1.0;
    const bool increasing = c1 > c0;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (a + b);
      if ((coord(mid) < s) == increasing) a = mid; else b = mid;
    }
    return {tag.patch, edge_param(tag.edge, 0.5 * (a + b))};
  }
  return {};
}

}  // namespace

InterfaceJump interface_jump(const Discretization& d, const Eigen::VectorXd& u, int n_samples) {
  const MultiPatchModel& m = d.model();
  const double alpha = m.mortar.shape == MortarFrame::Shape::arc ? m.rotor_angle : 0.0;
  InterfaceJump jump;
  double sq = 0.0;
  int count = 0;
  for (int i = 0; i < n_samples; ++i) {
    const double s = (i + 0.5) / n_samples * m.sector_angle;
    const EdgeHit st = locate(d, false, s);
    double sr = s - alpha, sign = 1.0;
    while (sr < 0.0) {
      sr += m.sector_angle;
      sign = -sign;
    }
    while (sr > m.sector_angle) {
      sr -= m.sector_angle;
      sign = -sign;
    }
    const EdgeHit rt = locate(d, true, sr);
    if (st.patch < 0 || rt.patch < 0) continue;
    const double a_st = evaluate_field(d, u, st.patch, st.uv.x(), st.uv.y()).a_z;
    const double a_rt = sign * evaluate_field(d, u, rt.patch, rt.uv.x(), rt.uv.y()).a_z;
    const double diff = std::abs(a_st - a_rt);
    jump.max_abs = std::max(jump.max_abs, diff);
    jump.reference = std::max({jump.reference, std::abs(a_st), std::abs(a_rt)});
    sq += diff * diff;
    ++count;
  }
  jump.rms = count > 0 ? std::sqrt(sq / count) : 0.0;
  return jump;
}

}  // namespace igapod
