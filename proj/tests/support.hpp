#pragma once

#include <cmath>
#include <numbers>

#include "igapod/geometry.hpp"
#include "igapod/magnetostatics.hpp"

namespace support {

using namespace igapod;

inline MultiPatchModel one_patch(Patch p, BoundaryTag tag) {
  MultiPatchModel m;
  m.patches.push_back(std::move(p));
  for (Edge e : {Edge::south, Edge::east, Edge::north, Edge::west}) m.boundary_tags.push_back({0, e, tag});
  return m;
}

inline MaterialSet unit_materials(double nu = 1.0) {
  MaterialSet m;
  m.iron = m.air = m.magnet = m.coil = Reluctivity::constant(nu);
  return m;
}

/// Two unit squares stacked along y. With `mortar` the lower one is the rotor
/// and the upper one the stator, coupled on the flat interface y = 1;
/// otherwise they share a conforming interface.
inline MultiPatchModel stacked_squares(int degree, int n_el, bool mortar) {
  MultiPatchModel m;
  Patch lo = rectangle_patch({0, 0}, {1, 1}, degree, n_el, n_el);
  Patch hi = rectangle_patch({0, 1}, {1, 2}, degree, n_el, n_el);
  lo.material = hi.material = MaterialTag::air;
  hi.subdomain = mortar ? Subdomain::stator : Subdomain::rotor;
  m.patches = {lo, hi};
  for (int p = 0; p < 2; ++p) {
    m.boundary_tags.push_back({p, Edge::east, BoundaryTag::dirichlet});
    m.boundary_tags.push_back({p, Edge::west, BoundaryTag::dirichlet});
  }
  m.boundary_tags.push_back({0, Edge::south, BoundaryTag::dirichlet});
  m.boundary_tags.push_back({1, Edge::north, BoundaryTag::dirichlet});
  if (mortar) {
    m.boundary_tags.push_back({0, Edge::north, BoundaryTag::airgap});
    m.boundary_tags.push_back({1, Edge::south, BoundaryTag::airgap});
    m.pole_pairs = 1;
    m.sector_angle = std::numbers::pi;
    m.mortar.shape = MortarFrame::Shape::flat;
    m.mortar.origin = 0.0;
    m.mortar.length = 1.0;
  } else {
    m.interfaces.push_back({0, Edge::north, 1, Edge::south});
  }
  return m;
}

/// Rotor annulus [r0, r1] and stator annulus [r1, r2] over the angular sector
/// [theta0, theta0 + pi / pole_pairs], identical meshes on both sides.
inline MultiPatchModel annulus_pair(double r0, double r1, double r2, double theta0, int pole_pairs, int n_r,
                                    int n_t) {
  MultiPatchModel m;
  const double span = std::numbers::pi / pole_pairs;
  Patch rt = annulus_patch(r0, r1, theta0, theta0 + span, n_r, n_t);
  Patch st = annulus_patch(r1, r2, theta0, theta0 + span, n_r, n_t);
  rt.material = st.material = MaterialTag::air;
  st.subdomain = Subdomain::stator;
  m.patches = {rt, st};
  m.boundary_tags = {{0, Edge::west, BoundaryTag::natural}, {0, Edge::east, BoundaryTag::airgap},
                     {0, Edge::south, BoundaryTag::natural}, {0, Edge::north, BoundaryTag::natural},
                     {1, Edge::west, BoundaryTag::airgap}, {1, Edge::east, BoundaryTag::natural},
                     {1, Edge::south, BoundaryTag::natural}, {1, Edge::north, BoundaryTag::natural}};
  m.pole_pairs = pole_pairs;
  m.sector_angle = span;
  m.airgap_inner = r0;
  m.airgap_radius = r1;
  m.airgap_outer = r2;
  return m;
}

}  // namespace support
