#pragma once

#include <array>
#include <string>

#include "igapod/geometry.hpp"

namespace igapod {

/// Design and operating parameters [MAG, MH, MW, alpha].
/// Lengths in meters, rotor angle in degrees.
struct ParamVector {
  double mag = 10e-3;   // burial depth of the magnet's outer edge below the rotor surface
  double mh = 6.75e-3;  // magnet height (radial)
  double mw = 15e-3;    // magnet width (tangential)
  double alpha_deg = 10.0;

  std::array<double, 4> to_array() const { return {mag, mh, mw, alpha_deg}; }
  static ParamVector from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }
  bool operator==(const ParamVector&) const = default;
};

/// Box of admissible parameters; defaults are the field-learning ranges.
struct ParamRanges {
  std::array<double, 4> lower{5e-3, 1.5e-3, 7e-3, 0.0};
  std::array<double, 4> upper{15e-3, 12e-3, 23e-3, 20.0};

  ParamVector midpoint() const;
  bool contains(const ParamVector& p, double rel_tol = 1e-12) const;
  /// Affine map of a point of the unit cube into the box.
  ParamVector map_unit(const std::array<double, 4>& unit) const;
  void check() const;  // ConfigError unless lower < upper componentwise
};

/// Element counts of the machine mesh scale with `level`.
struct MeshResolution {
  int level = 2;
  int degree = 2;
};

/// Fixed dimensions of the simplified machine sector.
struct MachineDesign {
  double shaft_radius = 20e-3;
  double rotor_radius = 55e-3;
  double airgap_interface_radius = 55.5e-3;
  double stator_bore_radius = 56e-3;
  double slot_bottom_radius = 70e-3;
  double stator_outer_radius = 85e-3;
  int pole_pairs = 3;
  double column_split_deg = 15.0;  // rotor column boundaries on arcs, from the pole axis
  double slot_opening = 0.3;       // slot width at the bore over its width at the slot bottom
  double margin = 0.5e-3;          // minimum iron around the magnet block
  MeshResolution mesh;
};

/// Throws ParameterError naming the violated constraint when the magnet block
/// does not fit the rotor pole.
void check_feasibility(const ParamVector& p, const MachineDesign& design = {});

/// One-pole sector of an interior permanent-magnet machine.
///
/// Rotor: 4 rows (yoke, magnet between air pockets, iron pole shoe between air
/// barriers, air layer) x 3 columns. Stator: air layer, slot row with three
/// coil slots narrowing towards the bore, yoke. Rotor patches are rotated
/// rigidly by alpha. The patch layout, knot vectors and weights are
/// independent of the parameters; only control points move.
MultiPatchModel build_machine_geometry(const ParamVector& p, const MachineDesign& design = {});

/// Raises the degree of a single-element (Bezier) patch in both directions.
Patch elevate_bezier_patch(const Patch& patch, int degree);

}  // namespace igapod
