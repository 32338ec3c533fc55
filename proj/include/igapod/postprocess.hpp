#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "igapod/magnetostatics.hpp"

namespace igapod {

struct TorqueResult {
  double torque = 0.0;  // N m, positive counter-clockwise on the rotor
  double radius = 0.0;
  double length = 0.0;
  int n_quadrature = 0;
};

/// Maxwell stress torque along the circle of radius r inside the air gap,
/// integrated over one sector and scaled to the full machine.
TorqueResult torque(const Discretization& d, const Eigen::VectorXd& u, double r, double length = 1.0,
                    int n_quadrature = 8);

/// (r^2 L / mu0) * int_{phi0}^{phi1} B_r B_phi dphi * scale, with composite Gauss
/// quadrature on `segments` intervals.
double torque_from_field(const std::function<Vec2(const Vec2&)>& field, double r, double length,
                         double phi0, double phi1, int segments, int n_gauss, double scale = 1.0);

/// sqrt((u - v)^T K (u - v) / u^T K u). DomainError when u^T K u = 0.
double seminorm_error(const Eigen::VectorXd& u, const Eigen::VectorXd& v, const SparseMatrix& K);

struct FieldRow {
  double x, y, a_z, b_x, b_y, b_mag;
};

/// Samples every patch on a res_u x res_v parameter grid.
std::vector<FieldRow> sample_field(const Discretization& d, const Eigen::VectorXd& u, int res_u, int res_v);

enum class ExportFormat { csv, vtk };

/// Writes sampled fields; IoError names the path on failure.
void export_field(const Discretization& d, const Eigen::VectorXd& u, int res_u, int res_v,
                  const std::string& path, ExportFormat format = ExportFormat::csv);

std::vector<FieldRow> import_field_csv(const std::string& path);

}  // namespace igapod
