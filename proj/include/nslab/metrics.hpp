/// @file metrics.hpp
/// @brief Error norms, spline-based residual metric, convergence fitting,
///        drag extraction, and cross-section sampling.

#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nslab/fem.hpp"
#include "nslab/mac_grid.hpp"
#include "nslab/mesh.hpp"

namespace nslab {

/// One measured data point of a benchmark run.
struct ErrorReport {
    double l2_error = 0.0;
    double h = 0.0;
    double dt = 0.0;
    long long dofs = 0;
    double wall_time = 0.0;
    std::string method;
    std::string mesh_kind;  ///< "tri", "quad", or "grid"
};

using VectorField = std::function<Vec2(Vec2)>;

/// L2 norm of (u_h - ref) over the mesh, via Gaussian quadrature of the given
/// polynomial degree on every element. `u` uses the [x-block; y-block] layout.
double l2_error(const FESpace& V, const std::vector<double>& u, const VectorField& ref,
                int quadrature_degree);

/// Same measure for a staggered-grid velocity: per-fluid-cell Gauss quadrature
/// of the bilinearly interpolated field against the reference.
double l2_error(const StaggeredGrid& grid, const MacVelocity& vel, const VectorField& ref,
                int points_per_axis = 3);

/// Least-squares slope of log(e) against log(h). Throws unless all pairs are
/// positive and there are at least two.
double fit_convergence(const std::vector<std::pair<double, double>>& h_and_e);

/// Natural cubic spline through (x_i, f_i) with zero second derivative at the
/// ends. Evaluation clamps to the knot range.
class CubicSpline {
  public:
    CubicSpline(std::vector<double> x, std::vector<double> f);

    double value(double t) const;
    double derivative(double t) const;
    double second_derivative(double t) const;

  private:
    std::vector<double> x_, f_, m_;  // knots, values, second-derivative moments
};

/// Velocity and pressure sampled on the vertices of a regular space-time grid.
/// Arrays are row-major (j * nx + i); one entry of u/v/p per time level.
struct SampledTrajectory {
    int nx = 0, ny = 0;
    Vec2 lo{0.0, 0.0}, hi{1.0, 1.0};
    std::vector<double> times;
    std::vector<std::vector<double>> u, v, p;
};

SampledTrajectory make_trajectory(Vec2 lo, Vec2 hi, int nx, int ny);

/// Appends one time level by evaluating the callbacks at every grid vertex.
void add_time_level(SampledTrajectory& traj, double t, const VectorField& velocity,
                    const std::function<double(Vec2)>& pressure);

/// Space-time L2 norm of rho du/dt + rho (u.grad)u - nu lap(u) + grad p, with
/// all derivatives taken from tensor-product cubic splines of the samples
/// (bicubic patches in space per time level, cubic in time per vertex).
/// Throws when any axis has fewer than 4 samples.
double residual_norm(const SampledTrajectory& traj, double nu, double rho);

/// Horizontal force on an interior obstacle extracted variationally: the
/// momentum form is applied to the field that extends (1,0) from the obstacle
/// boundary dofs by zero. `dudt` and `u` share the vector dof layout.
double drag_force(const FESpace& V, const FESpace& Q, const std::vector<double>& u,
                  const std::vector<double>& dudt, const std::vector<double>& p, double nu,
                  double rho, const std::function<bool(Vec2)>& on_obstacle,
                  const std::function<Vec2(Vec2)>& body_force = nullptr);

/// One probe along a segment; `inside` is false when the field could not be
/// evaluated there (the CSV row is emitted with nan markers).
struct CrossSectionSample {
    double s = 0.0;  ///< arc parameter in [0,1]
    Vec2 x{0.0, 0.0};
    bool inside = false;
    Vec2 velocity{0.0, 0.0};
};

/// n samples at midpoints of equal subdivisions of [a,b] (n=1: the midpoint).
std::vector<CrossSectionSample> sample_cross_section(
    const std::function<std::optional<Vec2>(Vec2)>& field, Vec2 a, Vec2 b, int n);

void write_cross_section_csv(std::ostream& os, const std::vector<CrossSectionSample>& rows);

}  // namespace nslab
