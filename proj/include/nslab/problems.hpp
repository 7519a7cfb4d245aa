/// @file problems.hpp
/// @brief Benchmark problem catalog: domains, boundary data, analytic
///        solutions, and time-step rules.

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nslab/mesh.hpp"

namespace nslab {

/// Solver identifiers used throughout the benchmark suite.
enum class Method {
    FE21_BDF3,    ///< coupled Taylor-Hood FEM with third-order BDF
    FE11_SL,      ///< equal-order FEM splitting, semi-Lagrangian advection
    FE11_FLIP,    ///< equal-order FEM splitting, particle (FLIP) advection
    FD_SL,        ///< staggered finite differences, semi-Lagrangian advection
    FD_FLIP,      ///< staggered finite differences, particle advection
    FE11_AB2AM2,  ///< explicit predictor-corrector, equal-order FEM
    FE21_AB2AM2,  ///< explicit predictor-corrector, Taylor-Hood spaces
};

const char* method_name(Method m);
Method method_from_string(const std::string& s);
std::vector<Method> all_methods();

/// True for methods advanced with the third-order coupled scheme or a
/// splitting scheme (linear dt rule); false for the explicit
/// predictor-corrector pair (quadratic dt rule).
bool uses_linear_dt(Method m);

/// Closed-form solution pair for error measurement and Dirichlet data.
struct AnalyticSolution {
    std::function<Vec2(Vec2, double)> velocity;
    std::function<double(Vec2, double)> pressure;
};

/// Planar vortex array with exponential decay; an exact solution of the
/// incompressible equations on the unit square with rho = 1 and no forcing.
struct TaylorGreen {
    double nu = 0.01;

    Vec2 velocity(Vec2 x, double t) const;
    double pressure(Vec2 x, double t) const;
    Vec2 dudt(Vec2 x, double t) const;
    /// Row-major gradient: m[i][j] = d u_i / d x_j.
    std::array<std::array<double, 2>, 2> grad_velocity(Vec2 x, double t) const;
    Vec2 laplacian(Vec2 x, double t) const;
    Vec2 grad_pressure(Vec2 x, double t) const;
    /// du/dt + (u.grad)u - nu lap(u) + grad p with rho = 1, zero forcing.
    Vec2 momentum_residual(Vec2 x, double t) const;

    AnalyticSolution solution() const;
};

TaylorGreen taylor_green(double nu);

/// Exact three-dimensional solution (evaluator only; used to validate the
/// residual metric against an independent reference).
struct Analytic3D {
    std::function<std::array<double, 3>(std::array<double, 3>, double)> velocity;
    std::function<double(std::array<double, 3>, double)> pressure;
};

Analytic3D ethier_steinman(double nu);

/// dt(h) = constant * h (linear) or constant * h^2 (quadratic).
struct DtRule {
    enum class Kind { Linear, Quadratic };
    Kind kind = Kind::Linear;
    double constant = 0.1;

    double operator()(double h) const {
        return kind == Kind::Linear ? constant * h : constant * h * h;
    }
};

enum class DomainKind { Box, BoxWithCircle, ChannelWithCylinder, ExternalMesh };

/// Axis-aligned bounds shared with boundary-condition closures so external
/// meshes can rebind them after loading.
struct BoxBounds {
    Vec2 lo{0.0, 0.0};
    Vec2 hi{1.0, 1.0};
};

/// A fully specified benchmark: domain, material constants, boundary data,
/// initial condition, optional exact solution, and time-step constants.
struct BenchmarkProblem {
    std::string name;
    DomainKind domain = DomainKind::Box;
    std::shared_ptr<BoxBounds> bounds = std::make_shared<BoxBounds>();
    Vec2 circle_center{0.0, 0.0};
    double circle_radius = 0.0;
    std::string mesh_file;  ///< only for DomainKind::ExternalMesh

    double nu = 0.1;
    double rho = 1.0;
    double T = 1.0;

    /// Dirichlet data d(x,t); valid on the whole boundary except the part
    /// selected by `is_neumann`.
    std::function<Vec2(Vec2, double)> dirichlet;
    /// Natural (traction-like) data g(x,t) on the Neumann part.
    std::function<Vec2(Vec2, double)> neumann_data;
    /// Membership test for the Neumann part of the boundary (empty: none).
    std::function<bool(Vec2)> is_neumann;
    /// Body force b(x,t) (zero for every catalog entry).
    std::function<Vec2(Vec2, double)> body_force;
    /// Initial velocity.
    std::function<Vec2(Vec2)> u0;
    /// Signed distance of the embedded solid (positive inside the obstacle);
    /// empty when the domain has no immersed geometry.
    std::function<double(Vec2)> solid_sdf;

    std::optional<AnalyticSolution> analytic;

    /// Time-step constants: linear rule C1*h for the coupled/splitting
    /// methods, quadratic rules C2*h^2 / C3*h^2 for the explicit pair.
    double dt_c1 = 0.1;
    double dt_c2 = 0.1;
    double dt_c3 = 0.1;

    /// The constant-lid cavity variant keeps boundary data that disagrees
    /// with the initial condition at t = 0; every other entry is compatible.
    bool incompatible_bc = false;
};

/// Optional parameter overrides applied while building a catalog entry
/// (analytic data and initial conditions are rebuilt consistently).
struct CatalogOverrides {
    std::optional<double> nu;
    std::optional<double> T;
    std::optional<std::string> mesh_file;
};

BenchmarkProblem catalog(const std::string& name, const CatalogOverrides& ov = {});
std::vector<std::string> catalog_names();

double dt_for(const BenchmarkProblem& problem, Method m, double h);
DtRule dt_rule_for(const BenchmarkProblem& problem, Method m);

}  // namespace nslab
