/// @file problems.cpp
/// @brief Benchmark catalog implementation.

#include "nslab/problems.hpp"

#include <cmath>

namespace nslab {

namespace {

constexpr double kPi = 3.14159265358979323846;

/// Smooth inflow ramp: zero at t = 0, monotone, saturating at 1.
double ramp(double t) { return 1.0 - std::exp(-5.0 * t); }

/// Lid ramp matching the cavity driving term.
double lid_ramp(double t) { return std::sin(0.5 * kPi * t); }

/// Compactly supported lid profile, zero outside (0,1).
double bump_profile(double x) {
    if (x <= 0.0 || x >= 1.0) return 0.0;
    return 50.0 * std::exp(-1.0 / (x * (1.0 - x)));
}

Vec2 zero2(Vec2, double) { return {0.0, 0.0}; }

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::FE21_BDF3: return "FE21-BDF3";
        case Method::FE11_SL: return "FE11-SL";
        case Method::FE11_FLIP: return "FE11-FLIP";
        case Method::FD_SL: return "FD-SL";
        case Method::FD_FLIP: return "FD-FLIP";
        case Method::FE11_AB2AM2: return "FE11-AB2AM2";
        case Method::FE21_AB2AM2: return "FE21-AB2AM2";
    }
    return "unknown";
}

Method method_from_string(const std::string& s) {
    for (Method m : all_methods())
        if (s == method_name(m)) return m;
    // Accept underscores as separators too.
    std::string t = s;
    for (char& c : t)
        if (c == '_') c = '-';
    for (Method m : all_methods())
        if (t == method_name(m)) return m;
    throw std::invalid_argument("unknown method: " + s);
}

std::vector<Method> all_methods() {
    return {Method::FE21_BDF3, Method::FE11_SL,     Method::FE11_FLIP,  Method::FD_SL,
            Method::FD_FLIP,   Method::FE11_AB2AM2, Method::FE21_AB2AM2};
}

bool uses_linear_dt(Method m) {
    return m != Method::FE11_AB2AM2 && m != Method::FE21_AB2AM2;
}

// ---------------------------------------------------------------------------
// Closed-form solutions
// ---------------------------------------------------------------------------

Vec2 TaylorGreen::velocity(Vec2 x, double t) const {
    const double e = std::exp(-8.0 * nu * kPi * kPi * t);
    return {std::cos(2.0 * kPi * x.x) * std::sin(2.0 * kPi * x.y) * e,
            -std::sin(2.0 * kPi * x.x) * std::cos(2.0 * kPi * x.y) * e};
}

double TaylorGreen::pressure(Vec2 x, double t) const {
    const double e = std::exp(-16.0 * nu * kPi * kPi * t);
    return -0.25 * (std::cos(4.0 * kPi * x.x) + std::cos(4.0 * kPi * x.y)) * e;
}

Vec2 TaylorGreen::dudt(Vec2 x, double t) const {
    const Vec2 u = velocity(x, t);
    const double a = -8.0 * nu * kPi * kPi;
    return {a * u.x, a * u.y};
}

std::array<std::array<double, 2>, 2> TaylorGreen::grad_velocity(Vec2 x, double t) const {
    const double e = std::exp(-8.0 * nu * kPi * kPi * t);
    const double s1 = std::sin(2.0 * kPi * x.x), c1 = std::cos(2.0 * kPi * x.x);
    const double s2 = std::sin(2.0 * kPi * x.y), c2 = std::cos(2.0 * kPi * x.y);
    const double w = 2.0 * kPi * e;
    return {{{-w * s1 * s2, w * c1 * c2}, {-w * c1 * c2, w * s1 * s2}}};
}

Vec2 TaylorGreen::laplacian(Vec2 x, double t) const {
    const Vec2 u = velocity(x, t);
    const double a = -8.0 * kPi * kPi;
    return {a * u.x, a * u.y};
}

Vec2 TaylorGreen::grad_pressure(Vec2 x, double t) const {
    const double e = std::exp(-16.0 * nu * kPi * kPi * t);
    return {kPi * std::sin(4.0 * kPi * x.x) * e, kPi * std::sin(4.0 * kPi * x.y) * e};
}

Vec2 TaylorGreen::momentum_residual(Vec2 x, double t) const {
    const Vec2 u = velocity(x, t);
    const Vec2 ut = dudt(x, t);
    const auto g = grad_velocity(x, t);
    const Vec2 lap = laplacian(x, t);
    const Vec2 gp = grad_pressure(x, t);
    return {ut.x + u.x * g[0][0] + u.y * g[0][1] - nu * lap.x + gp.x,
            ut.y + u.x * g[1][0] + u.y * g[1][1] - nu * lap.y + gp.y};
}

AnalyticSolution TaylorGreen::solution() const {
    TaylorGreen tg = *this;
    return {[tg](Vec2 x, double t) { return tg.velocity(x, t); },
            [tg](Vec2 x, double t) { return tg.pressure(x, t); }};
}

TaylorGreen taylor_green(double nu) { return TaylorGreen{nu}; }

Analytic3D ethier_steinman(double nu) {
    Analytic3D out;
    out.velocity = [nu](std::array<double, 3> x, double t) -> std::array<double, 3> {
        const double e = std::exp(-nu * t);
        const double x1 = x[0], x2 = x[1], x3 = x[2];
        return {-e * (std::exp(x1) * std::sin(x2 + x3) + std::exp(x3) * std::cos(x1 + x2)),
                -e * (std::exp(x2) * std::sin(x3 + x1) + std::exp(x1) * std::cos(x2 + x3)),
                -e * (std::exp(x3) * std::sin(x1 + x2) + std::exp(x2) * std::cos(x3 + x1))};
    };
    out.pressure = [nu](std::array<double, 3> x, double t) {
        const double e = std::exp(-2.0 * nu * t);
        const double x1 = x[0], x2 = x[1], x3 = x[2];
        return -0.5 * e *
               (std::exp(2.0 * x1) + std::exp(2.0 * x2) + std::exp(2.0 * x3) +
                2.0 * std::sin(x1 + x2) * std::cos(x3 + x1) * std::exp(x2 + x3) +
                2.0 * std::sin(x2 + x3) * std::cos(x1 + x2) * std::exp(x3 + x1) +
                2.0 * std::sin(x3 + x1) * std::cos(x2 + x3) * std::exp(x1 + x2));
    };
    return out;
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

namespace {

/// Boundary tolerance relative to the domain extent.
double edge_tol(const BoxBounds& b) {
    const double size = std::max(b.hi.x - b.lo.x, b.hi.y - b.lo.y);
    return 1e-9 * std::max(1.0, size);
}

/// Membership test for an open (traction-free) right side. The two corners
/// are excluded so wall Dirichlet data wins at the junction nodes.
std::function<bool(Vec2)> open_right_side(const std::shared_ptr<BoxBounds>& bounds) {
    return [bounds](Vec2 x) {
        const double tol = edge_tol(*bounds);
        return x.x > bounds->hi.x - tol && x.y > bounds->lo.y + tol && x.y < bounds->hi.y - tol;
    };
}

BenchmarkProblem box_problem(const std::string& name) {
    BenchmarkProblem p;
    p.name = name;
    p.domain = DomainKind::Box;
    *p.bounds = {{0.0, 0.0}, {1.0, 1.0}};
    p.rho = 1.0;
    p.body_force = zero2;
    p.neumann_data = zero2;
    p.u0 = [](Vec2) { return Vec2{0.0, 0.0}; };
    return p;
}

/// Driven cavity with a configurable lid profile f(x) and time ramp r(t).
BenchmarkProblem cavity(const std::string& name, std::function<double(double)> profile,
                        std::function<double(double)> time_ramp) {
    BenchmarkProblem p = box_problem(name);
    p.nu = 0.1;
    p.T = 2.0;
    p.dt_c1 = 0.1;
    p.dt_c2 = 0.125;
    p.dt_c3 = 0.0625;
    auto bounds = p.bounds;
    p.dirichlet = [bounds, profile, time_ramp](Vec2 x, double t) -> Vec2 {
        if (x.y > bounds->hi.y - edge_tol(*bounds)) return {profile(x.x) * time_ramp(t), 0.0};
        return {0.0, 0.0};
    };
    return p;
}

}  // namespace

BenchmarkProblem catalog(const std::string& name, const CatalogOverrides& ov) {
    BenchmarkProblem p;
    if (name == "driven_cavity") {
        p = cavity(name, [](double) { return 1.0; }, lid_ramp);
    } else if (name == "driven_cavity_disc") {
        // Constant lid: the data disagrees with the zero initial condition at
        // t = 0 on purpose; used to study loss of regularity.
        p = cavity(name, [](double) { return 1.0; }, [](double) { return 1.0; });
        p.incompatible_bc = true;
    } else if (name == "driven_cavity_c0") {
        p = cavity(name, [](double x) { return 4.0 * (1.0 - x) * x; }, lid_ramp);
    } else if (name == "driven_cavity_smooth") {
        p = cavity(name, bump_profile, lid_ramp);
    } else if (name == "open_cavity") {
        p = box_problem(name);
        p.nu = 0.001;
        p.T = 6.0;
        p.dt_c1 = 0.2;
        p.dt_c2 = 0.5;
        p.dt_c3 = 0.5;
        auto bounds = p.bounds;
        p.dirichlet = [bounds](Vec2 x, double t) -> Vec2 {
            if (x.x < bounds->lo.x + edge_tol(*bounds)) return {ramp(t), 0.0};
            return {0.0, 0.0};
        };
        p.is_neumann = open_right_side(bounds);
    } else if (name == "vortex_street") {
        p = box_problem(name);
        p.domain = DomainKind::ChannelWithCylinder;
        *p.bounds = {{0.0, 0.0}, {2.2, 0.41}};
        p.circle_center = {0.2, 0.2};
        p.circle_radius = 0.05;
        p.nu = 0.001;
        p.T = 6.0;
        p.dt_c1 = 0.29;
        p.dt_c2 = 0.082;
        p.dt_c3 = 0.082;
        auto bounds = p.bounds;
        p.dirichlet = [bounds](Vec2 x, double t) -> Vec2 {
            if (x.x < bounds->lo.x + edge_tol(*bounds))
                return {6.0 * ramp(t) * (0.41 - x.y) * x.y / 0.1681, 0.0};
            return {0.0, 0.0};
        };
        p.is_neumann = open_right_side(bounds);
        const Vec2 c = p.circle_center;
        const double r = p.circle_radius;
        p.solid_sdf = [c, r](Vec2 x) { return r - (x - c).norm(); };
    } else if (name == "drag") {
        p = box_problem(name);
        p.domain = DomainKind::BoxWithCircle;
        p.circle_center = {0.5, 0.5};
        p.circle_radius = 0.05;
        p.nu = 0.1;
        p.T = 0.5;
        p.dt_c1 = 0.12;
        p.dt_c2 = 0.014;
        p.dt_c3 = 0.014;
        const Vec2 c = p.circle_center;
        const double r = p.circle_radius;
        p.dirichlet = [c, r](Vec2 x, double t) -> Vec2 {
            if ((x - c).norm() < r + 1e-6) return {0.0, 0.0};  // obstacle at rest
            return {ramp(t), 0.0};                             // outer square
        };
        p.solid_sdf = [c, r](Vec2 x) { return r - (x - c).norm(); };
    } else if (name == "taylor_green") {
        p = box_problem(name);
        p.nu = 0.01;
        p.T = 0.5;
        p.dt_c1 = 0.1;
        p.dt_c2 = 0.1;
        p.dt_c3 = 0.1;
        if (ov.nu) p.nu = *ov.nu;
        const TaylorGreen tg = taylor_green(p.nu);
        p.analytic = tg.solution();
        p.dirichlet = p.analytic->velocity;
        p.u0 = [tg](Vec2 x) { return tg.velocity(x, 0.0); };
    } else if (name == "airfoil") {
        p = box_problem(name);
        p.domain = DomainKind::ExternalMesh;
        *p.bounds = {{-0.5, -0.5}, {1.5, 0.5}};  // replaced by the mesh box on load
        p.nu = 0.0002;
        p.T = 4.0;
        p.dt_c1 = 0.036;
        p.dt_c2 = 0.0013;
        p.dt_c3 = 0.0013;
        auto bounds = p.bounds;
        auto on_outer_box = [bounds](Vec2 x) {
            const double tol = edge_tol(*bounds);
            return x.x < bounds->lo.x + tol || x.x > bounds->hi.x - tol ||
                   x.y < bounds->lo.y + tol || x.y > bounds->hi.y - tol;
        };
        // Free-stream velocity on the outer frame, outflow on the right,
        // no-slip on the interior (airfoil) boundary.
        p.dirichlet = [on_outer_box](Vec2 x, double t) -> Vec2 {
            if (on_outer_box(x)) return {ramp(t), 0.0};
            return {0.0, 0.0};
        };
        p.is_neumann = open_right_side(bounds);
    } else {
        throw std::invalid_argument("unknown benchmark problem: " + name);
    }
    if (ov.nu && name != "taylor_green") p.nu = *ov.nu;
    if (ov.T) p.T = *ov.T;
    if (ov.mesh_file) p.mesh_file = *ov.mesh_file;
    return p;
}

std::vector<std::string> catalog_names() {
    return {"driven_cavity", "driven_cavity_disc", "driven_cavity_c0", "driven_cavity_smooth",
            "open_cavity",   "vortex_street",      "drag",             "taylor_green",
            "airfoil"};
}

DtRule dt_rule_for(const BenchmarkProblem& problem, Method m) {
    if (uses_linear_dt(m)) return {DtRule::Kind::Linear, problem.dt_c1};
    const double c = m == Method::FE11_AB2AM2 ? problem.dt_c2 : problem.dt_c3;
    return {DtRule::Kind::Quadratic, c};
}

double dt_for(const BenchmarkProblem& problem, Method m, double h) {
    return dt_rule_for(problem, m)(h);
}

}  // namespace nslab
