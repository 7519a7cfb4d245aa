/// @file test_metrics.cpp
/// @brief Unit tests for error norms, spline residual, fitting, drag, CSV.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "nslab/meshgen.hpp"
#include "nslab/metrics.hpp"
#include "nslab/problems.hpp"

using namespace nslab;

namespace {

/// Nodal interpolant of an analytic vector field in the [x; y] layout.
std::vector<double> interpolate(const FESpace& V, const VectorField& f) {
    std::vector<double> out(static_cast<size_t>(2 * V.num_dofs()));
    for (int i = 0; i < V.num_dofs(); ++i) {
        const Vec2 v = f(V.dof_coord(i));
        out[static_cast<size_t>(i)] = v.x;
        out[static_cast<size_t>(i + V.num_dofs())] = v.y;
    }
    return out;
}

}  // namespace

TEST_CASE("l2_error: exact and constant-difference fields") {
    SimMesh mesh = make_box_tris({0, 0}, {1, 1}, 8, 8);
    FESpace V(mesh, 1);
    auto linear = [](Vec2 x) { return Vec2{2.0 * x.x - x.y, 0.5 * x.y}; };
    std::vector<double> u = interpolate(V, linear);
    CHECK(l2_error(V, u, linear, 4) < 1e-13);

    std::vector<double> zero(static_cast<size_t>(2 * V.num_dofs()), 0.0);
    CHECK(l2_error(V, zero, [](Vec2) { return Vec2{0.7, 0.0}; }, 4) == doctest::Approx(0.7));
    // Norm scales linearly with the difference.
    CHECK(l2_error(V, zero, [](Vec2) { return Vec2{1.4, 0.0}; }, 4) == doctest::Approx(1.4));
}

TEST_CASE("l2_error: interpolation of sin is second order") {
    auto wave = [](Vec2 x) { return Vec2{std::sin(2.0 * M_PI * x.x), 0.0}; };
    double err[2];
    int k = 0;
    for (int n : {16, 32}) {
        SimMesh mesh = make_box_tris({0, 0}, {1, 1}, n, n);
        FESpace V(mesh, 1);
        err[k++] = l2_error(V, interpolate(V, wave), wave, 5);
    }
    CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.05));

    // Same study on quads.
    k = 0;
    for (int n : {16, 32}) {
        SimMesh mesh = make_box_quads({0, 0}, {1, 1}, n, n);
        FESpace V(mesh, 1);
        err[k++] = l2_error(V, interpolate(V, wave), wave, 5);
    }
    CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("l2_error on a staggered grid") {
    StaggeredGrid g = make_grid({0, 0}, 16, 16, 1.0 / 16.0);
    MacVelocity v = make_velocity(g);
    CHECK(l2_error(g, v, [](Vec2) { return Vec2{0.7, 0.0}; }) == doctest::Approx(0.7));
    MacVelocity lin = sample_field(g, [](Vec2 p) { return Vec2{p.x, 0.0}; });
    CHECK(l2_error(g, lin, [](Vec2 p) { return Vec2{p.x, 0.0}; }) < 1e-12);
}

TEST_CASE("fit_convergence") {
    CHECK(fit_convergence({{0.1, 1e-2}, {0.05, 2.5e-3}}) == doctest::Approx(2.0));
    std::vector<std::pair<double, double>> cubic;
    for (double h : {0.4, 0.2, 0.1, 0.05}) cubic.push_back({h, 3.0 * h * h * h});
    CHECK(fit_convergence(cubic) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit_convergence({{0.1, 0.3}, {0.05, 0.3}, {0.025, 0.3}}) == doctest::Approx(0.0));
    // Invariance under rescaling of both axes.
    std::vector<std::pair<double, double>> scaled;
    for (auto [h, e] : cubic) scaled.push_back({2.0 * h, 5.0 * e});
    CHECK(fit_convergence(scaled) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK_THROWS_AS(fit_convergence({{0.1, 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(fit_convergence({{0.1, 1.0}, {0.05, 0.0}}), std::invalid_argument);
    CHECK_THROWS_AS(fit_convergence({{0.1, 1.0}, {0.1, 2.0}}), std::invalid_argument);
}

TEST_CASE("natural cubic spline basics") {
    std::vector<double> x{0.0, 0.3, 0.7, 1.1, 1.6};
    std::vector<double> f;
    for (double xi : x) f.push_back(std::sin(3.0 * xi));
    CubicSpline s(x, f);
    for (size_t i = 0; i < x.size(); ++i)
        CHECK(s.value(x[i]) == doctest::Approx(f[i]).epsilon(1e-13));
    // Natural end conditions.
    CHECK(s.second_derivative(x.front()) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.second_derivative(x.back()) == doctest::Approx(0.0).epsilon(1e-12));
    // Linear data is reproduced exactly, including derivatives.
    std::vector<double> g;
    for (double xi : x) g.push_back(2.0 - 3.0 * xi);
    CubicSpline lin(x, g);
    for (double t : {0.1, 0.45, 0.99, 1.35}) {
        CHECK(lin.value(t) == doctest::Approx(2.0 - 3.0 * t).epsilon(1e-13));
        CHECK(lin.derivative(t) == doctest::Approx(-3.0).epsilon(1e-12));
        CHECK(lin.second_derivative(t) == doctest::Approx(0.0).epsilon(1e-12));
    }
    // Queries clamp to the knot range.
    CHECK(lin.value(5.0) == doctest::Approx(lin.value(1.6)));
    // Dense knots approximate a smooth function well mid-span.
    std::vector<double> xs, fs;
    for (int i = 0; i <= 40; ++i) {
        xs.push_back(i / 40.0);
        fs.push_back(std::sin(2.0 * M_PI * xs.back()));
    }
    CubicSpline dense(xs, fs);
    CHECK(std::abs(dense.value(0.5125) - std::sin(2.0 * M_PI * 0.5125)) < 1e-5);
    CHECK(std::abs(dense.derivative(0.5125) - 2.0 * M_PI * std::cos(2.0 * M_PI * 0.5125)) < 1e-3);
}

TEST_CASE("residual metric: zero fields and argument checks") {
    SampledTrajectory traj = make_trajectory({0, 0}, {1, 1}, 8, 8);
    auto zero_v = [](Vec2) { return Vec2{0.0, 0.0}; };
    auto zero_p = [](Vec2) { return 0.0; };
    for (int k = 0; k < 5; ++k) add_time_level(traj, 0.1 * k, zero_v, zero_p);
    CHECK(residual_norm(traj, 0.01, 1.0) == doctest::Approx(0.0));

    SampledTrajectory tiny = make_trajectory({0, 0}, {1, 1}, 3, 8);
    for (int k = 0; k < 5; ++k) add_time_level(tiny, 0.1 * k, zero_v, zero_p);
    CHECK_THROWS_AS(residual_norm(tiny, 0.01, 1.0), std::invalid_argument);
    SampledTrajectory few = make_trajectory({0, 0}, {1, 1}, 8, 8);
    for (int k = 0; k < 3; ++k) add_time_level(few, 0.1 * k, zero_v, zero_p);
    CHECK_THROWS_AS(residual_norm(few, 0.01, 1.0), std::invalid_argument);
}

TEST_CASE("residual metric: decreasing on the exact vortex, pressure-shift invariant") {
    TaylorGreen tg = taylor_green(0.01);
    auto build = [&](int n, double pshift) {
        SampledTrajectory traj = make_trajectory({0, 0}, {1, 1}, n, n);
        const int levels = 17;
        for (int k = 0; k < levels; ++k) {
            const double t = 0.5 * k / (levels - 1);
            add_time_level(
                traj, t, [&](Vec2 x) { return tg.velocity(x, t); },
                [&](Vec2 x) { return tg.pressure(x, t) + pshift; });
        }
        return traj;
    };
    const double r24 = residual_norm(build(24, 0.0), tg.nu, 1.0);
    const double r48 = residual_norm(build(48, 0.0), tg.nu, 1.0);
    CHECK(r24 > 0.0);
    CHECK(r24 / r48 >= 1.5);
    // Constant pressure offset leaves the metric unchanged.
    const double shifted = residual_norm(build(24, 10.0), tg.nu, 1.0);
    CHECK(shifted == doctest::Approx(r24).epsilon(1e-10));
}

TEST_CASE("drag extraction: zero flow, invariances") {
    SimMesh mesh = make_circle_box_quads({{0, 0}, {1, 1}, 12, 12, {0.5, 0.5}, 0.05, 0.12});
    FESpace V(mesh, 2), Q(mesh, 1);
    auto on_circle = [](Vec2 x) { return (x - Vec2{0.5, 0.5}).norm() < 0.05 + 1e-6; };
    const size_t nv = static_cast<size_t>(2 * V.num_dofs());
    std::vector<double> zero(nv, 0.0), zp(static_cast<size_t>(Q.num_dofs()), 0.0);
    CHECK(drag_force(V, Q, zero, zero, zp, 0.1, 1.0, on_circle) == doctest::Approx(0.0));

    // Constant pressure exerts no net horizontal force on a closed obstacle.
    std::vector<double> pc(static_cast<size_t>(Q.num_dofs()), 3.7);
    CHECK(drag_force(V, Q, zero, zero, pc, 0.1, 1.0, on_circle) ==
          doctest::Approx(0.0).epsilon(1e-12));

    // With rho = 0 the extraction is linear in (u, p).
    std::vector<double> u(nv), du(nv, 0.0), p(static_cast<size_t>(Q.num_dofs()));
    for (int i = 0; i < V.num_dofs(); ++i) {
        const Vec2 x = V.dof_coord(i);
        u[static_cast<size_t>(i)] = std::sin(x.x + 2.0 * x.y);
        u[static_cast<size_t>(i + V.num_dofs())] = x.x * x.y;
    }
    for (int i = 0; i < Q.num_dofs(); ++i) p[static_cast<size_t>(i)] = Q.dof_coord(i).x;
    const double f1 = drag_force(V, Q, u, du, p, 0.05, 0.0, on_circle);
    std::vector<double> u2(u), p2(p);
    for (double& x : u2) x *= 3.0;
    for (double& x : p2) x *= 3.0;
    const double f3 = drag_force(V, Q, u2, du, p2, 0.05, 0.0, on_circle);
    CHECK(f3 == doctest::Approx(3.0 * f1).epsilon(1e-10));
    CHECK(f1 != doctest::Approx(0.0));

    // No obstacle dofs selected: zero.
    CHECK(drag_force(V, Q, u, du, p, 0.05, 1.0, [](Vec2) { return false; }) == 0.0);
}

TEST_CASE("cross-section sampling and CSV") {
    auto field = [](Vec2 x) -> std::optional<Vec2> {
        if (x.x > 0.75) return std::nullopt;  // outside marker
        return Vec2{2.0, -1.0};
    };
    auto rows = sample_cross_section(field, {0, 0.5}, {1, 0.5}, 4);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0].s == doctest::Approx(0.125));
    CHECK(rows[0].inside);
    CHECK(rows[0].velocity.x == doctest::Approx(2.0));
    CHECK_FALSE(rows[3].inside);

    auto one = sample_cross_section(field, {0, 0.5}, {1, 0.5}, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].x.x == doctest::Approx(0.5));  // midpoint

    std::ostringstream os;
    write_cross_section_csv(os, rows);
    const std::string csv = os.str();
    CHECK(csv.rfind("s,x,y,u,v\n", 0) == 0);
    CHECK(csv.find("nan,nan") != std::string::npos);
    // Deterministic output: same rows, same bytes.
    std::ostringstream os2;
    write_cross_section_csv(os2, rows);
    CHECK(os.str() == os2.str());
}

TEST_CASE("cross-section through an interpolated analytic field") {
    TaylorGreen tg = taylor_green(0.01);
    SimMesh mesh = make_box_quads({0, 0}, {1, 1}, 16, 16);
    FESpace V(mesh, 2);
    std::vector<double> u = interpolate(V, [&](Vec2 x) { return tg.velocity(x, 0.0); });
    SpatialHash hash(mesh);
    auto field = [&](Vec2 x) { return evaluate_vector_at(V, hash, u, x); };
    auto rows = sample_cross_section(field, {0.0, 0.25}, {1.0, 0.25}, 21);
    for (const auto& r : rows) {
        REQUIRE(r.inside);
        const Vec2 exact = tg.velocity(r.x, 0.0);
        CHECK(r.velocity.x == doctest::Approx(exact.x).epsilon(2e-3));
        CHECK(std::abs(r.velocity.y - exact.y) < 2e-3);
    }
}
