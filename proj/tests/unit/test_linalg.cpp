/// @file test_linalg.cpp
/// @brief Unit tests for CSR storage and the CG / LU / GMRES solvers.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "nslab/linalg.hpp"

using namespace nslab;

TEST_CASE("csr build sums duplicates and sorts columns") {
    std::vector<Triplet> t = {{0, 1, 5.0}, {0, 0, 1.0}, {0, 0, 2.0}, {1, 1, 3.0}};
    SparseMatrix a = SparseMatrix::from_triplets(2, 2, t);
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 2);
    CHECK(a.nonzeros() == 3);
    CHECK(a.row_cols(0)[0] == 0);
    CHECK(a.row_cols(0)[1] == 1);
    CHECK(a.row_vals(0)[0] == doctest::Approx(3.0));  // 1 + 2 summed
    CHECK(a.row_vals(0)[1] == doctest::Approx(5.0));
    CHECK(a.row_vals(1)[0] == doctest::Approx(3.0));
}

TEST_CASE("csr rejects out-of-range indices") {
    CHECK_THROWS_AS(SparseMatrix::from_triplets(2, 2, {{2, 0, 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(SparseMatrix::from_triplets(2, 2, {{0, -1, 1.0}}), std::invalid_argument);
}

TEST_CASE("matvec identity and linearity") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    const int n = 40;
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) {
        t.push_back({i, i, 2.0 + u(rng)});
        t.push_back({i, (i + 3) % n, u(rng)});
        t.push_back({i, (i + 17) % n, u(rng)});
    }
    SparseMatrix a = SparseMatrix::from_triplets(n, n, t);

    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) { x[i] = u(rng); y[i] = u(rng); }
    // A(ax + by) == a*Ax + b*Ay
    const double ca = 1.7, cb = -0.4;
    std::vector<double> z(n);
    for (int i = 0; i < n; ++i) z[i] = ca * x[i] + cb * y[i];
    std::vector<double> lhs = a.multiply(z);
    std::vector<double> ax = a.multiply(x), ay = a.multiply(y);
    for (int i = 0; i < n; ++i)
        CHECK(lhs[i] == doctest::Approx(ca * ax[i] + cb * ay[i]).epsilon(1e-12));

    // identity matrix reproduces input
    std::vector<Triplet> ti;
    for (int i = 0; i < n; ++i) ti.push_back({i, i, 1.0});
    SparseMatrix id = SparseMatrix::from_triplets(n, n, ti);
    std::vector<double> ix = id.multiply(x);
    for (int i = 0; i < n; ++i) CHECK(ix[i] == doctest::Approx(x[i]));
}

TEST_CASE("cg solves 2x2 spd system") {
    SparseMatrix a = SparseMatrix::from_triplets(
        2, 2, {{0, 0, 4.0}, {0, 1, 1.0}, {1, 0, 1.0}, {1, 1, 3.0}});
    std::vector<double> b = {1.0, 2.0}, x;
    SolveReport rep = solve_spd(a, b, x);
    CHECK(rep.converged);
    CHECK(x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-9));
    CHECK(x[1] == doctest::Approx(7.0 / 11.0).epsilon(1e-9));
}

TEST_CASE("cg on identity converges in one iteration") {
    const int n = 25;
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) t.push_back({i, i, 1.0});
    SparseMatrix a = SparseMatrix::from_triplets(n, n, t);
    std::vector<double> b(n, 0.0);
    b[3] = 2.0;
    b[20] = -1.0;
    std::vector<double> x;
    SolveReport rep = solve_spd(a, b, x);
    CHECK(rep.converged);
    CHECK(rep.iterations == 1);
    for (int i = 0; i < n; ++i) CHECK(x[i] == doctest::Approx(b[i]));
}

TEST_CASE("cg zero rhs returns zero with absolute fallback") {
    SparseMatrix a = SparseMatrix::from_triplets(2, 2, {{0, 0, 2.0}, {1, 1, 2.0}});
    std::vector<double> b = {0.0, 0.0}, x;
    SolveReport rep = solve_spd(a, b, x);
    CHECK(rep.converged);
    CHECK(norm2(x) == doctest::Approx(0.0));
}

TEST_CASE("cg with mean-zero projection matches pseudoinverse on singular laplacian") {
    // Path-graph Laplacian P4, b = (1,0,0,-1): minimum-norm solution worked
    // out by elimination + mean-zero closure is (1.5, 0.5, -0.5, -1.5).
    SparseMatrix l = SparseMatrix::from_triplets(
        4, 4,
        {{0, 0, 1.0}, {0, 1, -1.0},
         {1, 0, -1.0}, {1, 1, 2.0}, {1, 2, -1.0},
         {2, 1, -1.0}, {2, 2, 2.0}, {2, 3, -1.0},
         {3, 2, -1.0}, {3, 3, 1.0}});
    std::vector<double> b = {1.0, 0.0, 0.0, -1.0}, x;
    CgOptions opts;
    opts.project_mean_zero = true;
    SolveReport rep = solve_spd(l, b, x, opts);
    CHECK(rep.converged);
    CHECK(x[0] == doctest::Approx(1.5).epsilon(1e-9));
    CHECK(x[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(x[2] == doctest::Approx(-0.5).epsilon(1e-9));
    CHECK(x[3] == doctest::Approx(-1.5).epsilon(1e-9));
    // Independent oracle: dense pseudoinverse of the same matrix.
    Eigen::Matrix4d ld;
    ld << 1, -1, 0, 0, -1, 2, -1, 0, 0, -1, 2, -1, 0, 0, -1, 1;
    Eigen::Vector4d bd(1, 0, 0, -1);
    Eigen::Vector4d xs = ld.completeOrthogonalDecomposition().solve(bd);
    for (int i = 0; i < 4; ++i) CHECK(x[i] == doctest::Approx(xs(i)).epsilon(1e-9));
    double mean = (x[0] + x[1] + x[2] + x[3]) / 4.0;
    CHECK(std::abs(mean) < 1e-12);
}

TEST_CASE("cg reports non-convergence when capped") {
    // Moderately conditioned system, max_iterations=1 cannot converge.
    const int n = 50;
    std::vector<Triplet> t;
    for (int i = 0; i < n; ++i) {
        t.push_back({i, i, 2.0});
        if (i > 0) { t.push_back({i, i - 1, -1.0}); t.push_back({i - 1, i, -1.0}); }
    }
    SparseMatrix a = SparseMatrix::from_triplets(n, n, t);
    std::vector<double> b(n, 1.0), x;
    CgOptions opts;
    opts.max_iterations = 1;
    SolveReport rep = solve_spd(a, b, x, opts);
    CHECK_FALSE(rep.converged);
    CHECK(rep.residual > 0.0);
}

TEST_CASE("solve_general diagonal and permuted systems") {
    SparseMatrix d = SparseMatrix::from_triplets(3, 3, {{0, 0, 2.0}, {1, 1, 4.0}, {2, 2, 8.0}});
    std::vector<double> b = {2.0, 4.0, 16.0}, x;
    SolveReport rep = solve_general(d, b, x);
    CHECK(rep.converged);
    CHECK(rep.method == "lu");
    CHECK(x[0] == doctest::Approx(1.0));
    CHECK(x[1] == doctest::Approx(1.0));
    CHECK(x[2] == doctest::Approx(2.0));

    // Row-permuted identity: x recovers the permuted rhs exactly.
    SparseMatrix p = SparseMatrix::from_triplets(3, 3, {{0, 2, 1.0}, {1, 0, 1.0}, {2, 1, 1.0}});
    std::vector<double> bp = {5.0, 6.0, 7.0}, xp;
    rep = solve_general(p, bp, xp);
    CHECK(rep.converged);
    CHECK(xp[0] == doctest::Approx(6.0));
    CHECK(xp[1] == doctest::Approx(7.0));
    CHECK(xp[2] == doctest::Approx(5.0));
}

TEST_CASE("solve_general agrees with dense lu oracle for small systems") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    const int n = 150;
    std::vector<Triplet> t;
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, n);
    auto put = [&](int i, int j, double v) {
        t.push_back({i, j, v});
        dense(i, j) += v;
    };
    for (int i = 0; i < n; ++i) {
        put(i, i, 4.0 + u(rng));
        if (i > 0) put(i, i - 1, -1.0 + 0.3 * u(rng));
        if (i + 1 < n) put(i, i + 1, -1.4 + 0.3 * u(rng));
        put(i, (i * 7 + 3) % n, 0.2 * u(rng));
    }
    SparseMatrix a = SparseMatrix::from_triplets(n, n, t);
    std::vector<double> b(n), x;
    for (int i = 0; i < n; ++i) b[i] = u(rng);
    SolveReport rep = solve_general(a, b, x);
    CHECK(rep.converged);
    Eigen::VectorXd bd = Eigen::Map<Eigen::VectorXd>(b.data(), n);
    Eigen::VectorXd xd = dense.fullPivLu().solve(bd);
    for (int i = 0; i < n; ++i) CHECK(std::abs(x[i] - xd(i)) < 1e-10);
}

TEST_CASE("gmres path solves convection-diffusion above direct threshold") {
    // Upwinded 2D convection-diffusion on a 55x55 grid (3025 unknowns).
    const int m = 55, n = m * m;
    auto idx = [&](int i, int j) { return j * m + i; };
    std::vector<Triplet> t;
    const double c = 1.5;  // convection strength (makes A nonsymmetric)
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < m; ++i) {
            int k = idx(i, j);
            t.push_back({k, k, 4.0 + c});
            if (i > 0) t.push_back({k, idx(i - 1, j), -1.0 - c});
            if (i + 1 < m) t.push_back({k, idx(i + 1, j), -1.0});
            if (j > 0) t.push_back({k, idx(i, j - 1), -1.0});
            if (j + 1 < m) t.push_back({k, idx(i, j + 1), -1.0});
        }
    }
    SparseMatrix a = SparseMatrix::from_triplets(n, n, t);
    std::vector<double> x_true(n);
    for (int k = 0; k < n; ++k) x_true[k] = std::sin(0.01 * k) + 0.5;
    std::vector<double> b = a.multiply(x_true), x;
    GeneralOptions opts;
    opts.direct_threshold = 100;  // force the GMRES leg
    opts.tol = 1e-12;
    SolveReport rep = solve_general(a, b, x, opts);
    CHECK(rep.method == "gmres");
    CHECK(rep.converged);
    double err = 0.0;
    for (int k = 0; k < n; ++k) err = std::max(err, std::abs(x[k] - x_true[k]));
    CHECK(err < 1e-8);
}

TEST_CASE("gmres reports failure when iteration budget is too small") {
    const int m = 40, n = m * m;
    std::vector<Triplet> t;
    auto idx = [&](int i, int j) { return j * m + i; };
    for (int j = 0; j < m; ++j)
        for (int i = 0; i < m; ++i) {
            int k = idx(i, j);
            t.push_back({k, k, 4.0});
            if (i > 0) t.push_back({k, idx(i - 1, j), -1.0});
            if (i + 1 < m) t.push_back({k, idx(i + 1, j), -1.0});
            if (j > 0) t.push_back({k, idx(i, j - 1), -1.0});
            if (j + 1 < m) t.push_back({k, idx(i, j + 1), -1.0});
        }
    SparseMatrix a = SparseMatrix::from_triplets(n, n, t);
    std::vector<double> b(n, 1.0), x;
    GeneralOptions opts;
    opts.direct_threshold = 10;
    opts.max_iterations = 2;  // cannot converge in two Krylov vectors
    opts.tol = 1e-14;
    SolveReport rep = solve_general(a, b, x, opts);
    CHECK_FALSE(rep.converged);
    CHECK(rep.residual > 0.0);
}

TEST_CASE("sparse utility products") {
    // A = [[1,2],[0,3]], d = (2,1): A diag(d) A^T = [[6,6],[6,9]].
    SparseMatrix a = SparseMatrix::from_triplets(2, 2, {{0, 0, 1.0}, {0, 1, 2.0}, {1, 1, 3.0}});
    SparseMatrix g = SparseMatrix::scaled_gram(a, {2.0, 1.0});
    CHECK(g.multiply({1.0, 0.0})[0] == doctest::Approx(6.0));
    CHECK(g.multiply({1.0, 0.0})[1] == doctest::Approx(6.0));
    CHECK(g.multiply({0.0, 1.0})[0] == doctest::Approx(6.0));
    CHECK(g.multiply({0.0, 1.0})[1] == doctest::Approx(9.0));

    SparseMatrix at = a.transposed();
    CHECK(at.multiply({1.0, 1.0})[0] == doctest::Approx(1.0));
    CHECK(at.multiply({1.0, 1.0})[1] == doctest::Approx(5.0));

    SparseMatrix s = SparseMatrix::add(a, a, -1.0);
    CHECK(norm2(s.multiply({3.0, -2.0})) == doctest::Approx(0.0));

    SparseMatrix p = SparseMatrix::multiply(a, at);  // A A^T = [[5,6],[6,9]]
    CHECK(p.multiply({1.0, 0.0})[0] == doctest::Approx(5.0));
    CHECK(p.multiply({0.0, 1.0})[0] == doctest::Approx(6.0));
}

TEST_CASE("identity row replacement for dirichlet handling") {
    SparseMatrix a = SparseMatrix::from_triplets(
        3, 3, {{0, 0, 2.0}, {0, 1, 1.0}, {1, 0, 1.0}, {1, 1, 2.0}, {1, 2, 1.0}, {2, 1, 1.0}, {2, 2, 2.0}});
    a.set_identity_row(1);
    std::vector<double> y = a.multiply({1.0, 1.0, 1.0});
    CHECK(y[1] == doctest::Approx(1.0));
    CHECK(y[0] == doctest::Approx(3.0));
}
