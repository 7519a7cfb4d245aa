/// @file metrics.cpp
/// @brief Error norms, spline residual metric, convergence fitting, drag.

#include "nslab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nslab {

namespace {

/// Jacobian determinant of the reference-to-physical map at (xi, eta).
double jacobian_det(const SimMesh& mesh, int e, double xi, double eta) {
    const Element& el = mesh.elements()[static_cast<size_t>(e)];
    const auto& V = mesh.vertices();
    if (el.nv == 3) {
        const Vec2 a = V[static_cast<size_t>(el.v[0])], b = V[static_cast<size_t>(el.v[1])],
                   c = V[static_cast<size_t>(el.v[2])];
        return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    }
    const Vec2 v0 = V[static_cast<size_t>(el.v[0])], v1 = V[static_cast<size_t>(el.v[1])],
               v2 = V[static_cast<size_t>(el.v[2])], v3 = V[static_cast<size_t>(el.v[3])];
    const Vec2 dxi{(1 - eta) * (v1.x - v0.x) + eta * (v2.x - v3.x),
                   (1 - eta) * (v1.y - v0.y) + eta * (v2.y - v3.y)};
    const Vec2 deta{(1 - xi) * (v3.x - v0.x) + xi * (v2.x - v1.x),
                    (1 - xi) * (v3.y - v0.y) + xi * (v2.y - v1.y)};
    return dxi.x * deta.y - dxi.y * deta.x;
}

QuadratureRule rule_for_degree(const SimMesh& mesh, int e, int degree) {
    const bool quad = mesh.elements()[static_cast<size_t>(e)].nv == 4;
    const int d = degree <= 2 ? 2 : 4;
    return quad ? quad_quadrature(d) : triangle_quadrature(d);
}

/// Nodes and weights of n-point Gauss-Legendre on [0,1].
void gauss01(int n, std::vector<double>& x, std::vector<double>& w) {
    switch (n) {
        case 1:
            x = {0.5};
            w = {1.0};
            return;
        case 2: {
            const double a = 0.5 / std::sqrt(3.0);
            x = {0.5 - a, 0.5 + a};
            w = {0.5, 0.5};
            return;
        }
        case 3: {
            const double a = 0.5 * std::sqrt(3.0 / 5.0);
            x = {0.5 - a, 0.5, 0.5 + a};
            w = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
            return;
        }
        default: {  // 4-point
            const double a = 0.5 * std::sqrt(3.0 / 7.0 - 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
            const double b = 0.5 * std::sqrt(3.0 / 7.0 + 2.0 / 7.0 * std::sqrt(6.0 / 5.0));
            const double wa = (18.0 + std::sqrt(30.0)) / 72.0;
            const double wb = (18.0 - std::sqrt(30.0)) / 72.0;
            x = {0.5 - b, 0.5 - a, 0.5 + a, 0.5 + b};
            w = {wb, wa, wa, wb};
            return;
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// L2 errors
// ---------------------------------------------------------------------------

double l2_error(const FESpace& V, const std::vector<double>& u, const VectorField& ref,
                int quadrature_degree) {
    const SimMesh& mesh = V.mesh();
    double acc = 0.0;
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const QuadratureRule rule = rule_for_degree(mesh, e, quadrature_degree);
        for (int q = 0; q < rule.size(); ++q) {
            const double xi = rule.xi[static_cast<size_t>(q)], eta = rule.eta[static_cast<size_t>(q)];
            const Vec2 x = mesh.map_to_physical(e, xi, eta);
            const Vec2 uh = evaluate_vector(V, u, e, xi, eta);
            const Vec2 ur = ref(x);
            const double dx = uh.x - ur.x, dy = uh.y - ur.y;
            acc += rule.w[static_cast<size_t>(q)] * std::abs(jacobian_det(mesh, e, xi, eta)) *
                   (dx * dx + dy * dy);
        }
    }
    return std::sqrt(acc);
}

double l2_error(const StaggeredGrid& grid, const MacVelocity& vel, const VectorField& ref,
                int points_per_axis) {
    std::vector<double> gx, gw;
    gauss01(std::clamp(points_per_axis, 1, 4), gx, gw);
    const double cell_area = grid.h * grid.h;
    double acc = 0.0;
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            if (!grid.fluid(i, j)) continue;
            for (size_t a = 0; a < gx.size(); ++a)
                for (size_t b = 0; b < gx.size(); ++b) {
                    const Vec2 x{grid.origin.x + (i + gx[a]) * grid.h,
                                 grid.origin.y + (j + gx[b]) * grid.h};
                    const Vec2 uh = sample_velocity(grid, vel, x);
                    const Vec2 ur = ref(x);
                    const double dx = uh.x - ur.x, dy = uh.y - ur.y;
                    acc += gw[a] * gw[b] * cell_area * (dx * dx + dy * dy);
                }
        }
    return std::sqrt(acc);
}

double fit_convergence(const std::vector<std::pair<double, double>>& h_and_e) {
    if (h_and_e.size() < 2) throw std::invalid_argument("fit_convergence: need at least 2 pairs");
    double sx = 0, sy = 0;
    for (auto [h, e] : h_and_e) {
        if (h <= 0.0 || e <= 0.0)
            throw std::invalid_argument("fit_convergence: non-positive sample");
        sx += std::log(h);
        sy += std::log(e);
    }
    const double n = static_cast<double>(h_and_e.size());
    const double mx = sx / n, my = sy / n;
    double num = 0, den = 0;
    for (auto [h, e] : h_and_e) {
        const double dx = std::log(h) - mx;
        num += dx * (std::log(e) - my);
        den += dx * dx;
    }
    if (den == 0.0) throw std::invalid_argument("fit_convergence: identical h values");
    return num / den;
}

// ---------------------------------------------------------------------------
// Natural cubic splines
// ---------------------------------------------------------------------------

namespace {

/// Solves the natural-spline moment system for knots x and values f
/// (general spacing); writes n second-derivative moments to M.
void spline_moments(const std::vector<double>& x, const double* f, int n, double* M) {
    if (n < 2) throw std::invalid_argument("spline: need at least 2 knots");
    M[0] = M[n - 1] = 0.0;
    if (n == 2) return;
    const int m = n - 2;  // interior unknowns
    std::vector<double> diag(static_cast<size_t>(m)), rhs(static_cast<size_t>(m)),
        upper(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double h0 = x[static_cast<size_t>(i + 1)] - x[static_cast<size_t>(i)];
        const double h1 = x[static_cast<size_t>(i + 2)] - x[static_cast<size_t>(i + 1)];
        diag[static_cast<size_t>(i)] = 2.0 * (h0 + h1);
        upper[static_cast<size_t>(i)] = h1;
        rhs[static_cast<size_t>(i)] = 6.0 * ((f[i + 2] - f[i + 1]) / h1 - (f[i + 1] - f[i]) / h0);
    }
    // Thomas: lower entries equal h0 of the next row.
    for (int i = 1; i < m; ++i) {
        const double lower = x[static_cast<size_t>(i + 1)] - x[static_cast<size_t>(i)];
        const double w = lower / diag[static_cast<size_t>(i - 1)];
        diag[static_cast<size_t>(i)] -= w * upper[static_cast<size_t>(i - 1)];
        rhs[static_cast<size_t>(i)] -= w * rhs[static_cast<size_t>(i - 1)];
    }
    M[m] = rhs[static_cast<size_t>(m - 1)] / diag[static_cast<size_t>(m - 1)];
    for (int i = m - 2; i >= 0; --i)
        M[i + 1] = (rhs[static_cast<size_t>(i)] - upper[static_cast<size_t>(i)] * M[i + 2]) /
                   diag[static_cast<size_t>(i)];
}

/// Prefactored natural-spline solver for a fixed uniform axis; solves many
/// right-hand sides with strided access.
class UniformSpline {
  public:
    UniformSpline() = default;
    UniformSpline(int n, double h) : n_(n), h_(h) {
        const int m = n - 2;
        diag_.resize(static_cast<size_t>(std::max(m, 0)));
        for (int i = 0; i < m; ++i) {
            double d = 4.0 * h;
            if (i > 0) d -= h * (h / diag_[static_cast<size_t>(i - 1)]);
            diag_[static_cast<size_t>(i)] = d;
        }
    }

    /// f and M use the given stride; rhs scratch must hold n-2 doubles.
    void moments(const double* f, long long fstride, double* M, long long mstride,
                 double* rhs) const {
        M[0] = M[static_cast<long long>(n_ - 1) * mstride] = 0.0;
        const int m = n_ - 2;
        if (m <= 0) return;
        for (int i = 0; i < m; ++i)
            rhs[i] = 6.0 *
                     (f[(i + 2) * fstride] - 2.0 * f[(i + 1) * fstride] + f[i * fstride]) / h_;
        for (int i = 1; i < m; ++i) rhs[i] -= (h_ / diag_[static_cast<size_t>(i - 1)]) * rhs[i - 1];
        M[static_cast<long long>(m) * mstride] = rhs[m - 1] / diag_[static_cast<size_t>(m - 1)];
        for (int i = m - 2; i >= 0; --i)
            M[static_cast<long long>(i + 1) * mstride] =
                (rhs[i] - h_ * M[static_cast<long long>(i + 2) * mstride]) /
                diag_[static_cast<size_t>(i)];
    }

  private:
    int n_ = 0;
    double h_ = 1.0;
    std::vector<double> diag_;
};

}  // namespace

CubicSpline::CubicSpline(std::vector<double> x, std::vector<double> f)
    : x_(std::move(x)), f_(std::move(f)) {
    if (x_.size() != f_.size()) throw std::invalid_argument("spline: size mismatch");
    m_.resize(x_.size());
    spline_moments(x_, f_.data(), static_cast<int>(x_.size()), m_.data());
}

namespace {
int spline_interval(const std::vector<double>& x, double& t) {
    t = std::clamp(t, x.front(), x.back());
    int k = static_cast<int>(std::upper_bound(x.begin(), x.end(), t) - x.begin()) - 1;
    return std::clamp(k, 0, static_cast<int>(x.size()) - 2);
}
}  // namespace

double CubicSpline::value(double t) const {
    const int k = spline_interval(x_, t);
    const double h = x_[static_cast<size_t>(k + 1)] - x_[static_cast<size_t>(k)];
    const double a = (x_[static_cast<size_t>(k + 1)] - t) / h, b = (t - x_[static_cast<size_t>(k)]) / h;
    return a * f_[static_cast<size_t>(k)] + b * f_[static_cast<size_t>(k + 1)] +
           ((a * a * a - a) * m_[static_cast<size_t>(k)] + (b * b * b - b) * m_[static_cast<size_t>(k + 1)]) *
               (h * h) / 6.0;
}

double CubicSpline::derivative(double t) const {
    const int k = spline_interval(x_, t);
    const double h = x_[static_cast<size_t>(k + 1)] - x_[static_cast<size_t>(k)];
    const double a = (x_[static_cast<size_t>(k + 1)] - t) / h, b = (t - x_[static_cast<size_t>(k)]) / h;
    return (f_[static_cast<size_t>(k + 1)] - f_[static_cast<size_t>(k)]) / h +
           ((3.0 * b * b - 1.0) * m_[static_cast<size_t>(k + 1)] - (3.0 * a * a - 1.0) * m_[static_cast<size_t>(k)]) *
               h / 6.0;
}

double CubicSpline::second_derivative(double t) const {
    const int k = spline_interval(x_, t);
    const double h = x_[static_cast<size_t>(k + 1)] - x_[static_cast<size_t>(k)];
    const double a = (x_[static_cast<size_t>(k + 1)] - t) / h, b = (t - x_[static_cast<size_t>(k)]) / h;
    return a * m_[static_cast<size_t>(k)] + b * m_[static_cast<size_t>(k + 1)];
}

// ---------------------------------------------------------------------------
// Residual metric
// ---------------------------------------------------------------------------

SampledTrajectory make_trajectory(Vec2 lo, Vec2 hi, int nx, int ny) {
    SampledTrajectory t;
    t.lo = lo;
    t.hi = hi;
    t.nx = nx;
    t.ny = ny;
    return t;
}

void add_time_level(SampledTrajectory& traj, double t, const VectorField& velocity,
                    const std::function<double(Vec2)>& pressure) {
    const int nx = traj.nx, ny = traj.ny;
    std::vector<double> u(static_cast<size_t>(nx) * ny), v(u.size()), p(u.size());
    const double hx = (traj.hi.x - traj.lo.x) / (nx - 1);
    const double hy = (traj.hi.y - traj.lo.y) / (ny - 1);
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) {
            const Vec2 x{traj.lo.x + i * hx, traj.lo.y + j * hy};
            const Vec2 uv = velocity(x);
            const size_t idx = static_cast<size_t>(j) * nx + i;
            u[idx] = uv.x;
            v[idx] = uv.y;
            p[idx] = pressure(x);
        }
    traj.times.push_back(t);
    traj.u.push_back(std::move(u));
    traj.v.push_back(std::move(v));
    traj.p.push_back(std::move(p));
}

namespace {

/// Tensor-product natural bicubic interpolant on a uniform vertex grid:
/// 16 polynomial coefficients per cell in the local offsets (dx, dy).
class BicubicPatches {
  public:
    BicubicPatches(int nx, int ny, double hx, double hy, const UniformSpline& sx,
                   const UniformSpline& sy)
        : nx_(nx), ny_(ny), hx_(hx), hy_(hy), sx_(&sx), sy_(&sy) {
        coeff_.resize(static_cast<size_t>(nx - 1) * (ny - 1) * 16);
        rowco_.resize(static_cast<size_t>(ny) * (nx - 1) * 4);
        mom_.resize(static_cast<size_t>(std::max(nx, ny)));
        scratch_.resize(static_cast<size_t>(std::max(nx, ny)));
        col_.resize(static_cast<size_t>(ny));
        colm_.resize(static_cast<size_t>(ny));
    }

    /// Rebuilds all patches from the row-major vertex samples f.
    void build(const double* f) {
        const int cx = nx_ - 1, cy = ny_ - 1;
        // Pass 1: 1D spline along x for every vertex row -> per-cell cubics.
        for (int j = 0; j < ny_; ++j) {
            const double* row = f + static_cast<size_t>(j) * nx_;
            sx_->moments(row, 1, mom_.data(), 1, scratch_.data());
            double* rc = rowco_.data() + static_cast<size_t>(j) * cx * 4;
            for (int i = 0; i < cx; ++i) {
                const double fi = row[i], fi1 = row[i + 1];
                const double Mi = mom_[static_cast<size_t>(i)], Mi1 = mom_[static_cast<size_t>(i + 1)];
                rc[i * 4 + 0] = fi;
                rc[i * 4 + 1] = (fi1 - fi) / hx_ - hx_ * (2.0 * Mi + Mi1) / 6.0;
                rc[i * 4 + 2] = Mi / 2.0;
                rc[i * 4 + 3] = (Mi1 - Mi) / (6.0 * hx_);
            }
        }
        // Pass 2: spline each x-coefficient along y -> bicubic coefficients.
        for (int i = 0; i < cx; ++i)
            for (int a = 0; a < 4; ++a) {
                for (int j = 0; j < ny_; ++j)
                    col_[static_cast<size_t>(j)] =
                        rowco_[static_cast<size_t>(j) * cx * 4 + static_cast<size_t>(i) * 4 +
                               static_cast<size_t>(a)];
                sy_->moments(col_.data(), 1, colm_.data(), 1, scratch_.data());
                for (int j = 0; j < cy; ++j) {
                    const double fj = col_[static_cast<size_t>(j)], fj1 = col_[static_cast<size_t>(j + 1)];
                    const double Mj = colm_[static_cast<size_t>(j)], Mj1 = colm_[static_cast<size_t>(j + 1)];
                    double* c = cell(i, j);
                    c[a * 4 + 0] = fj;
                    c[a * 4 + 1] = (fj1 - fj) / hy_ - hy_ * (2.0 * Mj + Mj1) / 6.0;
                    c[a * 4 + 2] = Mj / 2.0;
                    c[a * 4 + 3] = (Mj1 - Mj) / (6.0 * hy_);
                }
            }
    }

    struct Jet {
        double f, fx, fy, fxx, fyy;
    };

    /// Value and derivatives inside cell (ci, cj) at local offsets (dx, dy).
    Jet eval(int ci, int cj, double dx, double dy) const {
        const double* c = cell(ci, cj);
        double px[4] = {1.0, dx, dx * dx, dx * dx * dx};
        double py[4] = {1.0, dy, dy * dy, dy * dy * dy};
        Jet out{0, 0, 0, 0, 0};
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) {
                const double cab = c[a * 4 + b];
                out.f += cab * px[a] * py[b];
                if (a > 0) out.fx += cab * a * px[a - 1] * py[b];
                if (b > 0) out.fy += cab * b * px[a] * py[b - 1];
                if (a > 1) out.fxx += cab * a * (a - 1) * px[a - 2] * py[b];
                if (b > 1) out.fyy += cab * b * (b - 1) * px[a] * py[b - 2];
            }
        return out;
    }

  private:
    double* cell(int i, int j) {
        return coeff_.data() + (static_cast<size_t>(j) * (nx_ - 1) + static_cast<size_t>(i)) * 16;
    }
    const double* cell(int i, int j) const {
        return coeff_.data() + (static_cast<size_t>(j) * (nx_ - 1) + static_cast<size_t>(i)) * 16;
    }

    int nx_, ny_;
    double hx_, hy_;
    const UniformSpline* sx_;
    const UniformSpline* sy_;
    std::vector<double> coeff_, rowco_, mom_, scratch_, col_, colm_;
};

}  // namespace

double residual_norm(const SampledTrajectory& traj, double nu, double rho) {
    const int nx = traj.nx, ny = traj.ny, nt = static_cast<int>(traj.times.size());
    if (nx < 4 || ny < 4 || nt < 4)
        throw std::invalid_argument("residual_norm: need at least 4 samples per axis");
    const size_t N = static_cast<size_t>(nx) * ny;
    for (int k = 0; k < nt; ++k)
        if (traj.u[static_cast<size_t>(k)].size() != N || traj.v[static_cast<size_t>(k)].size() != N ||
            traj.p[static_cast<size_t>(k)].size() != N)
            throw std::invalid_argument("residual_norm: sample size mismatch");

    // Cubic spline in time per vertex (general spacing; shared factorization
    // is not worth the complexity for <= a few dozen levels).
    std::vector<double> Mu(static_cast<size_t>(nt) * N), Mv(Mu.size()), Mp(Mu.size());
    {
        std::vector<double> series(static_cast<size_t>(nt)), mom(static_cast<size_t>(nt));
        auto build = [&](const std::vector<std::vector<double>>& field, std::vector<double>& M) {
            for (size_t idx = 0; idx < N; ++idx) {
                for (int k = 0; k < nt; ++k) series[static_cast<size_t>(k)] = field[static_cast<size_t>(k)][idx];
                spline_moments(traj.times, series.data(), nt, mom.data());
                for (int k = 0; k < nt; ++k) M[static_cast<size_t>(k) * N + idx] = mom[static_cast<size_t>(k)];
            }
        };
        build(traj.u, Mu);
        build(traj.v, Mv);
        build(traj.p, Mp);
    }

    const double hx = (traj.hi.x - traj.lo.x) / (nx - 1);
    const double hy = (traj.hi.y - traj.lo.y) / (ny - 1);
    UniformSpline sx(nx, hx), sy(ny, hy);
    BicubicPatches Su(nx, ny, hx, hy, sx, sy), Sv(nx, ny, hx, hy, sx, sy),
        Sp(nx, ny, hx, hy, sx, sy), Sut(nx, ny, hx, hy, sx, sy), Svt(nx, ny, hx, hy, sx, sy);

    std::vector<double> U(N), V(N), P(N), Ut(N), Vt(N);
    std::vector<double> gt, wt, gs, ws;
    gauss01(3, gt, wt);
    gauss01(3, gs, ws);

    double acc = 0.0;
    for (int k = 0; k + 1 < nt; ++k) {
        const double t0 = traj.times[static_cast<size_t>(k)], t1 = traj.times[static_cast<size_t>(k + 1)];
        const double ht = t1 - t0;
        for (size_t q = 0; q < gt.size(); ++q) {
            const double t = t0 + gt[q] * ht;
            const double a = (t1 - t) / ht, b = (t - t0) / ht;
            // Evaluate the time splines (value + time derivative) per vertex.
            for (size_t idx = 0; idx < N; ++idx) {
                const double fu0 = traj.u[static_cast<size_t>(k)][idx], fu1 = traj.u[static_cast<size_t>(k + 1)][idx];
                const double fv0 = traj.v[static_cast<size_t>(k)][idx], fv1 = traj.v[static_cast<size_t>(k + 1)][idx];
                const double fp0 = traj.p[static_cast<size_t>(k)][idx], fp1 = traj.p[static_cast<size_t>(k + 1)][idx];
                const double mu0 = Mu[static_cast<size_t>(k) * N + idx], mu1 = Mu[static_cast<size_t>(k + 1) * N + idx];
                const double mv0 = Mv[static_cast<size_t>(k) * N + idx], mv1 = Mv[static_cast<size_t>(k + 1) * N + idx];
                const double mp0 = Mp[static_cast<size_t>(k) * N + idx], mp1 = Mp[static_cast<size_t>(k + 1) * N + idx];
                const double wa = (a * a * a - a) * ht * ht / 6.0, wb = (b * b * b - b) * ht * ht / 6.0;
                U[idx] = a * fu0 + b * fu1 + wa * mu0 + wb * mu1;
                V[idx] = a * fv0 + b * fv1 + wa * mv0 + wb * mv1;
                P[idx] = a * fp0 + b * fp1 + wa * mp0 + wb * mp1;
                const double da = (3.0 * a * a - 1.0) * ht / 6.0, db = (3.0 * b * b - 1.0) * ht / 6.0;
                Ut[idx] = (fu1 - fu0) / ht - da * mu0 + db * mu1;
                Vt[idx] = (fv1 - fv0) / ht - da * mv0 + db * mv1;
            }
            Su.build(U.data());
            Sv.build(V.data());
            Sp.build(P.data());
            Sut.build(Ut.data());
            Svt.build(Vt.data());
            // Spatial quadrature over all cells.
            double space = 0.0;
            for (int cj = 0; cj + 1 < ny; ++cj)
                for (int ci = 0; ci + 1 < nx; ++ci)
                    for (size_t qa = 0; qa < gs.size(); ++qa)
                        for (size_t qb = 0; qb < gs.size(); ++qb) {
                            const double dx = gs[qa] * hx, dy = gs[qb] * hy;
                            const auto ju = Su.eval(ci, cj, dx, dy);
                            const auto jv = Sv.eval(ci, cj, dx, dy);
                            const auto jp = Sp.eval(ci, cj, dx, dy);
                            const auto jut = Sut.eval(ci, cj, dx, dy);
                            const auto jvt = Svt.eval(ci, cj, dx, dy);
                            const double rx = rho * jut.f + rho * (ju.f * ju.fx + jv.f * ju.fy) -
                                              nu * (ju.fxx + ju.fyy) + jp.fx;
                            const double ry = rho * jvt.f + rho * (ju.f * jv.fx + jv.f * jv.fy) -
                                              nu * (jv.fxx + jv.fyy) + jp.fy;
                            space += ws[qa] * ws[qb] * hx * hy * (rx * rx + ry * ry);
                        }
            acc += wt[q] * ht * space;
        }
    }
    return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Drag extraction
// ---------------------------------------------------------------------------

double drag_force(const FESpace& V, const FESpace& Q, const std::vector<double>& u,
                  const std::vector<double>& dudt, const std::vector<double>& p, double nu,
                  double rho, const std::function<bool(Vec2)>& on_obstacle,
                  const std::function<Vec2(Vec2)>& body_force) {
    const int n = V.num_dofs();
    std::vector<double> phi(static_cast<size_t>(2 * n), 0.0);
    int hits = 0;
    for (const BoundaryDof& bd : V.boundary_dofs([](int) { return true; }))
        if (on_obstacle(bd.x)) {
            phi[static_cast<size_t>(bd.dof)] = 1.0;  // x-component only
            ++hits;
        }
    if (hits == 0) return 0.0;

    std::vector<double> r(static_cast<size_t>(2 * n), 0.0);
    vector_mass(V).multiply_add(dudt, rho, r);
    vector_stiffness(V).multiply_add(u, nu, r);
    const std::vector<double> conv = convection_residual(V, u, rho);
    for (size_t i = 0; i < r.size(); ++i) r[i] += conv[i];
    // Pressure term: subtract p^T B phi, i.e. accumulate -(B^T p) into r.
    assemble_divergence(V, Q).transposed().multiply_add(p, -1.0, r);
    if (body_force) {
        const std::vector<double> load = assemble_vector_load(V, body_force);
        for (size_t i = 0; i < r.size(); ++i) r[i] -= load[i];
    }
    double f = 0.0;
    for (size_t i = 0; i < r.size(); ++i) f += r[i] * phi[i];
    return -f;
}

// ---------------------------------------------------------------------------
// Cross sections
// ---------------------------------------------------------------------------

std::vector<CrossSectionSample> sample_cross_section(
    const std::function<std::optional<Vec2>(Vec2)>& field, Vec2 a, Vec2 b, int n) {
    std::vector<CrossSectionSample> rows;
    rows.reserve(static_cast<size_t>(std::max(n, 0)));
    for (int k = 0; k < n; ++k) {
        CrossSectionSample r;
        r.s = (k + 0.5) / n;
        r.x = {a.x + r.s * (b.x - a.x), a.y + r.s * (b.y - a.y)};
        const std::optional<Vec2> v = field(r.x);
        if (v) {
            r.inside = true;
            r.velocity = *v;
        }
        rows.push_back(r);
    }
    return rows;
}

void write_cross_section_csv(std::ostream& os, const std::vector<CrossSectionSample>& rows) {
    os << "s,x,y,u,v\n";
    char buf[256];
    for (const CrossSectionSample& r : rows) {
        if (r.inside)
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r.s, r.x.x, r.x.y,
                          r.velocity.x, r.velocity.y);
        else
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,nan,nan\n", r.s, r.x.x, r.x.y);
        os << buf;
    }
}

}  // namespace nslab
