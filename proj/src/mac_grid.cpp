/// @file mac_grid.cpp
/// @brief Staggered grid operators with cut-cell face fractions.

#include "nslab/mac_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nslab {

namespace {

constexpr double kFractionClamp = 1e-6;

/// Liquid fraction of a segment from endpoint signed distances (negative = fluid).
double segment_fraction(double fa, double fb) {
    double w;
    if (fa <= 0.0 && fb <= 0.0) {
        w = 1.0;
    } else if (fa >= 0.0 && fb >= 0.0) {
        w = 0.0;
    } else if (fa < 0.0) {
        w = fa / (fa - fb);  // |fa| / (|fa| + |fb|)
    } else {
        w = fb / (fb - fa);
    }
    if (w < kFractionClamp) w = 0.0;
    if (w > 1.0) w = 1.0;
    return w;
}

/// Bilinear interpolation on a lattice whose point (i,j) sits at
/// (x0 + i*s, y0 + j*s), with ni x nj points. Queries are clamped.
double bilinear(const std::vector<double>& f, int ni, int nj, double x0, double y0, double s,
                Vec2 q) {
    double gx = (q.x - x0) / s;
    double gy = (q.y - y0) / s;
    gx = std::clamp(gx, 0.0, static_cast<double>(ni - 1));
    gy = std::clamp(gy, 0.0, static_cast<double>(nj - 1));
    int i0 = std::min(static_cast<int>(gx), ni - 2);
    int j0 = std::min(static_cast<int>(gy), nj - 2);
    if (ni == 1) i0 = 0;
    if (nj == 1) j0 = 0;
    const double tx = std::clamp(gx - i0, 0.0, 1.0);
    const double ty = std::clamp(gy - j0, 0.0, 1.0);
    auto at = [&](int i, int j) {
        i = std::min(i, ni - 1);
        j = std::min(j, nj - 1);
        return f[static_cast<size_t>(j * ni + i)];
    };
    const double a = at(i0, j0) * (1 - tx) + at(i0 + 1, j0) * tx;
    const double b = at(i0, j0 + 1) * (1 - tx) + at(i0 + 1, j0 + 1) * tx;
    return a * (1 - ty) + b * ty;
}

}  // namespace

StaggeredGrid make_grid(Vec2 origin, int nx, int ny, double h) {
    if (nx <= 0 || ny <= 0 || h <= 0.0) throw std::invalid_argument("make_grid: bad dimensions");
    StaggeredGrid g;
    g.nx = nx;
    g.ny = ny;
    g.h = h;
    g.origin = origin;
    g.cell_fluid.assign(static_cast<size_t>(nx * ny), 1);
    g.frac_u.assign(static_cast<size_t>((nx + 1) * ny), 1.0);
    g.frac_v.assign(static_cast<size_t>(nx * (ny + 1)), 1.0);
    return g;
}

void classify_from_sdf(StaggeredGrid& grid, const std::function<double(Vec2)>& sdf) {
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
            grid.cell_fluid[static_cast<size_t>(grid.cell_index(i, j))] =
                sdf(grid.cell_center(i, j)) < 0.0 ? 1 : 0;
    // Vertical faces: segment between cell corners (i*h, j*h)-(i*h, (j+1)*h).
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i <= grid.nx; ++i) {
            Vec2 a{grid.origin.x + i * grid.h, grid.origin.y + j * grid.h};
            Vec2 b{grid.origin.x + i * grid.h, grid.origin.y + (j + 1) * grid.h};
            double w = segment_fraction(sdf(a), sdf(b));
            if (!grid.fluid(i - 1, j) && !grid.fluid(i, j)) w = 0.0;
            grid.frac_u[static_cast<size_t>(grid.u_index(i, j))] = w;
        }
    for (int j = 0; j <= grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            Vec2 a{grid.origin.x + i * grid.h, grid.origin.y + j * grid.h};
            Vec2 b{grid.origin.x + (i + 1) * grid.h, grid.origin.y + j * grid.h};
            double w = segment_fraction(sdf(a), sdf(b));
            if (!grid.fluid(i, j - 1) && !grid.fluid(i, j)) w = 0.0;
            grid.frac_v[static_cast<size_t>(grid.v_index(i, j))] = w;
        }
}

MacVelocity make_velocity(const StaggeredGrid& grid) {
    MacVelocity v;
    v.u.assign(static_cast<size_t>(grid.num_u()), 0.0);
    v.v.assign(static_cast<size_t>(grid.num_v()), 0.0);
    return v;
}

MacVelocity sample_field(const StaggeredGrid& grid, const std::function<Vec2(Vec2)>& f) {
    MacVelocity vel = make_velocity(grid);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i <= grid.nx; ++i)
            vel.u[static_cast<size_t>(grid.u_index(i, j))] = f(grid.u_position(i, j)).x;
    for (int j = 0; j <= grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
            vel.v[static_cast<size_t>(grid.v_index(i, j))] = f(grid.v_position(i, j)).y;
    return vel;
}

Vec2 sample_velocity(const StaggeredGrid& grid, const MacVelocity& vel, Vec2 x) {
    // Project out-of-domain queries to the closest boundary point first.
    const Vec2 lo = grid.lo(), hi = grid.hi();
    x.x = std::clamp(x.x, lo.x, hi.x);
    x.y = std::clamp(x.y, lo.y, hi.y);
    Vec2 out;
    out.x = bilinear(vel.u, grid.nx + 1, grid.ny, lo.x, lo.y + 0.5 * grid.h, grid.h, x);
    out.y = bilinear(vel.v, grid.nx, grid.ny + 1, lo.x + 0.5 * grid.h, lo.y, grid.h, x);
    return out;
}

std::vector<double> divergence(const StaggeredGrid& grid, const MacVelocity& vel) {
    std::vector<double> div(static_cast<size_t>(grid.num_cells()), 0.0);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            if (!grid.fluid(i, j)) continue;
            const double we = grid.frac_u[static_cast<size_t>(grid.u_index(i + 1, j))];
            const double ww = grid.frac_u[static_cast<size_t>(grid.u_index(i, j))];
            const double wn = grid.frac_v[static_cast<size_t>(grid.v_index(i, j + 1))];
            const double ws = grid.frac_v[static_cast<size_t>(grid.v_index(i, j))];
            div[static_cast<size_t>(grid.cell_index(i, j))] =
                (we * vel.u[static_cast<size_t>(grid.u_index(i + 1, j))] -
                 ww * vel.u[static_cast<size_t>(grid.u_index(i, j))] +
                 wn * vel.v[static_cast<size_t>(grid.v_index(i, j + 1))] -
                 ws * vel.v[static_cast<size_t>(grid.v_index(i, j))]) /
                grid.h;
        }
    return div;
}

namespace {

struct FaceStencil {
    // For a given fluid cell and face: fraction weight, neighbor cell (or -1),
    // whether the face is an outflow boundary face.
    double w = 0.0;
    int nb_i = -1, nb_j = -1;
    bool boundary = false;
    Vec2 face_center;
};

template <typename F>
void for_each_face(const StaggeredGrid& g, int i, int j, F&& f) {
    // West, East, South, North.
    f(FaceStencil{g.frac_u[static_cast<size_t>(g.u_index(i, j))], i - 1, j, i == 0, g.u_position(i, j)});
    f(FaceStencil{g.frac_u[static_cast<size_t>(g.u_index(i + 1, j))], i + 1, j, i + 1 == g.nx + 0, g.u_position(i + 1, j)});
    f(FaceStencil{g.frac_v[static_cast<size_t>(g.v_index(i, j))], i, j - 1, j == 0, g.v_position(i, j)});
    f(FaceStencil{g.frac_v[static_cast<size_t>(g.v_index(i, j + 1))], i, j + 1, j + 1 == g.ny + 0, g.v_position(i, j + 1)});
}

}  // namespace

PoissonSystem assemble_pressure_poisson(const StaggeredGrid& grid, const MacVelocity& vel,
                                        double dt, double rho,
                                        const std::function<bool(Vec2)>& outflow) {
    PoissonSystem sys;
    sys.cell_to_row.assign(static_cast<size_t>(grid.num_cells()), -1);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
            if (grid.fluid(i, j)) {
                sys.cell_to_row[static_cast<size_t>(grid.cell_index(i, j))] =
                    static_cast<int>(sys.row_to_cell.size());
                sys.row_to_cell.push_back(grid.cell_index(i, j));
            }
    const int n = static_cast<int>(sys.row_to_cell.size());
    if (n == 0) throw std::runtime_error("assemble_pressure_poisson: no fluid cells");

    std::vector<double> div = divergence(grid, vel);
    std::vector<Triplet> trips;
    sys.rhs.assign(static_cast<size_t>(n), 0.0);
    const double inv_h2 = 1.0 / (grid.h * grid.h);
    bool any_outflow = false;

    for (int row = 0; row < n; ++row) {
        const int c = sys.row_to_cell[static_cast<size_t>(row)];
        const int i = c % grid.nx, j = c / grid.nx;
        double diag = 0.0;
        for_each_face(grid, i, j, [&](const FaceStencil& f) {
            if (f.w <= 0.0) return;
            const bool nb_inside = f.nb_i >= 0 && f.nb_i < grid.nx && f.nb_j >= 0 && f.nb_j < grid.ny;
            if (nb_inside) {
                if (!grid.fluid(f.nb_i, f.nb_j)) return;  // solid face: zero flux
                const int nb_row = sys.cell_to_row[static_cast<size_t>(grid.cell_index(f.nb_i, f.nb_j))];
                diag += f.w * f.w * inv_h2;
                trips.push_back({row, nb_row, -f.w * f.w * inv_h2});
            } else if (outflow && outflow(f.face_center)) {
                diag += f.w * f.w * inv_h2;  // ghost pressure 0 beyond the face
                any_outflow = true;
            }
            // Closed boundary face: prescribed velocity, Neumann for p.
        });
        trips.push_back({row, row, diag});
        sys.rhs[static_cast<size_t>(row)] = -(rho / dt) * div[static_cast<size_t>(c)];
    }
    sys.pure_neumann = !any_outflow;
    sys.A = SparseMatrix::from_triplets(n, n, trips);
    return sys;
}

MacVelocity apply_pressure_gradient(const StaggeredGrid& grid, const MacVelocity& vel,
                                    const std::vector<double>& p, double dt, double rho,
                                    const std::function<bool(Vec2)>& outflow) {
    MacVelocity out = vel;
    const double s = dt / (rho * grid.h);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i <= grid.nx; ++i) {
            const double w = grid.frac_u[static_cast<size_t>(grid.u_index(i, j))];
            if (w <= 0.0) continue;
            const bool left = grid.fluid(i - 1, j), right = grid.fluid(i, j);
            double dp;
            if (left && right) {
                dp = p[static_cast<size_t>(grid.cell_index(i, j))] -
                     p[static_cast<size_t>(grid.cell_index(i - 1, j))];
            } else if ((left || right) && (i == 0 || i == grid.nx) && outflow &&
                       outflow(grid.u_position(i, j))) {
                dp = left ? 0.0 - p[static_cast<size_t>(grid.cell_index(i - 1, j))]
                          : p[static_cast<size_t>(grid.cell_index(i, j))] - 0.0;
            } else {
                continue;  // closed or solid-adjacent face: velocity prescribed
            }
            out.u[static_cast<size_t>(grid.u_index(i, j))] -= s * w * dp;
        }
    for (int j = 0; j <= grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            const double w = grid.frac_v[static_cast<size_t>(grid.v_index(i, j))];
            if (w <= 0.0) continue;
            const bool below = grid.fluid(i, j - 1), above = grid.fluid(i, j);
            double dp;
            if (below && above) {
                dp = p[static_cast<size_t>(grid.cell_index(i, j))] -
                     p[static_cast<size_t>(grid.cell_index(i, j - 1))];
            } else if ((below || above) && (j == 0 || j == grid.ny) && outflow &&
                       outflow(grid.v_position(i, j))) {
                dp = below ? 0.0 - p[static_cast<size_t>(grid.cell_index(i, j - 1))]
                           : p[static_cast<size_t>(grid.cell_index(i, j))] - 0.0;
            } else {
                continue;
            }
            out.v[static_cast<size_t>(grid.v_index(i, j))] -= s * w * dp;
        }
    return out;
}

MacProjection::MacProjection(const StaggeredGrid& grid, double dt, double rho,
                             std::function<bool(Vec2)> outflow)
    : grid_(&grid), dt_(dt), rho_(rho), outflow_(std::move(outflow)) {
    PoissonSystem sys = assemble_pressure_poisson(grid, make_velocity(grid), dt, rho, outflow_);
    A_ = std::move(sys.A);
    cell_to_row_ = std::move(sys.cell_to_row);
    row_to_cell_ = std::move(sys.row_to_cell);
    pure_neumann_ = sys.pure_neumann;
    if (!pure_neumann_) {
        llt_ = std::make_unique<CholeskyFactorization>(A_);
        if (!llt_->ok()) llt_.reset();
    }
}

std::vector<double> MacProjection::solve(const MacVelocity& vel, SolveReport* report) const {
    std::vector<double> div = divergence(*grid_, vel);
    std::vector<double> b(row_to_cell_.size());
    for (size_t r = 0; r < row_to_cell_.size(); ++r)
        b[r] = -(rho_ / dt_) * div[static_cast<size_t>(row_to_cell_[r])];
    std::vector<double> x(b.size(), 0.0);
    if (llt_) {
        x = llt_->solve(b);
        if (report) *report = {true, 1, 0.0, "llt"};
    } else {
        CgOptions opts;
        opts.tol = 1e-12;
        opts.project_mean_zero = pure_neumann_;
        SolveReport rep = solve_spd(A_, b, x, opts);
        if (report) *report = rep;
    }
    std::vector<double> p(static_cast<size_t>(grid_->num_cells()), 0.0);
    for (size_t r = 0; r < row_to_cell_.size(); ++r)
        p[static_cast<size_t>(row_to_cell_[r])] = x[r];
    return p;
}

MacVelocity MacProjection::project(const MacVelocity& vel, std::vector<double>* p_out,
                                   SolveReport* report) const {
    std::vector<double> p = solve(vel, report);
    MacVelocity out = apply_pressure_gradient(*grid_, vel, p, dt_, rho_, outflow_);
    if (p_out) *p_out = std::move(p);
    return out;
}

MacDiffusion::MacDiffusion(const StaggeredGrid& grid, double dt, double nu, double rho,
                           int component, const std::function<bool(Vec2)>& neumann) {
    const int nx = grid.nx, ny = grid.ny;
    const int ni = component == 0 ? nx + 1 : nx;
    const int nj = component == 0 ? ny : ny + 1;
    n_ = ni * nj;
    const double k = dt * nu / (grid.h * grid.h);

    auto pos = [&](int i, int j) {
        return component == 0 ? grid.u_position(i, j) : grid.v_position(i, j);
    };
    // A lattice point is a Dirichlet row when it sits on the domain boundary
    // (and is not marked Neumann) or both adjacent cells are solid.
    auto adjacent_solid = [&](int i, int j) {
        if (component == 0) return !grid.fluid(i - 1, j) && !grid.fluid(i, j);
        return !grid.fluid(i, j - 1) && !grid.fluid(i, j);
    };
    auto on_boundary = [&](int i, int j) {
        return component == 0 ? (i == 0 || i == nx) : (j == 0 || j == ny);
    };

    std::vector<char> dirichlet(static_cast<size_t>(n_), 0);
    std::vector<int> bc_dofs;
    for (int j = 0; j < nj; ++j)
        for (int i = 0; i < ni; ++i) {
            const int row = j * ni + i;
            const bool bdry = on_boundary(i, j);
            const bool neu = bdry && neumann && neumann(pos(i, j));
            if ((bdry && !neu) || adjacent_solid(i, j)) {
                dirichlet[static_cast<size_t>(row)] = 1;
                bc_dofs.push_back(row);
                bc_rows_.push_back(row);
                bc_pos_.push_back(pos(i, j));
            }
        }

    std::vector<Triplet> trips;
    row_mass_.assign(static_cast<size_t>(n_), rho);
    for (int j = 0; j < nj; ++j)
        for (int i = 0; i < ni; ++i) {
            const int row = j * ni + i;
            if (dirichlet[static_cast<size_t>(row)]) {
                continue;  // handled by ConstrainedSPD
            }
            // A free row on the domain boundary is a Neumann point. Its
            // control volume is half a cell wide, so the whole row (mass and
            // fluxes) carries a factor 1/2; together with the mirrored
            // neighbor this keeps the matrix symmetric.
            const double scale = on_boundary(i, j) ? 0.5 : 1.0;
            row_mass_[static_cast<size_t>(row)] = rho * scale;
            double diag = rho * scale;
            // Neighbors in the lattice +/- i, +/- j. Off-lattice neighbors are
            // either edge-center ghosts (Dirichlet at half spacing -> value
            // 2 g - u_c) or mirrored (Neumann).
            const int di[4] = {-1, 1, 0, 0};
            const int dj[4] = {0, 0, -1, 1};
            // The normal lattice direction has boundary points on the lattice
            // itself; the tangential direction ends half a spacing from the wall.
            const int normal_dir = component == 0 ? 0 : 1;  // 0 = x, 1 = y
            for (int d = 0; d < 4; ++d) {
                const int in = i + di[d], jn = j + dj[d];
                if (in >= 0 && in < ni && jn >= 0 && jn < nj) {
                    diag += k * scale;
                    trips.push_back({row, jn * ni + in, -k * scale});
                    continue;
                }
                const bool along_normal = (di[d] != 0) == (normal_dir == 0);
                if (along_normal) {
                    // This row sits on a Neumann boundary point (a Dirichlet
                    // row would have been skipped). Mirror across the point:
                    // ghost = value at the reflected interior neighbor.
                    diag += k * scale;
                    trips.push_back({row, (j - dj[d]) * ni + (i - di[d]), -k * scale});
                    continue;
                }
                // Tangential ghost at half spacing beyond the wall.
                Vec2 gpos = pos(i, j);
                if (component == 0)
                    gpos.y += dj[d] * 0.5 * grid.h;
                else
                    gpos.x += di[d] * 0.5 * grid.h;
                if (neumann && neumann(gpos)) continue;  // mirror ghost = u_c cancels
                // Dirichlet at the edge center: ghost = 2 g - u_c.
                diag += 2.0 * k * scale;
                ghosts_.push_back({row, 2.0 * k * scale, gpos});
            }
            trips.push_back({row, row, diag});
        }
    sys_ = std::make_unique<ConstrainedSPD>(trips, n_, bc_dofs);
    llt_ = std::make_unique<CholeskyFactorization>(sys_->matrix());
    if (!llt_->ok()) throw std::runtime_error("MacDiffusion: factorization failed");
}

std::vector<double> MacDiffusion::solve(const std::vector<double>& u_hat,
                                        const std::function<double(Vec2)>& bc,
                                        SolveReport* report) const {
    std::vector<double> b(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i)
        b[static_cast<size_t>(i)] =
            sys_->is_constrained(i) ? 0.0
                                    : row_mass_[static_cast<size_t>(i)] * u_hat[static_cast<size_t>(i)];
    for (const Ghost& g : ghosts_) b[static_cast<size_t>(g.row)] += g.coeff * bc(g.pos);
    std::vector<double> gfull(static_cast<size_t>(n_), 0.0);
    for (size_t k = 0; k < bc_rows_.size(); ++k)
        gfull[static_cast<size_t>(bc_rows_[k])] = bc(bc_pos_[k]);
    sys_->apply_rhs(b, gfull);
    std::vector<double> x = llt_->solve(b);
    if (report) *report = {true, 1, 0.0, "llt"};
    return x;
}

}  // namespace nslab
