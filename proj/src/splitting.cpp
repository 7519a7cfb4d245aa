#include "nslab/splitting.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <utility>

namespace nslab {

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string format_time(double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", t);
    return buf;
}

/// Snapshot times merged with the final time; second = emit a snapshot there.
std::vector<std::pair<double, bool>> build_events(double T, const std::vector<double>& snaps,
                                                  double tol) {
    std::vector<std::pair<double, bool>> events;
    for (double s : snaps) {
        if (s > tol && s < T - tol) events.push_back({s, true});
    }
    const bool at_T = std::any_of(snaps.begin(), snaps.end(),
                                  [&](double s) { return std::abs(s - T) <= tol; });
    events.push_back({T, at_T});
    std::sort(events.begin(), events.end());
    std::vector<std::pair<double, bool>> dedup;
    for (const auto& ev : events) {
        if (!dedup.empty() && ev.first - dedup.back().first <= tol)
            dedup.back().second = dedup.back().second || ev.second;
        else
            dedup.push_back(ev);
    }
    return dedup;
}

bool wants_time_zero(const std::vector<double>& snaps, double tol) {
    return std::any_of(snaps.begin(), snaps.end(),
                       [&](double s) { return std::abs(s) <= tol; });
}

/// Mix the run seed with a per-resample counter so every top-up draws fresh
/// jitter while staying reproducible.
unsigned mix_seed(unsigned seed, unsigned counter) {
    unsigned x = seed ^ (0x9E3779B9u + counter * 0x85EBCA6Bu);
    x ^= x >> 16;
    x *= 0x7FEB352Du;
    x ^= x >> 15;
    return x;
}

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace

int ParticleSet::live_count() const {
    int n = 0;
    for (char f : outside)
        if (!f) ++n;
    return n;
}

Vec2 rk3_advect(const std::function<Vec2(Vec2)>& velocity, Vec2 x, double dt) {
    const Vec2 k1 = velocity(x);
    const Vec2 k2 = velocity(x + (0.5 * dt) * k1);
    const Vec2 k3 = velocity(x + (0.75 * dt) * k2);
    return x + (dt / 9.0) * (2.0 * k1 + 3.0 * k2 + 4.0 * k3);
}

// --- MAC backend operations ----------------------------------------------------

MacVelocity advect_semi_lagrangian(const StaggeredGrid& grid, const MacVelocity& vel,
                                   double dt) {
    const auto sampler = [&](Vec2 p) { return sample_velocity(grid, vel, p); };
    MacVelocity out = make_velocity(grid);
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i <= grid.nx; ++i) {
            const Vec2 back = rk3_advect(sampler, grid.u_position(i, j), -dt);
            out.u[static_cast<size_t>(grid.u_index(i, j))] = sampler(back).x;
        }
    for (int j = 0; j <= grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            const Vec2 back = rk3_advect(sampler, grid.v_position(i, j), -dt);
            out.v[static_cast<size_t>(grid.v_index(i, j))] = sampler(back).y;
        }
    return out;
}

namespace {

/// Cell containing x, or (-1,-1) when outside the grid rectangle.
std::pair<int, int> cell_of(const StaggeredGrid& grid, Vec2 x) {
    const double gx = (x.x - grid.origin.x) / grid.h;
    const double gy = (x.y - grid.origin.y) / grid.h;
    if (gx < 0.0 || gy < 0.0 || gx > grid.nx || gy > grid.ny) return {-1, -1};
    int i = std::min(static_cast<int>(gx), grid.nx - 1);
    int j = std::min(static_cast<int>(gy), grid.ny - 1);
    return {i, j};
}

bool inside_fluid(const StaggeredGrid& grid, Vec2 x) {
    const auto [i, j] = cell_of(grid, x);
    if (i < 0) return false;
    return grid.fluid(i, j);
}

/// Accumulate w * value into the four lattice points around (gx, gy) of a
/// (cols x rows) sample lattice.
void scatter_bilinear(double gx, double gy, int cols, int rows, double value,
                      std::vector<double>& acc, std::vector<double>& wsum) {
    const int i0 = static_cast<int>(std::floor(gx));
    const int j0 = static_cast<int>(std::floor(gy));
    const double fx = gx - i0;
    const double fy = gy - j0;
    for (int dj = 0; dj < 2; ++dj)
        for (int di = 0; di < 2; ++di) {
            const int i = i0 + di;
            const int j = j0 + dj;
            if (i < 0 || j < 0 || i >= cols || j >= rows) continue;
            const double w = (di ? fx : 1.0 - fx) * (dj ? fy : 1.0 - fy);
            if (w <= 0.0) continue;
            const size_t k = static_cast<size_t>(j * cols + i);
            acc[k] += w * value;
            wsum[k] += w;
        }
}

}  // namespace

ParticleSet particles_advect_rk3(const ParticleSet& pts, const StaggeredGrid& grid,
                                 const MacVelocity& vel, double dt) {
    const auto sampler = [&](Vec2 p) { return sample_velocity(grid, vel, p); };
    ParticleSet out = pts;
    for (size_t k = 0; k < out.positions.size(); ++k) {
        if (out.outside[k]) continue;
        const Vec2 moved = rk3_advect(sampler, out.positions[k], dt);
        out.positions[k] = moved;
        if (!inside_fluid(grid, moved)) out.outside[k] = 1;
    }
    return out;
}

MacVelocity p2g_transfer(const ParticleSet& pts, const StaggeredGrid& grid,
                         const MacVelocity& fallback) {
    std::vector<double> acc_u(static_cast<size_t>(grid.num_u()), 0.0);
    std::vector<double> w_u(static_cast<size_t>(grid.num_u()), 0.0);
    std::vector<double> acc_v(static_cast<size_t>(grid.num_v()), 0.0);
    std::vector<double> w_v(static_cast<size_t>(grid.num_v()), 0.0);
    for (size_t k = 0; k < pts.positions.size(); ++k) {
        if (pts.outside[k]) continue;
        const Vec2 x = pts.positions[k];
        const Vec2 v = pts.velocities[k];
        const double rx = (x.x - grid.origin.x) / grid.h;
        const double ry = (x.y - grid.origin.y) / grid.h;
        scatter_bilinear(rx, ry - 0.5, grid.nx + 1, grid.ny, v.x, acc_u, w_u);
        scatter_bilinear(rx - 0.5, ry, grid.nx, grid.ny + 1, v.y, acc_v, w_v);
    }
    MacVelocity out = make_velocity(grid);
    for (size_t k = 0; k < out.u.size(); ++k)
        out.u[k] = w_u[k] > 1e-12 ? acc_u[k] / w_u[k] : fallback.u[k];
    for (size_t k = 0; k < out.v.size(); ++k)
        out.v[k] = w_v[k] > 1e-12 ? acc_v[k] / w_v[k] : fallback.v[k];
    return out;
}

ParticleSet g2p_flip_update(const ParticleSet& pts, const StaggeredGrid& grid,
                            const MacVelocity& grid_old, const MacVelocity& grid_new,
                            double blend) {
    MacVelocity diff = grid_new;
    for (size_t k = 0; k < diff.u.size(); ++k) diff.u[k] -= grid_old.u[k];
    for (size_t k = 0; k < diff.v.size(); ++k) diff.v[k] -= grid_old.v[k];
    ParticleSet out = pts;
    for (size_t k = 0; k < out.positions.size(); ++k) {
        if (out.outside[k]) continue;
        const Vec2 x = out.positions[k];
        const Vec2 d = sample_velocity(grid, diff, x);
        const Vec2 nv = sample_velocity(grid, grid_new, x);
        const Vec2 fl = out.velocities[k] + d;
        out.velocities[k] = blend * fl + (1.0 - blend) * nv;
    }
    return out;
}

ParticleSet particles_resample(const ParticleSet& current, const StaggeredGrid& grid,
                               const MacVelocity& vel, unsigned seed) {
    const int ncells = grid.num_cells();
    std::vector<std::vector<int>> keep(static_cast<size_t>(ncells));
    for (size_t k = 0; k < current.positions.size(); ++k) {
        if (current.outside[k]) continue;
        const auto [i, j] = cell_of(grid, current.positions[k]);
        if (i < 0 || !grid.fluid(i, j)) continue;
        auto& bucket = keep[static_cast<size_t>(grid.cell_index(i, j))];
        if (static_cast<int>(bucket.size()) < 4) bucket.push_back(static_cast<int>(k));
    }
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    ParticleSet out;
    out.positions.reserve(static_cast<size_t>(4 * ncells));
    out.velocities.reserve(static_cast<size_t>(4 * ncells));
    for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) {
            if (!grid.fluid(i, j)) continue;
            // Draw all four strata regardless of need so positions depend
            // only on (seed, cell), not on current occupancy.
            double jit[4][2];
            for (int s = 0; s < 4; ++s) {
                jit[s][0] = U(gen);
                jit[s][1] = U(gen);
            }
            const auto& bucket = keep[static_cast<size_t>(grid.cell_index(i, j))];
            for (int idx : bucket) {
                out.positions.push_back(current.positions[static_cast<size_t>(idx)]);
                out.velocities.push_back(current.velocities[static_cast<size_t>(idx)]);
            }
            for (int s = static_cast<int>(bucket.size()); s < 4; ++s) {
                const double sx = static_cast<double>(s % 2);
                const double sy = static_cast<double>(s / 2);
                const Vec2 pos{grid.origin.x + (i + 0.5 * (sx + jit[s][0])) * grid.h,
                               grid.origin.y + (j + 0.5 * (sy + jit[s][1])) * grid.h};
                out.positions.push_back(pos);
                out.velocities.push_back(sample_velocity(grid, vel, pos));
            }
        }
    out.outside.assign(out.positions.size(), 0);
    return out;
}

// --- FEM backend operations -----------------------------------------------------

Vec2 sample_fem_velocity(const FESpace& V, const SpatialHash& hash,
                         const std::vector<double>& vel, Vec2 x) {
    if (auto v = evaluate_vector_at(V, hash, vel, x)) return *v;
    const Vec2 xb = closest_boundary_point(V.mesh(), x);
    if (auto v = evaluate_vector_at(V, hash, vel, xb)) return *v;
    // Roundoff pushed the projected point outside every element: accept the
    // best nearby preimage with a relaxed tolerance.
    for (int e : hash.candidates(xb)) {
        double xi = 0.0, eta = 0.0;
        if (V.mesh().invert_map(e, xb, xi, eta, 1e-6)) return evaluate_vector(V, vel, e, xi, eta);
    }
    return {0.0, 0.0};
}

std::vector<double> advect_semi_lagrangian(const FESpace& V, const SpatialHash& hash,
                                           const std::vector<double>& vel, double dt) {
    const auto sampler = [&](Vec2 p) { return sample_fem_velocity(V, hash, vel, p); };
    const int n = V.num_dofs();
    std::vector<double> out(static_cast<size_t>(2 * n));
    for (int i = 0; i < n; ++i) {
        const Vec2 back = rk3_advect(sampler, V.dof_coord(i), -dt);
        const Vec2 u = sampler(back);
        out[static_cast<size_t>(i)] = u.x;
        out[static_cast<size_t>(n + i)] = u.y;
    }
    return out;
}

ParticleSet particles_advect_rk3(const ParticleSet& pts, const FESpace& V,
                                 const SpatialHash& hash, const std::vector<double>& vel,
                                 double dt) {
    const auto sampler = [&](Vec2 p) { return sample_fem_velocity(V, hash, vel, p); };
    ParticleSet out = pts;
    for (size_t k = 0; k < out.positions.size(); ++k) {
        if (out.outside[k]) continue;
        const Vec2 moved = rk3_advect(sampler, out.positions[k], dt);
        out.positions[k] = moved;
        if (!locate_point(V.mesh(), hash, moved)) out.outside[k] = 1;
    }
    return out;
}

std::vector<double> p2g_transfer(const ParticleSet& pts, const FESpace& V,
                                 const SpatialHash& hash, const std::vector<double>& fallback) {
    if (V.order() != 1)
        throw std::invalid_argument("p2g_transfer: particle transfers need an order-1 space");
    const int n = V.num_dofs();
    std::vector<double> accx(static_cast<size_t>(n), 0.0);
    std::vector<double> accy(static_cast<size_t>(n), 0.0);
    std::vector<double> wsum(static_cast<size_t>(n), 0.0);
    double N[4];
    for (size_t k = 0; k < pts.positions.size(); ++k) {
        if (pts.outside[k]) continue;
        const auto loc = locate_point(V.mesh(), hash, pts.positions[k]);
        if (!loc) continue;
        const BasisType b = V.element_basis(loc->element);
        basis_eval(b, loc->xi, loc->eta, N);
        const int* dofs = V.element_dofs(loc->element);
        const int nd = V.element_dof_count(loc->element);
        const Vec2 v = pts.velocities[k];
        for (int a = 0; a < nd; ++a) {
            accx[static_cast<size_t>(dofs[a])] += N[a] * v.x;
            accy[static_cast<size_t>(dofs[a])] += N[a] * v.y;
            wsum[static_cast<size_t>(dofs[a])] += N[a];
        }
    }
    std::vector<double> out(static_cast<size_t>(2 * n));
    for (int i = 0; i < n; ++i) {
        if (wsum[static_cast<size_t>(i)] > 1e-12) {
            out[static_cast<size_t>(i)] = accx[static_cast<size_t>(i)] / wsum[static_cast<size_t>(i)];
            out[static_cast<size_t>(n + i)] =
                accy[static_cast<size_t>(i)] / wsum[static_cast<size_t>(i)];
        } else {
            out[static_cast<size_t>(i)] = fallback[static_cast<size_t>(i)];
            out[static_cast<size_t>(n + i)] = fallback[static_cast<size_t>(n + i)];
        }
    }
    return out;
}

ParticleSet g2p_flip_update(const ParticleSet& pts, const FESpace& V, const SpatialHash& hash,
                            const std::vector<double>& grid_old,
                            const std::vector<double>& grid_new, double blend) {
    std::vector<double> diff = grid_new;
    axpy(-1.0, grid_old, diff);
    ParticleSet out = pts;
    for (size_t k = 0; k < out.positions.size(); ++k) {
        if (out.outside[k]) continue;
        const auto loc = locate_point(V.mesh(), hash, out.positions[k]);
        if (!loc) {
            out.outside[k] = 1;
            continue;
        }
        const Vec2 d = evaluate_vector(V, diff, loc->element, loc->xi, loc->eta);
        const Vec2 nv = evaluate_vector(V, grid_new, loc->element, loc->xi, loc->eta);
        const Vec2 fl = out.velocities[k] + d;
        out.velocities[k] = blend * fl + (1.0 - blend) * nv;
    }
    return out;
}

ParticleSet particles_resample(const ParticleSet& current, const FESpace& V,
                               const SpatialHash& hash, const std::vector<double>& vel,
                               unsigned seed) {
    if (V.order() != 1)
        throw std::invalid_argument("particles_resample: particle transfers need an order-1 space");
    const SimMesh& mesh = V.mesh();
    const int ne = mesh.num_elements();
    std::vector<std::vector<int>> keep(static_cast<size_t>(ne));
    for (size_t k = 0; k < current.positions.size(); ++k) {
        if (current.outside[k]) continue;
        const auto loc = locate_point(mesh, hash, current.positions[k]);
        if (!loc) continue;
        auto& bucket = keep[static_cast<size_t>(loc->element)];
        if (static_cast<int>(bucket.size()) < 4) bucket.push_back(static_cast<int>(k));
    }
    std::mt19937 gen(seed);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    ParticleSet out;
    out.positions.reserve(static_cast<size_t>(4 * ne));
    out.velocities.reserve(static_cast<size_t>(4 * ne));
    for (int e = 0; e < ne; ++e) {
        double jit[4][2];
        for (int s = 0; s < 4; ++s) {
            jit[s][0] = U(gen);
            jit[s][1] = U(gen);
        }
        const bool tri = mesh.elements()[static_cast<size_t>(e)].nv == 3;
        const auto& bucket = keep[static_cast<size_t>(e)];
        for (int idx : bucket) {
            out.positions.push_back(current.positions[static_cast<size_t>(idx)]);
            out.velocities.push_back(current.velocities[static_cast<size_t>(idx)]);
        }
        for (int s = static_cast<int>(bucket.size()); s < 4; ++s) {
            double xi = 0.5 * (static_cast<double>(s % 2) + jit[s][0]);
            double eta = 0.5 * (static_cast<double>(s / 2) + jit[s][1]);
            if (tri && xi + eta > 1.0) {  // fold the unit square onto the triangle
                xi = 1.0 - xi;
                eta = 1.0 - eta;
            }
            out.positions.push_back(mesh.map_to_physical(e, xi, eta));
            out.velocities.push_back(evaluate_vector(V, vel, e, xi, eta));
        }
    }
    out.outside.assign(out.positions.size(), 0);
    return out;
}

// --- FEM solver ------------------------------------------------------------------

FemSplitSolver::FemSplitSolver(const SimMesh& mesh, const BenchmarkProblem& problem,
                               SplitConfig cfg)
    : mesh_(mesh), problem_(problem), cfg_(cfg), V_(mesh_, 1), hash_(mesh_) {
    n_ = V_.num_dofs();
    M_ = assemble_mass(V_);
    K_ = assemble_stiffness(V_);
    B_ = assemble_divergence(V_, V_);

    const std::vector<double> ml = lumped_mass(V_);
    invml2_.assign(static_cast<size_t>(2 * n_), 0.0);
    for (int i = 0; i < n_; ++i) {
        invml2_[static_cast<size_t>(i)] = 1.0 / ml[static_cast<size_t>(i)];
        invml2_[static_cast<size_t>(n_ + i)] = 1.0 / ml[static_cast<size_t>(i)];
    }

    is_dirichlet_.assign(static_cast<size_t>(n_), 0);
    for (const BoundaryDof& bd : V_.boundary_dofs([](int) { return true; })) {
        if (problem_.is_neumann && problem_.is_neumann(bd.x)) {
            closed_ = false;
            pressure_bc_.push_back(bd.dof);
            continue;
        }
        dirichlet_.push_back(bd.dof);
        dirichlet_x_.push_back(bd.x);
        is_dirichlet_[static_cast<size_t>(bd.dof)] = 1;
    }

    // Divergence form restricted to unconstrained velocity dofs: the
    // projection must not modify prescribed boundary velocities.
    std::vector<Triplet> bh;
    for (int q = 0; q < n_; ++q) {
        const int* cols = B_.row_cols(q);
        const double* vals = B_.row_vals(q);
        for (int k = 0; k < B_.row_nnz(q); ++k) {
            const int node = cols[k] < n_ ? cols[k] : cols[k] - n_;
            if (is_dirichlet_[static_cast<size_t>(node)]) continue;
            bh.push_back({q, cols[k], vals[k]});
        }
    }
    const SparseMatrix Bhat = SparseMatrix::from_triplets(n_, 2 * n_, bh);
    Bhat_t_ = Bhat.transposed();
    L_ = SparseMatrix::scaled_gram(Bhat, invml2_);

    // Equal-order pairs carry spurious pressure modes (exact checkerboard
    // kernel on uniform quads). Damp them with a tiny diagonal shift: the
    // velocity correction B^T p annihilates kernel modes, so the shift only
    // stabilizes the factorization; it perturbs the projected divergence by
    // O(eps * ||p||), far below solver tolerances.
    double diag_max = 0.0;
    for (double d : L_.diagonal()) diag_max = std::max(diag_max, d);
    const double eps = 1e-12 * diag_max;

    std::vector<Triplet> lt;
    for (int q = 0; q < n_; ++q) {
        const int* cols = L_.row_cols(q);
        const double* vals = L_.row_vals(q);
        for (int k = 0; k < L_.row_nnz(q); ++k) lt.push_back({q, cols[k], vals[k]});
        lt.push_back({q, q, eps});
    }
    if (closed_) {
        // Closed domains: the projection operator annihilates constants; fix
        // the gauge with a mean-zero multiplier, as in the coupled solver.
        mp_ = assemble_scalar_load(V_, [](Vec2) { return 1.0; });
        for (int q = 0; q < n_; ++q) {
            lt.push_back({q, n_, mp_[static_cast<size_t>(q)]});
            lt.push_back({n_, q, mp_[static_cast<size_t>(q)]});
        }
        const SparseMatrix aug = SparseMatrix::from_triplets(n_ + 1, n_ + 1, lt);
        proj_lu_ = std::make_unique<LuFactorization>(aug);
        if (!proj_lu_->ok())
            throw std::runtime_error("FemSplitSolver: projection factorization failed");
    } else {
        proj_sys_ = std::make_unique<ConstrainedSPD>(lt, n_, pressure_bc_);
        proj_llt_ = std::make_unique<CholeskyFactorization>(proj_sys_->matrix());
        if (!proj_llt_->ok())
            throw std::runtime_error("FemSplitSolver: projection factorization failed");
    }

    reset_state();
}

void FemSplitSolver::reset_state() {
    fields_.velocity.assign(static_cast<size_t>(2 * n_), 0.0);
    fields_.pressure.assign(static_cast<size_t>(n_), 0.0);
    if (problem_.u0) {
        for (int i = 0; i < n_; ++i) {
            const Vec2 u = problem_.u0(V_.dof_coord(i));
            fields_.velocity[static_cast<size_t>(i)] = u.x;
            fields_.velocity[static_cast<size_t>(n_ + i)] = u.y;
        }
    }
    particles_ = ParticleSet{};
    t_ = 0.0;
    resample_counter_ = 0;
    last_divergence_ = 0.0;
}

void FemSplitSolver::set_velocity(std::vector<double> u) {
    if (static_cast<int>(u.size()) != 2 * n_)
        throw std::invalid_argument("set_velocity: wrong length");
    fields_.velocity = std::move(u);
}

void FemSplitSolver::overwrite_dirichlet(std::vector<double>& u, double t) const {
    for (size_t k = 0; k < dirichlet_.size(); ++k) {
        const Vec2 d =
            problem_.dirichlet ? problem_.dirichlet(dirichlet_x_[k], t) : Vec2{0.0, 0.0};
        u[static_cast<size_t>(dirichlet_[k])] = d.x;
        u[static_cast<size_t>(n_ + dirichlet_[k])] = d.y;
    }
}

void FemSplitSolver::ensure_diffusion(double dt) {
    if (diff_dt_ && *diff_dt_ == dt) return;
    std::vector<Triplet> trips;
    for (int i = 0; i < n_; ++i) {
        const int* mc = M_.row_cols(i);
        const double* mv = M_.row_vals(i);
        for (int k = 0; k < M_.row_nnz(i); ++k)
            trips.push_back({i, mc[k], problem_.rho * mv[k]});
        const int* kc = K_.row_cols(i);
        const double* kv = K_.row_vals(i);
        for (int k = 0; k < K_.row_nnz(i); ++k)
            trips.push_back({i, kc[k], dt * problem_.nu * kv[k]});
    }
    diff_sys_ = std::make_unique<ConstrainedSPD>(trips, n_, dirichlet_);
    diff_llt_ = std::make_unique<CholeskyFactorization>(diff_sys_->matrix());
    if (!diff_llt_->ok())
        throw std::runtime_error("FemSplitSolver: diffusion factorization failed");
    diff_dt_ = dt;
}

void FemSplitSolver::diffuse(std::vector<double>& u, double dt, double t_new) {
    if (problem_.nu == 0.0) return;  // boundary values were already overwritten
    ensure_diffusion(dt);
    std::vector<double> g(static_cast<size_t>(n_), 0.0);
    std::vector<double> comp(static_cast<size_t>(n_));
    for (int c = 0; c < 2; ++c) {
        const int off = c == 0 ? 0 : n_;
        std::copy(u.begin() + off, u.begin() + off + n_, comp.begin());
        std::vector<double> b(static_cast<size_t>(n_), 0.0);
        M_.multiply_add(comp, problem_.rho, b);
        for (size_t k = 0; k < dirichlet_.size(); ++k) {
            const Vec2 d = problem_.dirichlet ? problem_.dirichlet(dirichlet_x_[k], t_new)
                                              : Vec2{0.0, 0.0};
            g[static_cast<size_t>(dirichlet_[k])] = c == 0 ? d.x : d.y;
        }
        diff_sys_->apply_rhs(b, g);
        const std::vector<double> sol = diff_llt_->solve(b);
        std::copy(sol.begin(), sol.end(), u.begin() + off);
    }
}

void FemSplitSolver::project(std::vector<double>& u, std::vector<double>& p, double dt) {
    std::vector<double> rhs(static_cast<size_t>(n_), 0.0);
    B_.multiply_add(u, -problem_.rho / dt, rhs);
    if (closed_) {
        std::vector<double> aug(static_cast<size_t>(n_ + 1), 0.0);
        std::copy(rhs.begin(), rhs.end(), aug.begin());
        const std::vector<double> sol = proj_lu_->solve(aug);
        p.assign(sol.begin(), sol.begin() + n_);
    } else {
        const std::vector<double> zeros(static_cast<size_t>(n_), 0.0);
        proj_sys_->apply_rhs(rhs, zeros);
        p = proj_llt_->solve(rhs);
    }
    const std::vector<double> corr = Bhat_t_.multiply(p);
    const double s = dt / problem_.rho;
    for (int i = 0; i < 2 * n_; ++i)
        u[static_cast<size_t>(i)] += s * invml2_[static_cast<size_t>(i)] * corr[static_cast<size_t>(i)];
}

double FemSplitSolver::weak_divergence(const std::vector<double>& u) const {
    return norm2(B_.multiply(u));
}

void FemSplitSolver::step_to(double t_new) {
    const double dt = t_new - t_;
    if (!(dt > 0.0)) throw std::invalid_argument("FemSplitSolver::step: dt must be positive");

    std::vector<double> u = fields_.velocity;
    std::vector<double> flip_old;
    const bool flip = cfg_.enable_advection && cfg_.advection == AdvectionScheme::Flip;

    double t0 = now_seconds();
    if (cfg_.enable_advection) {
        if (cfg_.advection == AdvectionScheme::SemiLagrangian) {
            u = advect_semi_lagrangian(V_, hash_, u, dt);
        } else {
            particles_ = particles_resample(particles_, V_, hash_, u,
                                            mix_seed(cfg_.particle_seed, resample_counter_++));
            particles_ = particles_advect_rk3(particles_, V_, hash_, u, dt);
            u = p2g_transfer(particles_, V_, hash_, fields_.velocity);
            flip_old = u;
        }
    }
    wall_advect_ += now_seconds() - t0;

    if (problem_.body_force) {
        for (int i = 0; i < n_; ++i) {
            const Vec2 b = problem_.body_force(V_.dof_coord(i), t_);
            u[static_cast<size_t>(i)] += dt * b.x / problem_.rho;
            u[static_cast<size_t>(n_ + i)] += dt * b.y / problem_.rho;
        }
    }
    overwrite_dirichlet(u, t_new);

    t0 = now_seconds();
    diffuse(u, dt, t_new);
    wall_diffuse_ += now_seconds() - t0;

    t0 = now_seconds();
    project(u, fields_.pressure, dt);
    wall_project_ += now_seconds() - t0;

    if (!all_finite(u)) throw std::runtime_error("solution diverged (non-finite velocity)");
    if (flip)
        particles_ = g2p_flip_update(particles_, V_, hash_, flip_old, u, cfg_.flip_blend);
    last_divergence_ = weak_divergence(u);
    fields_.velocity = std::move(u);
    t_ = t_new;
}

void FemSplitSolver::step(double dt) { step_to(t_ + dt); }

SplitRunResult FemSplitSolver::run(double dt, const std::vector<double>& snapshot_times,
                                   const SnapshotFn& on_snapshot) {
    SplitRunResult out;
    if (!(dt > 0.0)) {
        out.message = "time step must be positive";
        return out;
    }
    if (!(problem_.T > 0.0)) {
        out.message = "final time must be positive";
        return out;
    }
    reset_state();
    wall_advect_ = wall_diffuse_ = wall_project_ = 0.0;
    const double wall_start = now_seconds();
    const double tol = 1e-10 * std::max(1.0, problem_.T);
    const auto events = build_events(problem_.T, snapshot_times, tol);
    if (on_snapshot && wants_time_zero(snapshot_times, tol)) on_snapshot(0.0, fields_);

    for (const auto& [target, emit] : events) {
        while (t_ < target - tol) {
            double t_next = std::min(t_ + dt, target);
            if (target - t_next <= tol) t_next = target;
            try {
                step_to(t_next);
            } catch (const std::exception& e) {
                out.message = "step to t = " + format_time(t_next) + " failed: " + e.what();
                out.final_time = t_;
                out.wall_total = now_seconds() - wall_start;
                return out;
            }
            ++out.steps;
            out.max_step_divergence = std::max(out.max_step_divergence, last_divergence_);
        }
        if (emit && on_snapshot) on_snapshot(t_, fields_);
    }
    out.ok = true;
    out.final_time = t_;
    out.particle_count = particles_.live_count();
    out.wall_advect = wall_advect_;
    out.wall_diffuse = wall_diffuse_;
    out.wall_project = wall_project_;
    out.wall_total = now_seconds() - wall_start;
    return out;
}

// --- MAC solver --------------------------------------------------------------------

MacSplitSolver::MacSplitSolver(const StaggeredGrid& grid, const BenchmarkProblem& problem,
                               SplitConfig cfg)
    : grid_(grid), problem_(problem), cfg_(cfg) {
    const auto neumann_here = [&](Vec2 x) {
        return problem_.is_neumann && problem_.is_neumann(x);
    };
    for (int j = 0; j < grid_.ny; ++j)
        for (int i : {0, grid_.nx}) {
            const Vec2 pos = grid_.u_position(i, j);
            if (!neumann_here(pos)) dir_u_.push_back({grid_.u_index(i, j), pos});
        }
    for (int i = 0; i < grid_.nx; ++i)
        for (int j : {0, grid_.ny}) {
            const Vec2 pos = grid_.v_position(i, j);
            if (!neumann_here(pos)) dir_v_.push_back({grid_.v_index(i, j), pos});
        }
    reset_state();
}

void MacSplitSolver::reset_state() {
    if (problem_.u0) {
        vel_ = sample_field(grid_, [&](Vec2 x) { return problem_.u0(x); });
    } else {
        vel_ = make_velocity(grid_);
    }
    p_.assign(static_cast<size_t>(grid_.num_cells()), 0.0);
    particles_ = ParticleSet{};
    t_ = 0.0;
    resample_counter_ = 0;
    last_divergence_ = 0.0;
}

void MacSplitSolver::set_velocity(MacVelocity v) {
    if (v.u.size() != static_cast<size_t>(grid_.num_u()) ||
        v.v.size() != static_cast<size_t>(grid_.num_v()))
        throw std::invalid_argument("set_velocity: wrong lattice sizes");
    vel_ = std::move(v);
}

Vec2 MacSplitSolver::dirichlet_value(Vec2 x, double t) const {
    return problem_.dirichlet ? problem_.dirichlet(x, t) : Vec2{0.0, 0.0};
}

void MacSplitSolver::overwrite_dirichlet(MacVelocity& u, double t) const {
    for (const auto& [idx, pos] : dir_u_) u.u[static_cast<size_t>(idx)] = dirichlet_value(pos, t).x;
    for (const auto& [idx, pos] : dir_v_) u.v[static_cast<size_t>(idx)] = dirichlet_value(pos, t).y;
}

void MacSplitSolver::ensure_operators(double dt) {
    if (ops_dt_ && *ops_dt_ == dt) return;
    if (problem_.nu > 0.0) {
        diff_u_ = std::make_unique<MacDiffusion>(grid_, dt, problem_.nu, problem_.rho, 0,
                                                 problem_.is_neumann);
        diff_v_ = std::make_unique<MacDiffusion>(grid_, dt, problem_.nu, problem_.rho, 1,
                                                 problem_.is_neumann);
    }
    proj_ = std::make_unique<MacProjection>(grid_, dt, problem_.rho, problem_.is_neumann);
    ops_dt_ = dt;
}

void MacSplitSolver::diffuse(MacVelocity& u, double dt, double t_new) {
    if (problem_.nu == 0.0) return;
    ensure_operators(dt);
    SolveReport rep;
    u.u = diff_u_->solve(u.u, [&](Vec2 x) { return dirichlet_value(x, t_new).x; }, &rep);
    if (!rep.converged) throw std::runtime_error("diffusion solve failed (u component)");
    u.v = diff_v_->solve(u.v, [&](Vec2 x) { return dirichlet_value(x, t_new).y; }, &rep);
    if (!rep.converged) throw std::runtime_error("diffusion solve failed (v component)");
}

void MacSplitSolver::project(MacVelocity& u, std::vector<double>& p, double dt) {
    ensure_operators(dt);
    SolveReport rep;
    u = proj_->project(u, &p, &rep);
    if (!rep.converged) throw std::runtime_error("pressure projection solve failed");
}

double MacSplitSolver::max_divergence(const MacVelocity& u) const {
    const std::vector<double> div = divergence(grid_, u);
    double m = 0.0;
    for (double d : div) m = std::max(m, std::abs(d));
    return m;
}

void MacSplitSolver::step_to(double t_new) {
    const double dt = t_new - t_;
    if (!(dt > 0.0)) throw std::invalid_argument("MacSplitSolver::step: dt must be positive");

    MacVelocity u = vel_;
    MacVelocity flip_old;
    const bool flip = cfg_.enable_advection && cfg_.advection == AdvectionScheme::Flip;

    double t0 = now_seconds();
    if (cfg_.enable_advection) {
        if (cfg_.advection == AdvectionScheme::SemiLagrangian) {
            u = advect_semi_lagrangian(grid_, u, dt);
        } else {
            particles_ = particles_resample(particles_, grid_, u,
                                            mix_seed(cfg_.particle_seed, resample_counter_++));
            particles_ = particles_advect_rk3(particles_, grid_, u, dt);
            u = p2g_transfer(particles_, grid_, vel_);
            flip_old = u;
        }
    }
    wall_advect_ += now_seconds() - t0;

    if (problem_.body_force) {
        for (int j = 0; j < grid_.ny; ++j)
            for (int i = 0; i <= grid_.nx; ++i) {
                const Vec2 b = problem_.body_force(grid_.u_position(i, j), t_);
                u.u[static_cast<size_t>(grid_.u_index(i, j))] += dt * b.x / problem_.rho;
            }
        for (int j = 0; j <= grid_.ny; ++j)
            for (int i = 0; i < grid_.nx; ++i) {
                const Vec2 b = problem_.body_force(grid_.v_position(i, j), t_);
                u.v[static_cast<size_t>(grid_.v_index(i, j))] += dt * b.y / problem_.rho;
            }
    }
    overwrite_dirichlet(u, t_new);

    t0 = now_seconds();
    diffuse(u, dt, t_new);
    wall_diffuse_ += now_seconds() - t0;

    t0 = now_seconds();
    project(u, p_, dt);
    wall_project_ += now_seconds() - t0;

    if (!all_finite(u.u) || !all_finite(u.v))
        throw std::runtime_error("solution diverged (non-finite velocity)");
    if (flip) particles_ = g2p_flip_update(particles_, grid_, flip_old, u, cfg_.flip_blend);
    last_divergence_ = max_divergence(u);
    vel_ = std::move(u);
    t_ = t_new;
}

void MacSplitSolver::step(double dt) { step_to(t_ + dt); }

SplitRunResult MacSplitSolver::run(double dt, const std::vector<double>& snapshot_times,
                                   const MacSnapshotFn& on_snapshot) {
    SplitRunResult out;
    if (!(dt > 0.0)) {
        out.message = "time step must be positive";
        return out;
    }
    if (!(problem_.T > 0.0)) {
        out.message = "final time must be positive";
        return out;
    }
    reset_state();
    wall_advect_ = wall_diffuse_ = wall_project_ = 0.0;
    const double wall_start = now_seconds();
    const double tol = 1e-10 * std::max(1.0, problem_.T);
    const auto events = build_events(problem_.T, snapshot_times, tol);
    if (on_snapshot && wants_time_zero(snapshot_times, tol)) on_snapshot(0.0, vel_, p_);

    for (const auto& [target, emit] : events) {
        while (t_ < target - tol) {
            double t_next = std::min(t_ + dt, target);
            if (target - t_next <= tol) t_next = target;
            try {
                step_to(t_next);
            } catch (const std::exception& e) {
                out.message = "step to t = " + format_time(t_next) + " failed: " + e.what();
                out.final_time = t_;
                out.wall_total = now_seconds() - wall_start;
                return out;
            }
            ++out.steps;
            out.max_step_divergence = std::max(out.max_step_divergence, last_divergence_);
        }
        if (emit && on_snapshot) on_snapshot(t_, vel_, p_);
    }
    out.ok = true;
    out.final_time = t_;
    out.particle_count = particles_.live_count();
    out.wall_advect = wall_advect_;
    out.wall_diffuse = wall_diffuse_;
    out.wall_project = wall_project_;
    out.wall_total = now_seconds() - wall_start;
    return out;
}

}  // namespace nslab
