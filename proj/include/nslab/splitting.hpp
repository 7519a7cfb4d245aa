/// @file splitting.hpp
/// @brief Chorin splitting solvers (advect -> body force -> diffuse ->
/// project) on two backends: equal-order FEM (P1/Q1) and staggered MAC
/// grids, with semi-Lagrangian or particle (FLIP) advection.
#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nslab/coupled.hpp"  // FieldPair, SnapshotFn
#include "nslab/fem.hpp"
#include "nslab/mac_grid.hpp"
#include "nslab/problems.hpp"

namespace nslab {

enum class AdvectionScheme { SemiLagrangian, Flip };
enum class SplitBackend { Fem, Mac };

struct SplitConfig {
    AdvectionScheme advection = AdvectionScheme::SemiLagrangian;
    SplitBackend backend = SplitBackend::Fem;
    double flip_blend = 1.0;       ///< particle update mix: 1 = FLIP, 0 = PIC
    unsigned particle_seed = 0;    ///< jitter stream for particle resampling
    bool enable_advection = true;  ///< test hook: skip the advection sub-step
};

/// Advection particles. Particles that leave the domain are kept in place but
/// flagged; transfers ignore them and the next resample drops them.
struct ParticleSet {
    std::vector<Vec2> positions;
    std::vector<Vec2> velocities;
    std::vector<char> outside;

    int size() const { return static_cast<int>(positions.size()); }
    int live_count() const;
};

/// One Ralston third-order Runge-Kutta step of dx/dt = velocity(x). A
/// negative dt traces backwards (semi-Lagrangian departure points).
Vec2 rk3_advect(const std::function<Vec2(Vec2)>& velocity, Vec2 x, double dt);

// --- MAC backend operations --------------------------------------------------

/// Sample every staggered component at its RK3-backtraced departure point.
MacVelocity advect_semi_lagrangian(const StaggeredGrid& grid, const MacVelocity& vel, double dt);

/// Move particles through the frozen grid field with RK3; out-of-grid queries
/// are projected to the domain boundary, particles ending outside the grid or
/// in a solid cell are flagged.
ParticleSet particles_advect_rk3(const ParticleSet& pts, const StaggeredGrid& grid,
                                 const MacVelocity& vel, double dt);

/// Weighted average of particle velocities at every staggered sample
/// (bilinear hat weights on each component lattice); zero-weight samples keep
/// the fallback value.
MacVelocity p2g_transfer(const ParticleSet& pts, const StaggeredGrid& grid,
                         const MacVelocity& fallback);

/// FLIP/PIC particle update:
/// v <- blend*(v + (new - old)(x)) + (1-blend)*new(x).
ParticleSet g2p_flip_update(const ParticleSet& pts, const StaggeredGrid& grid,
                            const MacVelocity& grid_old, const MacVelocity& grid_new,
                            double blend);

/// Top-up/thin-out to exactly 4 particles per fluid cell: in-domain particles
/// are kept oldest-first up to 4 per cell, deficits are filled at stratified
/// jittered positions (deterministic in `seed`) with velocities interpolated
/// from `vel`; flagged or out-of-cell-range particles are dropped.
ParticleSet particles_resample(const ParticleSet& current, const StaggeredGrid& grid,
                               const MacVelocity& vel, unsigned seed);

// --- FEM backend operations ---------------------------------------------------

/// Interpolate a P1/Q1 vector field at x; out-of-mesh queries are projected
/// to the closest boundary point first.
Vec2 sample_fem_velocity(const FESpace& V, const SpatialHash& hash,
                         const std::vector<double>& vel, Vec2 x);

/// Nodal semi-Lagrangian update of a vector field (order-1 spaces).
std::vector<double> advect_semi_lagrangian(const FESpace& V, const SpatialHash& hash,
                                           const std::vector<double>& vel, double dt);

ParticleSet particles_advect_rk3(const ParticleSet& pts, const FESpace& V,
                                 const SpatialHash& hash, const std::vector<double>& vel,
                                 double dt);

/// Shape-function-weighted average of particle velocities at every node;
/// zero-weight nodes keep the fallback value. Order-1 spaces only.
std::vector<double> p2g_transfer(const ParticleSet& pts, const FESpace& V,
                                 const SpatialHash& hash, const std::vector<double>& fallback);

ParticleSet g2p_flip_update(const ParticleSet& pts, const FESpace& V, const SpatialHash& hash,
                            const std::vector<double>& grid_old,
                            const std::vector<double>& grid_new, double blend);

/// Top-up/thin-out to exactly 4 particles per element (see the MAC overload).
ParticleSet particles_resample(const ParticleSet& current, const FESpace& V,
                               const SpatialHash& hash, const std::vector<double>& vel,
                               unsigned seed);

// --- solvers -------------------------------------------------------------------

struct SplitRunResult {
    bool ok = false;
    std::string message;
    double final_time = 0.0;
    int steps = 0;
    double wall_total = 0.0;
    double wall_advect = 0.0;
    double wall_diffuse = 0.0;
    double wall_project = 0.0;
    /// Max over steps of the post-projection divergence measure
    /// (FEM: ||B u||_2 weak divergence; MAC: max-norm cell divergence).
    double max_step_divergence = 0.0;
    int particle_count = 0;  ///< live particles after the last step (FLIP)
};

/// Equal-order (P1/Q1) FEM splitting solver. Pressure Poisson uses the
/// discrete projection operator B M_L^{-1} B^T restricted to unconstrained
/// velocity dofs; the nodal correction M_L^{-1} B^T p coincides with the
/// area-weighted adjacent-element pressure-gradient average on P1.
class FemSplitSolver {
  public:
    FemSplitSolver(const SimMesh& mesh, const BenchmarkProblem& problem, SplitConfig cfg = {});

    const FESpace& space() const { return V_; }
    const SpatialHash& hash() const { return hash_; }
    const BenchmarkProblem& problem() const { return problem_; }
    const FieldPair& fields() const { return fields_; }
    const ParticleSet& particles() const { return particles_; }
    double time() const { return t_; }

    /// Replace the velocity state (test hook; length 2*num_dofs).
    void set_velocity(std::vector<double> u);

    /// One Chorin step to time() + dt. Throws std::runtime_error on a solver
    /// failure or a non-finite result.
    void step(double dt);

    /// March to the problem's final time, restarting from the initial state.
    /// Snapshot times are hit exactly by shortening the affected steps.
    SplitRunResult run(double dt, const std::vector<double>& snapshot_times = {},
                       const SnapshotFn& on_snapshot = nullptr);

    // Individual sub-steps, exposed for property tests.
    void overwrite_dirichlet(std::vector<double>& u, double t) const;
    void diffuse(std::vector<double>& u, double dt, double t_new);
    void project(std::vector<double>& u, std::vector<double>& p, double dt);

    double weak_divergence(const std::vector<double>& u) const;

  private:
    void ensure_diffusion(double dt);
    void step_to(double t_new);
    void reset_state();

    SimMesh mesh_;
    BenchmarkProblem problem_;
    SplitConfig cfg_;
    FESpace V_;
    SpatialHash hash_;
    int n_ = 0;
    SparseMatrix M_, K_, B_, Bhat_t_, L_;
    std::vector<double> invml2_;  ///< inverse lumped vector mass (2n)
    std::vector<double> mp_;      ///< pressure averaging weights (closed domains)
    std::vector<int> dirichlet_;
    std::vector<Vec2> dirichlet_x_;
    std::vector<char> is_dirichlet_;
    std::vector<int> pressure_bc_;
    bool closed_ = true;
    std::unique_ptr<LuFactorization> proj_lu_;
    std::unique_ptr<ConstrainedSPD> proj_sys_;
    std::unique_ptr<CholeskyFactorization> proj_llt_;
    std::optional<double> diff_dt_;
    std::unique_ptr<ConstrainedSPD> diff_sys_;
    std::unique_ptr<CholeskyFactorization> diff_llt_;
    FieldPair fields_;
    ParticleSet particles_;
    double t_ = 0.0;
    unsigned resample_counter_ = 0;
    double wall_advect_ = 0.0, wall_diffuse_ = 0.0, wall_project_ = 0.0;
    double last_divergence_ = 0.0;
};

using MacSnapshotFn =
    std::function<void(double, const MacVelocity&, const std::vector<double>&)>;

/// Staggered finite-difference splitting solver (Chorin on a MAC grid).
class MacSplitSolver {
  public:
    MacSplitSolver(const StaggeredGrid& grid, const BenchmarkProblem& problem,
                   SplitConfig cfg = {});

    const StaggeredGrid& grid() const { return grid_; }
    const BenchmarkProblem& problem() const { return problem_; }
    const MacVelocity& velocity() const { return vel_; }
    const std::vector<double>& pressure() const { return p_; }
    const ParticleSet& particles() const { return particles_; }
    double time() const { return t_; }

    void set_velocity(MacVelocity v);
    void step(double dt);
    SplitRunResult run(double dt, const std::vector<double>& snapshot_times = {},
                       const MacSnapshotFn& on_snapshot = nullptr);

    void overwrite_dirichlet(MacVelocity& u, double t) const;
    void diffuse(MacVelocity& u, double dt, double t_new);
    void project(MacVelocity& u, std::vector<double>& p, double dt);

    /// Max-norm of the fraction-weighted cell divergence.
    double max_divergence(const MacVelocity& u) const;

  private:
    void ensure_operators(double dt);
    void step_to(double t_new);
    void reset_state();
    Vec2 dirichlet_value(Vec2 x, double t) const;

    StaggeredGrid grid_;
    BenchmarkProblem problem_;
    SplitConfig cfg_;
    std::vector<std::pair<int, Vec2>> dir_u_, dir_v_;  ///< boundary Dirichlet faces
    std::optional<double> ops_dt_;
    std::unique_ptr<MacDiffusion> diff_u_, diff_v_;
    std::unique_ptr<MacProjection> proj_;
    MacVelocity vel_;
    std::vector<double> p_;
    ParticleSet particles_;
    double t_ = 0.0;
    unsigned resample_counter_ = 0;
    double wall_advect_ = 0.0, wall_diffuse_ = 0.0, wall_project_ = 0.0;
    double last_divergence_ = 0.0;
};

}  // namespace nslab
