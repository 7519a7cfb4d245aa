/// @file ab2am2.hpp
/// @brief Fully explicit predictor-corrector flow solver: Adams-Bashforth-2
/// prediction, pressure Poisson update with divergence damping, and a
/// modified Adams-Moulton-2 (trapezoid) correction. Runs on equal-order
/// (P1/Q1) or quadratic-velocity (P2/Q2 with P1/Q1 pressure) spaces.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nslab/coupled.hpp"  // FieldPair, SnapshotFn
#include "nslab/fem.hpp"
#include "nslab/problems.hpp"

namespace nslab {

struct Ab2Config {
    /// 1 = equal-order velocity/pressure, 2 = quadratic velocity with linear
    /// pressure. Order 1 uses lumped mass for the explicit updates; order 2
    /// inverts the consistent mass with a prefactored Cholesky (row-sum
    /// lumping is indefinite for quadratic bases).
    int velocity_order = 1;
    /// Divergence damping: weight of div(u^n) added to the pressure
    /// right-hand side to bleed off divergence the nodal-averaged gradient
    /// lift cannot cancel exactly.
    double c_damp = 0.5;
};

struct Ab2RunResult {
    bool ok = false;
    std::string message;
    double final_time = 0.0;
    int steps = 0;
    double wall_total = 0.0;
    /// Max over steps of the max nodal velocity magnitude (stability probe).
    double max_velocity = 0.0;
    /// Max over steps of the weak divergence ||B u||_2 after the correction.
    double max_divergence = 0.0;
};

/// Explicit split-step solver. One step:
///   1. F^n = -(u.grad)u + (nu/rho) lap u - (1/rho) grad p + b/rho, with the
///      pressure gradient applied through the mass-inverted transpose of the
///      divergence form (the weak Galerkin gradient; rows of prescribed
///      velocity dofs dropped).
///   2. Predictor u* = u^n + dt[(1 + r/2) F^n - (r/2) F^{n-1}] with
///      r = dt/dt_prev (3/2 and -1/2 on uniform steps); Dirichlet overwritten
///      at t^{n+1}. The pressure entering through F^n / F^{n-1} acts as the
///      extrapolated pressure p_ext = (1 + r/2) p^n - (r/2) p^{n-1}.
///   3. Pressure increment: L phi = -(rho/dt)[B u* + c_damp B u^n] with
///      phi = 0 on the open part of the boundary (mean-zero multiplier on
///      closed domains); p^{n+1} = p_ext + phi. For the equal-order pair L is
///      the composition of divergence and lift, B_hat diag(1/m_L) B_hat^T, so
///      the correction cancels exactly the divergence the solve measures; for
///      the inf-sup stable mixed pair L is the assembled pressure Laplacian.
///   4. Corrector u^{n+1} = u^n + (dt/2)(A(u*) + A(u^n)) + (dt/rho) M^-1 B^T
///      p^{n+1} where A is the pressure-free part of F: trapezoid weights on
///      transport/diffusion/forces, full weight on the new pressure (plain
///      trapezoid pressure weights amplify the divergence mode by a factor
///      of about 2 per step regardless of dt). The divergence history then
///      obeys d^{n+1} = -c_damp d^n + O(dt), non-expansive on every mesh.
/// First step bootstraps with a forward-Euler predictor.
class Ab2Am2Solver {
  public:
    Ab2Am2Solver(const SimMesh& mesh, const BenchmarkProblem& problem, Ab2Config cfg = {});

    const FESpace& velocity_space() const { return Vv_; }
    const FESpace& pressure_space() const { return Vp_; }
    const BenchmarkProblem& problem() const { return problem_; }
    const FieldPair& fields() const { return fields_; }
    double time() const { return t_; }

    /// Replace the velocity state (test hook; length 2*velocity dofs).
    void set_velocity(std::vector<double> u);

    /// One predictor-corrector step to time() + dt. Throws std::runtime_error
    /// on non-finite or runaway velocities.
    void step(double dt);

    /// March to the problem's final time, restarting from the initial state.
    /// Snapshot times are hit exactly by shortening the affected steps.
    Ab2RunResult run(double dt, const std::vector<double>& snapshot_times = {},
                     const SnapshotFn& on_snapshot = nullptr);

    /// The explicit operator F(u, p, t) (step 1 above); exposed for tests.
    std::vector<double> explicit_rhs(const std::vector<double>& u,
                                     const std::vector<double>& p, double t) const;

    /// The pressure-increment Poisson solve (step 3); exposed for tests.
    std::vector<double> pressure_update(const std::vector<double>& u_star,
                                        const std::vector<double>& u_curr, double dt) const;

    double weak_divergence(const std::vector<double>& u) const;

  private:
    std::vector<double> advective_rhs(const std::vector<double>& u, double t) const;
    std::vector<double> mass_inverse(const std::vector<double>& weak) const;
    void overwrite_dirichlet(std::vector<double>& u, double t) const;
    void reset_state();
    void step_to(double t_new);

    SimMesh mesh_;
    BenchmarkProblem problem_;
    Ab2Config cfg_;
    FESpace Vv_, Vp_;
    int nv_ = 0, np_ = 0;
    SparseMatrix Kv2_;     ///< vector stiffness (2nv x 2nv)
    SparseMatrix B_;       ///< divergence form (np x 2nv)
    SparseMatrix Bhat_t_;  ///< transpose of B with Dirichlet columns dropped
    SparseMatrix Mv_;      ///< scalar velocity mass (consistent-mass path)
    std::vector<double> invml_;  ///< inverse lumped mass (order 1, length nv)
    std::unique_ptr<CholeskyFactorization> mass_llt_;
    std::vector<int> dirichlet_;
    std::vector<Vec2> dirichlet_x_;
    std::vector<int> pressure_bc_;
    bool closed_ = true;
    std::vector<double> mp_;  ///< pressure averaging weights (closed domains)
    std::unique_ptr<LuFactorization> pres_lu_;
    std::unique_ptr<ConstrainedSPD> pres_sys_;
    std::unique_ptr<CholeskyFactorization> pres_llt_;
    FieldPair fields_;
    std::vector<double> u_prev_, p_prev_, rhs_prev_;
    double dt_prev_ = 0.0;
    bool have_history_ = false;
    double t_ = 0.0;
    double max_velocity_ = 0.0;
    double max_div_ = 0.0;
};

}  // namespace nslab
