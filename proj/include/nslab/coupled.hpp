#pragma once
/// @brief Fully coupled transient Navier-Stokes solver on Taylor-Hood
/// elements (quadratic velocity, linear pressure) with BDF time stepping and
/// a Picard-then-Newton nonlinear loop per step.

#include <functional>
#include <string>
#include <vector>

#include "nslab/fem.hpp"
#include "nslab/problems.hpp"

namespace nslab {

/// Backward differentiation coefficients for a uniform step: the scheme reads
/// (alpha0 * u^{n+1} + sum_k history[k] * u^{n-k}) / dt = f(u^{n+1}).
struct BdfCoefficients {
    double alpha0 = 1.0;
    std::vector<double> history;  ///< most recent first
};

/// Coefficients for orders 1..3; throws std::invalid_argument otherwise.
BdfCoefficients bdf_coefficients(int order);

/// First-derivative weights at `t_new` of the interpolating polynomial
/// through (t_new, u_new) and the history samples (times most recent first):
/// u'(t_new) ~= w_new * u_new + sum_k w_hist[k] * u_hist[k].  For uniformly
/// spaced times this reproduces bdf_coefficients(order) scaled by 1/dt, and
/// it stays consistent when a step was shortened to land on a snapshot.
struct BdfWeights {
    double w_new = 0.0;
    std::vector<double> w_hist;
};
BdfWeights bdf_weights(double t_new, const std::vector<double>& hist_times);

/// Velocity history ring for BDF stepping. Fields are velocity coefficient
/// vectors (x block then y block); entry 0 is the most recent.
struct BdfState {
    std::vector<std::vector<double>> history;  ///< up to 3 fields
    std::vector<double> times;                 ///< matching sample times
    int step_index = 0;                        ///< total fields pushed
    double dt = 0.0;                           ///< nominal step size

    /// BDF order the next step will use.
    int order() const { return static_cast<int>(history.size()); }
    void push(std::vector<double> u, double t);
};

/// Nonlinear iteration controls: Picard (Oseen) warm-up to a loose tolerance,
/// then Newton to the tight one. Tolerances are relative to the residual of
/// the constant-extrapolation start iterate.
struct NewtonConfig {
    double picard_tol = 1e-3;
    double newton_tol = 1e-8;
    int max_picard = 25;
    int max_newton = 25;
};

/// How the pressure constant mode is fixed when the velocity boundary is
/// all-Dirichlet. MeanZero appends a scalar multiplier enforcing a zero mean;
/// Pin constrains the first pressure unknown (test/diagnostic mode).
enum class PressureFix { MeanZero, Pin };

struct CoupledOptions {
    NewtonConfig newton;
    bool convection = true;      ///< false: Stokes limit (linear per step)
    bool line_search = true;     ///< backtracking halving in the Newton phase
    int bdf1_substeps = 8;       ///< substeps inside the first (BDF1) step
    PressureFix pressure_fix = PressureFix::MeanZero;
    /// Saddle-point linear solver controls; the default keeps every mesh this
    /// suite runs on the sparse-LU path.
    GeneralOptions linear{.direct_threshold = 200000};
};

struct FieldPair {
    std::vector<double> velocity;  ///< 2n: x block then y block
    std::vector<double> pressure;  ///< pressure-space coefficients
};

struct StepReport {
    bool converged = false;
    int picard_iterations = 0;
    int newton_iterations = 0;
    std::vector<double> residuals;  ///< scaled residual after each iterate
    std::string message;            ///< failure description when !converged
};

struct RunResult {
    bool ok = false;
    std::string message;
    FieldPair fields;       ///< state at final_time
    double final_time = 0.0;
    int steps = 0;
    int total_picard = 0;
    int total_newton = 0;
    std::vector<double> failure_residuals;  ///< residual history of a failed step
    double wall_assembly = 0.0;  ///< seconds spent building operators
    double wall_solve = 0.0;     ///< seconds spent in linear solves
    double wall_total = 0.0;
};

/// Callback invoked at requested snapshot times (and t = 0 when requested).
using SnapshotFn = std::function<void(double t, const FieldPair&)>;

class CoupledSolver {
  public:
    /// The mesh must resolve the problem geometry; boundary conditions and
    /// coefficients come from `problem`.
    CoupledSolver(const SimMesh& mesh, const BenchmarkProblem& problem,
                  CoupledOptions options = {});

    const FESpace& velocity_space() const { return V_; }
    const FESpace& pressure_space() const { return Q_; }
    const BenchmarkProblem& problem() const { return problem_; }
    bool pure_dirichlet() const { return all_dirichlet_; }

    /// Initial fields: u0 interpolated at velocity dofs, zero pressure.
    FieldPair initial_fields() const;

    /// Advance one BDF step to time `t_new`. The order is the current history
    /// length (capped at 3). On success the new velocity is pushed into
    /// `state` and `fields` holds the new pair; on failure both are left at
    /// the pre-step values.
    StepReport step(BdfState& state, FieldPair& fields, double t_new);

    /// March from t = 0 to problem.T with nominal step `dt` (steps shrink to
    /// land exactly on snapshot times and on T). The first step integrates
    /// BDF1 over `bdf1_substeps` internal substeps, the second uses BDF2, and
    /// later ones BDF3.
    RunResult run(double dt, const std::vector<double>& snapshot_times = {},
                  const SnapshotFn& on_snapshot = nullptr);

  private:
    struct Scratch;

    double residual(const std::vector<double>& u, const std::vector<double>& p,
                    double lambda, const BdfWeights& w,
                    const std::vector<double>& hist_comb,
                    const std::vector<double>& load, std::vector<double>& r,
                    double* term_magnitude = nullptr) const;
    void append_block(std::vector<Triplet>& trips, const SparseMatrix& M,
                      int row_off, int col_off, double scale) const;
    std::vector<double> assemble_loads(double t) const;

    SimMesh mesh_;
    BenchmarkProblem problem_;
    CoupledOptions opts_;
    FESpace V_;  ///< velocity scalar space (order 2)
    FESpace Q_;  ///< pressure space (order 1)
    int n_ = 0;  ///< scalar velocity dofs
    int m_ = 0;  ///< pressure dofs
    bool all_dirichlet_ = true;
    bool multiplier_ = false;  ///< mean-zero multiplier row active
    int nsys_ = 0;             ///< saddle system size

    SparseMatrix Mv_, Kv_, B_, Bt_;
    std::vector<double> mp_;            ///< pressure mean weights (psi_q, 1)
    std::vector<int> dirichlet_dofs_;   ///< scalar dof ids on the Dirichlet part
    std::vector<Vec2> dirichlet_xs_;    ///< their coordinates
    struct NeumannEdge {
        Vec2 a, b;
        int dof_a, dof_b, dof_mid;  ///< velocity scalar dofs on the edge
    };
    std::vector<NeumannEdge> neumann_edges_;
    std::vector<char> constrained_flag_;  ///< per saddle row: Dirichlet/pin
    std::vector<int> constrained_rows_;

    mutable double wall_assembly_ = 0.0;
    mutable double wall_solve_ = 0.0;
};

}  // namespace nslab
