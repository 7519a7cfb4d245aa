#include "nslab/coupled.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>
#include <utility>

#include "nslab/linalg.hpp"

namespace nslab {

namespace {

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// 3-point Gauss-Legendre rule on [0,1]; exact through degree 5, enough for
// the quadratic edge trace times smooth boundary data.
constexpr double kEdgeGaussX[3] = {0.11270166537925831, 0.5, 0.88729833462074169};
constexpr double kEdgeGaussW[3] = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

std::string format_time(double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", t);
    return buf;
}

// Euclidean norm of |A| |x|: the magnitude of the terms summed inside A x,
// before cancellation. Used to size the roundoff floor of the residual.
double abs_product_norm(const SparseMatrix& A, const std::vector<double>& x) {
    double acc = 0.0;
    for (int i = 0; i < A.rows(); ++i) {
        const int* cols = A.row_cols(i);
        const double* vals = A.row_vals(i);
        const int nnz = A.row_nnz(i);
        double s = 0.0;
        for (int k = 0; k < nnz; ++k)
            s += std::abs(vals[k]) * std::abs(x[static_cast<size_t>(cols[k])]);
        acc += s * s;
    }
    return std::sqrt(acc);
}

}  // namespace

BdfCoefficients bdf_coefficients(int order) {
    switch (order) {
        case 1:
            return {1.0, {-1.0}};
        case 2:
            return {1.5, {-2.0, 0.5}};
        case 3:
            return {11.0 / 6.0, {-3.0, 1.5, -1.0 / 3.0}};
        default:
            throw std::invalid_argument("bdf_coefficients: order must be 1, 2, or 3");
    }
}

BdfWeights bdf_weights(double t_new, const std::vector<double>& hist_times) {
    const int q = static_cast<int>(hist_times.size());
    if (q < 1 || q > 3) throw std::invalid_argument("bdf_weights: need 1 to 3 history times");
    std::vector<double> tau(static_cast<size_t>(q) + 1);
    tau[0] = t_new;
    for (int i = 0; i < q; ++i) {
        tau[static_cast<size_t>(i) + 1] = hist_times[static_cast<size_t>(i)];
        const double prev = i == 0 ? t_new : hist_times[static_cast<size_t>(i) - 1];
        if (!(hist_times[static_cast<size_t>(i)] < prev))
            throw std::invalid_argument("bdf_weights: times must be strictly decreasing");
    }
    BdfWeights w;
    w.w_hist.assign(static_cast<size_t>(q), 0.0);
    for (int k = 1; k <= q; ++k) w.w_new += 1.0 / (tau[0] - tau[static_cast<size_t>(k)]);
    for (int i = 1; i <= q; ++i) {
        double num = 1.0, den = 1.0;
        for (int j = 0; j <= q; ++j) {
            if (j == i) continue;
            if (j != 0) num *= tau[0] - tau[static_cast<size_t>(j)];
            den *= tau[static_cast<size_t>(i)] - tau[static_cast<size_t>(j)];
        }
        w.w_hist[static_cast<size_t>(i) - 1] = num / den;
    }
    return w;
}

void BdfState::push(std::vector<double> u, double t) {
    history.insert(history.begin(), std::move(u));
    times.insert(times.begin(), t);
    if (history.size() > 3) {
        history.pop_back();
        times.pop_back();
    }
    ++step_index;
}

CoupledSolver::CoupledSolver(const SimMesh& mesh, const BenchmarkProblem& problem,
                             CoupledOptions options)
    : mesh_(mesh), problem_(problem), opts_(options), V_(mesh_, 2), Q_(mesh_, 1) {
    n_ = V_.num_dofs();
    m_ = Q_.num_dofs();
    Mv_ = vector_mass(V_);
    Kv_ = vector_stiffness(V_);
    B_ = assemble_divergence(V_, Q_);
    Bt_ = B_.transposed();
    mp_ = assemble_scalar_load(Q_, [](Vec2) { return 1.0; });

    const auto any_tag = [](int) { return true; };
    for (const BoundaryDof& bd : V_.boundary_dofs(any_tag)) {
        if (problem_.is_neumann && problem_.is_neumann(bd.x)) {
            all_dirichlet_ = false;
            continue;
        }
        dirichlet_dofs_.push_back(bd.dof);
        dirichlet_xs_.push_back(bd.x);
    }
    multiplier_ = all_dirichlet_ && opts_.pressure_fix == PressureFix::MeanZero;
    nsys_ = 2 * n_ + m_ + (multiplier_ ? 1 : 0);

    if (problem_.is_neumann) {
        std::map<std::pair<int, int>, int> edge_ix;
        const auto& ed = mesh_.edge_data();
        for (size_t k = 0; k < ed.edges.size(); ++k) edge_ix[ed.edges[k]] = static_cast<int>(k);
        const int nv = mesh_.num_vertices();
        for (const BoundaryEdge& be : mesh_.boundary_edges()) {
            const Vec2 xa = mesh_.vertices()[static_cast<size_t>(be.a)];
            const Vec2 xb = mesh_.vertices()[static_cast<size_t>(be.b)];
            const Vec2 mid{0.5 * (xa.x + xb.x), 0.5 * (xa.y + xb.y)};
            if (!problem_.is_neumann(mid)) continue;
            const auto key = std::minmax(be.a, be.b);
            neumann_edges_.push_back({xa, xb, be.a, be.b, nv + edge_ix.at(key)});
        }
    }

    constrained_flag_.assign(static_cast<size_t>(nsys_), 0);
    for (int d : dirichlet_dofs_) {
        constrained_flag_[static_cast<size_t>(d)] = 1;
        constrained_flag_[static_cast<size_t>(n_ + d)] = 1;
    }
    if (all_dirichlet_ && opts_.pressure_fix == PressureFix::Pin)
        constrained_flag_[static_cast<size_t>(2 * n_)] = 1;
    for (int i = 0; i < nsys_; ++i)
        if (constrained_flag_[static_cast<size_t>(i)]) constrained_rows_.push_back(i);
}

FieldPair CoupledSolver::initial_fields() const {
    FieldPair f;
    f.velocity.assign(static_cast<size_t>(2 * n_), 0.0);
    f.pressure.assign(static_cast<size_t>(m_), 0.0);
    if (problem_.u0) {
        for (int i = 0; i < n_; ++i) {
            const Vec2 u = problem_.u0(V_.dof_coord(i));
            f.velocity[static_cast<size_t>(i)] = u.x;
            f.velocity[static_cast<size_t>(n_ + i)] = u.y;
        }
    }
    return f;
}

void CoupledSolver::append_block(std::vector<Triplet>& trips, const SparseMatrix& M,
                                 int row_off, int col_off, double scale) const {
    for (int i = 0; i < M.rows(); ++i) {
        const int row = i + row_off;
        if (constrained_flag_[static_cast<size_t>(row)]) continue;
        const int* cols = M.row_cols(i);
        const double* vals = M.row_vals(i);
        const int nnz = M.row_nnz(i);
        for (int k = 0; k < nnz; ++k)
            trips.push_back({row, cols[k] + col_off, scale * vals[k]});
    }
}

std::vector<double> CoupledSolver::assemble_loads(double t) const {
    std::vector<double> L;
    if (problem_.body_force) {
        L = assemble_vector_load(V_, [&](Vec2 x) { return problem_.body_force(x, t); });
    } else {
        L.assign(static_cast<size_t>(2 * n_), 0.0);
    }
    if (!neumann_edges_.empty() && problem_.neumann_data) {
        for (const NeumannEdge& e : neumann_edges_) {
            const double len = std::hypot(e.b.x - e.a.x, e.b.y - e.a.y);
            const int dofs[3] = {e.dof_a, e.dof_b, e.dof_mid};
            for (int g = 0; g < 3; ++g) {
                const double s = kEdgeGaussX[g];
                const double wq = kEdgeGaussW[g] * len;
                const Vec2 x{e.a.x + s * (e.b.x - e.a.x), e.a.y + s * (e.b.y - e.a.y)};
                const Vec2 gval = problem_.neumann_data(x, t);
                const double N[3] = {(1.0 - s) * (1.0 - 2.0 * s), s * (2.0 * s - 1.0),
                                     4.0 * s * (1.0 - s)};
                for (int k = 0; k < 3; ++k) {
                    L[static_cast<size_t>(dofs[k])] += wq * N[k] * gval.x;
                    L[static_cast<size_t>(n_ + dofs[k])] += wq * N[k] * gval.y;
                }
            }
        }
    }
    return L;
}

double CoupledSolver::residual(const std::vector<double>& u, const std::vector<double>& p,
                               double lambda, const BdfWeights& w,
                               const std::vector<double>& hist_comb,
                               const std::vector<double>& load, std::vector<double>& r,
                               double* term_magnitude) const {
    r.assign(static_cast<size_t>(nsys_), 0.0);
    std::vector<double> t1(static_cast<size_t>(2 * n_));
    for (int i = 0; i < 2 * n_; ++i)
        t1[static_cast<size_t>(i)] =
            w.w_new * u[static_cast<size_t>(i)] + hist_comb[static_cast<size_t>(i)];
    std::vector<double> ru(static_cast<size_t>(2 * n_), 0.0);
    Mv_.multiply_add(t1, problem_.rho, ru);
    Kv_.multiply_add(u, problem_.nu, ru);
    double mag = 0.0;
    if (term_magnitude) {
        mag += problem_.rho * (std::abs(w.w_new) * abs_product_norm(Mv_, u) +
                               abs_product_norm(Mv_, hist_comb));
        mag += problem_.nu * abs_product_norm(Kv_, u);
        mag += abs_product_norm(Bt_, p) + norm2(load);
        mag += abs_product_norm(B_, u) + std::abs(lambda) * norm2(mp_);
    }
    if (opts_.convection) {
        const std::vector<double> conv = convection_residual(V_, u, problem_.rho);
        if (term_magnitude) mag += norm2(conv);
        axpy(1.0, conv, ru);
    }
    Bt_.multiply_add(p, -1.0, ru);
    axpy(-1.0, load, ru);
    std::copy(ru.begin(), ru.end(), r.begin());

    std::vector<double> rp(static_cast<size_t>(m_), 0.0);
    B_.multiply_add(u, 1.0, rp);
    if (multiplier_) axpy(lambda, mp_, rp);
    std::copy(rp.begin(), rp.end(), r.begin() + 2 * n_);
    if (multiplier_) {
        r[static_cast<size_t>(2 * n_ + m_)] = dot(mp_, p);
        if (term_magnitude) {
            double s = 0.0;
            for (int q = 0; q < m_; ++q)
                s += std::abs(mp_[static_cast<size_t>(q)] * p[static_cast<size_t>(q)]);
            mag += s;
        }
    }

    for (int row : constrained_rows_) r[static_cast<size_t>(row)] = 0.0;
    if (term_magnitude) *term_magnitude = mag;
    return norm2(r);
}

StepReport CoupledSolver::step(BdfState& state, FieldPair& fields, double t_new) {
    StepReport rep;
    if (state.history.empty()) throw std::logic_error("CoupledSolver::step: empty history");
    if (!(t_new > state.times.front()))
        throw std::invalid_argument("CoupledSolver::step: t_new must advance in time");

    const BdfWeights w = bdf_weights(t_new, state.times);

    double t0 = now_seconds();
    std::vector<double> hist_comb(static_cast<size_t>(2 * n_), 0.0);
    for (size_t k = 0; k < state.history.size(); ++k)
        axpy(w.w_hist[k], state.history[k], hist_comb);
    const std::vector<double> load = assemble_loads(t_new);

    std::vector<double> u = state.history.front();
    for (size_t k = 0; k < dirichlet_dofs_.size(); ++k) {
        const Vec2 d =
            problem_.dirichlet ? problem_.dirichlet(dirichlet_xs_[k], t_new) : Vec2{0.0, 0.0};
        u[static_cast<size_t>(dirichlet_dofs_[k])] = d.x;
        u[static_cast<size_t>(n_ + dirichlet_dofs_[k])] = d.y;
    }
    std::vector<double> p = fields.pressure;
    if (static_cast<int>(p.size()) != m_) p.assign(static_cast<size_t>(m_), 0.0);
    if (all_dirichlet_ && opts_.pressure_fix == PressureFix::Pin) p[0] = 0.0;
    double lambda = 0.0;
    wall_assembly_ += now_seconds() - t0;

    std::vector<double> r;
    double term_mag = 0.0;
    double rn = residual(u, p, lambda, w, hist_comb, load, r, &term_mag);
    const double scale = rn;
    // Below this floor the residual is roundoff from summing terms of
    // combined size term_mag; no iterate can be distinguished from an exact
    // solution, so the relative test against `scale` must not be applied.
    const double floor_abs = 256.0 * std::numeric_limits<double>::epsilon() * term_mag;
    rep.residuals.push_back(scale > 0.0 ? 1.0 : 0.0);
    if (rn <= floor_abs || scale <= 1e-300) {
        // The constant-extrapolation iterate already satisfies the step.
        rep.converged = true;
        fields.velocity = u;
        fields.pressure = p;
        state.push(std::move(u), t_new);
        return rep;
    }

    const NewtonConfig& cfg = opts_.newton;
    bool use_line_search = opts_.line_search && opts_.convection;
    int full_steps_accepted = 0;

    // One linearized update (Picard or Newton). Returns false on a linear
    // solver failure or a stagnated line search, with rep.message set.
    const auto iterate = [&](bool newton_phase) -> bool {
        double ta = now_seconds();
        std::vector<Triplet> trips;
        trips.reserve(static_cast<size_t>(Mv_.nonzeros() + Kv_.nonzeros() + 3 * B_.nonzeros()) +
                      2 * static_cast<size_t>(m_) + static_cast<size_t>(nsys_));
        append_block(trips, Mv_, 0, 0, problem_.rho * w.w_new);
        append_block(trips, Kv_, 0, 0, problem_.nu);
        if (opts_.convection) {
            const SparseMatrix C = newton_phase ? convection_newton(V_, u, problem_.rho)
                                                : convection_picard(V_, u, problem_.rho);
            append_block(trips, C, 0, 0, 1.0);
        }
        append_block(trips, Bt_, 0, 2 * n_, -1.0);
        append_block(trips, B_, 2 * n_, 0, 1.0);
        if (multiplier_) {
            for (int q = 0; q < m_; ++q) {
                trips.push_back({2 * n_ + q, 2 * n_ + m_, mp_[static_cast<size_t>(q)]});
                trips.push_back({2 * n_ + m_, 2 * n_ + q, mp_[static_cast<size_t>(q)]});
            }
        }
        for (int row : constrained_rows_) trips.push_back({row, row, 1.0});
        const SparseMatrix J = SparseMatrix::from_triplets(nsys_, nsys_, trips);
        std::vector<double> rhs(static_cast<size_t>(nsys_));
        for (int i = 0; i < nsys_; ++i)
            rhs[static_cast<size_t>(i)] =
                constrained_flag_[static_cast<size_t>(i)] ? 0.0 : -r[static_cast<size_t>(i)];
        wall_assembly_ += now_seconds() - ta;

        double ts = now_seconds();
        std::vector<double> delta(static_cast<size_t>(nsys_), 0.0);
        const SolveReport lin = solve_general(J, rhs, delta, opts_.linear);
        wall_solve_ += now_seconds() - ts;
        if (!lin.converged) {
            rep.message = "linear saddle solve failed (" + lin.method +
                          ", residual " + format_time(lin.residual) + ")";
            return false;
        }

        std::vector<double> u_t(u.size()), p_t(p.size()), r_t;
        double step_size = 1.0;
        for (int attempt = 0;; ++attempt) {
            for (size_t i = 0; i < u.size(); ++i) u_t[i] = u[i] + step_size * delta[i];
            for (size_t i = 0; i < p.size(); ++i)
                p_t[i] = p[i] + step_size * delta[static_cast<size_t>(2 * n_) + i];
            const double lambda_t =
                multiplier_ ? lambda + step_size * delta[static_cast<size_t>(2 * n_ + m_)]
                            : 0.0;
            const double rn_t = residual(u_t, p_t, lambda_t, w, hist_comb, load, r_t);
            const bool newton_ls = newton_phase && use_line_search;
            const bool accept = !newton_ls || rn_t <= rn * (1.0 - 1e-4) ||
                                rn_t <= cfg.newton_tol * scale || rn_t <= floor_abs;
            if (accept) {
                u.swap(u_t);
                p.swap(p_t);
                lambda = lambda_t;
                r.swap(r_t);
                rn = rn_t;
                if (newton_phase && step_size == 1.0 && ++full_steps_accepted >= 2)
                    use_line_search = false;
                return true;
            }
            if (attempt >= 8) {
                rep.message = "Newton line search stagnated (8 halvings without decrease)";
                return false;
            }
            step_size *= 0.5;
        }
    };

    while (rn > floor_abs && rn / scale > cfg.picard_tol &&
           rep.picard_iterations < cfg.max_picard) {
        if (!iterate(false)) return rep;
        ++rep.picard_iterations;
        rep.residuals.push_back(rn / scale);
    }
    while (rn > floor_abs && rn / scale > cfg.newton_tol) {
        if (rep.newton_iterations >= cfg.max_newton) {
            rep.message = "Newton did not reach tolerance in " +
                          std::to_string(cfg.max_newton) + " iterations";
            return rep;
        }
        if (!iterate(true)) return rep;
        ++rep.newton_iterations;
        rep.residuals.push_back(rn / scale);
    }

    rep.converged = true;
    fields.velocity = u;
    fields.pressure = std::move(p);
    state.push(std::move(u), t_new);
    return rep;
}

RunResult CoupledSolver::run(double dt, const std::vector<double>& snapshot_times,
                             const SnapshotFn& on_snapshot) {
    RunResult out;
    const double T = problem_.T;
    if (!(dt > 0.0)) {
        out.message = "time step must be positive";
        return out;
    }
    if (!(T > 0.0)) {
        out.message = "final time must be positive";
        return out;
    }
    wall_assembly_ = 0.0;
    wall_solve_ = 0.0;
    const double wall_start = now_seconds();
    const double tol = 1e-10 * std::max(1.0, T);

    // Event list: requested snapshots plus the final time, deduplicated.
    std::vector<std::pair<double, bool>> events;  // (time, emit snapshot)
    for (double s : snapshot_times) {
        if (s > tol && s < T - tol) events.push_back({s, true});
    }
    const bool snapshot_at_T =
        std::any_of(snapshot_times.begin(), snapshot_times.end(),
                    [&](double s) { return std::abs(s - T) <= tol; });
    events.push_back({T, snapshot_at_T});
    std::sort(events.begin(), events.end());
    std::vector<std::pair<double, bool>> dedup;
    for (const auto& ev : events) {
        if (!dedup.empty() && ev.first - dedup.back().first <= tol)
            dedup.back().second = dedup.back().second || ev.second;
        else
            dedup.push_back(ev);
    }
    events.swap(dedup);

    FieldPair fields = initial_fields();
    BdfState state;
    state.dt = dt;
    state.push(fields.velocity, 0.0);
    const bool snapshot_at_0 =
        std::any_of(snapshot_times.begin(), snapshot_times.end(),
                    [&](double s) { return std::abs(s) <= tol; });
    if (on_snapshot && snapshot_at_0) on_snapshot(0.0, fields);

    double t = 0.0;
    for (size_t ev = 0; ev < events.size();) {
        const double target = events[ev].first;
        double t_new = std::min(t + dt, target);
        if (target - t_new <= tol) t_new = target;

        StepReport rep;
        if (state.step_index == 1 && opts_.bdf1_substeps > 1) {
            // First step: integrate BDF1 over internal substeps, then record
            // only the macro-step endpoint in the history.
            const int ns = opts_.bdf1_substeps;
            BdfState sub;
            sub.dt = (t_new - t) / ns;
            sub.push(state.history.front(), t);
            FieldPair f2 = fields;
            for (int k = 1; k <= ns; ++k) {
                const double tk = t + (t_new - t) * k / ns;
                rep = step(sub, f2, tk);
                out.total_picard += rep.picard_iterations;
                out.total_newton += rep.newton_iterations;
                if (!rep.converged) break;
                sub.history.resize(1);
                sub.times.resize(1);
            }
            if (rep.converged) {
                state.push(f2.velocity, t_new);
                fields = std::move(f2);
            }
        } else {
            rep = step(state, fields, t_new);
            out.total_picard += rep.picard_iterations;
            out.total_newton += rep.newton_iterations;
        }

        if (!rep.converged) {
            out.message = "step to t = " + format_time(t_new) + " failed: " + rep.message;
            out.failure_residuals = rep.residuals;
            out.fields = std::move(fields);
            out.final_time = t;
            out.wall_assembly = wall_assembly_;
            out.wall_solve = wall_solve_;
            out.wall_total = now_seconds() - wall_start;
            return out;
        }
        ++out.steps;
        t = t_new;
        if (t >= target - tol) {
            if (on_snapshot && events[ev].second) on_snapshot(t, fields);
            ++ev;
        }
    }

    out.ok = true;
    out.fields = std::move(fields);
    out.final_time = t;
    out.wall_assembly = wall_assembly_;
    out.wall_solve = wall_solve_;
    out.wall_total = now_seconds() - wall_start;
    return out;
}

}  // namespace nslab
