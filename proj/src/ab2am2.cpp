#include "nslab/ab2am2.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include "nslab/linalg.hpp"

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

}  // namespace

Ab2Am2Solver::Ab2Am2Solver(const SimMesh& mesh, const BenchmarkProblem& problem, Ab2Config cfg)
    : mesh_(mesh),
      problem_(problem),
      cfg_(cfg),
      Vv_(mesh_, cfg.velocity_order),
      Vp_(mesh_, 1) {
    if (cfg_.velocity_order != 1 && cfg_.velocity_order != 2)
        throw std::invalid_argument("Ab2Am2Solver: velocity_order must be 1 or 2");
    nv_ = Vv_.num_dofs();
    np_ = Vp_.num_dofs();
    Kv2_ = vector_stiffness(Vv_);
    B_ = assemble_divergence(Vv_, Vp_);

    if (cfg_.velocity_order == 1) {
        const std::vector<double> ml = lumped_mass(Vv_);
        invml_.resize(static_cast<size_t>(nv_));
        for (int i = 0; i < nv_; ++i) invml_[static_cast<size_t>(i)] = 1.0 / ml[static_cast<size_t>(i)];
    } else {
        // Row-sum lumping is indefinite for quadratic bases; invert the
        // consistent mass per scalar component instead.
        Mv_ = assemble_mass(Vv_);
        mass_llt_ = std::make_unique<CholeskyFactorization>(Mv_);
        if (!mass_llt_->ok()) throw std::runtime_error("Ab2Am2Solver: mass factorization failed");
    }

    std::vector<char> is_dirichlet(static_cast<size_t>(nv_), 0);
    for (const BoundaryDof& bd : Vv_.boundary_dofs([](int) { return true; })) {
        if (problem_.is_neumann && problem_.is_neumann(bd.x)) {
            closed_ = false;
            continue;  // outflow velocity dofs stay free (natural condition)
        }
        dirichlet_.push_back(bd.dof);
        dirichlet_x_.push_back(bd.x);
        is_dirichlet[static_cast<size_t>(bd.dof)] = 1;
    }

    // Transpose lift carrying every pressure force, with columns of
    // prescribed velocity dofs dropped so corrections never write into
    // boundary values.
    std::vector<Triplet> bh;
    for (int q = 0; q < np_; ++q) {
        const int* cols = B_.row_cols(q);
        const double* vals = B_.row_vals(q);
        for (int k = 0; k < B_.row_nnz(q); ++k) {
            const int node = cols[k] < nv_ ? cols[k] : cols[k] - nv_;
            if (is_dirichlet[static_cast<size_t>(node)]) continue;
            bh.push_back({q, cols[k], vals[k]});
        }
    }
    const SparseMatrix Bhat = SparseMatrix::from_triplets(np_, 2 * nv_, bh);
    Bhat_t_ = Bhat.transposed();
    for (const BoundaryDof& bd : Vp_.boundary_dofs([](int) { return true; })) {
        if (problem_.is_neumann && problem_.is_neumann(bd.x)) pressure_bc_.push_back(bd.dof);
    }
    if (!closed_ && pressure_bc_.empty())
        throw std::runtime_error("Ab2Am2Solver: open boundary carries no pressure dof");

    // Pressure update operator; dt enters only through the right-hand side,
    // so one factorization serves the whole run.
    //
    // Equal-order pair (order 1): solve with the exact composition of the
    // divergence form and the lift, B_hat diag(1/m_L) B_hat^T. Matching the
    // solve operator to the lift makes the corrector cancel each step's
    // measured divergence entirely, so the divergence history obeys
    // d_{n+1} = -c_damp d_n + O(dt) and stays O(dt). Solving the assembled
    // pressure Laplacian instead leaves the near-spurious pressure modes of
    // the equal-order pair with feedback gain near zero: a dt-independent
    // divergence floor forms, the 1/dt right-hand side pumps those modes,
    // and the run blows up slowly regardless of step size.
    //
    // Mixed pair (order 2): inf-sup stability rules out spurious modes and
    // the consistent-mass lift has no sparse gram form, so the assembled
    // pressure Laplacian is both safe and the only assemblable choice.
    std::vector<Triplet> kt;
    if (cfg_.velocity_order == 1) {
        std::vector<double> invml2(static_cast<size_t>(2 * nv_));
        for (int i = 0; i < nv_; ++i) {
            invml2[static_cast<size_t>(i)] = invml_[static_cast<size_t>(i)];
            invml2[static_cast<size_t>(nv_ + i)] = invml_[static_cast<size_t>(i)];
        }
        const SparseMatrix L = SparseMatrix::scaled_gram(Bhat, invml2);
        // Tiny diagonal shift keeps exact checkerboard kernels factorizable;
        // the lift annihilates those modes, so the shift never reaches the
        // velocity.
        double diag_max = 0.0;
        for (double d : L.diagonal()) diag_max = std::max(diag_max, d);
        const double eps = 1e-12 * diag_max;
        for (int q = 0; q < np_; ++q) {
            const int* cols = L.row_cols(q);
            const double* vals = L.row_vals(q);
            for (int k = 0; k < L.row_nnz(q); ++k) kt.push_back({q, cols[k], vals[k]});
            kt.push_back({q, q, eps});
        }
    } else {
        const SparseMatrix Kp = assemble_stiffness(Vp_);
        for (int q = 0; q < np_; ++q) {
            const int* cols = Kp.row_cols(q);
            const double* vals = Kp.row_vals(q);
            for (int k = 0; k < Kp.row_nnz(q); ++k) kt.push_back({q, cols[k], vals[k]});
        }
    }
    if (closed_) {
        mp_ = assemble_scalar_load(Vp_, [](Vec2) { return 1.0; });
        for (int q = 0; q < np_; ++q) {
            kt.push_back({q, np_, mp_[static_cast<size_t>(q)]});
            kt.push_back({np_, q, mp_[static_cast<size_t>(q)]});
        }
        const SparseMatrix aug = SparseMatrix::from_triplets(np_ + 1, np_ + 1, kt);
        pres_lu_ = std::make_unique<LuFactorization>(aug);
        if (!pres_lu_->ok())
            throw std::runtime_error("Ab2Am2Solver: pressure factorization failed");
    } else {
        pres_sys_ = std::make_unique<ConstrainedSPD>(kt, np_, pressure_bc_);
        pres_llt_ = std::make_unique<CholeskyFactorization>(pres_sys_->matrix());
        if (!pres_llt_->ok())
            throw std::runtime_error("Ab2Am2Solver: pressure factorization failed");
    }

    reset_state();
}

void Ab2Am2Solver::reset_state() {
    fields_.velocity.assign(static_cast<size_t>(2 * nv_), 0.0);
    fields_.pressure.assign(static_cast<size_t>(np_), 0.0);
    if (problem_.u0) {
        for (int i = 0; i < nv_; ++i) {
            const Vec2 u = problem_.u0(Vv_.dof_coord(i));
            fields_.velocity[static_cast<size_t>(i)] = u.x;
            fields_.velocity[static_cast<size_t>(nv_ + i)] = u.y;
        }
    }
    u_prev_.clear();
    p_prev_.clear();
    rhs_prev_.clear();
    dt_prev_ = 0.0;
    have_history_ = false;
    t_ = 0.0;
    max_velocity_ = 0.0;
    max_div_ = 0.0;
}

void Ab2Am2Solver::set_velocity(std::vector<double> u) {
    if (static_cast<int>(u.size()) != 2 * nv_)
        throw std::invalid_argument("set_velocity: wrong length");
    fields_.velocity = std::move(u);
}

void Ab2Am2Solver::overwrite_dirichlet(std::vector<double>& u, double t) const {
    for (size_t k = 0; k < dirichlet_.size(); ++k) {
        const Vec2 d =
            problem_.dirichlet ? problem_.dirichlet(dirichlet_x_[k], t) : Vec2{0.0, 0.0};
        u[static_cast<size_t>(dirichlet_[k])] = d.x;
        u[static_cast<size_t>(nv_ + dirichlet_[k])] = d.y;
    }
}

std::vector<double> Ab2Am2Solver::mass_inverse(const std::vector<double>& weak) const {
    std::vector<double> out(static_cast<size_t>(2 * nv_));
    if (cfg_.velocity_order == 1) {
        for (int i = 0; i < nv_; ++i) {
            out[static_cast<size_t>(i)] = weak[static_cast<size_t>(i)] * invml_[static_cast<size_t>(i)];
            out[static_cast<size_t>(nv_ + i)] =
                weak[static_cast<size_t>(nv_ + i)] * invml_[static_cast<size_t>(i)];
        }
        return out;
    }
    std::vector<double> comp(static_cast<size_t>(nv_));
    for (int c = 0; c < 2; ++c) {
        std::copy(weak.begin() + c * nv_, weak.begin() + (c + 1) * nv_, comp.begin());
        const std::vector<double> x = mass_llt_->solve(comp);
        std::copy(x.begin(), x.end(), out.begin() + c * nv_);
    }
    return out;
}

std::vector<double> Ab2Am2Solver::advective_rhs(const std::vector<double>& u, double t) const {
    // Weak form of -(u.grad)u + (nu/rho) lap u + b/rho, then mass-inverted.
    std::vector<double> weak = convection_residual(Vv_, u, 1.0);
    for (double& w : weak) w = -w;
    Kv2_.multiply_add(u, -problem_.nu / problem_.rho, weak);
    if (problem_.body_force) {
        const std::vector<double> load =
            assemble_vector_load(Vv_, [&](Vec2 x) { return problem_.body_force(x, t); });
        axpy(1.0 / problem_.rho, load, weak);
    }
    return mass_inverse(weak);
}

std::vector<double> Ab2Am2Solver::explicit_rhs(const std::vector<double>& u,
                                               const std::vector<double>& p, double t) const {
    // The pressure gradient enters through the mass-inverted transpose of the
    // divergence form (the weak Galerkin gradient, which approximates -grad p
    // at free dofs). Equal-order pairs carry pressure modes the divergence
    // correction cannot act on; this lift annihilates them structurally,
    // whereas a nodal-averaged gradient feeds them back into the velocity
    // with per-step gain independent of dt and destabilizes the scheme.
    std::vector<double> F = advective_rhs(u, t);
    const std::vector<double> lift = mass_inverse(Bhat_t_.multiply(p));
    axpy(1.0 / problem_.rho, lift, F);
    return F;
}

std::vector<double> Ab2Am2Solver::pressure_update(const std::vector<double>& u_star,
                                                  const std::vector<double>& u_curr,
                                                  double dt) const {
    std::vector<double> rhs = B_.multiply(u_star);
    if (cfg_.c_damp != 0.0) B_.multiply_add(u_curr, cfg_.c_damp, rhs);
    const double s = -problem_.rho / dt;
    for (double& r : rhs) r *= s;
    if (closed_) {
        rhs.push_back(0.0);  // mean-zero gauge row
        std::vector<double> sol = pres_lu_->solve(rhs);
        sol.resize(static_cast<size_t>(np_));
        return sol;
    }
    const std::vector<double> zero(static_cast<size_t>(np_), 0.0);
    pres_sys_->apply_rhs(rhs, zero);
    return pres_llt_->solve(rhs);
}

double Ab2Am2Solver::weak_divergence(const std::vector<double>& u) const {
    return norm2(B_.multiply(u));
}

void Ab2Am2Solver::step(double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
    step_to(t_ + dt);
}

void Ab2Am2Solver::step_to(double t_new) {
    const double dt = t_new - t_;
    const std::vector<double>& u_n = fields_.velocity;
    const std::vector<double>& p_n = fields_.pressure;

    std::vector<double> A_n = advective_rhs(u_n, t_);
    std::vector<double> F_n = A_n;
    const std::vector<double> lift_n = mass_inverse(Bhat_t_.multiply(p_n));
    axpy(1.0 / problem_.rho, lift_n, F_n);

    // Predictor: variable-step AB2 on F (forward Euler on the first step).
    // The combination of old pressures inside F_n / F_prev extrapolates the
    // pressure to p_ext; the Poisson solve below corrects relative to it.
    std::vector<double> u_star = u_n;
    std::vector<double> p_ext = p_n;
    if (have_history_) {
        const double r = dt / dt_prev_;
        const double w0 = 1.0 + 0.5 * r;
        const double w1 = -0.5 * r;
        for (size_t i = 0; i < u_star.size(); ++i)
            u_star[i] += dt * (w0 * F_n[i] + w1 * rhs_prev_[i]);
        for (size_t q = 0; q < p_ext.size(); ++q)
            p_ext[q] = w0 * p_n[q] + w1 * p_prev_[q];
    } else {
        axpy(dt, F_n, u_star);
    }
    overwrite_dirichlet(u_star, t_new);

    const std::vector<double> phi = pressure_update(u_star, u_n, dt);
    std::vector<double> p_new = p_ext;
    axpy(1.0, phi, p_new);

    // Corrector: trapezoid on transport/diffusion/forces, full weight on the
    // new pressure gradient (trapezoid pressure weights feed the divergence
    // mode back with amplification ~2 per step). The pressure force enters
    // through the mass-inverted transpose of the divergence form -- the weak
    // Galerkin gradient -- keeping the divergence feedback non-expansive.
    const std::vector<double> A_star = advective_rhs(u_star, t_new);
    const std::vector<double> lift = mass_inverse(Bhat_t_.multiply(p_new));
    std::vector<double> u_new = u_n;
    for (size_t i = 0; i < u_new.size(); ++i)
        u_new[i] += 0.5 * dt * (A_star[i] + A_n[i]) + (dt / problem_.rho) * lift[i];
    overwrite_dirichlet(u_new, t_new);

    double vmax = 0.0;
    for (int i = 0; i < nv_; ++i) {
        const double ux = u_new[static_cast<size_t>(i)];
        const double uy = u_new[static_cast<size_t>(nv_ + i)];
        vmax = std::max(vmax, std::sqrt(ux * ux + uy * uy));
    }
    if (!std::isfinite(vmax)) throw std::runtime_error("solution diverged: non-finite velocity");
    if (vmax > 1e8) throw std::runtime_error("solution diverged: velocity blow-up");

    u_prev_ = fields_.velocity;
    p_prev_ = fields_.pressure;
    rhs_prev_ = std::move(F_n);
    dt_prev_ = dt;
    have_history_ = true;
    fields_.velocity = std::move(u_new);
    fields_.pressure = std::move(p_new);
    t_ = t_new;
    max_velocity_ = std::max(max_velocity_, vmax);
    max_div_ = std::max(max_div_, weak_divergence(fields_.velocity));
}

Ab2RunResult Ab2Am2Solver::run(double dt, const std::vector<double>& snapshot_times,
                               const SnapshotFn& on_snapshot) {
    Ab2RunResult out;
    if (!(dt > 0.0)) {
        out.message = "time step must be positive";
        return out;
    }
    if (!(problem_.T > 0.0)) {
        out.message = "final time must be positive";
        return out;
    }
    reset_state();
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
                out.max_velocity = max_velocity_;
                out.max_divergence = max_div_;
                out.wall_total = now_seconds() - wall_start;
                return out;
            }
            ++out.steps;
        }
        if (emit && on_snapshot) on_snapshot(t_, fields_);
    }
    out.ok = true;
    out.final_time = t_;
    out.max_velocity = max_velocity_;
    out.max_divergence = max_div_;
    out.wall_total = now_seconds() - wall_start;
    return out;
}

}  // namespace nslab
