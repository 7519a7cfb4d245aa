#include "nslab/linalg.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace nslab {

using EigenCsr = Eigen::SparseMatrix<double, Eigen::RowMajor>;

namespace {

EigenCsr to_eigen(const SparseMatrix& a) {
    EigenCsr m(a.rows(), a.cols());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<size_t>(a.nonzeros()));
    for (int r = 0; r < a.rows(); ++r) {
        const int* cols = a.row_cols(r);
        const double* vals = a.row_vals(r);
        for (int k = 0; k < a.row_nnz(r); ++k)
            trips.emplace_back(r, cols[k], vals[k]);
    }
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();
    return m;
}

SparseMatrix from_eigen(const EigenCsr& m) {
    std::vector<Triplet> trips;
    trips.reserve(static_cast<size_t>(m.nonZeros()));
    for (int r = 0; r < m.outerSize(); ++r)
        for (EigenCsr::InnerIterator it(m, r); it; ++it)
            trips.push_back({static_cast<int>(it.row()), static_cast<int>(it.col()), it.value()});
    return SparseMatrix::from_triplets(static_cast<int>(m.rows()),
                                       static_cast<int>(m.cols()), trips);
}

void subtract_mean(std::vector<double>& v) {
    if (v.empty()) return;
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    for (double& x : v) x -= mean;
}

}  // namespace

SparseMatrix SparseMatrix::from_triplets(int rows, int cols,
                                         const std::vector<Triplet>& entries) {
    if (rows < 0 || cols < 0)
        throw std::invalid_argument("SparseMatrix: negative dimension");
    for (const Triplet& t : entries) {
        if (t.row < 0 || t.row >= rows || t.col < 0 || t.col >= cols)
            throw std::invalid_argument("SparseMatrix: triplet index out of range (" +
                                        std::to_string(t.row) + "," + std::to_string(t.col) +
                                        ") for " + std::to_string(rows) + "x" +
                                        std::to_string(cols));
    }
    // Count, bucket, then merge duplicates per row.
    SparseMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    std::vector<int> count(static_cast<size_t>(rows) + 1, 0);
    for (const Triplet& t : entries) ++count[static_cast<size_t>(t.row) + 1];
    std::vector<int> start(count.size());
    std::partial_sum(count.begin(), count.end(), start.begin());
    std::vector<std::pair<int, double>> bucket(entries.size());
    {
        std::vector<int> cursor(start.begin(), start.end() - 1);
        for (const Triplet& t : entries)
            bucket[static_cast<size_t>(cursor[t.row]++)] = {t.col, t.value};
    }
    m.row_ptr_.assign(static_cast<size_t>(rows) + 1, 0);
    m.col_idx_.reserve(entries.size());
    m.vals_.reserve(entries.size());
    for (int r = 0; r < rows; ++r) {
        auto first = bucket.begin() + start[r];
        auto last = bucket.begin() + start[r + 1];
        std::sort(first, last, [](const auto& a, const auto& b) { return a.first < b.first; });
        for (auto it = first; it != last;) {
            int c = it->first;
            double v = 0.0;
            for (; it != last && it->first == c; ++it) v += it->second;
            m.col_idx_.push_back(c);
            m.vals_.push_back(v);
        }
        m.row_ptr_[static_cast<size_t>(r) + 1] = static_cast<int>(m.col_idx_.size());
    }
    return m;
}

std::vector<double> SparseMatrix::multiply(const std::vector<double>& x) const {
    std::vector<double> y(static_cast<size_t>(rows_), 0.0);
    multiply_add(x, 1.0, y);
    return y;
}

void SparseMatrix::multiply_add(const std::vector<double>& x, double s,
                                std::vector<double>& y) const {
    if (static_cast<int>(x.size()) != cols_ || static_cast<int>(y.size()) != rows_)
        throw std::invalid_argument("SparseMatrix::multiply: size mismatch");
    for (int r = 0; r < rows_; ++r) {
        double acc = 0.0;
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
            acc += vals_[static_cast<size_t>(k)] * x[static_cast<size_t>(col_idx_[static_cast<size_t>(k)])];
        y[static_cast<size_t>(r)] += s * acc;
    }
}

SparseMatrix SparseMatrix::multiply(const SparseMatrix& a, const SparseMatrix& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("SparseMatrix::multiply: inner dimension mismatch");
    EigenCsr c = to_eigen(a) * to_eigen(b);
    c.makeCompressed();
    return from_eigen(c);
}

SparseMatrix SparseMatrix::add(const SparseMatrix& a, const SparseMatrix& b, double s) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument("SparseMatrix::add: dimension mismatch");
    EigenCsr c = to_eigen(a) + s * to_eigen(b);
    c.makeCompressed();
    return from_eigen(c);
}

SparseMatrix SparseMatrix::scaled_gram(const SparseMatrix& a, const std::vector<double>& d) {
    if (static_cast<int>(d.size()) != a.cols())
        throw std::invalid_argument("SparseMatrix::scaled_gram: diagonal length mismatch");
    EigenCsr ae = to_eigen(a);
    Eigen::VectorXd dv = Eigen::Map<const Eigen::VectorXd>(d.data(), d.size());
    EigenCsr c = ae * dv.asDiagonal() * EigenCsr(ae.transpose());
    c.makeCompressed();
    return from_eigen(c);
}

SparseMatrix SparseMatrix::transposed() const {
    EigenCsr t = to_eigen(*this).transpose();
    t.makeCompressed();
    return from_eigen(t);
}

std::vector<double> SparseMatrix::diagonal() const {
    std::vector<double> d(static_cast<size_t>(std::min(rows_, cols_)), 0.0);
    for (int r = 0; r < static_cast<int>(d.size()); ++r) {
        for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
            if (col_idx_[static_cast<size_t>(k)] == r) d[static_cast<size_t>(r)] = vals_[static_cast<size_t>(k)];
    }
    return d;
}

void SparseMatrix::set_identity_row(int r) {
    if (r < 0 || r >= rows_) throw std::invalid_argument("set_identity_row: bad row");
    bool has_diag = false;
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k) {
        if (col_idx_[static_cast<size_t>(k)] == r) {
            vals_[static_cast<size_t>(k)] = 1.0;
            has_diag = true;
        } else {
            vals_[static_cast<size_t>(k)] = 0.0;
        }
    }
    if (!has_diag)
        throw std::runtime_error("set_identity_row: diagonal entry not present in pattern");
}

void SparseMatrix::scale(double s) {
    for (double& v : vals_) v *= s;
}

double& SparseMatrix::coeff_ref(int r, int c) {
    if (r < 0 || r >= rows_) throw std::invalid_argument("coeff_ref: bad row");
    for (int k = row_ptr_[r]; k < row_ptr_[r + 1]; ++k)
        if (col_idx_[static_cast<size_t>(k)] == c) return vals_[static_cast<size_t>(k)];
    throw std::runtime_error("coeff_ref: entry not stored");
}

// --------------------------------------------------------------------- CG

SolveReport solve_spd(const SparseMatrix& a, const std::vector<double>& b,
                      std::vector<double>& x, const CgOptions& opts) {
    const int n = a.rows();
    if (a.cols() != n || static_cast<int>(b.size()) != n)
        throw std::invalid_argument("solve_spd: dimension mismatch");
    SolveReport rep;
    rep.method = "cg";
    if (x.size() != b.size()) x.assign(b.size(), 0.0);

    std::vector<double> rhs = b;
    if (opts.project_mean_zero) subtract_mean(rhs);
    const double bnorm = norm2(rhs);
    const bool absolute = bnorm == 0.0;
    const double target = absolute ? 1e-14 : opts.tol * bnorm;

    std::vector<double> diag_inv(static_cast<size_t>(n), 1.0);
    if (opts.jacobi_precond) {
        std::vector<double> d = a.diagonal();
        for (int i = 0; i < n; ++i)
            diag_inv[static_cast<size_t>(i)] = (d[static_cast<size_t>(i)] != 0.0) ? 1.0 / d[static_cast<size_t>(i)] : 1.0;
    }

    std::vector<double> r = rhs;
    a.multiply_add(x, -1.0, r);
    if (opts.project_mean_zero) subtract_mean(r);
    std::vector<double> z(r.size());
    for (int i = 0; i < n; ++i) z[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] * diag_inv[static_cast<size_t>(i)];
    if (opts.project_mean_zero) subtract_mean(z);
    std::vector<double> p = z;
    double rz = dot(r, z);
    double rnorm = norm2(r);

    int it = 0;
    std::vector<double> ap(static_cast<size_t>(n));
    while (rnorm > target && it < opts.max_iterations) {
        std::fill(ap.begin(), ap.end(), 0.0);
        a.multiply_add(p, 1.0, ap);
        double pap = dot(p, ap);
        if (pap <= 0.0 || !std::isfinite(pap)) break;  // lost positive-definiteness
        double alpha = rz / pap;
        axpy(alpha, p, x);
        axpy(-alpha, ap, r);
        if (opts.project_mean_zero) subtract_mean(r);
        for (int i = 0; i < n; ++i) z[static_cast<size_t>(i)] = r[static_cast<size_t>(i)] * diag_inv[static_cast<size_t>(i)];
        if (opts.project_mean_zero) subtract_mean(z);
        double rz_new = dot(r, z);
        double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[static_cast<size_t>(i)] = z[static_cast<size_t>(i)] + beta * p[static_cast<size_t>(i)];
        rnorm = norm2(r);
        ++it;
    }
    if (opts.project_mean_zero) subtract_mean(x);
    rep.iterations = it;
    rep.residual = absolute ? rnorm : rnorm / bnorm;
    rep.converged = rnorm <= target;
    return rep;
}

// ------------------------------------------------------------------ direct

struct LuFactorization::Impl {
    EigenCsr a;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    bool ok = false;
};

LuFactorization::LuFactorization(const SparseMatrix& a) : impl_(new Impl) {
    impl_->a = to_eigen(a);
    Eigen::SparseMatrix<double> col = impl_->a;
    impl_->lu.compute(col);
    impl_->ok = impl_->lu.info() == Eigen::Success;
}
LuFactorization::~LuFactorization() = default;
LuFactorization::LuFactorization(LuFactorization&&) noexcept = default;
LuFactorization& LuFactorization::operator=(LuFactorization&&) noexcept = default;
bool LuFactorization::ok() const { return impl_->ok; }

std::vector<double> LuFactorization::solve(const std::vector<double>& b) const {
    if (!impl_->ok) throw std::runtime_error("LuFactorization: factorization failed");
    Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
    Eigen::VectorXd x = impl_->lu.solve(rhs);
    return std::vector<double>(x.data(), x.data() + x.size());
}

struct CholeskyFactorization::Impl {
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;
    bool ok = false;
};

CholeskyFactorization::CholeskyFactorization(const SparseMatrix& a) : impl_(new Impl) {
    Eigen::SparseMatrix<double> col = to_eigen(a);
    impl_->llt.compute(col);
    impl_->ok = impl_->llt.info() == Eigen::Success;
}
CholeskyFactorization::~CholeskyFactorization() = default;
CholeskyFactorization::CholeskyFactorization(CholeskyFactorization&&) noexcept = default;
CholeskyFactorization& CholeskyFactorization::operator=(CholeskyFactorization&&) noexcept = default;
bool CholeskyFactorization::ok() const { return impl_->ok; }

std::vector<double> CholeskyFactorization::solve(const std::vector<double>& b) const {
    if (!impl_->ok) throw std::runtime_error("CholeskyFactorization: factorization failed");
    Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
    Eigen::VectorXd x = impl_->llt.solve(rhs);
    return std::vector<double>(x.data(), x.data() + x.size());
}

// ------------------------------------------------------------------- GMRES

namespace {

SolveReport gmres_solve(const SparseMatrix& a, const std::vector<double>& b,
                        std::vector<double>& x, const GeneralOptions& opts) {
    SolveReport rep;
    rep.method = "gmres";
    const int n = a.rows();
    EigenCsr ae = to_eigen(a);
    Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());

    Eigen::IncompleteLUT<double> precond;
    precond.setFillfactor(20);
    precond.setDroptol(1e-5);
    bool have_ilut = true;
    try {
        Eigen::SparseMatrix<double> col = ae;
        precond.compute(col);
        have_ilut = precond.info() == Eigen::Success;
    } catch (...) {
        have_ilut = false;
    }

    const double bnorm = rhs.norm();
    if (bnorm == 0.0) {
        x.assign(static_cast<size_t>(n), 0.0);
        rep.converged = true;
        rep.residual = 0.0;
        return rep;
    }

    auto apply_prec = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
        if (have_ilut) return precond.solve(v);
        return v;  // unpreconditioned fallback
    };

    Eigen::VectorXd xv = Eigen::VectorXd::Zero(n);
    if (static_cast<int>(x.size()) == n)
        xv = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());

    const int m = std::max(2, opts.gmres_restart);
    int total_it = 0;
    double rel = 1.0;
    bool stagnated = false;
    while (total_it < opts.max_iterations && !stagnated) {
        Eigen::VectorXd r = rhs - ae * xv;
        Eigen::VectorXd z0 = apply_prec(r);
        double beta = z0.norm();
        rel = r.norm() / bnorm;
        if (rel <= opts.tol) break;
        if (beta == 0.0) break;

        std::vector<Eigen::VectorXd> v(static_cast<size_t>(m) + 1);
        Eigen::MatrixXd h = Eigen::MatrixXd::Zero(m + 1, m);
        Eigen::VectorXd cs = Eigen::VectorXd::Zero(m), sn = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(m + 1);
        v[0] = z0 / beta;
        g(0) = beta;
        int k = 0;
        double prev_res = beta;
        for (; k < m && total_it < opts.max_iterations; ++k, ++total_it) {
            Eigen::VectorXd w = apply_prec(ae * v[static_cast<size_t>(k)]);
            for (int j = 0; j <= k; ++j) {
                h(j, k) = w.dot(v[static_cast<size_t>(j)]);
                w -= h(j, k) * v[static_cast<size_t>(j)];
            }
            h(k + 1, k) = w.norm();
            if (h(k + 1, k) > 0) v[static_cast<size_t>(k) + 1] = w / h(k + 1, k);
            // Givens rotations to maintain the QR of H.
            for (int j = 0; j < k; ++j) {
                double t = cs(j) * h(j, k) + sn(j) * h(j + 1, k);
                h(j + 1, k) = -sn(j) * h(j, k) + cs(j) * h(j + 1, k);
                h(j, k) = t;
            }
            double denom = std::hypot(h(k, k), h(k + 1, k));
            if (denom == 0.0) { ++k; break; }
            cs(k) = h(k, k) / denom;
            sn(k) = h(k + 1, k) / denom;
            h(k, k) = denom;
            h(k + 1, k) = 0.0;
            g(k + 1) = -sn(k) * g(k);
            g(k) = cs(k) * g(k);
            double res = std::abs(g(k + 1));
            if (res <= opts.tol * bnorm * 0.1) { ++k; break; }
            prev_res = res;
        }
        // Solve the small triangular system and update x.
        Eigen::VectorXd y = h.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
        for (int j = 0; j < k; ++j) xv += y(j) * v[static_cast<size_t>(j)];
        Eigen::VectorXd r_new = rhs - ae * xv;
        double rel_new = r_new.norm() / bnorm;
        if (rel_new > 0.999 * rel) stagnated = true;  // no progress over a cycle
        rel = rel_new;
        (void)prev_res;
    }
    x.assign(xv.data(), xv.data() + xv.size());
    rep.iterations = total_it;
    rep.residual = rel;
    rep.converged = rel <= opts.tol;
    return rep;
}

}  // namespace

SolveReport solve_general(const SparseMatrix& a, const std::vector<double>& b,
                          std::vector<double>& x, const GeneralOptions& opts) {
    const int n = a.rows();
    if (a.cols() != n || static_cast<int>(b.size()) != n)
        throw std::invalid_argument("solve_general: dimension mismatch");
    if (n <= opts.direct_threshold) {
        SolveReport rep;
        rep.method = "lu";
        LuFactorization lu(a);
        if (!lu.ok()) {
            rep.converged = false;
            rep.residual = std::numeric_limits<double>::infinity();
            return rep;
        }
        x = lu.solve(b);
        std::vector<double> r = b;
        a.multiply_add(x, -1.0, r);
        double bn = norm2(b);
        rep.residual = bn > 0 ? norm2(r) / bn : norm2(r);
        rep.converged = std::isfinite(rep.residual);
        rep.iterations = 1;
        return rep;
    }
    return gmres_solve(a, b, x, opts);
}

// ------------------------------------------------------------------ helpers

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

double norm_inf(const std::vector<double>& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

void axpy(double s, const std::vector<double>& x, std::vector<double>& y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

}  // namespace nslab
