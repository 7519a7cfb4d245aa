/// @file linalg.hpp
/// @brief Sparse matrix storage (CSR) and the linear solvers used by the
///        flow solvers: preconditioned CG for SPD systems, sparse LU /
///        restarted GMRES for general systems.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nslab {

/// One (row, col, value) entry used to build a sparse matrix.
struct Triplet {
    int row = 0;
    int col = 0;
    double value = 0.0;
};

/// Immutable CSR sparse matrix. Duplicate triplets are summed on build and
/// column indices are sorted within each row.
class SparseMatrix {
  public:
    SparseMatrix() = default;

    /// Build from triplets; throws std::invalid_argument on out-of-range
    /// indices or negative dimensions.
    static SparseMatrix from_triplets(int rows, int cols,
                                      const std::vector<Triplet>& entries);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::int64_t nonzeros() const { return static_cast<std::int64_t>(vals_.size()); }

    /// y = A x. Throws on size mismatch.
    std::vector<double> multiply(const std::vector<double>& x) const;
    /// y += s * A x
    void multiply_add(const std::vector<double>& x, double s, std::vector<double>& y) const;

    /// C = A * B (sparse-sparse product).
    static SparseMatrix multiply(const SparseMatrix& a, const SparseMatrix& b);
    /// C = a + s*b; dimensions must match.
    static SparseMatrix add(const SparseMatrix& a, const SparseMatrix& b, double s = 1.0);
    /// C = A * diag(d) * A^T with d a vector of length A.cols().
    static SparseMatrix scaled_gram(const SparseMatrix& a, const std::vector<double>& d);
    SparseMatrix transposed() const;

    /// Row raw access (sorted column indices).
    const int* row_cols(int r) const { return col_idx_.data() + row_ptr_[r]; }
    const double* row_vals(int r) const { return vals_.data() + row_ptr_[r]; }
    int row_nnz(int r) const { return row_ptr_[r + 1] - row_ptr_[r]; }

    std::vector<double> diagonal() const;

    /// In-place row replacement with identity (Dirichlet row). Keeps storage.
    void set_identity_row(int r);
    /// Scale every stored value.
    void scale(double s);
    double& coeff_ref(int r, int c);  ///< throws if (r,c) is not stored

  private:
    int rows_ = 0, cols_ = 0;
    std::vector<int> row_ptr_{0};
    std::vector<int> col_idx_;
    std::vector<double> vals_;
};

/// Outcome of an iterative or direct solve.
struct SolveReport {
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;   ///< final relative residual (absolute if ||b||=0)
    std::string method;      ///< "cg", "lu", "gmres"
};

struct CgOptions {
    double tol = 1e-10;          ///< relative residual target
    int max_iterations = 10000;
    bool jacobi_precond = true;  ///< diagonal preconditioning
    bool project_mean_zero = false;  ///< constrain rhs/iterates to mean-zero
                                     ///< subspace (singular Neumann systems)
};

/// Conjugate gradients for SPD systems. When ||b|| = 0 the absolute residual
/// is tested against 1e-14 instead of a relative target.
SolveReport solve_spd(const SparseMatrix& a, const std::vector<double>& b,
                      std::vector<double>& x, const CgOptions& opts = {});

struct GeneralOptions {
    double tol = 1e-10;
    int direct_threshold = 20000;  ///< use sparse LU when n <= threshold
    int gmres_restart = 100;
    int max_iterations = 2000;     ///< outer*inner iterations for GMRES
};

/// Direct sparse LU below the size threshold, preconditioned restarted GMRES
/// above it. Reports which method ran.
SolveReport solve_general(const SparseMatrix& a, const std::vector<double>& b,
                          std::vector<double>& x, const GeneralOptions& opts = {});

/// Reusable sparse LU factorization (for time loops that keep the operator).
class LuFactorization {
  public:
    explicit LuFactorization(const SparseMatrix& a);
    ~LuFactorization();
    LuFactorization(LuFactorization&&) noexcept;
    LuFactorization& operator=(LuFactorization&&) noexcept;

    /// Solve A x = b with the stored factorization.
    std::vector<double> solve(const std::vector<double>& b) const;
    bool ok() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Reusable sparse Cholesky (LLT) for SPD operators.
class CholeskyFactorization {
  public:
    explicit CholeskyFactorization(const SparseMatrix& a);
    ~CholeskyFactorization();
    CholeskyFactorization(CholeskyFactorization&&) noexcept;
    CholeskyFactorization& operator=(CholeskyFactorization&&) noexcept;

    std::vector<double> solve(const std::vector<double>& b) const;
    bool ok() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Small dense-free vector helpers shared across modules.
double dot(const std::vector<double>& a, const std::vector<double>& b);
double norm2(const std::vector<double>& a);
double norm_inf(const std::vector<double>& a);
void axpy(double s, const std::vector<double>& x, std::vector<double>& y);

}  // namespace nslab
