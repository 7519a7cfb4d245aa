/// @file fem.hpp
/// @brief Lagrange finite element spaces (P1/P2 on triangles, Q1/Q2 on quads),
/// Gaussian quadrature, operator assembly, Dirichlet handling, field evaluation.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "nslab/linalg.hpp"
#include "nslab/mesh.hpp"

namespace nslab {

enum class BasisType { P1, P2, Q1, Q2 };

/// Number of local shape functions for a basis.
int basis_count(BasisType b);

/// Shape function values at a reference point (triangle: xi,eta >= 0, xi+eta <= 1;
/// quad: unit square). `vals` must hold basis_count entries.
void basis_eval(BasisType b, double xi, double eta, double* vals);

/// Reference-coordinate gradients of the shape functions.
void basis_grad(BasisType b, double xi, double eta, double* dxi, double* deta);

/// Quadrature rule on the reference element; weights sum to the reference
/// measure (1/2 for the triangle, 1 for the unit square).
struct QuadratureRule {
    std::vector<double> xi, eta, w;
    int size() const { return static_cast<int>(w.size()); }
};

/// Symmetric triangle rule exact for polynomials of the requested degree (2 or 4).
QuadratureRule triangle_quadrature(int degree);

/// Tensor-product Gauss rule on the unit square (degree 2 -> 2x2, degree 4 -> 3x3).
QuadratureRule quad_quadrature(int degree);

struct Mat2 {
    double m[2][2] = {{0, 0}, {0, 0}};
};

/// A dof on the domain boundary together with its position and edge tag.
/// Dofs shared by edges of different tags report the smallest tag.
struct BoundaryDof {
    int dof;
    Vec2 x;
    int tag;
};

/// Scalar Lagrange space of order 1 or 2 on a (possibly mixed) mesh.
/// Dof numbering: [vertices][edge midpoints (order 2)][quad centers (Q2)].
class FESpace {
public:
    FESpace(const SimMesh& mesh, int order);

    const SimMesh& mesh() const { return *mesh_; }
    int order() const { return order_; }
    int num_dofs() const { return static_cast<int>(dof_coords_.size()); }

    BasisType element_basis(int e) const;
    int element_dof_count(int e) const;
    const int* element_dofs(int e) const { return elem_dofs_.data() + elem_offset_[static_cast<size_t>(e)]; }
    Vec2 dof_coord(int i) const { return dof_coords_[static_cast<size_t>(i)]; }

    /// Quadrature degree used for this space's operators (2 for order 1, 4 for order 2).
    int quadrature_degree() const { return order_ == 1 ? 2 : 4; }

    /// Unique dofs lying on boundary edges whose tag satisfies the predicate.
    std::vector<BoundaryDof> boundary_dofs(const std::function<bool(int)>& tag_pred) const;

private:
    const SimMesh* mesh_;
    int order_;
    std::vector<Vec2> dof_coords_;
    std::vector<int> elem_dofs_;
    std::vector<size_t> elem_offset_;
};

// --- Scalar operators -------------------------------------------------------

SparseMatrix assemble_mass(const FESpace& V);
SparseMatrix assemble_stiffness(const FESpace& V);

/// Row-sum lumped mass (positive for order-1 spaces; not valid for P2).
std::vector<double> lumped_mass(const FESpace& V);

/// Scalar load vector (f, phi_i).
std::vector<double> assemble_scalar_load(const FESpace& V, const std::function<double(Vec2)>& f);

// --- Vector-field operators -------------------------------------------------
// Vector fields store [x-component dofs; y-component dofs], length 2*num_dofs.

SparseMatrix vector_mass(const FESpace& V);
SparseMatrix vector_stiffness(const FESpace& V);

/// Load vector (f, Phi_i) for a vector-valued f.
std::vector<double> assemble_vector_load(const FESpace& V, const std::function<Vec2(Vec2)>& f);

/// Divergence form B: (np x 2n), B_(q,j) = (psi_q, div Phi_j).
SparseMatrix assemble_divergence(const FESpace& vel, const FESpace& pres);

/// Gradient form D: (2n x np), D_(i,q) = (Phi_i, grad psi_q) without integration
/// by parts.
SparseMatrix assemble_gradient_form(const FESpace& vel, const FESpace& pres);

/// Convection residual N(w)_i = rho (Phi_i, (w . grad) w).
std::vector<double> convection_residual(const FESpace& vel, const std::vector<double>& w, double rho);

/// Picard (Oseen) operator rho (Phi_i, (w . grad) du).
SparseMatrix convection_picard(const FESpace& vel, const std::vector<double>& w, double rho);

/// Full Newton linearization: Picard term plus rho (Phi_i, (du . grad) w).
SparseMatrix convection_newton(const FESpace& vel, const std::vector<double>& w, double rho);

/// Area-weighted average of grad p over the elements adjacent to each velocity
/// dof, evaluated at the dof position; returns [gx; gy] of length 2n.
std::vector<double> averaged_gradient(const FESpace& vel, const FESpace& pres, const std::vector<double>& p);

// --- Field evaluation -------------------------------------------------------

double evaluate_scalar(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta);
Vec2 evaluate_scalar_gradient(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta);
Vec2 evaluate_vector(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta);
Mat2 evaluate_vector_gradient(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta);

std::optional<double> evaluate_scalar_at(const FESpace& V, const SpatialHash& hash,
                                         const std::vector<double>& c, Vec2 x);
std::optional<Vec2> evaluate_vector_at(const FESpace& V, const SpatialHash& hash,
                                       const std::vector<double>& c, Vec2 x);

// --- Dirichlet handling -----------------------------------------------------

struct DirichletBc {
    int dof;
    double value;
};

/// Row replacement: zero the row, unit diagonal, rhs = value. Non-symmetric.
void apply_dirichlet_rows(SparseMatrix& A, std::vector<double>& rhs, const std::vector<DirichletBc>& bcs);

/// Symmetric elimination of Dirichlet dofs from an SPD system, retaining the
/// column coupling so right-hand sides can be rebuilt for time-dependent data.
class ConstrainedSPD {
public:
    /// `trips` describe the full symmetric matrix; `bc_dofs` need not be sorted.
    ConstrainedSPD(const std::vector<Triplet>& trips, int n, const std::vector<int>& bc_dofs);

    const SparseMatrix& matrix() const { return A_; }

    /// b[free] -= A(free, bc) * g; b[bc] = g[bc]. `g` is a full-length vector
    /// whose entries are only read at constrained dofs.
    void apply_rhs(std::vector<double>& b, const std::vector<double>& g) const;

    bool is_constrained(int dof) const { return is_bc_[static_cast<size_t>(dof)] != 0; }
    const std::vector<int>& constrained() const { return bc_; }

private:
    SparseMatrix A_;
    SparseMatrix coupling_;
    std::vector<int> bc_;
    std::vector<char> is_bc_;
};

}  // namespace nslab
