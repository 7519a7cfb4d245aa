/// @file fem.cpp
/// @brief Lagrange bases, quadrature, assembly, Dirichlet handling, evaluation.

#include "nslab/fem.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace nslab {

namespace {

constexpr int kMaxDofs = 9;

// 1D quadratic Lagrange shapes on [0,1] at nodes {0, 1, 1/2} -> (left, right, mid).
inline void lag2(double x, double& l0, double& l1, double& lh) {
    l0 = (2.0 * x - 1.0) * (x - 1.0);
    l1 = x * (2.0 * x - 1.0);
    lh = 4.0 * x * (1.0 - x);
}
inline void lag2_d(double x, double& d0, double& d1, double& dh) {
    d0 = 4.0 * x - 3.0;
    d1 = 4.0 * x - 1.0;
    dh = 4.0 - 8.0 * x;
}

}  // namespace

int basis_count(BasisType b) {
    switch (b) {
        case BasisType::P1: return 3;
        case BasisType::P2: return 6;
        case BasisType::Q1: return 4;
        case BasisType::Q2: return 9;
    }
    return 0;
}

void basis_eval(BasisType b, double xi, double eta, double* vals) {
    switch (b) {
        case BasisType::P1: {
            vals[0] = 1.0 - xi - eta;
            vals[1] = xi;
            vals[2] = eta;
            return;
        }
        case BasisType::P2: {
            const double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
            vals[0] = l0 * (2.0 * l0 - 1.0);
            vals[1] = l1 * (2.0 * l1 - 1.0);
            vals[2] = l2 * (2.0 * l2 - 1.0);
            vals[3] = 4.0 * l0 * l1;
            vals[4] = 4.0 * l1 * l2;
            vals[5] = 4.0 * l2 * l0;
            return;
        }
        case BasisType::Q1: {
            vals[0] = (1.0 - xi) * (1.0 - eta);
            vals[1] = xi * (1.0 - eta);
            vals[2] = xi * eta;
            vals[3] = (1.0 - xi) * eta;
            return;
        }
        case BasisType::Q2: {
            double a0, a1, ah, b0, b1, bh;
            lag2(xi, a0, a1, ah);
            lag2(eta, b0, b1, bh);
            vals[0] = a0 * b0;
            vals[1] = a1 * b0;
            vals[2] = a1 * b1;
            vals[3] = a0 * b1;
            vals[4] = ah * b0;  // edge (v0, v1)
            vals[5] = a1 * bh;  // edge (v1, v2)
            vals[6] = ah * b1;  // edge (v2, v3)
            vals[7] = a0 * bh;  // edge (v3, v0)
            vals[8] = ah * bh;  // center
            return;
        }
    }
}

void basis_grad(BasisType b, double xi, double eta, double* dxi, double* deta) {
    switch (b) {
        case BasisType::P1: {
            dxi[0] = -1.0; dxi[1] = 1.0; dxi[2] = 0.0;
            deta[0] = -1.0; deta[1] = 0.0; deta[2] = 1.0;
            return;
        }
        case BasisType::P2: {
            const double l0 = 1.0 - xi - eta, l1 = xi, l2 = eta;
            dxi[0] = 1.0 - 4.0 * l0; deta[0] = 1.0 - 4.0 * l0;
            dxi[1] = 4.0 * l1 - 1.0; deta[1] = 0.0;
            dxi[2] = 0.0;            deta[2] = 4.0 * l2 - 1.0;
            dxi[3] = 4.0 * (l0 - l1); deta[3] = -4.0 * l1;
            dxi[4] = 4.0 * l2;        deta[4] = 4.0 * l1;
            dxi[5] = -4.0 * l2;       deta[5] = 4.0 * (l0 - l2);
            return;
        }
        case BasisType::Q1: {
            dxi[0] = -(1.0 - eta); deta[0] = -(1.0 - xi);
            dxi[1] = (1.0 - eta);  deta[1] = -xi;
            dxi[2] = eta;          deta[2] = xi;
            dxi[3] = -eta;         deta[3] = (1.0 - xi);
            return;
        }
        case BasisType::Q2: {
            double a0, a1, ah, b0, b1, bh, da0, da1, dah, db0, db1, dbh;
            lag2(xi, a0, a1, ah);
            lag2(eta, b0, b1, bh);
            lag2_d(xi, da0, da1, dah);
            lag2_d(eta, db0, db1, dbh);
            dxi[0] = da0 * b0; deta[0] = a0 * db0;
            dxi[1] = da1 * b0; deta[1] = a1 * db0;
            dxi[2] = da1 * b1; deta[2] = a1 * db1;
            dxi[3] = da0 * b1; deta[3] = a0 * db1;
            dxi[4] = dah * b0; deta[4] = ah * db0;
            dxi[5] = da1 * bh; deta[5] = a1 * dbh;
            dxi[6] = dah * b1; deta[6] = ah * db1;
            dxi[7] = da0 * bh; deta[7] = a0 * dbh;
            dxi[8] = dah * bh; deta[8] = ah * dbh;
            return;
        }
    }
}

QuadratureRule triangle_quadrature(int degree) {
    QuadratureRule r;
    if (degree <= 2) {
        // Symmetric 3-point rule, exact to degree 2.
        r.xi = {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0};
        r.eta = {1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0};
        r.w = {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0};
        return r;
    }
    // Symmetric 6-point rule, exact to degree 4.
    const double a = 0.445948490915965;
    const double wa = 0.223381589678011 / 2.0;
    const double b = 0.091576213509771;
    const double wb = 0.109951743655322 / 2.0;
    r.xi = {a, 1.0 - 2.0 * a, a, b, 1.0 - 2.0 * b, b};
    r.eta = {a, a, 1.0 - 2.0 * a, b, b, 1.0 - 2.0 * b};
    r.w = {wa, wa, wa, wb, wb, wb};
    return r;
}

QuadratureRule quad_quadrature(int degree) {
    std::vector<double> p, w;
    if (degree <= 3) {
        const double d = 0.5 / std::sqrt(3.0);
        p = {0.5 - d, 0.5 + d};
        w = {0.5, 0.5};
    } else {
        const double d = 0.5 * std::sqrt(3.0 / 5.0);
        p = {0.5 - d, 0.5, 0.5 + d};
        w = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
    }
    QuadratureRule r;
    for (size_t j = 0; j < p.size(); ++j)
        for (size_t i = 0; i < p.size(); ++i) {
            r.xi.push_back(p[i]);
            r.eta.push_back(p[j]);
            r.w.push_back(w[i] * w[j]);
        }
    return r;
}

// --- FESpace -----------------------------------------------------------------

FESpace::FESpace(const SimMesh& mesh, int order) : mesh_(&mesh), order_(order) {
    if (order != 1 && order != 2) throw std::invalid_argument("FESpace: order must be 1 or 2");
    const int nv = mesh.num_vertices();
    const int ne = static_cast<int>(mesh.edge_data().edges.size());

    dof_coords_.assign(mesh.vertices().begin(), mesh.vertices().end());
    if (order == 2) {
        for (const auto& ed : mesh.edge_data().edges) {
            Vec2 a = mesh.vertices()[static_cast<size_t>(ed.first)];
            Vec2 b = mesh.vertices()[static_cast<size_t>(ed.second)];
            dof_coords_.push_back((a + b) * 0.5);
        }
    }

    elem_offset_.reserve(static_cast<size_t>(mesh.num_elements()) + 1);
    elem_offset_.push_back(0);
    int next_center = nv + ne;
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const Element& el = mesh.elements()[static_cast<size_t>(e)];
        for (int k = 0; k < el.nv; ++k) elem_dofs_.push_back(el.v[static_cast<size_t>(k)]);
        if (order == 2) {
            const auto& ee = mesh.edge_data().element_edges[static_cast<size_t>(e)];
            for (int k = 0; k < el.nv; ++k) elem_dofs_.push_back(nv + ee[static_cast<size_t>(k)]);
            if (el.nv == 4) {
                elem_dofs_.push_back(next_center++);
                dof_coords_.push_back(mesh.map_to_physical(e, 0.5, 0.5));
            }
        }
        elem_offset_.push_back(elem_dofs_.size());
    }
}

BasisType FESpace::element_basis(int e) const {
    const bool tri = mesh_->elements()[static_cast<size_t>(e)].nv == 3;
    if (order_ == 1) return tri ? BasisType::P1 : BasisType::Q1;
    return tri ? BasisType::P2 : BasisType::Q2;
}

int FESpace::element_dof_count(int e) const {
    return static_cast<int>(elem_offset_[static_cast<size_t>(e) + 1] - elem_offset_[static_cast<size_t>(e)]);
}

std::vector<BoundaryDof> FESpace::boundary_dofs(const std::function<bool(int)>& tag_pred) const {
    std::map<std::pair<int, int>, int> edge_index;
    const auto& ed = mesh_->edge_data();
    for (size_t k = 0; k < ed.edges.size(); ++k) edge_index[ed.edges[k]] = static_cast<int>(k);

    std::unordered_map<int, int> tag_of;  // dof -> smallest matching tag
    for (const BoundaryEdge& be : mesh_->boundary_edges()) {
        if (!tag_pred(be.tag)) continue;
        auto claim = [&](int dof) {
            auto it = tag_of.find(dof);
            if (it == tag_of.end() || be.tag < it->second) tag_of[dof] = be.tag;
        };
        claim(be.a);
        claim(be.b);
        if (order_ == 2) {
            int eid = edge_index.at(std::minmax(be.a, be.b));
            claim(mesh_->num_vertices() + eid);
        }
    }
    std::vector<BoundaryDof> out;
    out.reserve(tag_of.size());
    for (const auto& [dof, tag] : tag_of)
        out.push_back({dof, dof_coords_[static_cast<size_t>(dof)], tag});
    std::sort(out.begin(), out.end(), [](const BoundaryDof& a, const BoundaryDof& b) { return a.dof < b.dof; });
    return out;
}

// --- Assembly helpers --------------------------------------------------------

namespace {

struct MappedBasis {
    int nq = 0;
    int nb = 0;
    // Flattened per quadrature point: jxw, position, values, physical gradients.
    std::vector<double> jxw;
    std::vector<Vec2> x;
    std::vector<double> N;   // nq * nb
    std::vector<double> gx;  // nq * nb
    std::vector<double> gy;  // nq * nb
};

const QuadratureRule& rule_for(BasisType b, int degree) {
    static const QuadratureRule t2 = triangle_quadrature(2);
    static const QuadratureRule t4 = triangle_quadrature(4);
    static const QuadratureRule q2 = quad_quadrature(3);
    static const QuadratureRule q4 = quad_quadrature(5);
    const bool tri = (b == BasisType::P1 || b == BasisType::P2);
    if (degree <= 3) return tri ? t2 : q2;
    return tri ? t4 : q4;
}

/// Evaluates basis `b` of space V on element e at the points of `rule`,
/// mapping gradients through the (affine or bilinear) geometry.
void map_element(const SimMesh& mesh, int e, BasisType b, const QuadratureRule& rule, MappedBasis& out) {
    const Element& el = mesh.elements()[static_cast<size_t>(e)];
    const int nb = basis_count(b);
    const int nq = rule.size();
    out.nq = nq;
    out.nb = nb;
    out.jxw.resize(static_cast<size_t>(nq));
    out.x.resize(static_cast<size_t>(nq));
    out.N.resize(static_cast<size_t>(nq * nb));
    out.gx.resize(static_cast<size_t>(nq * nb));
    out.gy.resize(static_cast<size_t>(nq * nb));

    Vec2 corner[4];
    for (int k = 0; k < el.nv; ++k) corner[k] = mesh.vertices()[static_cast<size_t>(el.v[static_cast<size_t>(k)])];

    double dxi[kMaxDofs], deta[kMaxDofs];
    for (int q = 0; q < nq; ++q) {
        const double xi = rule.xi[static_cast<size_t>(q)], eta = rule.eta[static_cast<size_t>(q)];
        basis_eval(b, xi, eta, &out.N[static_cast<size_t>(q * nb)]);
        basis_grad(b, xi, eta, dxi, deta);

        // Geometry Jacobian (affine for triangles, bilinear for quads).
        double j00, j01, j10, j11;
        if (el.nv == 3) {
            j00 = corner[1].x - corner[0].x;
            j01 = corner[2].x - corner[0].x;
            j10 = corner[1].y - corner[0].y;
            j11 = corner[2].y - corner[0].y;
        } else {
            double gq_xi[4], gq_eta[4];
            basis_grad(BasisType::Q1, xi, eta, gq_xi, gq_eta);
            j00 = j01 = j10 = j11 = 0.0;
            for (int k = 0; k < 4; ++k) {
                j00 += corner[k].x * gq_xi[k];
                j01 += corner[k].x * gq_eta[k];
                j10 += corner[k].y * gq_xi[k];
                j11 += corner[k].y * gq_eta[k];
            }
        }
        const double det = j00 * j11 - j01 * j10;
        if (!(det > 0.0)) throw std::runtime_error("fem: degenerate element Jacobian");
        out.jxw[static_cast<size_t>(q)] = det * rule.w[static_cast<size_t>(q)];
        out.x[static_cast<size_t>(q)] = mesh.map_to_physical(e, xi, eta);
        // grad_phys = J^{-T} grad_ref
        const double i00 = j11 / det, i01 = -j10 / det, i10 = -j01 / det, i11 = j00 / det;
        for (int k = 0; k < nb; ++k) {
            out.gx[static_cast<size_t>(q * nb + k)] = i00 * dxi[k] + i01 * deta[k];
            out.gy[static_cast<size_t>(q * nb + k)] = i10 * dxi[k] + i11 * deta[k];
        }
    }
}

void map_space_element(const FESpace& V, int e, int degree, MappedBasis& out) {
    const BasisType b = V.element_basis(e);
    map_element(V.mesh(), e, b, rule_for(b, degree), out);
}

}  // namespace

SparseMatrix assemble_mass(const FESpace& V) {
    const int n = V.num_dofs();
    std::vector<Triplet> trips;
    MappedBasis mb;
    for (int e = 0; e < V.mesh().num_elements(); ++e) {
        map_space_element(V, e, V.quadrature_degree(), mb);
        const int* dofs = V.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            const double* N = &mb.N[static_cast<size_t>(q * mb.nb)];
            for (int i = 0; i < mb.nb; ++i)
                for (int j = 0; j < mb.nb; ++j)
                    trips.push_back({dofs[i], dofs[j], N[i] * N[j] * mb.jxw[static_cast<size_t>(q)]});
        }
    }
    return SparseMatrix::from_triplets(n, n, trips);
}

SparseMatrix assemble_stiffness(const FESpace& V) {
    const int n = V.num_dofs();
    std::vector<Triplet> trips;
    MappedBasis mb;
    for (int e = 0; e < V.mesh().num_elements(); ++e) {
        map_space_element(V, e, V.quadrature_degree(), mb);
        const int* dofs = V.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            const double* gx = &mb.gx[static_cast<size_t>(q * mb.nb)];
            const double* gy = &mb.gy[static_cast<size_t>(q * mb.nb)];
            for (int i = 0; i < mb.nb; ++i)
                for (int j = 0; j < mb.nb; ++j)
                    trips.push_back({dofs[i], dofs[j], (gx[i] * gx[j] + gy[i] * gy[j]) * mb.jxw[static_cast<size_t>(q)]});
        }
    }
    return SparseMatrix::from_triplets(n, n, trips);
}

std::vector<double> lumped_mass(const FESpace& V) {
    std::vector<double> lum(static_cast<size_t>(V.num_dofs()), 0.0);
    MappedBasis mb;
    for (int e = 0; e < V.mesh().num_elements(); ++e) {
        map_space_element(V, e, V.quadrature_degree(), mb);
        const int* dofs = V.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q)
            for (int i = 0; i < mb.nb; ++i)
                lum[static_cast<size_t>(dofs[i])] += mb.N[static_cast<size_t>(q * mb.nb + i)] * mb.jxw[static_cast<size_t>(q)];
    }
    return lum;
}

std::vector<double> assemble_scalar_load(const FESpace& V, const std::function<double(Vec2)>& f) {
    std::vector<double> load(static_cast<size_t>(V.num_dofs()), 0.0);
    MappedBasis mb;
    for (int e = 0; e < V.mesh().num_elements(); ++e) {
        map_space_element(V, e, V.quadrature_degree(), mb);
        const int* dofs = V.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            const double fv = f(mb.x[static_cast<size_t>(q)]) * mb.jxw[static_cast<size_t>(q)];
            for (int i = 0; i < mb.nb; ++i)
                load[static_cast<size_t>(dofs[i])] += mb.N[static_cast<size_t>(q * mb.nb + i)] * fv;
        }
    }
    return load;
}

SparseMatrix vector_mass(const FESpace& V) {
    const int n = V.num_dofs();
    SparseMatrix m = assemble_mass(V);
    std::vector<Triplet> trips;
    for (int r = 0; r < n; ++r) {
        const int* cols = m.row_cols(r);
        const double* vals = m.row_vals(r);
        for (int k = 0; k < m.row_nnz(r); ++k) {
            trips.push_back({r, cols[k], vals[k]});
            trips.push_back({r + n, cols[k] + n, vals[k]});
        }
    }
    return SparseMatrix::from_triplets(2 * n, 2 * n, trips);
}

SparseMatrix vector_stiffness(const FESpace& V) {
    const int n = V.num_dofs();
    SparseMatrix m = assemble_stiffness(V);
    std::vector<Triplet> trips;
    for (int r = 0; r < n; ++r) {
        const int* cols = m.row_cols(r);
        const double* vals = m.row_vals(r);
        for (int k = 0; k < m.row_nnz(r); ++k) {
            trips.push_back({r, cols[k], vals[k]});
            trips.push_back({r + n, cols[k] + n, vals[k]});
        }
    }
    return SparseMatrix::from_triplets(2 * n, 2 * n, trips);
}

std::vector<double> assemble_vector_load(const FESpace& V, const std::function<Vec2(Vec2)>& f) {
    const int n = V.num_dofs();
    std::vector<double> load(static_cast<size_t>(2 * n), 0.0);
    MappedBasis mb;
    for (int e = 0; e < V.mesh().num_elements(); ++e) {
        map_space_element(V, e, V.quadrature_degree(), mb);
        const int* dofs = V.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            const Vec2 fv = f(mb.x[static_cast<size_t>(q)]) * mb.jxw[static_cast<size_t>(q)];
            for (int i = 0; i < mb.nb; ++i) {
                const double Ni = mb.N[static_cast<size_t>(q * mb.nb + i)];
                load[static_cast<size_t>(dofs[i])] += Ni * fv.x;
                load[static_cast<size_t>(dofs[i] + n)] += Ni * fv.y;
            }
        }
    }
    return load;
}

SparseMatrix assemble_divergence(const FESpace& vel, const FESpace& pres) {
    if (&vel.mesh() != &pres.mesh()) throw std::invalid_argument("assemble_divergence: spaces on different meshes");
    const int n = vel.num_dofs(), np = pres.num_dofs();
    std::vector<Triplet> trips;
    MappedBasis vb, pb;
    const int degree = vel.quadrature_degree();
    for (int e = 0; e < vel.mesh().num_elements(); ++e) {
        const QuadratureRule& rule = rule_for(vel.element_basis(e), degree);
        map_element(vel.mesh(), e, vel.element_basis(e), rule, vb);
        map_element(pres.mesh(), e, pres.element_basis(e), rule, pb);
        const int* vd = vel.element_dofs(e);
        const int* pd = pres.element_dofs(e);
        for (int q = 0; q < vb.nq; ++q) {
            const double* gx = &vb.gx[static_cast<size_t>(q * vb.nb)];
            const double* gy = &vb.gy[static_cast<size_t>(q * vb.nb)];
            const double* P = &pb.N[static_cast<size_t>(q * pb.nb)];
            for (int a = 0; a < pb.nb; ++a) {
                const double pw = P[a] * vb.jxw[static_cast<size_t>(q)];
                for (int j = 0; j < vb.nb; ++j) {
                    trips.push_back({pd[a], vd[j], pw * gx[j]});
                    trips.push_back({pd[a], vd[j] + n, pw * gy[j]});
                }
            }
        }
    }
    return SparseMatrix::from_triplets(np, 2 * n, trips);
}

SparseMatrix assemble_gradient_form(const FESpace& vel, const FESpace& pres) {
    if (&vel.mesh() != &pres.mesh()) throw std::invalid_argument("assemble_gradient_form: spaces on different meshes");
    const int n = vel.num_dofs(), np = pres.num_dofs();
    std::vector<Triplet> trips;
    MappedBasis vb, pb;
    const int degree = vel.quadrature_degree();
    for (int e = 0; e < vel.mesh().num_elements(); ++e) {
        const QuadratureRule& rule = rule_for(vel.element_basis(e), degree);
        map_element(vel.mesh(), e, vel.element_basis(e), rule, vb);
        map_element(pres.mesh(), e, pres.element_basis(e), rule, pb);
        const int* vd = vel.element_dofs(e);
        const int* pd = pres.element_dofs(e);
        for (int q = 0; q < vb.nq; ++q) {
            const double* N = &vb.N[static_cast<size_t>(q * vb.nb)];
            const double* pgx = &pb.gx[static_cast<size_t>(q * pb.nb)];
            const double* pgy = &pb.gy[static_cast<size_t>(q * pb.nb)];
            for (int i = 0; i < vb.nb; ++i) {
                const double nw = N[i] * vb.jxw[static_cast<size_t>(q)];
                for (int a = 0; a < pb.nb; ++a) {
                    trips.push_back({vd[i], pd[a], nw * pgx[a]});
                    trips.push_back({vd[i] + n, pd[a], nw * pgy[a]});
                }
            }
        }
    }
    return SparseMatrix::from_triplets(2 * n, np, trips);
}

namespace {

/// Velocity value and gradient of the coefficient field w at a mapped point.
inline void field_at_point(const MappedBasis& mb, int q, const int* dofs, int n,
                           const std::vector<double>& w, Vec2& val, Mat2& grad) {
    val = {0, 0};
    grad = Mat2{};
    const double* N = &mb.N[static_cast<size_t>(q * mb.nb)];
    const double* gx = &mb.gx[static_cast<size_t>(q * mb.nb)];
    const double* gy = &mb.gy[static_cast<size_t>(q * mb.nb)];
    for (int j = 0; j < mb.nb; ++j) {
        const double wx = w[static_cast<size_t>(dofs[j])];
        const double wy = w[static_cast<size_t>(dofs[j] + n)];
        val.x += wx * N[j];
        val.y += wy * N[j];
        grad.m[0][0] += wx * gx[j];
        grad.m[0][1] += wx * gy[j];
        grad.m[1][0] += wy * gx[j];
        grad.m[1][1] += wy * gy[j];
    }
}

}  // namespace

std::vector<double> convection_residual(const FESpace& vel, const std::vector<double>& w, double rho) {
    const int n = vel.num_dofs();
    std::vector<double> res(static_cast<size_t>(2 * n), 0.0);
    MappedBasis mb;
    for (int e = 0; e < vel.mesh().num_elements(); ++e) {
        map_space_element(vel, e, vel.quadrature_degree(), mb);
        const int* dofs = vel.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            Vec2 wv;
            Mat2 gw;
            field_at_point(mb, q, dofs, n, w, wv, gw);
            const double cx = rho * (wv.x * gw.m[0][0] + wv.y * gw.m[0][1]) * mb.jxw[static_cast<size_t>(q)];
            const double cy = rho * (wv.x * gw.m[1][0] + wv.y * gw.m[1][1]) * mb.jxw[static_cast<size_t>(q)];
            const double* N = &mb.N[static_cast<size_t>(q * mb.nb)];
            for (int i = 0; i < mb.nb; ++i) {
                res[static_cast<size_t>(dofs[i])] += N[i] * cx;
                res[static_cast<size_t>(dofs[i] + n)] += N[i] * cy;
            }
        }
    }
    return res;
}

SparseMatrix convection_picard(const FESpace& vel, const std::vector<double>& w, double rho) {
    const int n = vel.num_dofs();
    std::vector<Triplet> trips;
    MappedBasis mb;
    for (int e = 0; e < vel.mesh().num_elements(); ++e) {
        map_space_element(vel, e, vel.quadrature_degree(), mb);
        const int* dofs = vel.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            Vec2 wv;
            Mat2 gw;
            field_at_point(mb, q, dofs, n, w, wv, gw);
            const double* N = &mb.N[static_cast<size_t>(q * mb.nb)];
            const double* gx = &mb.gx[static_cast<size_t>(q * mb.nb)];
            const double* gy = &mb.gy[static_cast<size_t>(q * mb.nb)];
            const double s = rho * mb.jxw[static_cast<size_t>(q)];
            for (int i = 0; i < mb.nb; ++i)
                for (int j = 0; j < mb.nb; ++j) {
                    const double v = s * N[i] * (wv.x * gx[j] + wv.y * gy[j]);
                    trips.push_back({dofs[i], dofs[j], v});
                    trips.push_back({dofs[i] + n, dofs[j] + n, v});
                }
        }
    }
    return SparseMatrix::from_triplets(2 * n, 2 * n, trips);
}

SparseMatrix convection_newton(const FESpace& vel, const std::vector<double>& w, double rho) {
    const int n = vel.num_dofs();
    std::vector<Triplet> trips;
    MappedBasis mb;
    for (int e = 0; e < vel.mesh().num_elements(); ++e) {
        map_space_element(vel, e, vel.quadrature_degree(), mb);
        const int* dofs = vel.element_dofs(e);
        for (int q = 0; q < mb.nq; ++q) {
            Vec2 wv;
            Mat2 gw;
            field_at_point(mb, q, dofs, n, w, wv, gw);
            const double* N = &mb.N[static_cast<size_t>(q * mb.nb)];
            const double* gx = &mb.gx[static_cast<size_t>(q * mb.nb)];
            const double* gy = &mb.gy[static_cast<size_t>(q * mb.nb)];
            const double s = rho * mb.jxw[static_cast<size_t>(q)];
            for (int i = 0; i < mb.nb; ++i)
                for (int j = 0; j < mb.nb; ++j) {
                    const double adv = s * N[i] * (wv.x * gx[j] + wv.y * gy[j]);
                    const double mij = s * N[i] * N[j];
                    // (du . grad) w couples components through grad w.
                    trips.push_back({dofs[i], dofs[j], adv + mij * gw.m[0][0]});
                    trips.push_back({dofs[i], dofs[j] + n, mij * gw.m[0][1]});
                    trips.push_back({dofs[i] + n, dofs[j], mij * gw.m[1][0]});
                    trips.push_back({dofs[i] + n, dofs[j] + n, adv + mij * gw.m[1][1]});
                }
        }
    }
    return SparseMatrix::from_triplets(2 * n, 2 * n, trips);
}

namespace {

void local_ref_coords(BasisType b, double* xi, double* eta) {
    switch (b) {
        case BasisType::P1: {
            const double x[] = {0, 1, 0}, y[] = {0, 0, 1};
            std::copy(x, x + 3, xi);
            std::copy(y, y + 3, eta);
            return;
        }
        case BasisType::P2: {
            const double x[] = {0, 1, 0, 0.5, 0.5, 0}, y[] = {0, 0, 1, 0, 0.5, 0.5};
            std::copy(x, x + 6, xi);
            std::copy(y, y + 6, eta);
            return;
        }
        case BasisType::Q1: {
            const double x[] = {0, 1, 1, 0}, y[] = {0, 0, 1, 1};
            std::copy(x, x + 4, xi);
            std::copy(y, y + 4, eta);
            return;
        }
        case BasisType::Q2: {
            const double x[] = {0, 1, 1, 0, 0.5, 1, 0.5, 0, 0.5};
            const double y[] = {0, 0, 1, 1, 0, 0.5, 1, 0.5, 0.5};
            std::copy(x, x + 9, xi);
            std::copy(y, y + 9, eta);
            return;
        }
    }
}

}  // namespace

std::vector<double> averaged_gradient(const FESpace& vel, const FESpace& pres, const std::vector<double>& p) {
    if (&vel.mesh() != &pres.mesh()) throw std::invalid_argument("averaged_gradient: spaces on different meshes");
    const int n = vel.num_dofs();
    std::vector<double> gxs(static_cast<size_t>(n), 0.0), gys(static_cast<size_t>(n), 0.0),
        ws(static_cast<size_t>(n), 0.0);
    double xi[kMaxDofs], eta[kMaxDofs];
    for (int e = 0; e < vel.mesh().num_elements(); ++e) {
        const BasisType vb = vel.element_basis(e);
        const int nb = basis_count(vb);
        local_ref_coords(vb, xi, eta);
        const double area = vel.mesh().element_area(e);
        const int* vd = vel.element_dofs(e);
        for (int k = 0; k < nb; ++k) {
            const Vec2 g = evaluate_scalar_gradient(pres, p, e, xi[k], eta[k]);
            gxs[static_cast<size_t>(vd[k])] += area * g.x;
            gys[static_cast<size_t>(vd[k])] += area * g.y;
            ws[static_cast<size_t>(vd[k])] += area;
        }
    }
    std::vector<double> out(static_cast<size_t>(2 * n), 0.0);
    for (int i = 0; i < n; ++i) {
        if (ws[static_cast<size_t>(i)] > 0.0) {
            out[static_cast<size_t>(i)] = gxs[static_cast<size_t>(i)] / ws[static_cast<size_t>(i)];
            out[static_cast<size_t>(i + n)] = gys[static_cast<size_t>(i)] / ws[static_cast<size_t>(i)];
        }
    }
    return out;
}

// --- Evaluation ---------------------------------------------------------------

namespace {

/// Physical gradient operator of the geometry at a reference point.
inline void geometry_inverse_jacobian(const SimMesh& mesh, int e, double xi, double eta,
                                      double& i00, double& i01, double& i10, double& i11) {
    const Element& el = mesh.elements()[static_cast<size_t>(e)];
    double j00, j01, j10, j11;
    if (el.nv == 3) {
        Vec2 a = mesh.vertices()[static_cast<size_t>(el.v[0])];
        Vec2 b = mesh.vertices()[static_cast<size_t>(el.v[1])];
        Vec2 c = mesh.vertices()[static_cast<size_t>(el.v[2])];
        j00 = b.x - a.x; j01 = c.x - a.x;
        j10 = b.y - a.y; j11 = c.y - a.y;
    } else {
        double gxi[4], geta[4];
        basis_grad(BasisType::Q1, xi, eta, gxi, geta);
        j00 = j01 = j10 = j11 = 0.0;
        for (int k = 0; k < 4; ++k) {
            Vec2 v = mesh.vertices()[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
            j00 += v.x * gxi[k];
            j01 += v.x * geta[k];
            j10 += v.y * gxi[k];
            j11 += v.y * geta[k];
        }
    }
    const double det = j00 * j11 - j01 * j10;
    i00 = j11 / det; i01 = -j10 / det;
    i10 = -j01 / det; i11 = j00 / det;
}

}  // namespace

double evaluate_scalar(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta) {
    const BasisType b = V.element_basis(e);
    const int nb = basis_count(b);
    double N[kMaxDofs];
    basis_eval(b, xi, eta, N);
    const int* dofs = V.element_dofs(e);
    double v = 0.0;
    for (int k = 0; k < nb; ++k) v += c[static_cast<size_t>(dofs[k])] * N[k];
    return v;
}

Vec2 evaluate_scalar_gradient(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta) {
    const BasisType b = V.element_basis(e);
    const int nb = basis_count(b);
    double dxi[kMaxDofs], deta[kMaxDofs];
    basis_grad(b, xi, eta, dxi, deta);
    double i00, i01, i10, i11;
    geometry_inverse_jacobian(V.mesh(), e, xi, eta, i00, i01, i10, i11);
    const int* dofs = V.element_dofs(e);
    Vec2 g{0, 0};
    for (int k = 0; k < nb; ++k) {
        const double ck = c[static_cast<size_t>(dofs[k])];
        g.x += ck * (i00 * dxi[k] + i01 * deta[k]);
        g.y += ck * (i10 * dxi[k] + i11 * deta[k]);
    }
    return g;
}

Vec2 evaluate_vector(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta) {
    const BasisType b = V.element_basis(e);
    const int nb = basis_count(b);
    const int n = V.num_dofs();
    double N[kMaxDofs];
    basis_eval(b, xi, eta, N);
    const int* dofs = V.element_dofs(e);
    Vec2 v{0, 0};
    for (int k = 0; k < nb; ++k) {
        v.x += c[static_cast<size_t>(dofs[k])] * N[k];
        v.y += c[static_cast<size_t>(dofs[k] + n)] * N[k];
    }
    return v;
}

Mat2 evaluate_vector_gradient(const FESpace& V, const std::vector<double>& c, int e, double xi, double eta) {
    const BasisType b = V.element_basis(e);
    const int nb = basis_count(b);
    const int n = V.num_dofs();
    double dxi[kMaxDofs], deta[kMaxDofs];
    basis_grad(b, xi, eta, dxi, deta);
    double i00, i01, i10, i11;
    geometry_inverse_jacobian(V.mesh(), e, xi, eta, i00, i01, i10, i11);
    const int* dofs = V.element_dofs(e);
    Mat2 g;
    for (int k = 0; k < nb; ++k) {
        const double gx = i00 * dxi[k] + i01 * deta[k];
        const double gy = i10 * dxi[k] + i11 * deta[k];
        const double cx = c[static_cast<size_t>(dofs[k])];
        const double cy = c[static_cast<size_t>(dofs[k] + n)];
        g.m[0][0] += cx * gx;
        g.m[0][1] += cx * gy;
        g.m[1][0] += cy * gx;
        g.m[1][1] += cy * gy;
    }
    return g;
}

std::optional<double> evaluate_scalar_at(const FESpace& V, const SpatialHash& hash,
                                         const std::vector<double>& c, Vec2 x) {
    auto loc = locate_point(V.mesh(), hash, x);
    if (!loc) return std::nullopt;
    return evaluate_scalar(V, c, loc->element, loc->xi, loc->eta);
}

std::optional<Vec2> evaluate_vector_at(const FESpace& V, const SpatialHash& hash,
                                       const std::vector<double>& c, Vec2 x) {
    auto loc = locate_point(V.mesh(), hash, x);
    if (!loc) return std::nullopt;
    return evaluate_vector(V, c, loc->element, loc->xi, loc->eta);
}

// --- Dirichlet handling --------------------------------------------------------

void apply_dirichlet_rows(SparseMatrix& A, std::vector<double>& rhs, const std::vector<DirichletBc>& bcs) {
    for (const DirichletBc& bc : bcs) {
        A.set_identity_row(bc.dof);
        rhs[static_cast<size_t>(bc.dof)] = bc.value;
    }
}

ConstrainedSPD::ConstrainedSPD(const std::vector<Triplet>& trips, int n, const std::vector<int>& bc_dofs) {
    bc_ = bc_dofs;
    std::sort(bc_.begin(), bc_.end());
    bc_.erase(std::unique(bc_.begin(), bc_.end()), bc_.end());
    is_bc_.assign(static_cast<size_t>(n), 0);
    for (int d : bc_) is_bc_[static_cast<size_t>(d)] = 1;

    std::vector<Triplet> a_trips, c_trips;
    a_trips.reserve(trips.size());
    for (const Triplet& t : trips) {
        const bool bi = is_bc_[static_cast<size_t>(t.row)] != 0;
        const bool bj = is_bc_[static_cast<size_t>(t.col)] != 0;
        if (!bi && !bj) {
            a_trips.push_back(t);
        } else if (!bi) {
            c_trips.push_back(t);
        }
    }
    for (int d : bc_) a_trips.push_back({d, d, 1.0});
    A_ = SparseMatrix::from_triplets(n, n, a_trips);
    coupling_ = SparseMatrix::from_triplets(n, n, c_trips);
}

void ConstrainedSPD::apply_rhs(std::vector<double>& b, const std::vector<double>& g) const {
    coupling_.multiply_add(g, -1.0, b);
    for (int d : bc_) b[static_cast<size_t>(d)] = g[static_cast<size_t>(d)];
}

}  // namespace nslab
