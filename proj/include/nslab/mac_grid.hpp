/// @file mac_grid.hpp
/// @brief Staggered (MAC) grid with cut-cell face fractions and its discrete
/// operators: interpolation, divergence, pressure projection, diffusion.
#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "nslab/fem.hpp"  // ConstrainedSPD
#include "nslab/linalg.hpp"
#include "nslab/mesh.hpp"  // Vec2

namespace nslab {

/// Uniform staggered grid. Pressure lives at cell centers, the x-velocity on
/// vertical faces ((nx+1) x ny), the y-velocity on horizontal faces
/// (nx x (ny+1)). Face fractions give the liquid fraction of each face.
struct StaggeredGrid {
    int nx = 0, ny = 0;
    double h = 0.0;
    Vec2 origin{0, 0};
    std::vector<char> cell_fluid;  ///< nx*ny, 1 = fluid
    std::vector<double> frac_u;    ///< (nx+1)*ny
    std::vector<double> frac_v;    ///< nx*(ny+1)

    int cell_index(int i, int j) const { return j * nx + i; }
    int u_index(int i, int j) const { return j * (nx + 1) + i; }
    int v_index(int i, int j) const { return j * nx + i; }

    bool fluid(int i, int j) const {
        if (i < 0 || j < 0 || i >= nx || j >= ny) return false;
        return cell_fluid[static_cast<size_t>(cell_index(i, j))] != 0;
    }

    Vec2 cell_center(int i, int j) const { return {origin.x + (i + 0.5) * h, origin.y + (j + 0.5) * h}; }
    Vec2 u_position(int i, int j) const { return {origin.x + i * h, origin.y + (j + 0.5) * h}; }
    Vec2 v_position(int i, int j) const { return {origin.x + (i + 0.5) * h, origin.y + j * h}; }
    Vec2 lo() const { return origin; }
    Vec2 hi() const { return {origin.x + nx * h, origin.y + ny * h}; }

    int num_cells() const { return nx * ny; }
    int num_u() const { return (nx + 1) * ny; }
    int num_v() const { return nx * (ny + 1); }
};

/// All-fluid grid covering [origin, origin + (nx,ny)*h] with unit fractions.
StaggeredGrid make_grid(Vec2 origin, int nx, int ny, double h);

/// Classify cells and face fractions from a signed distance function
/// (negative inside the fluid). Fractions below 1e-6 are clamped to zero, and
/// faces between two solid cells forced to zero.
void classify_from_sdf(StaggeredGrid& grid, const std::function<double(Vec2)>& sdf);

struct MacVelocity {
    std::vector<double> u, v;
};

MacVelocity make_velocity(const StaggeredGrid& grid);

/// Sample an analytic field onto the staggered locations.
MacVelocity sample_field(const StaggeredGrid& grid, const std::function<Vec2(Vec2)>& f);

/// Component-wise bilinear interpolation on each component's own lattice.
/// Out-of-domain queries are projected onto the closest domain point.
Vec2 sample_velocity(const StaggeredGrid& grid, const MacVelocity& vel, Vec2 x);

/// Fraction-weighted divergence per cell (zero on solid cells), length nx*ny.
std::vector<double> divergence(const StaggeredGrid& grid, const MacVelocity& vel);

/// Pressure Poisson system over fluid cells: A p = -(rho/dt) div(vel), with
/// face-fraction-squared weights, zero-flux at solid/closed faces, and ghost
/// p = 0 beyond outflow faces. `outflow` is evaluated at boundary face
/// centers; pass nullptr for a closed domain (pure Neumann).
struct PoissonSystem {
    SparseMatrix A;
    std::vector<double> rhs;
    std::vector<int> cell_to_row;  ///< nx*ny, -1 for solid cells
    std::vector<int> row_to_cell;
    bool pure_neumann = false;
};
PoissonSystem assemble_pressure_poisson(const StaggeredGrid& grid, const MacVelocity& vel,
                                        double dt, double rho,
                                        const std::function<bool(Vec2)>& outflow);

/// Subtract (dt/rho) * fraction-scaled pressure gradient on active faces;
/// boundary faces are only corrected where `outflow` marks them (ghost p=0).
/// `p` has length nx*ny.
MacVelocity apply_pressure_gradient(const StaggeredGrid& grid, const MacVelocity& vel,
                                    const std::vector<double>& p, double dt, double rho,
                                    const std::function<bool(Vec2)>& outflow);

/// Reusable pressure projection (assembles and factors once per grid/dt).
class MacProjection {
  public:
    MacProjection(const StaggeredGrid& grid, double dt, double rho,
                  std::function<bool(Vec2)> outflow);

    /// Solve for pressure (full nx*ny field, zero at solid cells).
    std::vector<double> solve(const MacVelocity& vel, SolveReport* report = nullptr) const;

    /// Pressure solve + velocity correction.
    MacVelocity project(const MacVelocity& vel, std::vector<double>* p_out = nullptr,
                        SolveReport* report = nullptr) const;

    bool pure_neumann() const { return pure_neumann_; }

  private:
    const StaggeredGrid* grid_;
    double dt_, rho_;
    std::function<bool(Vec2)> outflow_;
    SparseMatrix A_;
    std::vector<int> cell_to_row_, row_to_cell_;
    bool pure_neumann_ = false;
    std::unique_ptr<CholeskyFactorization> llt_;
};

/// Implicit diffusion (rho I - dt nu Lap) ut = rho uhat for one velocity
/// component on its staggered lattice. Dirichlet data is imposed at boundary
/// face centers and, across edge-center ghosts, by elimination; `neumann`
/// marks boundary positions with zero normal derivative instead.
class MacDiffusion {
  public:
    /// component: 0 for u (vertical faces), 1 for v (horizontal faces).
    MacDiffusion(const StaggeredGrid& grid, double dt, double nu, double rho, int component,
                 const std::function<bool(Vec2)>& neumann);

    /// `bc` is evaluated at face centers (Dirichlet rows) and edge-center
    /// ghost positions at the target time.
    std::vector<double> solve(const std::vector<double>& u_hat,
                              const std::function<double(Vec2)>& bc,
                              SolveReport* report = nullptr) const;

  private:
    int n_ = 0;
    std::vector<double> row_mass_;
    std::unique_ptr<ConstrainedSPD> sys_;
    std::vector<int> bc_rows_;
    std::vector<Vec2> bc_pos_;
    struct Ghost {
        int row;
        double coeff;
        Vec2 pos;
    };
    std::vector<Ghost> ghosts_;
    std::unique_ptr<CholeskyFactorization> llt_;
};

}  // namespace nslab
