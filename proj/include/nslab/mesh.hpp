/// @file mesh.hpp
/// @brief Unstructured triangle/quad meshes: storage, boundary tagging,
///        point location via spatial hashing, geometric-map inversion,
///        scaled-Jacobian quality, uniform refinement and quad splitting.

#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nslab {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    Vec2() = default;
    Vec2(double xx, double yy) : x(xx), y(yy) {}
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double cross(Vec2 o) const { return x * o.y - y * o.x; }
    double norm() const;
};

inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }

/// Mesh element: triangle (nv=3) or quad (nv=4), vertices CCW.
struct Element {
    std::array<int, 4> v{-1, -1, -1, -1};
    int nv = 3;
};

struct BoundaryEdge {
    int a = -1;       ///< endpoints in element (CCW) order: outward normal is
    int b = -1;       ///< (t.y, -t.x) for t = b - a
    int element = -1; ///< owning element
    int tag = 0;
};

/// Result of point location: owning element plus reference coordinates
/// (barycentric-style (xi, eta) for triangles, unit square for quads).
struct LocalCoords {
    int element = -1;
    double xi = 0.0;
    double eta = 0.0;
};

class SimMesh {
  public:
    SimMesh() = default;
    /// Validates elements (index range, vertex count), repairs orientation to
    /// CCW, rejects zero-area elements, extracts boundary edges and the
    /// canonical edge enumeration.
    SimMesh(std::vector<Vec2> vertices, std::vector<Element> elements);

    int num_vertices() const { return static_cast<int>(vertices_.size()); }
    int num_elements() const { return static_cast<int>(elements_.size()); }
    const std::vector<Vec2>& vertices() const { return vertices_; }
    const std::vector<Element>& elements() const { return elements_; }
    const std::vector<BoundaryEdge>& boundary_edges() const { return boundary_; }

    /// Maximum edge length over all elements.
    double mesh_size() const;
    double element_area(int e) const;
    Vec2 element_centroid(int e) const;
    /// Min-corner scaled Jacobian; triangles are normalized by 2/sqrt(3) so
    /// an equilateral triangle scores 1. Negative for non-convex quads.
    double scaled_jacobian(int e) const;

    Vec2 map_to_physical(int e, double xi, double eta) const;
    /// Closed-form inversion (affine for triangles, quadratic branch for
    /// bilinear quads) with a Newton fallback. Returns false when the point
    /// has no preimage in the element (within `tol` in reference space).
    bool invert_map(int e, Vec2 p, double& xi, double& eta, double tol = 1e-10) const;

    /// Canonical edge enumeration shared with the FE spaces and refinement:
    /// sorted vertex pairs in first-appearance order (element order, local
    /// edge order within an element).
    struct EdgeData {
        std::vector<std::pair<int, int>> edges;            ///< sorted pairs
        std::vector<std::array<int, 4>> element_edges;     ///< per element
    };
    const EdgeData& edge_data() const { return edge_data_; }

    /// 1->4 uniform refinement. New vertices are ordered [original vertices,
    /// edge midpoints (edge order), quad centers (element order)]; boundary
    /// tags are inherited.
    SimMesh refine_uniform() const;
    /// Split every quad along its shorter diagonal (ties by lower vertex
    /// index pair); triangles pass through. Boundary tags are inherited.
    SimMesh split_quads_to_tris() const;

    /// Assign boundary tags via a geometric classifier on edge endpoints.
    void tag_boundary(const std::function<int(Vec2, Vec2)>& classify);

    /// Bounding box.
    Vec2 bbox_min() const { return bb_min_; }
    Vec2 bbox_max() const { return bb_max_; }

  private:
    std::vector<Vec2> vertices_;
    std::vector<Element> elements_;
    std::vector<BoundaryEdge> boundary_;
    EdgeData edge_data_;
    Vec2 bb_min_, bb_max_;

    void build_topology();
};

/// Uniform-bucket spatial hash over element bounding boxes; bucket size
/// defaults to the mesh size.
class SpatialHash {
  public:
    SpatialHash() = default;
    explicit SpatialHash(const SimMesh& mesh, double cell_size = 0.0);
    const std::vector<int>& candidates(Vec2 p) const;

  private:
    double cell_ = 1.0;
    Vec2 origin_;
    std::unordered_map<long long, std::vector<int>> buckets_;
    std::vector<int> empty_;
    long long key(int ix, int iy) const { return (static_cast<long long>(ix) << 32) ^ (iy & 0xffffffffLL); }
};

/// Locate the element containing p (reference coordinates within 1e-10, with
/// a 1e-8 relaxation pass for points on element boundaries). std::nullopt if
/// p lies outside the mesh.
std::optional<LocalCoords> locate_point(const SimMesh& mesh, const SpatialHash& hash, Vec2 p);

/// Closest point on the domain boundary (used to pull out-of-domain
/// semi-Lagrangian/particle queries back inside).
Vec2 closest_boundary_point(const SimMesh& mesh, Vec2 p);

/// Wavefront OBJ loader (v/f records, z dropped, 1-based indices).
SimMesh load_obj(const std::string& path);
/// Minimal ASCII format: header "nslab-mesh 1", then "<nv> <ne>", nv vertex
/// lines "x y", ne element lines "<count> i j k [l]" (0-based).
SimMesh load_minimal(const std::string& path);
void save_minimal(const SimMesh& mesh, const std::string& path);
/// Dispatch on extension: .obj -> OBJ, anything else -> minimal format.
SimMesh load_mesh(const std::string& path);

}  // namespace nslab
