/// @file meshgen.hpp
/// @brief Internal mesh generators: structured boxes (quad/tri) and a
///        butterfly (O-grid) block layout around a circular hole embedded in
///        a matching regular grid, used for the obstacle benchmarks.

#pragma once

#include "nslab/mesh.hpp"

namespace nslab {

/// Structured quad mesh of [lo, hi] with nx x ny cells.
SimMesh make_box_quads(Vec2 lo, Vec2 hi, int nx, int ny);
/// Same grid split into triangles (shorter diagonal rule).
SimMesh make_box_tris(Vec2 lo, Vec2 hi, int nx, int ny);

/// Structured-connectivity quad mesh whose interior vertices are displaced by
/// a deterministic uniform offset in [-amp, amp] x cell size per axis
/// (0 <= amp <= 0.3 keeps every quad strictly convex). Perfectly uniform
/// lattices cancel leading error terms and overstate convergence orders;
/// these meshes measure the generic rate. Boundary vertices stay exact.
SimMesh make_box_quads_jittered(Vec2 lo, Vec2 hi, int nx, int ny, double amp, unsigned seed);
/// Jittered grid split into triangles (shorter diagonal rule).
SimMesh make_box_tris_jittered(Vec2 lo, Vec2 hi, int nx, int ny, double amp, unsigned seed);

struct CircleBoxParams {
    Vec2 lo, hi;          ///< outer rectangle
    int nx = 0, ny = 0;   ///< background grid resolution
    Vec2 center;          ///< circle center (strictly inside)
    double radius = 0.0;
    double box_halfwidth = 0.0;  ///< half-width of the butterfly patch box;
                                 ///< snapped to grid lines internally
};

/// Rectangle with a circular hole: a background regular grid outside an
/// axis-aligned patch box, and radially graded butterfly rings between the
/// circle and the patch-box perimeter inside it. Circle vertices lie exactly
/// on the circle. Quads; call split_quads_to_tris() for triangles.
SimMesh make_circle_box_quads(const CircleBoxParams& p);

}  // namespace nslab
