#include "nslab/meshgen.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <vector>

namespace nslab {

SimMesh make_box_quads(Vec2 lo, Vec2 hi, int nx, int ny) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("make_box_quads: need nx, ny >= 1");
    std::vector<Vec2> verts;
    verts.reserve(static_cast<size_t>((nx + 1) * (ny + 1)));
    const double hx = (hi.x - lo.x) / nx, hy = (hi.y - lo.y) / ny;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i)
            verts.push_back({lo.x + i * hx, lo.y + j * hy});
    auto vid = [&](int i, int j) { return j * (nx + 1) + i; };
    std::vector<Element> elems;
    elems.reserve(static_cast<size_t>(nx * ny));
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            elems.push_back({{vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)}, 4});
    return SimMesh(std::move(verts), std::move(elems));
}

SimMesh make_box_tris(Vec2 lo, Vec2 hi, int nx, int ny) {
    return make_box_quads(lo, hi, nx, ny).split_quads_to_tris();
}

SimMesh make_box_quads_jittered(Vec2 lo, Vec2 hi, int nx, int ny, double amp, unsigned seed) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("make_box_quads_jittered: need nx, ny >= 1");
    if (amp < 0.0 || amp > 0.3)
        throw std::invalid_argument("make_box_quads_jittered: amplitude must be in [0, 0.3]");
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> offset(-amp, amp);
    std::vector<Vec2> verts;
    verts.reserve(static_cast<size_t>((nx + 1) * (ny + 1)));
    const double hx = (hi.x - lo.x) / nx, hy = (hi.y - lo.y) / ny;
    for (int j = 0; j <= ny; ++j)
        for (int i = 0; i <= nx; ++i) {
            // Draw for every vertex so the sequence is independent of which
            // vertices are interior.
            const double dx = offset(rng), dy = offset(rng);
            const bool interior = i > 0 && i < nx && j > 0 && j < ny;
            verts.push_back({lo.x + i * hx + (interior ? dx * hx : 0.0),
                             lo.y + j * hy + (interior ? dy * hy : 0.0)});
        }
    auto vid = [&](int i, int j) { return j * (nx + 1) + i; };
    std::vector<Element> elems;
    elems.reserve(static_cast<size_t>(nx * ny));
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i)
            elems.push_back({{vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)}, 4});
    return SimMesh(std::move(verts), std::move(elems));
}

SimMesh make_box_tris_jittered(Vec2 lo, Vec2 hi, int nx, int ny, double amp, unsigned seed) {
    return make_box_quads_jittered(lo, hi, nx, ny, amp, seed).split_quads_to_tris();
}

SimMesh make_circle_box_quads(const CircleBoxParams& p) {
    if (p.nx < 4 || p.ny < 4)
        throw std::invalid_argument("make_circle_box_quads: grid too coarse");
    if (p.radius <= 0)
        throw std::invalid_argument("make_circle_box_quads: non-positive radius");
    const double hx = (p.hi.x - p.lo.x) / p.nx, hy = (p.hi.y - p.lo.y) / p.ny;

    // Snap the butterfly patch box to grid lines, keeping the circle inside
    // with at least one cell of clearance to the domain boundary.
    auto snap = [](double v, double origin, double h, bool up) {
        double k = (v - origin) / h;
        return up ? static_cast<int>(std::ceil(k - 1e-9)) : static_cast<int>(std::floor(k + 1e-9));
    };
    int ilo = snap(p.center.x - p.box_halfwidth, p.lo.x, hx, false);
    int ihi = snap(p.center.x + p.box_halfwidth, p.lo.x, hx, true);
    int jlo = snap(p.center.y - p.box_halfwidth, p.lo.y, hy, false);
    int jhi = snap(p.center.y + p.box_halfwidth, p.lo.y, hy, true);
    ilo = std::max(ilo, 1); jlo = std::max(jlo, 1);
    ihi = std::min(ihi, p.nx - 1); jhi = std::min(jhi, p.ny - 1);
    if (ihi - ilo < 2 || jhi - jlo < 2)
        throw std::invalid_argument("make_circle_box_quads: patch box collapsed");
    const double bx0 = p.lo.x + ilo * hx, bx1 = p.lo.x + ihi * hx;
    const double by0 = p.lo.y + jlo * hy, by1 = p.lo.y + jhi * hy;
    if (p.center.x - p.radius <= bx0 || p.center.x + p.radius >= bx1 ||
        p.center.y - p.radius <= by0 || p.center.y + p.radius >= by1)
        throw std::invalid_argument("make_circle_box_quads: circle does not fit in patch box");

    std::vector<Vec2> verts;
    std::vector<Element> elems;
    // Background grid vertices (all of them; unused ones are pruned below).
    auto vid = [&](int i, int j) { return j * (p.nx + 1) + i; };
    for (int j = 0; j <= p.ny; ++j)
        for (int i = 0; i <= p.nx; ++i)
            verts.push_back({p.lo.x + i * hx, p.lo.y + j * hy});
    for (int j = 0; j < p.ny; ++j)
        for (int i = 0; i < p.nx; ++i) {
            if (i >= ilo && i < ihi && j >= jlo && j < jhi) continue;  // patch box
            elems.push_back({{vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)}, 4});
        }

    // Patch-box perimeter as a CCW vertex loop starting at (ilo, jlo).
    std::vector<int> per;
    for (int i = ilo; i < ihi; ++i) per.push_back(vid(i, jlo));
    for (int j = jlo; j < jhi; ++j) per.push_back(vid(ihi, j));
    for (int i = ihi; i > ilo; --i) per.push_back(vid(i, jhi));
    for (int j = jhi; j > jlo; --j) per.push_back(vid(ilo, j));
    const int nper = static_cast<int>(per.size());

    // Circle ring: one vertex per perimeter vertex, at the angle under which
    // the perimeter vertex is seen from the circle center (keeps radial rays
    // from crossing; the box is star-shaped w.r.t. the center).
    std::vector<double> theta(static_cast<size_t>(nper));
    std::vector<double> ray_len(static_cast<size_t>(nper));
    for (int k = 0; k < nper; ++k) {
        Vec2 d = verts[static_cast<size_t>(per[static_cast<size_t>(k)])] - p.center;
        theta[static_cast<size_t>(k)] = std::atan2(d.y, d.x);
        ray_len[static_cast<size_t>(k)] = d.norm() - p.radius;
    }

    // Radial layers: geometric grading from the circle-arc spacing out to the
    // background spacing.
    const double a0 = 2.0 * M_PI * p.radius / nper;
    double dbar = 0.0;
    for (double d : ray_len) dbar += d;
    dbar /= nper;
    const double rho = 1.3;
    int nr = std::max(2, static_cast<int>(std::ceil(
                 std::log(1.0 + dbar * (rho - 1.0) / a0) / std::log(rho))));
    std::vector<double> tau(static_cast<size_t>(nr) + 1);
    for (int k = 0; k <= nr; ++k)
        tau[static_cast<size_t>(k)] = (std::pow(rho, k) - 1.0) / (std::pow(rho, nr) - 1.0);

    // Ring vertices: ring 0 on the circle, ring nr = perimeter (reused ids).
    std::vector<std::vector<int>> ring(static_cast<size_t>(nr) + 1,
                                       std::vector<int>(static_cast<size_t>(nper)));
    for (int k = 0; k < nper; ++k) {
        Vec2 inner = p.center + Vec2{std::cos(theta[static_cast<size_t>(k)]),
                                     std::sin(theta[static_cast<size_t>(k)])} * p.radius;
        Vec2 outer = verts[static_cast<size_t>(per[static_cast<size_t>(k)])];
        ring[static_cast<size_t>(nr)][static_cast<size_t>(k)] = per[static_cast<size_t>(k)];
        for (int l = 0; l < nr; ++l) {
            Vec2 q = inner + (outer - inner) * tau[static_cast<size_t>(l)];
            ring[static_cast<size_t>(l)][static_cast<size_t>(k)] = static_cast<int>(verts.size());
            verts.push_back(q);
        }
    }
    for (int l = 0; l < nr; ++l) {
        for (int k = 0; k < nper; ++k) {
            int k1 = (k + 1) % nper;
            elems.push_back({{ring[static_cast<size_t>(l)][static_cast<size_t>(k)],
                              ring[static_cast<size_t>(l) + 1][static_cast<size_t>(k)],
                              ring[static_cast<size_t>(l) + 1][static_cast<size_t>(k1)],
                              ring[static_cast<size_t>(l)][static_cast<size_t>(k1)]}, 4});
        }
    }

    // Prune unused vertices (grid vertices strictly inside the patch box).
    std::vector<int> remap(verts.size(), -1);
    for (const Element& el : elems)
        for (int k = 0; k < el.nv; ++k) remap[static_cast<size_t>(el.v[static_cast<size_t>(k)])] = 0;
    std::vector<Vec2> vkeep;
    vkeep.reserve(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) {
        if (remap[i] == 0) {
            remap[i] = static_cast<int>(vkeep.size());
            vkeep.push_back(verts[i]);
        }
    }
    for (Element& el : elems)
        for (int k = 0; k < el.nv; ++k)
            el.v[static_cast<size_t>(k)] = remap[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
    return SimMesh(std::move(vkeep), std::move(elems));
}

}  // namespace nslab
