#include "nslab/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace nslab {

double Vec2::norm() const { return std::sqrt(x * x + y * y); }

namespace {

double signed_area(const std::vector<Vec2>& verts, const Element& el) {
    double a = 0.0;
    for (int k = 0; k < el.nv; ++k) {
        Vec2 p = verts[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
        Vec2 q = verts[static_cast<size_t>(el.v[static_cast<size_t>((k + 1) % el.nv)])];
        a += p.cross(q);
    }
    return 0.5 * a;
}

}  // namespace

SimMesh::SimMesh(std::vector<Vec2> vertices, std::vector<Element> elements)
    : vertices_(std::move(vertices)), elements_(std::move(elements)) {
    if (vertices_.empty() || elements_.empty())
        throw std::invalid_argument("SimMesh: empty vertex or element list");
    const int nv = num_vertices();
    double scale = 0.0;
    for (const Vec2& v : vertices_) scale = std::max(scale, std::abs(v.x) + std::abs(v.y));
    scale = std::max(scale, 1e-12);
    for (size_t e = 0; e < elements_.size(); ++e) {
        Element& el = elements_[e];
        if (el.nv != 3 && el.nv != 4)
            throw std::invalid_argument("SimMesh: element " + std::to_string(e) +
                                        " has unsupported vertex count " + std::to_string(el.nv));
        for (int k = 0; k < el.nv; ++k) {
            if (el.v[static_cast<size_t>(k)] < 0 || el.v[static_cast<size_t>(k)] >= nv)
                throw std::invalid_argument("SimMesh: element " + std::to_string(e) +
                                            " references vertex out of range");
        }
        double a = signed_area(vertices_, el);
        if (a < 0) {  // repair orientation to CCW
            std::reverse(el.v.begin(), el.v.begin() + el.nv);
            a = -a;
        }
        if (a <= 1e-14 * scale * scale)
            throw std::invalid_argument("SimMesh: element " + std::to_string(e) +
                                        " has zero or negative area");
    }
    build_topology();
}

void SimMesh::build_topology() {
    // Canonical edge enumeration + boundary extraction.
    edge_data_.edges.clear();
    edge_data_.element_edges.assign(elements_.size(), {-1, -1, -1, -1});
    std::map<std::pair<int, int>, int> edge_index;
    // For boundary detection remember, per edge, how many elements share it
    // and the (element, directed pair) of the first incidence.
    struct Incidence { int count = 0; int element = -1; int a = -1, b = -1; };
    std::map<std::pair<int, int>, Incidence> incid;

    for (size_t e = 0; e < elements_.size(); ++e) {
        const Element& el = elements_[e];
        for (int k = 0; k < el.nv; ++k) {
            int a = el.v[static_cast<size_t>(k)];
            int b = el.v[static_cast<size_t>((k + 1) % el.nv)];
            std::pair<int, int> key = std::minmax(a, b);
            auto it = edge_index.find(key);
            int idx;
            if (it == edge_index.end()) {
                idx = static_cast<int>(edge_data_.edges.size());
                edge_index.emplace(key, idx);
                edge_data_.edges.push_back(key);
            } else {
                idx = it->second;
            }
            edge_data_.element_edges[e][static_cast<size_t>(k)] = idx;
            Incidence& inc = incid[key];
            if (inc.count == 0) { inc.element = static_cast<int>(e); inc.a = a; inc.b = b; }
            ++inc.count;
        }
    }
    boundary_.clear();
    for (const auto& [key, inc] : incid) {
        if (inc.count == 1)
            boundary_.push_back({inc.a, inc.b, inc.element, 0});
        else if (inc.count > 2)
            throw std::invalid_argument("SimMesh: non-manifold edge (" +
                                        std::to_string(key.first) + "," +
                                        std::to_string(key.second) + ")");
    }
    bb_min_ = bb_max_ = vertices_[0];
    for (const Vec2& v : vertices_) {
        bb_min_.x = std::min(bb_min_.x, v.x);
        bb_min_.y = std::min(bb_min_.y, v.y);
        bb_max_.x = std::max(bb_max_.x, v.x);
        bb_max_.y = std::max(bb_max_.y, v.y);
    }
}

double SimMesh::mesh_size() const {
    double h = 0.0;
    for (const Element& el : elements_) {
        for (int k = 0; k < el.nv; ++k) {
            Vec2 d = vertices_[static_cast<size_t>(el.v[static_cast<size_t>((k + 1) % el.nv)])] -
                     vertices_[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
            h = std::max(h, d.norm());
        }
    }
    return h;
}

double SimMesh::element_area(int e) const { return signed_area(vertices_, elements_[static_cast<size_t>(e)]); }

Vec2 SimMesh::element_centroid(int e) const {
    const Element& el = elements_[static_cast<size_t>(e)];
    Vec2 c;
    for (int k = 0; k < el.nv; ++k) c += vertices_[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
    return c * (1.0 / el.nv);
}

double SimMesh::scaled_jacobian(int e) const {
    const Element& el = elements_[static_cast<size_t>(e)];
    double q = 2.0;
    for (int k = 0; k < el.nv; ++k) {
        Vec2 vk = vertices_[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
        Vec2 e1 = vertices_[static_cast<size_t>(el.v[static_cast<size_t>((k + 1) % el.nv)])] - vk;
        Vec2 e2 = vertices_[static_cast<size_t>(el.v[static_cast<size_t>((k + el.nv - 1) % el.nv)])] - vk;
        double denom = e1.norm() * e2.norm();
        double s = denom > 0 ? e1.cross(e2) / denom : 0.0;
        q = std::min(q, s);
    }
    if (el.nv == 3) q *= 2.0 / std::sqrt(3.0);  // equilateral -> 1
    return q;
}

Vec2 SimMesh::map_to_physical(int e, double xi, double eta) const {
    const Element& el = elements_[static_cast<size_t>(e)];
    auto P = [&](int k) { return vertices_[static_cast<size_t>(el.v[static_cast<size_t>(k)])]; };
    if (el.nv == 3)
        return P(0) * (1.0 - xi - eta) + P(1) * xi + P(2) * eta;
    double n0 = (1 - xi) * (1 - eta), n1 = xi * (1 - eta), n2 = xi * eta, n3 = (1 - xi) * eta;
    return P(0) * n0 + P(1) * n1 + P(2) * n2 + P(3) * n3;
}

bool SimMesh::invert_map(int e, Vec2 p, double& xi, double& eta, double tol) const {
    const Element& el = elements_[static_cast<size_t>(e)];
    auto P = [&](int k) { return vertices_[static_cast<size_t>(el.v[static_cast<size_t>(k)])]; };
    if (el.nv == 3) {
        Vec2 d1 = P(1) - P(0), d2 = P(2) - P(0), q = p - P(0);
        double det = d1.cross(d2);
        if (det == 0.0) return false;
        xi = q.cross(d2) / det;
        eta = d1.cross(q) / det;
        return xi >= -tol && eta >= -tol && xi + eta <= 1.0 + tol;
    }
    // Bilinear quad: x = a0 + a1 xi + a2 eta + a3 xi eta, quadratic in eta.
    Vec2 a0 = P(0), a1 = P(1) - P(0), a2 = P(3) - P(0), a3 = P(0) - P(1) + P(2) - P(3);
    Vec2 q = p - a0;
    double scale2 = std::max({a1.dot(a1), a2.dot(a2), 1e-30});
    double A = a2.cross(a3);
    double B = a2.cross(a1) - q.cross(a3);
    double C = -q.cross(a1);
    double best_err = 1e30;
    bool found = false;
    auto try_eta = [&](double et) {
        Vec2 denom = a1 + a3 * et;
        double dn = denom.dot(denom);
        if (dn < 1e-30 * scale2) return;
        double x = (q - a2 * et).dot(denom) / dn;
        Vec2 r = map_to_physical(e, x, et) - p;
        double err = r.dot(r);
        if (err < best_err) { best_err = err; xi = x; eta = et; found = true; }
    };
    if (std::abs(A) < 1e-14 * scale2) {
        if (std::abs(B) > 1e-30) try_eta(-C / B);
    } else {
        double disc = B * B - 4 * A * C;
        if (disc >= -1e-12 * scale2 * scale2) {
            double sq = std::sqrt(std::max(disc, 0.0));
            try_eta((-B + sq) / (2 * A));
            try_eta((-B - sq) / (2 * A));
        }
    }
    // Newton fallback for degenerate/roundoff cases.
    if (!found || best_err > 1e-20 * scale2) {
        double x = 0.5, et = 0.5;
        for (int it = 0; it < 30; ++it) {
            Vec2 r = map_to_physical(e, x, et) - p;
            if (r.dot(r) < 1e-28 * scale2) break;
            Vec2 jx = a1 + a3 * et, je = a2 + a3 * x;
            double det = jx.cross(je);
            if (std::abs(det) < 1e-30) break;
            double dx = (r.cross(je)) / det, de = (jx.cross(r)) / det;
            x -= dx;
            et -= de;
        }
        Vec2 r = map_to_physical(e, x, et) - p;
        if (r.dot(r) < best_err) { xi = x; eta = et; found = true; best_err = r.dot(r); }
    }
    if (!found) return false;
    if (best_err > 1e-16 * scale2) return false;  // preimage not in this element's plane patch
    return xi >= -tol && xi <= 1.0 + tol && eta >= -tol && eta <= 1.0 + tol;
}

SimMesh SimMesh::refine_uniform() const {
    std::vector<Vec2> verts = vertices_;
    const int nv = num_vertices();
    const int ne = static_cast<int>(edge_data_.edges.size());
    verts.reserve(static_cast<size_t>(nv + ne));
    for (const auto& [a, b] : edge_data_.edges)
        verts.push_back((vertices_[static_cast<size_t>(a)] + vertices_[static_cast<size_t>(b)]) * 0.5);
    // Quad centers appended after all midpoints, in element order.
    std::vector<int> center_of(elements_.size(), -1);
    for (size_t e = 0; e < elements_.size(); ++e) {
        if (elements_[e].nv == 4) {
            center_of[e] = static_cast<int>(verts.size());
            verts.push_back(element_centroid(static_cast<int>(e)));
        }
    }
    std::vector<Element> elems;
    elems.reserve(elements_.size() * 4);
    for (size_t e = 0; e < elements_.size(); ++e) {
        const Element& el = elements_[e];
        const auto& ee = edge_data_.element_edges[e];
        auto mid = [&](int k) { return nv + ee[static_cast<size_t>(k)]; };
        if (el.nv == 3) {
            int v0 = el.v[0], v1 = el.v[1], v2 = el.v[2];
            int m01 = mid(0), m12 = mid(1), m20 = mid(2);
            elems.push_back({{v0, m01, m20, -1}, 3});
            elems.push_back({{v1, m12, m01, -1}, 3});
            elems.push_back({{v2, m20, m12, -1}, 3});
            elems.push_back({{m01, m12, m20, -1}, 3});
        } else {
            int v0 = el.v[0], v1 = el.v[1], v2 = el.v[2], v3 = el.v[3];
            int m01 = mid(0), m12 = mid(1), m23 = mid(2), m30 = mid(3);
            int c = center_of[e];
            elems.push_back({{v0, m01, c, m30}, 4});
            elems.push_back({{m01, v1, m12, c}, 4});
            elems.push_back({{c, m12, v2, m23}, 4});
            elems.push_back({{m30, c, m23, v3}, 4});
        }
    }
    SimMesh fine(std::move(verts), std::move(elems));
    // Tag inheritance: a child boundary edge joins a parent endpoint with the
    // parent edge's midpoint vertex (index nv + parent edge index).
    std::map<std::pair<int, int>, int> parent_tag;
    for (const BoundaryEdge& be : boundary_)
        parent_tag[std::minmax(be.a, be.b)] = be.tag;
    for (BoundaryEdge& be : fine.boundary_) {
        int lo = std::min(be.a, be.b), hi = std::max(be.a, be.b);
        // exactly one endpoint is a midpoint vertex for inherited edges
        int midv = hi;  // midpoints have larger indices than originals
        if (midv < nv) continue;
        int pedge = midv - nv;
        if (pedge >= ne) continue;  // touches a quad center: interior, skip
        auto it = parent_tag.find(edge_data_.edges[static_cast<size_t>(pedge)]);
        if (it != parent_tag.end() &&
            (lo == edge_data_.edges[static_cast<size_t>(pedge)].first ||
             lo == edge_data_.edges[static_cast<size_t>(pedge)].second))
            be.tag = it->second;
    }
    return fine;
}

SimMesh SimMesh::split_quads_to_tris() const {
    std::vector<Element> elems;
    elems.reserve(elements_.size() * 2);
    for (const Element& el : elements_) {
        if (el.nv == 3) {
            elems.push_back(el);
            continue;
        }
        int v0 = el.v[0], v1 = el.v[1], v2 = el.v[2], v3 = el.v[3];
        double d02 = (vertices_[static_cast<size_t>(v2)] - vertices_[static_cast<size_t>(v0)]).norm();
        double d13 = (vertices_[static_cast<size_t>(v3)] - vertices_[static_cast<size_t>(v1)]).norm();
        bool use02;
        double scale = std::max(d02, d13);
        if (std::abs(d02 - d13) <= 1e-12 * scale) {
            use02 = std::minmax(v0, v2) < std::minmax(v1, v3);  // lower index pair
        } else {
            use02 = d02 < d13;
        }
        if (use02) {
            elems.push_back({{v0, v1, v2, -1}, 3});
            elems.push_back({{v0, v2, v3, -1}, 3});
        } else {
            elems.push_back({{v0, v1, v3, -1}, 3});
            elems.push_back({{v1, v2, v3, -1}, 3});
        }
    }
    SimMesh tri(vertices_, std::move(elems));
    std::map<std::pair<int, int>, int> parent_tag;
    for (const BoundaryEdge& be : boundary_)
        parent_tag[std::minmax(be.a, be.b)] = be.tag;
    for (BoundaryEdge& be : tri.boundary_) {
        auto it = parent_tag.find(std::minmax(be.a, be.b));
        if (it != parent_tag.end()) be.tag = it->second;
    }
    return tri;
}

void SimMesh::tag_boundary(const std::function<int(Vec2, Vec2)>& classify) {
    for (BoundaryEdge& be : boundary_)
        be.tag = classify(vertices_[static_cast<size_t>(be.a)], vertices_[static_cast<size_t>(be.b)]);
}

// ------------------------------------------------------------ spatial hash

SpatialHash::SpatialHash(const SimMesh& mesh, double cell_size) {
    cell_ = cell_size > 0 ? cell_size : std::max(mesh.mesh_size(), 1e-12);
    origin_ = mesh.bbox_min();
    for (int e = 0; e < mesh.num_elements(); ++e) {
        const Element& el = mesh.elements()[static_cast<size_t>(e)];
        Vec2 lo = mesh.vertices()[static_cast<size_t>(el.v[0])], hi = lo;
        for (int k = 1; k < el.nv; ++k) {
            Vec2 v = mesh.vertices()[static_cast<size_t>(el.v[static_cast<size_t>(k)])];
            lo.x = std::min(lo.x, v.x);
            lo.y = std::min(lo.y, v.y);
            hi.x = std::max(hi.x, v.x);
            hi.y = std::max(hi.y, v.y);
        }
        int ix0 = static_cast<int>(std::floor((lo.x - origin_.x) / cell_));
        int iy0 = static_cast<int>(std::floor((lo.y - origin_.y) / cell_));
        int ix1 = static_cast<int>(std::floor((hi.x - origin_.x) / cell_));
        int iy1 = static_cast<int>(std::floor((hi.y - origin_.y) / cell_));
        for (int ix = ix0; ix <= ix1; ++ix)
            for (int iy = iy0; iy <= iy1; ++iy)
                buckets_[key(ix, iy)].push_back(e);
    }
}

const std::vector<int>& SpatialHash::candidates(Vec2 p) const {
    int ix = static_cast<int>(std::floor((p.x - origin_.x) / cell_));
    int iy = static_cast<int>(std::floor((p.y - origin_.y) / cell_));
    auto it = buckets_.find(key(ix, iy));
    return it == buckets_.end() ? empty_ : it->second;
}

std::optional<LocalCoords> locate_point(const SimMesh& mesh, const SpatialHash& hash, Vec2 p) {
    const std::vector<int>& cand = hash.candidates(p);
    double xi, eta;
    for (double tol : {1e-10, 1e-8}) {  // strict pass, then edge-roundoff pass
        for (int e : cand) {
            if (mesh.invert_map(e, p, xi, eta, tol))
                return LocalCoords{e, xi, eta};
        }
    }
    return std::nullopt;
}

Vec2 closest_boundary_point(const SimMesh& mesh, Vec2 p) {
    double best = 1e300;
    Vec2 result = p;
    for (const BoundaryEdge& be : mesh.boundary_edges()) {
        Vec2 a = mesh.vertices()[static_cast<size_t>(be.a)];
        Vec2 b = mesh.vertices()[static_cast<size_t>(be.b)];
        Vec2 d = b - a;
        double len2 = d.dot(d);
        double t = len2 > 0 ? std::clamp((p - a).dot(d) / len2, 0.0, 1.0) : 0.0;
        Vec2 q = a + d * t;
        double dist = (p - q).dot(p - q);
        if (dist < best) { best = dist; result = q; }
    }
    return result;
}

// -------------------------------------------------------------------- I/O

SimMesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_obj: cannot open " + path);
    std::vector<Vec2> verts;
    std::vector<Element> elems;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string tok;
        if (!(ss >> tok)) continue;
        if (tok == "v") {
            double x, y;
            if (!(ss >> x >> y))
                throw std::runtime_error("load_obj: bad vertex at line " + std::to_string(lineno));
            verts.push_back({x, y});
        } else if (tok == "f") {
            Element el;
            int count = 0;
            std::string field;
            while (ss >> field) {
                size_t slash = field.find('/');
                int idx = std::stoi(slash == std::string::npos ? field : field.substr(0, slash));
                if (idx < 0) idx = static_cast<int>(verts.size()) + idx + 1;  // relative indices
                if (count >= 4)
                    throw std::runtime_error("load_obj: face with more than 4 vertices at line " +
                                             std::to_string(lineno));
                el.v[static_cast<size_t>(count++)] = idx - 1;
            }
            if (count < 3)
                throw std::runtime_error("load_obj: face with fewer than 3 vertices at line " +
                                         std::to_string(lineno));
            el.nv = count;
            elems.push_back(el);
        }
    }
    return SimMesh(std::move(verts), std::move(elems));
}

SimMesh load_minimal(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_minimal: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "nslab-mesh" || version != 1)
        throw std::runtime_error("load_minimal: bad header in " + path +
                                 " (expected 'nslab-mesh 1')");
    int nv = 0, ne = 0;
    if (!(in >> nv >> ne) || nv <= 0 || ne <= 0)
        throw std::runtime_error("load_minimal: bad counts in " + path);
    std::vector<Vec2> verts(static_cast<size_t>(nv));
    for (int i = 0; i < nv; ++i)
        if (!(in >> verts[static_cast<size_t>(i)].x >> verts[static_cast<size_t>(i)].y))
            throw std::runtime_error("load_minimal: bad vertex " + std::to_string(i));
    std::vector<Element> elems(static_cast<size_t>(ne));
    for (int e = 0; e < ne; ++e) {
        int count = 0;
        if (!(in >> count) || (count != 3 && count != 4))
            throw std::runtime_error("load_minimal: element " + std::to_string(e) +
                                     " has unsupported vertex count");
        elems[static_cast<size_t>(e)].nv = count;
        for (int k = 0; k < count; ++k)
            if (!(in >> elems[static_cast<size_t>(e)].v[static_cast<size_t>(k)]))
                throw std::runtime_error("load_minimal: bad element " + std::to_string(e));
    }
    return SimMesh(std::move(verts), std::move(elems));
}

void save_minimal(const SimMesh& mesh, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_minimal: cannot open " + path);
    out << "nslab-mesh 1\n" << mesh.num_vertices() << " " << mesh.num_elements() << "\n";
    out.precision(17);
    for (const Vec2& v : mesh.vertices()) out << v.x << " " << v.y << "\n";
    for (const Element& el : mesh.elements()) {
        out << el.nv;
        for (int k = 0; k < el.nv; ++k) out << " " << el.v[static_cast<size_t>(k)];
        out << "\n";
    }
}

SimMesh load_mesh(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".obj") return load_obj(path);
    return load_minimal(path);
}

}  // namespace nslab
