#pragma once

// Structured fixture meshes and runtime topology edits (tet excision and
// face cutting). These produce the meshes that drive remesh events; they
// are not general-purpose meshing tools.

#include <functional>
#include <numeric>
#include <utility>
#include <vector>

#include "licrom/mesh.hpp"

namespace licrom {

struct GridSpec {
    Eigen::Vector3i cells{4, 4, 4};
    Vec3 lo = Vec3::Constant(-0.5);
    Vec3 hi = Vec3::Constant(0.5);
    // Reflect the cell triangulation for cells with center x < 0. Keeps the
    // mesh conforming and makes both diagonals x = +-z available as faces.
    bool mirror_negative_x = false;
};

// Box split into cells, each cut into the 6 Kuhn tets sharing the cell's
// main diagonal. Conforming, all tets positively oriented.
inline TetMesh box_grid(const GridSpec &spec, double density = 1000.0) {
    const int nx = spec.cells.x(), ny = spec.cells.y(), nz = spec.cells.z();
    if (nx < 1 || ny < 1 || nz < 1) throw ValidationError("grid needs at least one cell per axis");
    auto vid = [&](int i, int j, int k) { return i + (nx + 1) * (j + (ny + 1) * k); };
    std::vector<Vec3> verts;
    verts.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1) * (nz + 1)));
    for (int k = 0; k <= nz; ++k)
        for (int j = 0; j <= ny; ++j)
            for (int i = 0; i <= nx; ++i) {
                const Vec3 f(double(i) / nx, double(j) / ny, double(k) / nz);
                verts.push_back(spec.lo + f.cwiseProduct(spec.hi - spec.lo));
            }
    static constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    std::vector<Tet> tets;
    tets.reserve(static_cast<std::size_t>(nx * ny * nz * 6));
    for (int k = 0; k < nz; ++k)
        for (int j = 0; j < ny; ++j)
            for (int i = 0; i < nx; ++i) {
                const double cx = spec.lo.x() + (i + 0.5) * (spec.hi.x() - spec.lo.x()) / nx;
                const bool mirror = spec.mirror_negative_x && cx < 0.0;
                auto corner = [&](int a, int b, int c) { return vid(i + (mirror ? 1 - a : a), j + b, k + c); };
                for (const auto &p : perms) {
                    int off[3] = {0, 0, 0};
                    Tet t;
                    t[0] = corner(0, 0, 0);
                    for (int s = 0; s < 3; ++s) {
                        off[p[s]] = 1;
                        t[static_cast<std::size_t>(s) + 1] = corner(off[0], off[1], off[2]);
                    }
                    const auto &v = verts;
                    if (signed_tet_volume(v[static_cast<std::size_t>(t[0])], v[static_cast<std::size_t>(t[1])],
                                          v[static_cast<std::size_t>(t[2])], v[static_cast<std::size_t>(t[3])]) < 0)
                        std::swap(t[2], t[3]);
                    tets.push_back(t);
                }
            }
    return TetMesh(std::move(verts), std::move(tets), density);
}

// Member of the cube-to-sphere family inside the [-0.5, 0.5]^3 bounding
// cube: blend 0 is the cube, blend 1 the inscribed ball.
inline TetMesh cube_to_sphere(int cells_per_axis, double blend, double density = 1000.0) {
    GridSpec g;
    g.cells = Eigen::Vector3i::Constant(cells_per_axis);
    const TetMesh cube = box_grid(g, density);
    std::vector<Vec3> verts = cube.vertices();
    for (auto &x : verts) {
        const double n2 = x.norm();
        if (n2 == 0.0) continue;
        const double ninf = x.cwiseAbs().maxCoeff();
        x = (1.0 - blend) * x + blend * x * (ninf / n2);
    }
    return TetMesh(std::move(verts), cube.tets(), density);
}

struct ExcisionResult {
    TetMesh mesh;
    double removed_volume = 0.0;
    std::vector<int> old_to_new; // -1 for vertices that disappeared
};

// Drops every tet whose centroid satisfies `inside`, then drops vertices no
// longer referenced. Remaining vertices keep their relative order.
inline ExcisionResult excise(const TetMesh &mesh, const std::function<bool(const Vec3 &)> &inside) {
    std::vector<Tet> kept;
    double removed = 0.0;
    for (int t = 0; t < mesh.tet_count(); ++t) {
        const auto &k = mesh.tet(t);
        const Vec3 c = 0.25 * (mesh.vertex(k[0]) + mesh.vertex(k[1]) + mesh.vertex(k[2]) + mesh.vertex(k[3]));
        if (inside(c)) removed += mesh.volume(t);
        else kept.push_back(k);
    }
    std::vector<char> used(static_cast<std::size_t>(mesh.vertex_count()), 0);
    for (const auto &k : kept)
        for (int v : k) used[static_cast<std::size_t>(v)] = 1;
    ExcisionResult out;
    out.old_to_new.assign(used.size(), -1);
    std::vector<Vec3> verts;
    std::vector<int> tags;
    for (int v = 0; v < mesh.vertex_count(); ++v)
        if (used[static_cast<std::size_t>(v)]) {
            out.old_to_new[static_cast<std::size_t>(v)] = static_cast<int>(verts.size());
            verts.push_back(mesh.vertex(v));
            tags.push_back(mesh.dirichlet_tags()[static_cast<std::size_t>(v)]);
        }
    for (auto &k : kept)
        for (auto &v : k) v = out.old_to_new[static_cast<std::size_t>(v)];
    if (kept.empty()) throw ValidationError("excision removed the whole mesh");
    out.mesh = TetMesh(std::move(verts), std::move(kept), mesh.density(), std::move(tags));
    out.removed_volume = removed;
    return out;
}

// Opens every interior face accepted by `cut` by duplicating the vertices on
// it, so the tets on either side stop sharing them. Duplicates keep the
// reference position and tag of their original; originals keep their index
// and duplicates are appended.
inline TetMesh cut_faces(const TetMesh &mesh, const std::function<bool(const std::array<Vec3, 3> &)> &cut) {
    struct Incidence {
        Face key;
        int tet;
    };
    std::vector<Incidence> inc;
    inc.reserve(static_cast<std::size_t>(mesh.tet_count()) * 4);
    for (int t = 0; t < mesh.tet_count(); ++t)
        for (const auto &f : tet_faces(mesh.tet(t))) inc.push_back({sorted_face(f), t});
    std::sort(inc.begin(), inc.end(), [](const Incidence &a, const Incidence &b) {
        return a.key != b.key ? a.key < b.key : a.tet < b.tet;
    });

    // Union-find over (vertex, incident tet) slots: tets stay glued at v
    // through every uncut interior face containing v.
    std::vector<int> parent(static_cast<std::size_t>(mesh.tet_count()) * 4);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
        return a;
    };
    auto slot = [&](int t, int v) {
        const auto &k = mesh.tet(t);
        for (int s = 0; s < 4; ++s)
            if (k[static_cast<std::size_t>(s)] == v) return 4 * t + s;
        return -1;
    };
    for (std::size_t i = 0; i + 1 < inc.size(); ++i) {
        if (inc[i].key != inc[i + 1].key) continue;
        const auto &f = inc[i].key;
        const std::array<Vec3, 3> pts{mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2])};
        if (cut(pts)) continue;
        for (int v : f) {
            const int a = find(slot(inc[i].tet, v)), b = find(slot(inc[i + 1].tet, v));
            if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
        }
    }

    std::vector<Vec3> verts = mesh.vertices();
    std::vector<int> tags = mesh.dirichlet_tags();
    std::vector<Tet> tets = mesh.tets();
    for (int v = 0; v < mesh.vertex_count(); ++v) {
        std::vector<std::pair<int, int>> roots; // root -> assigned index
        for (int t : mesh.tets_of_vertex(v)) {
            const int s = slot(t, v);
            const int r = find(s);
            int assigned = -1;
            for (const auto &[root, idx] : roots)
                if (root == r) assigned = idx;
            if (assigned < 0) {
                assigned = roots.empty() ? v : static_cast<int>(verts.size());
                if (!roots.empty()) {
                    verts.push_back(mesh.vertex(v));
                    tags.push_back(mesh.dirichlet_tags()[static_cast<std::size_t>(v)]);
                }
                roots.emplace_back(r, assigned);
            }
            tets[static_cast<std::size_t>(t)][static_cast<std::size_t>(s % 4)] = assigned;
        }
    }
    return TetMesh(std::move(verts), std::move(tets), mesh.density(), std::move(tags));
}

// Cut along vertical sheets over 2-D segments in the x-z plane: a face is
// cut when all three corners lie on one of the segments (within tol).
struct SegmentCut {
    struct Segment {
        Eigen::Vector2d a, b;
    };
    std::vector<Segment> segments;
    double tol = 1e-9;

    bool operator()(const std::array<Vec3, 3> &face) const {
        for (const auto &s : segments) {
            bool all = true;
            for (const auto &p3 : face) {
                const Eigen::Vector2d p(p3.x(), p3.z());
                const Eigen::Vector2d d = s.b - s.a;
                const double len2 = d.squaredNorm();
                const double tpar = len2 > 0 ? (p - s.a).dot(d) / len2 : 0.0;
                const Eigen::Vector2d q = s.a + std::clamp(tpar, 0.0, 1.0) * d;
                if ((p - q).norm() > tol) {
                    all = false;
                    break;
                }
            }
            if (all) return true;
        }
        return false;
    }
};

// Y-shaped tear for a plate spanning x,z in [-0.5, 0.5]: a stem along x = 0
// from the z = -0.5 edge to the origin, then branches along x = +-z.
// `progress` in [0, 1] grows the tear along that path.
inline SegmentCut y_cut(double progress, double branch_length = 0.25) {
    SegmentCut c;
    const double stem = 0.5, total = stem + branch_length;
    const double reach = std::clamp(progress, 0.0, 1.0) * total;
    const Eigen::Vector2d start(0.0, -0.5);
    if (reach <= 0) return c;
    const double s = std::min(reach, stem);
    c.segments.push_back({start, start + Eigen::Vector2d(0.0, s)});
    if (reach > stem) {
        const double b = (reach - stem) / std::sqrt(2.0);
        c.segments.push_back({Eigen::Vector2d(0, 0), Eigen::Vector2d(b, b)});
        c.segments.push_back({Eigen::Vector2d(0, 0), Eigen::Vector2d(-b, b)});
    }
    return c;
}

} // namespace licrom
