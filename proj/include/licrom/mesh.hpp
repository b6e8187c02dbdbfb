#pragma once

// Reference-domain tetrahedral mesh: positions, connectivity, density and
// per-vertex Dirichlet tags, plus the derived boundary surface and
// vertex->tet adjacency.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>

#include "licrom/errors.hpp"

namespace licrom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Tet = std::array<int, 4>;
using Face = std::array<int, 3>;

inline constexpr int kNoTag = -1;

// Evaluated in extended precision: volumes feed cubature weight bookkeeping
// that must sum to the mesh volume to round-off.
inline double signed_tet_volume(const Vec3 &a, const Vec3 &b, const Vec3 &c, const Vec3 &d) {
    using L = long double;
    L e[3][3];
    for (int r = 0; r < 3; ++r) {
        e[0][r] = L(b[r]) - L(a[r]);
        e[1][r] = L(c[r]) - L(a[r]);
        e[2][r] = L(d[r]) - L(a[r]);
    }
    const L det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0]) +
                  e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
    return static_cast<double>(det / 6.0L);
}

// The four outward faces of a positively oriented tet (a,b,c,d).
inline std::array<Face, 4> tet_faces(const Tet &t) {
    return {Face{t[0], t[2], t[1]}, Face{t[0], t[1], t[3]}, Face{t[0], t[3], t[2]}, Face{t[1], t[2], t[3]}};
}

inline Face sorted_face(Face f) {
    std::sort(f.begin(), f.end());
    return f;
}

class TetMesh {
public:
    TetMesh() = default;

    // Validates and derives surface + adjacency. Throws ValidationError on
    // out-of-range indices, inverted/degenerate tets or mismatched tags.
    TetMesh(std::vector<Vec3> vertices, std::vector<Tet> tets, double density = 1000.0,
            std::vector<int> dirichlet_tags = {})
        : vertices_(std::move(vertices)), tets_(std::move(tets)), density_(density),
          tags_(std::move(dirichlet_tags)) {
        if (tags_.empty()) tags_.assign(vertices_.size(), kNoTag);
        validate();
        build_adjacency();
        surface_ = compute_surface();
    }

    const std::vector<Vec3> &vertices() const { return vertices_; }
    const std::vector<Tet> &tets() const { return tets_; }
    const std::vector<int> &dirichlet_tags() const { return tags_; }
    const std::vector<Face> &surface_faces() const { return surface_; }
    double density() const { return density_; }

    int vertex_count() const { return static_cast<int>(vertices_.size()); }
    int tet_count() const { return static_cast<int>(tets_.size()); }
    bool empty() const { return vertices_.empty(); }

    const Vec3 &vertex(int i) const { return vertices_[static_cast<std::size_t>(i)]; }
    const Tet &tet(int t) const { return tets_[static_cast<std::size_t>(t)]; }

    std::span<const int> tets_of_vertex(int v) const {
        const auto b = vt_offsets_[static_cast<std::size_t>(v)];
        const auto e = vt_offsets_[static_cast<std::size_t>(v) + 1];
        return {vt_list_.data() + b, static_cast<std::size_t>(e - b)};
    }

    // Vertices sharing at least one tet with v, excluding v; sorted.
    std::vector<int> one_ring(int v) const {
        std::vector<int> ring;
        for (int t : tets_of_vertex(v))
            for (int w : tet(t))
                if (w != v) ring.push_back(w);
        std::sort(ring.begin(), ring.end());
        ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
        return ring;
    }

    double volume(int t) const {
        const Tet &k = tet(t);
        return signed_tet_volume(vertex(k[0]), vertex(k[1]), vertex(k[2]), vertex(k[3]));
    }

    double total_volume() const {
        double v = 0.0;
        for (int t = 0; t < tet_count(); ++t) v += volume(t);
        return v;
    }

    Vec3 bbox_min() const {
        Vec3 m = Vec3::Constant(std::numeric_limits<double>::infinity());
        for (const auto &x : vertices_) m = m.cwiseMin(x);
        return m;
    }
    Vec3 bbox_max() const {
        Vec3 m = Vec3::Constant(-std::numeric_limits<double>::infinity());
        for (const auto &x : vertices_) m = m.cwiseMax(x);
        return m;
    }
    double bbox_diagonal() const { return empty() ? 0.0 : (bbox_max() - bbox_min()).norm(); }

    // Vertices referenced by at least one surface face, sorted.
    std::vector<int> surface_vertices() const {
        std::vector<int> v;
        for (const auto &f : surface_) v.insert(v.end(), f.begin(), f.end());
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        return v;
    }

private:
    void validate() const {
        if (!(density_ > 0.0) || !std::isfinite(density_))
            throw ValidationError("density must be positive and finite");
        if (tags_.size() != vertices_.size())
            throw ValidationError("dirichlet_tags length " + std::to_string(tags_.size()) +
                                  " does not match vertex count " + std::to_string(vertices_.size()));
        for (std::size_t i = 0; i < vertices_.size(); ++i)
            if (!vertices_[i].allFinite()) throw ValidationError("vertex " + std::to_string(i) + " is not finite");
        const int n = vertex_count();
        for (std::size_t t = 0; t < tets_.size(); ++t) {
            for (int v : tets_[t])
                if (v < 0 || v >= n)
                    throw ValidationError("tet " + std::to_string(t) + " references vertex " + std::to_string(v) +
                                          " out of range");
            const auto &k = tets_[t];
            const double vol = signed_tet_volume(vertices_[static_cast<std::size_t>(k[0])], vertices_[static_cast<std::size_t>(k[1])],
                                                 vertices_[static_cast<std::size_t>(k[2])], vertices_[static_cast<std::size_t>(k[3])]);
            if (!(vol > 0.0)) throw ValidationError("tet " + std::to_string(t) + " has non-positive volume " + std::to_string(vol));
        }
    }

    void build_adjacency() {
        vt_offsets_.assign(vertices_.size() + 1, 0);
        for (const auto &k : tets_)
            for (int v : k) ++vt_offsets_[static_cast<std::size_t>(v) + 1];
        for (std::size_t i = 1; i < vt_offsets_.size(); ++i) vt_offsets_[i] += vt_offsets_[i - 1];
        vt_list_.assign(static_cast<std::size_t>(vt_offsets_.back()), 0);
        auto cursor = vt_offsets_;
        for (std::size_t t = 0; t < tets_.size(); ++t)
            for (int v : tets_[t]) vt_list_[static_cast<std::size_t>(cursor[static_cast<std::size_t>(v)]++)] = static_cast<int>(t);
    }

    std::vector<Face> compute_surface() const;

    std::vector<Vec3> vertices_;
    std::vector<Tet> tets_;
    double density_ = 1000.0;
    std::vector<int> tags_;
    std::vector<Face> surface_;
    std::vector<int> vt_offsets_{0};
    std::vector<int> vt_list_;
};

// Boundary triangles: faces owned by exactly one tet, oriented outward,
// ordered by their sorted vertex triple.
inline std::vector<Face> extract_surface(const TetMesh &mesh) {
    struct Entry {
        Face key;
        Face oriented;
    };
    std::vector<Entry> all;
    all.reserve(static_cast<std::size_t>(mesh.tet_count()) * 4);
    for (const auto &t : mesh.tets())
        for (const auto &f : tet_faces(t)) all.push_back({sorted_face(f), f});
    std::sort(all.begin(), all.end(), [](const Entry &a, const Entry &b) { return a.key < b.key; });
    std::vector<Face> out;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i + 1;
        while (j < all.size() && all[j].key == all[i].key) ++j;
        if (j - i == 1) out.push_back(all[i].oriented);
        i = j;
    }
    return out;
}

inline std::vector<Face> TetMesh::compute_surface() const { return extract_surface(*this); }

inline double tet_volume(const TetMesh &mesh, int t) { return mesh.volume(t); }

// Which vertices a load or constraint applies to.
struct VertexSelector {
    enum class Kind { HalfSpace, Tag, Indices };

    Kind kind = Kind::Indices;
    Vec3 normal = Vec3::UnitY(); // HalfSpace: selects normal . X >= offset
    double offset = 0.0;
    int tag = kNoTag;
    std::vector<int> indices;

    static VertexSelector above(int axis, double value) {
        VertexSelector s;
        s.kind = Kind::HalfSpace;
        s.normal = Vec3::Unit(axis);
        s.offset = value;
        return s;
    }
    static VertexSelector below(int axis, double value) {
        VertexSelector s;
        s.kind = Kind::HalfSpace;
        s.normal = -Vec3::Unit(axis);
        s.offset = -value;
        return s;
    }
    static VertexSelector with_tag(int tag) {
        VertexSelector s;
        s.kind = Kind::Tag;
        s.tag = tag;
        return s;
    }
    static VertexSelector of(std::vector<int> idx) {
        VertexSelector s;
        s.kind = Kind::Indices;
        s.indices = std::move(idx);
        return s;
    }

    bool matches(const TetMesh &mesh, int v) const {
        switch (kind) {
        case Kind::HalfSpace: return normal.dot(mesh.vertex(v)) >= offset;
        case Kind::Tag: return mesh.dirichlet_tags()[static_cast<std::size_t>(v)] == tag;
        case Kind::Indices: return std::find(indices.begin(), indices.end(), v) != indices.end();
        }
        return false;
    }
};

// Sorted, duplicate-free vertex indices matched by the selector.
inline std::vector<int> select_vertices(const TetMesh &mesh, const VertexSelector &sel) {
    std::vector<int> out;
    if (sel.kind == VertexSelector::Kind::Indices) {
        for (int v : sel.indices)
            if (v >= 0 && v < mesh.vertex_count()) out.push_back(v);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }
    for (int v = 0; v < mesh.vertex_count(); ++v)
        if (sel.matches(mesh, v)) out.push_back(v);
    return out;
}

} // namespace licrom
