#pragma once

// Mesh file formats: TetGen-style .node/.ele text, the LCRM binary
// container, and OBJ surface export.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "licrom/binary_io.hpp"
#include "licrom/mesh.hpp"

namespace licrom {

enum class MeshFormat { NodeEle, Container };

inline constexpr std::uint32_t kMeshContainerVersion = 1;

namespace detail {

// Line reader that skips blank lines and '#' comments and tracks line numbers.
class TokenLines {
public:
    explicit TokenLines(std::istream &is) : is_(is) {}

    bool next(std::vector<std::string> &tokens) {
        std::string line;
        while (std::getline(is_, line)) {
            ++line_no_;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            std::istringstream ss(line);
            tokens.clear();
            for (std::string tok; ss >> tok;) tokens.push_back(tok);
            if (!tokens.empty()) return true;
        }
        return false;
    }
    std::size_t line() const { return line_no_; }

private:
    std::istream &is_;
    std::size_t line_no_ = 0;
};

template <class T>
inline T parse_number(const std::string &tok, std::size_t line) {
    std::istringstream ss(tok);
    T value{};
    ss >> value;
    if (ss.fail() || !ss.eof()) throw FormatError("cannot parse number '" + tok + "'", line);
    return value;
}

inline std::filesystem::path with_ext(std::filesystem::path p, const char *ext) {
    p.replace_extension(ext);
    return p;
}

} // namespace detail

// Reads <stem>.node and <stem>.ele. The index base (0 or 1) is taken from
// the first node. A nonzero boundary marker becomes the vertex Dirichlet tag.
inline TetMesh load_node_ele(const std::filesystem::path &path, double density = 1000.0) {
    const auto node_path = detail::with_ext(path, ".node");
    const auto ele_path = detail::with_ext(path, ".ele");
    std::ifstream node_in(node_path), ele_in(ele_path);
    if (!node_in) throw IoError("cannot open " + node_path.string());
    if (!ele_in) throw IoError("cannot open " + ele_path.string());

    std::vector<std::string> tok;
    detail::TokenLines nodes(node_in);
    if (!nodes.next(tok) || tok.size() < 2) throw FormatError(".node header missing", nodes.line());
    const auto n = detail::parse_number<long long>(tok[0], nodes.line());
    const auto dim = detail::parse_number<int>(tok[1], nodes.line());
    const int n_attr = tok.size() > 2 ? detail::parse_number<int>(tok[2], nodes.line()) : 0;
    const int n_marker = tok.size() > 3 ? detail::parse_number<int>(tok[3], nodes.line()) : 0;
    if (n < 0 || dim != 3) throw FormatError(".node header must declare a non-negative count and dimension 3", nodes.line());

    std::vector<Vec3> vertices(static_cast<std::size_t>(n));
    std::vector<int> tags(static_cast<std::size_t>(n), kNoTag);
    long long base = 0;
    for (long long i = 0; i < n; ++i) {
        if (!nodes.next(tok)) throw FormatError("unexpected end of .node file", nodes.line());
        if (tok.size() < static_cast<std::size_t>(4 + n_attr + n_marker))
            throw FormatError("too few columns in .node record", nodes.line());
        const auto idx = detail::parse_number<long long>(tok[0], nodes.line());
        if (i == 0) base = idx;
        if (idx - base != i) throw FormatError("node indices must be consecutive", nodes.line());
        for (int d = 0; d < 3; ++d)
            vertices[static_cast<std::size_t>(i)][d] = detail::parse_number<double>(tok[static_cast<std::size_t>(1 + d)], nodes.line());
        if (n_marker > 0) {
            const int m = detail::parse_number<int>(tok[static_cast<std::size_t>(4 + n_attr)], nodes.line());
            tags[static_cast<std::size_t>(i)] = m == 0 ? kNoTag : m;
        }
    }

    detail::TokenLines eles(ele_in);
    if (!eles.next(tok) || tok.size() < 2) throw FormatError(".ele header missing", eles.line());
    const auto nt = detail::parse_number<long long>(tok[0], eles.line());
    const auto per = detail::parse_number<int>(tok[1], eles.line());
    if (nt < 0 || per != 4) throw FormatError(".ele header must declare linear tets (4 nodes)", eles.line());
    std::vector<Tet> tets(static_cast<std::size_t>(nt));
    for (long long t = 0; t < nt; ++t) {
        if (!eles.next(tok)) throw FormatError("unexpected end of .ele file", eles.line());
        if (tok.size() < 5) throw FormatError("too few columns in .ele record", eles.line());
        for (int k = 0; k < 4; ++k)
            tets[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)] =
                static_cast<int>(detail::parse_number<long long>(tok[static_cast<std::size_t>(1 + k)], eles.line()) - base);
    }
    return TetMesh(std::move(vertices), std::move(tets), density, std::move(tags));
}

inline void save_node_ele(const TetMesh &mesh, const std::filesystem::path &path) {
    std::ofstream node_out(detail::with_ext(path, ".node"));
    std::ofstream ele_out(detail::with_ext(path, ".ele"));
    if (!node_out || !ele_out) throw IoError("cannot write " + path.string());
    char buf[128];
    node_out << mesh.vertex_count() << " 3 0 1\n";
    for (int i = 0; i < mesh.vertex_count(); ++i) {
        const auto &x = mesh.vertex(i);
        const int tag = mesh.dirichlet_tags()[static_cast<std::size_t>(i)];
        std::snprintf(buf, sizeof buf, "%d %.17g %.17g %.17g %d\n", i, x[0], x[1], x[2], tag == kNoTag ? 0 : tag);
        node_out << buf;
    }
    ele_out << mesh.tet_count() << " 4 0\n";
    for (int t = 0; t < mesh.tet_count(); ++t) {
        const auto &k = mesh.tet(t);
        ele_out << t << ' ' << k[0] << ' ' << k[1] << ' ' << k[2] << ' ' << k[3] << '\n';
    }
}

// LCRM: magic, u32 version, u64 vertex count, u64 tet count, f64 density,
// 3 f64 per vertex, 4 u32 per tet, i32 tag per vertex. Little-endian.
inline void save_mesh_container(const TetMesh &mesh, std::ostream &os) {
    io::write_magic(os, "LCRM");
    io::write_le<std::uint32_t>(os, kMeshContainerVersion);
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(mesh.vertex_count()));
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(mesh.tet_count()));
    io::write_le<double>(os, mesh.density());
    for (const auto &x : mesh.vertices())
        for (int d = 0; d < 3; ++d) io::write_le<double>(os, x[d]);
    for (const auto &k : mesh.tets())
        for (int v : k) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
    for (int tag : mesh.dirichlet_tags()) io::write_le<std::int32_t>(os, tag);
}

inline TetMesh load_mesh_container(std::istream &is) {
    io::expect_magic(is, "LCRM");
    const auto version = io::read_le<std::uint32_t>(is);
    if (version != kMeshContainerVersion)
        throw FormatError("unsupported LCRM version " + std::to_string(version), 0, 4);
    const auto nv = io::read_le<std::uint64_t>(is);
    const auto nt = io::read_le<std::uint64_t>(is);
    const auto density = io::read_le<double>(is);
    const auto rem = io::remaining(is);
    if (nv > rem / 28 || nt > rem / 16 || nv * 28 + nt * 16 > rem) throw FormatError("LCRM counts exceed file size", 0, static_cast<std::size_t>(is.tellg()));
    std::vector<Vec3> vertices(nv);
    for (auto &x : vertices)
        for (int d = 0; d < 3; ++d) x[d] = io::read_le<double>(is);
    std::vector<Tet> tets(nt);
    for (auto &k : tets)
        for (auto &v : k) v = static_cast<int>(io::read_le<std::uint32_t>(is));
    std::vector<int> tags(nv);
    for (auto &t : tags) t = io::read_le<std::int32_t>(is);
    return TetMesh(std::move(vertices), std::move(tets), density, std::move(tags));
}

inline void save_mesh(const TetMesh &mesh, const std::filesystem::path &path, MeshFormat format) {
    if (format == MeshFormat::NodeEle) return save_node_ele(mesh, path);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    save_mesh_container(mesh, os);
}

inline TetMesh load_mesh(const std::filesystem::path &path, MeshFormat format, double density = 1000.0) {
    if (format == MeshFormat::NodeEle) return load_node_ele(path, density);
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load_mesh_container(is);
}

// Picks the format from the extension: .lcrm is the container, anything
// else is treated as a .node/.ele pair.
inline TetMesh load_mesh(const std::filesystem::path &path, double density = 1000.0) {
    return load_mesh(path, path.extension() == ".lcrm" ? MeshFormat::Container : MeshFormat::NodeEle, density);
}

// Surface as OBJ, positions displaced by `displacement` (empty = reference).
// Only surface vertices are written; faces are re-indexed accordingly.
inline void write_surface_obj(const TetMesh &mesh, const std::vector<Vec3> &displacement, std::ostream &os) {
    const auto verts = mesh.surface_vertices();
    std::vector<int> remap(static_cast<std::size_t>(mesh.vertex_count()), -1);
    char buf[128];
    for (std::size_t i = 0; i < verts.size(); ++i) {
        const int v = verts[i];
        remap[static_cast<std::size_t>(v)] = static_cast<int>(i) + 1;
        Vec3 x = mesh.vertex(v);
        if (!displacement.empty()) x += displacement[static_cast<std::size_t>(v)];
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", x[0], x[1], x[2]);
        os << buf;
    }
    for (const auto &f : mesh.surface_faces())
        os << "f " << remap[static_cast<std::size_t>(f[0])] << ' ' << remap[static_cast<std::size_t>(f[1])] << ' '
           << remap[static_cast<std::size_t>(f[2])] << '\n';
}

} // namespace licrom
