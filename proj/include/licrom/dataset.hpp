#pragma once

// Training sets: frames of (X, u) samples at a fixed per-frame cardinality,
// the encoder subsampling operator, and the LCRS container.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "licrom/binary_io.hpp"
#include "licrom/mesh.hpp"
#include "licrom/random.hpp"

namespace licrom {

using json = nlohmann::json;

struct Frame {
    double t = 0.0;
    std::vector<Vec3> X; // reference positions
    std::vector<Vec3> u; // displacements at X
    std::string mesh_id;
    std::string load_id;

    std::size_t size() const { return X.size(); }
};

struct SnapshotSet {
    std::vector<Frame> frames;
    json metadata = json::object(); // provenance: seeds, mesh ids, load ids, bbox

    bool empty() const { return frames.empty(); }

    // Shared per-frame cardinality, or nullopt when frames disagree.
    std::optional<std::size_t> cardinality() const {
        if (frames.empty()) return std::nullopt;
        const auto n = frames.front().size();
        for (const auto &f : frames)
            if (f.size() != n) return std::nullopt;
        return n;
    }

    std::pair<Vec3, Vec3> bounds() const {
        Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
        for (const auto &f : frames)
            for (const auto &x : f.X) {
                lo = lo.cwiseMin(x);
                hi = hi.cwiseMax(x);
            }
        return {lo, hi};
    }
};

struct SubsampleSpec {
    std::size_t count = 2500;
    std::uint64_t seed = 0;
};

// n distinct vertices, uniformly without replacement, in the order of a
// seeded Fisher-Yates shuffle.
inline Frame sample_frame(const TetMesh &mesh, const std::vector<Vec3> &displacement, std::size_t n,
                          std::uint64_t seed, double t = 0.0) {
    if (n > static_cast<std::size_t>(mesh.vertex_count()))
        throw ValidationError("cannot sample " + std::to_string(n) + " points from a mesh with " +
                              std::to_string(mesh.vertex_count()) + " vertices");
    if (displacement.size() != static_cast<std::size_t>(mesh.vertex_count()))
        throw ValidationError("displacement field size does not match the mesh");
    Frame f;
    f.t = t;
    const auto idx = sample_without_replacement(mesh.vertex_count(), static_cast<int>(n), seed);
    f.X.reserve(n);
    f.u.reserve(n);
    for (int v : idx) {
        f.X.push_back(mesh.vertex(v));
        f.u.push_back(displacement[static_cast<std::size_t>(v)]);
    }
    return f;
}

// S_n: a seeded subset of `spec.count` points. Requesting the whole frame
// returns it unchanged.
inline Frame subsample(const Frame &frame, const SubsampleSpec &spec) {
    if (spec.count > frame.size() || spec.count == 0)
        throw ValidationError("subsample size " + std::to_string(spec.count) + " must lie in [1, " +
                              std::to_string(frame.size()) + "]");
    if (spec.count == frame.size()) return frame;
    const auto idx = sample_without_replacement(static_cast<int>(frame.size()), static_cast<int>(spec.count), spec.seed);
    Frame out;
    out.t = frame.t;
    out.mesh_id = frame.mesh_id;
    out.load_id = frame.load_id;
    out.X.reserve(idx.size());
    out.u.reserve(idx.size());
    for (int i : idx) {
        out.X.push_back(frame.X[static_cast<std::size_t>(i)]);
        out.u.push_back(frame.u[static_cast<std::size_t>(i)]);
    }
    return out;
}

inline constexpr std::uint32_t kSnapshotContainerVersion = 1;

// LCRS: magic, u32 version, u64 frame count, then per frame f64 t, u64 n and
// 6n f64 (X then u, per point), then a u64-length JSON trailer holding the
// per-frame mesh/load ids and the set's metadata.
inline void save_set(const SnapshotSet &set, std::ostream &os) {
    io::write_magic(os, "LCRS");
    io::write_le<std::uint32_t>(os, kSnapshotContainerVersion);
    io::write_le<std::uint64_t>(os, set.frames.size());
    json frames = json::array();
    for (const auto &f : set.frames) {
        io::write_le<double>(os, f.t);
        io::write_le<std::uint64_t>(os, f.size());
        for (std::size_t i = 0; i < f.size(); ++i) {
            for (int d = 0; d < 3; ++d) io::write_le<double>(os, f.X[i][d]);
            for (int d = 0; d < 3; ++d) io::write_le<double>(os, f.u[i][d]);
        }
        frames.push_back({{"mesh_id", f.mesh_id}, {"load_id", f.load_id}});
    }
    const json trailer = {{"frames", frames}, {"metadata", set.metadata}};
    io::write_blob(os, trailer.dump());
}

inline SnapshotSet load_set(std::istream &is) {
    io::expect_magic(is, "LCRS");
    const auto version = io::read_le<std::uint32_t>(is);
    if (version != kSnapshotContainerVersion)
        throw FormatError("unsupported LCRS version " + std::to_string(version), 0, 4);
    const auto count = io::read_le<std::uint64_t>(is);
    // every frame needs at least 16 bytes plus the trailer length
    if (count > io::remaining(is) / 16) throw FormatError("frame count exceeds file size", 0, 8);
    SnapshotSet set;
    set.frames.resize(count);
    for (auto &f : set.frames) {
        f.t = io::read_le<double>(is);
        const auto n = io::read_le<std::uint64_t>(is);
        if (n > io::remaining(is) / 48)
            throw FormatError("frame length field exceeds file size", 0, static_cast<std::size_t>(is.tellg()));
        f.X.resize(n);
        f.u.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            for (int d = 0; d < 3; ++d) f.X[i][d] = io::read_le<double>(is);
            for (int d = 0; d < 3; ++d) f.u[i][d] = io::read_le<double>(is);
        }
    }
    const auto blob = io::read_blob(is, io::remaining(is));
    json trailer;
    try {
        trailer = json::parse(blob);
    } catch (const json::exception &e) {
        throw FormatError(std::string("bad LCRS trailer: ") + e.what());
    }
    const auto &frames = trailer.at("frames");
    if (frames.size() != set.frames.size()) throw FormatError("LCRS trailer frame count mismatch");
    for (std::size_t j = 0; j < set.frames.size(); ++j) {
        set.frames[j].mesh_id = frames[j].value("mesh_id", "");
        set.frames[j].load_id = frames[j].value("load_id", "");
    }
    set.metadata = trailer.value("metadata", json::object());
    return set;
}

inline void save_set(const SnapshotSet &set, const std::filesystem::path &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    save_set(set, os);
}

inline SnapshotSet load_set(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load_set(is);
}

} // namespace licrom
