#pragma once

#include <filesystem>
#include <unistd.h>
#include <random>
#include <string>

#include "licrom/mesh.hpp"
#include "licrom/mesh_ops.hpp"

namespace fixtures {

using licrom::Tet;
using licrom::TetMesh;
using licrom::Vec3;

inline TetMesh unit_tet(double density = 1000.0) {
    return TetMesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)}, {Tet{0, 1, 2, 3}}, density);
}

// Unit cube [0,1]^3 split into 5 tets (one central, four corners).
inline TetMesh cube5() {
    std::vector<Vec3> v;
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 2; ++j)
            for (int i = 0; i < 2; ++i) v.emplace_back(i, j, k);
    // vertex id = i + 2j + 4k
    std::vector<Tet> t = {{0, 1, 2, 4}, {3, 2, 1, 7}, {5, 4, 7, 1}, {6, 7, 4, 2}, {1, 2, 4, 7}};
    for (auto &k : t)
        if (licrom::signed_tet_volume(v[k[0]], v[k[1]], v[k[2]], v[k[3]]) < 0) std::swap(k[2], k[3]);
    return TetMesh(std::move(v), std::move(t));
}

inline TetMesh cube_grid(int cells, double density = 1000.0) {
    licrom::GridSpec g;
    g.cells = Eigen::Vector3i::Constant(cells);
    return licrom::box_grid(g, density);
}

// Grid with interior vertices jittered; still positively oriented.
inline TetMesh jittered_grid(int cells, std::uint64_t seed) {
    const TetMesh base = cube_grid(cells);
    std::vector<Vec3> v = base.vertices();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-0.15, 0.15);
    const double hcell = 1.0 / cells;
    for (auto &x : v)
        if ((x.cwiseAbs().array() < 0.5 - 1e-9).all()) x += hcell * Vec3(d(rng), d(rng), d(rng));
    return TetMesh(std::move(v), base.tets());
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("licrom_test_" + std::to_string(std::random_device{}()) + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string &name) const { return path / name; }
};

} // namespace fixtures
