#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "licrom/mesh_io.hpp"

using namespace licrom;
using fixtures::TempDir;

namespace {

void write_text(const std::filesystem::path &p, const std::string &s) { std::ofstream(p) << s; }

const char *kUnitNode = "4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n";

} // namespace

TEST(Mesh, UnitTetFromNodeEle) {
    TempDir dir;
    write_text(dir / "t.node", kUnitNode);
    write_text(dir / "t.ele", "1 4 0\n0 0 1 2 3\n");
    const TetMesh m = load_mesh(dir / "t.node", MeshFormat::NodeEle);
    EXPECT_EQ(m.tet_count(), 1);
    EXPECT_EQ(m.vertex_count(), 4);
    EXPECT_DOUBLE_EQ(tet_volume(m, 0), 1.0 / 6.0);
}

TEST(Mesh, OneBasedNodeEleWithCommentsAndMarkers) {
    TempDir dir;
    write_text(dir / "t.node", "# unit tet\n4 3 0 1\n1 0 0 0 0\n2 1 0 0 0\n\n3 0 1 0 7\n4 0 0 1 7 # top\n");
    write_text(dir / "t.ele", "1 4\n1 1 2 3 4\n");
    const TetMesh m = load_node_ele(dir / "t");
    EXPECT_EQ(m.tet(0), (Tet{0, 1, 2, 3}));
    EXPECT_EQ(m.dirichlet_tags(), (std::vector<int>{kNoTag, kNoTag, 7, 7}));
    EXPECT_EQ(select_vertices(m, VertexSelector::with_tag(7)), (std::vector<int>{2, 3}));
}

TEST(Mesh, InvertedTetNamesIndex) {
    TempDir dir;
    write_text(dir / "t.node", kUnitNode);
    write_text(dir / "t.ele", "2 4 0\n0 0 1 2 3\n1 1 0 2 3\n");
    try {
        load_mesh(dir / "t.node", MeshFormat::NodeEle);
        FAIL() << "expected a validation error";
    } catch (const ValidationError &e) {
        EXPECT_NE(std::string(e.what()).find("tet 1"), std::string::npos) << e.what();
    }
}

TEST(Mesh, ParseErrorsCarryLineNumbers) {
    TempDir dir;
    write_text(dir / "t.node", "4 3 0 0\n0 0 0 0\n1 1 zero 0\n2 0 1 0\n3 0 0 1\n");
    write_text(dir / "t.ele", "1 4 0\n0 0 1 2 3\n");
    try {
        load_node_ele(dir / "t");
        FAIL() << "expected a format error";
    } catch (const FormatError &e) {
        EXPECT_EQ(e.line(), 3u);
    }
    write_text(dir / "t.node", kUnitNode);
    write_text(dir / "t.ele", "1 4 0\n0 0 1 2\n");
    EXPECT_THROW(load_node_ele(dir / "t"), FormatError);
    write_text(dir / "t.ele", "1 4 0\n0 0 1 2 9\n");
    EXPECT_THROW(load_node_ele(dir / "t"), ValidationError);
    EXPECT_THROW(load_node_ele(dir / "missing"), IoError);
}

TEST(Mesh, RoundTripIsBitwise) {
    TempDir dir;
    const TetMesh m = fixtures::jittered_grid(3, 42); // 162 tets
    ASSERT_GE(m.tet_count(), 100);
    for (auto fmt : {MeshFormat::NodeEle, MeshFormat::Container}) {
        const auto path = dir / (fmt == MeshFormat::NodeEle ? "m.node" : "m.lcrm");
        save_mesh(m, path, fmt);
        const TetMesh r = load_mesh(path, fmt);
        ASSERT_EQ(r.vertex_count(), m.vertex_count());
        for (int i = 0; i < m.vertex_count(); ++i)
            for (int d = 0; d < 3; ++d)
                EXPECT_EQ(std::bit_cast<std::uint64_t>(r.vertex(i)[d]), std::bit_cast<std::uint64_t>(m.vertex(i)[d]));
        EXPECT_EQ(r.tets(), m.tets());
        EXPECT_EQ(r.dirichlet_tags(), m.dirichlet_tags());
    }
    EXPECT_EQ(load_mesh(dir / "m.lcrm").tets(), m.tets());
}

TEST(Mesh, ContainerRejectsCorruption) {
    std::stringstream ss;
    save_mesh_container(fixtures::unit_tet(), ss);
    std::string bytes = ss.str();
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream a(bad);
    EXPECT_THROW(load_mesh_container(a), FormatError);
    std::istringstream b(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(load_mesh_container(b), FormatError);
    std::string huge = bytes;
    for (int i = 8; i < 16; ++i) huge[static_cast<std::size_t>(i)] = '\xff'; // vertex count
    std::istringstream c(huge);
    EXPECT_THROW(load_mesh_container(c), FormatError);
}

TEST(Mesh, VolumeScalingAndExtendedPrecision) {
    const TetMesh unit = fixtures::unit_tet();
    EXPECT_DOUBLE_EQ(unit.volume(0), 1.0 / 6.0);
    const TetMesh big({Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 2)}, {Tet{0, 1, 2, 3}});
    EXPECT_NEAR(big.volume(0), 8.0 * unit.volume(0), 1e-15);

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Vec3> v(4);
        for (auto &x : v) x = Vec3(d(rng), d(rng), d(rng));
        long double e[3][3];
        for (int c = 0; c < 3; ++c)
            for (int r = 0; r < 3; ++r) e[c][r] = static_cast<long double>(v[static_cast<std::size_t>(c) + 1][r]) - v[0][r];
        long double triple = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1]) - e[0][1] * (e[1][0] * e[2][2] - e[1][2] * e[2][0]) +
                             e[0][2] * (e[1][0] * e[2][1] - e[1][1] * e[2][0]);
        if (std::abs(triple) < 1e-3L) continue;
        Tet t{0, 1, 2, 3};
        if (triple < 0) {
            std::swap(t[2], t[3]);
            triple = -triple;
        }
        const TetMesh m(v, {t});
        const long double ref = triple / 6.0L;
        EXPECT_LT(std::abs((static_cast<long double>(m.volume(0)) - ref) / ref), 1e-14L);
    }
}

TEST(Mesh, CubeVolumeSumsToOne) {
    EXPECT_NEAR(fixtures::cube5().total_volume(), 1.0, 1e-12);
    EXPECT_NEAR(fixtures::cube_grid(5).total_volume(), 1.0, 1e-12);
    EXPECT_NEAR(fixtures::jittered_grid(4, 3).total_volume(), 1.0, 1e-12);
}

TEST(Mesh, SelectorTopLayer) {
    const TetMesh m = fixtures::cube_grid(10);
    std::vector<int> expect;
    for (int v = 0; v < m.vertex_count(); ++v)
        if (m.vertex(v).y() >= 0.45) expect.push_back(v);
    const auto got = select_vertices(m, VertexSelector::above(1, 0.45));
    EXPECT_EQ(got, expect);
    EXPECT_EQ(got.size(), 121u);
    for (int v : got) EXPECT_DOUBLE_EQ(m.vertex(v).y(), 0.5);
    EXPECT_EQ(select_vertices(m, VertexSelector::below(1, -0.45)).size(), 121u);
    EXPECT_EQ(select_vertices(m, VertexSelector::of({3, 0, 3, -1, 100000})), (std::vector<int>{0, 3}));
    EXPECT_TRUE(select_vertices(m, VertexSelector::above(0, 2.0)).empty());
    EXPECT_TRUE(select_vertices(TetMesh{}, VertexSelector::above(0, -1.0)).empty());
}

TEST(Mesh, SurfaceCounts) {
    EXPECT_EQ(extract_surface(fixtures::unit_tet()).size(), 4u);
    const TetMesh two({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(1, 1, 1)},
                      {Tet{0, 1, 2, 3}, Tet{1, 2, 3, 4}});
    const auto s = extract_surface(two);
    EXPECT_EQ(s.size(), 6u);
    for (const auto &f : s) EXPECT_NE(sorted_face(f), (Face{1, 2, 3}));
    EXPECT_EQ(extract_surface(fixtures::cube5()).size(), 12u);
}

// Brute force: count incidences of each sorted face over all tets.
TEST(Mesh, SurfaceIsExactlyTheSingleIncidenceFacesOutward) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const TetMesh m = fixtures::jittered_grid(3, seed);
        std::map<Face, int> count;
        for (const auto &t : m.tets())
            for (const auto &f : tet_faces(t)) ++count[sorted_face(f)];
        std::size_t boundary = 0;
        for (const auto &[f, c] : count) boundary += c == 1;
        const auto &s = m.surface_faces();
        EXPECT_EQ(s.size(), boundary);
        const Vec3 center = Vec3::Zero();
        for (const auto &f : s) {
            EXPECT_EQ(count[sorted_face(f)], 1);
            const Vec3 a = m.vertex(f[0]), b = m.vertex(f[1]), c = m.vertex(f[2]);
            const Vec3 n = (b - a).cross(c - a);
            EXPECT_GT(n.dot((a + b + c) / 3.0 - center), 0.0); // convex body around the origin
        }
        EXPECT_EQ(m.surface_vertices().size(), static_cast<std::size_t>(4 * 4 * 4 - 2 * 2 * 2));
    }
}

TEST(Mesh, OneRingAndAdjacency) {
    const TetMesh m = fixtures::unit_tet();
    EXPECT_EQ(m.one_ring(0), (std::vector<int>{1, 2, 3}));
    EXPECT_EQ(m.tets_of_vertex(2).size(), 1u);
    const TetMesh c = fixtures::cube5();
    EXPECT_EQ(c.one_ring(0), (std::vector<int>{1, 2, 4}));
    EXPECT_EQ(c.tets_of_vertex(7).size(), 4u);
}

TEST(Mesh, RejectsBadConstruction) {
    EXPECT_THROW(TetMesh({Vec3::Zero()}, {}, -1.0), ValidationError);
    EXPECT_THROW(TetMesh({Vec3::Zero()}, {}, 1.0, {1, 2}), ValidationError);
    EXPECT_THROW(TetMesh({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 0)}, {Tet{0, 1, 2, 3}}), ValidationError);
}

TEST(MeshOps, ExciseTracksVolume) {
    const TetMesh m = fixtures::cube_grid(6);
    const auto r = excise(m, [](const Vec3 &c) { return c.norm() < 0.25; });
    EXPECT_GT(r.removed_volume, 0.0);
    EXPECT_NEAR(r.mesh.total_volume() + r.removed_volume, m.total_volume(), 1e-12);
    for (int v = 0; v < m.vertex_count(); ++v)
        if (int n = r.old_to_new[static_cast<std::size_t>(v)]; n >= 0) EXPECT_EQ(r.mesh.vertex(n), m.vertex(v));
    EXPECT_THROW(excise(m, [](const Vec3 &) { return true; }), ValidationError);
}

TEST(MeshOps, CutDuplicatesVerticesAlongSheet) {
    GridSpec g;
    g.cells = {4, 1, 4};
    const TetMesh plate = box_grid(g);
    SegmentCut sheet;
    sheet.segments.push_back({Eigen::Vector2d(0, -0.5), Eigen::Vector2d(0, 0)});
    const TetMesh cut = cut_faces(plate, sheet);
    EXPECT_EQ(cut.tet_count(), plate.tet_count());
    EXPECT_NEAR(cut.total_volume(), plate.total_volume(), 1e-12);
    // Interior sheet vertices x = 0, z in (-0.5, 0): the z = -0.5 edge is on the
    // boundary, the crack tip at z = 0 stays shared. 2 layers in y x 2 z-levels.
    EXPECT_EQ(cut.vertex_count(), plate.vertex_count() + 2 * 2);
    EXPECT_GT(cut.surface_faces().size(), plate.surface_faces().size());
    const TetMesh same = cut_faces(plate, [](const std::array<Vec3, 3> &) { return false; });
    EXPECT_EQ(same.tets(), plate.tets());
}

TEST(MeshOps, YCutGrowsMonotonically) {
    GridSpec g;
    g.cells = {8, 1, 8};
    g.mirror_negative_x = true;
    const TetMesh plate = box_grid(g);
    int prev = plate.vertex_count();
    for (double p : {0.25, 0.5, 0.75, 1.0}) {
        const TetMesh m = cut_faces(plate, y_cut(p));
        EXPECT_GE(m.vertex_count(), prev);
        prev = m.vertex_count();
    }
    EXPECT_GT(prev, plate.vertex_count());
    EXPECT_TRUE(y_cut(0.0).segments.empty());
}

TEST(MeshOps, CubeToSphereFamily) {
    const TetMesh cube = cube_to_sphere(4, 0.0);
    EXPECT_NEAR(cube.total_volume(), 1.0, 1e-12);
    const TetMesh ball = cube_to_sphere(6, 1.0);
    for (int v : ball.surface_vertices()) EXPECT_NEAR(ball.vertex(v).norm(), 0.5, 1e-12);
    EXPECT_LT(ball.total_volume(), 4.0 / 3.0 * M_PI * 0.125);
}
