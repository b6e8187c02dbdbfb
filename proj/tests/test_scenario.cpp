#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "licrom/scenario.hpp"

using namespace licrom;

namespace {

json cube_scenario() {
    return json::parse(R"({
        "name": "cube",
        "seed": 4,
        "meshes": [{"id": "cube", "generate": {"type": "box", "cells": 3}}],
        "material": {"youngs_modulus": 1e5, "poisson_ratio": 0.3},
        "load": {
            "dirichlet": [
                {"select": {"axis": "y", "above": 0.45}, "velocity": [0, -0.5, 0]},
                {"select": {"axis": "y", "below": -0.45}}
            ]
        },
        "integrator": {"dt": 0.01},
        "steps": 20,
        "snapshot_every": 5,
        "samples_per_frame": 40,
        "reduced": {"cubature_seeds": 8}
    })");
}

// `max_y` caps the y exponent: on a one-cell-thick plate y^2 is constant.
std::shared_ptr<PolynomialBasis> quadratic_basis(int max_y = 2) {
    std::vector<std::array<int, 3>> e;
    for (int a = 0; a <= 2; ++a)
        for (int b = 0; a + b <= 2 && b <= max_y; ++b)
            for (int c = 0; a + b + c <= 2; ++c) e.push_back({a, b, c});
    return std::make_shared<PolynomialBasis>(e);
}

bool bitwise_equal(const VectorXd &a, const VectorXd &b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

} // namespace

TEST(Scenario, ParsesDefaultsAndFields) {
    const auto sc = parse_scenario(cube_scenario());
    EXPECT_EQ(sc.name, "cube");
    EXPECT_EQ(sc.seed, 4u);
    ASSERT_EQ(sc.meshes.size(), 1u);
    EXPECT_EQ(sc.meshes[0].mesh->vertex_count(), 64);
    EXPECT_DOUBLE_EQ(sc.material.youngs_modulus(), 1e5);
    EXPECT_DOUBLE_EQ(sc.material.poisson_ratio(), 0.3);
    ASSERT_EQ(sc.load.constraints.size(), 2u);
    EXPECT_EQ(sc.load.constraints[0].velocity, Vec3(0, -0.5, 0));
    EXPECT_EQ(select_vertices(*sc.meshes[0].mesh, sc.load.constraints[0].select).size(), 16u);
    EXPECT_EQ(sc.integrator.max_iterations, 50);
    EXPECT_EQ(sc.reduced.cubature_seeds, 8);
    EXPECT_EQ(sc.reduced.weights, WeightRule::Equal);
    EXPECT_TRUE(sc.events.empty());
}

TEST(Scenario, RejectsInvalidInput) {
    auto bad = [](auto edit) {
        json j = cube_scenario();
        edit(j);
        return j;
    };
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["unknown"] = 1; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["meshes"] = json::array(); })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["meshes"][0]["generate"]["type"] = "torus"; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["meshes"].push_back(j["meshes"][0]); })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["material"]["poisson_ratio"] = 0.5; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["integrator"]["dt"] = 0; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["steps"] = 0; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["samples_per_frame"] = 65; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["load"]["gravity"] = {0, 1}; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["load"]["dirichlet"][0]["select"] = {{"axis", "w"}, {"above", 0}}; })),
                 ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["reduced"]["weights"] = "optimal"; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["reduced"]["mesh"] = "ghost"; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["events"] = {{{"step", 3}, {"type", "swap"}, {"mesh", "ghost"}}}; })),
                 ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["events"] = {{{"step", 30}, {"type", "cut"}, {"progress", 0.5}}}; })),
                 ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["events"] = {{{"step", 3}, {"type", "melt"}}}; })), ConfigError);
    EXPECT_THROW(parse_scenario(bad([](json &j) { j["meshes"][0] = {{"id", "f"}, {"path", "/nonexistent/mesh.node"}}; })),
                 Error);
}

TEST(Scenario, MeshFromFileResolvesRelativePath) {
    fixtures::TempDir dir;
    save_mesh(fixtures::cube_grid(2), dir / "cube.node", MeshFormat::NodeEle);
    json j = cube_scenario();
    j["meshes"][0] = {{"id", "file"}, {"path", "cube.node"}};
    j.erase("samples_per_frame");
    {
        std::ofstream os(dir / "s.json");
        os << j.dump();
    }
    const auto sc = load_scenario(dir / "s.json");
    EXPECT_EQ(sc.meshes[0].mesh->vertex_count(), 27);
}

TEST(Scenario, GenerateCountsFramesAndIsDeterministic) {
    const auto sc = parse_scenario(cube_scenario());
    const auto a = generate_dataset(sc);
    EXPECT_EQ(a.frames.size(), 4u); // 20 steps, cadence 5
    EXPECT_EQ(a.cardinality(), 40u);
    EXPECT_EQ(a.frames.back().mesh_id, "cube");
    EXPECT_NEAR(a.frames.back().t, 0.2, 1e-12);
    std::stringstream s1, s2;
    save_set(a, s1);
    save_set(generate_dataset(sc), s2);
    EXPECT_EQ(s1.str(), s2.str());
}

TEST(Scenario, MultiMeshDatasetCarriesMeshIds) {
    json j = cube_scenario();
    j["meshes"] = json::array();
    for (int k = 0; k < 3; ++k)
        j["meshes"].push_back({{"id", "shape" + std::to_string(k)},
                               {"generate", {{"type", "cube_to_sphere"}, {"cells", 3}, {"blend", k / 2.0}}}});
    j["steps"] = 10;
    const auto set = generate_dataset(parse_scenario(j));
    ASSERT_EQ(set.frames.size(), 6u);
    EXPECT_EQ(set.frames[0].mesh_id, "shape0");
    EXPECT_EQ(set.frames[3].mesh_id, "shape1");
    EXPECT_EQ(set.frames[5].mesh_id, "shape2");
    EXPECT_EQ(set.metadata.at("meshes").size(), 3u);
}

TEST(Scenario, EventsFileParsesAndSorts) {
    const auto ev = parse_events(json::parse(R"({"events": [
        {"step": 9, "type": "swap", "mesh": "cube"},
        {"step": 2, "type": "punch", "center": [0, 0, 0], "radius": 0.2, "axis": [0, 2, 0]},
        {"step": 5, "type": "cut", "segments": [[0, -0.5, 0, 0]]}
    ]})"));
    ASSERT_EQ(ev.size(), 3u);
    EXPECT_EQ(ev[0].kind, ScenarioEvent::Kind::Punch);
    ASSERT_TRUE(ev[0].axis);
    EXPECT_EQ(*ev[0].axis, Vec3::UnitY());
    EXPECT_EQ(ev[1].kind, ScenarioEvent::Kind::Cut);
    EXPECT_EQ(ev[2].type_name(), "swap");
    EXPECT_THROW(parse_events(json::parse(R"([{"step": 1, "type": "punch", "center": [0,0,0], "radius": -1}])")), ConfigError);
    EXPECT_THROW(parse_events(json::parse(R"([{"step": 1, "type": "cut"}])")), ConfigError);
}

TEST(Scenario, SessionPunchKeepsStateAndRemovesVolume) {
    json j = cube_scenario();
    j["meshes"][0]["generate"]["cells"] = 6;
    j["reduced"]["cubature_seeds"] = 40;
    const auto sc = parse_scenario(j);
    ReducedSession s(quadratic_basis(), sc);
    for (int i = 0; i < 5; ++i) EXPECT_TRUE(s.step().monotone());
    const VectorXd q = s.state().q, qp = s.state().q_prev;
    ScenarioEvent punch;
    punch.kind = ScenarioEvent::Kind::Punch;
    punch.center = Vec3::Zero();
    punch.radius = 0.25;
    punch.axis = Vec3::UnitZ();
    const auto rec = s.apply(punch);
    EXPECT_TRUE(bitwise_equal(s.state().q, q));
    EXPECT_TRUE(bitwise_equal(s.state().q_prev, qp));
    const double removed = rec.at("removed_volume").get<double>();
    EXPECT_GT(removed, 0.0);
    EXPECT_NEAR(rec.at("weight_before").get<double>() - rec.at("weight_after").get<double>(), removed, 1e-9 * removed);
    for (int i = 0; i < 5; ++i) EXPECT_TRUE(s.step().monotone());
}

TEST(Scenario, ProgressiveCutKeepsStateAndReusesCache) {
    json j = cube_scenario();
    j["meshes"][0]["generate"] = {{"type", "plate"}, {"cells", {8, 1, 8}}};
    j["load"] = {{"dirichlet", {{{"select", {{"axis", "z"}, {"above", 0.45}}}}}}, {"gravity", {0, -9.8, 0}}};
    j["reduced"]["cubature_seeds"] = 200;
    j["steps"] = 9;
    j["events"] = json::parse(R"([{"step": 3, "type": "cut", "progress": 0.33},
                                  {"step": 6, "type": "cut", "progress": 0.66},
                                  {"step": 9, "type": "cut", "progress": 1.0}])");
    const auto sc = parse_scenario(j);
    ReducedSession s(quadratic_basis(1), sc);
    int vertices = s.mesh().vertex_count();
    std::size_t applied = 0;
    for (int step = 1; step <= sc.steps; ++step) {
        s.step();
        for (const auto &ev : sc.events)
            if (ev.step == step) {
                const VectorXd q = s.state().q;
                const auto rec = s.apply(ev);
                ++applied;
                EXPECT_TRUE(bitwise_equal(q, s.state().q));
                EXPECT_EQ(rec.at("new_evaluations").get<std::size_t>(), 0u); // split vertices share X
                EXPECT_GT(s.mesh().vertex_count(), vertices);
                vertices = s.mesh().vertex_count();
            }
    }
    EXPECT_EQ(applied, 3u);
}

TEST(Scenario, SwapUsesNewSurface) {
    json j = cube_scenario();
    j["meshes"].push_back({{"id", "ball"}, {"generate", {{"type", "cube_to_sphere"}, {"cells", 4}, {"blend", 1.0}}}});
    j["load"] = {{"gravity", {0, -9.8, 0}}};
    const auto sc = parse_scenario(j);
    ReducedSession s(quadratic_basis(), sc);
    for (int i = 0; i < 3; ++i) s.step();
    const VectorXd q = s.state().q;
    ScenarioEvent swap;
    swap.kind = ScenarioEvent::Kind::Swap;
    swap.mesh = "ball";
    s.apply(swap);
    EXPECT_EQ(s.mesh_id(), "ball");
    EXPECT_TRUE(bitwise_equal(q, s.state().q));
    const auto u = s.surface_displacement();
    const auto verts = s.mesh().surface_vertices();
    ASSERT_EQ(u.size(), verts.size());
    const auto basis = quadratic_basis();
    for (std::size_t i = 0; i < verts.size(); ++i) {
        const Vec3 direct = basis->eval(s.mesh().vertex(verts[i])) * q;
        EXPECT_EQ(u[i], direct);
    }
}
