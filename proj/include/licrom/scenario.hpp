#pragma once

// Declarative fixtures: meshes (files or generators), material, load case,
// integrator settings, snapshot cadence and scripted remesh events. Parsed
// from JSON; see docs/scenario.md for the schema.

#include <filesystem>
#include <fstream>
#include <map>

#include "licrom/checkpoint.hpp"
#include "licrom/full_sim.hpp"
#include "licrom/mesh_io.hpp"
#include "licrom/reduced_sim.hpp"

namespace licrom {

struct MeshEntry {
    std::string id;
    std::shared_ptr<const TetMesh> mesh;
};

struct ReducedSettings {
    int cubature_seeds = 100;
    int cubature_points = 0; // when > 0, overrides cubature_seeds
    WeightRule weights = WeightRule::Equal;
    double tether = 1e3;
    SolverConfig solver;
    std::string mesh; // mesh id to simulate; empty = first
};

// One scripted topology edit, applied after the given step completes.
struct ScenarioEvent {
    enum class Kind { Punch, Cut, Swap };
    int step = 0;
    Kind kind = Kind::Punch;
    // punch: sphere, or an infinite cylinder when `axis` is set
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
    std::optional<Vec3> axis;
    // cut: Y tear at `progress`, or explicit x-z segments
    std::optional<double> progress;
    double branch_length = 0.25;
    std::vector<SegmentCut::Segment> segments;
    // swap
    std::string mesh;

    std::string type_name() const {
        switch (kind) {
        case Kind::Punch: return "punch";
        case Kind::Cut: return "cut";
        case Kind::Swap: return "swap";
        }
        return "?";
    }
};

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 0;
    std::vector<MeshEntry> meshes;
    Material material;
    LoadCase load;
    IntegratorConfig integrator;
    int steps = 100;
    int snapshot_every = 5;
    std::size_t samples_per_frame = 0; // 0 = every vertex
    ReducedSettings reduced;
    std::vector<ScenarioEvent> events;

    const MeshEntry &mesh(const std::string &id) const {
        for (const auto &m : meshes)
            if (m.id == id) return m;
        throw ConfigError("unknown mesh id '" + id + "'");
    }
    const MeshEntry &simulated_mesh() const { return reduced.mesh.empty() ? meshes.front() : mesh(reduced.mesh); }
};

namespace detail {

inline void check_keys(const json &j, std::initializer_list<const char *> known, const std::string &where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto &[k, v] : j.items())
        if (std::find_if(known.begin(), known.end(), [&](const char *s) { return k == s; }) == known.end())
            throw ConfigError("unknown key '" + k + "' in " + where);
}

inline Vec3 vec3_from(const json &j, const std::string &where) {
    if (!j.is_array() || j.size() != 3) throw ConfigError(where + " must be an array of 3 numbers");
    Vec3 v;
    for (int d = 0; d < 3; ++d) {
        if (!j[static_cast<std::size_t>(d)].is_number()) throw ConfigError(where + " must be an array of 3 numbers");
        v[d] = j[static_cast<std::size_t>(d)].get<double>();
    }
    if (!v.allFinite()) throw ConfigError(where + " must be finite");
    return v;
}

template <class T>
T get_or(const json &j, const char *key, T fallback, const std::string &where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception &) {
        throw ConfigError("bad value for '" + std::string(key) + "' in " + where);
    }
}

inline int axis_index(const json &j, const std::string &where) {
    const auto a = j.get<std::string>();
    if (a == "x") return 0;
    if (a == "y") return 1;
    if (a == "z") return 2;
    throw ConfigError(where + ": axis must be x, y or z");
}

inline TetMesh generate_mesh(const json &g, double density, const std::string &where) {
    check_keys(g, {"type", "cells", "lo", "hi", "blend", "mirror_negative_x", "thickness"}, where);
    const auto type = get_or<std::string>(g, "type", "", where);
    if (type == "box" || type == "plate") {
        GridSpec spec;
        if (type == "plate") {
            const double th = get_or(g, "thickness", 0.1, where);
            if (!(th > 0)) throw ConfigError(where + ": thickness must be positive");
            spec.lo = Vec3(-0.5, -th / 2, -0.5);
            spec.hi = Vec3(0.5, th / 2, 0.5);
            spec.cells = Eigen::Vector3i(16, 1, 16);
            spec.mirror_negative_x = true;
        }
        if (g.contains("cells")) {
            const auto &c = g.at("cells");
            if (c.is_number_integer())
                spec.cells.setConstant(c.get<int>());
            else if (c.is_array() && c.size() == 3)
                spec.cells = Eigen::Vector3i(c[0].get<int>(), c[1].get<int>(), c[2].get<int>());
            else
                throw ConfigError(where + ": cells must be an integer or [nx, ny, nz]");
        }
        if (g.contains("lo")) spec.lo = vec3_from(g.at("lo"), where + ".lo");
        if (g.contains("hi")) spec.hi = vec3_from(g.at("hi"), where + ".hi");
        spec.mirror_negative_x = get_or(g, "mirror_negative_x", spec.mirror_negative_x, where);
        if (!(spec.hi.array() > spec.lo.array()).all()) throw ConfigError(where + ": hi must exceed lo on every axis");
        return box_grid(spec, density);
    }
    if (type == "cube_to_sphere") {
        const int cells = get_or(g, "cells", 8, where);
        const double blend = get_or(g, "blend", 0.0, where);
        if (!(blend >= 0 && blend <= 1)) throw ConfigError(where + ": blend must lie in [0, 1]");
        return cube_to_sphere(cells, blend, density);
    }
    throw ConfigError(where + ": unknown generator type '" + type + "'");
}

inline VertexSelector selector_from(const json &j, const std::string &where) {
    check_keys(j, {"axis", "above", "below", "tag", "indices"}, where);
    if (j.contains("tag")) return VertexSelector::with_tag(j.at("tag").get<int>());
    if (j.contains("indices")) return VertexSelector::of(j.at("indices").get<std::vector<int>>());
    if (!j.contains("axis")) throw ConfigError(where + " needs axis with above/below, tag, or indices");
    const int axis = axis_index(j.at("axis"), where);
    if (j.contains("above") == j.contains("below")) throw ConfigError(where + " needs exactly one of above/below");
    return j.contains("above") ? VertexSelector::above(axis, j.at("above").get<double>())
                               : VertexSelector::below(axis, j.at("below").get<double>());
}

inline LoadCase load_from(const json &j) {
    check_keys(j, {"gravity", "dirichlet", "plane", "point_forces"}, "load");
    LoadCase lc;
    if (j.contains("gravity")) lc.gravity = vec3_from(j.at("gravity"), "load.gravity");
    for (const auto &d : j.value("dirichlet", json::array())) {
        check_keys(d, {"select", "velocity"}, "load.dirichlet[]");
        DirichletConstraint c;
        c.select = selector_from(d.at("select"), "load.dirichlet[].select");
        if (d.contains("velocity")) c.velocity = vec3_from(d.at("velocity"), "load.dirichlet[].velocity");
        lc.constraints.push_back(std::move(c));
    }
    for (const auto &p : j.value("point_forces", json::array())) {
        check_keys(p, {"vertex", "force"}, "load.point_forces[]");
        lc.point_forces.push_back({p.at("vertex").get<int>(), vec3_from(p.at("force"), "load.point_forces[].force")});
    }
    if (j.contains("plane")) {
        const auto &p = j.at("plane");
        check_keys(p, {"point", "normal", "stiffness"}, "load.plane");
        CollisionPlane pl;
        if (p.contains("point")) pl.point = vec3_from(p.at("point"), "load.plane.point");
        if (p.contains("normal")) {
            const Vec3 n = vec3_from(p.at("normal"), "load.plane.normal");
            if (!(n.norm() > 0)) throw ConfigError("load.plane.normal must be non-zero");
            pl.normal = n.normalized();
        }
        if (p.contains("stiffness")) pl.stiffness = p.at("stiffness").get<double>();
        lc.plane = pl;
    }
    try {
        lc.validate();
    } catch (const ValidationError &e) {
        throw ConfigError(e.what());
    }
    return lc;
}

inline ScenarioEvent event_from(const json &j) {
    check_keys(j, {"step", "type", "center", "radius", "axis", "progress", "branch_length", "segments", "mesh"}, "events[]");
    ScenarioEvent ev;
    ev.step = get_or(j, "step", -1, "events[]");
    const auto type = get_or<std::string>(j, "type", "", "events[]");
    if (type == "punch") {
        ev.kind = ScenarioEvent::Kind::Punch;
        ev.center = vec3_from(j.at("center"), "events[].center");
        ev.radius = get_or(j, "radius", 0.0, "events[]");
        if (!(ev.radius > 0)) throw ConfigError("punch radius must be positive");
        if (j.contains("axis")) {
            const Vec3 a = vec3_from(j.at("axis"), "events[].axis");
            if (!(a.norm() > 0)) throw ConfigError("punch axis must be non-zero");
            ev.axis = a.normalized();
        }
    } else if (type == "cut") {
        ev.kind = ScenarioEvent::Kind::Cut;
        if (j.contains("progress")) ev.progress = j.at("progress").get<double>();
        ev.branch_length = get_or(j, "branch_length", ev.branch_length, "events[]");
        for (const auto &s : j.value("segments", json::array())) {
            if (!s.is_array() || s.size() != 4) throw ConfigError("cut segments are [ax, az, bx, bz]");
            ev.segments.push_back({Eigen::Vector2d(s[0].get<double>(), s[1].get<double>()),
                                   Eigen::Vector2d(s[2].get<double>(), s[3].get<double>())});
        }
        if (!ev.progress && ev.segments.empty()) throw ConfigError("cut event needs progress or segments");
    } else if (type == "swap") {
        ev.kind = ScenarioEvent::Kind::Swap;
        ev.mesh = get_or<std::string>(j, "mesh", "", "events[]");
        if (ev.mesh.empty()) throw ConfigError("swap event needs a mesh id");
    } else {
        throw ConfigError("unknown event type '" + type + "'");
    }
    return ev;
}

} // namespace detail

// Events from a standalone file ({"events": [...]}) or an inline array.
inline std::vector<ScenarioEvent> parse_events(const json &j) {
    const json &arr = j.is_object() ? j.at("events") : j;
    if (!arr.is_array()) throw ConfigError("events must be an array");
    std::vector<ScenarioEvent> out;
    for (const auto &e : arr) out.push_back(detail::event_from(e));
    std::stable_sort(out.begin(), out.end(), [](const auto &a, const auto &b) { return a.step < b.step; });
    return out;
}

inline void validate_events(const Scenario &sc, const std::vector<ScenarioEvent> &events) {
    for (const auto &e : events) {
        if (e.step < 1 || e.step > sc.steps)
            throw ConfigError("event step " + std::to_string(e.step) + " outside [1, " + std::to_string(sc.steps) + "]");
        if (e.kind == ScenarioEvent::Kind::Swap) sc.mesh(e.mesh);
    }
}

// `base` resolves relative mesh paths.
inline Scenario parse_scenario(const json &j, const std::filesystem::path &base = {}) {
    using detail::get_or;
    detail::check_keys(j, {"name", "seed", "density", "meshes", "material", "load", "integrator", "steps", "snapshot_every",
                           "samples_per_frame", "reduced", "events"},
                       "scenario");
    Scenario sc;
    sc.name = get_or<std::string>(j, "name", sc.name, "scenario");
    sc.seed = get_or<std::uint64_t>(j, "seed", 0, "scenario");
    const double density = get_or(j, "density", 1000.0, "scenario");
    if (!(density > 0)) throw ConfigError("density must be positive");

    if (!j.contains("meshes") || !j.at("meshes").is_array() || j.at("meshes").empty())
        throw ConfigError("scenario needs a non-empty meshes array");
    for (const auto &m : j.at("meshes")) {
        detail::check_keys(m, {"id", "path", "generate"}, "meshes[]");
        MeshEntry e;
        e.id = get_or<std::string>(m, "id", "", "meshes[]");
        if (e.id.empty()) throw ConfigError("every mesh needs an id");
        for (const auto &o : sc.meshes)
            if (o.id == e.id) throw ConfigError("duplicate mesh id '" + e.id + "'");
        if (m.contains("path") == m.contains("generate")) throw ConfigError("mesh '" + e.id + "' needs exactly one of path/generate");
        try {
            if (m.contains("path")) {
                std::filesystem::path p = m.at("path").get<std::string>();
                if (p.is_relative() && !base.empty()) p = base / p;
                e.mesh = std::make_shared<const TetMesh>(load_mesh(p, density));
            } else {
                e.mesh = std::make_shared<const TetMesh>(detail::generate_mesh(m.at("generate"), density, "mesh '" + e.id + "'"));
            }
        } catch (const ValidationError &err) {
            throw ConfigError("mesh '" + e.id + "': " + err.what());
        }
        sc.meshes.push_back(std::move(e));
    }

    const json mat = j.value("material", json::object());
    detail::check_keys(mat, {"youngs_modulus", "poisson_ratio"}, "material");
    try {
        sc.material = Material(get_or(mat, "youngs_modulus", 2.5e6, "material"), get_or(mat, "poisson_ratio", 0.25, "material"));
    } catch (const ValidationError &e) {
        throw ConfigError(e.what());
    }
    sc.load = detail::load_from(j.value("load", json::object()));

    const json integ = j.value("integrator", json::object());
    detail::check_keys(integ, {"dt", "max_iterations", "step", "tolerance", "backtrack", "max_backtracks"}, "integrator");
    sc.integrator.dt = get_or(integ, "dt", sc.integrator.dt, "integrator");
    sc.integrator.max_iterations = get_or(integ, "max_iterations", sc.integrator.max_iterations, "integrator");
    sc.integrator.step = get_or(integ, "step", sc.integrator.step, "integrator");
    sc.integrator.tolerance = get_or(integ, "tolerance", sc.integrator.tolerance, "integrator");
    sc.integrator.backtrack = get_or(integ, "backtrack", sc.integrator.backtrack, "integrator");
    sc.integrator.max_backtracks = get_or(integ, "max_backtracks", sc.integrator.max_backtracks, "integrator");
    try {
        sc.integrator.validate();
    } catch (const ValidationError &e) {
        throw ConfigError(e.what());
    }

    sc.steps = get_or(j, "steps", sc.steps, "scenario");
    sc.snapshot_every = get_or(j, "snapshot_every", sc.snapshot_every, "scenario");
    sc.samples_per_frame = get_or<std::size_t>(j, "samples_per_frame", 0, "scenario");
    if (sc.steps < 1) throw ConfigError("steps must be at least 1");
    if (sc.snapshot_every < 1) throw ConfigError("snapshot_every must be at least 1");
    for (const auto &m : sc.meshes)
        if (sc.samples_per_frame > static_cast<std::size_t>(m.mesh->vertex_count()))
            throw ConfigError("samples_per_frame exceeds the vertex count of mesh '" + m.id + "'");

    const json red = j.value("reduced", json::object());
    detail::check_keys(red, {"cubature_seeds", "cubature_points", "weights", "tether", "mesh", "solver"}, "reduced");
    auto &rs = sc.reduced;
    rs.cubature_seeds = get_or(red, "cubature_seeds", rs.cubature_seeds, "reduced");
    rs.cubature_points = get_or(red, "cubature_points", rs.cubature_points, "reduced");
    rs.tether = get_or(red, "tether", rs.tether, "reduced");
    rs.mesh = get_or<std::string>(red, "mesh", "", "reduced");
    const auto w = get_or<std::string>(red, "weights", "equal", "reduced");
    if (w == "equal")
        rs.weights = WeightRule::Equal;
    else if (w == "dual_volume")
        rs.weights = WeightRule::DualVolume;
    else
        throw ConfigError("reduced.weights must be equal or dual_volume");
    if (rs.cubature_seeds < 1 && rs.cubature_points < 1) throw ConfigError("cubature needs at least one seed");
    if (!(rs.tether >= 0)) throw ConfigError("tether must be non-negative");
    const json sol = red.value("solver", json::object());
    detail::check_keys(sol, {"step", "max_iterations", "tolerance", "backtrack", "max_backtracks"}, "reduced.solver");
    rs.solver.step = get_or(sol, "step", rs.solver.step, "reduced.solver");
    rs.solver.max_iterations = get_or(sol, "max_iterations", rs.solver.max_iterations, "reduced.solver");
    rs.solver.tolerance = get_or(sol, "tolerance", rs.solver.tolerance, "reduced.solver");
    rs.solver.backtrack = get_or(sol, "backtrack", rs.solver.backtrack, "reduced.solver");
    rs.solver.max_backtracks = get_or(sol, "max_backtracks", rs.solver.max_backtracks, "reduced.solver");
    try {
        rs.solver.validate();
    } catch (const ValidationError &e) {
        throw ConfigError(e.what());
    }
    if (!rs.mesh.empty()) sc.mesh(rs.mesh);

    if (j.contains("events")) sc.events = parse_events(j.at("events"));
    validate_events(sc, sc.events);
    return sc;
}

inline json read_json_file(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error &e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline Scenario load_scenario(const std::filesystem::path &path) {
    return parse_scenario(read_json_file(path), path.parent_path());
}

// Full-space trajectories of every mesh, concatenated. Mesh k is sampled
// with seed mix(seed, k); frames carry the mesh id.
inline SnapshotSet generate_dataset(const Scenario &sc, const StepObserver &observe = {}) {
    SnapshotSet out;
    json meshes = json::array();
    for (std::size_t k = 0; k < sc.meshes.size(); ++k) {
        const auto &m = sc.meshes[k];
        SamplingPolicy pol{sc.samples_per_frame, mix_seed(sc.seed, k), m.id, sc.name};
        auto part = run_trajectory(*m.mesh, sc.material, sc.load, sc.integrator, sc.steps, sc.snapshot_every, pol, observe);
        for (auto &f : part.frames) out.frames.push_back(std::move(f));
        meshes.push_back(m.id);
    }
    const auto [lo, hi] = out.bounds();
    out.metadata = {{"scenario", sc.name},
                    {"seed", sc.seed},
                    {"meshes", meshes},
                    {"points_per_frame", out.cardinality().value_or(0)},
                    {"bbox", {{lo.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), hi.z()}}}};
    return out;
}

// Reduced simulation of one mesh with a trained (or analytic) basis. Owns
// the basis cache, the cubature scheme and the latent state; remesh events
// swap the scheme and leave the state alone.
class ReducedSession {
public:
    ReducedSession(std::shared_ptr<const DisplacementBasis> basis, const Scenario &sc, std::string mesh_id = {})
        : cache_(std::move(basis)), material_(sc.material), load_(sc.load), solver_(sc.reduced.solver), seed_(sc.seed),
          registry_(sc.meshes) {
        const auto &entry = mesh_id.empty() ? sc.simulated_mesh() : sc.mesh(mesh_id);
        mesh_id_ = entry.id;
        cfg_.rule = sc.reduced.weights;
        cfg_.tether = sc.reduced.tether;
        cfg_.seed = sc.seed;
        cfg_.seeds = sc.reduced.cubature_points > 0 ? seeds_for_point_count(*entry.mesh, sc.reduced.cubature_points, sc.seed)
                                                    : sc.reduced.cubature_seeds;
        const auto t0 = std::chrono::steady_clock::now();
        scheme_ = std::make_unique<CubatureScheme>(sample_cubature(entry.mesh, cfg_, cache_, load_.constraints));
        setup_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state_ = ReducedState::rest(cache_.rank(), sc.integrator.dt);
    }

    const CubatureScheme &scheme() const { return *scheme_; }
    const ReducedState &state() const { return state_; }
    ReducedState &state() { return state_; }
    BasisCache &cache() { return cache_; }
    const std::string &mesh_id() const { return mesh_id_; }
    const TetMesh &mesh() const { return scheme_->mesh(); }
    const LoadCase &load() const { return load_; }
    const Material &material() const { return material_; }
    double setup_seconds() const { return setup_seconds_; }
    std::uint64_t topology_version() const { return topology_version_; }

    StepReport step(const PointVectors *extra_forces = nullptr) {
        StepReport rep;
        state_ = reduced_step(*scheme_, state_, load_, material_, solver_, extra_forces, &rep);
        return rep;
    }

    // Applies a scripted event. Returns a JSON record of what changed.
    json apply(const ScenarioEvent &ev) {
        RemeshEvent re;
        re.time = state_.t;
        if (ev.kind == ScenarioEvent::Kind::Punch) {
            const Vec3 c = ev.center;
            const double r = ev.radius;
            const auto axis = ev.axis;
            re.change = ExciseEvent{[c, r, axis](const Vec3 &x) {
                Vec3 d = x - c;
                if (axis) d -= axis->dot(d) * *axis;
                return d.norm() <= r;
            }};
        } else if (ev.kind == ScenarioEvent::Kind::Cut) {
            SegmentCut cut = ev.progress ? y_cut(*ev.progress, ev.branch_length) : SegmentCut{};
            for (const auto &s : ev.segments) cut.segments.push_back(s);
            re.change = CutEvent{cut};
        } else {
            re.change = ReplaceMeshEvent{mesh_by_id(ev.mesh)};
        }
        json rec = apply(re);
        rec["type"] = ev.type_name();
        if (ev.kind == ScenarioEvent::Kind::Swap) mesh_id_ = ev.mesh;
        return rec;
    }

    json apply(const RemeshEvent &re) {
        const double w_before = scheme_->total_weight();
        auto res = apply_remesh(*scheme_, re, cache_, mix_seed(seed_, ++topology_version_));
        scheme_ = std::make_unique<CubatureScheme>(std::move(res.scheme));
        return {{"t", state_.t},
                {"removed_volume", res.removed_volume},
                {"weight_before", w_before},
                {"weight_after", scheme_->total_weight()},
                {"new_evaluations", res.new_evaluations},
                {"points", scheme_->size()},
                {"vertices", scheme_->mesh().vertex_count()}};
    }

    std::shared_ptr<const TetMesh> mesh_by_id(const std::string &id) const {
        for (const auto &m : registry_)
            if (m.id == id) return m.mesh;
        throw ConfigError("unknown mesh id '" + id + "'");
    }
    bool has_mesh(const std::string &id) const {
        return std::any_of(registry_.begin(), registry_.end(), [&](const MeshEntry &m) { return m.id == id; });
    }

    // Displacement of every surface vertex (in mesh.surface_vertices() order).
    std::vector<Vec3> surface_displacement() {
        std::vector<Vec3> X;
        for (int v : scheme_->mesh().surface_vertices()) X.push_back(scheme_->mesh().vertex(v));
        const auto W = cache_.get_many(X);
        std::vector<Vec3> u(W.size());
        for (std::size_t i = 0; i < W.size(); ++i) u[i] = W[i] * state_.q;
        return u;
    }

private:
    BasisCache cache_;
    Material material_;
    LoadCase load_;
    SolverConfig solver_;
    CubatureConfig cfg_;
    std::uint64_t seed_;
    std::vector<MeshEntry> registry_;
    std::unique_ptr<CubatureScheme> scheme_;
    ReducedState state_;
    std::string mesh_id_;
    double setup_seconds_ = 0;
    std::uint64_t topology_version_ = 0;
};

} // namespace licrom
