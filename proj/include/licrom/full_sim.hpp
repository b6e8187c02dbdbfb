#pragma once

// Full-space implicit FEM integrator. Each step minimizes the incremental
// potential
//     sum_v m_v/(2h^2) |u_v - u_pred,v|^2 + sum_t vol_t psi(F_t) + penalty
// around the explicit predictor u_pred = u + h v + h^2 M^-1 f_ext by
// mass-preconditioned gradient descent with a halving backtrack.

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "licrom/dataset.hpp"
#include "licrom/fem.hpp"

namespace licrom {

struct FullState {
    std::vector<Vec3> u;
    std::vector<Vec3> v;
    double t = 0.0;

    static FullState rest(const TetMesh &mesh) {
        FullState s;
        s.u.assign(static_cast<std::size_t>(mesh.vertex_count()), Vec3::Zero());
        s.v = s.u;
        return s;
    }
};

struct DirichletConstraint {
    VertexSelector select;
    Vec3 velocity = Vec3::Zero();
};

struct PointForce {
    int vertex = 0;
    Vec3 force = Vec3::Zero();
};

// Infinite plane with an implicit penalty on penetration and infinite
// friction: penetrating vertices lose their tangential velocity.
struct CollisionPlane {
    Vec3 point = Vec3::Zero();
    Vec3 normal = Vec3::UnitY();
    // Energy density kappa/2 * depth^2 per unit reference volume (N/m^4).
    // Unset means 1e4 * E / L^2 with L the bounding-box diagonal.
    std::optional<double> stiffness;

    double signed_distance(const Vec3 &x) const { return normal.dot(x - point); }
};

inline double default_penalty_stiffness(const Material &mat, const TetMesh &mesh) {
    const double L = mesh.bbox_diagonal();
    return 1e4 * mat.youngs_modulus() / (L * L);
}

struct LoadCase {
    Vec3 gravity = Vec3::Zero();
    std::vector<DirichletConstraint> constraints;
    std::vector<PointForce> point_forces;
    std::optional<CollisionPlane> plane;

    void validate() const {
        if (plane && std::abs(plane->normal.norm() - 1.0) > 1e-12)
            throw ValidationError("collision plane normal must have unit length");
        if (plane && plane->stiffness && !(*plane->stiffness > 0))
            throw ValidationError("collision stiffness must be positive");
    }
};

struct IntegratorConfig {
    double dt = 0.01;
    int max_iterations = 50;
    double step = 1.0;      // dimensionless step on the mass-preconditioned gradient
    double tolerance = 1e-6; // on the mass-weighted RMS step, relative to the bbox diagonal
    double backtrack = 0.5;
    int max_backtracks = 40;

    void validate() const {
        if (!(dt > 0)) throw ValidationError("time step must be positive");
        if (max_iterations < 1) throw ValidationError("max_iterations must be at least 1");
        if (!(step > 0)) throw ValidationError("descent step must be positive");
        if (!(backtrack > 0 && backtrack < 1)) throw ValidationError("backtrack factor must lie in (0, 1)");
    }
};

// Energies of the initial iterate and of every accepted descent iterate.
struct StepReport {
    int iterations = 0;
    bool converged = false;
    std::vector<double> energies;

    bool monotone() const {
        for (std::size_t i = 1; i < energies.size(); ++i)
            if (energies[i] > energies[i - 1]) return false;
        return true;
    }
};

// Precomputed element data for one mesh.
class FullSpaceModel {
public:
    explicit FullSpaceModel(const TetMesh &mesh) : mesh_(&mesh), mass_(lumped_mass(mesh)) {
        rest_.reserve(static_cast<std::size_t>(mesh.tet_count()));
        for (int t = 0; t < mesh.tet_count(); ++t) rest_.push_back(tet_rest(mesh, t));
    }

    const TetMesh &mesh() const { return *mesh_; }
    const std::vector<double> &masses() const { return mass_; }

    double elastic_energy(const Material &mat, const std::vector<Vec3> &u) const {
        double e = 0.0;
        for (int t = 0; t < mesh_->tet_count(); ++t) e += tet_energy(mat, rest_[static_cast<std::size_t>(t)], corners(u, t));
        return e;
    }

    // Adds the elastic gradient into `grad`; returns the elastic energy.
    double elastic_energy_gradient(const Material &mat, const std::vector<Vec3> &u, std::vector<Vec3> &grad) const {
        double e = 0.0;
        std::array<Vec3, 4> g;
        for (int t = 0; t < mesh_->tet_count(); ++t) {
            e += tet_energy_gradient(mat, rest_[static_cast<std::size_t>(t)], corners(u, t), g);
            const auto &k = mesh_->tet(t);
            for (int c = 0; c < 4; ++c) grad[static_cast<std::size_t>(k[static_cast<std::size_t>(c)])] += g[static_cast<std::size_t>(c)];
        }
        return e;
    }

private:
    std::array<Vec3, 4> corners(const std::vector<Vec3> &u, int t) const {
        const auto &k = mesh_->tet(t);
        return {u[static_cast<std::size_t>(k[0])], u[static_cast<std::size_t>(k[1])], u[static_cast<std::size_t>(k[2])],
                u[static_cast<std::size_t>(k[3])]};
    }

    const TetMesh *mesh_;
    std::vector<double> mass_;
    std::vector<TetRest> rest_;
};

namespace detail {

struct FullProblem {
    const FullSpaceModel *model;
    const Material *mat;
    double h;
    std::vector<Vec3> pred;
    std::vector<char> fixed;
    const CollisionPlane *plane = nullptr;
    double kappa = 0.0;

    double penetration(int v, const Vec3 &u) const {
        return plane ? -plane->signed_distance(model->mesh().vertex(v) + u) : 0.0;
    }

    double energy(const std::vector<Vec3> &u) const {
        const auto &m = model->masses();
        double e = model->elastic_energy(*mat, u);
        const double rho = model->mesh().density();
        for (std::size_t v = 0; v < u.size(); ++v) {
            e += m[v] / (2 * h * h) * (u[v] - pred[v]).squaredNorm();
            if (plane) {
                const double d = penetration(static_cast<int>(v), u[v]);
                if (d > 0) e += 0.5 * kappa * (m[v] / rho) * d * d;
            }
        }
        return e;
    }

    // Energy, gradient and the per-vertex diagonal preconditioner.
    double energy_gradient(const std::vector<Vec3> &u, std::vector<Vec3> &grad, std::vector<double> &diag) const {
        const auto &m = model->masses();
        const double rho = model->mesh().density();
        grad.assign(u.size(), Vec3::Zero());
        diag.resize(u.size());
        double e = model->elastic_energy_gradient(*mat, u, grad);
        for (std::size_t v = 0; v < u.size(); ++v) {
            const Vec3 r = u[v] - pred[v];
            e += m[v] / (2 * h * h) * r.squaredNorm();
            grad[v] += m[v] / (h * h) * r;
            diag[v] = m[v] / (h * h);
            if (plane) {
                const double d = penetration(static_cast<int>(v), u[v]);
                if (d > 0) {
                    const double k = kappa * m[v] / rho;
                    e += 0.5 * k * d * d;
                    grad[v] -= k * d * plane->normal;
                    diag[v] += k;
                }
            }
        }
        return e;
    }
};

} // namespace detail

inline std::vector<char> dirichlet_mask(const TetMesh &mesh, const LoadCase &load, std::vector<Vec3> *velocity = nullptr) {
    std::vector<char> fixed(static_cast<std::size_t>(mesh.vertex_count()), 0);
    if (velocity) velocity->assign(fixed.size(), Vec3::Zero());
    for (const auto &c : load.constraints)
        for (int v : select_vertices(mesh, c.select)) {
            fixed[static_cast<std::size_t>(v)] = 1;
            if (velocity) (*velocity)[static_cast<std::size_t>(v)] = c.velocity;
        }
    return fixed;
}

inline FullState full_step(const FullSpaceModel &model, const Material &mat, const FullState &state, const LoadCase &load,
                           const IntegratorConfig &cfg, StepReport *report = nullptr) {
    const TetMesh &mesh = model.mesh();
    const auto n = static_cast<std::size_t>(mesh.vertex_count());
    if (state.u.size() != n || state.v.size() != n) throw ValidationError("state size does not match the mesh");
    cfg.validate();
    load.validate();
    const double h = cfg.dt;
    const auto &m = model.masses();

    std::vector<Vec3> presc;
    detail::FullProblem prob{&model, &mat, h, {}, dirichlet_mask(mesh, load, &presc)};
    if (load.plane) {
        prob.plane = &*load.plane;
        prob.kappa = load.plane->stiffness.value_or(default_penalty_stiffness(mat, mesh));
    }
    std::vector<Vec3> fext(n);
    for (std::size_t v = 0; v < n; ++v) fext[v] = m[v] * load.gravity;
    for (const auto &pf : load.point_forces) {
        if (pf.vertex < 0 || static_cast<std::size_t>(pf.vertex) >= n) throw ValidationError("point force vertex out of range");
        fext[static_cast<std::size_t>(pf.vertex)] += pf.force;
    }
    prob.pred.resize(n);
    for (std::size_t v = 0; v < n; ++v) prob.pred[v] = state.u[v] + h * state.v[v] + (h * h / m[v]) * fext[v];

    std::vector<Vec3> u = prob.pred;
    for (std::size_t v = 0; v < n; ++v)
        if (prob.fixed[v]) u[v] = state.u[v] + h * presc[v];

    const double scale = cfg.tolerance * mesh.bbox_diagonal();
    double total_mass = 0.0;
    for (double x : m) total_mass += x;

    StepReport local;
    StepReport &rep = report ? *report : local;
    rep = StepReport{};
    std::vector<Vec3> grad, dir(n), trial(n);
    std::vector<double> diag;
    double e = prob.energy_gradient(u, grad, diag);
    if (!std::isfinite(e)) throw DivergenceError("non-finite incremental potential", 0);
    rep.energies.push_back(e);
    for (int it = 0; it < cfg.max_iterations; ++it) {
        double rms = 0.0;
        for (std::size_t v = 0; v < n; ++v) {
            dir[v] = prob.fixed[v] ? Vec3::Zero() : Vec3(-grad[v] / diag[v]);
            rms += m[v] * dir[v].squaredNorm();
        }
        rms = std::sqrt(rms / total_mass);
        if (rms <= scale) {
            rep.converged = true;
            break;
        }
        double s = cfg.step;
        bool accepted = false;
        double e_trial = e;
        for (int b = 0; b <= cfg.max_backtracks; ++b, s *= cfg.backtrack) {
            for (std::size_t v = 0; v < n; ++v) trial[v] = u[v] + s * dir[v];
            e_trial = prob.energy(trial);
            if (std::isfinite(e_trial) && e_trial <= e) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!std::isfinite(e_trial)) throw DivergenceError("non-finite incremental potential", it + 1);
            rep.converged = true; // no decrease available at floating-point resolution
            break;
        }
        u.swap(trial);
        prob.energy_gradient(u, grad, diag);
        e = e_trial;
        rep.energies.push_back(e);
        rep.iterations = it + 1;
    }

    FullState out;
    out.t = state.t + h;
    out.u = u;
    out.v.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
        out.v[v] = prob.fixed[v] ? presc[v] : Vec3((u[v] - state.u[v]) / h);
        if (prob.plane && !prob.fixed[v] && prob.penetration(static_cast<int>(v), u[v]) > 0) {
            const Vec3 &nrm = prob.plane->normal;
            out.v[v] = out.v[v].dot(nrm) * nrm;
        }
    }
    return out;
}

inline FullState full_step(const TetMesh &mesh, const Material &mat, const FullState &state, const LoadCase &load,
                           const IntegratorConfig &cfg, StepReport *report = nullptr) {
    return full_step(FullSpaceModel(mesh), mat, state, load, cfg, report);
}

inline Frame sample_frame(const TetMesh &mesh, const FullState &state, std::size_t n, std::uint64_t seed) {
    return sample_frame(mesh, state.u, n, seed, state.t);
}

struct SamplingPolicy {
    std::size_t points_per_frame = 0; // 0 keeps every vertex
    std::uint64_t seed = 0;
    std::string mesh_id;
    std::string load_id;
};

using StepObserver = std::function<void(int step, const FullState &, const StepReport &)>;

// Runs `steps` full steps from rest and keeps every `snapshot_every`-th
// state as a sampled frame. Frame j is sampled with seed mix(seed, j).
inline SnapshotSet run_trajectory(const TetMesh &mesh, const Material &mat, const LoadCase &load,
                                  const IntegratorConfig &cfg, int steps, int snapshot_every,
                                  const SamplingPolicy &policy = {}, const StepObserver &observe = {}) {
    if (steps < 1) throw ValidationError("steps must be at least 1");
    if (snapshot_every < 1) throw ValidationError("snapshot_every must be at least 1");
    const FullSpaceModel model(mesh);
    const std::size_t n = policy.points_per_frame == 0 ? static_cast<std::size_t>(mesh.vertex_count()) : policy.points_per_frame;
    SnapshotSet set;
    FullState state = FullState::rest(mesh);
    StepReport rep;
    for (int s = 1; s <= steps; ++s) {
        state = full_step(model, mat, state, load, cfg, &rep);
        if (observe) observe(s, state, rep);
        if (s % snapshot_every == 0) {
            Frame f = sample_frame(mesh, state, n, mix_seed(policy.seed, set.frames.size()));
            f.mesh_id = policy.mesh_id;
            f.load_id = policy.load_id;
            set.frames.push_back(std::move(f));
        }
    }
    const Vec3 lo = mesh.bbox_min(), hi = mesh.bbox_max();
    set.metadata = {{"seed", policy.seed},
                    {"points_per_frame", n},
                    {"bbox", {{lo.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), hi.z()}}},
                    {"meshes", json::array({policy.mesh_id})},
                    {"loads", json::array({policy.load_id})}};
    return set;
}

} // namespace licrom
