#pragma once

// Subspace dynamics over a continuous basis. Displacements are W(X) q, the
// incremental potential is integrated with cubature at a sampled vertex set,
// each descent iterate is a per-point increment projected back into the
// subspace by a weighted least-squares fit with a cached Cholesky factor.

#include <memory>
#include <optional>
#include <variant>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "licrom/basis.hpp"
#include "licrom/fem.hpp"
#include "licrom/full_sim.hpp"
#include "licrom/mesh_ops.hpp"

namespace licrom {

enum class WeightRule {
    Equal,      // w_i = Vol / N
    DualVolume, // w_i proportional to the lumped vertex volume, normalized to Vol
};

struct CubatureConfig {
    int seeds = 100; // m random vertices; their one-rings are added
    std::uint64_t seed = 0;
    WeightRule rule = WeightRule::Equal;
    double tether = 1e3; // Dirichlet tether stiffness in units of m_i / h^2
};

// Cubature points are mesh vertices. The elastic term is integrated over the
// tets incident to a seed vertex; every corner of those tets is a point.
class CubatureScheme {
public:
    struct Element {
        TetRest rest;
        std::array<int, 4> corner; // cubature point indices
        double coeff = 0.0;        // this tet's share of sum_i w_i psi_i, in m^3
    };

    int rank() const { return rank_; }
    std::size_t size() const { return vertex_.size(); }
    const TetMesh &mesh() const { return *mesh_; }
    std::shared_ptr<const TetMesh> mesh_ptr() const { return mesh_; }
    const CubatureConfig &config() const { return cfg_; }

    const std::vector<int> &seeds() const { return seeds_; }
    const std::vector<int> &vertices() const { return vertex_; }
    const Vec3 &position(std::size_t i) const { return mesh_->vertex(vertex_[i]); }
    const std::vector<double> &weights() const { return weights_; }
    const std::vector<double> &masses() const { return masses_; }
    const std::vector<double> &metric_weights() const { return omega_; }
    const std::vector<char> &dirichlet() const { return dirichlet_; }
    const std::vector<Vec3> &prescribed_velocity() const { return velocity_; }
    const std::vector<DirichletConstraint> &constraints() const { return constraints_; }
    const std::vector<Element> &elements() const { return elements_; }
    const Eigen::MatrixXd &basis_stack() const { return Wstack_; } // 3N x r
    auto basis_block(std::size_t i) const { return Wstack_.middleRows<3>(3 * static_cast<Eigen::Index>(i)); }
    const Eigen::MatrixXd &gram() const { return G_; }

    double total_weight() const {
        double s = 0;
        for (double w : weights_) s += w;
        return s;
    }
    // Cubature point index of a mesh vertex, or -1.
    int point_of_vertex(int v) const { return point_of_[static_cast<std::size_t>(v)]; }

    bool factor_valid() const { return factor_generation_ == generation_; }

    // G = sum_i omega_i W_i^T W_i, factored by Cholesky.
    void refactor() {
        const auto r = static_cast<Eigen::Index>(rank_);
        G_ = Eigen::MatrixXd::Zero(r, r);
        for (std::size_t i = 0; i < size(); ++i) G_.noalias() += omega_[i] * basis_block(i).transpose() * basis_block(i);
        llt_.compute(G_);
        const double scale = G_.diagonal().cwiseAbs().maxCoeff();
        bool ok = llt_.info() == Eigen::Success && scale > 0;
        if (ok) {
            const auto &L = llt_.matrixLLT();
            for (Eigen::Index k = 0; k < r; ++k) ok = ok && L(k, k) * L(k, k) > 1e-13 * scale;
        }
        if (!ok)
            throw DegenerateCubatureError("cubature Gram matrix is singular for this basis (" + std::to_string(size()) +
                                          " points, r = " + std::to_string(rank_) + "); sample more vertices");
        factor_generation_ = generation_;
    }

    // Rescales every weight and mass; invalidates the factor.
    void scale_weights(double s) {
        if (!(s > 0)) throw ValidationError("weight scale must be positive");
        for (auto &w : weights_) w *= s;
        for (auto &m : masses_) m *= s;
        for (auto &o : omega_) o *= s;
        for (auto &e : elements_) e.coeff *= s;
        ++generation_;
    }

    const Eigen::LLT<Eigen::MatrixXd> &factor() const {
        if (!factor_valid()) throw StaleFactorError();
        return llt_;
    }

private:
    friend CubatureScheme build_scheme(std::shared_ptr<const TetMesh>, std::vector<int>, BasisCache &, const CubatureConfig &,
                                       const std::vector<DirichletConstraint> &);

    int rank_ = 0;
    std::shared_ptr<const TetMesh> mesh_;
    CubatureConfig cfg_;
    std::vector<int> seeds_, vertex_, point_of_;
    std::vector<double> weights_, masses_, omega_;
    std::vector<char> dirichlet_;
    std::vector<Vec3> velocity_;
    std::vector<DirichletConstraint> constraints_;
    std::vector<Element> elements_;
    Eigen::MatrixXd Wstack_, G_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    std::uint64_t generation_ = 0, factor_generation_ = ~std::uint64_t{0};
};

// Scheme over the given seed vertices: points are the seeds and their
// one-rings in ascending vertex order. W values come through `cache`.
inline CubatureScheme build_scheme(std::shared_ptr<const TetMesh> mesh, std::vector<int> seeds, BasisCache &cache,
                                   const CubatureConfig &cfg, const std::vector<DirichletConstraint> &constraints = {}) {
    if (!mesh || mesh->tet_count() == 0) throw ValidationError("cubature needs a non-empty mesh");
    if (seeds.empty()) throw ValidationError("cubature needs at least one seed vertex");
    if (!(cfg.tether >= 0)) throw ValidationError("tether stiffness must be non-negative");
    const TetMesh &m = *mesh;
    const auto nv = static_cast<std::size_t>(m.vertex_count());
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    for (int s : seeds)
        if (s < 0 || static_cast<std::size_t>(s) >= nv) throw ValidationError("seed vertex out of range");

    CubatureScheme sc;
    sc.mesh_ = mesh;
    sc.cfg_ = cfg;
    sc.rank_ = cache.rank();
    sc.constraints_ = constraints;
    sc.seeds_ = seeds;

    std::vector<char> in_set(nv, 0), tet_in(static_cast<std::size_t>(m.tet_count()), 0);
    std::vector<int> tets;
    for (int s : seeds)
        for (int t : m.tets_of_vertex(s)) {
            if (tet_in[static_cast<std::size_t>(t)]) continue;
            tet_in[static_cast<std::size_t>(t)] = 1;
            tets.push_back(t);
            for (int v : m.tet(t)) in_set[static_cast<std::size_t>(v)] = 1;
        }
    for (int s : seeds) in_set[static_cast<std::size_t>(s)] = 1; // isolated vertices
    std::sort(tets.begin(), tets.end());
    sc.point_of_.assign(nv, -1);
    for (std::size_t v = 0; v < nv; ++v)
        if (in_set[v]) {
            sc.point_of_[v] = static_cast<int>(sc.vertex_.size());
            sc.vertex_.push_back(static_cast<int>(v));
        }
    const std::size_t N = sc.vertex_.size();

    const double vol = m.total_volume();
    sc.weights_.assign(N, vol / static_cast<double>(N));
    if (cfg.rule == WeightRule::DualVolume) {
        const auto dual = lumped_volumes(m);
        double sum = 0;
        for (std::size_t i = 0; i < N; ++i) sum += dual[static_cast<std::size_t>(sc.vertex_[i])];
        for (std::size_t i = 0; i < N; ++i) sc.weights_[i] = dual[static_cast<std::size_t>(sc.vertex_[i])] * vol / sum;
    }
    sc.masses_.resize(N);
    for (std::size_t i = 0; i < N; ++i) sc.masses_[i] = m.density() * sc.weights_[i];

    std::vector<Vec3> presc;
    const auto fixed = dirichlet_mask(m, LoadCase{Vec3::Zero(), constraints, {}, std::nullopt}, &presc);
    sc.dirichlet_.resize(N);
    sc.velocity_.resize(N);
    sc.omega_.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        const auto v = static_cast<std::size_t>(sc.vertex_[i]);
        sc.dirichlet_[i] = fixed[v];
        sc.velocity_[i] = presc[v];
        sc.omega_[i] = sc.weights_[i] * (1.0 + (fixed[v] ? cfg.tether : 0.0));
    }

    // Point i's energy density is the volume average of psi over its incident
    // elastic tets, so tet t carries vol_t * sum_{corners i} w_i / V_i.
    std::vector<double> support(N, 0.0);
    for (int t : tets)
        for (int v : m.tet(t)) support[static_cast<std::size_t>(sc.point_of_[static_cast<std::size_t>(v)])] += m.volume(t);
    sc.elements_.reserve(tets.size());
    for (int t : tets) {
        CubatureScheme::Element e;
        e.rest = tet_rest(m, t);
        double share = 0;
        for (int c = 0; c < 4; ++c) {
            const int p = sc.point_of_[static_cast<std::size_t>(m.tet(t)[static_cast<std::size_t>(c)])];
            e.corner[static_cast<std::size_t>(c)] = p;
            share += sc.weights_[static_cast<std::size_t>(p)] / support[static_cast<std::size_t>(p)];
        }
        e.coeff = e.rest.volume * share;
        sc.elements_.push_back(e);
    }

    std::vector<Vec3> X(N);
    for (std::size_t i = 0; i < N; ++i) X[i] = m.vertex(sc.vertex_[i]);
    const auto W = cache.get_many(X);
    sc.Wstack_.resize(3 * static_cast<Eigen::Index>(N), sc.rank_);
    for (std::size_t i = 0; i < N; ++i) sc.Wstack_.middleRows<3>(3 * static_cast<Eigen::Index>(i)) = W[i];
    sc.refactor();
    return sc;
}

// m uniformly random seed vertices plus their one-rings.
inline CubatureScheme sample_cubature(std::shared_ptr<const TetMesh> mesh, const CubatureConfig &cfg, BasisCache &cache,
                                      const std::vector<DirichletConstraint> &constraints = {}) {
    if (!mesh) throw ValidationError("cubature needs a mesh");
    if (cfg.seeds < 1) throw ValidationError("cubature needs at least one seed vertex");
    const int m = std::min(cfg.seeds, mesh->vertex_count());
    return build_scheme(mesh, sample_without_replacement(mesh->vertex_count(), m, cfg.seed), cache, cfg, constraints);
}

inline CubatureScheme sample_cubature(const TetMesh &mesh, const CubatureConfig &cfg, BasisCache &cache,
                                      const std::vector<DirichletConstraint> &constraints = {}) {
    return sample_cubature(std::make_shared<const TetMesh>(mesh), cfg, cache, constraints);
}

// Smallest seed count (in the seeded permutation order) whose closure has at
// least `points` vertices.
inline int seeds_for_point_count(const TetMesh &mesh, int points, std::uint64_t seed) {
    const auto order = sample_without_replacement(mesh.vertex_count(), mesh.vertex_count(), seed);
    std::vector<char> in(static_cast<std::size_t>(mesh.vertex_count()), 0);
    int count = 0, used = 0;
    for (int s : order) {
        if (count >= points) break;
        ++used;
        auto add = [&](int v) {
            if (!in[static_cast<std::size_t>(v)]) {
                in[static_cast<std::size_t>(v)] = 1;
                ++count;
            }
        };
        add(s);
        for (int w : mesh.one_ring(s)) add(w);
    }
    return std::max(used, 1);
}

struct ReducedState {
    Eigen::VectorXd q, q_prev;
    double h = 0.01;
    double t = 0.0;

    static ReducedState rest(int rank, double h) {
        return {Eigen::VectorXd::Zero(rank), Eigen::VectorXd::Zero(rank), h, 0.0};
    }
    Eigen::VectorXd velocity() const { return (q - q_prev) / h; }
};

struct SolverConfig {
    double step = 1.0;       // alpha = step * h^2 / rho
    int max_iterations = 50;
    double tolerance = 1e-6; // on the metric RMS increment, relative to the bbox diagonal
    double backtrack = 0.5;
    int max_backtracks = 40;

    void validate() const {
        if (!(step > 0)) throw ValidationError("descent step must be positive");
        if (max_iterations < 1) throw ValidationError("max_iterations must be at least 1");
        if (!(backtrack > 0 && backtrack < 1)) throw ValidationError("backtrack factor must lie in (0, 1)");
    }
};

using PointVectors = Eigen::VectorXd; // 3N, point i at rows 3i..3i+2

// u_pred,i = W_i q^n + W_i (q^n - q^n-1) + h^2 f_i / m_i
inline PointVectors predictor(const CubatureScheme &sc, const ReducedState &s, const PointVectors &f_ext) {
    if (s.q.size() != sc.rank() || s.q_prev.size() != sc.rank()) throw ValidationError("latent state does not match the basis rank");
    PointVectors u = sc.basis_stack() * (2.0 * s.q - s.q_prev);
    for (std::size_t i = 0; i < sc.size(); ++i) u.segment<3>(3 * static_cast<Eigen::Index>(i)) += s.h * s.h / sc.masses()[i] * f_ext.segment<3>(3 * static_cast<Eigen::Index>(i));
    return u;
}

// External forces per cubature point: gravity on the lumped masses, point
// forces on mesh vertices that are cubature points, plus `extra`.
inline PointVectors external_forces(const CubatureScheme &sc, const LoadCase &load, const PointVectors *extra = nullptr) {
    PointVectors f(3 * static_cast<Eigen::Index>(sc.size()));
    for (std::size_t i = 0; i < sc.size(); ++i) f.segment<3>(3 * static_cast<Eigen::Index>(i)) = sc.masses()[i] * load.gravity;
    for (const auto &pf : load.point_forces) {
        if (pf.vertex < 0 || pf.vertex >= sc.mesh().vertex_count()) throw ValidationError("point force vertex out of range");
        if (int p = sc.point_of_vertex(pf.vertex); p >= 0) f.segment<3>(3 * p) += pf.force;
    }
    if (extra) {
        if (extra->size() != f.size()) throw ValidationError("per-point force vector has the wrong length");
        f += *extra;
    }
    return f;
}

// The cubature incremental potential
//   sum_i m_i/(2h^2) |W_i q - u_pred,i|^2 + sum_t c_t psi(F_t) + tether + penalty
// and its gradient with respect to the per-point displacements.
class ReducedProblem {
public:
    ReducedProblem(const CubatureScheme &sc, const Material &mat, double h, PointVectors u_pred)
        : sc_(&sc), mat_(&mat), h_(h), pred_(std::move(u_pred)) {
        if (pred_.size() != 3 * static_cast<Eigen::Index>(sc.size())) throw ValidationError("predictor has the wrong length");
        target_ = pred_;
    }

    // Dirichlet points are tethered to target instead of the predictor.
    void set_dirichlet_target(PointVectors target) { target_ = std::move(target); }
    void set_plane(const CollisionPlane *plane, double kappa) {
        plane_ = plane;
        kappa_ = kappa;
    }

    const CubatureScheme &scheme() const { return *sc_; }
    const PointVectors &prediction() const { return pred_; }
    double h() const { return h_; }

    double energy_of(const PointVectors &u) const { return evaluate(u, nullptr); }
    double energy(const Eigen::VectorXd &q) const { return energy_of(sc_->basis_stack() * q); }

    // Energy and per-point gradient at displacements u.
    double energy_gradient_of(const PointVectors &u, PointVectors &grad) const { return evaluate(u, &grad); }
    double energy_gradient(const Eigen::VectorXd &q, PointVectors &grad) const {
        return energy_gradient_of(sc_->basis_stack() * q, grad);
    }

    // Elastic part only.
    double elastic_energy_gradient(const PointVectors &u, PointVectors *grad) const {
        double e = 0;
        std::array<Vec3, 4> uc, gc;
        for (const auto &el : sc_->elements()) {
            for (int c = 0; c < 4; ++c) uc[static_cast<std::size_t>(c)] = u.segment<3>(3 * el.corner[static_cast<std::size_t>(c)]);
            const double scale = el.coeff / el.rest.volume;
            if (grad) {
                e += scale * tet_energy_gradient(*mat_, el.rest, uc, gc);
                for (int c = 0; c < 4; ++c) grad->segment<3>(3 * el.corner[static_cast<std::size_t>(c)]) += scale * gc[static_cast<std::size_t>(c)];
            } else {
                e += scale * tet_energy(*mat_, el.rest, uc);
            }
        }
        return e;
    }

private:
    double evaluate(const PointVectors &u, PointVectors *grad) const {
        const CubatureScheme &sc = *sc_;
        if (grad) grad->setZero(u.size());
        double e = elastic_energy_gradient(u, grad);
        const double ih2 = 1.0 / (h_ * h_);
        for (std::size_t i = 0; i < sc.size(); ++i) {
            const auto k = 3 * static_cast<Eigen::Index>(i);
            const Vec3 ui = u.segment<3>(k);
            const double m = sc.masses()[i];
            const Vec3 r = ui - pred_.segment<3>(k);
            e += 0.5 * m * ih2 * r.squaredNorm();
            if (grad) grad->segment<3>(k) += m * ih2 * r;
            if (sc.dirichlet()[i]) {
                const double kb = sc.config().tether * m * ih2;
                const Vec3 rt = ui - target_.segment<3>(k);
                e += 0.5 * kb * rt.squaredNorm();
                if (grad) grad->segment<3>(k) += kb * rt;
            }
            if (plane_) {
                const double d = -plane_->signed_distance(sc.position(i) + ui);
                if (d > 0) {
                    const double kp = kappa_ * sc.weights()[i];
                    e += 0.5 * kp * d * d;
                    if (grad) grad->segment<3>(k) -= kp * d * plane_->normal;
                }
            }
        }
        return e;
    }

    const CubatureScheme *sc_;
    const Material *mat_;
    double h_;
    PointVectors pred_, target_;
    const CollisionPlane *plane_ = nullptr;
    double kappa_ = 0;
};

inline double reduced_energy(const ReducedProblem &prob, const Eigen::VectorXd &q) { return prob.energy(q); }

// du_i = -alpha g_i / omega_i with alpha = step * h^2 / rho: the negative
// energy gradient, scaled so the inertia term alone is solved in one step.
inline PointVectors descent_increment(const ReducedProblem &prob, const Eigen::VectorXd &q, double step,
                                      double *energy = nullptr) {
    const CubatureScheme &sc = prob.scheme();
    PointVectors g;
    const double e = prob.energy_gradient(q, g);
    if (energy) *energy = e;
    const double alpha = step * prob.h() * prob.h() / sc.mesh().density();
    for (std::size_t i = 0; i < sc.size(); ++i) g.segment<3>(3 * static_cast<Eigen::Index>(i)) *= -alpha / sc.metric_weights()[i];
    return g;
}

// dq = G^-1 sum_i omega_i W_i^T du_i by back-substitution.
inline Eigen::VectorXd project(const CubatureScheme &sc, const PointVectors &du) {
    const auto &llt = sc.factor();
    if (du.size() != sc.basis_stack().rows()) throw ValidationError("increment has the wrong length");
    PointVectors weighted(du.size());
    for (std::size_t i = 0; i < sc.size(); ++i)
        weighted.segment<3>(3 * static_cast<Eigen::Index>(i)) = sc.metric_weights()[i] * du.segment<3>(3 * static_cast<Eigen::Index>(i));
    return llt.solve(sc.basis_stack().transpose() * weighted);
}

inline ReducedState reduced_step(const CubatureScheme &sc, const ReducedState &s, const LoadCase &load, const Material &mat,
                                 const SolverConfig &cfg, const PointVectors *point_forces = nullptr,
                                 StepReport *report = nullptr) {
    cfg.validate();
    load.validate();
    if (!(s.h > 0)) throw ValidationError("time step must be positive");
    const double h = s.h;
    const PointVectors f = external_forces(sc, load, point_forces);
    ReducedProblem prob(sc, mat, h, predictor(sc, s, f));
    const PointVectors un = sc.basis_stack() * s.q;

    PointVectors init = prob.prediction() - un;
    PointVectors target = prob.prediction();
    for (std::size_t i = 0; i < sc.size(); ++i)
        if (sc.dirichlet()[i]) {
            const auto k = 3 * static_cast<Eigen::Index>(i);
            target.segment<3>(k) = un.segment<3>(k) + h * sc.prescribed_velocity()[i];
            init.segment<3>(k) = h * sc.prescribed_velocity()[i];
        }
    prob.set_dirichlet_target(std::move(target));
    if (load.plane) prob.set_plane(&*load.plane, load.plane->stiffness.value_or(default_penalty_stiffness(mat, sc.mesh())));

    StepReport local;
    StepReport &rep = report ? *report : local;
    rep = StepReport{};
    double omega_sum = 0;
    for (double o : sc.metric_weights()) omega_sum += o;
    const double scale = cfg.tolerance * sc.mesh().bbox_diagonal();

    Eigen::VectorXd q = s.q + project(sc, init);
    double e = prob.energy(q);
    if (!std::isfinite(e)) throw DivergenceError("non-finite reduced energy", 0);
    rep.energies.push_back(e);
    for (int it = 0; it < cfg.max_iterations; ++it) {
        const Eigen::VectorXd dq = project(sc, descent_increment(prob, q, cfg.step));
        const double rms = std::sqrt(std::max(0.0, dq.dot(sc.gram() * dq)) / omega_sum);
        if (rms <= scale) {
            rep.converged = true;
            break;
        }
        double t = 1.0, e_trial = e;
        bool accepted = false;
        Eigen::VectorXd trial;
        for (int b = 0; b <= cfg.max_backtracks; ++b, t *= cfg.backtrack) {
            trial = q + t * dq;
            e_trial = prob.energy(trial);
            if (std::isfinite(e_trial) && e_trial <= e) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!std::isfinite(e_trial)) throw DivergenceError("non-finite reduced energy", it + 1);
            rep.converged = true;
            break;
        }
        q = std::move(trial);
        e = e_trial;
        rep.energies.push_back(e);
        rep.iterations = it + 1;
    }

    ReducedState out{q, s.q, h, s.t + h};
    if (load.plane) {
        // Infinite friction: remove the tangential velocity of penetrating
        // points from the latent velocity by a least-squares correction.
        const PointVectors u = sc.basis_stack() * q;
        PointVectors vt = PointVectors::Zero(u.size());
        bool any = false;
        const Vec3 &n = load.plane->normal;
        for (std::size_t i = 0; i < sc.size(); ++i) {
            const auto k = 3 * static_cast<Eigen::Index>(i);
            if (load.plane->signed_distance(sc.position(i) + u.segment<3>(k)) < 0) {
                const Vec3 v = (u.segment<3>(k) - un.segment<3>(k)) / h;
                vt.segment<3>(k) = v - v.dot(n) * n;
                any = true;
            }
        }
        if (any) out.q_prev = q - h * (out.velocity() - project(sc, vt));
    }
    return out;
}

// Elastic reduced Hessian sum_t c_t B_t^T H(F_t) B_t with B_t = dF_t/dq.
inline Eigen::MatrixXd reduced_hessian(const CubatureScheme &sc, const Eigen::VectorXd &q, const Material &mat) {
    const auto r = static_cast<Eigen::Index>(sc.rank());
    const PointVectors u = sc.basis_stack() * q;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(r, r);
    Eigen::MatrixXd Wc(12, r), B(9, r);
    for (const auto &el : sc.elements()) {
        for (int c = 0; c < 4; ++c) Wc.middleRows<3>(3 * c) = sc.basis_block(static_cast<std::size_t>(el.corner[static_cast<std::size_t>(c)]));
        B.noalias() = deformation_jacobian(el.rest.dm_inv) * Wc;
        const Mat3 F = deformation_gradient(el.rest.dm_inv, u.segment<3>(3 * el.corner[0]), u.segment<3>(3 * el.corner[1]),
                                            u.segment<3>(3 * el.corner[2]), u.segment<3>(3 * el.corner[3]));
        H.noalias() += el.coeff * B.transpose() * energy_hessian(mat, F) * B;
    }
    return 0.5 * (H + H.transpose());
}

// Gradient of the elastic cubature energy with respect to q.
inline Eigen::VectorXd reduced_elastic_gradient(const CubatureScheme &sc, const Eigen::VectorXd &q, const Material &mat) {
    ReducedProblem prob(sc, mat, 1.0, PointVectors::Zero(sc.basis_stack().rows()));
    PointVectors g = PointVectors::Zero(sc.basis_stack().rows());
    prob.elastic_energy_gradient(sc.basis_stack() * q, &g);
    return sc.basis_stack().transpose() * g;
}

// Topology edits applied to the cubature mesh at runtime.
struct ExciseEvent {
    std::function<bool(const Vec3 &)> inside; // on tet centroids
};
struct CutEvent {
    std::function<bool(const std::array<Vec3, 3> &)> cut;
};
struct ReplaceMeshEvent {
    std::shared_ptr<const TetMesh> mesh;
};
struct RemeshEvent {
    std::variant<ExciseEvent, CutEvent, ReplaceMeshEvent> change;
    double time = 0.0;
};

struct RemeshResult {
    CubatureScheme scheme;
    double removed_volume = 0.0;
    std::size_t new_evaluations = 0;
};

namespace detail {

// Keeps the surviving seeds and tops up from the seeded permutation of the
// new mesh until the original seed count is reached.
inline std::vector<int> top_up_seeds(std::vector<int> seeds, int target, int vertex_count, std::uint64_t seed) {
    std::vector<char> have(static_cast<std::size_t>(vertex_count), 0);
    for (int s : seeds) have[static_cast<std::size_t>(s)] = 1;
    target = std::min(target, vertex_count);
    for (int v : sample_without_replacement(vertex_count, vertex_count, seed)) {
        if (static_cast<int>(seeds.size()) >= target) break;
        if (!have[static_cast<std::size_t>(v)]) {
            have[static_cast<std::size_t>(v)] = 1;
            seeds.push_back(v);
        }
    }
    return seeds;
}

} // namespace detail

// Rebuilds the cubature on the edited mesh. Cached W values are reused for
// every point whose reference position persists; the latent state is not an
// input and is never touched.
inline RemeshResult apply_remesh(const CubatureScheme &sc, const RemeshEvent &event, BasisCache &cache, std::uint64_t seed) {
    const std::size_t before = cache.evaluations();
    const int target = static_cast<int>(sc.seeds().size());
    RemeshResult res;
    std::shared_ptr<const TetMesh> mesh;
    std::vector<int> seeds;
    if (const auto *ex = std::get_if<ExciseEvent>(&event.change)) {
        auto r = excise(sc.mesh(), ex->inside);
        res.removed_volume = r.removed_volume;
        for (int s : sc.seeds())
            if (int n = r.old_to_new[static_cast<std::size_t>(s)]; n >= 0) seeds.push_back(n);
        mesh = std::make_shared<const TetMesh>(std::move(r.mesh));
        seeds = detail::top_up_seeds(std::move(seeds), target, mesh->vertex_count(), seed);
    } else if (const auto *cut = std::get_if<CutEvent>(&event.change)) {
        mesh = std::make_shared<const TetMesh>(cut_faces(sc.mesh(), cut->cut));
        seeds = sc.seeds(); // original vertices keep their indices
    } else {
        mesh = std::get<ReplaceMeshEvent>(event.change).mesh;
        if (!mesh) throw ValidationError("replacement mesh is missing");
        seeds = sample_without_replacement(mesh->vertex_count(), std::min(target, mesh->vertex_count()), seed);
    }
    if (!(mesh->total_volume() > 0)) throw ValidationError("remeshed domain has no volume");
    res.scheme = build_scheme(mesh, std::move(seeds), cache, sc.config(), sc.constraints());
    res.new_evaluations = cache.evaluations() - before;
    return res;
}

// Displacement W(X) q at every vertex of `mesh`.
inline std::vector<Vec3> reconstruct(const TetMesh &mesh, BasisCache &cache, const Eigen::VectorXd &q) {
    const auto W = cache.get_many(mesh.vertices());
    std::vector<Vec3> u(W.size());
    for (std::size_t i = 0; i < W.size(); ++i) u[i] = W[i] * q;
    return u;
}

} // namespace licrom
