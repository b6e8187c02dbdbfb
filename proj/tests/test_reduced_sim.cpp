#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "licrom/networks.hpp"
#include "licrom/reduced_sim.hpp"
#include "oracles.hpp"
#include "rom_reference.hpp"

using namespace licrom;

namespace {

std::shared_ptr<const DisplacementBasis> poly_basis() {
    return std::make_shared<PolynomialBasis>(std::vector<std::array<int, 3>>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}});
}

std::shared_ptr<const TetMesh> shared(TetMesh m) { return std::make_shared<const TetMesh>(std::move(m)); }

Eigen::VectorXd random_vector(int n, std::uint64_t seed, double scale) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * d(rng);
    return v;
}

CubatureConfig all_vertices(const TetMesh &m, WeightRule rule = WeightRule::DualVolume) {
    CubatureConfig c;
    c.seeds = m.vertex_count();
    c.rule = rule;
    return c;
}

TetMesh beam() {
    GridSpec g;
    g.cells = {8, 2, 2};
    g.lo = Vec3(0, -0.1, -0.1);
    g.hi = Vec3(1, 0.1, 0.1);
    return box_grid(g);
}

} // namespace

TEST(Cubature, SingleTetOneRingClosure) {
    BasisCache cache(std::make_shared<PolynomialBasis>(std::vector<std::array<int, 3>>{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
    CubatureConfig cfg;
    cfg.seeds = 1;
    const auto sc = sample_cubature(fixtures::unit_tet(), cfg, cache);
    ASSERT_EQ(sc.size(), 4u);
    for (double w : sc.weights()) EXPECT_DOUBLE_EQ(w, (1.0 / 6.0) / 4.0);
    EXPECT_NEAR(sc.total_weight(), 1.0 / 6.0, 1e-15);
    for (double m : sc.masses()) EXPECT_DOUBLE_EQ(m, 1000.0 / 24.0);
}

TEST(Cubature, SaturationAndVolume) {
    const TetMesh m = fixtures::jittered_grid(4, 3);
    BasisCache cache(poly_basis());
    for (auto rule : {WeightRule::Equal, WeightRule::DualVolume}) {
        const auto sc = sample_cubature(m, all_vertices(m, rule), cache);
        EXPECT_EQ(sc.size(), static_cast<std::size_t>(m.vertex_count()));
        EXPECT_NEAR(sc.total_weight(), m.total_volume(), 1e-9 * m.total_volume());
        double c = 0;
        for (const auto &e : sc.elements()) c += e.coeff;
        EXPECT_NEAR(c, m.total_volume(), 1e-12);
    }
    CubatureConfig partial;
    partial.seeds = 7;
    partial.seed = 4;
    const auto sc = sample_cubature(m, partial, cache);
    EXPECT_LT(sc.size(), static_cast<std::size_t>(m.vertex_count()));
    EXPECT_NEAR(sc.total_weight(), m.total_volume(), 1e-9);
    for (int s : sc.seeds()) {
        EXPECT_GE(sc.point_of_vertex(s), 0);
        for (int w : m.one_ring(s)) EXPECT_GE(sc.point_of_vertex(w), 0);
    }
    // DualVolume with every vertex reproduces the full FEM element weights
    const auto full = sample_cubature(m, all_vertices(m), cache);
    for (const auto &e : full.elements()) EXPECT_NEAR(e.coeff, e.rest.volume, 1e-15);
}

TEST(Cubature, CacheCoherenceIsBitwise) {
    auto basis = std::make_shared<NeuralBasis>(4, 8);
    BasisCache cache(basis);
    CubatureConfig cfg;
    cfg.seeds = 10;
    cfg.seed = 2;
    const auto sc = sample_cubature(fixtures::cube_grid(4), cfg, cache);
    EXPECT_EQ(cache.evaluations(), sc.size());
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const BasisMatrix fresh = basis_eval(*basis, sc.position(i));
        const BasisMatrix cached = sc.basis_block(i);
        EXPECT_EQ(std::memcmp(fresh.data(), cached.data(), sizeof(double) * 12), 0);
    }
}

TEST(Cubature, DegenerateBasisIsReported) {
    // yz vanishes at every vertex of the unit tet
    BasisCache cache(std::make_shared<PolynomialBasis>(std::vector<std::array<int, 3>>{{0, 0, 0}, {0, 1, 1}}));
    CubatureConfig cfg;
    cfg.seeds = 1;
    EXPECT_THROW(sample_cubature(fixtures::unit_tet(), cfg, cache), DegenerateCubatureError);
}

TEST(Reduced, PredictorCases) {
    const TetMesh m = fixtures::cube_grid(3);
    BasisCache cache(poly_basis());
    const auto sc = sample_cubature(m, all_vertices(m), cache);
    const int r = sc.rank();
    ReducedState s{random_vector(r, 1, 0.01), random_vector(r, 1, 0.01), 0.01, 0};
    const PointVectors zero = PointVectors::Zero(3 * static_cast<Eigen::Index>(sc.size()));
    EXPECT_LT((predictor(sc, s, zero) - sc.basis_stack() * s.q).norm(), 1e-15);

    LoadCase grav;
    grav.gravity = Vec3(0, -9.8, 0);
    const PointVectors pg = predictor(sc, s, external_forces(sc, grav));
    for (std::size_t i = 0; i < sc.size(); ++i)
        EXPECT_LT((pg.segment<3>(3 * i) - (sc.basis_block(i) * s.q + s.h * s.h * grav.gravity)).norm(), 1e-15);

    s.q_prev = random_vector(r, 2, 0.01);
    const PointVectors p = predictor(sc, s, external_forces(sc, grav));
    // dense full-space predictor: u = Phi q, v = Phi (q - q_prev) / h
    for (std::size_t i = 0; i < sc.size(); ++i) {
        const BasisMatrix W = poly_basis()->eval(sc.position(i));
        const Vec3 u = W * s.q, v = W * (s.q - s.q_prev) / s.h;
        EXPECT_LT((p.segment<3>(3 * i) - (u + s.h * v + s.h * s.h * grav.gravity)).norm(), 1e-12);
    }
}

TEST(Reduced, EnergyAgainstDenseFullSpace) {
    const TetMesh m = fixtures::jittered_grid(3, 9);
    BasisCache cache(poly_basis());
    auto sc = sample_cubature(m, all_vertices(m), cache);
    const Material mat(1e4, 0.3);
    const double h = 0.01;
    const FullSpaceModel model(m);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd q = random_vector(sc.rank(), 10 + trial, 0.05);
        const PointVectors pred = sc.basis_stack() * random_vector(sc.rank(), 20 + trial, 0.05);
        const ReducedProblem prob(sc, mat, h, pred);
        detail::FullProblem full{&model, &mat, h, {}, std::vector<char>(static_cast<std::size_t>(m.vertex_count()), 0)};
        std::vector<Vec3> u(static_cast<std::size_t>(m.vertex_count()));
        full.pred.resize(u.size());
        for (std::size_t i = 0; i < sc.size(); ++i) {
            const auto v = static_cast<std::size_t>(sc.vertices()[i]);
            u[v] = sc.basis_block(i) * q;
            full.pred[v] = pred.segment<3>(3 * static_cast<Eigen::Index>(i));
        }
        const double ref = full.energy(u);
        EXPECT_LT(std::abs(prob.energy(q) - ref) / std::abs(ref), 1e-10);
    }
    // energies are measured from the rest state
    const ReducedProblem rest(sc, mat, h, PointVectors::Zero(3 * static_cast<Eigen::Index>(sc.size())));
    EXPECT_EQ(reduced_energy(rest, Eigen::VectorXd::Zero(sc.rank())), 0.0);

    const Eigen::VectorXd q = random_vector(sc.rank(), 3, 0.05);
    const PointVectors pred = PointVectors::Constant(3 * static_cast<Eigen::Index>(sc.size()), 0.01);
    const double e1 = ReducedProblem(sc, mat, h, pred).energy(q);
    sc.scale_weights(2.0);
    EXPECT_NEAR(ReducedProblem(sc, mat, h, pred).energy(q), 2 * e1, 1e-12 * e1);
}

TEST(Reduced, DescentIncrementMatchesEnergyDerivative) {
    const TetMesh m = fixtures::jittered_grid(3, 4);
    BasisCache cache(poly_basis());
    CubatureConfig cfg;
    cfg.seeds = 8;
    cfg.seed = 3;
    std::vector<DirichletConstraint> bc{{VertexSelector::below(1, -0.45), Vec3(0, 0.5, 0)}};
    const auto sc = sample_cubature(m, cfg, cache, bc);
    const Material mat(1e4, 0.3);
    const double h = 0.01;
    ReducedProblem prob(sc, mat, h, sc.basis_stack() * random_vector(sc.rank(), 5, 0.03));
    const Eigen::VectorXd q = random_vector(sc.rank(), 6, 0.03);
    const double step = 0.7, alpha = step * h * h / m.density();
    const PointVectors du = descent_increment(prob, q, step);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::VectorXd dq = random_vector(sc.rank(), 40 + trial, 1.0);
        double dir = 0;
        for (std::size_t i = 0; i < sc.size(); ++i)
            dir -= sc.metric_weights()[i] / alpha * du.segment<3>(3 * i).dot(sc.basis_block(i) * dq);
        const double eps = 1e-6;
        const double fd = (prob.energy(q + eps * dq) - prob.energy(q - eps * dq)) / (2 * eps);
        EXPECT_LT(std::abs(dir - fd) / std::abs(fd), 1e-5);
    }
}

TEST(Reduced, QuadraticCaseRecoversPredictorInOneProjection) {
    const TetMesh m = fixtures::cube_grid(3);
    BasisCache cache(poly_basis());
    CubatureConfig cfg;
    cfg.seeds = 5;
    const auto sc = sample_cubature(m, cfg, cache);
    const Material nearly_free(1e-12, 0.3);
    const Eigen::VectorXd target = random_vector(sc.rank(), 7, 0.1);
    ReducedProblem prob(sc, nearly_free, 0.01, sc.basis_stack() * target);
    const Eigen::VectorXd q0 = Eigen::VectorXd::Zero(sc.rank());
    const Eigen::VectorXd q1 = q0 + project(sc, descent_increment(prob, q0, 1.0));
    EXPECT_LT((q1 - target).norm(), 1e-10 * target.norm());
    // at the minimizer the next increment vanishes
    EXPECT_LT(project(sc, descent_increment(prob, q1, 1.0)).norm(), 1e-10 * target.norm());
}

TEST(Projection, InSpanZeroAndDenseOracle) {
    const TetMesh m = fixtures::jittered_grid(3, 2);
    BasisCache cache(std::make_shared<NeuralBasis>(5, 3));
    CubatureConfig cfg;
    cfg.seeds = 3;
    cfg.seed = 5;
    auto sc = sample_cubature(m, cfg, cache, {{VertexSelector::above(1, 0.45), Vec3::Zero()}});
    const auto n3 = 3 * static_cast<Eigen::Index>(sc.size());
    const Eigen::VectorXd v = random_vector(5, 1, 1.0);
    EXPECT_LT((project(sc, sc.basis_stack() * v) - v).norm(), 1e-10 * v.norm());
    EXPECT_EQ(project(sc, PointVectors::Zero(n3)).norm(), 0.0);

    const PointVectors du = random_vector(static_cast<int>(n3), 9, 1.0);
    Eigen::VectorXd w3(n3);
    for (std::size_t i = 0; i < sc.size(); ++i) w3.segment<3>(3 * i).setConstant(sc.metric_weights()[i]);
    const Eigen::VectorXd ref = oracles::weighted_lsq(sc.basis_stack(), w3, du);
    const Eigen::VectorXd dq = project(sc, du);
    EXPECT_LT((dq - ref).norm() / ref.norm(), 1e-10);
    const Eigen::VectorXd resid = sc.basis_stack().transpose() * (w3.asDiagonal() * (sc.basis_stack() * dq - du));
    const Eigen::VectorXd rhs = sc.basis_stack().transpose() * (w3.asDiagonal() * du);
    EXPECT_LT(resid.norm() / rhs.norm(), 1e-8);

    sc.scale_weights(0.5);
    EXPECT_THROW(project(sc, du), StaleFactorError);
    sc.refactor();
    EXPECT_LT((project(sc, du) - ref).norm() / ref.norm(), 1e-10);
}

TEST(Reduced, ZeroLoadsKeepRest) {
    const TetMesh m = fixtures::cube_grid(3);
    BasisCache cache(std::make_shared<NeuralBasis>(4, 1));
    CubatureConfig cfg;
    cfg.seeds = 6;
    const auto sc = sample_cubature(m, cfg, cache);
    ReducedState s = ReducedState::rest(4, 0.01);
    StepReport rep;
    const ReducedState n = reduced_step(sc, s, LoadCase{}, Material(1e5, 0.3), SolverConfig{}, nullptr, &rep);
    EXPECT_LT(n.q.norm(), 1e-12);
    EXPECT_TRUE(rep.converged);
    EXPECT_NEAR(n.t, 0.01, 1e-15);
}

TEST(Reduced, ClassicalRomEquivalence) {
    const TetMesh m = beam();
    auto basis = std::make_shared<PolynomialBasis>(std::vector<std::array<int, 3>>{{1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
    BasisCache cache(basis);
    const auto sc = sample_cubature(m, all_vertices(m), cache);
    const Material mat(1e4, 0.3);
    const double h = 0.01;
    LoadCase load;
    load.gravity = Vec3(0, -9.8, 0);
    SolverConfig cfg;
    cfg.tolerance = 1e-14;
    cfg.max_iterations = 500;
    const oracles::DenseRom ref(m, *basis, mat, h);
    ReducedState s = ReducedState::rest(sc.rank(), h);
    Eigen::VectorXd q = s.q, q_prev = s.q;
    double worst = 0;
    for (int n = 0; n < 10; ++n) {
        StepReport rep;
        s = reduced_step(sc, s, load, mat, cfg, nullptr, &rep);
        EXPECT_TRUE(rep.monotone());
        const Eigen::VectorXd next = ref.step(q, q_prev, load.gravity);
        q_prev = q;
        q = next;
        worst = std::max(worst, (s.q - q).cwiseAbs().maxCoeff());
    }
    EXPECT_LT(worst, 1e-8);
    EXPECT_GT(q.norm(), 1e-4);
}

TEST(Reduced, HessianSymmetricFdAndPsdAtRest) {
    const TetMesh m = fixtures::jittered_grid(3, 7);
    BasisCache cache(poly_basis());
    CubatureConfig cfg;
    cfg.seeds = 10;
    const auto sc = sample_cubature(m, cfg, cache);
    const Material mat(1e4, 0.3);
    const Eigen::VectorXd q = random_vector(sc.rank(), 4, 0.05);
    const Eigen::MatrixXd H = reduced_hessian(sc, q, mat);
    EXPECT_LT((H - H.transpose()).norm(), 1e-12 * H.norm());
    Eigen::MatrixXd fd(sc.rank(), sc.rank());
    for (int j = 0; j < sc.rank(); ++j) {
        const double eps = 1e-6;
        Eigen::VectorXd p = q, mq = q;
        p[j] += eps;
        mq[j] -= eps;
        fd.col(j) = (reduced_elastic_gradient(sc, p, mat) - reduced_elastic_gradient(sc, mq, mat)) / (2 * eps);
    }
    EXPECT_LT((H - fd).norm() / fd.norm(), 1e-4);
    const Eigen::MatrixXd H0 = reduced_hessian(sc, Eigen::VectorXd::Zero(sc.rank()), mat);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H0).eigenvalues();
    EXPECT_GE(ev.minCoeff(), -1e-8 * ev.cwiseAbs().maxCoeff());
}

TEST(Remesh, IdentityReplaceIsCacheHit) {
    const auto mesh = shared(fixtures::cube_grid(4));
    BasisCache cache(std::make_shared<NeuralBasis>(3, 2));
    CubatureConfig cfg;
    cfg.seeds = 12;
    cfg.seed = 77;
    const auto sc = sample_cubature(mesh, cfg, cache);
    const auto evals = cache.evaluations();
    const auto r = apply_remesh(sc, RemeshEvent{ReplaceMeshEvent{mesh}, 0.5}, cache, cfg.seed);
    EXPECT_EQ(r.new_evaluations, 0u);
    EXPECT_EQ(cache.evaluations(), evals);
    EXPECT_EQ(r.scheme.vertices(), sc.vertices());
    EXPECT_EQ(r.scheme.weights(), sc.weights());
    EXPECT_TRUE(r.scheme.basis_stack() == sc.basis_stack());
}

TEST(Remesh, HolePunchVolumeAndCache) {
    const auto mesh = shared(fixtures::cube_grid(6));
    BasisCache cache(std::make_shared<NeuralBasis>(3, 2));
    CubatureConfig cfg;
    cfg.seeds = 20;
    cfg.seed = 5;
    const auto sc = sample_cubature(mesh, cfg, cache);
    const auto before = cache.evaluations();
    const auto r = apply_remesh(sc, RemeshEvent{ExciseEvent{[](const Vec3 &c) { return (c - Vec3(0.1, 0, 0)).norm() < 0.22; }}},
                                cache, 99);
    EXPECT_GT(r.removed_volume, 0.0);
    EXPECT_NEAR(sc.total_weight() - r.scheme.total_weight(), r.removed_volume, 1e-9 * sc.total_weight());
    EXPECT_EQ(r.scheme.seeds().size(), sc.seeds().size());
    // every point already seen on the old mesh was served from the cache
    std::size_t unseen = 0;
    for (std::size_t i = 0; i < r.scheme.size(); ++i) {
        bool old = false;
        for (int v = 0; v < mesh->vertex_count() && !old; ++v) old = mesh->vertex(v) == r.scheme.position(i) && sc.point_of_vertex(v) >= 0;
        unseen += !old;
    }
    EXPECT_EQ(cache.evaluations() - before, unseen);
    EXPECT_EQ(r.new_evaluations, unseen);
}

TEST(Remesh, CutReusesCachedPositions) {
    GridSpec g;
    g.cells = {6, 2, 6};
    g.mirror_negative_x = true;
    const auto plate = shared(box_grid(g));
    BasisCache cache(std::make_shared<NeuralBasis>(3, 4));
    CubatureConfig cfg;
    cfg.seeds = plate->vertex_count();
    const auto sc = sample_cubature(plate, cfg, cache);
    const auto r = apply_remesh(sc, RemeshEvent{CutEvent{y_cut(0.6)}}, cache, 0);
    EXPECT_GT(r.scheme.mesh().vertex_count(), plate->vertex_count());
    EXPECT_EQ(r.new_evaluations, 0u);
    EXPECT_NEAR(r.scheme.total_weight(), sc.total_weight(), 1e-12);
}

TEST(Remesh, SwapKeepsLatentAndReconstructsOnNewGeometry) {
    auto basis = std::make_shared<NeuralBasis>(3, 6);
    BasisCache cache(basis);
    CubatureConfig cfg;
    cfg.seeds = 8;
    const auto sc = sample_cubature(shared(fixtures::cube_grid(3)), cfg, cache);
    const Eigen::VectorXd q = random_vector(3, 1, 0.2);
    const auto sphere = shared(cube_to_sphere(4, 1.0));
    const auto r = apply_remesh(sc, RemeshEvent{ReplaceMeshEvent{sphere}}, cache, 3);
    EXPECT_EQ(&r.scheme.mesh(), sphere.get());
    const auto u = reconstruct(*sphere, cache, q);
    for (int v = 0; v < sphere->vertex_count(); v += 7) EXPECT_EQ(u[static_cast<std::size_t>(v)], Vec3(basis->eval(sphere->vertex(v)) * q));
}

TEST(Reduced, DirichletPointsTrackPrescribedMotion) {
    const TetMesh m = fixtures::cube_grid(3);
    BasisCache cache(poly_basis());
    CubatureConfig cfg;
    cfg.seeds = m.vertex_count();
    const auto sc = sample_cubature(m, cfg, cache, {{VertexSelector::above(1, 0.45), Vec3(0, -1, 0)},
                                                    {VertexSelector::below(1, -0.45), Vec3::Zero()}});
    ReducedState s = ReducedState::rest(sc.rank(), 0.001);
    const Material mat(1e4, 0.3);
    for (int n = 0; n < 20; ++n) {
        StepReport rep;
        s = reduced_step(sc, s, LoadCase{}, mat, SolverConfig{}, nullptr, &rep);
        EXPECT_TRUE(rep.monotone());
    }
    // the basis contains y e_y, so compression is representable exactly
    const PointVectors u = sc.basis_stack() * s.q;
    for (std::size_t i = 0; i < sc.size(); ++i)
        if (sc.position(i).y() > 0.45) {
            EXPECT_NEAR(u[3 * static_cast<Eigen::Index>(i) + 1], -s.t * 1.0, 0.05 * s.t);
        }
}
