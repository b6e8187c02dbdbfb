#pragma once

// Linear-tet kinematics shared by the full-space and reduced integrators.

#include <array>
#include <vector>

#include "licrom/material.hpp"
#include "licrom/mesh.hpp"

namespace licrom {

// Per-tet constants: inverse rest edge matrix and rest volume.
struct TetRest {
    Mat3 dm_inv;
    double volume = 0.0;
};

inline TetRest tet_rest(const TetMesh &mesh, int t) {
    const auto &k = mesh.tet(t);
    Mat3 Dm;
    Dm.col(0) = mesh.vertex(k[1]) - mesh.vertex(k[0]);
    Dm.col(1) = mesh.vertex(k[2]) - mesh.vertex(k[0]);
    Dm.col(2) = mesh.vertex(k[3]) - mesh.vertex(k[0]);
    return {Dm.inverse(), Dm.determinant() / 6.0};
}

// G = [u1-u0, u2-u0, u3-u0] Dm^-1
inline Mat3 displacement_gradient(const Mat3 &dm_inv, const Vec3 &u0, const Vec3 &u1, const Vec3 &u2, const Vec3 &u3) {
    Mat3 Ds;
    Ds.col(0) = u1 - u0;
    Ds.col(1) = u2 - u0;
    Ds.col(2) = u3 - u0;
    return Ds * dm_inv;
}

// F = I + G
inline Mat3 deformation_gradient(const Mat3 &dm_inv, const Vec3 &u0, const Vec3 &u1, const Vec3 &u2, const Vec3 &u3) {
    return Mat3::Identity() + displacement_gradient(dm_inv, u0, u1, u2, u3);
}

// Energy vol * (psi(F) - psi(I)) and its gradient w.r.t. the four corner
// displacements.
inline double tet_energy_gradient(const Material &mat, const TetRest &rest, const std::array<Vec3, 4> &u,
                                  std::array<Vec3, 4> &grad) {
    const Mat3 G = displacement_gradient(rest.dm_inv, u[0], u[1], u[2], u[3]);
    const Mat3 P = energy_gradient(mat, Mat3::Identity() + G);
    const double psi = strain_energy_density(mat, G);
    const Mat3 H = rest.volume * P * rest.dm_inv.transpose();
    grad[1] = H.col(0);
    grad[2] = H.col(1);
    grad[3] = H.col(2);
    grad[0] = -(grad[1] + grad[2] + grad[3]);
    return rest.volume * psi;
}

inline double tet_energy(const Material &mat, const TetRest &rest, const std::array<Vec3, 4> &u) {
    return rest.volume * strain_energy_density(mat, displacement_gradient(rest.dm_inv, u[0], u[1], u[2], u[3]));
}

// d vec(F) / d (corner displacements), 9x12; column block c holds corner c.
inline Eigen::Matrix<double, 9, 12> deformation_jacobian(const Mat3 &dm_inv) {
    // grad N_c as rows: N_1..3 from dm_inv rows, N_0 = -sum
    Eigen::Matrix<double, 4, 3> gradN;
    gradN.row(1) = dm_inv.row(0);
    gradN.row(2) = dm_inv.row(1);
    gradN.row(3) = dm_inv.row(2);
    gradN.row(0) = -(gradN.row(1) + gradN.row(2) + gradN.row(3));
    Eigen::Matrix<double, 9, 12> B = Eigen::Matrix<double, 9, 12>::Zero();
    for (int c = 0; c < 4; ++c)
        for (int j = 0; j < 3; ++j)     // column of F
            for (int i = 0; i < 3; ++i) // row of F == displacement component
                B(3 * j + i, 3 * c + i) = gradN(c, j);
    return B;
}

// Quarter of each incident tet's volume per vertex.
inline std::vector<double> lumped_volumes(const TetMesh &mesh) {
    std::vector<double> v(static_cast<std::size_t>(mesh.vertex_count()), 0.0);
    for (int t = 0; t < mesh.tet_count(); ++t) {
        const double q = 0.25 * mesh.volume(t);
        for (int i : mesh.tet(t)) v[static_cast<std::size_t>(i)] += q;
    }
    return v;
}

// m_i = rho * sum over incident tets of vol / 4.
inline std::vector<double> lumped_mass(const TetMesh &mesh) {
    auto m = lumped_volumes(mesh);
    for (auto &x : m) x *= mesh.density();
    return m;
}

} // namespace licrom
