#pragma once

// Stable Neo-Hookean energy density
//     psi(F) = mu/2 (tr(F^T F) - 3) + lambda/2 (det F - alpha)^2,
//     alpha  = 1 + mu / lambda,
// with its first Piola-Kirchhoff stress and 9x9 Hessian (vec is
// column-major: entry 3*j + i holds F(i, j)). The rest state F = I is
// stress free, and the energy is finite under inversion.

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "licrom/errors.hpp"
#include "licrom/mesh.hpp"

namespace licrom {

using DeformationGradient = Mat3;
using Mat9 = Eigen::Matrix<double, 9, 9>;
using Vec9 = Eigen::Matrix<double, 9, 1>;

class Material {
public:
    Material() = default;
    Material(double youngs_modulus, double poisson_ratio) : E_(youngs_modulus), nu_(poisson_ratio) {
        // nu = 0 gives lambda = 0 and an unbounded alpha, so it is excluded.
        if (!(E_ > 0.0) || !std::isfinite(E_)) throw ValidationError("Young's modulus must be positive");
        if (!(nu_ > 0.0) || !(nu_ < 0.5)) throw ValidationError("Poisson ratio must lie in (0, 0.5)");
    }

    static Material from_lame(double mu, double lambda) {
        Material m;
        m.E_ = mu * (3 * lambda + 2 * mu) / (lambda + mu);
        m.nu_ = lambda / (2 * (lambda + mu));
        if (!(mu > 0.0) || !(lambda > 0.0)) throw ValidationError("Lame parameters must be positive");
        return m;
    }

    double youngs_modulus() const { return E_; }
    double poisson_ratio() const { return nu_; }
    double mu() const { return E_ / (2.0 * (1.0 + nu_)); }
    double lambda() const { return E_ * nu_ / ((1.0 + nu_) * (1.0 - 2.0 * nu_)); }
    double alpha() const { return 1.0 + mu() / lambda(); }

private:
    double E_ = 1e5;
    double nu_ = 0.25;
};

inline Mat3 cofactor(const Mat3 &F) {
    Mat3 C;
    C.col(0) = F.col(1).cross(F.col(2));
    C.col(1) = F.col(2).cross(F.col(0));
    C.col(2) = F.col(0).cross(F.col(1));
    return C;
}

inline Mat3 cross_matrix(const Vec3 &v) {
    Mat3 m;
    m << 0, -v.z(), v.y(),
         v.z(), 0, -v.x(),
        -v.y(), v.x(), 0;
    return m;
}

inline double energy_density(const Material &mat, const DeformationGradient &F) {
    // J through the cofactor so the value is bitwise equal to energy_and_gradient's
    const double mu = mat.mu(), lambda = mat.lambda();
    const double J = F.col(0).dot(F.col(1).cross(F.col(2)));
    const double dJ = J - (1.0 + mu / lambda);
    return 0.5 * mu * (F.squaredNorm() - 3.0) + 0.5 * lambda * dJ * dJ;
}

// psi(I + G) - psi(I) from the displacement gradient G. Every term is at
// least quadratic in G, so small strains keep full relative precision
// instead of drowning in the rest-state constant mu^2 / (2 lambda).
inline double strain_energy_density(const Material &mat, const Mat3 &G) {
    const double mu = mat.mu(), lambda = mat.lambda();
    const double i2 = G(0, 0) * G(1, 1) - G(0, 1) * G(1, 0) + G(0, 0) * G(2, 2) - G(0, 2) * G(2, 0) + G(1, 1) * G(2, 2) -
                      G(1, 2) * G(2, 1);
    const double i3 = G.col(0).dot(G.col(1).cross(G.col(2)));
    const double dJ = G.trace() + i2 + i3; // det(I + G) - 1
    return 0.5 * mu * G.squaredNorm() - mu * (i2 + i3) + 0.5 * lambda * dJ * dJ;
}

// PK1 stress, d psi / d F.
inline Mat3 energy_gradient(const Material &mat, const DeformationGradient &F) {
    const double mu = mat.mu(), lambda = mat.lambda();
    const double J = F.determinant();
    return mu * F + lambda * (J - (1.0 + mu / lambda)) * cofactor(F);
}

// Energy and PK1 together; the inner loops of both integrators use this.
inline double energy_and_gradient(const Material &mat, const DeformationGradient &F, Mat3 &P) {
    const double mu = mat.mu(), lambda = mat.lambda();
    const Mat3 C = cofactor(F);
    const double J = F.col(0).dot(C.col(0));
    const double dJ = J - (1.0 + mu / lambda);
    P = mu * F + lambda * dJ * C;
    return 0.5 * mu * (F.squaredNorm() - 3.0) + 0.5 * lambda * dJ * dJ;
}

inline Mat9 energy_hessian(const Material &mat, const DeformationGradient &F) {
    const double mu = mat.mu(), lambda = mat.lambda();
    const Mat3 C = cofactor(F);
    const double J = F.determinant();
    const Vec9 g = Eigen::Map<const Vec9>(C.data());

    Mat9 HJ = Mat9::Zero();
    const Mat3 f0 = cross_matrix(F.col(0)), f1 = cross_matrix(F.col(1)), f2 = cross_matrix(F.col(2));
    HJ.block<3, 3>(0, 3) = -f2;
    HJ.block<3, 3>(0, 6) = f1;
    HJ.block<3, 3>(3, 0) = f2;
    HJ.block<3, 3>(3, 6) = -f0;
    HJ.block<3, 3>(6, 0) = -f1;
    HJ.block<3, 3>(6, 3) = f0;

    return mu * Mat9::Identity() + lambda * g * g.transpose() + lambda * (J - (1.0 + mu / lambda)) * HJ;
}

} // namespace licrom
