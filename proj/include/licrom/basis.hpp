#pragma once

// Continuous displacement bases X -> W(X) (3 x r) and the per-position cache
// of their values used by the reduced integrator.

#include <array>
#include <bit>
#include <cstdint>
#include <memory>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "licrom/mesh.hpp"

namespace licrom {

using BasisMatrix = Eigen::Matrix<double, 3, Eigen::Dynamic>;

class DisplacementBasis {
public:
    virtual ~DisplacementBasis() = default;
    virtual int rank() const = 0;
    virtual BasisMatrix eval(const Vec3 &X) const = 0;

    // Must agree bitwise with eval() point by point.
    virtual std::vector<BasisMatrix> eval_many(const std::vector<Vec3> &X) const {
        std::vector<BasisMatrix> out;
        out.reserve(X.size());
        for (const auto &x : X) out.push_back(eval(x));
        return out;
    }
};

// Analytic basis: every monomial x^a y^b z^c in `exponents`, times each unit
// direction. Column 3k + d is monomial k along axis d, so r = 3 * terms.
class PolynomialBasis final : public DisplacementBasis {
public:
    explicit PolynomialBasis(std::vector<std::array<int, 3>> exponents, Vec3 origin = Vec3::Zero())
        : exponents_(std::move(exponents)), origin_(origin) {
        if (exponents_.empty()) throw ValidationError("polynomial basis needs at least one monomial");
    }

    int rank() const override { return 3 * static_cast<int>(exponents_.size()); }

    BasisMatrix eval(const Vec3 &X) const override {
        const Vec3 p = X - origin_;
        BasisMatrix W = BasisMatrix::Zero(3, rank());
        for (std::size_t k = 0; k < exponents_.size(); ++k) {
            double m = 1.0;
            for (int a = 0; a < 3; ++a)
                for (int e = 0; e < exponents_[k][static_cast<std::size_t>(a)]; ++e) m *= p[a];
            for (int d = 0; d < 3; ++d) W(d, static_cast<Eigen::Index>(3 * k) + d) = m;
        }
        return W;
    }

private:
    std::vector<std::array<int, 3>> exponents_;
    Vec3 origin_;
};

// Memoizes W(X) keyed by the exact bit pattern of X and counts the basis
// evaluations actually performed.
class BasisCache {
public:
    explicit BasisCache(std::shared_ptr<const DisplacementBasis> basis) : basis_(std::move(basis)) {
        if (!basis_) throw ValidationError("basis cache needs a basis");
    }

    const DisplacementBasis &basis() const { return *basis_; }
    std::shared_ptr<const DisplacementBasis> basis_ptr() const { return basis_; }
    int rank() const { return basis_->rank(); }
    std::size_t evaluations() const { return evaluations_; }
    std::size_t size() const { return map_.size(); }
    bool contains(const Vec3 &X) const { return map_.count(key(X)) > 0; }

    const BasisMatrix &get(const Vec3 &X) {
        auto it = map_.find(key(X));
        if (it != map_.end()) return it->second;
        ++evaluations_;
        return map_.emplace(key(X), basis_->eval(X)).first->second;
    }

    // Evaluates all misses in one batch; returns copies in input order.
    std::vector<BasisMatrix> get_many(const std::vector<Vec3> &X) {
        std::vector<Vec3> miss;
        for (const auto &x : X)
            if (!map_.count(key(x))) miss.push_back(x);
        std::sort(miss.begin(), miss.end(), [](const Vec3 &a, const Vec3 &b) { return key(a) < key(b); });
        miss.erase(std::unique(miss.begin(), miss.end(), [](const Vec3 &a, const Vec3 &b) { return key(a) == key(b); }),
                   miss.end());
        if (!miss.empty()) {
            auto vals = basis_->eval_many(miss);
            for (std::size_t i = 0; i < miss.size(); ++i) map_.emplace(key(miss[i]), std::move(vals[i]));
            evaluations_ += miss.size();
        }
        std::vector<BasisMatrix> out;
        out.reserve(X.size());
        for (const auto &x : X) out.push_back(map_.at(key(x)));
        return out;
    }

    void clear() { map_.clear(); }

private:
    using Key = std::array<std::uint64_t, 3>;
    struct KeyHash {
        std::size_t operator()(const Key &k) const {
            std::uint64_t h = 0x9e3779b97f4a7c15ull;
            for (auto w : k) h = (h ^ w) * 0x100000001b3ull + (h >> 29);
            return static_cast<std::size_t>(h);
        }
    };
    static Key key(const Vec3 &X) {
        return {std::bit_cast<std::uint64_t>(X[0]), std::bit_cast<std::uint64_t>(X[1]), std::bit_cast<std::uint64_t>(X[2])};
    }

    std::shared_ptr<const DisplacementBasis> basis_;
    std::unordered_map<Key, BasisMatrix, KeyHash> map_;
    std::size_t evaluations_ = 0;
};

} // namespace licrom
