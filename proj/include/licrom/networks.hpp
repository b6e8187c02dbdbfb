#pragma once

// The two learnable maps: the neural displacement basis X -> W(X) (3 x r)
// and the permutation-invariant point-set encoder (X, u) set -> q. Both are
// plain ELU MLPs over a flat f64 parameter vector with hand-written
// reverse-mode passes.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "licrom/basis.hpp"
#include "licrom/dataset.hpp"
#include "licrom/random.hpp"

namespace licrom {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_derivative(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

// Layer shapes of a fully connected net. Layer l stores its weight matrix
// (out x in, column-major) followed by its bias.
struct MlpShape {
    std::vector<int> widths; // input, hidden..., output
    bool activate_output = false;

    int layers() const { return static_cast<int>(widths.size()) - 1; }
    int in(int l) const { return widths[static_cast<std::size_t>(l)]; }
    int out(int l) const { return widths[static_cast<std::size_t>(l) + 1]; }

    Eigen::Index weight_offset(int l) const {
        Eigen::Index off = 0;
        for (int k = 0; k < l; ++k) off += static_cast<Eigen::Index>(out(k)) * (in(k) + 1);
        return off;
    }
    Eigen::Index bias_offset(int l) const { return weight_offset(l) + static_cast<Eigen::Index>(out(l)) * in(l); }
    Eigen::Index size() const { return weight_offset(layers()); }

    bool operator==(const MlpShape &) const = default;
};

inline json to_json(const MlpShape &s) { return {{"widths", s.widths}, {"activate_output", s.activate_output}}; }
inline MlpShape mlp_shape_from_json(const json &j) {
    MlpShape s;
    s.widths = j.at("widths").get<std::vector<int>>();
    s.activate_output = j.value("activate_output", false);
    if (s.widths.size() < 2) throw FormatError("MLP needs at least one layer");
    return s;
}

// Xavier-uniform weights, zero biases; deterministic per seed.
inline VectorXd init_params(const MlpShape &shape, std::uint64_t seed) {
    VectorXd p = VectorXd::Zero(shape.size());
    Rng rng(seed);
    for (int l = 0; l < shape.layers(); ++l) {
        const double bound = std::sqrt(6.0 / (shape.in(l) + shape.out(l)));
        const auto off = shape.weight_offset(l);
        for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(shape.out(l)) * shape.in(l); ++i)
            p[off + i] = uniform_real(rng, -bound, bound);
    }
    return p;
}

// Batched evaluation, points as columns. Keeps the pre-activations needed
// by backward().
class MlpPass {
public:
    MlpPass(const MlpShape &shape, const VectorXd &params) : shape_(&shape), params_(&params) {}

    // With `columnwise`, every column goes through the same matrix-vector
    // kernel so its result does not depend on its position in the batch.
    const MatrixXd &forward(const MatrixXd &input, bool columnwise = false) {
        const int L = shape_->layers();
        acts_.resize(static_cast<std::size_t>(L) + 1);
        pre_.resize(static_cast<std::size_t>(L));
        acts_[0] = input;
        for (int l = 0; l < L; ++l) {
            const MatrixXd &a = acts_[static_cast<std::size_t>(l)];
            MatrixXd z(shape_->out(l), a.cols());
            if (columnwise) {
                for (Eigen::Index j = 0; j < a.cols(); ++j) z.col(j).noalias() = weight(l) * a.col(j);
            } else {
                z.noalias() = weight(l) * a;
            }
            z.colwise() += bias(l);
            const bool act = l + 1 < L || shape_->activate_output;
            pre_[static_cast<std::size_t>(l)] = std::move(z);
            acts_[static_cast<std::size_t>(l) + 1] =
                act ? MatrixXd(pre_[static_cast<std::size_t>(l)].unaryExpr([](double x) { return elu(x); }))
                    : pre_[static_cast<std::size_t>(l)];
        }
        return acts_.back();
    }

    // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(output);
    // returns d(loss)/d(input).
    MatrixXd backward(const MatrixXd &d_output, VectorXd &grad) const {
        const int L = shape_->layers();
        MatrixXd d = d_output;
        for (int l = L - 1; l >= 0; --l) {
            const bool act = l + 1 < L || shape_->activate_output;
            if (act) d = d.cwiseProduct(pre_[static_cast<std::size_t>(l)].unaryExpr([](double x) { return elu_derivative(x); }));
            Eigen::Map<MatrixXd> gW(grad.data() + shape_->weight_offset(l), shape_->out(l), shape_->in(l));
            gW.noalias() += d * acts_[static_cast<std::size_t>(l)].transpose();
            grad.segment(shape_->bias_offset(l), shape_->out(l)) += d.rowwise().sum();
            d = weight(l).transpose() * d;
        }
        return d;
    }

private:
    Eigen::Map<const MatrixXd> weight(int l) const {
        return {params_->data() + shape_->weight_offset(l), shape_->out(l), shape_->in(l)};
    }
    Eigen::Map<const VectorXd> bias(int l) const { return {params_->data() + shape_->bias_offset(l), shape_->out(l)}; }

    const MlpShape *shape_;
    const VectorXd *params_;
    std::vector<MatrixXd> acts_;
    std::vector<MatrixXd> pre_;
};

// W: R^3 -> 3 x r. Five weight layers of width 60 with ELU between them and
// a linear, biased output of size 3r; output entry 3k + d is W(d, k).
class NeuralBasis final : public DisplacementBasis {
public:
    NeuralBasis() = default;
    NeuralBasis(int rank, std::uint64_t seed, int width = 60, int depth = 5) : rank_(rank) {
        if (rank < 1) throw ValidationError("latent dimension must be at least 1");
        shape_.widths.push_back(3);
        for (int l = 0; l + 1 < depth; ++l) shape_.widths.push_back(width);
        shape_.widths.push_back(3 * rank);
        params_ = init_params(shape_, seed);
    }
    NeuralBasis(MlpShape shape, VectorXd params) : shape_(std::move(shape)), params_(std::move(params)) {
        if (shape_.in(0) != 3 || shape_.widths.back() % 3 != 0) throw FormatError("basis net must map R^3 to R^(3r)");
        if (params_.size() != shape_.size()) throw FormatError("basis parameter count does not match its layout");
        rank_ = shape_.widths.back() / 3;
    }

    int rank() const override { return rank_; }
    const MlpShape &shape() const { return shape_; }
    const VectorXd &params() const { return params_; }
    VectorXd &params() { return params_; }

    BasisMatrix eval(const Vec3 &X) const override {
        MlpPass pass(shape_, params_);
        const MatrixXd out = pass.forward(MatrixXd(X), true);
        return Eigen::Map<const BasisMatrix>(out.data(), 3, rank_);
    }

    // Columns of the result are the flattened W(X_j) for columns X_j. The
    // columnwise path is bitwise equal to eval(); the blocked path is faster.
    MatrixXd eval_batch(const MatrixXd &X, bool columnwise = true) const {
        MlpPass pass(shape_, params_);
        return pass.forward(X, columnwise);
    }

    std::vector<BasisMatrix> eval_many(const std::vector<Vec3> &X) const override {
        MatrixXd in(3, static_cast<Eigen::Index>(X.size()));
        for (std::size_t i = 0; i < X.size(); ++i) in.col(static_cast<Eigen::Index>(i)) = X[i];
        const MatrixXd out = eval_batch(in, true);
        std::vector<BasisMatrix> res;
        res.reserve(X.size());
        for (Eigen::Index j = 0; j < out.cols(); ++j) res.emplace_back(Eigen::Map<const BasisMatrix>(out.col(j).data(), 3, rank_));
        return res;
    }

    // Parameter gradient of <upstream, W(X)>.
    VectorXd backward(const Vec3 &X, const BasisMatrix &upstream) const {
        MlpPass pass(shape_, params_);
        pass.forward(MatrixXd(X), true);
        VectorXd g = VectorXd::Zero(params_.size());
        pass.backward(Eigen::Map<const VectorXd>(upstream.data(), 3 * rank_), g);
        return g;
    }

private:
    int rank_ = 0;
    MlpShape shape_;
    VectorXd params_;
};

// PointNet trunk without the input transform: a shared per-point MLP
// 6 -> 64 -> 128 -> 256 (ELU throughout), max-pool over points, and a head
// 256 -> 128 -> r with a linear output.
class Encoder {
public:
    Encoder() = default;
    Encoder(int rank, std::uint64_t seed) {
        point_.widths = {6, 64, 128, 256};
        point_.activate_output = true;
        head_.widths = {256, 128, rank};
        params_.resize(point_.size() + head_.size());
        params_ << init_params(point_, mix_seed(seed, 0)), init_params(head_, mix_seed(seed, 1));
    }
    Encoder(MlpShape point, MlpShape head, VectorXd params)
        : point_(std::move(point)), head_(std::move(head)), params_(std::move(params)) {
        if (point_.in(0) != 6 || point_.widths.back() != head_.in(0)) throw FormatError("encoder layer sizes are inconsistent");
        if (params_.size() != point_.size() + head_.size()) throw FormatError("encoder parameter count does not match its layout");
    }

    int rank() const { return head_.widths.back(); }
    const MlpShape &point_shape() const { return point_; }
    const MlpShape &head_shape() const { return head_; }
    const VectorXd &params() const { return params_; }
    VectorXd &params() { return params_; }

    static MatrixXd pack(const Frame &frame) {
        MatrixXd in(6, static_cast<Eigen::Index>(frame.size()));
        for (std::size_t i = 0; i < frame.size(); ++i) {
            in.block<3, 1>(0, static_cast<Eigen::Index>(i)) = frame.X[i];
            in.block<3, 1>(3, static_cast<Eigen::Index>(i)) = frame.u[i];
        }
        return in;
    }

    // Forward state kept for one backward pass.
    class Pass {
    public:
        explicit Pass(const Encoder &enc)
            : enc_(&enc), point_params_(enc.params_.head(enc.point_.size())),
              head_params_(enc.params_.tail(enc.head_.size())), point_(enc.point_, point_params_), head_(enc.head_, head_params_) {}

        // `exact` keeps the result independent of point order bit for bit;
        // the blocked kernel is faster and used for training.
        VectorXd forward(const Frame &frame, bool exact = true) {
            if (frame.size() == 0) throw ValidationError("cannot encode an empty frame");
            const MatrixXd &feat = point_.forward(pack(frame), exact);
            pooled_.resize(feat.rows());
            argmax_.resize(static_cast<std::size_t>(feat.rows()));
            for (Eigen::Index c = 0; c < feat.rows(); ++c) {
                Eigen::Index arg = 0;
                double best = feat(c, 0);
                for (Eigen::Index j = 1; j < feat.cols(); ++j)
                    if (feat(c, j) > best) {
                        best = feat(c, j);
                        arg = j;
                    }
                pooled_[c] = best;
                argmax_[static_cast<std::size_t>(c)] = arg;
            }
            n_points_ = feat.cols();
            return head_.forward(MatrixXd(pooled_));
        }

        // Accumulates d(loss)/d(params) for upstream d(loss)/dq.
        void backward(const VectorXd &dq, VectorXd &grad) const {
            VectorXd g_point = VectorXd::Zero(enc_->point_.size());
            VectorXd g_head = VectorXd::Zero(enc_->head_.size());
            const MatrixXd d_pooled = head_.backward(MatrixXd(dq), g_head);
            MatrixXd d_feat = MatrixXd::Zero(d_pooled.rows(), n_points_);
            for (Eigen::Index c = 0; c < d_pooled.rows(); ++c) d_feat(c, argmax_[static_cast<std::size_t>(c)]) = d_pooled(c, 0);
            point_.backward(d_feat, g_point);
            grad.head(enc_->point_.size()) += g_point;
            grad.tail(enc_->head_.size()) += g_head;
        }

    private:
        const Encoder *enc_;
        VectorXd point_params_, head_params_;
        MlpPass point_, head_;
        VectorXd pooled_;
        std::vector<Eigen::Index> argmax_;
        Eigen::Index n_points_ = 0;
    };

    VectorXd encode(const Frame &frame) const {
        Pass pass(*this);
        return pass.forward(frame);
    }

private:
    MlpShape point_, head_;
    VectorXd params_;
};

inline VectorXd encode(const Encoder &enc, const Frame &frame) { return enc.encode(frame); }
inline BasisMatrix basis_eval(const NeuralBasis &basis, const Vec3 &X) { return basis.eval(X); }
inline VectorXd basis_backward(const NeuralBasis &basis, const Vec3 &X, const BasisMatrix &upstream) {
    return basis.backward(X, upstream);
}

} // namespace licrom
