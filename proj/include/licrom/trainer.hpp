#pragma once

// Joint fit of the basis network and the encoder to snapshot frames:
//   L = sum_j sum_i | W(X_i) P(S(frame_j)) - u_i^j |
// with Adam and a piecewise-constant learning-rate schedule.

#include <chrono>
#include <functional>
#include <numeric>
#include <ostream>

#include "licrom/checkpoint.hpp"

namespace licrom {

struct TrainConfig {
    int epochs = 3750;
    double base_lr = 1e-3;
    // lr = base_lr for epoch < first_drop, base_lr / 5 until second_drop,
    // then base_lr / 50
    int first_drop = 1250;
    int second_drop = 2500;
    int batch_frames = 16;
    std::size_t encoder_points = 2500;
    int rank = 20;
    std::uint64_t seed = 0;
    int checkpoint_every = 0; // epochs; 0 disables periodic checkpoints
    bool squared_norm = false;
    int width = 60;
    int depth = 5;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (!(base_lr > 0)) throw ConfigError("learning rate must be positive");
        if (batch_frames < 1) throw ConfigError("batch_frames must be at least 1");
        if (rank < 1) throw ConfigError("latent dimension must be at least 1");
        if (encoder_points < 1) throw ConfigError("encoder_points must be at least 1");
        if (first_drop > second_drop) throw ConfigError("learning-rate drops must be ordered");
    }
};

inline json to_json(const TrainConfig &c) {
    return {{"epochs", c.epochs},           {"base_lr", c.base_lr},         {"first_drop", c.first_drop},
            {"second_drop", c.second_drop}, {"batch_frames", c.batch_frames}, {"encoder_points", c.encoder_points},
            {"rank", c.rank},               {"seed", c.seed},               {"checkpoint_every", c.checkpoint_every},
            {"squared_norm", c.squared_norm}, {"width", c.width},           {"depth", c.depth}};
}

inline TrainConfig train_config_from_json(const json &j, TrainConfig c = {}) {
    static const char *known[] = {"epochs", "base_lr", "first_drop", "second_drop", "batch_frames", "encoder_points",
                                  "rank", "seed", "checkpoint_every", "squared_norm", "width", "depth"};
    if (!j.is_object()) throw ConfigError("training config must be a JSON object");
    for (const auto &[k, v] : j.items())
        if (std::find(std::begin(known), std::end(known), k) == std::end(known)) throw ConfigError("unknown training option '" + k + "'");
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.base_lr = j.value("base_lr", c.base_lr);
        c.first_drop = j.value("first_drop", c.first_drop);
        c.second_drop = j.value("second_drop", c.second_drop);
        c.batch_frames = j.value("batch_frames", c.batch_frames);
        c.encoder_points = j.value("encoder_points", c.encoder_points);
        c.rank = j.value("rank", c.rank);
        c.seed = j.value("seed", c.seed);
        c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        c.squared_norm = j.value("squared_norm", c.squared_norm);
        c.width = j.value("width", c.width);
        c.depth = j.value("depth", c.depth);
    } catch (const json::exception &e) {
        throw ConfigError(std::string("bad training config: ") + e.what());
    }
    c.validate();
    return c;
}

inline double learning_rate(const TrainConfig &cfg, int epoch) {
    double lr = cfg.base_lr;
    if (epoch >= cfg.first_drop) lr /= 5.0;
    if (epoch >= cfg.second_drop) lr /= 10.0;
    return lr;
}

// Subsample seed for frame j in a given epoch.
inline std::uint64_t encoder_sample_seed(std::uint64_t seed, int epoch, std::size_t frame) {
    return mix_seed(mix_seed(seed, static_cast<std::uint64_t>(epoch)), frame);
}

// Model pair plus the flat view Adam works on.
struct Model {
    NeuralBasis basis;
    Encoder encoder;

    VectorXd flat() const {
        VectorXd p(basis.params().size() + encoder.params().size());
        p << basis.params(), encoder.params();
        return p;
    }
    void assign(const VectorXd &p) {
        basis.params() = p.head(basis.params().size());
        encoder.params() = p.tail(encoder.params().size());
    }
};

namespace detail {

inline double point_norm(const Vec3 &r, bool squared) { return squared ? r.squaredNorm() : r.norm(); }

// Loss of one frame; accumulates parameter gradients when `grad` is given
// (basis block first, then encoder). `exact` selects the permutation-exact
// encoder kernel.
inline double frame_loss(const Model &model, const Frame &frame, const SubsampleSpec &spec, bool squared, VectorXd *grad,
                         bool exact = true) {
    const Frame sub = subsample(frame, spec);
    Encoder::Pass enc(model.encoder);
    const VectorXd q = enc.forward(sub, exact);
    const int r = model.basis.rank();
    if (q.size() != r) throw ValidationError("encoder and basis disagree on the latent dimension");
    MatrixXd X(3, static_cast<Eigen::Index>(frame.size()));
    for (std::size_t i = 0; i < frame.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = frame.X[i];
    MlpPass pass(model.basis.shape(), model.basis.params());
    const MatrixXd &out = pass.forward(X, false);
    double loss = 0;
    MatrixXd d_out;
    VectorXd dq;
    if (grad) {
        d_out.resize(out.rows(), out.cols());
        dq = VectorXd::Zero(r);
    }
    for (Eigen::Index i = 0; i < out.cols(); ++i) {
        const Eigen::Map<const BasisMatrix> W(out.col(i).data(), 3, r);
        const Vec3 res = W * q - frame.u[static_cast<std::size_t>(i)];
        const double n = point_norm(res, squared);
        loss += n;
        if (!grad) continue;
        Vec3 dres = squared ? Vec3(2.0 * res) : (n > 0 ? Vec3(res / n) : Vec3::Zero());
        Eigen::Map<BasisMatrix> dW(d_out.col(i).data(), 3, r);
        dW.noalias() = dres * q.transpose();
        dq.noalias() += W.transpose() * dres;
    }
    if (grad) {
        VectorXd gb = VectorXd::Zero(model.basis.params().size());
        pass.backward(d_out, gb);
        grad->head(gb.size()) += gb;
        VectorXd ge = VectorXd::Zero(model.encoder.params().size());
        enc.backward(dq, ge);
        grad->tail(ge.size()) += ge;
    }
    return loss;
}

} // namespace detail

// Sum over frames and over all points of the per-point residual norm. Frame
// j of the batch is encoded from its subsample with seed mix(spec.seed, j).
inline double loss(const std::vector<Frame> &batch, const NeuralBasis &basis, const Encoder &enc, const SubsampleSpec &spec,
                   bool squared = false) {
    const Model m{basis, enc};
    double total = 0;
    for (std::size_t j = 0; j < batch.size(); ++j)
        total += detail::frame_loss(m, batch[j], {spec.count, mix_seed(spec.seed, j)}, squared, nullptr);
    return total;
}

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double loss = 0; // mean per-point loss over the epoch
    double seconds = 0;
};

struct FitResult {
    Checkpoint checkpoint;
    std::vector<EpochRecord> history;
};

struct FitHooks {
    std::ostream *metrics = nullptr; // NDJSON, one line per epoch
    std::function<void(const Checkpoint &)> on_checkpoint;
};

// Trains from scratch, or continues `resume` (epoch counter, schedule and
// Adam moments carry over) until cfg.epochs epochs are complete.
inline FitResult fit(const SnapshotSet &data, const TrainConfig &cfg, const FitHooks &hooks = {},
                     const Checkpoint *resume = nullptr) {
    cfg.validate();
    if (data.empty()) throw ValidationError("training set is empty");
    const auto card = data.cardinality();
    if (!card) throw ValidationError("training frames have different cardinalities");
    if (cfg.encoder_points > *card)
        throw ValidationError("encoder_points " + std::to_string(cfg.encoder_points) + " exceeds the frame cardinality " +
                              std::to_string(*card));

    Model model;
    AdamState adam;
    int start = 0;
    if (resume) {
        if (resume->basis.rank() != cfg.rank) throw ConfigError("checkpoint rank differs from the configured rank");
        model = {resume->basis, resume->encoder};
        start = resume->epoch;
        adam = resume->adam ? *resume->adam : AdamState::zeros(resume->parameter_count());
    } else {
        model = {NeuralBasis(cfg.rank, mix_seed(cfg.seed, 101), cfg.width, cfg.depth), Encoder(cfg.rank, mix_seed(cfg.seed, 202))};
        adam = AdamState::zeros(model.flat().size());
    }

    FitResult res;
    VectorXd params = model.flat();
    const auto frames = data.frames.size();
    auto snapshot = [&](int epoch) {
        model.assign(params);
        Checkpoint ck{model.basis, model.encoder, epoch, adam, {{"train", to_json(cfg)}}};
        return ck;
    };
    for (int epoch = start; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = learning_rate(cfg, epoch);
        std::vector<std::size_t> order(frames);
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 0x5eed));
        shuffle(order, rng);
        double epoch_loss = 0;
        for (std::size_t b = 0; b < frames; b += static_cast<std::size_t>(cfg.batch_frames)) {
            const std::size_t e = std::min(frames, b + static_cast<std::size_t>(cfg.batch_frames));
            model.assign(params);
            VectorXd grad = VectorXd::Zero(params.size());
            for (std::size_t k = b; k < e; ++k) {
                const std::size_t j = order[k];
                const SubsampleSpec spec{cfg.encoder_points, encoder_sample_seed(cfg.seed, epoch, j)};
                const double l = detail::frame_loss(model, data.frames[j], spec, cfg.squared_norm, &grad, false);
                if (!std::isfinite(l)) throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch), epoch);
                epoch_loss += l;
            }
            adam_step(params, grad, adam, lr);
        }
        EpochRecord rec{epoch, lr, epoch_loss / static_cast<double>(frames * *card),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
        res.history.push_back(rec);
        if (hooks.metrics) *hooks.metrics << json{{"epoch", rec.epoch}, {"lr", rec.lr}, {"loss", rec.loss}}.dump() << '\n';
        if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs)
            hooks.on_checkpoint(snapshot(epoch + 1));
    }
    res.checkpoint = snapshot(std::max(start, cfg.epochs));
    return res;
}

// Encodes a subsample of the frame and reconstructs every point; returns the
// RMS vertex error.
inline double reconstruction_rms(const NeuralBasis &basis, const Encoder &enc, const Frame &frame, const SubsampleSpec &spec) {
    const VectorXd q = enc.encode(subsample(frame, spec));
    double sum = 0;
    for (std::size_t i = 0; i < frame.size(); ++i) sum += (basis.eval(frame.X[i]) * q - frame.u[i]).squaredNorm();
    return std::sqrt(sum / static_cast<double>(frame.size()));
}

} // namespace licrom
