#pragma once

// LCRW checkpoints: magic, u32 version, u64-length JSON layout header, u64
// value count, then the flat f64 block (basis parameters, encoder
// parameters and, when present, the Adam moments).

#include <filesystem>
#include <fstream>
#include <optional>

#include "licrom/binary_io.hpp"
#include "licrom/networks.hpp"
#include "licrom/optim.hpp"

namespace licrom {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    NeuralBasis basis;
    Encoder encoder;
    int epoch = 0;                 // epochs completed
    std::optional<AdamState> adam; // over [basis params; encoder params]
    json info = json::object();    // training config and provenance

    Eigen::Index parameter_count() const { return basis.params().size() + encoder.params().size(); }
};

inline void save_checkpoint(const Checkpoint &ck, std::ostream &os) {
    const auto nb = ck.basis.params().size(), ne = ck.encoder.params().size();
    json header = {{"rank", ck.basis.rank()},
                   {"epoch", ck.epoch},
                   {"basis", {{"shape", to_json(ck.basis.shape())}, {"offset", 0}, {"length", nb}}},
                   {"encoder",
                    {{"point", to_json(ck.encoder.point_shape())},
                     {"head", to_json(ck.encoder.head_shape())},
                     {"offset", nb},
                     {"length", ne}}},
                   {"info", ck.info}};
    Eigen::Index total = nb + ne;
    if (ck.adam) {
        header["adam"] = {{"step", ck.adam->step},
                          {"beta1", ck.adam->beta1},
                          {"beta2", ck.adam->beta2},
                          {"eps", ck.adam->eps},
                          {"m_offset", total},
                          {"v_offset", total + nb + ne}};
        total += 2 * (nb + ne);
    }
    io::write_magic(os, "LCRW");
    io::write_le<std::uint32_t>(os, kCheckpointVersion);
    io::write_blob(os, header.dump());
    io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(total));
    auto put = [&](const VectorXd &v) {
        for (Eigen::Index i = 0; i < v.size(); ++i) io::write_le<double>(os, v[i]);
    };
    put(ck.basis.params());
    put(ck.encoder.params());
    if (ck.adam) {
        put(ck.adam->m);
        put(ck.adam->v);
    }
}

inline Checkpoint load_checkpoint(std::istream &is) {
    io::expect_magic(is, "LCRW");
    const auto version = io::read_le<std::uint32_t>(is);
    if (version != kCheckpointVersion) throw FormatError("unsupported LCRW version " + std::to_string(version), 0, 4);
    json header;
    try {
        header = json::parse(io::read_blob(is, io::remaining(is)));
        const auto count = io::read_le<std::uint64_t>(is);
        if (count > io::remaining(is) / 8) throw FormatError("LCRW value count exceeds file size");
        VectorXd flat(static_cast<Eigen::Index>(count));
        for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = io::read_le<double>(is);
        auto block = [&](const json &j, const char *off, Eigen::Index len) -> VectorXd {
            const auto o = j.at(off).get<Eigen::Index>();
            if (o < 0 || len < 0 || o + len > flat.size()) throw FormatError("LCRW block outside the value array");
            return flat.segment(o, len);
        };
        Checkpoint ck;
        const auto &b = header.at("basis");
        ck.basis = NeuralBasis(mlp_shape_from_json(b.at("shape")), block(b, "offset", b.at("length").get<Eigen::Index>()));
        const auto &e = header.at("encoder");
        ck.encoder = Encoder(mlp_shape_from_json(e.at("point")), mlp_shape_from_json(e.at("head")),
                             block(e, "offset", e.at("length").get<Eigen::Index>()));
        if (ck.encoder.rank() != ck.basis.rank()) throw FormatError("encoder and basis disagree on the latent dimension");
        ck.epoch = header.value("epoch", 0);
        ck.info = header.value("info", json::object());
        if (header.contains("adam")) {
            const auto &a = header.at("adam");
            AdamState s;
            s.step = a.at("step").get<std::int64_t>();
            s.beta1 = a.at("beta1");
            s.beta2 = a.at("beta2");
            s.eps = a.at("eps");
            s.m = block(a, "m_offset", ck.parameter_count());
            s.v = block(a, "v_offset", ck.parameter_count());
            ck.adam = std::move(s);
        }
        return ck;
    } catch (const json::exception &ex) {
        throw FormatError(std::string("bad LCRW header: ") + ex.what());
    }
}

inline void save_checkpoint(const Checkpoint &ck, const std::filesystem::path &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    save_checkpoint(ck, os);
}

inline Checkpoint load_checkpoint(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return load_checkpoint(is);
}

} // namespace licrom
