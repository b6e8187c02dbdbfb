#pragma once

// Interactive reduced simulation over TCP. Every message is a u32
// little-endian length followed by that many bytes of JSON. A surface_frame
// header carries "payload_bytes" and is followed by one more length-prefixed
// message holding the deformed surface positions as little-endian f32 xyz.
// See docs/protocol.md.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <mutex>
#include <thread>

#include "licrom/scenario.hpp"

namespace licrom {

inline constexpr int kProtocolVersion = 1;

// Server-side message, addressed to one client or broadcast (client < 0).
struct Outgoing {
    int client = -1;
    json header;
    std::vector<float> payload;
};

struct ServiceOptions {
    double rate_hz = 30.0;
    int frame_every = 1;             // broadcast every n-th step
    double tug_radius_fraction = 0.05; // of the bounding-box diagonal
};

// The simulation side of a session, free of sockets and threads: messages
// go in, replies and frames come out. Replaying the same message log against
// the same ticks yields the same frames.
class InteractiveSession {
public:
    InteractiveSession(std::shared_ptr<const DisplacementBasis> basis, Scenario scenario, ServiceOptions opt = {})
        : basis_(std::move(basis)), scenario_(std::move(scenario)), opt_(opt) {
        if (!(opt_.rate_hz > 0)) throw ConfigError("rate must be positive");
        if (opt_.frame_every < 1) throw ConfigError("frame_every must be at least 1");
        sim_ = std::make_unique<ReducedSession>(basis_, scenario_);
        rebuild_topology();
    }

    bool paused() const { return paused_; }
    double rate() const { return rate_; }
    std::uint64_t frame_number() const { return frame_; }
    const ReducedSession &sim() const { return *sim_; }
    ReducedSession &sim() { return *sim_; }
    bool tug_active() const { return tug_.has_value(); }
    const PointVectors &tug_forces() const { return tug_forces_; }

    // Applies one client message; returns the replies (and broadcasts) it
    // causes.
    std::vector<Outgoing> handle(int client, const json &msg) {
        std::vector<Outgoing> out;
        json seq = msg.contains("seq") ? msg.at("seq") : json();
        auto ack = [&](const std::string &ref, json extra = json::object()) {
            extra["type"] = "event_ack";
            extra["ref"] = ref;
            if (!seq.is_null()) extra["seq"] = seq;
            out.push_back({client, extra, {}});
        };
        auto error = [&](const std::string &text) {
            json e = {{"type", "error"}, {"text", text}};
            if (!seq.is_null()) e["seq"] = seq;
            out.push_back({client, e, {}});
        };
        if (!msg.is_object() || !msg.contains("type") || !msg.at("type").is_string()) {
            error("message needs a string 'type'");
            return out;
        }
        const std::string type = msg.at("type").get<std::string>();
        try {
            if (type == "hello") {
                const int v = msg.value("version", -1);
                if (v != kProtocolVersion) {
                    error("unsupported protocol version " + std::to_string(v) + ", server speaks " +
                          std::to_string(kProtocolVersion));
                    return out;
                }
                json h = {{"type", "hello"}, {"version", kProtocolVersion}, {"server", "licrom"},
                          {"mesh", sim_->mesh_id()}, {"rank", sim_->scheme().rank()}, {"rate", rate_},
                          {"paused", paused_}, {"meshes", mesh_ids()}};
                if (!seq.is_null()) h["seq"] = seq;
                out.push_back({client, h, {}});
                out.push_back({client, topology_message(), {}});
                out.push_back(frame_message());
                out.back().client = client;
            } else if (type == "tug") {
                const Vec3 p = detail::vec3_from(msg.at("point"), "tug.point");
                const Vec3 f = detail::vec3_from(msg.at("force"), "tug.force");
                const bool hit = set_tug(p, f);
                ack(type, hit ? json::object() : json{{"warning", "no cubature point within the tug radius; ignored"}});
            } else if (type == "release") {
                tug_.reset();
                tug_forces_ = PointVectors::Zero(3 * static_cast<Eigen::Index>(sim_->scheme().size()));
                ack(type);
            } else if (type == "swap_mesh" || type == "load_mesh") {
                const std::string id = msg.at("id").get<std::string>();
                if (!sim_->has_mesh(id)) {
                    error("unknown mesh id '" + id + "'");
                    return out;
                }
                json rec;
                if (type == "swap_mesh") {
                    ScenarioEvent ev;
                    ev.kind = ScenarioEvent::Kind::Swap;
                    ev.mesh = id;
                    rec = sim_->apply(ev);
                } else {
                    // fresh start on the requested mesh
                    sim_ = std::make_unique<ReducedSession>(basis_, scenario_, id);
                }
                rebuild_topology();
                rebind_tug();
                ack(type, {{"mesh", id}, {"remesh", rec}});
                out.push_back({-1, topology_message(), {}});
                out.push_back(frame_message());
            } else if (type == "pause") {
                paused_ = true;
                ack(type);
            } else if (type == "resume") {
                paused_ = false;
                ack(type);
            } else if (type == "set_rate") {
                const double hz = msg.at("hz").get<double>();
                if (!(hz > 0 && hz <= 1000)) {
                    error("rate must lie in (0, 1000] Hz");
                    return out;
                }
                rate_ = hz;
                ack(type, {{"hz", hz}});
            } else {
                error("unknown message type '" + type + "'");
            }
        } catch (const json::exception &e) {
            error("malformed " + type + " message: " + e.what());
        } catch (const Error &e) {
            error(e.what());
        }
        return out;
    }

    // One simulation step unless paused. Returns the frame broadcast (if this
    // step is on the decimation grid) or an error broadcast on divergence.
    std::vector<Outgoing> tick() {
        std::vector<Outgoing> out;
        if (paused_) return out;
        try {
            const bool tugging = tug_.has_value();
            sim_->step(tugging ? &tug_forces_ : nullptr);
        } catch (const DivergenceError &e) {
            paused_ = true;
            out.push_back({-1, {{"type", "error"}, {"text", std::string("simulation diverged, paused: ") + e.what()}}, {}});
            return out;
        }
        if (++steps_ % static_cast<std::uint64_t>(opt_.frame_every) == 0) out.push_back(frame_message());
        return out;
    }

    Outgoing frame_message() {
        const auto u = sim_->surface_displacement();
        std::vector<float> pos;
        pos.reserve(3 * u.size());
        for (std::size_t i = 0; i < u.size(); ++i) {
            const Vec3 x = surface_rest_[i] + u[i];
            for (int d = 0; d < 3; ++d) pos.push_back(static_cast<float>(x[d]));
        }
        json h = {{"type", "surface_frame"}, {"frame", ++frame_}, {"t", sim_->state().t},
                  {"mesh", sim_->mesh_id()}, {"topology", topology_id_}, {"vertex_count", u.size()},
                  {"payload_bytes", pos.size() * sizeof(float)}};
        return {-1, h, std::move(pos)};
    }

    json topology_message() const {
        return {{"type", "mesh_topology"}, {"mesh", sim_->mesh_id()}, {"topology", topology_id_},
                {"vertex_count", surface_rest_.size()}, {"faces", faces_}};
    }

private:
    json mesh_ids() const {
        json ids = json::array();
        for (const auto &m : scenario_.meshes) ids.push_back(m.id);
        return ids;
    }

    void rebuild_topology() {
        const auto &mesh = sim_->mesh();
        const auto verts = mesh.surface_vertices();
        std::vector<int> local(static_cast<std::size_t>(mesh.vertex_count()), -1);
        surface_rest_.clear();
        for (std::size_t i = 0; i < verts.size(); ++i) {
            local[static_cast<std::size_t>(verts[i])] = static_cast<int>(i);
            surface_rest_.push_back(mesh.vertex(verts[i]));
        }
        faces_ = json::array();
        for (const auto &f : mesh.surface_faces())
            faces_.push_back({local[static_cast<std::size_t>(f[0])], local[static_cast<std::size_t>(f[1])],
                              local[static_cast<std::size_t>(f[2])]});
        ++topology_id_;
        tug_forces_ = PointVectors::Zero(3 * static_cast<Eigen::Index>(sim_->scheme().size()));
    }

    double tug_radius() const { return opt_.tug_radius_fraction * sim_->mesh().bbox_diagonal(); }

    // Anchors the tug at the reference position of the cubature point
    // nearest to `point` in the deformed configuration.
    bool set_tug(const Vec3 &point, const Vec3 &force) {
        const auto &sc = sim_->scheme();
        const VectorXd u = sc.basis_stack() * sim_->state().q;
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t i = 0; i < sc.size(); ++i) {
            const double d = (sc.position(i) + u.segment<3>(3 * static_cast<Eigen::Index>(i)) - point).norm();
            if (d < best) {
                best = d;
                arg = i;
            }
        }
        if (!(best <= tug_radius())) return false;
        tug_ = Tug{sc.position(arg), force};
        return rebind_tug();
    }

    // Weights 1 - d/rho over cubature points within rho of the anchor,
    // normalized to sum to one.
    bool rebind_tug() {
        const auto &sc = sim_->scheme();
        tug_forces_ = PointVectors::Zero(3 * static_cast<Eigen::Index>(sc.size()));
        if (!tug_) return false;
        const double rho = tug_radius();
        std::vector<std::pair<std::size_t, double>> w;
        double total = 0;
        for (std::size_t i = 0; i < sc.size(); ++i) {
            const double d = (sc.position(i) - tug_->anchor).norm();
            if (d < rho) {
                w.emplace_back(i, 1.0 - d / rho);
                total += 1.0 - d / rho;
            }
        }
        if (!(total > 0)) return false;
        for (const auto &[i, wi] : w) tug_forces_.segment<3>(3 * static_cast<Eigen::Index>(i)) = tug_->force * (wi / total);
        return true;
    }

    struct Tug {
        Vec3 anchor, force;
    };

    std::shared_ptr<const DisplacementBasis> basis_;
    Scenario scenario_;
    ServiceOptions opt_;
    std::unique_ptr<ReducedSession> sim_;
    bool paused_ = false;
    double rate_ = opt_.rate_hz;
    std::uint64_t frame_ = 0, steps_ = 0;
    std::uint64_t topology_id_ = 0;
    std::vector<Vec3> surface_rest_;
    json faces_;
    std::optional<Tug> tug_;
    PointVectors tug_forces_;
};

namespace net {

inline constexpr std::uint32_t kMaxMessage = 256u << 20;

inline bool send_all(int fd, const void *data, std::size_t n) {
    const char *p = static_cast<const char *>(data);
    while (n > 0) {
        const ssize_t k = ::send(fd, p, n, MSG_NOSIGNAL);
        if (k < 0 && errno == EINTR) continue;
        if (k <= 0) return false;
        p += k;
        n -= static_cast<std::size_t>(k);
    }
    return true;
}

inline bool recv_all(int fd, void *data, std::size_t n) {
    char *p = static_cast<char *>(data);
    while (n > 0) {
        const ssize_t k = ::recv(fd, p, n, 0);
        if (k < 0 && errno == EINTR) continue;
        if (k <= 0) return false;
        p += k;
        n -= static_cast<std::size_t>(k);
    }
    return true;
}

inline bool send_message(int fd, const void *data, std::size_t n) {
    unsigned char len[4];
    const auto v = static_cast<std::uint32_t>(n);
    for (int i = 0; i < 4; ++i) len[i] = static_cast<unsigned char>(v >> (8 * i));
    return send_all(fd, len, 4) && send_all(fd, data, n);
}

inline bool send_message(int fd, const std::string &s) { return send_message(fd, s.data(), s.size()); }

// nullopt on a closed connection; FormatError on an oversized length.
inline std::optional<std::string> recv_message(int fd) {
    unsigned char len[4];
    if (!recv_all(fd, len, 4)) return std::nullopt;
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(len[i]) << (8 * i);
    if (n > kMaxMessage) throw FormatError("message of " + std::to_string(n) + " bytes exceeds the limit");
    std::string s(n, '\0');
    if (n > 0 && !recv_all(fd, s.data(), n)) return std::nullopt;
    return s;
}

inline std::vector<float> decode_f32(const std::string &bytes) {
    if (bytes.size() % 4 != 0) throw FormatError("f32 payload length is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + static_cast<std::size_t>(b)])) << (8 * b);
        std::memcpy(&out[i], &v, 4);
    }
    return out;
}

inline std::string encode_f32(const std::vector<float> &v) {
    std::string s(4 * v.size(), '\0');
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &v[i], 4);
        for (int b = 0; b < 4; ++b) s[4 * i + static_cast<std::size_t>(b)] = static_cast<char>(u >> (8 * b));
    }
    return s;
}

} // namespace net

// TCP front end: one acceptor thread, one reader thread per client, and the
// simulation worker. Readers only enqueue; the worker applies queued
// messages between steps and sends everything.
class SimServer {
public:
    SimServer(std::unique_ptr<InteractiveSession> session, std::size_t queue_capacity = 1024)
        : session_(std::move(session)), capacity_(queue_capacity) {}
    ~SimServer() { stop(); }
    SimServer(const SimServer &) = delete;
    SimServer &operator=(const SimServer &) = delete;

    // Binds 127.0.0.1 (or any address when `any` is set); port 0 picks a
    // free port. Returns the bound port.
    int listen(int port, bool any = false) {
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(any ? INADDR_ANY : INADDR_LOOPBACK);
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::bind(listen_fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0)
            throw IoError("cannot listen on port " + std::to_string(port) + ": " + std::strerror(errno));
        socklen_t len = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr *>(&addr), &len);
        port_ = ntohs(addr.sin_port);
        return port_;
    }

    int port() const { return port_; }

    void start() {
        if (listen_fd_ < 0) throw IoError("listen() before start()");
        running_ = true;
        acceptor_ = std::thread([this] { accept_loop(); });
        worker_ = std::thread([this] { run_loop(); });
    }

    void stop() {
        if (!running_.exchange(false)) return;
        cv_.notify_all();
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        if (acceptor_.joinable()) acceptor_.join();
        if (worker_.joinable()) worker_.join();
        std::vector<std::thread> readers;
        {
            std::lock_guard lk(clients_mu_);
            for (auto &[id, c] : clients_) ::shutdown(c->fd, SHUT_RDWR);
            readers.swap(readers_);
        }
        for (auto &t : readers)
            if (t.joinable()) t.join();
        std::lock_guard lk(clients_mu_);
        for (auto &[id, c] : clients_) ::close(c->fd);
        clients_.clear();
    }

    // Blocks until stop() is called from another thread (or a signal
    // handler flips `running`).
    void wait() {
        if (worker_.joinable()) worker_.join();
    }

    std::size_t client_count() const {
        std::lock_guard lk(clients_mu_);
        std::size_t n = 0;
        for (const auto &[id, c] : clients_) n += c->alive ? 1 : 0;
        return n;
    }
    std::uint64_t steps_taken() const { return steps_; }

private:
    struct Conn {
        int fd = -1;
        std::atomic<bool> alive{true};
        std::atomic<bool> greeted{false};
        std::mutex send_mu;
    };

    void accept_loop() {
        while (running_) {
            const int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (!running_) break;
                if (errno == EINTR || errno == ECONNABORTED) continue;
                break;
            }
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            auto c = std::make_shared<Conn>();
            c->fd = fd;
            std::lock_guard lk(clients_mu_);
            const int id = next_id_++;
            clients_[id] = c;
            readers_.emplace_back([this, id, c] { read_loop(id, c); });
        }
    }

    void read_loop(int id, std::shared_ptr<Conn> c) {
        while (running_ && c->alive) {
            std::optional<std::string> raw;
            try {
                raw = net::recv_message(c->fd);
            } catch (const FormatError &e) {
                send_to(*c, {{"type", "error"}, {"text", e.what()}}, nullptr);
                break;
            }
            if (!raw) break;
            json msg;
            try {
                msg = json::parse(*raw);
            } catch (const json::parse_error &e) {
                send_to(*c, {{"type", "error"}, {"text", std::string("malformed JSON: ") + e.what()}}, nullptr);
                continue;
            }
            std::unique_lock lk(queue_mu_);
            if (queue_.size() >= capacity_) {
                lk.unlock();
                send_to(*c, {{"type", "error"}, {"text", "message queue full"}}, nullptr);
                continue;
            }
            queue_.emplace_back(id, std::move(msg));
            lk.unlock();
            cv_.notify_all();
        }
        c->alive = false;
    }

    void send_to(Conn &c, const json &header, const std::vector<float> *payload) {
        if (!c.alive) return;
        const std::string h = header.dump();
        std::lock_guard lk(c.send_mu);
        bool ok = net::send_message(c.fd, h);
        if (ok && payload) ok = net::send_message(c.fd, net::encode_f32(*payload));
        if (!ok) c.alive = false;
    }

    void deliver(const Outgoing &o) {
        std::vector<std::shared_ptr<Conn>> targets;
        {
            std::lock_guard lk(clients_mu_);
            if (o.client >= 0) {
                if (auto it = clients_.find(o.client); it != clients_.end()) targets.push_back(it->second);
            } else {
                for (auto &[id, c] : clients_)
                    if (c->greeted && c->alive) targets.push_back(c);
            }
        }
        const bool frame = o.header.value("type", "") == "surface_frame";
        for (auto &c : targets) send_to(*c, o.header, frame ? &o.payload : nullptr);
    }

    void drain() {
        std::deque<std::pair<int, json>> batch;
        {
            std::lock_guard lk(queue_mu_);
            batch.swap(queue_);
        }
        for (auto &[id, msg] : batch) {
            const auto out = session_->handle(id, msg);
            if (msg.value("type", "") == "hello" && !out.empty() && out.front().header.value("type", "") == "hello") {
                std::lock_guard lk(clients_mu_);
                if (auto it = clients_.find(id); it != clients_.end()) it->second->greeted = true;
            }
            for (const auto &o : out) deliver(o);
        }
    }

    // Steps at the session rate on a fixed schedule; messages are applied
    // only between steps.
    void run_loop() {
        using clock = std::chrono::steady_clock;
        auto next = clock::now();
        while (running_) {
            drain();
            if (!session_->paused()) {
                for (const auto &o : session_->tick()) deliver(o);
                ++steps_;
                const auto period = std::chrono::duration_cast<clock::duration>(std::chrono::duration<double>(1.0 / session_->rate()));
                next += period;
                // a late worker drops ticks instead of bursting to catch up
                if (next < clock::now() - period) next = clock::now();
            } else {
                next = clock::now() + std::chrono::milliseconds(20);
            }
            std::unique_lock lk(queue_mu_);
            if (session_->paused())
                cv_.wait_until(lk, next, [this] { return !queue_.empty() || !running_; });
            else
                cv_.wait_until(lk, next, [this] { return !running_; });
        }
    }

    std::unique_ptr<InteractiveSession> session_;
    std::size_t capacity_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> running_{false};
    std::thread acceptor_, worker_;
    std::vector<std::thread> readers_;
    mutable std::mutex clients_mu_;
    std::map<int, std::shared_ptr<Conn>> clients_;
    int next_id_ = 0;
    std::mutex queue_mu_;
    std::condition_variable cv_;
    std::deque<std::pair<int, json>> queue_;
    std::atomic<std::uint64_t> steps_{0};
};

// Blocking client used by tests and scripts.
class Client {
public:
    struct Message {
        json header;
        std::vector<float> positions; // surface_frame only
    };

    Client(const std::string &host, int port) {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (fd_ < 0) throw IoError("socket: " + std::string(std::strerror(errno)));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(port));
        if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw IoError("bad address " + host);
        if (::connect(fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr) < 0) {
            ::close(fd_);
            throw IoError("cannot connect to " + host + ":" + std::to_string(port));
        }
        int one = 1;
        ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    ~Client() {
        if (fd_ >= 0) ::close(fd_);
    }
    Client(const Client &) = delete;
    Client &operator=(const Client &) = delete;

    void send(const json &msg) {
        if (!net::send_message(fd_, msg.dump())) throw IoError("send failed");
    }
    void send_raw(const std::string &bytes) {
        if (!net::send_message(fd_, bytes)) throw IoError("send failed");
    }

    // Next message, or nullopt on timeout / closed connection.
    std::optional<Message> receive(int timeout_ms = 5000) {
        pollfd p{fd_, POLLIN, 0};
        if (::poll(&p, 1, timeout_ms) <= 0) return std::nullopt;
        auto raw = net::recv_message(fd_);
        if (!raw) return std::nullopt;
        Message m{json::parse(*raw), {}};
        if (m.header.value("type", "") == "surface_frame") {
            auto body = net::recv_message(fd_);
            if (!body) return std::nullopt;
            m.positions = net::decode_f32(*body);
        }
        return m;
    }

    // Skips messages until one of the given type arrives.
    std::optional<Message> receive_type(const std::string &type, int timeout_ms = 5000) {
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        while (true) {
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
            if (left <= 0) return std::nullopt;
            auto m = receive(static_cast<int>(left));
            if (!m) return std::nullopt;
            if (m->header.value("type", "") == type) return m;
        }
    }

    int fd() const { return fd_; }

private:
    int fd_ = -1;
};

} // namespace licrom
