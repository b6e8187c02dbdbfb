// licrom: generate | train | simulate | bench | serve
//
// Failures print one JSON object on stderr ({"error": kind, "message": ...})
// and exit nonzero: 2 usage/config/validation, 3 io/format, 4 divergence or
// degenerate cubature, 1 anything else.

#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "licrom.hpp"

using namespace licrom;
namespace fs = std::filesystem;

namespace {

using clock_type = std::chrono::steady_clock;

double ms_since(clock_type::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock_type::now() - t0).count();
}

void emit(const json &j) { std::cout << j.dump() << std::endl; }

Scenario scenario_with_seed(const std::string &path, const std::optional<std::uint64_t> &seed) {
    Scenario sc = load_scenario(path);
    if (seed) sc.seed = *seed;
    return sc;
}

std::shared_ptr<const NeuralBasis> load_basis(const std::string &path) {
    return std::make_shared<const NeuralBasis>(load_checkpoint(path).basis);
}

int cmd_generate(const std::string &config, const std::string &out, const std::optional<std::uint64_t> &seed) {
    const Scenario sc = scenario_with_seed(config, seed);
    const auto t0 = clock_type::now();
    const SnapshotSet set = generate_dataset(sc);
    const double elapsed = ms_since(t0);
    save_set(set, out);
    emit({{"command", "generate"}, {"frames", set.frames.size()}, {"points_per_frame", set.cardinality().value_or(0)},
          {"meshes", set.metadata.at("meshes")}, {"seconds", elapsed / 1000.0}, {"out", out}});
    return 0;
}

struct TrainOverrides {
    std::optional<int> epochs, rank;
    std::optional<std::size_t> encoder_points;
    std::optional<std::uint64_t> seed;
    std::string resume, metrics;
};

int cmd_train(const std::string &dataset, const std::string &config, const std::string &out, const TrainOverrides &o) {
    TrainConfig cfg = config.empty() ? TrainConfig{} : train_config_from_json(read_json_file(config));
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.rank) cfg.rank = *o.rank;
    if (o.encoder_points) cfg.encoder_points = *o.encoder_points;
    if (o.seed) cfg.seed = *o.seed;
    cfg.validate();
    const SnapshotSet data = load_set(dataset);

    std::optional<Checkpoint> resume;
    if (!o.resume.empty()) resume = load_checkpoint(o.resume);
    const std::string metrics_path = o.metrics.empty() ? out + ".metrics.ndjson" : o.metrics;
    // resuming appends so the log keeps one line per epoch overall
    std::ofstream metrics(metrics_path, resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot write " + metrics_path);

    FitHooks hooks;
    hooks.metrics = &metrics;
    hooks.on_checkpoint = [&](const Checkpoint &ck) {
        save_checkpoint(ck, out);
        metrics.flush();
    };
    const auto t0 = clock_type::now();
    FitResult res = fit(data, cfg, hooks, resume ? &*resume : nullptr);
    res.checkpoint.info["dataset"] = data.metadata;
    save_checkpoint(res.checkpoint, out);
    const double first = res.history.empty() ? 0.0 : res.history.front().loss;
    const double last = res.history.empty() ? 0.0 : res.history.back().loss;
    emit({{"command", "train"}, {"epochs", res.checkpoint.epoch}, {"rank", cfg.rank}, {"first_loss", first}, {"final_loss", last},
          {"seconds", ms_since(t0) / 1000.0}, {"out", out}, {"metrics", metrics_path}});
    return 0;
}

int cmd_simulate(const std::string &checkpoint, const std::string &config, const std::string &events_path,
                 const std::string &out, const std::string &log_path, const std::optional<std::uint64_t> &seed) {
    Scenario sc = scenario_with_seed(config, seed);
    if (!events_path.empty()) {
        auto extra = parse_events(read_json_file(events_path));
        sc.events.insert(sc.events.end(), extra.begin(), extra.end());
        std::stable_sort(sc.events.begin(), sc.events.end(), [](const auto &a, const auto &b) { return a.step < b.step; });
        validate_events(sc, sc.events);
    }
    ReducedSession session(load_basis(checkpoint), sc);
    std::ofstream log_file;
    if (!log_path.empty()) {
        log_file.open(log_path);
        if (!log_file) throw IoError("cannot write " + log_path);
    }
    auto log = [&](const json &j) {
        if (log_file) log_file << j.dump() << '\n';
    };

    SnapshotSet traj;
    auto snapshot = [&] {
        const auto verts = session.mesh().surface_vertices();
        const auto u = session.surface_displacement();
        Frame f;
        f.t = session.state().t;
        f.mesh_id = session.mesh_id();
        f.load_id = sc.name;
        for (std::size_t i = 0; i < verts.size(); ++i) {
            f.X.push_back(session.mesh().vertex(verts[i]));
            f.u.push_back(u[i]);
        }
        traj.frames.push_back(std::move(f));
    };

    int non_monotone = 0, events_applied = 0;
    double step_ms = 0;
    for (int step = 1; step <= sc.steps; ++step) {
        const auto t0 = clock_type::now();
        const StepReport rep = session.step();
        step_ms += ms_since(t0);
        if (!rep.monotone()) ++non_monotone;
        log({{"step", step}, {"t", session.state().t}, {"iterations", rep.iterations}, {"converged", rep.converged},
             {"energy", rep.energies.empty() ? 0.0 : rep.energies.back()}, {"monotone", rep.monotone()}});
        for (const auto &ev : sc.events)
            if (ev.step == step) {
                json rec = session.apply(ev);
                rec["step"] = step;
                ++events_applied;
                emit({{"event", rec}});
                log({{"event", rec}});
            }
        if (step % sc.snapshot_every == 0) snapshot();
    }
    traj.metadata = {{"kind", "surface_trajectory"}, {"scenario", sc.name}, {"checkpoint", checkpoint}};
    if (!out.empty()) save_set(traj, out);
    emit({{"command", "simulate"}, {"steps", sc.steps}, {"frames", traj.frames.size()}, {"events", events_applied},
          {"mean_step_ms", step_ms / sc.steps}, {"non_monotone_steps", non_monotone}, {"out", out}});
    return 0;
}

int cmd_bench(const std::string &checkpoint, const std::string &config, int steps, const std::string &out,
              const std::optional<std::uint64_t> &seed) {
    const Scenario sc = scenario_with_seed(config, seed);
    const auto basis = load_basis(checkpoint);
    const auto &entry = sc.simulated_mesh();
    const TetMesh &mesh = *entry.mesh;

    // one-time costs
    ReducedSession session(basis, sc);
    std::vector<Vec3> points;
    for (std::size_t i = 0; i < session.scheme().size(); ++i) points.push_back(session.scheme().position(i));
    auto t0 = clock_type::now();
    (void)basis->eval_many(points);
    const double eval_ms = ms_since(t0);

    const FullSpaceModel model(mesh);
    FullState fs_state = FullState::rest(mesh);
    int full_iters = 0, red_iters = 0, non_monotone = 0;
    t0 = clock_type::now();
    for (int s = 0; s < steps; ++s) {
        StepReport rep;
        fs_state = full_step(model, sc.material, fs_state, sc.load, sc.integrator, &rep);
        full_iters += rep.iterations;
        if (!rep.monotone()) ++non_monotone;
    }
    const double full_ms = ms_since(t0) / steps;
    t0 = clock_type::now();
    for (int s = 0; s < steps; ++s) {
        const StepReport rep = session.step();
        red_iters += rep.iterations;
        if (!rep.monotone()) ++non_monotone;
    }
    const double reduced_ms = ms_since(t0) / steps;
    const json report = {{"command", "bench"},
                         {"mesh", entry.id},
                         {"vertices", mesh.vertex_count()},
                         {"tets", mesh.tet_count()},
                         {"rank", basis->rank()},
                         {"cubature_points", session.scheme().size()},
                         {"cubature_elements", session.scheme().elements().size()},
                         {"steps", steps},
                         {"full_ms", full_ms},
                         {"reduced_ms", reduced_ms},
                         {"speedup", full_ms / reduced_ms},
                         {"full_iterations_mean", static_cast<double>(full_iters) / steps},
                         {"reduced_iterations_mean", static_cast<double>(red_iters) / steps},
                         {"cubature_setup_ms", session.setup_seconds() * 1000.0},
                         {"basis_eval_ms", eval_ms},
                         {"non_monotone_steps", non_monotone}};
    if (!out.empty()) {
        std::ofstream os(out);
        if (!os) throw IoError("cannot write " + out);
        os << report.dump(2) << '\n';
    }
    emit(report);
    return 0;
}

int cmd_serve(const std::string &checkpoint, const std::string &config, int port, bool any, double rate, double duration,
              const std::optional<std::uint64_t> &seed) {
    const Scenario sc = scenario_with_seed(config, seed);
    ServiceOptions opt;
    opt.rate_hz = rate;
    auto session = std::make_unique<InteractiveSession>(load_basis(checkpoint), sc, opt);

    // block the signals before any thread starts so only sigwait sees them
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    SimServer server(std::move(session));
    const int bound = server.listen(port, any);
    server.start();
    emit({{"command", "serve"}, {"port", bound}, {"rate", rate}, {"meshes", sc.meshes.size()}});
    if (duration > 0) {
        timespec ts{static_cast<time_t>(duration), static_cast<long>((duration - std::floor(duration)) * 1e9)};
        sigtimedwait(&set, nullptr, &ts);
    } else {
        int sig = 0;
        sigwait(&set, &sig);
    }
    server.stop();
    emit({{"command", "serve"}, {"stopped", true}, {"steps", server.steps_taken()}});
    return 0;
}

int report_error(const std::string &kind, const std::string &message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << std::endl;
    return code;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Continuous neural-basis reduced-order elastodynamics"};
    app.require_subcommand(1);
    std::optional<std::uint64_t> seed;
    std::string out, config;

    auto *gen = app.add_subcommand("generate", "Run full-space trajectories of a scenario and write a snapshot set");
    gen->add_option("--config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Output snapshot set (.lcrs)")->required();
    gen->add_option("--seed", seed, "Override the scenario seed");

    std::string dataset, resume, metrics;
    TrainOverrides tr;
    auto *train = app.add_subcommand("train", "Fit the basis network and encoder to a snapshot set");
    train->add_option("dataset", dataset, "Snapshot set (.lcrs)")->required()->check(CLI::ExistingFile);
    train->add_option("--config", config, "Training config JSON")->check(CLI::ExistingFile);
    train->add_option("--out", out, "Output checkpoint (.lcrw)")->required();
    train->add_option("--seed", seed, "Override the training seed");
    train->add_option("--resume", tr.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
    train->add_option("--metrics", tr.metrics, "NDJSON metrics log (default <out>.metrics.ndjson)");
    train->add_option("--epochs", tr.epochs, "Override the epoch count");
    train->add_option("--rank", tr.rank, "Override the latent dimension");
    train->add_option("--encoder-points", tr.encoder_points, "Override the encoder subsample size");

    std::string checkpoint, events, log;
    auto *sim = app.add_subcommand("simulate", "Run reduced dynamics with scripted remesh events");
    sim->add_option("checkpoint", checkpoint, "Trained checkpoint (.lcrw)")->required()->check(CLI::ExistingFile);
    sim->add_option("--config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    sim->add_option("--events", events, "Events JSON, merged with the scenario's own")->check(CLI::ExistingFile);
    sim->add_option("--out", out, "Surface trajectory output (.lcrs)");
    sim->add_option("--log", log, "Per-step NDJSON log");
    sim->add_option("--seed", seed, "Override the scenario seed");

    int steps = 100;
    auto *bench = app.add_subcommand("bench", "Time full-space against reduced steps");
    bench->add_option("checkpoint", checkpoint, "Trained checkpoint (.lcrw)")->required()->check(CLI::ExistingFile);
    bench->add_option("--config", config, "Scenario JSON")->required()->check(CLI::ExistingFile);
    bench->add_option("--steps", steps, "Steps per solver")->check(CLI::PositiveNumber);
    bench->add_option("--out", out, "Write the report JSON here as well");
    bench->add_option("--seed", seed, "Override the scenario seed");

    int port = 7070;
    bool any = false;
    double rate = 30.0, duration = 0.0;
    auto *serve = app.add_subcommand("serve", "Interactive session over TCP");
    serve->add_option("checkpoint", checkpoint, "Trained checkpoint (.lcrw)")->required()->check(CLI::ExistingFile);
    serve->add_option("--config", config, "Scenario JSON with the mesh registry")->required()->check(CLI::ExistingFile);
    serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
    serve->add_flag("--any", any, "Listen on all interfaces instead of loopback");
    serve->add_option("--rate", rate, "Target step rate in Hz")->check(CLI::Range(0.1, 1000.0));
    serve->add_option("--duration", duration, "Stop after this many seconds (0 = until SIGINT/SIGTERM)");
    serve->add_option("--seed", seed, "Override the scenario seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        return report_error("usage", e.what(), 2);
    }

    try {
        if (*gen) return cmd_generate(config, out, seed);
        if (*train) {
            tr.seed = seed;
            return cmd_train(dataset, config, out, tr);
        }
        if (*sim) return cmd_simulate(checkpoint, config, events, out, log, seed);
        if (*bench) return cmd_bench(checkpoint, config, steps, out, seed);
        if (*serve) return cmd_serve(checkpoint, config, port, any, rate, duration, seed);
    } catch (const DivergenceError &e) {
        return report_error(e.kind(), e.what(), 4);
    } catch (const DegenerateCubatureError &e) {
        return report_error(e.kind(), e.what(), 4);
    } catch (const IoError &e) {
        return report_error(e.kind(), e.what(), 3);
    } catch (const FormatError &e) {
        return report_error(e.kind(), e.what(), 3);
    } catch (const Error &e) {
        return report_error(e.kind(), e.what(), 2);
    } catch (const std::exception &e) {
        return report_error("internal", e.what(), 1);
    }
    return 1;
}
