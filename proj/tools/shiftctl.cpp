// shiftctl: hub, device fleet, scenario runner and snapshot tool.

#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "teleshift/client.hpp"
#include "teleshift/codec.hpp"
#include "teleshift/error.hpp"
#include "teleshift/hub_server.hpp"
#include "teleshift/scenario.hpp"

namespace fs = std::filesystem;
using namespace teleshift;

namespace {

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

int fail(const Error& e) {
    std::cerr << e.what() << std::endl;
    return kExitDomain;
}

std::int64_t wall_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

sigset_t stop_signals() {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    return set;
}

void prepare_data_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "sessions", ec);
    const fs::path probe = dir / "sessions" / ".probe";
    std::ofstream out(probe);
    if (ec || !out || !(out << "ok")) {
        throw Error(Errc::BadDataDir, "data directory '" + dir.string() + "' is not writable", {dir.string()});
    }
    out.close();
    fs::remove(probe, ec);
}

// ---- hub ------------------------------------------------------------------

struct HubArgs {
    std::string listen = "127.0.0.1:7070";
    std::string data_dir;
    std::int64_t heartbeat_ms = 5000;
};

int cmd_hub(const HubArgs& args) {
    ServerOptions opts;
    try {
        opts.listen = parse_endpoint(args.listen);
    } catch (const Error& e) {
        std::cerr << "bad --listen: " << e.what() << std::endl;
        return kExitUsage;
    }
    opts.heartbeat_ms = args.heartbeat_ms;
    try {
        if (!args.data_dir.empty()) {
            prepare_data_dir(args.data_dir);
            opts.hub.data_dir = fs::path(args.data_dir);
        }
        // Block the stop signals before any thread starts so only sigwait sees them.
        sigset_t set = stop_signals();
        pthread_sigmask(SIG_BLOCK, &set, nullptr);

        HubServer server(opts);
        const std::size_t loaded = server.hub().load_sessions();
        server.start();
        std::cout << "READY " << server.endpoint().str() << std::endl;
        if (loaded > 0) std::cerr << "loaded " << loaded << " session(s)" << std::endl;
        int sig = 0;
        sigwait(&set, &sig);
        server.stop();
        return 0;
    } catch (const Error& e) {
        return fail(e);
    }
}

// ---- sim ------------------------------------------------------------------

struct SimArgs {
    std::string hub = "127.0.0.1:7070";
    std::string session;
    std::string mode = "collab";
    int devices = 1;
    std::string role;
    std::string net;
    std::string substructure = "S1";
    std::int64_t duration_ms = 0;
    std::int64_t sync_interval_ms = 1000;
};

NetProfile parse_net_flag(const std::string& text) {
    NetProfile p;
    if (text.empty()) return p;
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) parts.push_back(item);
    if (parts.size() != 4) throw Error(Errc::BadScenario, "--net wants latency,jitter,drop,seed");
    try {
        p.latency_ms = std::stod(parts[0]);
        p.jitter_ms = std::stod(parts[1]);
        p.drop_prob = std::stod(parts[2]);
        p.seed = std::stoull(parts[3]);
    } catch (const std::exception&) {
        throw Error(Errc::BadScenario, "--net wants numbers: latency,jitter,drop,seed");
    }
    validate(p);
    return p;
}

std::string describe(const NetProfile& p) {
    std::ostringstream out;
    out << p.latency_ms << "," << p.jitter_ms << "," << p.drop_prob << "," << p.seed;
    return out.str();
}

// One device of a live fleet: the protocol client, a socket and the local
// impairment queues for both directions.
struct LiveDevice {
    DeviceClient client;
    ImpairedLink up;
    ImpairedLink down;
    std::optional<LineClient> socket;
    std::deque<std::pair<std::int64_t, std::string>> outbound;
    std::deque<std::pair<std::int64_t, std::string>> inbound;
    bool announced = false;
    int attempt = 0;
    std::int64_t next_dial_ms = 0;
};

void queue_out(LiveDevice& d, const std::vector<Envelope>& envelopes, std::int64_t now) {
    for (const Envelope& e : envelopes) {
        auto delay = d.up.impaired_send();
        if (!delay) continue;
        std::int64_t at = now + *delay;
        if (!d.outbound.empty()) at = std::max(at, d.outbound.back().first);
        d.outbound.emplace_back(at, encode_line(e));
    }
}

int cmd_sim(const SimArgs& args) {
    try {
        const Endpoint hub = parse_endpoint(args.hub);
        const NetProfile net = parse_net_flag(args.net);
        const auto mode = args.mode == "present" ? SessionMode::Presentation
                          : args.mode == "collab" ? SessionMode::Collaboration
                                                  : throw Error(Errc::BadScenario, "--mode must be collab or present");
        std::optional<Role> first_role;
        if (!args.role.empty()) {
            first_role = role_from_string(args.role == "presenter" ? "PRESENTER"
                                          : args.role == "follower" ? "FOLLOWER"
                                          : args.role == "peer"     ? "PEER"
                                                                    : args.role);
            if (!first_role) throw Error(Errc::BadScenario, "--role must be peer, presenter or follower");
            if (!role_fits_mode(mode, *first_role)) {
                throw Error(Errc::RoleModeMismatch, args.role + " does not fit " + args.mode + " mode");
            }
        }

        sigset_t set = stop_signals();
        pthread_sigmask(SIG_BLOCK, &set, nullptr);

        std::vector<LiveDevice> fleet;
        for (int i = 0; i < args.devices; ++i) {
            ClientConfig cfg;
            cfg.client_id = args.session + "-d" + std::to_string(i);
            cfg.session = args.session;
            cfg.mode = mode;
            cfg.substructure = args.substructure;
            cfg.sync_interval_ms = args.sync_interval_ms;
            if (i == 0 && first_role) cfg.requested_role = first_role;
            NetProfile up = net, down = net;
            up.seed = net.seed + static_cast<std::uint64_t>(i);
            down.seed = up.seed ^ 0x9E3779B97F4A7C15ull;
            fleet.push_back(LiveDevice{DeviceClient(cfg), ImpairedLink(up), ImpairedLink(down), std::nullopt, {}, {}, false, 0, 0});
        }

        const std::int64_t start = wall_ms();
        const ActuationParams actuation;
        for (LiveDevice& d : fleet) {
            d.socket = LineClient::connect(hub);
            queue_out(d, d.client.connect(wall_ms() - start), wall_ms() - start);
        }

        std::int64_t next_tick = 0;
        int next_index = args.devices;
        while (args.duration_ms <= 0 || wall_ms() - start < args.duration_ms) {
            timespec zero{0, 0};
            if (sigtimedwait(&set, nullptr, &zero) > 0) break;
            const std::int64_t now = wall_ms() - start;
            for (LiveDevice& d : fleet) {
                if (!d.socket) {
                    if (now < d.next_dial_ms) continue;
                    try {
                        d.socket = LineClient::connect(hub, 200);
                        d.attempt = 0;
                        queue_out(d, d.client.connect(now), now);
                    } catch (const Error&) {
                        d.next_dial_ms = now + backoff_delay_ms(d.attempt++);
                        continue;
                    }
                }
                try {
                    while (!d.outbound.empty() && d.outbound.front().first <= now) {
                        d.socket->send_line(d.outbound.front().second);
                        d.outbound.pop_front();
                    }
                    while (auto line = d.socket->read_line(0)) {
                        auto delay = d.down.impaired_send();
                        if (!delay) continue;
                        std::int64_t at = now + *delay;
                        if (!d.inbound.empty()) at = std::max(at, d.inbound.back().first);
                        d.inbound.emplace_back(at, std::move(*line));
                    }
                } catch (const Error&) {
                    std::cerr << d.client.config().client_id << ": connection lost, reconnecting" << std::endl;
                    d.socket.reset();
                    d.outbound.clear();
                    d.inbound.clear();
                    d.client.disconnect();
                    d.announced = false;
                    d.next_dial_ms = now + backoff_delay_ms(d.attempt++);
                    continue;
                }
                while (!d.inbound.empty() && d.inbound.front().first <= now) {
                    queue_out(d, d.client.receive(decode_line(d.inbound.front().second), now), now);
                    d.inbound.pop_front();
                }
                if (d.client.link() == LinkState::Failed && d.client.failure() == Errc::DuplicateClientId) {
                    // Another fleet already uses this id; take the next free one.
                    ClientConfig cfg = d.client.config();
                    cfg.client_id = args.session + "-d" + std::to_string(next_index++);
                    d.client = DeviceClient(cfg);
                    queue_out(d, d.client.connect(now), now);
                    continue;
                }
                if (d.client.link() == LinkState::Failed) {
                    const Json& err = d.client.last_error().value_or(Json::object());
                    std::cerr << err.value("code", std::string("HubUnreachable")) << ": "
                              << err.value("message", std::string("join refused")) << std::endl;
                    return kExitDomain;
                }
                if (!d.announced && d.client.link() == LinkState::Online) {
                    d.announced = true;
                    std::cout << "READY " << d.client.config().client_id << " session=" << args.session
                              << " role=" << to_string(d.client.device().role) << " net=" << describe(net) << std::endl;
                }
            }
            if (now >= next_tick) {
                for (LiveDevice& d : fleet) {
                    d.client.tick(actuation);
                    queue_out(d, d.client.poll(now), now);
                }
                next_tick += actuation.tick_ms;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
        return 0;
    } catch (const Error& e) {
        return fail(e);
    }
}

// ---- run ------------------------------------------------------------------

int cmd_run(const std::string& file, bool realtime) {
    try {
        const Scenario scenario = load_scenario(file);
        const ScenarioReport report = run_scenario(scenario, RunOptions{realtime, false});
        std::cout << to_json(report).dump(2) << std::endl;
        if (report.timed_out) {
            std::cerr << to_string(Errc::Timeout) << ": no quiescence within " << scenario.timeout_ms << " ms"
                      << std::endl;
            return kExitDomain;
        }
        return report.converged ? 0 : kExitDomain;
    } catch (const Error& e) {
        return fail(e);
    }
}

// ---- snapshot -------------------------------------------------------------

struct SnapshotArgs {
    std::string hub = "127.0.0.1:7070";
    std::string session;
    bool json = false;
    std::string label;
    std::string snapshot_id;
};

Envelope await(LineClient& conn, Kind want) {
    const auto deadline = wall_ms() + 5000;
    while (wall_ms() < deadline) {
        auto line = conn.read_line(static_cast<int>(deadline - wall_ms()));
        if (!line) break;
        Envelope e = decode_line(*line);
        if (e.kind == Kind::Ping) continue;
        if (e.kind == Kind::Error) {
            const std::string code = e.payload.value("code", "");
            Errc errc = Errc::MalformedEnvelope;
            for (int c = 0; c <= static_cast<int>(Errc::BadDataDir); ++c) {
                if (to_string(static_cast<Errc>(c)) == code) errc = static_cast<Errc>(c);
            }
            throw Error(errc, e.payload.value("message", ""));
        }
        if (e.kind == want) return e;
    }
    throw Error(Errc::HubUnreachable, "no reply from hub");
}

void print_table(const std::vector<Json>& rows) {
    if (rows.empty()) {
        std::cout << "no snapshots" << std::endl;
        return;
    }
    std::size_t w_id = 2, w_label = 5;
    for (const Json& r : rows) {
        w_id = std::max(w_id, r.value("snapshot_id", "").size());
        w_label = std::max(w_label, r.value("label", "").size());
    }
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    std::cout << pad("id", w_id) << "  " << pad("label", w_label) << "  created_at" << std::endl;
    for (const Json& r : rows) {
        std::cout << pad(r.value("snapshot_id", ""), w_id) << "  " << pad(r.value("label", ""), w_label) << "  "
                  << r.value("created_at", std::int64_t{0}) << std::endl;
    }
}

int cmd_snapshot(const SnapshotArgs& args, const std::string& op) {
    try {
        LineClient conn = LineClient::connect(parse_endpoint(args.hub));
        const std::string me = "shiftctl-" + std::to_string(::getpid());
        std::uint64_t seq = 0;
        auto send = [&](Kind kind, Json payload) -> Kind {
            Envelope e{kind, args.session, me, ++seq, std::move(payload)};
            conn.send_line(encode_line(e));
            return kind == Kind::Hello ? Kind::Welcome : kind;
        };
        await(conn, send(Kind::Hello, Json{{"create", false}, {"ephemeral", true}}));

        if (op == "save") {
            Envelope r = await(conn, send(Kind::SnapshotSave, Json{{"label", args.label}}));
            const Json& meta = r.payload.at("snapshot");
            if (args.json) std::cout << meta.dump() << std::endl;
            else print_table({meta});
        } else if (op == "list") {
            Envelope r = await(conn, send(Kind::SnapshotList, Json::object()));
            const Json& list = r.payload.at("snapshots");
            if (args.json) std::cout << list.dump() << std::endl;
            else print_table(std::vector<Json>(list.begin(), list.end()));
        } else {
            Envelope r = await(conn, send(Kind::SnapshotRestore, Json{{"snapshot_id", args.snapshot_id}}));
            if (args.json) {
                std::cout << r.payload.dump() << std::endl;
            } else {
                std::cout << "restored " << r.payload.at("snapshot").value("snapshot_id", "") << " ("
                          << r.payload.value("updates", 0) << " arm updates)" << std::endl;
            }
        }
        return 0;
    } catch (const Error& e) {
        return fail(e);
    } catch (const Json::exception& e) {
        std::cerr << "MalformedEnvelope: " << e.what() << std::endl;
        return kExitDomain;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"TeleSHift hub, device simulator and scenario runner"};
    app.require_subcommand(1);

    HubArgs hub_args;
    auto* hub = app.add_subcommand("hub", "Run the session hub");
    hub->add_option("--listen", hub_args.listen, "host:port to listen on")->envname("TELESHIFT_LISTEN");
    hub->add_option("--data-dir", hub_args.data_dir, "Directory for session files")->envname("TELESHIFT_DATA_DIR");
    hub->add_option("--heartbeat-ms", hub_args.heartbeat_ms, "PING interval")
        ->envname("TELESHIFT_HEARTBEAT_MS")
        ->check(CLI::PositiveNumber);

    SimArgs sim_args;
    auto* sim = app.add_subcommand("sim", "Run simulated devices against a live hub");
    sim->add_option("--hub", sim_args.hub, "Hub address")->envname("TELESHIFT_HUB");
    sim->add_option("--session", sim_args.session, "Session id")->required();
    sim->add_option("--mode", sim_args.mode, "collab or present")->check(CLI::IsMember({"collab", "present"}));
    sim->add_option("--devices", sim_args.devices, "Number of devices")->check(CLI::Range(1, 256));
    sim->add_option("--role", sim_args.role, "Role requested by the first device")
        ->check(CLI::IsMember({"peer", "presenter", "follower"}));
    sim->add_option("--net", sim_args.net, "latency,jitter,drop,seed");
    sim->add_option("--substructure", sim_args.substructure, "Substructure id every device mirrors");
    sim->add_option("--duration-ms", sim_args.duration_ms, "Stop after this long (0 runs until interrupted)");
    sim->add_option("--sync-interval-ms", sim_args.sync_interval_ms, "Heartbeat and repair interval")
        ->check(CLI::PositiveNumber);

    std::string scenario_file;
    bool realtime = false;
    auto* run = app.add_subcommand("run", "Execute a scenario on a virtual clock and print its report");
    run->add_option("scenario", scenario_file, "Scenario JSON file")->required();
    run->add_flag("--realtime", realtime, "Pace the virtual clock to wall time");

    SnapshotArgs snap_args;
    auto* snap = app.add_subcommand("snapshot", "Save, list or restore session snapshots");
    snap->add_option("--hub", snap_args.hub, "Hub address")->envname("TELESHIFT_HUB");
    snap->add_option("--session", snap_args.session, "Session id")->required();
    snap->add_flag("--json", snap_args.json, "Machine-readable output");
    snap->require_subcommand(1);
    auto* save = snap->add_subcommand("save", "Snapshot the current shape");
    save->add_option("label", snap_args.label, "Label")->required();
    auto* list = snap->add_subcommand("list", "List snapshots");
    auto* restore = snap->add_subcommand("restore", "Restore a snapshot");
    restore->add_option("snapshot_id", snap_args.snapshot_id, "Snapshot id")->required();
    snap->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (*hub) return cmd_hub(hub_args);
    if (*sim) return cmd_sim(sim_args);
    if (*run) return cmd_run(scenario_file, realtime);
    if (*snap) return cmd_snapshot(snap_args, *save ? "save" : *list ? "list" : "restore");
    return kExitUsage;
}
