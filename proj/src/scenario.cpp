#include "teleshift/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "teleshift/error.hpp"

namespace teleshift {

Simulation::Simulation(ActuationParams actuation, bool keep_trace)
    : actuation_(actuation), keep_trace_(keep_trace) {
    if (!(actuation_.v_max_mm_s > 0.0) || actuation_.tick_ms <= 0) {
        throw Error(Errc::BadScenario, "actuation needs v_max > 0 and tick > 0");
    }
}

std::size_t Simulation::add_device(ClientConfig config, NetProfile net) {
    NetProfile down = net;
    // Independent stream for the hub-to-device direction.
    down.seed = net.seed ^ 0x9E3779B97F4A7C15ull;
    devices_.push_back(Node{DeviceClient(std::move(config)), ImpairedLink(net), ImpairedLink(down), std::nullopt, 0, 0, false});
    return devices_.size() - 1;
}

std::size_t Simulation::index_of(const std::string& client_id) const {
    for (std::size_t i = 0; i < devices_.size(); ++i) {
        if (devices_[i].client.config().client_id == client_id) return i;
    }
    throw Error(Errc::BadScenario, "no device named " + client_id);
}

void Simulation::send_up(std::size_t i, const std::vector<Envelope>& envelopes) {
    Node& n = devices_[i];
    if (!n.conn) return;
    for (const Envelope& e : envelopes) {
        auto delay = n.up.impaired_send();
        if (!delay) continue;
        n.last_up_ms = std::max(now_ + *delay, n.last_up_ms);
        queue_.push(InFlight{n.last_up_ms, order_++, true, i, *n.conn, encode_line(e)});
    }
}

void Simulation::send_down(std::size_t i, const Envelope& e) {
    Node& n = devices_[i];
    if (!n.conn) return;
    auto delay = n.down.impaired_send();
    if (!delay) return;
    n.last_down_ms = std::max(now_ + *delay, n.last_down_ms);
    queue_.push(InFlight{n.last_down_ms, order_++, false, i, *n.conn, encode_line(e)});
}

void Simulation::deliver(const InFlight& m) {
    Node& n = devices_[m.device];
    if (!n.conn || *n.conn != m.conn) return;  // the connection it was sent on is gone
    const std::string& id = n.client.config().client_id;
    if (keep_trace_) trace_.push_back(TraceEntry{now_, m.to_hub ? id : "hub", m.to_hub ? "hub" : id, m.line});
    if (m.to_hub) {
        for (const Hub::Outbound& out : hub_.handle_line(m.conn, m.line, now_)) {
            auto it = by_conn_.find(out.to);
            if (it != by_conn_.end()) send_down(it->second, out.envelope);
        }
    } else {
        send_up(m.device, n.client.receive(decode_line(m.line), now_));
    }
}

void Simulation::connect(std::size_t i) {
    Node& n = devices_.at(i);
    if (n.conn) disconnect(i);
    n.conn = hub_.open_connection();
    by_conn_[*n.conn] = i;
    n.wants_online = true;
    send_up(i, n.client.connect(now_));
}

void Simulation::disconnect(std::size_t i) {
    Node& n = devices_.at(i);
    if (n.conn) {
        hub_.close_connection(*n.conn);
        by_conn_.erase(*n.conn);
        n.conn.reset();
    }
    n.client.disconnect();
    n.wants_online = false;
}

void Simulation::override_arm(std::size_t i, ArmId arm, double mm) {
    send_up(i, devices_.at(i).client.override_arm(arm, mm));
}

void Simulation::join(std::size_t i, const std::string& other, ArmId arm) {
    send_up(i, devices_.at(i).client.join(other, arm));
}

void Simulation::save_snapshot(std::size_t i, const std::string& label) {
    send_up(i, devices_.at(i).client.save_snapshot(label));
}

void Simulation::restore_snapshot(std::size_t i, const std::optional<std::string>& id,
                                  const std::optional<std::string>& label) {
    send_up(i, devices_.at(i).client.restore_snapshot(id, label));
}

void Simulation::follow_presenter(std::size_t i) { send_up(i, devices_.at(i).client.follow_presenter()); }

void Simulation::step_to(std::int64_t t) {
    now_ = t;
    while (!queue_.empty() && queue_.top().at_ms <= now_) {
        InFlight m = queue_.top();
        queue_.pop();
        deliver(m);
    }
    if (now_ == next_tick_ms_) {
        for (Node& n : devices_) n.client.tick(actuation_);
        for (std::size_t i = 0; i < devices_.size(); ++i) send_up(i, devices_[i].client.poll(now_));
        // Replies generated at this instant with zero latency land now too.
        while (!queue_.empty() && queue_.top().at_ms <= now_) {
            InFlight m = queue_.top();
            queue_.pop();
            deliver(m);
        }
        next_tick_ms_ += actuation_.tick_ms;
    }
}

void Simulation::run_until(std::int64_t t_ms) {
    while (true) {
        std::int64_t next = next_tick_ms_;
        if (!queue_.empty()) next = std::min(next, queue_.top().at_ms);
        next = std::max(next, now_);
        if (next > t_ms) break;
        step_to(next);
    }
    now_ = std::max(now_, t_ms);
}

bool Simulation::quiescent() const {
    if (!queue_.empty()) return false;
    for (const Node& n : devices_) {
        if (!settled(n.client.device())) return false;
        if (!n.wants_online || n.client.link() == LinkState::Failed) continue;
        if (!n.client.idle()) return false;
        if (!n.conn || n.client.covered_seq() < hub_.last_sent_seq(*n.conn)) return false;
    }
    return true;
}

std::optional<std::int64_t> Simulation::run_until_quiescent(std::int64_t limit_ms) {
    while (!quiescent()) {
        std::int64_t next = next_tick_ms_;
        if (!queue_.empty()) next = std::min(next, queue_.top().at_ms);
        if (next > limit_ms) {
            run_until(limit_ms);
            return std::nullopt;
        }
        run_until(next);
    }
    return now_;
}

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& why) {
    throw Error(Errc::BadScenario, where + ": " + why);
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

SessionMode parse_mode(const std::string& s, const std::string& where) {
    const std::string m = lower(s);
    if (m == "collab" || m == "collaboration") return SessionMode::Collaboration;
    if (m == "present" || m == "presentation") return SessionMode::Presentation;
    bad(where, "unknown mode '" + s + "'");
}

Role parse_role(const std::string& s, const std::string& where) {
    const std::string r = lower(s);
    if (r == "peer") return Role::Peer;
    if (r == "presenter") return Role::Presenter;
    if (r == "follower") return Role::Follower;
    bad(where, "unknown role '" + s + "'");
}

NetProfile parse_net(const Json& j, const std::string& where) {
    if (!j.is_object()) bad(where, "expected an object");
    NetProfile p;
    p.latency_ms = j.value("latency_ms", 0.0);
    p.jitter_ms = j.value("jitter_ms", 0.0);
    p.drop_prob = j.value("drop_prob", 0.0);
    p.seed = j.value("seed", std::uint64_t{0});
    try {
        validate(p);
    } catch (const Error& e) {
        bad(where, e.what());
    }
    return p;
}

ArmId parse_arm(const Json& j, const std::string& where) {
    if (!j.is_string()) bad(where, "arm must be a string such as \"+x\"");
    auto arm = arm_from_key(j.get<std::string>());
    if (!arm) bad(where, "unknown arm '" + j.get<std::string>() + "'");
    return *arm;
}

ScenarioAction parse_action(const Json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("type") || !j["type"].is_string()) bad(where, "action needs a type");
    const std::string type = j["type"].get<std::string>();
    ScenarioAction a;
    if (type == "override") {
        a.type = ScenarioAction::Type::Override;
        a.arm = parse_arm(j.value("arm", Json()), where + ".arm");
        if (!j.contains("mm") || !j["mm"].is_number()) bad(where + ".mm", "expected a number");
        a.mm = j["mm"].get<double>();
    } else if (type == "disconnect") {
        a.type = ScenarioAction::Type::Disconnect;
    } else if (type == "reconnect") {
        a.type = ScenarioAction::Type::Reconnect;
    } else if (type == "join") {
        a.type = ScenarioAction::Type::Join;
        a.arm = parse_arm(j.value("arm", Json()), where + ".arm");
        if (!j.contains("other") || !j["other"].is_string()) bad(where + ".other", "expected a substructure id");
        a.other = j["other"].get<std::string>();
    } else if (type == "snapshot_save") {
        a.type = ScenarioAction::Type::SnapshotSave;
        a.label = j.value("label", "");
    } else if (type == "snapshot_restore") {
        a.type = ScenarioAction::Type::SnapshotRestore;
        if (j.contains("id")) a.snapshot_id = j["id"].get<std::string>();
        a.label = j.value("label", "");
        if (!a.snapshot_id && a.label.empty()) bad(where, "snapshot_restore needs id or label");
    } else if (type == "follow") {
        a.type = ScenarioAction::Type::Follow;
    } else {
        bad(where + ".type", "unknown action '" + type + "'");
    }
    return a;
}

}  // namespace

Scenario parse_scenario(const Json& j) {
    if (!j.is_object()) bad("scenario", "expected an object");
    try {
        Scenario s;
        s.session = j.value("session", s.session);
        if (!is_valid_session_id(s.session)) bad("session", "invalid session id");
        s.mode = parse_mode(j.value("mode", std::string("collab")), "mode");
        if (auto act = j.find("actuation"); act != j.end()) {
            s.actuation.v_max_mm_s = act->value("v_max_mm_s", s.actuation.v_max_mm_s);
            s.actuation.tick_ms = act->value("tick_ms", s.actuation.tick_ms);
            if (!(s.actuation.v_max_mm_s > 0.0) || s.actuation.tick_ms <= 0) {
                bad("actuation", "v_max_mm_s and tick_ms must be positive");
            }
        }
        s.sync_interval_ms = j.value("sync_interval_ms", s.sync_interval_ms);
        s.timeout_ms = j.value("timeout_ms", s.timeout_ms);
        if (s.sync_interval_ms <= 0) bad("sync_interval_ms", "must be positive");
        if (s.timeout_ms <= 0) bad("timeout_ms", "must be positive");

        NetProfile base;
        if (j.contains("net")) base = parse_net(j["net"], "net");

        const Json& devices = j.value("devices", Json::array());
        if (!devices.is_array() || devices.empty()) bad("devices", "expected a non-empty list");
        std::set<std::string> ids;
        for (std::size_t i = 0; i < devices.size(); ++i) {
            const std::string where = "devices[" + std::to_string(i) + "]";
            const Json& d = devices[i];
            ScenarioDevice dev;
            dev.id = d.value("id", "");
            if (!is_valid_id(dev.id) || dev.id == kHubSender) bad(where + ".id", "invalid device id");
            if (!ids.insert(dev.id).second) bad(where + ".id", "duplicate device id " + dev.id);
            dev.substructure = d.value("substructure", dev.id);
            if (!is_valid_id(dev.substructure)) bad(where + ".substructure", "invalid substructure id");
            if (d.contains("role")) dev.role = parse_role(d["role"].get<std::string>(), where + ".role");
            if (d.contains("net")) {
                dev.net = parse_net(d["net"], where + ".net");
            } else {
                dev.net = base;
                dev.net.seed = base.seed + i;
            }
            s.devices.push_back(std::move(dev));
        }
        if (s.mode == SessionMode::Presentation) {
            auto presenters = std::count_if(s.devices.begin(), s.devices.end(),
                                            [](const ScenarioDevice& d) { return d.role == Role::Presenter; });
            if (presenters != 1) bad("devices", "a presentation scenario needs exactly one presenter");
        }
        for (std::size_t i = 0; i < s.devices.size(); ++i) {
            ScenarioDevice& d = s.devices[i];
            const std::string where = "devices[" + std::to_string(i) + "].role";
            if (!d.role) d.role = s.mode == SessionMode::Collaboration ? Role::Peer : Role::Follower;
            if (!role_fits_mode(s.mode, *d.role)) bad(where, "role does not fit the session mode");
        }

        const Json& events = j.value("events", Json::array());
        if (!events.is_array()) bad("events", "expected a list");
        for (std::size_t i = 0; i < events.size(); ++i) {
            const std::string where = "events[" + std::to_string(i) + "]";
            const Json& e = events[i];
            ScenarioEvent ev;
            if (!e.contains("at_ms") || !e["at_ms"].is_number_integer() || e["at_ms"].get<std::int64_t>() < 0) {
                bad(where + ".at_ms", "expected a non-negative integer");
            }
            ev.at_ms = e["at_ms"].get<std::int64_t>();
            ev.device = e.value("device", "");
            if (!ids.contains(ev.device)) bad(where + ".device", "unknown device '" + ev.device + "'");
            ev.action = parse_action(e.value("action", Json()), where + ".action");
            s.events.push_back(std::move(ev));
        }
        std::stable_sort(s.events.begin(), s.events.end(),
                         [](const ScenarioEvent& a, const ScenarioEvent& b) { return a.at_ms < b.at_ms; });
        return s;
    } catch (const Json::exception& e) {
        bad("scenario", e.what());
    }
}

Scenario parse_scenario_text(std::string_view text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
        bad("line " + std::to_string(line), "invalid JSON");
    }
    return parse_scenario(j);
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::BadScenario, "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario_text(buf.str());
}

Json to_json(const Divergence& d) {
    return Json{{"device", d.device}, {"substructure", d.substructure}, {"arm", d.arm},
                {"field", d.field},   {"expected", d.expected},         {"actual", d.actual}};
}

namespace {

Json divergence_list(const std::vector<Divergence>& list) {
    Json out = Json::array();
    for (const Divergence& d : list) out.push_back(to_json(d));
    return out;
}

void diff_arm(const std::string& device, const std::string& sub, ArmId arm, const ArmState& expected,
              const ArmState& actual, bool values_only, const std::string& prefix, std::vector<Divergence>& out) {
    auto add = [&](const char* field, Json e, Json a) {
        out.push_back(Divergence{device, sub, std::string(arm_key(arm)), prefix + field, std::move(e), std::move(a)});
    };
    if (expected.target != actual.target) add("target", expected.target, actual.target);
    if (expected.jointed != actual.jointed) add("jointed", expected.jointed, actual.jointed);
    if (expected.mate != actual.mate) add("mate", expected.mate, actual.mate);
    if (values_only) return;
    if (expected.stamp != actual.stamp) add("stamp", to_json(expected.stamp), to_json(actual.stamp));
    if (expected.extension != actual.extension) add("extension", expected.extension, actual.extension);
}

}  // namespace

Json to_json(const ScenarioReport& r) {
    Json checkpoints = Json::array();
    for (const Checkpoint& c : r.checkpoints) {
        checkpoints.push_back(Json{{"at_ms", c.at_ms}, {"device", c.device}, {"local_diffs", divergence_list(c.local_diffs)}});
    }
    Json hashes = Json::object();
    for (const auto& [k, v] : r.final_state_hash) hashes[k] = v;
    return Json{{"session", r.session},
                {"mode", r.mode},
                {"converged", r.converged},
                {"timed_out", r.timed_out},
                {"settle_ms", r.settle_ms},
                {"final_state_hash", std::move(hashes)},
                {"divergences", divergence_list(r.divergences)},
                {"local_diffs", divergence_list(r.local_diffs)},
                {"checkpoints", std::move(checkpoints)}};
}

void compare_replicas(const Simulation& sim, SessionMode mode, std::vector<Divergence>& divergences,
                      std::vector<Divergence>& local_diffs) {
    if (sim.device_count() == 0) return;
    const auto record = sim.hub().session(sim.device(0).config().session);
    for (std::size_t i = 0; i < sim.device_count(); ++i) {
        if (!sim.wants_online(i)) continue;
        const DeviceClient& c = sim.device(i);
        const std::string& id = c.config().client_id;
        const SubstructureState& mine = c.device().substructure;
        if (c.link() == LinkState::Failed) {
            divergences.push_back(Divergence{id, mine.id, "", "link", "online", std::string(to_string(c.link()))});
            continue;
        }
        if (!record || !record->topology.contains(mine.id)) {
            divergences.push_back(Divergence{id, mine.id, "", "substructure", "present", "missing at hub"});
            continue;
        }
        const SubstructureState& hub_sub = record->topology.at(mine.id);
        const bool follower = mode == SessionMode::Presentation && c.device().role == Role::Follower;
        std::optional<SubstructureState> shadow;
        if (follower) {
            auto it = record->shadows.find(id);
            FollowerShadow empty;
            shadow = shadow_view(record->topology, it == record->shadows.end() ? empty : it->second).at(mine.id);
        }
        for (ArmId a : kAllArms) {
            if (follower && c.device().pinned.contains(a)) {
                diff_arm(id, mine.id, a, hub_sub.arm(a), mine.arm(a), true, "", local_diffs);
                diff_arm(id, mine.id, a, shadow->arm(a), mine.arm(a), false, "shadow.", divergences);
            } else {
                diff_arm(id, mine.id, a, hub_sub.arm(a), mine.arm(a), false, "", divergences);
                if (follower && !(shadow->arm(a) == hub_sub.arm(a))) {
                    divergences.push_back(Divergence{id, mine.id, std::string(arm_key(a)), "pinned", "true", "false"});
                }
            }
        }
    }
}

namespace {

std::vector<Divergence> follower_diffs(const Simulation& sim, SessionMode mode) {
    std::vector<Divergence> divergences, local;
    if (mode == SessionMode::Presentation) compare_replicas(sim, mode, divergences, local);
    return local;
}

void apply(Simulation& sim, std::size_t i, const ScenarioAction& a) {
    switch (a.type) {
        case ScenarioAction::Type::Override: sim.override_arm(i, a.arm, a.mm); break;
        case ScenarioAction::Type::Disconnect: sim.disconnect(i); break;
        case ScenarioAction::Type::Reconnect: sim.connect(i); break;
        case ScenarioAction::Type::Join: sim.join(i, a.other, a.arm); break;
        case ScenarioAction::Type::SnapshotSave: sim.save_snapshot(i, a.label); break;
        case ScenarioAction::Type::SnapshotRestore:
            sim.restore_snapshot(i, a.snapshot_id, a.label.empty() ? std::nullopt : std::optional(a.label));
            break;
        case ScenarioAction::Type::Follow: sim.follow_presenter(i); break;
    }
}

}  // namespace

ScenarioRun run_scenario_full(const Scenario& scenario, RunOptions options) {
    ScenarioRun run;
    run.sim = std::make_unique<Simulation>(scenario.actuation, options.keep_trace);
    Simulation& sim = *run.sim;

    // Presenter first so followers find the session already open.
    std::vector<std::size_t> order(scenario.devices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_partition(order.begin(), order.end(),
                          [&](std::size_t i) { return scenario.devices[i].role == Role::Presenter; });
    for (const ScenarioDevice& d : scenario.devices) {
        ClientConfig cfg;
        cfg.client_id = d.id;
        cfg.session = scenario.session;
        cfg.mode = scenario.mode;
        cfg.requested_role = d.role;
        cfg.substructure = d.substructure;
        cfg.sync_interval_ms = scenario.sync_interval_ms;
        sim.add_device(std::move(cfg), d.net);
    }
    for (std::size_t i : order) sim.connect(i);

    const auto wall_start = std::chrono::steady_clock::now();
    auto advance = [&](std::int64_t t) {
        if (!options.realtime) {
            sim.run_until(t);
            return;
        }
        while (sim.now() < t) {
            const std::int64_t step = std::min(t, sim.now() + scenario.actuation.tick_ms);
            std::this_thread::sleep_until(wall_start + std::chrono::milliseconds(step));
            sim.run_until(step);
        }
    };

    ScenarioReport& report = run.report;
    report.session = scenario.session;
    report.mode = std::string(to_string(scenario.mode));
    for (const ScenarioEvent& ev : scenario.events) {
        if (ev.at_ms > scenario.timeout_ms) break;
        advance(ev.at_ms);
        const std::size_t i = sim.index_of(ev.device);
        if (ev.action.type == ScenarioAction::Type::SnapshotRestore && scenario.mode == SessionMode::Presentation) {
            report.checkpoints.push_back(Checkpoint{sim.now(), ev.device, follower_diffs(sim, scenario.mode)});
        }
        apply(sim, i, ev.action);
    }

    std::optional<std::int64_t> settled_at;
    if (options.realtime) {
        while (!sim.quiescent() && sim.now() < scenario.timeout_ms) advance(sim.now() + scenario.actuation.tick_ms);
        if (sim.quiescent()) settled_at = sim.now();
    } else {
        settled_at = sim.run_until_quiescent(scenario.timeout_ms);
    }

    report.timed_out = !settled_at.has_value();
    report.settle_ms = settled_at.value_or(sim.now());
    compare_replicas(sim, scenario.mode, report.divergences, report.local_diffs);
    if (report.timed_out) {
        report.divergences.push_back(Divergence{"", "", "", "quiescence", "quiescent",
                                                "timeout after " + std::to_string(scenario.timeout_ms) + " ms"});
    }
    for (std::size_t i = 0; i < sim.device_count(); ++i) {
        const DeviceClient& c = sim.device(i);
        report.final_state_hash[c.config().client_id] = sha256_hex(canonical(to_json(c.device().substructure)));
    }
    if (auto record = sim.hub().session(scenario.session)) {
        report.final_state_hash[std::string(kHubSender)] = sha256_hex(canonical(to_json(record->topology)));
    }
    report.converged = !report.timed_out && report.divergences.empty();
    return run;
}

ScenarioReport run_scenario(const Scenario& scenario, RunOptions options) {
    return run_scenario_full(scenario, options).report;
}

}  // namespace teleshift
