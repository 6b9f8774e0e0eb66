#include "teleshift/session.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "teleshift/error.hpp"

namespace teleshift {

namespace fs = std::filesystem;

AssemblyTopology shadow_view(const AssemblyTopology& authoritative, const FollowerShadow& shadow) {
    AssemblyTopology view = authoritative;
    for (const auto& [ref, u] : shadow.overlay) {
        if (!view.contains(ref.substructure)) continue;
        ArmState& arm = view.arm(ref);
        arm.target = u.target;
        arm.extension = u.target;
        arm.jointed = u.jointed;
        arm.mate = u.mate;
        arm.stamp = u.stamp;
    }
    return view;
}

std::optional<std::string> SessionRecord::presenter() const {
    for (const auto& [client, role] : roles) {
        if (role == Role::Presenter) return client;
    }
    return std::nullopt;
}

AssemblyTopology replay_log(const SessionRecord& session) {
    AssemblyTopology initial;
    for (const auto& [id, sub] : session.topology.substructures) initial.add_substructure(id);
    return settle(merge_topology(initial, session.log).topology);
}

std::optional<std::string> first_violation(const SessionRecord& session) {
    if (!is_valid_id(session.id)) return "invalid session id";
    if (auto v = first_violation(session.topology)) return "topology: " + *v;
    std::size_t presenters = 0;
    for (const auto& [client, role] : session.roles) {
        if (!is_valid_id(client)) return "invalid client id '" + client + "'";
        if (!role_fits_mode(session.mode, role)) {
            return "role " + std::string(to_string(role)) + " of '" + client + "' does not fit the mode";
        }
        if (role == Role::Presenter) ++presenters;
    }
    if (session.mode == SessionMode::Presentation && presenters != 1) {
        return "presentation session needs exactly one presenter";
    }
    for (const auto& [id, sub] : session.topology.substructures) {
        for (const ArmState& arm : sub.arms) {
            if (arm.extension != arm.target) return "authoritative arm of '" + id + "' is not at rest";
        }
    }
    if (replay_log(session) != session.topology) return "log replay does not reproduce the topology";
    for (const auto& [client, shadow] : session.shadows) {
        auto role = session.roles.find(client);
        if (role == session.roles.end() || role->second != Role::Follower) {
            return "shadow held for non-follower '" + client + "'";
        }
        for (const auto& [ref, u] : shadow.overlay) {
            if (!session.topology.contains(ref.substructure)) return "shadow pins unknown '" + ref.substructure + "'";
            if (u.ref() != ref) return "shadow entry filed under the wrong arm";
        }
    }
    std::set<std::string> ids;
    auto check_snapshots = [&](const std::vector<Snapshot>& list) -> std::optional<std::string> {
        for (const Snapshot& s : list) {
            if (!ids.insert(s.snapshot_id()).second) return "duplicate snapshot id '" + s.snapshot_id() + "'";
        }
        return std::nullopt;
    };
    if (auto v = check_snapshots(session.snapshots)) return v;
    for (const auto& [client, shadow] : session.shadows) {
        if (auto v = check_snapshots(shadow.snapshots)) return v;
    }
    return std::nullopt;
}

Json to_json(const SessionRecord& s) {
    Json roles = Json::object();
    for (const auto& [client, role] : s.roles) roles[client] = to_string(role);
    Json snapshots = Json::array();
    for (const Snapshot& snap : s.snapshots) snapshots.push_back(to_json(snap));
    Json log = Json::array();
    for (const ArmUpdate& u : s.log) log.push_back(to_json(u));
    Json shadows = Json::object();
    for (const auto& [client, shadow] : s.shadows) {
        Json overlay = Json::array();
        for (const auto& [ref, u] : shadow.overlay) overlay.push_back(to_json(u));
        Json own = Json::array();
        for (const Snapshot& snap : shadow.snapshots) own.push_back(to_json(snap));
        shadows[client] = Json{{"overlay", std::move(overlay)}, {"snapshots", std::move(own)}};
    }
    return Json{{"id", s.id},
                {"mode", to_string(s.mode)},
                {"roles", std::move(roles)},
                {"topology", to_json(s.topology)},
                {"snapshots", std::move(snapshots)},
                {"log", std::move(log)},
                {"shadows", std::move(shadows)},
                {"clock", s.clock.counter},
                {"snapshots_issued", s.snapshots_issued}};
}

SessionRecord session_from_json(const Json& j) {
    try {
        auto need = [&](const char* name) -> const Json& {
            auto it = j.find(name);
            if (it == j.end()) throw Error(Errc::MalformedEnvelope, std::string("missing field '") + name + "'");
            return *it;
        };
        if (!j.is_object()) throw Error(Errc::MalformedEnvelope, "session file must hold an object");
        SessionRecord s;
        s.id = need("id").get<std::string>();
        auto mode = session_mode_from_string(need("mode").get<std::string>());
        if (!mode) throw Error(Errc::MalformedEnvelope, "unknown session mode");
        s.mode = *mode;
        for (const auto& [client, role] : need("roles").items()) {
            auto r = role_from_string(role.get<std::string>());
            if (!r) throw Error(Errc::MalformedEnvelope, "unknown role for '" + client + "'");
            s.roles.emplace(client, *r);
        }
        s.topology = topology_from_json(need("topology"));
        for (const Json& snap : need("snapshots")) s.snapshots.push_back(snapshot_from_json(snap));
        for (const Json& u : need("log")) s.log.push_back(arm_update_from_json(u));
        for (const auto& [client, shadow] : need("shadows").items()) {
            FollowerShadow fs;
            for (const Json& u : shadow.at("overlay")) {
                ArmUpdate update = arm_update_from_json(u);
                fs.overlay.emplace(update.ref(), std::move(update));
            }
            for (const Json& snap : shadow.at("snapshots")) fs.snapshots.push_back(snapshot_from_json(snap));
            s.shadows.emplace(client, std::move(fs));
        }
        s.clock.counter = need("clock").get<std::uint64_t>();
        s.snapshots_issued = need("snapshots_issued").get<std::uint64_t>();
        if (auto v = first_violation(s)) throw Error(Errc::MalformedEnvelope, *v);
        return s;
    } catch (const Error& e) {
        if (e.code() == Errc::CorruptFile) throw;
        throw Error(Errc::CorruptFile, e.message());
    } catch (const Json::exception& e) {
        throw Error(Errc::CorruptFile, e.what());
    }
}

fs::path session_path(const fs::path& data_dir, const std::string& session_id) {
    return data_dir / "sessions" / (session_id + ".json");
}

void persist_session(const SessionRecord& session, const fs::path& file) {
    fs::create_directories(file.parent_path());
    fs::path tmp = file;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(Errc::BadDataDir, "cannot write " + tmp.string());
        out << canonical(to_json(session)) << '\n';
        out.flush();
        if (!out) throw Error(Errc::BadDataDir, "short write to " + tmp.string());
    }
    fs::rename(tmp, file);
}

SessionRecord load_session(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw Error(Errc::CorruptFile, "cannot open " + file.string());
    std::stringstream buf;
    buf << in.rdbuf();
    Json j = Json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw Error(Errc::CorruptFile, "not valid JSON");
    return session_from_json(j);
}

}  // namespace teleshift
