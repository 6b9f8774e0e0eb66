#include "teleshift/hub.hpp"

#include <algorithm>
#include <iostream>

namespace teleshift {

namespace fs = std::filesystem;

namespace {

Json pinned_refs(const FollowerShadow& shadow) {
    Json refs = Json::array();
    for (const auto& [ref, u] : shadow.overlay) refs.push_back(to_json(ref));
    return refs;
}

Json updates_json(const std::vector<ArmUpdate>& updates) {
    Json list = Json::array();
    for (const ArmUpdate& u : updates) list.push_back(to_json(u));
    return list;
}

Json roles_json(const SessionRecord& record) {
    Json roles = Json::object();
    for (const auto& [client, role] : record.roles) roles[client] = to_string(role);
    return roles;
}

// Authoritative state plus, for a diverged follower, its private view.
Json state_payload(const SessionRecord& record, const std::string& client) {
    Json payload{{"topology", to_json(record.topology)}};
    auto shadow = record.shadows.find(client);
    if (shadow != record.shadows.end() && shadow->second.diverged()) {
        payload["shadow"] = Json{{"topology", to_json(shadow_view(record.topology, shadow->second))},
                                 {"pinned", pinned_refs(shadow->second)}};
    }
    return payload;
}

bool bool_option(const Json& payload, const char* name, bool fallback) {
    auto it = payload.find(name);
    if (it == payload.end() || it->is_null()) return fallback;
    if (!it->is_boolean()) throw Error(Errc::MalformedEnvelope, std::string("'") + name + "' must be a boolean");
    return it->get<bool>();
}

std::optional<std::string> string_option(const Json& payload, const char* name) {
    auto it = payload.find(name);
    if (it == payload.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw Error(Errc::MalformedEnvelope, std::string("'") + name + "' must be a string");
    return it->get<std::string>();
}

std::vector<ArmUpdate> parse_updates(const Json& payload) {
    auto it = payload.find("updates");
    if (it == payload.end() || !it->is_array()) throw Error(Errc::MalformedEnvelope, "'updates' must be an array");
    std::vector<ArmUpdate> out;
    out.reserve(it->size());
    for (const Json& u : *it) out.push_back(arm_update_from_json(u));
    return out;
}

const Snapshot* find_snapshot(const std::vector<Snapshot>& list, const std::optional<std::string>& id,
                              const std::optional<std::string>& label) {
    // Latest match wins for labels; ids are unique.
    for (auto it = list.rbegin(); it != list.rend(); ++it) {
        if (id && it->snapshot_id() == *id) return &*it;
        if (!id && label && it->label() == *label) return &*it;
    }
    return nullptr;
}

}  // namespace

bool is_valid_session_id(std::string_view id) noexcept {
    if (!is_valid_id(id) || id == "." || id == "..") return false;
    return id.find('/') == std::string_view::npos && id.find('\\') == std::string_view::npos;
}

struct Hub::Context {
    ConnectionId conn;
    std::string client;
    Slot& slot;
    const Emit& emit;
    bool dirty = false;

    SessionRecord& record() { return slot.record; }
    Role role() const { return slot.record.roles.at(client); }
};

Hub::Hub(HubOptions options) : options_(std::move(options)) {}

std::size_t Hub::load_sessions() {
    if (!options_.data_dir) return 0;
    fs::path dir = *options_.data_dir / "sessions";
    if (!fs::exists(dir)) return 0;
    std::size_t loaded = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        SessionRecord record = load_session(entry.path());
        auto slot = std::make_shared<Slot>();
        slot->record = std::move(record);
        std::lock_guard lock(sessions_mu_);
        sessions_[slot->record.id] = std::move(slot);
        ++loaded;
    }
    return loaded;
}

ConnectionId Hub::open_connection() {
    std::lock_guard lock(conns_mu_);
    ConnectionId id = next_conn_++;
    conns_.emplace(id, Connection{});
    return id;
}

void Hub::close_connection(ConnectionId conn) {
    Connection info;
    {
        std::lock_guard lock(conns_mu_);
        auto it = conns_.find(conn);
        if (it == conns_.end()) return;
        info = it->second;
        conns_.erase(it);
    }
    if (info.session.empty()) return;
    auto slot = find_slot(info.session);
    if (!slot) return;
    std::lock_guard lock(slot->mu);
    auto live = slot->live.find(info.client);
    if (live != slot->live.end() && live->second == conn) slot->live.erase(live);
    if (slot->ephemeral.erase(info.client) > 0) {
        slot->record.roles.erase(info.client);
        slot->record.shadows.erase(info.client);
        persist(*slot);
    }
}

std::shared_ptr<Hub::Slot> Hub::find_slot(std::string_view id) const {
    std::lock_guard lock(sessions_mu_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

void Hub::send(ConnectionId conn, Envelope envelope, const Emit& emit) {
    std::lock_guard lock(conns_mu_);
    auto it = conns_.find(conn);
    if (it == conns_.end()) return;
    envelope.seq = ++it->second.last_out;
    emit(conn, envelope);
}

void Hub::persist(const Slot& slot) const {
    if (!options_.data_dir) return;
    try {
        persist_session(slot.record, session_path(*options_.data_dir, slot.record.id));
    } catch (const std::exception& e) {
        std::cerr << "persist " << slot.record.id << " failed: " << e.what() << '\n';
    }
}

std::vector<Hub::Outbound> Hub::handle(ConnectionId conn, const Envelope& envelope, std::int64_t now_ms) {
    std::vector<Outbound> out;
    handle(conn, envelope, now_ms, [&](ConnectionId to, const Envelope& e) { out.push_back({to, e}); });
    return out;
}

std::vector<Hub::Outbound> Hub::handle_line(ConnectionId conn, std::string_view line, std::int64_t now_ms) {
    std::vector<Outbound> out;
    handle_line(conn, line, now_ms, [&](ConnectionId to, const Envelope& e) { out.push_back({to, e}); });
    return out;
}

void Hub::handle_line(ConnectionId conn, std::string_view line, std::int64_t now_ms, const Emit& emit) {
    Envelope envelope;
    try {
        envelope = decode_line(line);
    } catch (const Error& e) {
        send(conn, error_envelope("", e.code(), e.message()), emit);
        return;
    }
    handle(conn, envelope, now_ms, emit);
}

void Hub::handle(ConnectionId conn, const Envelope& e, std::int64_t now_ms, const Emit& emit) {
    std::string session;
    std::string client;
    {
        std::lock_guard lock(conns_mu_);
        auto it = conns_.find(conn);
        if (it == conns_.end()) return;
        Connection& c = it->second;
        if (c.last_in && e.seq <= *c.last_in) {
            Envelope err = error_envelope(e.session, Errc::StaleSeq,
                                          "seq " + std::to_string(e.seq) + " after " + std::to_string(*c.last_in),
                                          e.kind);
            err.seq = ++c.last_out;
            emit(conn, err);
            return;
        }
        c.last_in = e.seq;
        if (e.kind == Kind::Pong) {
            c.ping_outstanding = false;
            c.missed_pongs = 0;
            return;
        }
        session = c.session;
        client = c.client;
    }

    switch (e.kind) {
        case Kind::Ping: {
            Envelope pong;
            pong.kind = Kind::Pong;
            pong.session = e.session;
            pong.sender = std::string(kHubSender);
            send(conn, std::move(pong), emit);
            return;
        }
        case Kind::Hello:
            try {
                on_hello(conn, e, emit);
            } catch (const Error& err) {
                send(conn, error_envelope(e.session, err.code(), err.message(), e.kind), emit);
            }
            return;
        case Kind::Welcome:
        case Kind::FullState:
        case Kind::Error:
            send(conn, error_envelope(e.session, Errc::MalformedEnvelope,
                                      std::string(to_string(e.kind)) + " is sent by the hub only", e.kind),
                 emit);
            return;
        default:
            break;
    }

    if (session.empty() || e.session != session || e.sender != client) {
        send(conn, error_envelope(e.session, Errc::NotAMember, "connection has not joined this session", e.kind), emit);
        return;
    }
    auto slot = find_slot(session);
    if (!slot) {
        send(conn, error_envelope(e.session, Errc::NotAMember, "session is gone", e.kind), emit);
        return;
    }
    std::lock_guard lock(slot->mu);
    if (!slot->record.roles.contains(client)) {
        send(conn, error_envelope(e.session, Errc::NotAMember, "'" + client + "' is not a member", e.kind), emit);
        return;
    }
    Context ctx{conn, client, *slot, emit};
    try {
        dispatch(ctx, e, now_ms);
    } catch (const Error& err) {
        Envelope reply = error_envelope(e.session, err.code(), err.message(), e.kind);
        if (!err.subjects().empty()) reply.payload["subjects"] = err.subjects();
        send(conn, std::move(reply), emit);
    }
    if (ctx.dirty) persist(*slot);
}

void Hub::dispatch(Context& ctx, const Envelope& e, std::int64_t now_ms) {
    switch (e.kind) {
        case Kind::Update: on_update(ctx, e); break;
        case Kind::FullStateRequest: on_full_state_request(ctx, e); break;
        case Kind::SnapshotSave: on_snapshot_save(ctx, e, now_ms); break;
        case Kind::SnapshotList: on_snapshot_list(ctx); break;
        case Kind::SnapshotRestore: on_snapshot_restore(ctx, e); break;
        case Kind::ModeSet: on_mode_set(ctx, e); break;
        default: break;
    }
}

void Hub::on_hello(ConnectionId conn, const Envelope& e, const Emit& emit) {
    const Json& p = e.payload;
    if (!is_valid_session_id(e.session)) throw Error(Errc::MalformedEnvelope, "invalid session id");
    if (!is_valid_id(e.sender) || e.sender == kHubSender) throw Error(Errc::MalformedEnvelope, "invalid client id");

    std::optional<SessionMode> mode;
    if (auto text = string_option(p, "mode")) {
        mode = session_mode_from_string(*text);
        if (!mode) throw Error(Errc::MalformedEnvelope, "unknown mode '" + *text + "'");
    }
    std::optional<Role> requested;
    if (auto text = string_option(p, "role")) {
        requested = role_from_string(*text);
        if (!requested) throw Error(Errc::MalformedEnvelope, "unknown role '" + *text + "'");
    }
    std::vector<std::string> owned;
    if (auto it = p.find("substructures"); it != p.end()) {
        if (!it->is_array()) throw Error(Errc::MalformedEnvelope, "'substructures' must be an array");
        for (const Json& id : *it) {
            if (!id.is_string() || !is_valid_id(id.get<std::string>())) {
                throw Error(Errc::MalformedEnvelope, "invalid substructure id");
            }
            owned.push_back(id.get<std::string>());
        }
    }
    const bool create = bool_option(p, "create", true);
    const bool ephemeral = bool_option(p, "ephemeral", false);

    {
        std::lock_guard lock(conns_mu_);
        const Connection& c = conns_.at(conn);
        if (!c.session.empty() && (c.session != e.session || c.client != e.sender)) {
            throw Error(Errc::MalformedEnvelope, "connection already joined as '" + c.client + "'");
        }
    }

    std::shared_ptr<Slot> slot;
    {
        std::lock_guard lock(sessions_mu_);
        auto it = sessions_.find(e.session);
        if (it != sessions_.end()) {
            slot = it->second;
        } else {
            if (!create) throw Error(Errc::UnknownSession, "no session '" + e.session + "'", {e.session});
            SessionMode m = mode.value_or(SessionMode::Collaboration);
            if (m == SessionMode::Presentation && requested != Role::Presenter) {
                throw Error(Errc::PresenterRequired, "the first member of a presentation session must present");
            }
            if (requested && !role_fits_mode(m, *requested)) {
                throw Error(Errc::RoleModeMismatch, std::string(to_string(*requested)) + " cannot join a " +
                                                        std::string(to_string(m)) + " session");
            }
            slot = std::make_shared<Slot>();
            slot->record.id = e.session;
            slot->record.mode = m;
            sessions_.emplace(e.session, slot);
        }
    }

    std::lock_guard lock(slot->mu);
    SessionRecord& record = slot->record;
    if (mode && *mode != record.mode) {
        throw Error(Errc::RoleModeMismatch, "session '" + record.id + "' is in " + std::string(to_string(record.mode)) +
                                                " mode");
    }
    if (auto live = slot->live.find(e.sender); live != slot->live.end() && live->second != conn) {
        throw Error(Errc::DuplicateClientId, "'" + e.sender + "' is already connected", {e.sender});
    }

    Role role;
    if (auto known = record.roles.find(e.sender); known != record.roles.end()) {
        role = known->second;
        if (requested && *requested != role) {
            throw Error(*requested == Role::Presenter ? Errc::SecondPresenter : Errc::RoleModeMismatch,
                        "'" + e.sender + "' is already a " + std::string(to_string(role)));
        }
    } else {
        role = requested.value_or(record.mode == SessionMode::Collaboration ? Role::Peer : Role::Follower);
        if (!role_fits_mode(record.mode, role)) {
            throw Error(Errc::RoleModeMismatch, std::string(to_string(role)) + " cannot join a " +
                                                    std::string(to_string(record.mode)) + " session");
        }
        if (role == Role::Presenter && record.presenter()) {
            throw Error(Errc::SecondPresenter, "'" + *record.presenter() + "' is already presenting",
                        {*record.presenter()});
        }
        record.roles.emplace(e.sender, role);
        if (ephemeral) slot->ephemeral.insert(e.sender);
    }
    for (const std::string& id : owned) record.topology.add_substructure(id);

    slot->live[e.sender] = conn;
    {
        std::lock_guard conns_lock(conns_mu_);
        Connection& c = conns_.at(conn);
        c.session = e.session;
        c.client = e.sender;
    }

    Envelope welcome;
    welcome.kind = Kind::Welcome;
    welcome.session = record.id;
    welcome.sender = std::string(kHubSender);
    welcome.payload = state_payload(record, e.sender);
    welcome.payload["mode"] = to_string(record.mode);
    welcome.payload["role"] = to_string(role);
    welcome.payload["roles"] = roles_json(record);
    send(conn, std::move(welcome), emit);
    persist(*slot);
}

void Hub::on_update(Context& ctx, const Envelope& e) {
    SessionRecord& record = ctx.record();
    std::vector<ArmUpdate> updates = parse_updates(e.payload);
    std::vector<std::string> unknown;

    const RoutingDecision decision = updates.empty() ? RoutingDecision::BroadcastAllOthers
                                                     : route_update(record.mode, ctx.role(), updates.front());
    for (const ArmUpdate& u : updates) record.clock = observe(record.clock, u.stamp);

    if (decision == RoutingDecision::LocalOnly) {
        FollowerShadow& shadow = record.shadows[ctx.client];
        for (const ArmUpdate& u : updates) {
            if (!record.topology.contains(u.substructure)) {
                if (std::find(unknown.begin(), unknown.end(), u.substructure) == unknown.end()) {
                    unknown.push_back(u.substructure);
                }
                continue;
            }
            auto [it, inserted] = shadow.overlay.try_emplace(u.ref(), u);
            if (!inserted && it->second.stamp < u.stamp) it->second = u;
            ctx.dirty = true;
        }
    } else {
        MergeResult merged = merge_topology(record.topology, updates);
        unknown = std::move(merged.unknown);
        if (!merged.applied.empty()) {
            record.topology = settle(std::move(merged.topology));
            record.log.insert(record.log.end(), merged.applied.begin(), merged.applied.end());
            ctx.dirty = true;

            Envelope fan;
            fan.kind = Kind::Update;
            fan.session = record.id;
            fan.sender = ctx.client;
            fan.payload = Json{{"updates", updates_json(merged.applied)}};
            for (const auto& [client, conn] : ctx.slot.live) {
                if (client != ctx.client) send(conn, fan, ctx.emit);
            }
        }
    }
    if (!unknown.empty()) {
        throw Error(Errc::UnknownSubstructure, "updates name unknown substructures; the rest were applied", unknown);
    }
}

void Hub::on_full_state_request(Context& ctx, const Envelope& e) {
    SessionRecord& record = ctx.record();
    if (bool_option(e.payload, "discard_shadow", false)) {
        auto it = record.shadows.find(ctx.client);
        if (it != record.shadows.end() && it->second.diverged()) {
            it->second.overlay.clear();
            ctx.dirty = true;
        }
    }
    Envelope reply;
    reply.kind = Kind::FullState;
    reply.session = record.id;
    reply.sender = std::string(kHubSender);
    reply.payload = state_payload(record, ctx.client);
    send(ctx.conn, std::move(reply), ctx.emit);
}

void Hub::on_snapshot_save(Context& ctx, const Envelope& e, std::int64_t now_ms) {
    SessionRecord& record = ctx.record();
    std::string label = string_option(e.payload, "label").value_or("");
    std::string id = "snap-" + std::to_string(record.snapshots_issued + 1);

    const bool follower = ctx.role() == Role::Follower;
    AssemblyTopology source = record.topology;
    if (follower) {
        if (auto it = record.shadows.find(ctx.client); it != record.shadows.end()) {
            source = shadow_view(record.topology, it->second);
        }
    }
    Snapshot snap = snapshot_of(source, std::move(label), now_ms, std::move(id));
    Json meta = snapshot_metadata(snap);
    if (follower) {
        record.shadows[ctx.client].snapshots.push_back(std::move(snap));
    } else {
        record.snapshots.push_back(std::move(snap));
    }
    ++record.snapshots_issued;
    ctx.dirty = true;

    Envelope reply;
    reply.kind = Kind::SnapshotSave;
    reply.session = record.id;
    reply.sender = std::string(kHubSender);
    reply.payload = Json{{"snapshot", std::move(meta)}};
    send(ctx.conn, std::move(reply), ctx.emit);
}

void Hub::on_snapshot_list(Context& ctx) {
    const SessionRecord& record = ctx.record();
    const std::vector<Snapshot>* list = &record.snapshots;
    static const std::vector<Snapshot> kNone;
    if (ctx.role() == Role::Follower) {
        auto it = record.shadows.find(ctx.client);
        list = it == record.shadows.end() ? &kNone : &it->second.snapshots;
    }
    Json metas = Json::array();
    for (const Snapshot& s : *list) metas.push_back(snapshot_metadata(s));

    Envelope reply;
    reply.kind = Kind::SnapshotList;
    reply.session = record.id;
    reply.sender = std::string(kHubSender);
    reply.payload = Json{{"snapshots", std::move(metas)}};
    send(ctx.conn, std::move(reply), ctx.emit);
}

void Hub::on_snapshot_restore(Context& ctx, const Envelope& e) {
    SessionRecord& record = ctx.record();
    auto id = string_option(e.payload, "snapshot_id");
    auto label = string_option(e.payload, "label");
    if (!id && !label) throw Error(Errc::MalformedEnvelope, "restore needs 'snapshot_id' or 'label'");

    const bool follower = ctx.role() == Role::Follower;
    const Snapshot* snap = nullptr;
    if (follower) {
        if (auto it = record.shadows.find(ctx.client); it != record.shadows.end()) {
            snap = find_snapshot(it->second.snapshots, id, label);
        }
    }
    if (!snap) snap = find_snapshot(record.snapshots, id, label);
    if (!snap) {
        std::string what = id ? *id : "label " + *label;
        throw Error(Errc::UnknownSnapshot, "no snapshot " + what, {id.value_or(label.value_or(""))});
    }
    const Snapshot chosen = *snap;

    std::vector<ArmUpdate> updates;
    Envelope fan;
    fan.kind = Kind::Update;
    fan.session = record.id;
    fan.sender = std::string(kHubSender);

    if (follower) {
        FollowerShadow& shadow = record.shadows[ctx.client];
        RestoreResult r = restore_targets(shadow_view(record.topology, shadow), chosen, record.clock);
        for (const ArmRef& ref : r.touched) updates.push_back(update_for(r.topology, ref));
        for (const ArmUpdate& u : updates) shadow.overlay[u.ref()] = u;
        record.clock = r.clock;
        fan.payload = Json{{"updates", updates_json(updates)}, {"shadow", true}};
        send(ctx.conn, fan, ctx.emit);
    } else {
        RestoreResult r = restore_targets(record.topology, chosen, record.clock);
        for (const ArmRef& ref : r.touched) updates.push_back(update_for(r.topology, ref));
        MergeResult merged = merge_topology(record.topology, updates);
        record.topology = settle(std::move(merged.topology));
        record.log.insert(record.log.end(), merged.applied.begin(), merged.applied.end());
        record.clock = r.clock;
        fan.payload = Json{{"updates", updates_json(merged.applied)}};
        // The hub authored these writes, so the requester needs them too.
        for (const auto& [client, conn] : ctx.slot.live) send(conn, fan, ctx.emit);
    }
    ctx.dirty = true;

    Envelope reply;
    reply.kind = Kind::SnapshotRestore;
    reply.session = record.id;
    reply.sender = std::string(kHubSender);
    reply.payload = Json{{"snapshot", snapshot_metadata(chosen)}, {"updates", updates.size()}};
    send(ctx.conn, std::move(reply), ctx.emit);
}

void Hub::on_mode_set(Context& ctx, const Envelope& e) {
    SessionRecord& record = ctx.record();
    auto text = string_option(e.payload, "mode");
    auto mode = text ? session_mode_from_string(*text) : std::nullopt;
    if (!mode) throw Error(Errc::MalformedEnvelope, "MODE_SET needs a valid 'mode'");
    if (record.mode == SessionMode::Presentation && ctx.role() != Role::Presenter) {
        throw Error(Errc::RoleModeMismatch, "only the presenter can change the mode");
    }
    std::map<std::string, Role> roles = record.roles;
    if (*mode == SessionMode::Collaboration) {
        for (auto& [client, role] : roles) role = Role::Peer;
    } else {
        std::string presenter = string_option(e.payload, "presenter").value_or(ctx.client);
        if (!roles.contains(presenter)) throw Error(Errc::NotAMember, "'" + presenter + "' is not a member", {presenter});
        for (auto& [client, role] : roles) role = client == presenter ? Role::Presenter : Role::Follower;
    }
    record.mode = *mode;
    record.roles = std::move(roles);
    record.shadows.clear();
    ctx.dirty = true;

    Envelope changed;
    changed.kind = Kind::ModeSet;
    changed.session = record.id;
    changed.sender = ctx.client;
    changed.payload = Json{{"mode", to_string(record.mode)}, {"roles", roles_json(record)}};
    Envelope state;
    state.kind = Kind::FullState;
    state.session = record.id;
    state.sender = std::string(kHubSender);
    state.payload = Json{{"topology", to_json(record.topology)}, {"reset", true}};
    for (const auto& [client, conn] : ctx.slot.live) {
        send(conn, changed, ctx.emit);
        send(conn, state, ctx.emit);
    }
}

std::vector<ConnectionId> Hub::heartbeat(const Emit& emit) {
    std::vector<ConnectionId> dropped;
    std::lock_guard lock(conns_mu_);
    for (auto& [id, c] : conns_) {
        if (c.ping_outstanding && ++c.missed_pongs >= options_.max_missed_pongs) {
            dropped.push_back(id);
            continue;
        }
        c.ping_outstanding = true;
        Envelope ping;
        ping.kind = Kind::Ping;
        ping.session = c.session;
        ping.sender = std::string(kHubSender);
        ping.seq = ++c.last_out;
        emit(id, ping);
    }
    return dropped;
}

std::optional<SessionRecord> Hub::session(std::string_view id) const {
    auto slot = find_slot(id);
    if (!slot) return std::nullopt;
    std::lock_guard lock(slot->mu);
    return slot->record;
}

std::vector<std::string> Hub::session_ids() const {
    std::lock_guard lock(sessions_mu_);
    std::vector<std::string> ids;
    for (const auto& [id, slot] : sessions_) ids.push_back(id);
    return ids;
}

std::vector<std::string> Hub::connected_members(std::string_view session) const {
    auto slot = find_slot(session);
    if (!slot) return {};
    std::lock_guard lock(slot->mu);
    std::vector<std::string> out;
    for (const auto& [client, conn] : slot->live) out.push_back(client);
    return out;
}

std::uint64_t Hub::last_sent_seq(ConnectionId conn) const {
    std::lock_guard lock(conns_mu_);
    auto it = conns_.find(conn);
    return it == conns_.end() ? 0 : it->second.last_out;
}

bool Hub::is_open(ConnectionId conn) const {
    std::lock_guard lock(conns_mu_);
    return conns_.contains(conn);
}

}  // namespace teleshift
