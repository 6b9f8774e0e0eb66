#include "teleshift/client.hpp"

#include <algorithm>

namespace teleshift {

namespace {

bool fatal_on_join(std::string_view code) {
    // PresenterRequired is not here: a follower may simply have beaten the
    // presenter to the hub, so it keeps retrying.
    return code == "DuplicateClientId" || code == "SecondPresenter" || code == "RoleModeMismatch" ||
           code == "UnknownSession" || code == "MalformedEnvelope";
}

Json update_list(const std::vector<ArmUpdate>& updates) {
    Json list = Json::array();
    for (const ArmUpdate& u : updates) list.push_back(to_json(u));
    return Json{{"updates", std::move(list)}};
}

}  // namespace

std::string_view to_string(LinkState state) {
    switch (state) {
        case LinkState::Offline: return "offline";
        case LinkState::Handshaking: return "handshaking";
        case LinkState::Recovering: return "recovering";
        case LinkState::Online: return "online";
        case LinkState::Failed: return "failed";
    }
    return "offline";
}

DeviceClient::DeviceClient(ClientConfig config)
    : config_(std::move(config)), device_(make_device(config_.client_id, config_.substructure)) {
    if (config_.requested_role) device_.role = *config_.requested_role;
}

Envelope DeviceClient::make(Kind kind, Json payload) {
    Envelope e;
    e.kind = kind;
    e.session = config_.session;
    e.sender = config_.client_id;
    e.seq = next_seq_++;
    e.payload = std::move(payload);
    return e;
}

std::vector<Envelope> DeviceClient::connect(std::int64_t now_ms) {
    link_ = LinkState::Handshaking;
    device_.connected = false;
    failure_.reset();
    next_seq_ = 1;
    covered_ = 0;
    highest_ = 0;
    received_above_.clear();
    state_wanted_ = false;
    hello_attempt_ = 0;
    next_timer_ms_ = now_ms + backoff_delay_ms(0);

    Json hello{{"mode", to_string(config_.mode)}, {"substructures", Json::array({config_.substructure})}};
    if (config_.requested_role) hello["role"] = to_string(*config_.requested_role);
    return {make(Kind::Hello, std::move(hello))};
}

void DeviceClient::disconnect() {
    // Unacknowledged edits that are still the arm's live value get re-published
    // after recovery, ahead of edits made while offline.
    std::vector<ArmUpdate> unacked;
    for (const auto& [key, u] : outbox_) {
        if (device_.substructure.arm(u.arm).stamp == u.stamp) unacked.push_back(u);
    }
    std::sort(unacked.begin(), unacked.end(), [](const ArmUpdate& a, const ArmUpdate& b) { return a.stamp < b.stamp; });
    for (auto it = unacked.rbegin(); it != unacked.rend(); ++it) {
        device_.pending_overrides.push_front({it->arm, it->target, it->jointed, it->mate});
    }
    outbox_.clear();
    if (link_ != LinkState::Failed) link_ = LinkState::Offline;
    device_.connected = false;
}

void DeviceClient::note_hub_seq(std::uint64_t seq) {
    highest_ = std::max(highest_, seq);
    if (seq > covered_) received_above_.insert(seq);
    while (!received_above_.empty() && *received_above_.begin() <= covered_ + 1) {
        covered_ = std::max(covered_, *received_above_.begin());
        received_above_.erase(received_above_.begin());
    }
}

void DeviceClient::cover_through(std::uint64_t seq) {
    covered_ = std::max(covered_, seq);
    received_above_.erase(received_above_.begin(), received_above_.upper_bound(covered_));
    note_hub_seq(seq);
}

std::vector<Envelope> DeviceClient::receive(const Envelope& e, std::int64_t now_ms) {
    if (link_ == LinkState::Offline || link_ == LinkState::Failed) return {};
    note_hub_seq(e.seq);
    std::vector<Envelope> out;

    switch (e.kind) {
        case Kind::Welcome: {
            if (link_ != LinkState::Handshaking) break;
            if (auto role = role_from_string(e.payload.value("role", ""))) device_.role = *role;
            link_ = LinkState::Recovering;
            next_timer_ms_ = now_ms + config_.sync_interval_ms;
            out.push_back(make(Kind::FullStateRequest));
            break;
        }
        case Kind::FullState:
            out = apply_full_state(e.payload, e.seq);
            break;
        case Kind::Update: {
            const bool shadow = e.payload.value("shadow", false);
            for (const Json& j : e.payload.at("updates")) {
                ArmUpdate u = arm_update_from_json(j);
                if (u.substructure != device_.substructure.id) {
                    device_.clock = observe(device_.clock, u.stamp);
                    continue;
                }
                device_ = shadow ? on_shadow_update(std::move(device_), u) : on_remote_update(std::move(device_), u);
            }
            break;
        }
        case Kind::Error: {
            last_error_ = e.payload;
            const std::string code = e.payload.value("code", "");
            if (link_ == LinkState::Handshaking && fatal_on_join(code)) {
                link_ = LinkState::Failed;
                if (code == "DuplicateClientId") failure_ = Errc::DuplicateClientId;
                else if (code == "SecondPresenter") failure_ = Errc::SecondPresenter;
                else if (code == "RoleModeMismatch") failure_ = Errc::RoleModeMismatch;
                else if (code == "UnknownSession") failure_ = Errc::UnknownSession;
                else failure_ = Errc::MalformedEnvelope;
            } else if (code == "StaleSeq") {
                state_wanted_ = true;
            }
            break;
        }
        case Kind::Ping:
            out.push_back(make(Kind::Pong));
            break;
        case Kind::ModeSet: {
            auto roles = e.payload.find("roles");
            if (roles != e.payload.end() && roles->contains(config_.client_id)) {
                if (auto role = role_from_string(roles->at(config_.client_id).get<std::string>())) device_.role = *role;
            }
            if (auto mode = session_mode_from_string(e.payload.value("mode", ""))) config_.mode = *mode;
            device_.pinned.clear();
            break;
        }
        case Kind::SnapshotSave:
        case Kind::SnapshotList:
        case Kind::SnapshotRestore:
            last_snapshot_reply_ = Json{{"kind", to_string(e.kind)}, {"payload", e.payload}};
            break;
        default:
            break;
    }
    if (highest_ > covered_) state_wanted_ = true;
    return out;
}

std::vector<Envelope> DeviceClient::apply_full_state(const Json& payload, std::uint64_t seq) {
    AssemblyTopology authoritative = topology_from_json(payload.at("topology"));
    std::optional<AssemblyTopology> view;
    std::set<ArmId> hub_pinned;
    if (auto shadow = payload.find("shadow"); shadow != payload.end()) {
        view = topology_from_json(shadow->at("topology"));
        for (const Json& ref : shadow->at("pinned")) {
            ArmRef r = arm_ref_from_json(ref);
            if (r.substructure == device_.substructure.id) hub_pinned.insert(r.arm);
        }
    }
    device_.clock = observe(device_.clock, max_stamp(authoritative));
    if (view) device_.clock = observe(device_.clock, max_stamp(*view));
    cover_through(seq);
    state_wanted_ = highest_ > covered_;

    const AssemblyTopology& source = view ? *view : authoritative;
    const std::string& own = device_.substructure.id;
    if (!source.contains(own)) return {};
    const SubstructureState& hub_own = source.at(own);
    const bool follower = device_.role == Role::Follower;

    if (payload.value("reset", false) || replace_next_state_ || link_ == LinkState::Recovering) {
        if (payload.value("reset", false)) outbox_.clear();
        replace_next_state_ = false;
        device_.substructure = resync(device_.substructure, hub_own);
        device_.pinned = follower ? hub_pinned : std::set<ArmId>{};
        if (link_ != LinkState::Recovering) return {};
        link_ = LinkState::Online;
        device_.connected = true;
        return replay_pending();
    }

    for (ArmId a : kAllArms) {
        ArmState& arm = device_.substructure.arm(a);
        if (hub_pinned.contains(a)) {
            arm = merge_arm(arm, update_for(source, {own, a}));
            device_.pinned.insert(a);
        } else if (!(follower && device_.pinned.contains(a))) {
            arm = merge_arm(arm, update_for(authoritative, {own, a}));
        }
    }

    std::vector<ArmUpdate> resend;
    for (auto it = outbox_.begin(); it != outbox_.end();) {
        const ArmUpdate& u = it->second;
        const ArmState* held = nullptr;
        if (!follower) held = &authoritative.at(own).arm(u.arm);
        else if (hub_pinned.contains(u.arm)) held = &hub_own.arm(u.arm);
        if (held && !(held->stamp < u.stamp)) {
            it = outbox_.erase(it);
        } else {
            resend.push_back(u);
            ++it;
        }
    }
    if (resend.empty()) return {};
    return {make(Kind::Update, update_list(resend))};
}

std::vector<Envelope> DeviceClient::replay_pending() {
    std::vector<ArmUpdate> updates;
    while (!device_.pending_overrides.empty()) {
        PendingOverride p = std::move(device_.pending_overrides.front());
        device_.pending_overrides.pop_front();
        auto [clock, stamp] = stamp_next(device_.clock);
        device_.clock = std::move(clock);
        ArmState& arm = device_.substructure.arm(p.arm);
        arm.target = p.mm;
        arm.jointed = p.jointed;
        arm.mate = p.mate;
        arm.stamp = stamp;
        if (device_.role == Role::Follower) device_.pinned.insert(p.arm);
        ArmUpdate u{device_.substructure.id, p.arm, arm.target, arm.jointed, arm.mate, std::move(stamp)};
        outbox_.emplace(std::make_pair(u.arm, u.stamp), u);
        updates.push_back(std::move(u));
    }
    if (updates.empty()) return {};
    return {make(Kind::Update, update_list(updates))};
}

std::vector<Envelope> DeviceClient::publish(const ArmUpdate& update) {
    if (link_ != LinkState::Online) return {};
    outbox_.emplace(std::make_pair(update.arm, update.stamp), update);
    return {make(Kind::Update, update_list({update}))};
}

std::vector<Envelope> DeviceClient::poll(std::int64_t now_ms) {
    if (now_ms < next_timer_ms_) return {};
    switch (link_) {
        case LinkState::Handshaking: {
            ++hello_attempt_;
            next_timer_ms_ = now_ms + backoff_delay_ms(hello_attempt_);
            Json hello{{"mode", to_string(config_.mode)}, {"substructures", Json::array({config_.substructure})}};
            if (config_.requested_role) hello["role"] = to_string(*config_.requested_role);
            return {make(Kind::Hello, std::move(hello))};
        }
        case LinkState::Recovering:
            next_timer_ms_ = now_ms + config_.sync_interval_ms;
            return {make(Kind::FullStateRequest)};
        case LinkState::Online: {
            next_timer_ms_ = now_ms + config_.sync_interval_ms;
            std::vector<Envelope> out{make(Kind::Ping)};
            if (state_wanted_ || !outbox_.empty()) out.push_back(make(Kind::FullStateRequest));
            return out;
        }
        default:
            return {};
    }
}

std::vector<Envelope> DeviceClient::override_arm(ArmId arm, double mm) {
    auto [device, update] = apply_manual_override(std::move(device_), arm, mm);
    device_ = std::move(device);
    return publish(update);
}

std::vector<Envelope> DeviceClient::join(const std::string& other, ArmId arm) {
    auto [device, update] = apply_joint_edit(std::move(device_), arm, other);
    device_ = std::move(device);
    return publish(update);
}

std::vector<Envelope> DeviceClient::save_snapshot(const std::string& label) {
    if (link_ != LinkState::Online) return {};
    return {make(Kind::SnapshotSave, Json{{"label", label}})};
}

std::vector<Envelope> DeviceClient::restore_snapshot(const std::optional<std::string>& id,
                                                     const std::optional<std::string>& label) {
    if (link_ != LinkState::Online) return {};
    Json payload = Json::object();
    if (id) payload["snapshot_id"] = *id;
    if (label) payload["label"] = *label;
    return {make(Kind::SnapshotRestore, std::move(payload))};
}

std::vector<Envelope> DeviceClient::follow_presenter() {
    if (link_ != LinkState::Online) return {};
    outbox_.clear();
    device_.pinned.clear();
    replace_next_state_ = true;
    return {make(Kind::FullStateRequest, Json{{"discard_shadow", true}})};
}

void DeviceClient::tick(const ActuationParams& params) { device_ = teleshift::tick(std::move(device_), params); }

bool DeviceClient::idle() const noexcept {
    return link_ == LinkState::Online && outbox_.empty() && device_.pending_overrides.empty() && !state_wanted_ &&
           highest_ <= covered_;
}

}  // namespace teleshift
