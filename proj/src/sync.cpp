#include "teleshift/sync.hpp"

#include <algorithm>

#include "teleshift/error.hpp"

namespace teleshift {

std::string_view to_string(SessionMode mode) {
    return mode == SessionMode::Collaboration ? "COLLABORATION" : "PRESENTATION";
}

std::string_view to_string(Role role) {
    switch (role) {
        case Role::Peer: return "PEER";
        case Role::Presenter: return "PRESENTER";
        case Role::Follower: return "FOLLOWER";
    }
    return "PEER";
}

std::string_view to_string(RoutingDecision decision) {
    return decision == RoutingDecision::BroadcastAllOthers ? "BROADCAST_ALL_OTHERS" : "LOCAL_ONLY";
}

std::optional<SessionMode> session_mode_from_string(std::string_view text) {
    if (text == "COLLABORATION") return SessionMode::Collaboration;
    if (text == "PRESENTATION") return SessionMode::Presentation;
    return std::nullopt;
}

std::optional<Role> role_from_string(std::string_view text) {
    if (text == "PEER") return Role::Peer;
    if (text == "PRESENTER") return Role::Presenter;
    if (text == "FOLLOWER") return Role::Follower;
    return std::nullopt;
}

ArmUpdate update_for(const AssemblyTopology& topology, const ArmRef& ref) {
    const ArmState& arm = topology.arm(ref);
    return ArmUpdate{ref.substructure, ref.arm, arm.target, arm.jointed, arm.mate, arm.stamp};
}

ArmState merge_arm(const ArmState& local, const ArmUpdate& update) {
    if (!(local.stamp < update.stamp)) return local;
    ArmState merged = local;
    merged.target = update.target;
    merged.jointed = update.jointed;
    merged.mate = update.mate;
    merged.stamp = update.stamp;
    return merged;
}

MergeResult merge_topology(const AssemblyTopology& local, std::span<const ArmUpdate> updates) {
    MergeResult result{local, {}, {}};
    for (const ArmUpdate& u : updates) {
        auto it = result.topology.substructures.find(u.substructure);
        if (it == result.topology.substructures.end()) {
            if (std::find(result.unknown.begin(), result.unknown.end(), u.substructure) ==
                result.unknown.end()) {
                result.unknown.push_back(u.substructure);
            }
            continue;
        }
        ArmState& arm = it->second.arm(u.arm);
        if (arm.stamp < u.stamp) {
            arm = merge_arm(arm, u);
            result.applied.push_back(u);
        }
    }
    return result;
}

bool role_fits_mode(SessionMode mode, Role role) noexcept {
    return mode == SessionMode::Collaboration ? role == Role::Peer : role != Role::Peer;
}

RoutingDecision route_update(SessionMode mode, Role origin_role, const ArmUpdate&) {
    if (!role_fits_mode(mode, origin_role)) {
        throw Error(Errc::RoleModeMismatch, std::string(to_string(origin_role)) + " cannot act in a " +
                                                std::string(to_string(mode)) + " session");
    }
    return origin_role == Role::Follower ? RoutingDecision::LocalOnly
                                         : RoutingDecision::BroadcastAllOthers;
}

SubstructureState resync(const SubstructureState& follower, const SubstructureState& authoritative) {
    SubstructureState out = authoritative;
    for (ArmId a : kAllArms) out.arm(a).extension = follower.arm(a).extension;
    return out;
}

AssemblyTopology resync(const AssemblyTopology& follower, const AssemblyTopology& authoritative) {
    AssemblyTopology out;
    for (const auto& [id, sub] : authoritative.substructures) {
        auto mine = follower.substructures.find(id);
        out.substructures.emplace(id, mine == follower.substructures.end() ? sub : resync(mine->second, sub));
    }
    return out;
}

AssemblyTopology settle(AssemblyTopology topology) {
    for (auto& [id, sub] : topology.substructures) {
        for (ArmState& arm : sub.arms) arm.extension = arm.target;
    }
    return topology;
}

VersionStamp max_stamp(const AssemblyTopology& topology) {
    VersionStamp best;
    for (const auto& [id, sub] : topology.substructures) {
        for (const ArmState& arm : sub.arms) best = std::max(best, arm.stamp);
    }
    return best;
}

}  // namespace teleshift
