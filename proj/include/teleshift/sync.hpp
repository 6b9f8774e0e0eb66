#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "teleshift/shape.hpp"
#include "teleshift/stamp.hpp"

namespace teleshift {

/// One stamped write to an arm register. `mate` travels with `jointed` so that
/// joints replicate through the same ordering as targets.
struct ArmUpdate {
    std::string substructure;
    ArmId arm = ArmId::PosX;
    double target = 0.0;
    bool jointed = false;
    std::string mate;
    VersionStamp stamp;

    ArmRef ref() const { return {substructure, arm}; }

    friend bool operator==(const ArmUpdate&, const ArmUpdate&) = default;
};

enum class SessionMode { Collaboration, Presentation };
enum class Role { Peer, Presenter, Follower };
enum class RoutingDecision { BroadcastAllOthers, LocalOnly };

std::string_view to_string(SessionMode mode);
std::string_view to_string(Role role);
std::string_view to_string(RoutingDecision decision);
std::optional<SessionMode> session_mode_from_string(std::string_view text);
std::optional<Role> role_from_string(std::string_view text);

/// The update that re-publishes an arm's current register value.
ArmUpdate update_for(const AssemblyTopology& topology, const ArmRef& ref);

/// Last-writer-wins: the update replaces target, jointed and mate when its stamp is
/// strictly greater. Extension is never written.
ArmState merge_arm(const ArmState& local, const ArmUpdate& update);

struct MergeResult {
    AssemblyTopology topology;
    std::vector<ArmUpdate> applied;          // updates that won, in input order
    std::vector<std::string> unknown;        // substructure ids with no register, deduplicated
};

MergeResult merge_topology(const AssemblyTopology& local, std::span<const ArmUpdate> updates);

/// Throws RoleModeMismatch when the role cannot occur in the mode.
RoutingDecision route_update(SessionMode mode, Role origin_role, const ArmUpdate& update);
bool role_fits_mode(SessionMode mode, Role role) noexcept;

/// Replaces targets, joint flags, mates and stamps with the authoritative values.
/// Extensions of substructures the follower already has are kept; substructures
/// only the authority has are copied whole; ones it lacks are dropped.
AssemblyTopology resync(const AssemblyTopology& follower, const AssemblyTopology& authoritative);
SubstructureState resync(const SubstructureState& follower, const SubstructureState& authoritative);

/// The hub's view of an assembly at rest: every extension equals its target.
AssemblyTopology settle(AssemblyTopology topology);

/// Largest stamp carried anywhere in the topology.
VersionStamp max_stamp(const AssemblyTopology& topology);

}  // namespace teleshift
