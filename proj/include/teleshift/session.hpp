#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "teleshift/codec.hpp"
#include "teleshift/shape.hpp"
#include "teleshift/sync.hpp"

namespace teleshift {

/// A follower's private design: arms it has pinned away from the presenter, and
/// the snapshots it saved of that design.
struct FollowerShadow {
    std::map<ArmRef, ArmUpdate> overlay;
    std::vector<Snapshot> snapshots;

    bool diverged() const noexcept { return !overlay.empty(); }
    friend bool operator==(const FollowerShadow&, const FollowerShadow&) = default;
};

/// The authoritative topology with the follower's pinned arms laid over it.
AssemblyTopology shadow_view(const AssemblyTopology& authoritative, const FollowerShadow& shadow);

struct SessionRecord {
    std::string id;
    SessionMode mode = SessionMode::Collaboration;
    std::map<std::string, Role> roles;
    AssemblyTopology topology;            // authoritative, at rest (extension == target)
    std::vector<Snapshot> snapshots;      // saved by peers or the presenter
    std::vector<ArmUpdate> log;           // every update applied to `topology`, in order
    std::map<std::string, FollowerShadow> shadows;
    LamportClock clock{0, "hub"};         // stamps hub-generated writes (restores)
    std::uint64_t snapshots_issued = 0;

    std::optional<std::string> presenter() const;
    friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

/// Rebuilds the authoritative topology from the substructure set and the log.
AssemblyTopology replay_log(const SessionRecord& session);

std::optional<std::string> first_violation(const SessionRecord& session);

Json to_json(const SessionRecord& session);
/// Throws CorruptFile naming the first failing invariant.
SessionRecord session_from_json(const Json& j);

std::filesystem::path session_path(const std::filesystem::path& data_dir, const std::string& session_id);

/// Writes canonical JSON to a temporary sibling and renames it over `file`.
void persist_session(const SessionRecord& session, const std::filesystem::path& file);
SessionRecord load_session(const std::filesystem::path& file);

}  // namespace teleshift
