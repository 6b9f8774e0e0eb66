#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "teleshift/stamp.hpp"

namespace teleshift {

inline constexpr std::size_t kArmCount = 6;
inline constexpr double kBodyMm = 100.0;          // cube edge of one substructure body
inline constexpr double kMaxExtensionMm = 60.0;   // arm travel
inline constexpr double kGeomEpsMm = 0.5;         // cycle closure and overlap tolerance
inline constexpr std::size_t kMaxIdLength = 64;

enum class ArmId : std::uint8_t { PosX, NegX, PosY, NegY, PosZ, NegZ };

inline constexpr std::array<ArmId, kArmCount> kAllArms{
    ArmId::PosX, ArmId::NegX, ArmId::PosY, ArmId::NegY, ArmId::PosZ, ArmId::NegZ};

constexpr std::size_t index_of(ArmId arm) noexcept { return static_cast<std::size_t>(arm); }

// Arms are laid out in (+, -) pairs per axis, so the opposite differs in the low bit.
constexpr ArmId opposite_arm(ArmId arm) noexcept {
    return static_cast<ArmId>(static_cast<std::uint8_t>(arm) ^ 1U);
}

constexpr int axis_of(ArmId arm) noexcept { return static_cast<int>(index_of(arm) / 2); }
constexpr int sign_of(ArmId arm) noexcept { return index_of(arm) % 2 == 0 ? 1 : -1; }

/// Wire key of an arm: "+x", "-x", "+y", "-y", "+z", "-z".
std::string_view arm_key(ArmId arm);
std::optional<ArmId> arm_from_key(std::string_view key);

/// Clamps to the arm travel [0, kMaxExtensionMm]. Throws Errc::NonFinite on NaN/inf.
double clamp_extension(double mm);

/// Non-empty printable ASCII, at most kMaxIdLength bytes.
bool is_valid_id(std::string_view id) noexcept;

struct ArmState {
    double extension = 0.0;  // physical length beyond the body face
    double target = 0.0;     // commanded length
    bool jointed = false;    // magnet engaged at the tip
    std::string mate;        // substructure the tip is jointed to, empty when none
    VersionStamp stamp;

    friend bool operator==(const ArmState&, const ArmState&) = default;
};

struct SubstructureState {
    std::string id;
    std::array<ArmState, kArmCount> arms{};

    ArmState& arm(ArmId a) { return arms[index_of(a)]; }
    const ArmState& arm(ArmId a) const { return arms[index_of(a)]; }

    friend bool operator==(const SubstructureState&, const SubstructureState&) = default;
};

SubstructureState make_substructure(std::string id);

struct ArmRef {
    std::string substructure;
    ArmId arm = ArmId::PosX;

    friend auto operator<=>(const ArmRef&, const ArmRef&) = default;
    friend bool operator==(const ArmRef&, const ArmRef&) = default;
};

/// Unordered pair of mated arm tips, stored with a < b.
struct Joint {
    ArmRef a;
    ArmRef b;

    friend auto operator<=>(const Joint&, const Joint&) = default;
    friend bool operator==(const Joint&, const Joint&) = default;
};

Joint make_joint(ArmRef a, ArmRef b);

/// Substructures keyed by id. The joint set is not stored separately: a joint is
/// live exactly when both tips are jointed and name each other as mate, which keeps
/// joints inside the per-arm replicated registers.
struct AssemblyTopology {
    std::map<std::string, SubstructureState, std::less<>> substructures;

    bool contains(std::string_view id) const { return substructures.find(id) != substructures.end(); }
    const SubstructureState& at(std::string_view id) const;
    SubstructureState& at(std::string_view id);
    const ArmState& arm(const ArmRef& ref) const { return at(ref.substructure).arm(ref.arm); }
    ArmState& arm(const ArmRef& ref) { return at(ref.substructure).arm(ref.arm); }

    /// Inserts a fresh substructure if the id is absent. Returns true when inserted.
    bool add_substructure(const std::string& id);

    std::vector<Joint> joints() const;

    friend bool operator==(const AssemblyTopology&, const AssemblyTopology&) = default;
};

/// Describes the first violated topology invariant, or nullopt when valid.
std::optional<std::string> first_violation(const AssemblyTopology& topology);

/// Mates two opposite arm tips of different substructures.
/// Throws UnknownSubstructure, NonOpposingArms or ArmOccupied.
AssemblyTopology add_joint(AssemblyTopology topology, const ArmRef& a, const ArmRef& b);

using Point3 = std::array<double, 3>;

struct Embedding {
    std::map<std::string, Point3, std::less<>> positions;  // body centers, mm
};

/// Places every substructure reachable from `anchor` in world coordinates.
///
/// Crossing a joint from A (arm with axis u and sign s, extension eA) to B
/// (extension eB) puts B at pos(A) + s*u*(kBodyMm + eA + eB). Traversal is
/// breadth-first in arm order. A cycle closing more than kGeomEpsMm away from an
/// existing placement throws InconsistentCycle (subject: the re-reached body,
/// magnitude: max coordinate discrepancy). Two placed bounding cubes overlapping by
/// more than kGeomEpsMm throw BodyCollision.
Embedding embed_assembly(const AssemblyTopology& topology, std::string_view anchor,
                         Point3 anchor_pos = {0.0, 0.0, 0.0});

/// Named full copy of an assembly. Immutable once built.
class Snapshot {
public:
    Snapshot(std::string snapshot_id, std::string label, std::int64_t created_at,
             AssemblyTopology topology);

    const std::string& snapshot_id() const noexcept { return snapshot_id_; }
    const std::string& label() const noexcept { return label_; }
    std::int64_t created_at() const noexcept { return created_at_; }
    const AssemblyTopology& topology() const noexcept { return topology_; }

    friend bool operator==(const Snapshot&, const Snapshot&) = default;

private:
    std::string snapshot_id_;
    std::string label_;
    std::int64_t created_at_;
    AssemblyTopology topology_;
};

Snapshot snapshot_of(const AssemblyTopology& topology, std::string label, std::int64_t now_ms,
                     std::string snapshot_id);

/// Same, with a process-unique generated id.
Snapshot snapshot_of(const AssemblyTopology& topology, std::string label, std::int64_t now_ms);

struct RestoreResult {
    AssemblyTopology topology;
    LamportClock clock;
    std::vector<ArmRef> touched;  // every arm that received a fresh stamp, in order
};

/// Commands the live assembly back to a snapshot: targets take the snapshot's
/// extensions, joint flags and mates are copied, live extensions are left for
/// actuation. Jointed arms of substructures absent from the snapshot are released so
/// the joint set matches the snapshot's. Each touched arm is stamped from `clock`.
/// Throws UnknownSubstructure when the snapshot names a substructure the live
/// topology lacks.
RestoreResult restore_targets(const AssemblyTopology& live, const Snapshot& snapshot,
                              const LamportClock& clock);

}  // namespace teleshift
