#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "teleshift/shape.hpp"
#include "teleshift/sync.hpp"

namespace teleshift {

struct ActuationParams {
    double v_max_mm_s = 30.0;
    std::int64_t tick_ms = 20;

    double step_mm() const noexcept { return v_max_mm_s * static_cast<double>(tick_ms) / 1000.0; }
};

// Float slack allowed on a single tick's travel.
inline constexpr double kMotionSlackMm = 1e-9;
// An arm is settled when its extension is this close to its target.
inline constexpr double kSettleTolMm = 1e-6;

/// A local edit made while offline: the arm register value to re-publish once
/// the device has recovered the hub's state.
struct PendingOverride {
    ArmId arm = ArmId::PosX;
    double mm = 0.0;
    bool jointed = false;
    std::string mate;

    friend bool operator==(const PendingOverride&, const PendingOverride&) = default;
};

struct DeviceState {
    SubstructureState substructure;
    LamportClock clock;
    bool connected = false;
    std::deque<PendingOverride> pending_overrides;
    Role role = Role::Peer;
    // Followers only: arms edited locally, which no longer follow the presenter.
    std::set<ArmId> pinned;

    bool diverged() const noexcept { return !pinned.empty(); }
    friend bool operator==(const DeviceState&, const DeviceState&) = default;
};

DeviceState make_device(std::string actor, std::string substructure_id);

/// Moves every arm toward its target by at most one step, never past it.
DeviceState tick(DeviceState device, const ActuationParams& params);

/// The hand pushes an arm: extension and target both jump to the clamped value
/// and the register is re-stamped. Followers pin the arm; offline devices queue it.
std::pair<DeviceState, ArmUpdate> apply_manual_override(DeviceState device, ArmId arm, double new_ext);

/// Engages the magnet at `arm` against `other`'s opposite tip. Target is kept.
std::pair<DeviceState, ArmUpdate> apply_joint_edit(DeviceState device, ArmId arm, std::string other,
                                                   bool jointed = true);

/// LWW-merges a remote write into the device. A follower's pinned arms ignore
/// remote writes. Throws WrongSubstructure for another substructure's update.
DeviceState on_remote_update(DeviceState device, const ArmUpdate& update);

/// A write to the follower's private design (hub-side restore): merged and pinned.
DeviceState on_shadow_update(DeviceState device, const ArmUpdate& update);

bool settled(const DeviceState& device, double tolerance_mm = kSettleTolMm);

/// Reconnect delay before attempt `attempt` (0-based): 500 ms doubling, capped at 8 s.
std::int64_t backoff_delay_ms(int attempt);

struct NetProfile {
    double latency_ms = 0.0;
    double jitter_ms = 0.0;
    double drop_prob = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const NetProfile&, const NetProfile&) = default;
};

/// Throws BadScenario when a field is out of range.
void validate(const NetProfile& profile);

/// Seeded lossy, delaying channel. Each send draws one uniform for the drop test
/// and, when jitter is non-zero and the message survives, one for the delay.
/// Uniforms are the top 53 bits of mt19937_64 output scaled to [0, 1).
class ImpairedLink {
public:
    explicit ImpairedLink(NetProfile profile);

    /// Delay in whole milliseconds, or nullopt when the message is dropped.
    std::optional<std::int64_t> impaired_send();

    const NetProfile& profile() const noexcept { return profile_; }

private:
    double uniform();

    NetProfile profile_;
    std::mt19937_64 rng_;
};

}  // namespace teleshift
