#include "teleshift/device.hpp"

#include <algorithm>
#include <cmath>

#include "teleshift/error.hpp"

namespace teleshift {

DeviceState make_device(std::string actor, std::string substructure_id) {
    DeviceState d;
    d.substructure = make_substructure(std::move(substructure_id));
    d.clock = LamportClock{0, std::move(actor)};
    return d;
}

DeviceState tick(DeviceState device, const ActuationParams& params) {
    const double step = params.step_mm();
    for (ArmState& arm : device.substructure.arms) {
        const double gap = arm.target - arm.extension;
        if (std::abs(gap) <= step + kMotionSlackMm) {
            arm.extension = arm.target;
        } else {
            arm.extension += gap > 0 ? step : -step;
        }
        arm.extension = std::clamp(arm.extension, 0.0, kMaxExtensionMm);
    }
    return device;
}

namespace {

ArmUpdate stamp_local(DeviceState& device, ArmId arm) {
    auto [clock, stamp] = stamp_next(device.clock);
    device.clock = std::move(clock);
    ArmState& state = device.substructure.arm(arm);
    state.stamp = std::move(stamp);
    if (device.role == Role::Follower) device.pinned.insert(arm);
    if (!device.connected) {
        device.pending_overrides.push_back({arm, state.target, state.jointed, state.mate});
    }
    return ArmUpdate{device.substructure.id, arm, state.target, state.jointed, state.mate, state.stamp};
}

}  // namespace

std::pair<DeviceState, ArmUpdate> apply_manual_override(DeviceState device, ArmId arm, double new_ext) {
    ArmState& state = device.substructure.arm(arm);
    state.extension = clamp_extension(new_ext);
    state.target = state.extension;
    ArmUpdate update = stamp_local(device, arm);
    return {std::move(device), std::move(update)};
}

std::pair<DeviceState, ArmUpdate> apply_joint_edit(DeviceState device, ArmId arm, std::string other, bool jointed) {
    if (jointed && (other.empty() || other == device.substructure.id)) {
        throw Error(Errc::NonOpposingArms, "a joint needs another substructure");
    }
    ArmState& state = device.substructure.arm(arm);
    state.jointed = jointed;
    state.mate = jointed ? std::move(other) : std::string();
    ArmUpdate update = stamp_local(device, arm);
    return {std::move(device), std::move(update)};
}

DeviceState on_remote_update(DeviceState device, const ArmUpdate& update) {
    if (update.substructure != device.substructure.id) {
        throw Error(Errc::WrongSubstructure,
                    "update for '" + update.substructure + "' sent to '" + device.substructure.id + "'",
                    {update.substructure});
    }
    device.clock = observe(device.clock, update.stamp);
    if (device.role == Role::Follower && device.pinned.contains(update.arm)) return device;
    ArmState& arm = device.substructure.arm(update.arm);
    arm = merge_arm(arm, update);
    return device;
}

DeviceState on_shadow_update(DeviceState device, const ArmUpdate& update) {
    if (update.substructure != device.substructure.id) {
        throw Error(Errc::WrongSubstructure,
                    "update for '" + update.substructure + "' sent to '" + device.substructure.id + "'",
                    {update.substructure});
    }
    device.clock = observe(device.clock, update.stamp);
    ArmState& arm = device.substructure.arm(update.arm);
    arm = merge_arm(arm, update);
    device.pinned.insert(update.arm);
    return device;
}

bool settled(const DeviceState& device, double tolerance_mm) {
    return std::all_of(device.substructure.arms.begin(), device.substructure.arms.end(),
                       [&](const ArmState& a) { return std::abs(a.extension - a.target) <= tolerance_mm; });
}

std::int64_t backoff_delay_ms(int attempt) {
    constexpr std::int64_t kBase = 500;
    constexpr std::int64_t kCap = 8000;
    if (attempt >= 5) return kCap;
    return std::min(kCap, kBase << std::max(attempt, 0));
}

void validate(const NetProfile& p) {
    if (!std::isfinite(p.latency_ms) || p.latency_ms < 0.0) throw Error(Errc::BadScenario, "latency must be >= 0");
    if (!std::isfinite(p.jitter_ms) || p.jitter_ms < 0.0) throw Error(Errc::BadScenario, "jitter must be >= 0");
    // drop_prob == 1 is accepted so a scenario can model a dead link.
    if (!(p.drop_prob >= 0.0 && p.drop_prob <= 1.0)) throw Error(Errc::BadScenario, "drop probability must be in [0, 1]");
}

ImpairedLink::ImpairedLink(NetProfile profile) : profile_(profile), rng_(profile.seed) { validate(profile_); }

double ImpairedLink::uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }

std::optional<std::int64_t> ImpairedLink::impaired_send() {
    if (uniform() < profile_.drop_prob) return std::nullopt;
    double delay = profile_.latency_ms;
    if (profile_.jitter_ms > 0.0) delay += (2.0 * uniform() - 1.0) * profile_.jitter_ms;
    return std::max<std::int64_t>(0, std::llround(delay));
}

}  // namespace teleshift
