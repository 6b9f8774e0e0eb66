#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <utility>

namespace teleshift {

/// Version of one replicated register. Ordered by lamport, then by actor as a
/// byte string, so two distinct actors never produce equal stamps.
struct VersionStamp {
    std::uint64_t lamport = 0;
    std::string actor;

    friend auto operator<=>(const VersionStamp&, const VersionStamp&) = default;
    friend bool operator==(const VersionStamp&, const VersionStamp&) = default;
};

/// One replica's logical clock. A clock is owned by a single writer.
struct LamportClock {
    std::uint64_t counter = 0;
    std::string actor;

    friend bool operator==(const LamportClock&, const LamportClock&) = default;
};

/// Advances the clock and returns the stamp for the next local write.
std::pair<LamportClock, VersionStamp> stamp_next(const LamportClock& clock);

/// Folds a remote stamp into the clock (max rule).
LamportClock observe(const LamportClock& clock, const VersionStamp& remote);

}  // namespace teleshift
