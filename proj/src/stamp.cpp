#include "teleshift/stamp.hpp"

#include <algorithm>

namespace teleshift {

std::pair<LamportClock, VersionStamp> stamp_next(const LamportClock& clock) {
    LamportClock next{clock.counter + 1, clock.actor};
    VersionStamp stamp{next.counter, next.actor};
    return {std::move(next), std::move(stamp)};
}

LamportClock observe(const LamportClock& clock, const VersionStamp& remote) {
    return LamportClock{std::max(clock.counter, remote.lamport), clock.actor};
}

}  // namespace teleshift
