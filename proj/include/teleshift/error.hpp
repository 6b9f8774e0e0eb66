#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace teleshift {

enum class Errc {
    NonFinite,
    UnknownSubstructure,
    NonOpposingArms,
    ArmOccupied,
    UnknownAnchor,
    InconsistentCycle,
    BodyCollision,
    RoleModeMismatch,
    WrongSubstructure,
    DuplicateClientId,
    SecondPresenter,
    PresenterRequired,
    MalformedEnvelope,
    UnknownKind,
    NotAMember,
    StaleSeq,
    UnknownSnapshot,
    UnknownSession,
    CorruptFile,
    HubUnreachable,
    BadScenario,
    Timeout,
    AddressInUse,
    BadDataDir,
};

std::string_view to_string(Errc code);

// Every domain failure is an Error. `subjects` names the offending ids
// (substructures, clients, snapshots) in the order the code's signature lists them.
class Error : public std::runtime_error {
public:
    Error(Errc code, std::string message, std::vector<std::string> subjects = {},
          double magnitude = 0.0);

    Errc code() const noexcept { return code_; }
    // The text without the code prefix that what() carries.
    const std::string& message() const noexcept { return message_; }
    const std::vector<std::string>& subjects() const noexcept { return subjects_; }
    // InconsistentCycle discrepancy in millimeters; zero for other codes.
    double magnitude() const noexcept { return magnitude_; }

private:
    Errc code_;
    std::string message_;
    std::vector<std::string> subjects_;
    double magnitude_;
};

}  // namespace teleshift
