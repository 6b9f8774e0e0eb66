#include "teleshift/error.hpp"

namespace teleshift {

std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::NonFinite: return "NonFinite";
        case Errc::UnknownSubstructure: return "UnknownSubstructure";
        case Errc::NonOpposingArms: return "NonOpposingArms";
        case Errc::ArmOccupied: return "ArmOccupied";
        case Errc::UnknownAnchor: return "UnknownAnchor";
        case Errc::InconsistentCycle: return "InconsistentCycle";
        case Errc::BodyCollision: return "BodyCollision";
        case Errc::RoleModeMismatch: return "RoleModeMismatch";
        case Errc::WrongSubstructure: return "WrongSubstructure";
        case Errc::DuplicateClientId: return "DuplicateClientId";
        case Errc::SecondPresenter: return "SecondPresenter";
        case Errc::PresenterRequired: return "PresenterRequired";
        case Errc::MalformedEnvelope: return "MalformedEnvelope";
        case Errc::UnknownKind: return "UnknownKind";
        case Errc::NotAMember: return "NotAMember";
        case Errc::StaleSeq: return "StaleSeq";
        case Errc::UnknownSnapshot: return "UnknownSnapshot";
        case Errc::UnknownSession: return "UnknownSession";
        case Errc::CorruptFile: return "CorruptFile";
        case Errc::HubUnreachable: return "HubUnreachable";
        case Errc::BadScenario: return "BadScenario";
        case Errc::Timeout: return "Timeout";
        case Errc::AddressInUse: return "AddressInUse";
        case Errc::BadDataDir: return "BadDataDir";
    }
    return "Unknown";
}

Error::Error(Errc code, std::string message, std::vector<std::string> subjects, double magnitude)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      message_(std::move(message)),
      subjects_(std::move(subjects)),
      magnitude_(magnitude) {}

}  // namespace teleshift
