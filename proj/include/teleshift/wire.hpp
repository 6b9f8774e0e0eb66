#pragma once

// Hub wire protocol: UTF-8, one JSON envelope per line. Every envelope carries
// exactly `kind`, `session`, `sender`, `seq` and `payload`; unknown fields are
// ignored on decode.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "teleshift/codec.hpp"
#include "teleshift/error.hpp"

namespace teleshift {

enum class Kind {
    Hello,
    Welcome,
    Update,
    FullStateRequest,
    FullState,
    SnapshotSave,
    SnapshotList,
    SnapshotRestore,
    ModeSet,
    Error,
    Ping,
    Pong,
};

std::string_view to_string(Kind kind);
std::optional<Kind> kind_from_string(std::string_view text);

inline constexpr std::string_view kHubSender = "hub";

struct Envelope {
    Kind kind = Kind::Ping;
    std::string session;
    std::string sender;
    std::uint64_t seq = 0;
    Json payload = Json::object();

    friend bool operator==(const Envelope&, const Envelope&) = default;
};

Json to_json(const Envelope& envelope);

/// Canonical JSON of the envelope followed by '\n'.
std::string encode_line(const Envelope& envelope);

/// Accepts a line with or without its trailing newline. Throws MalformedEnvelope,
/// or UnknownKind for a well-formed envelope with an unrecognized kind.
Envelope decode_line(std::string_view line);

Envelope error_envelope(std::string session, Errc code, std::string message,
                        std::optional<Kind> in_reply_to = std::nullopt);

}  // namespace teleshift
