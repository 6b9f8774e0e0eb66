#include "teleshift/wire.hpp"

#include <array>
#include <utility>

namespace teleshift {

namespace {

constexpr std::array<std::pair<Kind, std::string_view>, 12> kKindNames{{
    {Kind::Hello, "HELLO"},
    {Kind::Welcome, "WELCOME"},
    {Kind::Update, "UPDATE"},
    {Kind::FullStateRequest, "FULL_STATE_REQUEST"},
    {Kind::FullState, "FULL_STATE"},
    {Kind::SnapshotSave, "SNAPSHOT_SAVE"},
    {Kind::SnapshotList, "SNAPSHOT_LIST"},
    {Kind::SnapshotRestore, "SNAPSHOT_RESTORE"},
    {Kind::ModeSet, "MODE_SET"},
    {Kind::Error, "ERROR"},
    {Kind::Ping, "PING"},
    {Kind::Pong, "PONG"},
}};

}  // namespace

std::string_view to_string(Kind kind) {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "ERROR";
}

std::optional<Kind> kind_from_string(std::string_view text) {
    for (const auto& [k, name] : kKindNames) {
        if (name == text) return k;
    }
    return std::nullopt;
}

Json to_json(const Envelope& e) {
    return Json{{"kind", to_string(e.kind)},
                {"session", e.session},
                {"sender", e.sender},
                {"seq", e.seq},
                {"payload", e.payload}};
}

std::string encode_line(const Envelope& envelope) {
    std::string line = canonical(to_json(envelope));
    line.push_back('\n');
    return line;
}

Envelope decode_line(std::string_view line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.remove_suffix(1);
    Json j = Json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(Errc::MalformedEnvelope, "envelope is not a JSON object");
    }
    auto text = [&](const char* name) -> std::string {
        auto it = j.find(name);
        if (it == j.end() || !it->is_string()) {
            throw Error(Errc::MalformedEnvelope, std::string("envelope field '") + name + "' must be a string");
        }
        return it->get<std::string>();
    };

    Envelope e;
    e.session = text("session");
    e.sender = text("sender");
    auto seq = j.find("seq");
    if (seq == j.end() || !seq->is_number_integer() || (seq->is_number_integer() && !seq->is_number_unsigned() &&
                                                        seq->get<std::int64_t>() < 0)) {
        throw Error(Errc::MalformedEnvelope, "envelope field 'seq' must be a non-negative integer");
    }
    e.seq = seq->get<std::uint64_t>();
    auto payload = j.find("payload");
    if (payload == j.end() || !payload->is_object()) {
        throw Error(Errc::MalformedEnvelope, "envelope field 'payload' must be an object");
    }
    e.payload = *payload;
    std::string kind = text("kind");
    auto parsed = kind_from_string(kind);
    if (!parsed) throw Error(Errc::UnknownKind, "unknown kind '" + kind + "'");
    e.kind = *parsed;
    return e;
}

Envelope error_envelope(std::string session, Errc code, std::string message, std::optional<Kind> in_reply_to) {
    Envelope e;
    e.kind = Kind::Error;
    e.session = std::move(session);
    e.sender = std::string(kHubSender);
    e.payload = Json{{"code", to_string(code)}, {"message", std::move(message)}};
    if (in_reply_to) e.payload["in_reply_to"] = to_string(*in_reply_to);
    return e;
}

}  // namespace teleshift
