#pragma once

// Canonical JSON encoding shared by the wire protocol and session files.
// Objects serialize with sorted keys and no whitespace, so equal values give
// equal bytes.

#include <string>
#include <string_view>

#include <json.hpp>

#include "teleshift/shape.hpp"
#include "teleshift/sync.hpp"

namespace teleshift {

using Json = nlohmann::json;

Json to_json(const VersionStamp& stamp);
Json to_json(const ArmState& arm);
Json to_json(const SubstructureState& sub);
Json to_json(const Joint& joint);
Json to_json(const AssemblyTopology& topology);
Json to_json(const Snapshot& snapshot);
Json to_json(const ArmUpdate& update);
Json to_json(const Embedding& embedding);
Json snapshot_metadata(const Snapshot& snapshot);

// Decoders throw Error(MalformedEnvelope) naming the first problem found.
VersionStamp stamp_from_json(const Json& j);
ArmState arm_state_from_json(const Json& j);
SubstructureState substructure_from_json(const Json& j);
AssemblyTopology topology_from_json(const Json& j);
Snapshot snapshot_from_json(const Json& j);
ArmUpdate arm_update_from_json(const Json& j);
ArmRef arm_ref_from_json(const Json& j);
Json to_json(const ArmRef& ref);

std::string canonical(const Json& j);

/// Lower-case hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace teleshift
