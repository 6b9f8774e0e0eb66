#include "teleshift/codec.hpp"

#include <array>
#include <cmath>

#include <openssl/evp.h>

#include "teleshift/error.hpp"

namespace teleshift {

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(Errc::MalformedEnvelope, what); }

const Json& field(const Json& j, const char* name) {
    if (!j.is_object()) malformed(std::string("expected an object holding '") + name + "'");
    auto it = j.find(name);
    if (it == j.end()) malformed(std::string("missing field '") + name + "'");
    return *it;
}

std::string string_field(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_string()) malformed(std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

double mm_field(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_number()) malformed(std::string("field '") + name + "' must be a number");
    double mm = v.get<double>();
    if (!std::isfinite(mm) || mm < 0.0 || mm > kMaxExtensionMm) {
        malformed(std::string("field '") + name + "' must lie in [0, 60]");
    }
    return mm;
}

bool bool_field(const Json& j, const char* name) {
    const Json& v = field(j, name);
    if (!v.is_boolean()) malformed(std::string("field '") + name + "' must be a boolean");
    return v.get<bool>();
}

std::string optional_string(const Json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return {};
    if (!it->is_string()) malformed(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
}

std::string id_field(const Json& j, const char* name) {
    std::string id = string_field(j, name);
    if (!is_valid_id(id)) malformed(std::string("field '") + name + "' is not a valid id");
    return id;
}

ArmId arm_field(const Json& j, const char* name) {
    auto arm = arm_from_key(string_field(j, name));
    if (!arm) malformed(std::string("field '") + name + "' is not an arm key");
    return *arm;
}

}  // namespace

Json to_json(const VersionStamp& stamp) { return Json{{"lamport", stamp.lamport}, {"actor", stamp.actor}}; }

Json to_json(const ArmState& arm) {
    return Json{{"extension", arm.extension}, {"target", arm.target}, {"jointed", arm.jointed},
                {"mate", arm.mate},           {"stamp", to_json(arm.stamp)}};
}

Json to_json(const SubstructureState& sub) {
    Json arms = Json::object();
    for (ArmId a : kAllArms) arms[std::string(arm_key(a))] = to_json(sub.arm(a));
    return Json{{"id", sub.id}, {"arms", std::move(arms)}};
}

Json to_json(const ArmRef& ref) { return Json{{"id", ref.substructure}, {"arm", arm_key(ref.arm)}}; }

Json to_json(const Joint& joint) { return Json{{"a", to_json(joint.a)}, {"b", to_json(joint.b)}}; }

Json to_json(const AssemblyTopology& topology) {
    Json subs = Json::array();
    for (const auto& [id, sub] : topology.substructures) subs.push_back(to_json(sub));
    Json joints = Json::array();
    for (const Joint& j : topology.joints()) joints.push_back(to_json(j));
    return Json{{"substructures", std::move(subs)}, {"joints", std::move(joints)}};
}

Json snapshot_metadata(const Snapshot& snapshot) {
    return Json{{"snapshot_id", snapshot.snapshot_id()},
                {"label", snapshot.label()},
                {"created_at", snapshot.created_at()}};
}

Json to_json(const Snapshot& snapshot) {
    Json j = snapshot_metadata(snapshot);
    j["topology"] = to_json(snapshot.topology());
    return j;
}

Json to_json(const ArmUpdate& u) {
    return Json{{"substructure", u.substructure}, {"arm", arm_key(u.arm)}, {"target", u.target},
                {"jointed", u.jointed},           {"mate", u.mate},        {"stamp", to_json(u.stamp)}};
}

Json to_json(const Embedding& embedding) {
    Json out = Json::object();
    for (const auto& [id, p] : embedding.positions) out[id] = Json::array({p[0], p[1], p[2]});
    return out;
}

VersionStamp stamp_from_json(const Json& j) {
    const Json& lamport = field(j, "lamport");
    if (!lamport.is_number_unsigned() && !(lamport.is_number_integer() && lamport.get<std::int64_t>() >= 0)) {
        malformed("stamp lamport must be a non-negative integer");
    }
    VersionStamp stamp{lamport.get<std::uint64_t>(), string_field(j, "actor")};
    if (stamp.lamport > 0 && !is_valid_id(stamp.actor)) malformed("stamp actor is not a valid id");
    return stamp;
}

ArmState arm_state_from_json(const Json& j) {
    ArmState arm;
    arm.extension = mm_field(j, "extension");
    arm.target = mm_field(j, "target");
    arm.jointed = bool_field(j, "jointed");
    arm.mate = optional_string(j, "mate");
    arm.stamp = stamp_from_json(field(j, "stamp"));
    return arm;
}

SubstructureState substructure_from_json(const Json& j) {
    SubstructureState sub;
    sub.id = id_field(j, "id");
    const Json& arms = field(j, "arms");
    if (!arms.is_object()) malformed("arms must be an object");
    if (arms.size() != kArmCount) malformed("arms must have 6 entries");
    for (ArmId a : kAllArms) {
        auto it = arms.find(std::string(arm_key(a)));
        if (it == arms.end()) malformed("arms is missing '" + std::string(arm_key(a)) + "'");
        sub.arm(a) = arm_state_from_json(*it);
    }
    return sub;
}

ArmRef arm_ref_from_json(const Json& j) { return ArmRef{id_field(j, "id"), arm_field(j, "arm")}; }

AssemblyTopology topology_from_json(const Json& j) {
    AssemblyTopology topology;
    const Json& subs = field(j, "substructures");
    if (!subs.is_array()) malformed("substructures must be an array");
    for (const Json& s : subs) {
        SubstructureState sub = substructure_from_json(s);
        std::string id = sub.id;
        if (!topology.substructures.emplace(id, std::move(sub)).second) {
            malformed("duplicate substructure '" + id + "'");
        }
    }
    if (auto violation = first_violation(topology)) malformed(*violation);

    std::vector<Joint> declared;
    if (auto it = j.find("joints"); it != j.end()) {
        if (!it->is_array()) malformed("joints must be an array");
        for (const Json& joint : *it) {
            ArmRef a = arm_ref_from_json(field(joint, "a"));
            ArmRef b = arm_ref_from_json(field(joint, "b"));
            declared.push_back(make_joint(std::move(a), std::move(b)));
        }
        std::sort(declared.begin(), declared.end());
        if (declared != topology.joints()) malformed("joints do not match the arms' joint flags");
    }
    return topology;
}

Snapshot snapshot_from_json(const Json& j) {
    const Json& created = field(j, "created_at");
    if (!created.is_number_integer()) malformed("created_at must be an integer");
    return Snapshot(string_field(j, "snapshot_id"), string_field(j, "label"), created.get<std::int64_t>(),
                    topology_from_json(field(j, "topology")));
}

ArmUpdate arm_update_from_json(const Json& j) {
    ArmUpdate u;
    u.substructure = id_field(j, "substructure");
    u.arm = arm_field(j, "arm");
    u.target = mm_field(j, "target");
    u.jointed = bool_field(j, "jointed");
    u.mate = optional_string(j, "mate");
    u.stamp = stamp_from_json(field(j, "stamp"));
    if (u.stamp.lamport == 0) malformed("update stamps start at lamport 1");
    return u;
}

std::string canonical(const Json& j) { return j.dump(); }

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int size = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest.data(), &size, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(size * 2);
    for (unsigned int i = 0; i < size; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0x0f]);
    }
    return out;
}

}  // namespace teleshift
