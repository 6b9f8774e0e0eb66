#include <doctest.h>

#include <functional>

#include "teleshift/codec.hpp"
#include "teleshift/error.hpp"
#include "teleshift/wire.hpp"

using namespace teleshift;

namespace {

AssemblyTopology sample() {
    AssemblyTopology t;
    t.add_substructure("S1");
    t.add_substructure("S2");
    t.at("S1").arm(ArmId::PosX) = ArmState{20, 20, false, "", {3, "a"}};
    t = add_joint(t, {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
    return t;
}

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::NonFinite;
}

}  // namespace

TEST_CASE("substructure JSON uses the documented field and arm names") {
    const Json j = to_json(sample().at("S1"));
    CHECK(j.at("id") == "S1");
    const Json& arms = j.at("arms");
    CHECK(arms.size() == 6);
    for (const char* key : {"+x", "-x", "+y", "-y", "+z", "-z"}) CHECK(arms.contains(key));
    const Json& px = arms.at("+x");
    CHECK(px.at("extension") == 20.0);
    CHECK(px.at("target") == 20.0);
    CHECK(px.at("jointed") == true);
    CHECK(px.at("mate") == "S2");
    CHECK(px.at("stamp").at("lamport") == 3);
    CHECK(px.at("stamp").at("actor") == "a");
}

TEST_CASE("topology and snapshot round-trip") {
    const AssemblyTopology t = sample();
    const Json j = to_json(t);
    CHECK(j.at("joints").size() == 1);
    CHECK(topology_from_json(j) == t);

    const Snapshot s = snapshot_of(t, "v1", 1234, "snap-1");
    const Json sj = to_json(s);
    for (const char* key : {"snapshot_id", "label", "created_at", "topology"}) CHECK(sj.contains(key));
    CHECK(snapshot_from_json(sj) == s);
    CHECK(snapshot_metadata(s) == Json{{"snapshot_id", "snap-1"}, {"label", "v1"}, {"created_at", 1234}});
}

TEST_CASE("decoders reject broken shapes") {
    Json five = to_json(sample().at("S1"));
    five["arms"].erase("-z");
    CHECK(code_of([&] { substructure_from_json(five); }) == Errc::MalformedEnvelope);
    try {
        substructure_from_json(five);
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("arms must have 6 entries") != std::string::npos);
    }

    Json lying = to_json(sample());
    lying["joints"] = Json::array();
    CHECK(code_of([&] { topology_from_json(lying); }) == Errc::MalformedEnvelope);

    Json zero = to_json(ArmUpdate{"S1", ArmId::PosX, 5, false, "", {0, "a"}});
    CHECK(code_of([&] { arm_update_from_json(zero); }) == Errc::MalformedEnvelope);
}

TEST_CASE("canonical JSON sorts keys and has no whitespace") {
    CHECK(canonical(Json{{"b", 1}, {"a", Json{{"d", 2}, {"c", 3}}}}) == R"({"a":{"c":3,"d":2},"b":1})");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("envelope lines") {
    Envelope e{Kind::Update, "s1", "dev-a", 7, Json{{"updates", Json::array()}}};
    const std::string line = encode_line(e);
    CHECK(line == R"({"kind":"UPDATE","payload":{"updates":[]},"sender":"dev-a","seq":7,"session":"s1"})" "\n");
    CHECK(decode_line(line) == e);

    SUBCASE("unknown fields are ignored") {
        CHECK(decode_line(R"({"kind":"PING","session":"s","sender":"x","seq":1,"payload":{},"extra":true})").kind ==
              Kind::Ping);
    }
    SUBCASE("unknown kind") {
        CHECK(code_of([] { decode_line(R"({"kind":"SHOUT","session":"s","sender":"x","seq":1,"payload":{}})"); }) ==
              Errc::UnknownKind);
    }
    SUBCASE("malformed") {
        CHECK(code_of([] { decode_line("not json"); }) == Errc::MalformedEnvelope);
        CHECK(code_of([] { decode_line(R"({"kind":"PING","session":"s","sender":"x","seq":-1,"payload":{}})"); }) ==
              Errc::MalformedEnvelope);
        CHECK(code_of([] { decode_line(R"({"kind":"PING","session":"s","sender":"x","seq":1})"); }) ==
              Errc::MalformedEnvelope);
        CHECK(code_of([] { decode_line(R"({"kind":"PING","session":7,"sender":"x","seq":1,"payload":{}})"); }) ==
              Errc::MalformedEnvelope);
    }
    SUBCASE("every kind name round-trips") {
        for (const char* k : {"HELLO", "WELCOME", "UPDATE", "FULL_STATE_REQUEST", "FULL_STATE", "SNAPSHOT_SAVE",
                              "SNAPSHOT_LIST", "SNAPSHOT_RESTORE", "MODE_SET", "ERROR", "PING", "PONG"}) {
            auto kind = kind_from_string(k);
            REQUIRE(kind.has_value());
            CHECK(to_string(*kind) == k);
        }
    }
}

TEST_CASE("error envelopes name the code") {
    const Envelope e = error_envelope("s", Errc::StaleSeq, "old", Kind::Update);
    CHECK(e.kind == Kind::Error);
    CHECK(e.sender == "hub");
    CHECK(e.payload.at("code") == "StaleSeq");
    CHECK(e.payload.at("in_reply_to") == "UPDATE");
}
