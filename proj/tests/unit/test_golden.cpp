#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "teleshift/codec.hpp"
#include "teleshift/hub.hpp"

// The golden files pin the exact bytes of each envelope shape that crosses the
// wire. Set TELESHIFT_UPDATE_GOLDEN=1 to rewrite them after a deliberate change.

using namespace teleshift;
namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::path(TELESHIFT_SOURCE_DIR) / "schema" / "wire" / "golden";

void golden(const std::string& name, const Envelope& e) {
    const std::string line = encode_line(e);
    const fs::path file = kDir / (name + ".json");
    if (std::getenv("TELESHIFT_UPDATE_GOLDEN")) {
        fs::create_directories(kDir);
        std::ofstream(file, std::ios::binary) << line;
        return;
    }
    std::ifstream in(file, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "missing golden file " << file);
    std::stringstream ss;
    ss << in.rdbuf();
    CAPTURE(name);
    CHECK(ss.str() == line);
}

struct Wire {
    Hub hub;
    std::map<std::string, ConnectionId> conns;
    std::map<std::string, std::uint64_t> seqs;
    std::int64_t now = 1700000000000;

    Envelope out(const std::string& who, Kind kind, Json payload) {
        if (!conns.contains(who)) conns[who] = hub.open_connection();
        return Envelope{kind, "golden", who, ++seqs[who], std::move(payload)};
    }

    std::vector<Hub::Outbound> send(const Envelope& e) { return hub.handle(conns.at(e.sender), e, now += 10); }

    Envelope reply_to(const Envelope& e) {
        for (const auto& o : send(e)) {
            if (o.to == conns.at(e.sender)) return o.envelope;
        }
        FAIL("no reply");
        return {};
    }
};

}  // namespace

TEST_CASE("wire golden files") {
    Wire w;
    const Envelope hello = w.out("teacher", Kind::Hello,
                                 Json{{"mode", "PRESENTATION"}, {"role", "PRESENTER"}, {"substructures", {"S1", "S2"}}});
    golden("hello", hello);
    golden("welcome", w.reply_to(hello));
    w.reply_to(w.out("student", Kind::Hello, Json{{"mode", "PRESENTATION"}}));

    const ArmUpdate edit{"S1", ArmId::PosX, 35.5, false, "", {1, "teacher"}};
    const Envelope update = w.out("teacher", Kind::Update, Json{{"updates", {to_json(edit)}}});
    golden("update", update);
    const auto fan = w.send(update);
    REQUIRE(fan.size() == 1);
    golden("update_fanout", fan[0].envelope);

    const ArmUpdate mine{"S1", ArmId::NegY, 12.25, false, "", {2, "student"}};
    CHECK(w.send(w.out("student", Kind::Update, Json{{"updates", {to_json(mine)}}})).empty());
    const Envelope fsr = w.out("student", Kind::FullStateRequest, Json::object());
    golden("full_state_request", fsr);
    golden("full_state", w.reply_to(fsr));

    const Envelope save = w.out("teacher", Kind::SnapshotSave, Json{{"label", "chair"}});
    golden("snapshot_save_request", save);
    golden("snapshot_save_reply", w.reply_to(save));
    const Envelope list = w.out("teacher", Kind::SnapshotList, Json::object());
    golden("snapshot_list_request", list);
    golden("snapshot_list_reply", w.reply_to(list));
    const Envelope restore = w.out("teacher", Kind::SnapshotRestore, Json{{"label", "chair"}});
    golden("snapshot_restore_request", restore);
    golden("snapshot_restore_reply", w.reply_to(restore));

    const Envelope mode = w.out("teacher", Kind::ModeSet, Json{{"mode", "COLLABORATION"}});
    golden("mode_set_request", mode);
    golden("mode_set", w.reply_to(mode));

    const Envelope ping = w.out("student", Kind::Ping, Json::object());
    golden("ping", ping);
    golden("pong", w.reply_to(ping));

    Envelope stale = w.out("student", Kind::Ping, Json::object());
    stale.seq = 1;
    golden("error", w.reply_to(stale));
}
