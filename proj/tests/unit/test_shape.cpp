#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "support/gen.hpp"
#include "teleshift/error.hpp"
#include "teleshift/shape.hpp"

using namespace teleshift;
namespace tg = teleshift::testgen;

namespace {

AssemblyTopology with(std::initializer_list<const char*> ids) {
    AssemblyTopology t;
    for (const char* id : ids) t.add_substructure(id);
    return t;
}

void set_ext(AssemblyTopology& t, const char* id, ArmId a, double mm) {
    t.at(id).arm(a).extension = mm;
    t.at(id).arm(a).target = mm;
}

template <class F>
Errc code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::NonFinite;
}

}  // namespace

TEST_CASE("opposite_arm is an involution that flips the sign on the same axis") {
    for (ArmId a : kAllArms) {
        CHECK(opposite_arm(opposite_arm(a)) == a);
        CHECK(opposite_arm(a) != a);
        CHECK(axis_of(opposite_arm(a)) == axis_of(a));
        CHECK(sign_of(opposite_arm(a)) == -sign_of(a));
    }
    CHECK(opposite_arm(ArmId::PosX) == ArmId::NegX);
    CHECK(opposite_arm(ArmId::NegZ) == ArmId::PosZ);
}

TEST_CASE("arm keys round-trip") {
    const char* keys[] = {"+x", "-x", "+y", "-y", "+z", "-z"};
    for (std::size_t i = 0; i < kArmCount; ++i) {
        CHECK(arm_key(kAllArms[i]) == keys[i]);
        CHECK(arm_from_key(keys[i]) == kAllArms[i]);
    }
    CHECK_FALSE(arm_from_key("x").has_value());
    CHECK_FALSE(arm_from_key("+w").has_value());
}

TEST_CASE("extensions clamp to the arm travel and reject non-finite values") {
    CHECK(clamp_extension(-3.0) == 0.0);
    CHECK(clamp_extension(200.0) == 60.0);
    CHECK(clamp_extension(60.0) == 60.0);
    CHECK(clamp_extension(12.25) == 12.25);
    CHECK(code_of([] { clamp_extension(std::nan("")); }) == Errc::NonFinite);
    CHECK(code_of([] { clamp_extension(INFINITY); }) == Errc::NonFinite);
}

TEST_CASE("ids are 1 to 64 printable characters") {
    CHECK(is_valid_id("S1"));
    CHECK(is_valid_id(std::string(64, 'a')));
    CHECK_FALSE(is_valid_id(""));
    CHECK_FALSE(is_valid_id(std::string(65, 'a')));
    CHECK_FALSE(is_valid_id("tab\there"));
}

TEST_CASE("add_joint") {
    SUBCASE("minimal valid joint sets both arms") {
        auto t = add_joint(with({"S1", "S2"}), {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        REQUIRE(t.joints().size() == 1);
        CHECK(t.arm({"S1", ArmId::PosX}).jointed);
        CHECK(t.arm({"S2", ArmId::NegX}).jointed);
        CHECK(t.arm({"S1", ArmId::PosX}).mate == "S2");
        CHECK(t.arm({"S2", ArmId::NegX}).mate == "S1");
        CHECK_FALSE(first_violation(t).has_value());
    }
    SUBCASE("same-direction arms do not mate") {
        CHECK(code_of([] { add_joint(with({"S1", "S2"}), {"S1", ArmId::PosX}, {"S2", ArmId::PosX}); }) ==
              Errc::NonOpposingArms);
    }
    SUBCASE("a tip holds one joint") {
        auto t = add_joint(with({"S1", "S2", "S3"}), {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        CHECK(code_of([&] { add_joint(t, {"S1", ArmId::PosX}, {"S3", ArmId::NegX}); }) == Errc::ArmOccupied);
    }
    SUBCASE("unknown substructure") {
        CHECK(code_of([] { add_joint(with({"S1"}), {"S1", ArmId::PosX}, {"S9", ArmId::NegX}); }) ==
              Errc::UnknownSubstructure);
    }
    SUBCASE("a body cannot mate with itself") {
        CHECK(code_of([] { add_joint(with({"S1"}), {"S1", ArmId::PosX}, {"S1", ArmId::NegX}); }) ==
              Errc::NonOpposingArms);
    }
    SUBCASE("the joint is normalised regardless of argument order") {
        auto t1 = add_joint(with({"S1", "S2"}), {"S1", ArmId::PosY}, {"S2", ArmId::NegY});
        auto t2 = add_joint(with({"S1", "S2"}), {"S2", ArmId::NegY}, {"S1", ArmId::PosY});
        CHECK(t1 == t2);
    }
}

TEST_CASE("add_joint never breaks topology invariants on generated input") {
    std::mt19937_64 rng(2024);
    for (int round = 0; round < 300; ++round) {
        AssemblyTopology t = with({"A", "B", "C", "D"});
        const char* ids[] = {"A", "B", "C", "D"};
        for (int k = 0; k < 12; ++k) {
            ArmRef a{ids[rng() % 4], tg::random_arm(rng)};
            ArmRef b{ids[rng() % 4], tg::random_arm(rng)};
            try {
                t = add_joint(t, a, b);
            } catch (const Error& e) {
                CHECK((e.code() == Errc::NonOpposingArms || e.code() == Errc::ArmOccupied));
            }
            REQUIRE_FALSE(first_violation(t).has_value());
            std::set<std::pair<std::string, ArmId>> used;
            for (const Joint& j : t.joints()) {
                CHECK(j.a.substructure != j.b.substructure);
                CHECK(opposite_arm(j.a.arm) == j.b.arm);
                CHECK(used.insert({j.a.substructure, j.a.arm}).second);
                CHECK(used.insert({j.b.substructure, j.b.arm}).second);
            }
        }
    }
}

TEST_CASE("embed_assembly") {
    SUBCASE("offset is body plus both extensions") {
        auto t = with({"S1", "S2"});
        set_ext(t, "S1", ArmId::PosX, 20);
        set_ext(t, "S2", ArmId::NegX, 10);
        t = add_joint(t, {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        auto e = embed_assembly(t, "S1", {0, 0, 0});
        CHECK(e.positions.at("S2") == Point3{130, 0, 0});
    }
    SUBCASE("single body sits at the anchor") {
        auto e = embed_assembly(with({"S1"}), "S1", {5, -2, 7});
        CHECK(e.positions.size() == 1);
        CHECK(e.positions.at("S1") == Point3{5, -2, 7});
    }
    SUBCASE("unknown anchor") {
        CHECK(code_of([] { embed_assembly(with({"S1"}), "S7"); }) == Errc::UnknownAnchor);
    }
    SUBCASE("square ring that misses closure by 25 mm") {
        // S1 -x-> S2 -y-> S3 and S1 -y-> S4 -x-> S3, all arms 10 mm except S4 +x at 35.
        auto t = with({"S1", "S2", "S3", "S4"});
        for (const char* id : {"S1", "S2", "S3", "S4"}) {
            for (ArmId a : kAllArms) set_ext(t, id, a, 10);
        }
        set_ext(t, "S4", ArmId::PosX, 35);
        t = add_joint(t, {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        t = add_joint(t, {"S2", ArmId::PosY}, {"S3", ArmId::NegY});
        t = add_joint(t, {"S1", ArmId::PosY}, {"S4", ArmId::NegY});
        t = add_joint(t, {"S4", ArmId::PosX}, {"S3", ArmId::NegX});

        // Hand arithmetic for both routes to S3.
        const double via_s2_x = 100 + 10 + 10, via_s2_y = 100 + 10 + 10;
        const double via_s4_x = 100 + 35 + 10, via_s4_y = 100 + 10 + 10;
        CHECK(via_s2_y == via_s4_y);
        const double expected_gap = std::abs(via_s4_x - via_s2_x);
        CHECK(expected_gap == 25.0);

        try {
            embed_assembly(t, "S1");
            FAIL("ring should not close");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::InconsistentCycle);
            REQUIRE(e.subjects().size() == 1);
            CHECK(e.subjects()[0] == "S3");
            CHECK(e.magnitude() == doctest::Approx(expected_gap));
        }

        set_ext(t, "S4", ArmId::PosX, 10);
        auto e = embed_assembly(t, "S1");
        CHECK(e.positions.at("S3") == Point3{120, 120, 0});
    }
    SUBCASE("overlapping bodies are reported") {
        // A U-turn: S1 +x S2 +y S3 -x S4 -y S5 lands S5 back on S1.
        auto t = with({"S1", "S2", "S3", "S4", "S5"});
        t = add_joint(t, {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        t = add_joint(t, {"S2", ArmId::PosY}, {"S3", ArmId::NegY});
        t = add_joint(t, {"S3", ArmId::NegX}, {"S4", ArmId::PosX});
        t = add_joint(t, {"S4", ArmId::NegY}, {"S5", ArmId::PosY});
        CHECK(code_of([&] { embed_assembly(t, "S1"); }) == Errc::BodyCollision);
    }
    SUBCASE("bodies touching within tolerance are not a collision") {
        auto t = with({"S1", "S2"});
        t = add_joint(t, {"S1", ArmId::PosZ}, {"S2", ArmId::NegZ});
        CHECK(embed_assembly(t, "S1").positions.at("S2") == Point3{0, 0, 100});
    }
}

TEST_CASE("embedding obeys the offset law and is path independent on generated assemblies") {
    std::mt19937_64 rng(77);
    for (int round = 0; round < 120; ++round) {
        tg::Assembly g = tg::random_tree(rng, 8);
        if (round % 2 == 0) tg::add_square(g, rng, true);
        const auto e = embed_assembly(g.topo, "B0");
        REQUIRE(e.positions.size() == g.oracle.size());
        for (const auto& [id, p] : g.oracle) CHECK(e.positions.at(id) == p);
        for (const Joint& j : g.topo.joints()) {
            const Point3& pa = e.positions.at(j.a.substructure);
            const Point3& pb = e.positions.at(j.b.substructure);
            const int axis = axis_of(j.a.arm);
            const double expected = kBodyMm + g.ext(j.a.substructure, j.a.arm) + g.ext(j.b.substructure, j.b.arm);
            CHECK(sign_of(j.a.arm) * (pb[axis] - pa[axis]) == expected);
            for (int other = 0; other < 3; ++other) {
                if (other != axis) CHECK(pa[other] == pb[other]);
            }
        }
        // Re-rooting is a pure translation.
        const auto ids = tg::ids_of(g);
        const std::string anchor = tg::pick(rng, ids);
        const auto r = embed_assembly(g.topo, anchor, {1.5, -2.0, 3.0});
        for (const auto& [id, p] : g.oracle) {
            for (int i = 0; i < 3; ++i) {
                const Point3 shift{1.5, -2.0, 3.0};
                CHECK(std::abs(r.positions.at(id)[i] - (p[i] - g.oracle[anchor][i] + shift[i])) <= kGeomEpsMm);
            }
        }
    }
}

TEST_CASE("snapshot_of copies and stays immutable") {
    auto t = with({"S1"});
    set_ext(t, "S1", ArmId::PosX, 40);
    const Snapshot a = snapshot_of(t, "v1", 1000);
    const Snapshot b = snapshot_of(t, "v1", 1000);
    CHECK(a.topology() == t);
    CHECK(a.label() == "v1");
    CHECK(a.created_at() == 1000);
    CHECK(a.snapshot_id() != b.snapshot_id());
    set_ext(t, "S1", ArmId::PosX, 5);
    CHECK(a.topology().arm({"S1", ArmId::PosX}).extension == 40);
}

TEST_CASE("restore_targets") {
    LamportClock clock{3, "hub"};
    SUBCASE("targets move, extensions stay") {
        auto saved = with({"S1"});
        set_ext(saved, "S1", ArmId::PosX, 40);
        auto live = with({"S1"});
        set_ext(live, "S1", ArmId::PosX, 10);
        auto r = restore_targets(live, snapshot_of(saved, "s", 0), clock);
        CHECK(r.topology.arm({"S1", ArmId::PosX}).target == 40);
        CHECK(r.topology.arm({"S1", ArmId::PosX}).extension == 10);
        CHECK(r.touched.size() == kArmCount);
    }
    SUBCASE("restoring the live state changes nothing but stamps") {
        auto live = with({"S1", "S2"});
        set_ext(live, "S1", ArmId::NegY, 22);
        live = add_joint(live, {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        auto r = restore_targets(live, snapshot_of(live, "s", 0), clock);
        for (const auto& [id, sub] : live.substructures) {
            for (ArmId a : kAllArms) {
                ArmState want = sub.arm(a);
                const ArmState& got = r.topology.at(id).arm(a);
                CHECK(got.stamp > want.stamp);
                want.stamp = got.stamp;
                CHECK(got == want);
            }
        }
        CHECK(r.clock.counter == 3 + 2 * kArmCount);
    }
    SUBCASE("snapshot naming a missing substructure") {
        auto snap = snapshot_of(with({"S1", "S9"}), "s", 0);
        try {
            restore_targets(with({"S1"}), snap, clock);
            FAIL("expected UnknownSubstructure");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::UnknownSubstructure);
            CHECK(e.subjects() == std::vector<std::string>{"S9"});
        }
    }
    SUBCASE("joint set is replaced by the snapshot's") {
        auto saved = add_joint(with({"S1", "S2"}), {"S1", ArmId::PosY}, {"S2", ArmId::NegY});
        auto live = add_joint(with({"S1", "S2"}), {"S1", ArmId::PosX}, {"S2", ArmId::NegX});
        auto r = restore_targets(live, snapshot_of(saved, "s", 0), clock);
        CHECK(r.topology.joints() == saved.joints());
    }
}

TEST_CASE("snapshot then restore sets every target to the saved extension") {
    std::mt19937_64 rng(9);
    for (int round = 0; round < 200; ++round) {
        auto saved = with({"S1", "S2", "S3"});
        auto live = saved;
        for (auto* t : {&saved, &live}) {
            for (auto& [id, sub] : t->substructures) {
                for (ArmId a : kAllArms) {
                    sub.arm(a).extension = std::uniform_real_distribution<double>(0, 60)(rng);
                    sub.arm(a).target = std::uniform_real_distribution<double>(0, 60)(rng);
                }
            }
        }
        const Snapshot snap = snapshot_of(saved, "r", round);
        auto r = restore_targets(live, snap, LamportClock{0, "hub"});
        for (const auto& [id, sub] : saved.substructures) {
            for (ArmId a : kAllArms) {
                CHECK(r.topology.at(id).arm(a).target == clamp_extension(sub.arm(a).extension));
                CHECK(r.topology.at(id).arm(a).extension == live.at(id).arm(a).extension);
            }
        }
    }
}
