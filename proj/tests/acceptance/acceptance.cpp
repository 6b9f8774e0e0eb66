// One PASS/FAIL line per acceptance criterion. Exit status is the number of failures.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "support/gen.hpp"
#include "teleshift/codec.hpp"
#include "teleshift/error.hpp"
#include "teleshift/scenario.hpp"
#include "teleshift/sync.hpp"

using namespace teleshift;
namespace tg = teleshift::testgen;

namespace {

// Pinned limits.
constexpr double kLwwBudgetS = 1.0;
constexpr double kChaosBudgetS = 10.0;
constexpr double kUndoTolMm = 0.1;
constexpr double kEmbedBudgetS = 5.0;
constexpr double kMotionBoundMm = 30.0 * 20 / 1000 + 1e-9;

struct Outcome {
    bool pass = true;
    std::string detail;
};

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string hash_of(const SubstructureState& s) { return sha256_hex(canonical(to_json(s))); }

// --- 1 ---------------------------------------------------------------------

Outcome lww_permutations() {
    Stopwatch clock;
    std::mt19937_64 rng(1);
    long perms = 0, bad = 0;
    for (int draw = 0; draw < 2000; ++draw) {
        const int n = 1 + static_cast<int>(rng() % 4);
        std::set<VersionStamp> used;
        std::vector<ArmUpdate> us;
        while (static_cast<int>(us.size()) < n) {
            VersionStamp s{1 + rng() % 3, std::string(1, static_cast<char>('a' + rng() % 3))};
            if (!used.insert(s).second) continue;
            us.push_back({"S1", ArmId::PosX, static_cast<double>(rng() % 61), false, "", s});
        }
        // Oracle: the update with the lexicographically greatest (lamport, actor).
        const ArmUpdate* best = &us[0];
        for (const auto& u : us) {
            if (u.stamp.lamport > best->stamp.lamport ||
                (u.stamp.lamport == best->stamp.lamport && u.stamp.actor > best->stamp.actor)) {
                best = &u;
            }
        }
        const ArmUpdate want = *best;
        std::vector<int> idx(us.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        do {
            AssemblyTopology t;
            t.add_substructure("S1");
            for (int i : idx) t = merge_topology(t, std::vector<ArmUpdate>{us[i]}).topology;
            const ArmState& arm = t.arm({"S1", ArmId::PosX});
            if (arm.target != want.target || arm.stamp != want.stamp) ++bad;
            ++perms;
        } while (std::next_permutation(idx.begin(), idx.end()));
    }
    const double s = clock.seconds();
    return {bad == 0 && s < kLwwBudgetS,
            std::to_string(perms) + " permutations, " + std::to_string(bad) + " mismatches, " + fmt("%.3f s", s)};
}

// --- 2 ---------------------------------------------------------------------

Outcome chaos_convergence() {
    Stopwatch clock;
    Scenario sc;
    sc.session = "chaos";
    sc.timeout_ms = 600000;
    for (int i = 0; i < 3; ++i) {
        sc.devices.push_back({"dev-" + std::to_string(i), "S1", Role::Peer, {50, 20, 0.1, 100u + i}});
    }
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 200; ++i) {
        ScenarioEvent ev;
        ev.at_ms = 200 + static_cast<std::int64_t>(rng() % 30000);
        ev.device = sc.devices[rng() % 3].id;
        ev.action.arm = tg::random_arm(rng);
        ev.action.mm = tg::grid_mm(rng);
        sc.events.push_back(ev);
    }
    std::stable_sort(sc.events.begin(), sc.events.end(), [](const auto& a, const auto& b) { return a.at_ms < b.at_ms; });
    const ScenarioReport r = run_scenario(sc);
    const double s = clock.seconds();

    std::set<std::string> hashes;
    for (const auto& d : sc.devices) hashes.insert(r.final_state_hash.at(d.id));
    const bool ok = r.converged && !r.timed_out && hashes.size() == 1 && s < kChaosBudgetS;
    return {ok, std::string(r.converged ? "converged" : "diverged") + " at " + std::to_string(r.settle_ms) +
                    " ms virtual, " + std::to_string(hashes.size()) + " distinct replica hash(es), " +
                    fmt("%.2f s wall", s)};
}

// --- 3 ---------------------------------------------------------------------

void collect_actors(const Json& j, std::set<std::string>& out) {
    if (j.is_object()) {
        if (auto it = j.find("stamp"); it != j.end() && it->is_object() && it->contains("actor")) {
            out.insert(it->at("actor").get<std::string>());
        }
        for (const auto& [k, v] : j.items()) collect_actors(v, out);
    } else if (j.is_array()) {
        for (const auto& v : j) collect_actors(v, out);
    }
}

Outcome presentation_isolation() {
    Simulation sim({}, true);
    const std::vector<std::string> ids{"teacher", "student-1", "student-2", "student-3"};
    for (std::size_t i = 0; i < ids.size(); ++i) {
        ClientConfig c;
        c.client_id = ids[i];
        c.session = "class";
        c.mode = SessionMode::Presentation;
        c.requested_role = i == 0 ? Role::Presenter : Role::Follower;
        sim.add_device(c, {30, 10, 0.05, 40u + i});
    }
    for (std::size_t i = 0; i < ids.size(); ++i) sim.connect(i);
    sim.run_until(1000);

    std::mt19937_64 rng(3);
    std::map<std::string, std::map<ArmId, double>> follower_edits;
    std::map<ArmId, double> presenter_edits;
    std::vector<int> who(70);
    for (int i = 0; i < 70; ++i) who[i] = i < 20 ? 0 : 1 + (i % 3);
    std::shuffle(who.begin(), who.end(), rng);
    for (int d : who) {
        const ArmId arm = tg::random_arm(rng);
        const double mm = tg::grid_mm(rng);
        sim.override_arm(d, arm, mm);
        (d == 0 ? presenter_edits : follower_edits[ids[d]])[arm] = mm;
        sim.run_until(sim.now() + 40 + static_cast<std::int64_t>(rng() % 120));
    }
    if (!sim.run_until_quiescent(sim.now() + 300000)) return {false, "no quiescence"};

    // Wire level: no stamp authored by a follower reaches anyone but that follower.
    long leaks = 0, inspected = 0;
    const std::set<std::string> followers(ids.begin() + 1, ids.end());
    for (const TraceEntry& t : sim.trace()) {
        if (t.from != "hub") continue;
        ++inspected;
        std::set<std::string> actors;
        collect_actors(decode_line(t.line).payload, actors);
        for (const auto& a : actors) {
            if (followers.contains(a) && a != t.to) ++leaks;
        }
    }

    const SessionRecord rec = *sim.hub().session("class");
    long missed = 0, wrong_local = 0;
    for (const auto& [arm, mm] : presenter_edits) {
        if (rec.topology.arm({"S1", arm}).target != mm) ++missed;
    }
    for (std::size_t i = 1; i < ids.size(); ++i) {
        const DeviceState& d = sim.device(i).device();
        const auto& edits = follower_edits[ids[i]];
        std::set<ArmId> edited;
        for (const auto& [arm, mm] : edits) edited.insert(arm);
        if (d.pinned != edited) ++wrong_local;
        for (ArmId arm : kAllArms) {
            const double mine = d.substructure.arm(arm).target;
            const double hub = rec.topology.arm({"S1", arm}).target;
            if (edited.contains(arm)) {
                if (mine != edits.at(arm)) ++wrong_local;
            } else if (mine != hub) {
                ++missed;  // a presenter value that never arrived
            }
        }
    }
    std::vector<Divergence> divs, local;
    compare_replicas(sim, SessionMode::Presentation, divs, local);
    for (const Divergence& l : local) {
        const auto& edits = follower_edits[l.device];
        auto arm = arm_from_key(l.arm);
        if (!arm || !edits.contains(*arm)) ++wrong_local;
    }
    const bool ok = leaks == 0 && missed == 0 && wrong_local == 0 && divs.empty();
    return {ok, std::to_string(inspected) + " hub deliveries inspected, " + std::to_string(leaks) +
                    " follower-origin leaks, " + std::to_string(missed) + " missed presenter values, " +
                    std::to_string(wrong_local) + " wrong local diffs, " + std::to_string(local.size()) +
                    " local diffs"};
}

// --- 4 ---------------------------------------------------------------------

double undo_error(SessionMode mode) {
    Simulation sim;
    const bool present = mode == SessionMode::Presentation;
    const std::vector<std::pair<std::string, std::string>> devs{{"a", "S1"}, {"b", present ? "S1" : "S2"}};
    for (std::size_t i = 0; i < devs.size(); ++i) {
        ClientConfig c;
        c.client_id = devs[i].first;
        c.substructure = devs[i].second;
        c.session = "undo";
        c.mode = mode;
        if (present) c.requested_role = i == 0 ? Role::Presenter : Role::Follower;
        sim.add_device(c, {40, 15, 0.05, 7u + i});
    }
    sim.connect(0);
    sim.connect(1);
    std::mt19937_64 rng(present ? 11 : 10);
    for (int i = 0; i < 12; ++i) {
        sim.override_arm(i % 2, tg::random_arm(rng), tg::grid_mm(rng));
        sim.run_until(sim.now() + 50);
    }
    if (!sim.run_until_quiescent(sim.now() + 120000)) return INFINITY;

    // The editor whose design is saved: a peer, or the follower's private copy.
    const std::size_t editor = present ? 1 : 0;
    std::map<std::string, SubstructureState> saved;
    for (std::size_t i = 0; i < devs.size(); ++i) saved[devs[i].second] = sim.device(i).device().substructure;
    if (present) saved["S1"] = sim.device(1).device().substructure;
    sim.save_snapshot(editor, "v1");
    if (!sim.run_until_quiescent(sim.now() + 120000)) return INFINITY;

    for (int i = 0; i < 50; ++i) {
        sim.override_arm(present ? 1 : i % 2, tg::random_arm(rng), tg::grid_mm(rng));
        sim.run_until(sim.now() + 20 + static_cast<std::int64_t>(rng() % 80));
    }
    sim.restore_snapshot(editor, std::nullopt, std::string("v1"));
    if (!sim.run_until_quiescent(sim.now() + 300000)) return INFINITY;

    double worst = 0.0;
    const std::size_t first = present ? 1 : 0;
    for (std::size_t i = first; i < devs.size(); ++i) {
        const SubstructureState& now = sim.device(i).device().substructure;
        for (ArmId a : kAllArms) {
            worst = std::max(worst, std::abs(now.arm(a).extension - saved.at(now.id).arm(a).extension));
        }
    }
    return worst;
}

Outcome snapshot_undo() {
    const double collab = undo_error(SessionMode::Collaboration);
    const double present = undo_error(SessionMode::Presentation);
    return {collab <= kUndoTolMm && present <= kUndoTolMm,
            "max error " + fmt("%.6f mm", collab) + " (peers), " + fmt("%.6f mm", present) + " (follower)"};
}

// --- 5 ---------------------------------------------------------------------

std::optional<Errc> embed_error(const AssemblyTopology& t, const std::string& anchor) {
    try {
        embed_assembly(t, anchor);
    } catch (const Error& e) {
        return e.code();
    }
    return std::nullopt;
}

Outcome embedding_laws() {
    Stopwatch clock;
    std::mt19937_64 rng(5);
    long trees = 0, offset_bad = 0, path_bad = 0, cycles = 0, cycles_missed = 0, overlaps = 0, overlaps_missed = 0;
    for (; trees < 500; ++trees) {
        tg::Assembly g = tg::random_tree(rng, 10);
        const auto base = embed_assembly(g.topo, "B0");
        for (const Joint& j : g.topo.joints()) {
            const Point3& pa = base.positions.at(j.a.substructure);
            const Point3& pb = base.positions.at(j.b.substructure);
            const int axis = axis_of(j.a.arm);
            const double want = kBodyMm + g.ext(j.a.substructure, j.a.arm) + g.ext(j.b.substructure, j.b.arm);
            if (sign_of(j.a.arm) * (pb[axis] - pa[axis]) != want) ++offset_bad;
        }
        for (const auto& [id, p] : g.oracle) {
            if (base.positions.at(id) != p) ++offset_bad;
        }

        // Five traversals: random anchor and a random relabelling, which changes visit order.
        const auto ids = tg::ids_of(g);
        for (int k = 0; k < 5; ++k) {
            std::vector<std::string> shuffled = ids;
            std::shuffle(shuffled.begin(), shuffled.end(), rng);
            std::map<std::string, std::string> names, back;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                names[ids[i]] = "N" + shuffled[i];
                back["N" + shuffled[i]] = ids[i];
            }
            const std::string anchor = tg::pick(rng, ids);
            const auto e = embed_assembly(tg::relabel(g.topo, names), names.at(anchor), g.oracle.at(anchor));
            for (const auto& [id, p] : e.positions) {
                const Point3& want = g.oracle.at(back.at(id));
                for (int i = 0; i < 3; ++i) {
                    if (std::abs(p[i] - want[i]) > kGeomEpsMm) ++path_bad;
                }
            }
        }

        tg::Assembly ring = g;
        if (tg::add_square(ring, rng, false)) {
            ++cycles;
            if (embed_error(ring.topo, tg::pick(rng, tg::ids_of(ring))) != Errc::InconsistentCycle) ++cycles_missed;
        }
        tg::Assembly spiral = g;
        if (tg::add_spiral_overlap(spiral, rng)) {
            ++overlaps;
            if (embed_error(spiral.topo, "B0") != Errc::BodyCollision) ++overlaps_missed;
        }
    }
    const double s = clock.seconds();
    const bool ok = offset_bad == 0 && path_bad == 0 && cycles_missed == 0 && overlaps_missed == 0 && cycles > 250 &&
                    overlaps > 400 && s < kEmbedBudgetS;
    return {ok, std::to_string(trees) + " trees, " + std::to_string(offset_bad + path_bad) + " geometry errors, " +
                    std::to_string(cycles - cycles_missed) + "/" + std::to_string(cycles) + " bad cycles caught, " +
                    std::to_string(overlaps - overlaps_missed) + "/" + std::to_string(overlaps) +
                    " overlaps caught, " + fmt("%.2f s", s)};
}

// --- 6 ---------------------------------------------------------------------

Outcome actuation_bounds() {
    const ActuationParams p{};
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> wild(-50.0, 200.0);
    long runs = 0, motion_bad = 0, range_bad = 0, settle_bad = 0, ticks_total = 0;
    for (; runs < 10000; ++runs) {
        DeviceState d = make_device("dev", "S1");
        d.connected = rng() % 2;
        std::uint64_t remote_lamport = 1;
        const int ops = 20 + static_cast<int>(rng() % 60);
        for (int op = 0; op < ops; ++op) {
            switch (rng() % 3) {
                case 0: {
                    const DeviceState before = d;
                    d = tick(d, p);
                    ++ticks_total;
                    for (ArmId a : kAllArms) {
                        if (std::abs(d.substructure.arm(a).extension - before.substructure.arm(a).extension) >
                            kMotionBoundMm) {
                            ++motion_bad;
                        }
                    }
                    break;
                }
                case 1:
                    d = apply_manual_override(d, tg::random_arm(rng), wild(rng)).first;
                    break;
                default:
                    remote_lamport += rng() % 3;
                    d = on_remote_update(d, ArmUpdate{"S1", tg::random_arm(rng), tg::grid_mm(rng), false, "",
                                                      {remote_lamport, "far"}});
                    break;
            }
            for (const ArmState& a : d.substructure.arms) {
                if (!(a.extension >= 0.0 && a.extension <= kMaxExtensionMm)) ++range_bad;
            }
        }
        // Fixed targets from here on.
        double worst_gap = 0.0;
        for (const ArmState& a : d.substructure.arms) worst_gap = std::max(worst_gap, std::abs(a.target - a.extension));
        const auto bound = static_cast<long>(std::ceil(worst_gap / p.step_mm()));
        long n = 0;
        while (!settled(d, 0.0) && n <= bound) {
            d = tick(d, p);
            ++n;
        }
        if (n > bound || !(tick(d, p) == d)) ++settle_bad;
    }
    const bool ok = motion_bad == 0 && range_bad == 0 && settle_bad == 0;
    return {ok, std::to_string(runs) + " interleavings, " + std::to_string(ticks_total) + " ticks, " +
                    std::to_string(motion_bad) + " over-speed, " + std::to_string(range_bad) + " out of range, " +
                    std::to_string(settle_bad) + " slow settles"};
}

// --- 7 ---------------------------------------------------------------------

Outcome shape_recovery() {
    auto make = [](Simulation& sim) {
        for (const char* id : {"a", "b", "c"}) {
            ClientConfig c;
            c.client_id = id;
            c.session = "recover";
            sim.add_device(c, {35, 10, 0.05, static_cast<std::uint64_t>(id[0])});
        }
        for (std::size_t i = 0; i < 3; ++i) sim.connect(i);
        return sim.run_until_quiescent(60000).has_value();
    };
    std::mt19937_64 rng(7);

    // Part one: 20 remote updates while c is away.
    Simulation one;
    if (!make(one)) return {false, "setup did not settle"};
    one.disconnect(2);
    for (int i = 0; i < 20; ++i) {
        one.override_arm(i % 2, tg::random_arm(rng), tg::grid_mm(rng));
        one.run_until(one.now() + 75);
    }
    one.connect(2);
    const bool q1 = one.run_until_quiescent(one.now() + 120000).has_value();
    const SessionRecord rec1 = *one.hub().session("recover");
    const AssemblyTopology authority = replay_log(rec1);
    const bool equal1 = q1 && one.device(2).device().substructure == authority.at("S1");

    // Part two: one offline override must win after recovery.
    Simulation two;
    if (!make(two)) return {false, "setup did not settle"};
    two.disconnect(2);
    two.override_arm(2, ArmId::NegZ, 47.25);
    two.run_until(two.now() + 3000);
    two.connect(2);
    const bool q2 = two.run_until_quiescent(two.now() + 120000).has_value();
    const SessionRecord rec2 = *two.hub().session("recover");
    std::set<std::string> hashes;
    bool adopted = rec2.topology.arm({"S1", ArmId::NegZ}).target == 47.25;
    for (std::size_t i = 0; i < 3; ++i) {
        hashes.insert(hash_of(two.device(i).device().substructure));
        adopted = adopted && two.device(i).device().substructure.arm(ArmId::NegZ).extension == 47.25;
    }
    hashes.insert(hash_of(rec2.topology.at("S1")));
    const bool ok = equal1 && q2 && adopted && hashes.size() == 1;
    return {ok, std::string(equal1 ? "recovered device equals hub replay" : "recovered device differs from hub") +
                    ", offline override " + (adopted ? "adopted" : "lost") + ", " + std::to_string(hashes.size()) +
                    " distinct hash(es)"};
}

// --- 8 ---------------------------------------------------------------------

std::optional<std::string> capture(const std::string& command) {
    FILE* pipe = ::popen(command.c_str(), "r");
    if (!pipe) return std::nullopt;
    std::string out;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
    if (::pclose(pipe) != 0) return std::nullopt;
    return out;
}

Outcome cli_determinism() {
    const std::string cmd = std::string("'") + TELESHIFT_SHIFTCTL + "' run '" + TELESHIFT_SOURCE_DIR +
                            "/scenarios/collab_mouse.json'";
    const auto first = capture(cmd);
    const auto second = capture(cmd);
    if (!first || !second) return {false, "shiftctl run failed"};
    return {*first == *second && !first->empty(),
            std::to_string(first->size()) + " bytes, " + (*first == *second ? "identical" : "different") +
                " (report hash " + sha256_hex(*first).substr(0, 12) + ")"};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"lww-permutations", lww_permutations},     {"chaos-convergence", chaos_convergence},
        {"presentation-isolation", presentation_isolation}, {"snapshot-undo", snapshot_undo},
        {"embedding-laws", embedding_laws},         {"actuation-bounds", actuation_bounds},
        {"shape-recovery", shape_recovery},         {"cli-determinism", cli_determinism},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::cout << "AC" << i + 1 << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    return failures;
}
