#include "teleshift/shape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <deque>
#include <utility>

#include "teleshift/error.hpp"

namespace teleshift {

namespace {

constexpr std::array<std::string_view, kArmCount> kArmKeys{"+x", "-x", "+y", "-y", "+z", "-z"};

bool in_travel(double mm) { return std::isfinite(mm) && mm >= 0.0 && mm <= kMaxExtensionMm; }

}  // namespace

std::string_view arm_key(ArmId arm) { return kArmKeys[index_of(arm)]; }

std::optional<ArmId> arm_from_key(std::string_view key) {
    for (ArmId arm : kAllArms) {
        if (kArmKeys[index_of(arm)] == key) return arm;
    }
    return std::nullopt;
}

double clamp_extension(double mm) {
    if (!std::isfinite(mm)) throw Error(Errc::NonFinite, "extension must be finite");
    return std::clamp(mm, 0.0, kMaxExtensionMm);
}

bool is_valid_id(std::string_view id) noexcept {
    if (id.empty() || id.size() > kMaxIdLength) return false;
    return std::all_of(id.begin(), id.end(), [](char c) { return c >= 0x20 && c < 0x7f; });
}

SubstructureState make_substructure(std::string id) {
    SubstructureState s;
    s.id = std::move(id);
    return s;
}

Joint make_joint(ArmRef a, ArmRef b) {
    if (b < a) std::swap(a, b);
    return Joint{std::move(a), std::move(b)};
}

const SubstructureState& AssemblyTopology::at(std::string_view id) const {
    auto it = substructures.find(id);
    if (it == substructures.end()) {
        throw Error(Errc::UnknownSubstructure, "no substructure '" + std::string(id) + "'",
                    {std::string(id)});
    }
    return it->second;
}

SubstructureState& AssemblyTopology::at(std::string_view id) {
    return const_cast<SubstructureState&>(std::as_const(*this).at(id));
}

bool AssemblyTopology::add_substructure(const std::string& id) {
    return substructures.try_emplace(id, make_substructure(id)).second;
}

std::vector<Joint> AssemblyTopology::joints() const {
    std::vector<Joint> out;
    for (const auto& [id, sub] : substructures) {
        for (ArmId a : kAllArms) {
            const ArmState& arm = sub.arm(a);
            if (!arm.jointed || arm.mate <= id) continue;  // emit each pair once, from the smaller id
            auto mate = substructures.find(arm.mate);
            if (mate == substructures.end()) continue;
            const ArmState& other = mate->second.arm(opposite_arm(a));
            if (other.jointed && other.mate == id) {
                out.push_back(make_joint({id, a}, {arm.mate, opposite_arm(a)}));
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<std::string> first_violation(const AssemblyTopology& topology) {
    for (const auto& [key, sub] : topology.substructures) {
        if (!is_valid_id(sub.id)) return "invalid substructure id '" + sub.id + "'";
        if (key != sub.id) return "substructure keyed as '" + key + "' has id '" + sub.id + "'";
        for (ArmId a : kAllArms) {
            const ArmState& arm = sub.arm(a);
            const std::string where = sub.id + " " + std::string(arm_key(a));
            if (!in_travel(arm.extension)) return "extension out of range at " + where;
            if (!in_travel(arm.target)) return "target out of range at " + where;
            if (arm.mate == sub.id) return "arm mated to its own substructure at " + where;
            if (!arm.mate.empty() && !is_valid_id(arm.mate)) return "invalid mate at " + where;
            if (arm.stamp.lamport > 0 && !is_valid_id(arm.stamp.actor)) {
                return "invalid stamp actor at " + where;
            }
        }
    }
    return std::nullopt;
}

AssemblyTopology add_joint(AssemblyTopology topology, const ArmRef& a, const ArmRef& b) {
    for (const ArmRef* ref : {&a, &b}) {
        if (!topology.contains(ref->substructure)) {
            throw Error(Errc::UnknownSubstructure, "no substructure '" + ref->substructure + "'",
                        {ref->substructure});
        }
    }
    if (a.substructure == b.substructure) {
        throw Error(Errc::NonOpposingArms, "a joint needs two different substructures",
                    {a.substructure, b.substructure});
    }
    if (opposite_arm(a.arm) != b.arm) {
        throw Error(Errc::NonOpposingArms,
                    std::string(arm_key(a.arm)) + " cannot mate with " + std::string(arm_key(b.arm)),
                    {a.substructure, b.substructure});
    }
    for (const ArmRef* ref : {&a, &b}) {
        if (topology.arm(*ref).jointed) {
            throw Error(Errc::ArmOccupied,
                        ref->substructure + " " + std::string(arm_key(ref->arm)) + " is already jointed",
                        {ref->substructure});
        }
    }
    ArmState& arm_a = topology.arm(a);
    ArmState& arm_b = topology.arm(b);
    arm_a.jointed = true;
    arm_a.mate = b.substructure;
    arm_b.jointed = true;
    arm_b.mate = a.substructure;
    return topology;
}

Embedding embed_assembly(const AssemblyTopology& topology, std::string_view anchor, Point3 anchor_pos) {
    if (!topology.contains(anchor)) {
        throw Error(Errc::UnknownAnchor, "anchor '" + std::string(anchor) + "' is not in the topology",
                    {std::string(anchor)});
    }

    struct Edge {
        ArmId arm;
        std::string to;
    };
    std::map<std::string, std::vector<Edge>, std::less<>> adjacency;
    for (const Joint& j : topology.joints()) {
        adjacency[j.a.substructure].push_back({j.a.arm, j.b.substructure});
        adjacency[j.b.substructure].push_back({j.b.arm, j.a.substructure});
    }
    for (auto& [id, edges] : adjacency) {
        std::sort(edges.begin(), edges.end(),
                  [](const Edge& l, const Edge& r) { return index_of(l.arm) < index_of(r.arm); });
    }

    Embedding out;
    out.positions.emplace(std::string(anchor), anchor_pos);
    std::deque<std::string> frontier{std::string(anchor)};
    while (!frontier.empty()) {
        const std::string from = std::move(frontier.front());
        frontier.pop_front();
        auto edges = adjacency.find(from);
        if (edges == adjacency.end()) continue;
        const Point3 origin = out.positions.at(from);
        const SubstructureState& body = topology.at(from);
        for (const Edge& e : edges->second) {
            const double reach = kBodyMm + body.arm(e.arm).extension +
                                 topology.at(e.to).arm(opposite_arm(e.arm)).extension;
            Point3 implied = origin;
            implied[axis_of(e.arm)] += sign_of(e.arm) * reach;

            auto placed = out.positions.find(e.to);
            if (placed == out.positions.end()) {
                out.positions.emplace(e.to, implied);
                frontier.push_back(e.to);
                continue;
            }
            double discrepancy = 0.0;
            for (int axis = 0; axis < 3; ++axis) {
                discrepancy = std::max(discrepancy, std::abs(implied[axis] - placed->second[axis]));
            }
            if (discrepancy > kGeomEpsMm) {
                throw Error(Errc::InconsistentCycle,
                            "cycle closes " + std::to_string(discrepancy) + " mm away at '" + e.to + "'",
                            {e.to}, discrepancy);
            }
        }
    }

    for (auto i = out.positions.begin(); i != out.positions.end(); ++i) {
        for (auto j = std::next(i); j != out.positions.end(); ++j) {
            double overlap = kBodyMm;
            for (int axis = 0; axis < 3; ++axis) {
                overlap = std::min(overlap, kBodyMm - std::abs(i->second[axis] - j->second[axis]));
            }
            if (overlap > kGeomEpsMm) {
                throw Error(Errc::BodyCollision,
                            "'" + i->first + "' and '" + j->first + "' overlap by " +
                                std::to_string(overlap) + " mm",
                            {i->first, j->first}, overlap);
            }
        }
    }
    return out;
}

Snapshot::Snapshot(std::string snapshot_id, std::string label, std::int64_t created_at,
                   AssemblyTopology topology)
    : snapshot_id_(std::move(snapshot_id)),
      label_(std::move(label)),
      created_at_(created_at),
      topology_(std::move(topology)) {}

Snapshot snapshot_of(const AssemblyTopology& topology, std::string label, std::int64_t now_ms,
                     std::string snapshot_id) {
    return Snapshot(std::move(snapshot_id), std::move(label), now_ms, topology);
}

Snapshot snapshot_of(const AssemblyTopology& topology, std::string label, std::int64_t now_ms) {
    static std::atomic<std::uint64_t> counter{0};
    std::string id = "snap-" + std::to_string(now_ms) + "-" + std::to_string(++counter);
    return snapshot_of(topology, std::move(label), now_ms, std::move(id));
}

RestoreResult restore_targets(const AssemblyTopology& live, const Snapshot& snapshot,
                              const LamportClock& clock) {
    for (const auto& [id, sub] : snapshot.topology().substructures) {
        if (!live.contains(id)) {
            throw Error(Errc::UnknownSubstructure,
                        "snapshot names '" + id + "' which is not in the live assembly", {id});
        }
    }

    RestoreResult result{live, clock, {}};
    auto restamp = [&](ArmState& arm, ArmRef ref) {
        auto [next_clock, stamp] = stamp_next(result.clock);
        result.clock = std::move(next_clock);
        arm.stamp = std::move(stamp);
        result.touched.push_back(std::move(ref));
    };

    for (const auto& [id, saved] : snapshot.topology().substructures) {
        SubstructureState& target = result.topology.at(id);
        for (ArmId a : kAllArms) {
            const ArmState& from = saved.arm(a);
            ArmState& arm = target.arm(a);
            arm.target = clamp_extension(from.extension);
            arm.jointed = from.jointed;
            arm.mate = from.mate;
            restamp(arm, {id, a});
        }
    }
    for (auto& [id, sub] : result.topology.substructures) {
        if (snapshot.topology().contains(id)) continue;
        for (ArmId a : kAllArms) {
            ArmState& arm = sub.arm(a);
            if (!arm.jointed) continue;
            arm.jointed = false;
            arm.mate.clear();
            restamp(arm, {id, a});
        }
    }
    return result;
}

}  // namespace teleshift
