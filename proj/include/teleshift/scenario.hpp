#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "teleshift/client.hpp"
#include "teleshift/codec.hpp"
#include "teleshift/device.hpp"
#include "teleshift/hub.hpp"

namespace teleshift {

/// One wire line as it reached its destination.
struct TraceEntry {
    std::int64_t at_ms = 0;
    std::string from;
    std::string to;
    std::string line;
};

/// Hub plus simulated devices on a virtual millisecond clock.
///
/// Every link is a pair of seeded ImpairedLinks (one per direction). Links drop
/// but never reorder: a message is never delivered before an earlier one on the
/// same direction. Within one millisecond the order is: deliveries, then (on tick
/// boundaries) actuation ticks and client timers.
class Simulation {
public:
    Simulation(ActuationParams actuation = {}, bool keep_trace = false);

    std::size_t add_device(ClientConfig config, NetProfile net);

    void connect(std::size_t device);
    void disconnect(std::size_t device);
    void override_arm(std::size_t device, ArmId arm, double mm);
    void join(std::size_t device, const std::string& other, ArmId arm);
    void save_snapshot(std::size_t device, const std::string& label);
    void restore_snapshot(std::size_t device, const std::optional<std::string>& id,
                          const std::optional<std::string>& label);
    void follow_presenter(std::size_t device);

    /// Processes everything up to and including `t_ms`.
    void run_until(std::int64_t t_ms);
    /// Steps until quiescent; returns the time reached, or nullopt at `limit_ms`.
    std::optional<std::int64_t> run_until_quiescent(std::int64_t limit_ms);

    /// Nothing in flight, every device that should be online is idle and has seen
    /// all hub traffic, and every arm is settled.
    bool quiescent() const;

    std::int64_t now() const noexcept { return now_; }
    std::size_t in_flight() const noexcept { return queue_.size(); }
    std::size_t device_count() const noexcept { return devices_.size(); }
    const DeviceClient& device(std::size_t i) const { return devices_.at(i).client; }
    std::size_t index_of(const std::string& client_id) const;
    bool wants_online(std::size_t i) const { return devices_.at(i).wants_online; }
    const Hub& hub() const noexcept { return hub_; }
    Hub& hub() noexcept { return hub_; }
    const ActuationParams& actuation() const noexcept { return actuation_; }
    const std::vector<TraceEntry>& trace() const noexcept { return trace_; }

private:
    struct Node {
        DeviceClient client;
        ImpairedLink up;
        ImpairedLink down;
        std::optional<ConnectionId> conn;
        std::int64_t last_up_ms = 0;
        std::int64_t last_down_ms = 0;
        bool wants_online = false;
    };

    struct InFlight {
        std::int64_t at_ms;
        std::uint64_t order;
        bool to_hub;
        std::size_t device;
        ConnectionId conn;
        std::string line;

        bool operator>(const InFlight& o) const {
            return at_ms != o.at_ms ? at_ms > o.at_ms : order > o.order;
        }
    };

    void send_up(std::size_t device, const std::vector<Envelope>& envelopes);
    void send_down(std::size_t device, const Envelope& envelope);
    void deliver(const InFlight& m);
    void step_to(std::int64_t t_ms);

    ActuationParams actuation_;
    bool keep_trace_;
    Hub hub_;
    std::vector<Node> devices_;
    std::map<ConnectionId, std::size_t> by_conn_;
    std::priority_queue<InFlight, std::vector<InFlight>, std::greater<>> queue_;
    std::uint64_t order_ = 0;
    std::int64_t now_ = 0;
    std::int64_t next_tick_ms_ = 0;
    std::vector<TraceEntry> trace_;
};

struct ScenarioAction {
    enum class Type { Override, Disconnect, Reconnect, Join, SnapshotSave, SnapshotRestore, Follow };
    Type type = Type::Override;
    ArmId arm = ArmId::PosX;
    double mm = 0.0;
    std::string other;
    std::string label;
    std::optional<std::string> snapshot_id;
};

struct ScenarioEvent {
    std::int64_t at_ms = 0;
    std::string device;
    ScenarioAction action;
};

struct ScenarioDevice {
    std::string id;
    std::string substructure;
    std::optional<Role> role;
    NetProfile net;
};

struct Scenario {
    std::string session = "scenario";
    SessionMode mode = SessionMode::Collaboration;
    ActuationParams actuation;
    std::int64_t sync_interval_ms = 1000;
    std::int64_t timeout_ms = 600000;
    std::vector<ScenarioDevice> devices;
    std::vector<ScenarioEvent> events;
};

/// Throws BadScenario with a line number for syntax errors or a field path otherwise.
Scenario parse_scenario_text(std::string_view text);
Scenario parse_scenario(const Json& j);
Scenario load_scenario(const std::filesystem::path& path);

struct Divergence {
    std::string device;
    std::string substructure;
    std::string arm;
    std::string field;
    Json expected;
    Json actual;
};

/// Follower differences from the presenter observed just before a restore.
struct Checkpoint {
    std::int64_t at_ms = 0;
    std::string device;
    std::vector<Divergence> local_diffs;
};

struct ScenarioReport {
    std::string session;
    std::string mode;
    bool converged = false;
    bool timed_out = false;
    std::int64_t settle_ms = 0;
    std::map<std::string, std::string> final_state_hash;
    std::vector<Divergence> divergences;
    std::vector<Divergence> local_diffs;
    std::vector<Checkpoint> checkpoints;
};

Json to_json(const Divergence& d);
Json to_json(const ScenarioReport& report);

/// Compares every replica with the hub. Collaboration: all must match. Presentation:
/// follower arms pinned by local edits are listed as local diffs instead.
void compare_replicas(const Simulation& sim, SessionMode mode, std::vector<Divergence>& divergences,
                      std::vector<Divergence>& local_diffs);

struct RunOptions {
    bool realtime = false;
    bool keep_trace = false;
};

struct ScenarioRun {
    ScenarioReport report;
    std::unique_ptr<Simulation> sim;
};

ScenarioRun run_scenario_full(const Scenario& scenario, RunOptions options = {});
ScenarioReport run_scenario(const Scenario& scenario, RunOptions options = {});

}  // namespace teleshift
