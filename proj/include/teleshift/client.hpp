#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "teleshift/device.hpp"
#include "teleshift/wire.hpp"

namespace teleshift {

struct ClientConfig {
    std::string client_id;
    std::string session;
    SessionMode mode = SessionMode::Collaboration;
    std::optional<Role> requested_role;
    std::string substructure = "S1";
    std::int64_t sync_interval_ms = 1000;
};

enum class LinkState { Offline, Handshaking, Recovering, Online, Failed };

std::string_view to_string(LinkState state);

/// Hub session protocol for one simulated substructure, independent of transport.
///
/// Every method returns the envelopes to put on the wire, in order. Lost traffic
/// is repaired by anti-entropy: the hub's per-connection seq exposes gaps, a
/// FULL_STATE reply subsumes every envelope sent before it, and local edits stay
/// in an outbox until a FULL_STATE shows the hub holding them.
class DeviceClient {
public:
    explicit DeviceClient(ClientConfig config);

    std::vector<Envelope> connect(std::int64_t now_ms);
    void disconnect();

    std::vector<Envelope> receive(const Envelope& envelope, std::int64_t now_ms);
    std::vector<Envelope> poll(std::int64_t now_ms);

    std::vector<Envelope> override_arm(ArmId arm, double mm);
    std::vector<Envelope> join(const std::string& other, ArmId arm);
    std::vector<Envelope> save_snapshot(const std::string& label);
    std::vector<Envelope> restore_snapshot(const std::optional<std::string>& id,
                                           const std::optional<std::string>& label);
    /// Followers: drop the private design and follow the presenter again.
    std::vector<Envelope> follow_presenter();

    void tick(const ActuationParams& params);

    const ClientConfig& config() const noexcept { return config_; }
    const DeviceState& device() const noexcept { return device_; }
    LinkState link() const noexcept { return link_; }
    std::optional<Errc> failure() const noexcept { return failure_; }
    const std::optional<Json>& last_error() const noexcept { return last_error_; }
    const std::optional<Json>& last_snapshot_reply() const noexcept { return last_snapshot_reply_; }
    std::uint64_t covered_seq() const noexcept { return covered_; }
    std::size_t outbox_size() const noexcept { return outbox_.size(); }

    /// Online with nothing left to publish and no known gap in hub traffic.
    bool idle() const noexcept;

private:
    Envelope make(Kind kind, Json payload = Json::object());
    std::vector<Envelope> publish(const ArmUpdate& update);
    void note_hub_seq(std::uint64_t seq);
    void cover_through(std::uint64_t seq);
    std::vector<Envelope> apply_full_state(const Json& payload, std::uint64_t seq);
    std::vector<Envelope> replay_pending();

    ClientConfig config_;
    DeviceState device_;
    LinkState link_ = LinkState::Offline;
    std::optional<Errc> failure_;
    std::optional<Json> last_error_;
    std::optional<Json> last_snapshot_reply_;

    std::uint64_t next_seq_ = 1;
    std::uint64_t covered_ = 0;      // every hub seq <= covered_ is received or subsumed
    std::uint64_t highest_ = 0;      // highest hub seq known to exist
    std::set<std::uint64_t> received_above_;
    bool state_wanted_ = false;
    bool replace_next_state_ = false;

    std::map<std::pair<ArmId, VersionStamp>, ArmUpdate> outbox_;
    int hello_attempt_ = 0;
    std::int64_t next_timer_ms_ = 0;
};

}  // namespace teleshift
