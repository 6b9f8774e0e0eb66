#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "teleshift/session.hpp"
#include "teleshift/wire.hpp"

namespace teleshift {

using ConnectionId = std::uint64_t;

struct HubOptions {
    std::optional<std::filesystem::path> data_dir;  // persistence off when unset
    int max_missed_pongs = 3;
};

/// Transport-independent hub: owns every session, decides replies and fan-out.
///
/// Session state is serialized per session; distinct sessions run in parallel.
/// Outbound envelopes are handed to the emit callback with their per-connection
/// seq already assigned, and for any one connection the callback sees them in
/// seq order.
class Hub {
public:
    using Emit = std::function<void(ConnectionId, const Envelope&)>;

    struct Outbound {
        ConnectionId to;
        Envelope envelope;
    };

    explicit Hub(HubOptions options = {});

    /// Loads every session file under data_dir. Throws CorruptFile for a bad file.
    std::size_t load_sessions();

    ConnectionId open_connection();
    void close_connection(ConnectionId conn);

    void handle(ConnectionId conn, const Envelope& envelope, std::int64_t now_ms, const Emit& emit);
    std::vector<Outbound> handle(ConnectionId conn, const Envelope& envelope, std::int64_t now_ms);

    /// Decodes and handles one wire line; undecodable lines produce an ERROR reply.
    void handle_line(ConnectionId conn, std::string_view line, std::int64_t now_ms, const Emit& emit);
    std::vector<Outbound> handle_line(ConnectionId conn, std::string_view line, std::int64_t now_ms);

    /// PINGs every open connection. Returns connections that have now missed
    /// max_missed_pongs PONGs; the caller closes them.
    std::vector<ConnectionId> heartbeat(const Emit& emit);

    std::optional<SessionRecord> session(std::string_view id) const;
    std::vector<std::string> session_ids() const;
    std::vector<std::string> connected_members(std::string_view session) const;
    std::uint64_t last_sent_seq(ConnectionId conn) const;
    bool is_open(ConnectionId conn) const;

private:
    struct Connection {
        std::optional<std::uint64_t> last_in;
        std::uint64_t last_out = 0;
        std::string session;
        std::string client;
        bool ping_outstanding = false;
        int missed_pongs = 0;
    };

    struct Slot {
        std::mutex mu;
        SessionRecord record;
        std::map<std::string, ConnectionId> live;
        std::set<std::string> ephemeral;
    };

    struct Context;

    void send(ConnectionId conn, Envelope envelope, const Emit& emit);
    void on_hello(ConnectionId conn, const Envelope& e, const Emit& emit);
    void dispatch(Context& ctx, const Envelope& e, std::int64_t now_ms);
    void on_update(Context& ctx, const Envelope& e);
    void on_full_state_request(Context& ctx, const Envelope& e);
    void on_snapshot_save(Context& ctx, const Envelope& e, std::int64_t now_ms);
    void on_snapshot_list(Context& ctx);
    void on_snapshot_restore(Context& ctx, const Envelope& e);
    void on_mode_set(Context& ctx, const Envelope& e);
    void persist(const Slot& slot) const;
    std::shared_ptr<Slot> find_slot(std::string_view id) const;

    HubOptions options_;
    mutable std::mutex sessions_mu_;
    std::map<std::string, std::shared_ptr<Slot>, std::less<>> sessions_;
    mutable std::mutex conns_mu_;
    std::map<ConnectionId, Connection> conns_;
    ConnectionId next_conn_ = 1;
};

/// Session ids double as file names: valid ids without path separators or dot names.
bool is_valid_session_id(std::string_view id) noexcept;

}  // namespace teleshift
