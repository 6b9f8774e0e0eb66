#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "teleshift/hub.hpp"

namespace teleshift {

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 7070;

    std::string str() const { return host + ":" + std::to_string(port); }
};

/// "host:port", ":port" or "port". Throws Error(BadScenario) on junk.
Endpoint parse_endpoint(std::string_view text);

struct ServerOptions {
    Endpoint listen;
    std::int64_t heartbeat_ms = 5000;
    HubOptions hub;
};

/// TCP front end for Hub. Each accepted socket speaks newline-delimited JSON,
/// unless its first bytes are an HTTP upgrade request, in which case the same
/// envelopes travel one per WebSocket text frame.
class HubServer {
public:
    explicit HubServer(ServerOptions options);
    ~HubServer();

    HubServer(const HubServer&) = delete;
    HubServer& operator=(const HubServer&) = delete;

    /// Binds and starts serving in background threads. Throws AddressInUse.
    void start();
    void stop();

    /// Bound address; the real port when the requested one was 0.
    Endpoint endpoint() const { return bound_; }
    Hub& hub() noexcept { return hub_; }

private:
    struct Conn;

    void accept_loop();
    void heartbeat_loop();
    void read_loop(const std::shared_ptr<Conn>& conn);
    void write_loop(const std::shared_ptr<Conn>& conn);
    void enqueue(ConnectionId id, const Envelope& envelope);
    void reap();

    ServerOptions options_;
    Hub hub_;
    Endpoint bound_;
    int listen_fd_ = -1;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::thread heartbeat_;
    std::mutex hb_mu_;
    std::condition_variable hb_cv_;
    mutable std::mutex conns_mu_;
    std::map<ConnectionId, std::shared_ptr<Conn>> conns_;
};

/// WebSocket handshake accept token for a client's Sec-WebSocket-Key.
std::string websocket_accept(std::string_view key);

/// Encodes one unmasked server-to-client frame.
std::string websocket_frame(std::string_view payload, std::uint8_t opcode = 0x1);

/// Blocking newline-delimited client connection, used by the CLI.
class LineClient {
public:
    /// Throws HubUnreachable when the connection cannot be made.
    static LineClient connect(const Endpoint& endpoint, int timeout_ms = 3000);

    LineClient(LineClient&& other) noexcept;
    LineClient& operator=(LineClient&& other) noexcept;
    ~LineClient();

    void send_line(std::string_view line);
    /// Next line without its newline, or nullopt on timeout. Throws HubUnreachable on EOF.
    std::optional<std::string> read_line(int timeout_ms);
    void close();

private:
    explicit LineClient(int fd) : fd_(fd) {}
    int fd_ = -1;
    std::string buffer_;
};

}  // namespace teleshift
