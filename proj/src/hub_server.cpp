#include "teleshift/hub_server.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>

#include "teleshift/error.hpp"

namespace teleshift {

namespace {

std::int64_t wall_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
}

bool send_all(int fd, std::string_view bytes) {
    while (!bytes.empty()) {
        ssize_t n = ::send(fd, bytes.data(), bytes.size(), MSG_NOSIGNAL);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        bytes.remove_prefix(static_cast<std::size_t>(n));
    }
    return true;
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return std::string(s);
}

constexpr std::size_t kMaxLine = 1 << 20;

}  // namespace

Endpoint parse_endpoint(std::string_view text) {
    Endpoint ep;
    std::string_view port_text = text;
    if (auto colon = text.rfind(':'); colon != std::string_view::npos) {
        if (colon > 0) ep.host = std::string(text.substr(0, colon));
        port_text = text.substr(colon + 1);
    }
    if (port_text.empty() || port_text.size() > 5 ||
        !std::all_of(port_text.begin(), port_text.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        throw Error(Errc::BadScenario, "bad address '" + std::string(text) + "', expected host:port");
    }
    const long port = std::stol(std::string(port_text));
    if (port > 65535) throw Error(Errc::BadScenario, "port out of range in '" + std::string(text) + "'");
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
}

std::string websocket_accept(std::string_view key) {
    const std::string input = std::string(key) + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(input.data(), input.size(), digest, &len, EVP_sha1(), nullptr);
    std::string out(4 * ((len + 2) / 3) + 1, '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), digest, static_cast<int>(len));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string websocket_frame(std::string_view payload, std::uint8_t opcode) {
    std::string f;
    f.push_back(static_cast<char>(0x80 | opcode));
    const std::uint64_t n = payload.size();
    if (n < 126) {
        f.push_back(static_cast<char>(n));
    } else if (n <= 0xFFFF) {
        f.push_back(126);
        f.push_back(static_cast<char>(n >> 8));
        f.push_back(static_cast<char>(n & 0xFF));
    } else {
        f.push_back(127);
        for (int shift = 56; shift >= 0; shift -= 8) f.push_back(static_cast<char>((n >> shift) & 0xFF));
    }
    f.append(payload);
    return f;
}

struct HubServer::Conn {
    ConnectionId id = 0;
    int fd = -1;
    bool websocket = false;
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> outbox;  // already framed for the transport
    bool closed = false;
    std::atomic<bool> done{false};
    std::thread reader;
    std::thread writer;

    void push(std::string bytes) {
        {
            std::lock_guard lock(mu);
            if (closed) return;
            outbox.push_back(std::move(bytes));
        }
        cv.notify_one();
    }

    void close() {
        {
            std::lock_guard lock(mu);
            closed = true;
        }
        cv.notify_all();
        ::shutdown(fd, SHUT_RDWR);
    }
};

HubServer::HubServer(ServerOptions options) : options_(std::move(options)), hub_(options_.hub) {}

HubServer::~HubServer() { stop(); }

void HubServer::start() {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(options_.listen.port);
    if (getaddrinfo(options_.listen.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
        throw Error(Errc::AddressInUse, "cannot resolve " + options_.listen.str());
    }
    listen_fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(listen_fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(listen_fd_, 64) != 0) {
        const std::string why = std::strerror(errno);
        freeaddrinfo(res);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw Error(Errc::AddressInUse, "cannot listen on " + options_.listen.str() + ": " + why,
                    {options_.listen.str()});
    }
    freeaddrinfo(res);

    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_ = options_.listen;
    bound_.port = ntohs(addr.sin_port);

    acceptor_ = std::thread([this] { accept_loop(); });
    if (options_.heartbeat_ms > 0) heartbeat_ = std::thread([this] { heartbeat_loop(); });
}

void HubServer::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    hb_cv_.notify_all();
    if (acceptor_.joinable()) acceptor_.join();
    if (heartbeat_.joinable()) heartbeat_.join();
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;

    std::map<ConnectionId, std::shared_ptr<Conn>> conns;
    {
        std::lock_guard lock(conns_mu_);
        conns.swap(conns_);
    }
    for (auto& [id, c] : conns) c->close();
    for (auto& [id, c] : conns) {
        if (c->reader.joinable()) c->reader.join();
        if (c->writer.joinable()) c->writer.join();
        ::close(c->fd);
    }
}

void HubServer::reap() {
    std::vector<std::shared_ptr<Conn>> finished;
    {
        std::lock_guard lock(conns_mu_);
        for (auto it = conns_.begin(); it != conns_.end();) {
            if (it->second->done) {
                finished.push_back(it->second);
                it = conns_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& c : finished) {
        c->close();
        if (c->reader.joinable()) c->reader.join();
        if (c->writer.joinable()) c->writer.join();
        ::close(c->fd);
    }
}

void HubServer::accept_loop() {
    while (!stopping_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR || errno == ECONNABORTED) continue;
            break;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        reap();
        auto conn = std::make_shared<Conn>();
        conn->fd = fd;
        conn->id = hub_.open_connection();
        {
            std::lock_guard lock(conns_mu_);
            conns_[conn->id] = conn;
        }
        conn->writer = std::thread([this, conn] { write_loop(conn); });
        conn->reader = std::thread([this, conn] { read_loop(conn); });
    }
}

void HubServer::heartbeat_loop() {
    std::unique_lock lock(hb_mu_);
    while (!stopping_) {
        hb_cv_.wait_for(lock, std::chrono::milliseconds(options_.heartbeat_ms));
        if (stopping_) break;
        const auto dead = hub_.heartbeat([this](ConnectionId to, const Envelope& e) { enqueue(to, e); });
        for (ConnectionId id : dead) {
            std::shared_ptr<Conn> c;
            {
                std::lock_guard conns_lock(conns_mu_);
                if (auto it = conns_.find(id); it != conns_.end()) c = it->second;
            }
            if (c) c->close();
        }
    }
}

void HubServer::enqueue(ConnectionId id, const Envelope& envelope) {
    std::shared_ptr<Conn> c;
    {
        std::lock_guard lock(conns_mu_);
        if (auto it = conns_.find(id); it != conns_.end()) c = it->second;
    }
    if (!c) return;
    std::string line = encode_line(envelope);
    if (c->websocket) {
        line.pop_back();
        c->push(websocket_frame(line));
    } else {
        c->push(std::move(line));
    }
}

void HubServer::write_loop(const std::shared_ptr<Conn>& c) {
    std::unique_lock lock(c->mu);
    while (true) {
        c->cv.wait(lock, [&] { return c->closed || !c->outbox.empty(); });
        if (c->outbox.empty()) break;
        std::string bytes = std::move(c->outbox.front());
        c->outbox.pop_front();
        lock.unlock();
        const bool ok = send_all(c->fd, bytes);
        lock.lock();
        if (!ok) break;
    }
}

void HubServer::read_loop(const std::shared_ptr<Conn>& c) {
    auto emit = [this](ConnectionId to, const Envelope& e) { enqueue(to, e); };
    std::string buf;
    char chunk[4096];
    auto fill = [&]() {
        ssize_t n;
        do {
            n = ::recv(c->fd, chunk, sizeof chunk, 0);
        } while (n < 0 && errno == EINTR);
        if (n <= 0) return false;
        buf.append(chunk, static_cast<std::size_t>(n));
        return true;
    };

    bool ok = fill();
    if (ok && buf.rfind("GET ", 0) == 0) {
        // HTTP upgrade to WebSocket.
        std::size_t end;
        while ((end = buf.find("\r\n\r\n")) == std::string::npos && buf.size() < 16384 && (ok = fill())) {
        }
        std::string key;
        if (ok && end != std::string::npos) {
            std::string_view head(buf.data(), end);
            std::size_t pos = 0;
            while (pos < head.size()) {
                std::size_t eol = head.find("\r\n", pos);
                if (eol == std::string_view::npos) eol = head.size();
                std::string_view line = head.substr(pos, eol - pos);
                if (auto colon = line.find(':'); colon != std::string_view::npos) {
                    if (lower(std::string(line.substr(0, colon))) == "sec-websocket-key") key = trim(line.substr(colon + 1));
                }
                pos = eol + 2;
            }
            buf.erase(0, end + 4);
        }
        if (key.empty()) {
            send_all(c->fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
            ok = false;
        } else {
            const std::string reply = "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                                      "Sec-WebSocket-Accept: " + websocket_accept(key) + "\r\n\r\n";
            // Handshake goes out before any envelope can be queued for this socket.
            ok = send_all(c->fd, reply);
            c->websocket = true;
        }
        std::string message;
        while (ok && !stopping_) {
            while (buf.size() < 2 && (ok = fill())) {
            }
            if (!ok) break;
            const auto b0 = static_cast<std::uint8_t>(buf[0]);
            const auto b1 = static_cast<std::uint8_t>(buf[1]);
            const bool fin = b0 & 0x80;
            const std::uint8_t opcode = b0 & 0x0F;
            const bool masked = b1 & 0x80;
            std::uint64_t len = b1 & 0x7F;
            std::size_t header = 2;
            if (len == 126) header += 2;
            if (len == 127) header += 8;
            if (masked) header += 4;
            while (buf.size() < header && (ok = fill())) {
            }
            if (!ok) break;
            if (len == 126) {
                len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[2])) << 8) | static_cast<std::uint8_t>(buf[3]);
            } else if (len == 127) {
                len = 0;
                for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buf[2 + i]);
            }
            if (len > kMaxLine) break;
            while (buf.size() < header + len && (ok = fill())) {
            }
            if (!ok) break;
            std::string payload = buf.substr(header, static_cast<std::size_t>(len));
            if (masked) {
                const char* mask = buf.data() + header - 4;
                for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ mask[i % 4]);
            }
            buf.erase(0, header + static_cast<std::size_t>(len));
            if (opcode == 0x8) {
                c->push(websocket_frame("", 0x8));
                break;
            }
            if (opcode == 0x9) {
                c->push(websocket_frame(payload, 0xA));
                continue;
            }
            if (opcode != 0x0 && opcode != 0x1 && opcode != 0x2) continue;
            message += payload;
            if (!fin) continue;
            while (!message.empty() && (message.back() == '\n' || message.back() == '\r')) message.pop_back();
            if (!message.empty()) hub_.handle_line(c->id, message, wall_ms(), emit);
            message.clear();
        }
    } else {
        while (ok && !stopping_) {
            std::size_t nl;
            while ((nl = buf.find('\n')) != std::string::npos) {
                std::string line = buf.substr(0, nl);
                buf.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                if (!line.empty()) hub_.handle_line(c->id, line, wall_ms(), emit);
            }
            if (buf.size() > kMaxLine) break;
            ok = fill();
        }
    }
    hub_.close_connection(c->id);
    c->close();
    c->done = true;
}

LineClient LineClient::connect(const Endpoint& endpoint, int timeout_ms) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(endpoint.port);
    if (getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) {
        throw Error(Errc::HubUnreachable, "cannot resolve " + endpoint.str(), {endpoint.str()});
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (true) {
        int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
        if (::connect(fd, res->ai_addr, res->ai_addrlen) == 0) {
            freeaddrinfo(res);
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
            return LineClient(fd);
        }
        ::close(fd);
        if (std::chrono::steady_clock::now() >= deadline) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    freeaddrinfo(res);
    throw Error(Errc::HubUnreachable, "no hub at " + endpoint.str(), {endpoint.str()});
}

LineClient::LineClient(LineClient&& other) noexcept : fd_(other.fd_), buffer_(std::move(other.buffer_)) {
    other.fd_ = -1;
}

LineClient& LineClient::operator=(LineClient&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.fd_;
        buffer_ = std::move(other.buffer_);
        other.fd_ = -1;
    }
    return *this;
}

LineClient::~LineClient() { close(); }

void LineClient::close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
}

void LineClient::send_line(std::string_view line) {
    std::string bytes(line);
    if (bytes.empty() || bytes.back() != '\n') bytes.push_back('\n');
    if (fd_ < 0 || !send_all(fd_, bytes)) throw Error(Errc::HubUnreachable, "connection to hub lost");
}

std::optional<std::string> LineClient::read_line(int timeout_ms) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (true) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        pollfd p{fd_, POLLIN, 0};
        const int r = ::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(left.count(), 0)));
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) return std::nullopt;
        char chunk[4096];
        const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
        if (n <= 0) throw Error(Errc::HubUnreachable, "hub closed the connection");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

}  // namespace teleshift
