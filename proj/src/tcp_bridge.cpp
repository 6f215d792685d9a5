#include "sbq/tcp_bridge.hpp"

#include <cerrno>
#include <cstring>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "sbq/errors.hpp"
#include "sbq/shm_queue.hpp"

namespace sbq {

namespace {

std::string errno_text(const char* what) {
    return std::string(what) + ": " + std::strerror(errno);
}

void append_u32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
    std::uint8_t tmp[4];
    detail::store_le32(tmp, v);
    buf.insert(buf.end(), tmp, tmp + 4);
}

sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
        throw InvalidParam("not an IPv4 address: " + host);
    return addr;
}

}  // namespace

TcpBridge::TcpBridge(TcpEndpointSpec ep, std::vector<Binding> bindings)
    : ep_(std::move(ep)), bindings_(std::move(bindings)) {
    if (ep_.mode != "server" && ep_.mode != "client")
        throw InvalidParam("TCP endpoint mode must be 'server' or 'client'");
    if (bindings_.empty()) throw InvalidParam("TCP bridge needs at least one binding");
}

TcpBridge::~TcpBridge() {
    stop();
    join();
    if (fd_ >= 0) close(fd_);
    if (listen_fd_ >= 0) close(listen_fd_);
}

void TcpBridge::record_error(const std::string& msg) {
    if (stop_.load()) return;
    std::lock_guard lk(err_mu_);
    if (error_.empty()) error_ = msg;
}

std::string TcpBridge::error() const {
    std::lock_guard lk(err_mu_);
    return error_;
}

bool TcpBridge::failed() const { return !error().empty(); }

namespace {

// Socket I/O that survives partial transfers and polls so stop() can
// interrupt. Returns false on EOF/error/stop.
bool send_all(int fd, const std::uint8_t* data, std::size_t len,
              const std::atomic<bool>& stop) {
    std::size_t off = 0;
    while (off < len) {
        if (stop.load()) return false;
        const ssize_t n = send(fd, data + off, len - off, MSG_NOSIGNAL);
        if (n > 0) {
            off += static_cast<std::size_t>(n);
            continue;
        }
        if (n < 0 && (errno == EINTR)) continue;
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            pollfd pfd{fd, POLLOUT, 0};
            poll(&pfd, 1, 50);
            continue;
        }
        return false;
    }
    return true;
}

bool recv_all(int fd, std::uint8_t* data, std::size_t len, const std::atomic<bool>& stop) {
    std::size_t off = 0;
    while (off < len) {
        if (stop.load()) return false;
        pollfd pfd{fd, POLLIN, 0};
        const int pr = poll(&pfd, 1, 50);
        if (pr < 0 && errno != EINTR) return false;
        if (pr <= 0) continue;
        const ssize_t n = recv(fd, data + off, len - off, 0);
        if (n > 0) {
            off += static_cast<std::size_t>(n);
            continue;
        }
        if (n < 0 && errno == EINTR) continue;
        return false;  // EOF or hard error
    }
    return true;
}

}  // namespace

void TcpBridge::establish(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;

    if (ep_.mode == "server") {
        listen_fd_ = socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw IoFailure(errno_text("socket"));
        const int one = 1;
        setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
        sockaddr_in addr = make_addr(ep_.host, ep_.port);
        if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw IoFailure(errno_text("bind"));
        if (listen(listen_fd_, 1) != 0) throw IoFailure(errno_text("listen"));
        for (;;) {
            if (stop_.load()) throw Timeout("bridge stopped before a peer connected");
            if (std::chrono::steady_clock::now() > deadline)
                throw Timeout("no peer connected to " + ep_.host + ":" +
                              std::to_string(ep_.port));
            pollfd pfd{listen_fd_, POLLIN, 0};
            const int pr = poll(&pfd, 1, 100);
            if (pr < 0 && errno != EINTR) throw IoFailure(errno_text("poll"));
            if (pr <= 0) continue;
            fd_ = accept(listen_fd_, nullptr, nullptr);
            if (fd_ >= 0) break;
            if (errno != EINTR) throw IoFailure(errno_text("accept"));
        }
    } else {
        sockaddr_in addr = make_addr(ep_.host, ep_.port);
        for (int attempt = 1;; ++attempt) {
            if (stop_.load()) throw Timeout("bridge stopped before connecting");
            const int fd = socket(AF_INET, SOCK_STREAM, 0);
            if (fd < 0) throw IoFailure(errno_text("socket"));
            if (connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
                fd_ = fd;
                break;
            }
            close(fd);
            auto backoff = std::chrono::milliseconds(100) * attempt;
            backoff = std::min(backoff, std::chrono::milliseconds(2000));
            const auto now = std::chrono::steady_clock::now();
            if (now + backoff > deadline)
                throw Timeout("could not connect to " + ep_.host + ":" +
                              std::to_string(ep_.port) + " within the deadline");
            auto remaining = backoff;
            while (remaining.count() > 0 && !stop_.load()) {
                const auto slice = std::min(remaining, std::chrono::milliseconds(20));
                std::this_thread::sleep_for(slice);
                remaining -= slice;
            }
        }
    }

    const int one = 1;
    setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);

    // Handshake: magic, version, binding count, then each binding as
    // label length, label bytes, direction byte. Both sides send, then
    // verify the peer lists the same labels in order with flipped
    // directions.
    std::vector<std::uint8_t> hello;
    append_u32(hello, kTcpMagic);
    append_u32(hello, kTcpVersion);
    append_u32(hello, static_cast<std::uint32_t>(bindings_.size()));
    for (const auto& b : bindings_) {
        append_u32(hello, static_cast<std::uint32_t>(b.label.size()));
        hello.insert(hello.end(), b.label.begin(), b.label.end());
        hello.push_back(static_cast<std::uint8_t>(b.dir));
    }
    if (!send_all(fd_, hello.data(), hello.size(), stop_))
        throw IoFailure("handshake send failed");

    std::uint8_t head[12];
    if (!recv_all(fd_, head, sizeof head, stop_))
        throw IoFailure("handshake recv failed");
    if (detail::load_le32(head) != kTcpMagic)
        throw HandshakeMismatch("peer did not speak this protocol (bad magic)");
    if (detail::load_le32(head + 4) != kTcpVersion)
        throw HandshakeMismatch("peer protocol version " +
                                std::to_string(detail::load_le32(head + 4)) + ", expected " +
                                std::to_string(kTcpVersion));
    const std::uint32_t count = detail::load_le32(head + 8);
    if (count != bindings_.size())
        throw HandshakeMismatch("peer presented " + std::to_string(count) + " bindings, local side has " +
                                std::to_string(bindings_.size()));
    for (std::size_t i = 0; i < count; ++i) {
        std::uint8_t lenbuf[4];
        if (!recv_all(fd_, lenbuf, 4, stop_)) throw IoFailure("handshake recv failed");
        const std::uint32_t len = detail::load_le32(lenbuf);
        if (len > 4096) throw HandshakeMismatch("unreasonable label length in handshake");
        std::string label(len, '\0');
        if (len && !recv_all(fd_, reinterpret_cast<std::uint8_t*>(label.data()), len, stop_))
            throw IoFailure("handshake recv failed");
        std::uint8_t dir = 0;
        if (!recv_all(fd_, &dir, 1, stop_)) throw IoFailure("handshake recv failed");
        if (label != bindings_[i].label)
            throw HandshakeMismatch("binding " + std::to_string(i) + " is '" + label +
                                    "' on the peer but '" + bindings_[i].label + "' here");
        if (dir == static_cast<std::uint8_t>(bindings_[i].dir))
            throw HandshakeMismatch("binding '" + label +
                                    "' has the same direction on both sides");
        if (dir > 1) throw HandshakeMismatch("binding '" + label + "' has a bad direction byte");
    }
}

void TcpBridge::start_pump() {
    egress_thread_ = std::thread([this] { egress_loop(); });
    ingress_thread_ = std::thread([this] { ingress_loop(); });
}

void TcpBridge::start_async(std::chrono::milliseconds timeout) {
    async_thread_ = std::thread([this, timeout] {
        try {
            establish(timeout);
            start_pump();
        } catch (const std::exception& e) {
            record_error(e.what());
        }
    });
}

void TcpBridge::egress_loop() {
    struct Out {
        std::size_t index;
        QueueConsumer queue;
    };
    std::vector<Out> outs;
    try {
        for (std::size_t i = 0; i < bindings_.size(); ++i)
            if (bindings_[i].dir == BindingDir::Outbound)
                outs.push_back({i, QueueConsumer(bindings_[i].queue_path)});
    } catch (const std::exception& e) {
        record_error(e.what());
        return;
    }

    std::uint8_t frame[kTcpFrameBytes];
    Packet p;
    while (!stop_.load()) {
        bool moved = false;
        for (auto& o : outs) {
            if (!o.queue.try_recv(p)) continue;
            detail::store_le32(frame, static_cast<std::uint32_t>(o.index));
            encode_packet(p, frame + 4);
            if (!send_all(fd_, frame, sizeof frame, stop_)) {
                record_error("egress send failed on '" + bindings_[o.index].label + "'");
                return;
            }
            egress_count_.fetch_add(1, std::memory_order_relaxed);
            moved = true;
        }
        if (!moved) std::this_thread::sleep_for(std::chrono::microseconds(50));
    }
}

void TcpBridge::ingress_loop() {
    std::vector<std::unique_ptr<QueueProducer>> ins(bindings_.size());
    try {
        for (std::size_t i = 0; i < bindings_.size(); ++i)
            if (bindings_[i].dir == BindingDir::Inbound)
                ins[i] = std::make_unique<QueueProducer>(bindings_[i].queue_path);
    } catch (const std::exception& e) {
        record_error(e.what());
        return;
    }

    std::uint8_t frame[kTcpFrameBytes];
    while (!stop_.load()) {
        if (!recv_all(fd_, frame, sizeof frame, stop_)) {
            record_error("connection lost");
            return;
        }
        const std::uint32_t index = detail::load_le32(frame);
        if (index >= bindings_.size() || !ins[index]) {
            record_error("peer sent a frame for binding index " + std::to_string(index) +
                         ", which is not inbound here");
            return;
        }
        const Packet p = decode_packet_raw(frame + 4);
        while (!ins[index]->try_send(p)) {
            if (stop_.load()) return;
            std::this_thread::sleep_for(std::chrono::microseconds(20));
        }
        ingress_count_.fetch_add(1, std::memory_order_relaxed);
    }
}

void TcpBridge::stop() {
    stop_.store(true);
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void TcpBridge::join() {
    if (async_thread_.joinable()) async_thread_.join();
    if (egress_thread_.joinable()) egress_thread_.join();
    if (ingress_thread_.joinable()) ingress_thread_.join();
}

}  // namespace sbq
