#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "sbq/packet.hpp"

namespace sbq {

// Direction is from the local side's perspective: an outbound binding
// drains a local queue onto the wire, an inbound one feeds a local queue
// from the wire.
enum class BindingDir : std::uint8_t { Outbound = 0, Inbound = 1 };

struct Binding {
    std::string label;
    BindingDir dir;
    std::string queue_path;
};

struct TcpEndpointSpec {
    std::string mode;  // "server" or "client"
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;
};

// Multiplexes any number of queues over one TCP connection. Frames are
// 68 bytes: a 4-byte little-endian binding index followed by one encoded
// packet. Connections open with a handshake (magic, version, and the
// ordered binding list); peers must present the same labels in the same
// order with opposite directions.
inline constexpr std::uint32_t kTcpMagic = 0x53574244;
inline constexpr std::uint32_t kTcpVersion = 1;
inline constexpr std::size_t kTcpFrameBytes = 4 + kPacketBytes;

class TcpBridge {
public:
    TcpBridge(TcpEndpointSpec ep, std::vector<Binding> bindings);
    ~TcpBridge();

    TcpBridge(const TcpBridge&) = delete;
    TcpBridge& operator=(const TcpBridge&) = delete;

    // Blocks until the connection is up and the handshake has been
    // verified. Servers wait for one peer; clients retry with a backoff of
    // 100 ms times the attempt number, capped at 2 s, until the deadline.
    // Throws HandshakeMismatch / IoFailure / Timeout.
    void establish(std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

    // Spawns the egress and ingress pump threads. Must follow establish().
    void start_pump();

    // establish() + start_pump() on a background thread; failures are
    // stored and visible through error(). Used by the orchestrator, which
    // cannot block while several endpoints come up in arbitrary order.
    void start_async(std::chrono::milliseconds timeout = std::chrono::milliseconds(30000));

    // Signals the pumps and unblocks any socket wait. Safe to call twice.
    void stop();
    // Joins all threads. Does not throw; check error() afterwards.
    void join();

    std::string error() const;
    bool failed() const;

    std::uint64_t packets_egress() const { return egress_count_.load(); }
    std::uint64_t packets_ingress() const { return ingress_count_.load(); }

    const std::vector<Binding>& bindings() const { return bindings_; }

private:
    void egress_loop();
    void ingress_loop();
    void record_error(const std::string& msg);

    TcpEndpointSpec ep_;
    std::vector<Binding> bindings_;
    int fd_ = -1;
    int listen_fd_ = -1;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> egress_count_{0};
    std::atomic<std::uint64_t> ingress_count_{0};
    std::thread egress_thread_;
    std::thread ingress_thread_;
    std::thread async_thread_;
    mutable std::mutex err_mu_;
    std::string error_;
};

}  // namespace sbq
