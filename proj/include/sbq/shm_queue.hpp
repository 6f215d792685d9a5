#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>

#include "sbq/channel_iface.hpp"
#include "sbq/packet.hpp"

namespace sbq {

// One queue is a single 4096-byte memory-mapped file:
//
//   offset     size  contents
//        0        4  head  (next slot the producer will write)
//       64        4  tail  (next slot the consumer will read)
//      128  62 * 64  slots
//
// Head and tail live on separate cache lines so the two sides never
// write-share a line; slots start at 128 so the file is exactly one page.
// With 62 slots one is sacrificed to distinguish full from empty, leaving a
// usable capacity of 61 packets.
//
// Single producer, single consumer, one process (or thread) per role.
// The producer publishes a slot with a release store of head; the consumer
// acquires head before reading, and releases tail after it is done with the
// slot. Each side keeps a cached copy of the other side's index and only
// re-reads shared memory when the cached view says it cannot make progress.
inline constexpr std::size_t kQueueBytes = 4096;
inline constexpr std::uint32_t kQueueSlots = 62;
inline constexpr std::uint32_t kQueueCapacity = kQueueSlots - 1;
inline constexpr std::size_t kHeadOffset = 0;
inline constexpr std::size_t kTailOffset = 64;
inline constexpr std::size_t kSlotsOffset = 128;

// Directory queue files are created in when a bare name is used.
// Defaults to ./sbq/, overridden by $SBQ_DIR; paths containing a '/'
// are taken as given.
std::string default_queue_dir();
std::string resolve_queue_path(const std::string& name_or_path);

namespace detail {

// Shared mmap plumbing for the two endpoint classes.
class QueueMap {
public:
    QueueMap() = default;
    QueueMap(const std::string& name_or_path, bool fresh);
    ~QueueMap();

    QueueMap(QueueMap&& other) noexcept;
    QueueMap& operator=(QueueMap&& other) noexcept;
    QueueMap(const QueueMap&) = delete;
    QueueMap& operator=(const QueueMap&) = delete;

    std::uint8_t* base() const { return base_; }
    const std::string& path() const { return path_; }
    bool valid() const { return base_ != nullptr; }

    std::atomic_ref<std::uint32_t> head_ref() const {
        return std::atomic_ref<std::uint32_t>(
            *reinterpret_cast<std::uint32_t*>(base_ + kHeadOffset));
    }
    std::atomic_ref<std::uint32_t> tail_ref() const {
        return std::atomic_ref<std::uint32_t>(
            *reinterpret_cast<std::uint32_t*>(base_ + kTailOffset));
    }
    std::uint8_t* slot(std::uint32_t idx) const {
        return base_ + kSlotsOffset + std::size_t{idx} * kPacketBytes;
    }

private:
    void unmap() noexcept;

    std::uint8_t* base_ = nullptr;
    std::string path_;
};

inline std::uint32_t next_slot(std::uint32_t idx) { return (idx + 1) % kQueueSlots; }

}  // namespace detail

// Writing endpoint. fresh=true recreates the file zero-filled; fresh=false
// attaches to an existing file (which must be exactly 4096 bytes) or creates
// a zero-filled one if absent.
class QueueProducer final : public PacketSink {
public:
    QueueProducer() = default;
    explicit QueueProducer(const std::string& name_or_path, bool fresh = false);

    // Fails (returns false) when the queue is full; shared memory is left
    // untouched in that case.
    bool try_send(const Packet& p) override;

    // True if a try_send issued now would succeed. Refreshes the cached
    // tail at most once, like a failed try_send.
    bool can_accept() override;

    // Spins up to 1000 iterations with a CPU-relax hint, then sleeps 10 us
    // per retry. timeout < 0 means wait forever. Returns false on timeout.
    bool send_blocking(const Packet& p,
                       std::chrono::nanoseconds timeout = std::chrono::nanoseconds{-1});

    const std::string& path() const { return map_.path(); }
    bool valid() const { return map_.valid(); }

    // Debug/test visibility only.
    std::uint32_t head() const { return map_.head_ref().load(std::memory_order_relaxed); }
    std::uint32_t tail() const { return map_.tail_ref().load(std::memory_order_relaxed); }

private:
    detail::QueueMap map_;
    std::uint32_t head_ = 0;         // producer-owned mirror of head
    std::uint32_t cached_tail_ = 0;  // last observed consumer position
};

// Reading endpoint; same attach semantics as QueueProducer.
class QueueConsumer final : public PacketSource {
public:
    QueueConsumer() = default;
    explicit QueueConsumer(const std::string& name_or_path, bool fresh = false);

    // Fails (returns false) when the queue is empty; shared memory is left
    // untouched in that case.
    bool try_recv(Packet& out) override;
    std::optional<Packet> try_recv();

    // Backoff policy mirrors send_blocking.
    bool recv_blocking(Packet& out,
                       std::chrono::nanoseconds timeout = std::chrono::nanoseconds{-1});

    const std::string& path() const { return map_.path(); }
    bool valid() const { return map_.valid(); }

    std::uint32_t head() const { return map_.head_ref().load(std::memory_order_relaxed); }
    std::uint32_t tail() const { return map_.tail_ref().load(std::memory_order_relaxed); }

private:
    detail::QueueMap map_;
    std::uint32_t tail_ = 0;         // consumer-owned mirror of tail
    std::uint32_t cached_head_ = 0;  // last observed producer position
};

}  // namespace sbq
