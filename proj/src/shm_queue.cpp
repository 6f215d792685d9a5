#include "sbq/shm_queue.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <thread>

namespace sbq {

namespace fs = std::filesystem;

std::string default_queue_dir() {
    if (const char* env = std::getenv("SBQ_DIR"); env && *env) return env;
    return "./sbq";
}

std::string resolve_queue_path(const std::string& name_or_path) {
    if (name_or_path.find('/') != std::string::npos) return name_or_path;
    return default_queue_dir() + "/" + name_or_path;
}

namespace detail {

namespace {

[[noreturn]] void throw_errno(const std::string& what, const std::string& path) {
    throw IoFailure(what + " " + path + ": " + std::strerror(errno));
}

inline void cpu_relax() noexcept {
#if defined(__x86_64__) || defined(__i386__)
    __builtin_ia32_pause();
#elif defined(__aarch64__)
    asm volatile("yield" ::: "memory");
#else
    std::this_thread::yield();
#endif
}

}  // namespace

QueueMap::QueueMap(const std::string& name_or_path, bool fresh)
    : path_(resolve_queue_path(name_or_path)) {
    std::error_code ec;
    fs::path parent = fs::path(path_).parent_path();
    if (!parent.empty()) fs::create_directories(parent, ec);

    int fd = ::open(path_.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd < 0) throw_errno("open", path_);

    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw_errno("fstat", path_);
    }
    if (fresh) {
        // Recreate zero-filled regardless of previous contents.
        if (::ftruncate(fd, 0) != 0 || ::ftruncate(fd, kQueueBytes) != 0) {
            ::close(fd);
            throw_errno("ftruncate", path_);
        }
    } else if (st.st_size == 0) {
        if (::ftruncate(fd, kQueueBytes) != 0) {
            ::close(fd);
            throw_errno("ftruncate", path_);
        }
    } else if (st.st_size != static_cast<off_t>(kQueueBytes)) {
        ::close(fd);
        throw BadSize(path_ + " is " + std::to_string(st.st_size) +
                      " bytes, expected " + std::to_string(kQueueBytes));
    }

    void* mem = ::mmap(nullptr, kQueueBytes, PROT_READ | PROT_WRITE, MAP_SHARED, fd, 0);
    ::close(fd);  // the mapping keeps the file alive
    if (mem == MAP_FAILED) throw_errno("mmap", path_);
    base_ = static_cast<std::uint8_t*>(mem);
}

QueueMap::~QueueMap() { unmap(); }

QueueMap::QueueMap(QueueMap&& other) noexcept
    : base_(other.base_), path_(std::move(other.path_)) {
    other.base_ = nullptr;
}

QueueMap& QueueMap::operator=(QueueMap&& other) noexcept {
    if (this != &other) {
        unmap();
        base_ = other.base_;
        path_ = std::move(other.path_);
        other.base_ = nullptr;
    }
    return *this;
}

void QueueMap::unmap() noexcept {
    if (base_) {
        ::munmap(base_, kQueueBytes);
        base_ = nullptr;
    }
}

namespace {

// Shared retry loop for the blocking variants.
template <typename TryOp>
bool block_on(TryOp&& op, std::chrono::nanoseconds timeout) {
    for (int i = 0; i < 1000; ++i) {
        if (op()) return true;
        cpu_relax();
    }
    auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        if (op()) return true;
        if (timeout.count() >= 0 && std::chrono::steady_clock::now() >= deadline)
            return false;
        std::this_thread::sleep_for(std::chrono::microseconds(10));
    }
}

}  // namespace

}  // namespace detail

QueueProducer::QueueProducer(const std::string& name_or_path, bool fresh)
    : map_(name_or_path, fresh) {
    head_ = map_.head_ref().load(std::memory_order_acquire);
    cached_tail_ = map_.tail_ref().load(std::memory_order_acquire);
}

bool QueueProducer::try_send(const Packet& p) {
    const std::uint32_t next = detail::next_slot(head_);
    if (next == cached_tail_) {
        cached_tail_ = map_.tail_ref().load(std::memory_order_acquire);
        if (next == cached_tail_) return false;  // full
    }
    encode_packet(p, map_.slot(head_));
    map_.head_ref().store(next, std::memory_order_release);
    head_ = next;
    return true;
}

bool QueueProducer::can_accept() {
    const std::uint32_t next = detail::next_slot(head_);
    if (next != cached_tail_) return true;
    cached_tail_ = map_.tail_ref().load(std::memory_order_acquire);
    return next != cached_tail_;
}

bool QueueProducer::send_blocking(const Packet& p, std::chrono::nanoseconds timeout) {
    return detail::block_on([&] { return try_send(p); }, timeout);
}

QueueConsumer::QueueConsumer(const std::string& name_or_path, bool fresh)
    : map_(name_or_path, fresh) {
    tail_ = map_.tail_ref().load(std::memory_order_acquire);
    cached_head_ = map_.head_ref().load(std::memory_order_acquire);
}

bool QueueConsumer::try_recv(Packet& out) {
    if (tail_ == cached_head_) {
        cached_head_ = map_.head_ref().load(std::memory_order_acquire);
        if (tail_ == cached_head_) return false;  // empty
    }
    out = decode_packet_raw(map_.slot(tail_));
    const std::uint32_t next = detail::next_slot(tail_);
    // Release so the slot reads above are ordered before the hand-back.
    map_.tail_ref().store(next, std::memory_order_release);
    tail_ = next;
    return true;
}

std::optional<Packet> QueueConsumer::try_recv() {
    Packet p;
    if (try_recv(p)) return p;
    return std::nullopt;
}

bool QueueConsumer::recv_blocking(Packet& out, std::chrono::nanoseconds timeout) {
    return detail::block_on([&] { return try_recv(out); }, timeout);
}

}  // namespace sbq
