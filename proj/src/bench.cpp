#include "sbq/bench.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <filesystem>
#include <vector>

#include <sched.h>
#include <sys/wait.h>

#include "sbq/shm_queue.hpp"
#include "sbq/spawn.hpp"

namespace sbq {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint32_t kShutdownDest = 0xffffffff;

// On a loaded or single-core host the peer cannot run until we yield, so
// every wait loop alternates short spins with sched_yield instead of
// sleeping.
template <typename Try>
bool spin_until(Try&& op, const std::atomic<bool>* stop = nullptr,
                std::chrono::nanoseconds timeout = std::chrono::nanoseconds{-1}) {
    const bool bounded = timeout.count() >= 0;
    const auto deadline = Clock::now() + timeout;
    for (;;) {
        for (int i = 0; i < 64; ++i)
            if (op()) return true;
        if (stop && stop->load(std::memory_order_relaxed)) return false;
        if (bounded && Clock::now() > deadline) return false;
        sched_yield();
    }
}

int wait_for(pid_t pid) {
    int st = 0;
    while (waitpid(pid, &st, 0) < 0 && errno == EINTR) {
    }
    return st;
}

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint32_t stress_checksum(const Packet& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ULL;
    };
    std::uint8_t tmp[4];
    detail::store_le32(tmp, p.flags);
    for (auto b : tmp) mix(b);
    detail::store_le32(tmp, p.destination);
    for (auto b : tmp) mix(b);
    for (std::size_t i = 0; i < 48; ++i) mix(p.data[i]);
    return static_cast<std::uint32_t>(h ^ (h >> 32));
}

}  // namespace

Packet stress_packet(std::uint64_t seed, std::uint64_t i) {
    Packet p;
    p.flags = static_cast<std::uint32_t>(i & 1);
    p.destination = static_cast<std::uint32_t>(i);
    std::uint64_t x = seed ^ (i * 0x9e3779b97f4a7c15ULL);
    for (std::size_t k = 0; k < 5; ++k) detail::store_le64(p.data.data() + k * 8, splitmix64(x));
    detail::store_le64(p.data.data() + 40, i);
    detail::store_le32(p.data.data() + 48, stress_checksum(p));
    return p;
}

bool stress_packet_ok(const Packet& p) {
    return detail::load_le32(p.data.data() + 48) == stress_checksum(p);
}

int bench_echo_main(const std::string& ping_path, const std::string& pong_path,
                    const std::atomic<bool>* stop) {
    QueueConsumer ping(ping_path);
    QueueProducer pong(pong_path);
    Packet p;
    for (;;) {
        if (!spin_until([&] { return ping.try_recv(p); }, stop)) return 0;
        if (p.destination == kShutdownDest) return 0;
        if (!spin_until([&] { return pong.try_send(p); }, stop)) return 0;
    }
}

int stress_send_main(const std::string& path, std::uint64_t count, std::uint64_t seed,
                     const std::atomic<bool>* stop) {
    QueueProducer q(path);
    for (std::uint64_t i = 0; i < count; ++i) {
        const Packet p = stress_packet(seed, i);
        if (!spin_until([&] { return q.try_send(p); }, stop)) return 0;
    }
    return 0;
}

BenchResult run_bench(const std::string& dir, std::uint64_t throughput_packets,
                      std::uint64_t latency_rounds, const std::string& peer_exe) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string ping_path = dir + "/bench_ping.q";
    const std::string pong_path = dir + "/bench_pong.q";
    detail::QueueMap(ping_path, true);
    detail::QueueMap(pong_path, true);

    const std::string exe = worker_exe_path(peer_exe);
    BenchResult res;
    res.latency_rounds = latency_rounds;
    res.throughput_packets = throughput_packets;

    auto must = [](auto&& op, const char* what) {
        if (!spin_until(op, nullptr, std::chrono::seconds(120))) throw Timeout(what);
    };

    {
        const pid_t peer = spawn_process(exe, {"bench-echo", ping_path, pong_path},
                                         dir + "/bench_echo.log");
        QueueProducer ping(ping_path);
        QueueConsumer pong(pong_path);
        Packet out;
        Packet in;

        auto round = [&](std::uint64_t i) {
            out.destination = static_cast<std::uint32_t>(i);
            must([&] { return ping.try_send(out); }, "bench peer stopped taking pings");
            must([&] { return pong.try_recv(in); }, "bench peer stopped echoing");
        };

        const std::uint64_t warmup = std::min<std::uint64_t>(1000, latency_rounds);
        for (std::uint64_t i = 0; i < warmup; ++i) round(i);

        std::vector<std::uint64_t> samples(latency_rounds);
        for (std::uint64_t i = 0; i < latency_rounds; ++i) {
            const auto t0 = Clock::now();
            round(i);
            samples[i] = static_cast<std::uint64_t>(
                std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0)
                    .count());
        }
        out.destination = kShutdownDest;
        must([&] { return ping.try_send(out); }, "bench peer stopped taking pings");
        wait_for(peer);

        if (!samples.empty()) {
            auto mid = samples.begin() + samples.size() / 2;
            std::nth_element(samples.begin(), mid, samples.end());
            res.round_trip_ns_median = static_cast<double>(*mid);
        }
    }

    {
        const std::string tp_path = dir + "/bench_tp.q";
        detail::QueueMap(tp_path, true);
        const std::uint64_t seed = 0x627175655f7470ULL;
        const pid_t peer = spawn_process(
            exe,
            {"stress-send", tp_path, std::to_string(throughput_packets), std::to_string(seed)},
            dir + "/bench_tp.log");
        QueueConsumer q(tp_path);
        Packet p;
        must([&] { return q.try_recv(p); }, "throughput stream never started");
        const auto t0 = Clock::now();
        for (std::uint64_t got = 1; got < throughput_packets; ++got)
            must([&] { return q.try_recv(p); }, "throughput stream stalled");
        const auto dt = std::chrono::duration<double>(Clock::now() - t0).count();
        wait_for(peer);
        if (dt > 0 && throughput_packets > 1) {
            res.packets_per_sec = static_cast<double>(throughput_packets - 1) / dt;
            res.bytes_per_sec = res.packets_per_sec * kPacketBytes;
        }
    }
    return res;
}

StressResult stress_verify(const std::string& path, std::uint64_t count, std::uint64_t seed,
                           const std::string& peer_exe) {
    detail::QueueMap(path, true);
    const pid_t peer =
        spawn_process(worker_exe_path(peer_exe),
                      {"stress-send", path, std::to_string(count), std::to_string(seed)});
    QueueConsumer q(path);
    StressResult res;
    Packet p;
    const auto timeout = std::chrono::seconds(120);
    Clock::time_point t0{};
    for (std::uint64_t i = 0; i < count; ++i) {
        if (!spin_until([&] { return q.try_recv(p); }, nullptr, timeout)) {
            wait_for(peer);
            throw Timeout("stress stream stalled after " + std::to_string(i) + " packets");
        }
        if (i == 0) t0 = Clock::now();
        ++res.received;
        if (!stress_packet_ok(p) || !(p == stress_packet(seed, i))) ++res.mismatches;
    }
    const auto dt = std::chrono::duration<double>(Clock::now() - t0).count();
    if (dt > 0 && res.received > 1)
        res.packets_per_sec = static_cast<double>(res.received - 1) / dt;
    wait_for(peer);
    return res;
}

}  // namespace sbq
