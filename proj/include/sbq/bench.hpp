#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "sbq/packet.hpp"

namespace sbq {

// Two-process queue benchmark over a pair of queues in dir: a ping-pong
// phase measuring per-round latency, then a one-way saturation phase.
// The peer process is spawned from the helper executable (see spawn.hpp).
struct BenchResult {
    double round_trip_ns_median = 0;
    double packets_per_sec = 0;
    double bytes_per_sec = 0;
    std::uint64_t latency_rounds = 0;
    std::uint64_t throughput_packets = 0;
};

// Reference numbers measured for this queue design on a 2.8 GHz quad-core
// i7; printed by the CLI next to local results for a sanity check.
inline constexpr double kReferenceRoundTripNs = 213.0;
inline constexpr double kReferencePacketsPerSec = 27e6;
inline constexpr double kReferenceBytesPerSec = 1.4e9;

BenchResult run_bench(const std::string& dir, std::uint64_t throughput_packets,
                      std::uint64_t latency_rounds = 100'000,
                      const std::string& peer_exe = "");

// Peer-side loop: echo every packet from ping_path to pong_path until the
// shutdown marker (destination = 0xffffffff) arrives. Used by the hidden
// bench-echo subcommand.
int bench_echo_main(const std::string& ping_path, const std::string& pong_path,
                    const std::atomic<bool>* stop = nullptr);

// Deterministic checksummed packet stream for cross-process torn-read
// stress: payload is a pure function of (seed, i) with a trailing checksum.
Packet stress_packet(std::uint64_t seed, std::uint64_t i);
bool stress_packet_ok(const Packet& p);

// Producer side (hidden stress-send subcommand).
int stress_send_main(const std::string& path, std::uint64_t count, std::uint64_t seed,
                     const std::atomic<bool>* stop = nullptr);

// Spawns the producer and verifies every received packet bit-for-bit.
struct StressResult {
    std::uint64_t received = 0;
    std::uint64_t mismatches = 0;
    double packets_per_sec = 0;
};

StressResult stress_verify(const std::string& path, std::uint64_t count,
                           std::uint64_t seed, const std::string& peer_exe = "");

}  // namespace sbq
