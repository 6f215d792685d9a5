#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "sbq/channel.hpp"
#include "sbq/packet.hpp"

namespace sbq {

// In-process stand-in for a shared-memory queue under the synchronous
// reference scheduler: same capacity (61), but packets published during
// cycle t become receivable at t+1. Capacity checks are made against the
// cycle-start snapshot (pops do not free space until commit), so results
// cannot depend on the order blocks are evaluated in.
class SyncLink final : public PacketSink, public PacketSource {
public:
    bool try_send(const Packet& p) override {
        if (!can_accept()) return false;
        q_.push_back(p);
        ++pushed_;
        return true;
    }

    bool can_accept() override { return snapshot_size_ + pushed_ < kQueueCapacityEquiv; }

    bool try_recv(Packet& out) override {
        if (visible_ == 0) return false;
        out = q_.front();
        q_.pop_front();
        --visible_;
        return true;
    }

    bool has_visible() const { return visible_ > 0; }
    std::size_t size() const { return q_.size(); }
    bool idle() const { return q_.empty(); }

    // End of cycle: everything pushed this cycle becomes visible, and the
    // capacity snapshot moves up.
    void commit() {
        visible_ = q_.size();
        snapshot_size_ = q_.size();
        pushed_ = 0;
    }

    static constexpr std::size_t kQueueCapacityEquiv = 61;

private:
    std::deque<Packet> q_;
    std::size_t visible_ = 0;
    std::size_t snapshot_size_ = 0;
    std::size_t pushed_ = 0;
};

class NetworkGraph;

// Synchronous single-process executor for a network: one global clock, all
// instances evaluated in instance-id order each cycle, links committed at
// the cycle boundary. External ports surface as SyncLinks the caller pushes
// into / pops from.
class SyncNet {
public:
    explicit SyncNet(const NetworkGraph& g);
    ~SyncNet();

    SyncNet(SyncNet&&) noexcept;
    SyncNet& operator=(SyncNet&&) = delete;

    // Runs one global cycle without committing links; call commit_links()
    // after harvesting external output (packets published this cycle must
    // not be observable until the next).
    bool step_cycle();
    void commit_links();

    SyncLink& external_in(const std::string& label);
    SyncLink& external_out(const std::string& label);
    const std::vector<std::string>& external_in_labels() const;
    const std::vector<std::string>& external_out_labels() const;

    std::uint64_t cycle() const;
    // True when no packet is buffered in any link or bridge.
    bool quiescent() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Runs a composed inner network as one block: the block's ports are the
// inner network's externals, and the whole inner net ticks once per cycle.
std::unique_ptr<BlockModel> make_net_model(std::shared_ptr<const NetworkGraph> inner);

}  // namespace sbq
