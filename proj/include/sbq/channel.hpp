#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <vector>

#include "sbq/channel_iface.hpp"
#include "sbq/packet.hpp"
#include "sbq/pacing.hpp"

namespace sbq {

// Tx and Rx bridges adapt a cycle-driven block to a queue, ready/valid
// style. Each bridge holds at most one packet and contributes exactly one
// cycle of latency: an offer latched by tx_step is flushed to the queue on
// the next call, and a packet filled by rx_step is handed out on the next
// call at the earliest.

class TxBridge {
public:
    explicit TxBridge(PacketSink& sink) : sink_(&sink) {}

    struct StepResult {
        bool ready;     // an offer on the next cycle can be latched
        bool consumed;  // this cycle's offer was latched
    };

    // Called once per cycle: flush the pending slot into the queue if
    // possible, then latch the cycle's offer if the slot is free.
    // ready is true iff the slot ended the cycle free or the queue accepted
    // the pending packet this cycle.
    StepResult tx_step(const std::optional<Packet>& offer) {
        bool flushed = false;
        if (pending_ && sink_->try_send(*pending_)) {
            pending_.reset();
            flushed = true;
        }
        bool consumed = false;
        if (!pending_ && offer) {
            pending_ = *offer;
            consumed = true;
        }
        return {!pending_.has_value() || flushed, consumed};
    }

    // True iff an offer made this cycle is guaranteed to be latched: the
    // pending slot is free, or the queue will take the pending packet when
    // tx_step flushes (queue space only ever grows from our side's view).
    bool offer_ready() { return !pending_ || sink_->can_accept(); }

    bool has_pending() const { return pending_.has_value(); }

private:
    PacketSink* sink_;
    std::optional<Packet> pending_;
};

class RxBridge {
public:
    explicit RxBridge(PacketSource& src) : src_(&src) {}

    // Called once per cycle. A held packet is delivered only when the
    // downstream asserts ready, and a fresh fill is never delivered in the
    // same call that fetched it.
    std::optional<Packet> rx_step(bool downstream_ready) {
        std::optional<Packet> delivered;
        if (held_ && downstream_ready) {
            delivered = std::move(held_);
            held_.reset();
        }
        if (!held_) {
            Packet p;
            if (src_->try_recv(p)) held_ = p;
        }
        return delivered;
    }

    bool valid() const { return held_.has_value(); }
    const Packet* peek() const { return held_ ? &*held_ : nullptr; }

private:
    PacketSource* src_;
    std::optional<Packet> held_;
};

class CycleIo;

// A cycle-driven block. on_cycle is called once per simulated cycle and
// observes two-phase semantics: every peek sees the cycle-start state, and
// takes/emits commit when the cycle ends. Per cycle each input port yields
// at most one packet and each output port accepts at most one.
class BlockModel {
public:
    virtual ~BlockModel() = default;
    virtual void on_cycle(CycleIo& io) = 0;
    // False while the model still buffers undelivered work; used by the
    // synchronous scheduler to detect quiescence.
    virtual bool idle() const { return true; }
};

// Port window handed to BlockModel::on_cycle. Input and output ports are
// indexed separately, in the block's declaration order.
class CycleIo {
public:
    CycleIo(std::vector<RxBridge*> in, std::vector<TxBridge*> out)
        : in_(std::move(in)), out_(std::move(out)),
          taken_(in_.size(), false), emitted_(out_.size()) {}

    std::size_t in_count() const { return in_.size(); }
    std::size_t out_count() const { return out_.size(); }
    std::uint64_t cycle() const { return cycle_; }

    const Packet* peek(std::size_t in_port) const {
        return taken_[in_port] ? nullptr : in_[in_port]->peek();
    }

    Packet take(std::size_t in_port) {
        const Packet* p = peek(in_port);
        if (!p) throw Error("take on input port with no packet");
        Packet copy = *p;
        taken_[in_port] = true;
        return copy;
    }

    bool can_emit(std::size_t out_port) const {
        return !emitted_[out_port] && out_[out_port]->offer_ready();
    }

    void emit(std::size_t out_port, const Packet& p) {
        if (!can_emit(out_port)) throw Error("emit on output port that is not ready");
        emitted_[out_port] = p;
    }

    // Runs one full cycle: model callback, then bridge steps. Returns true
    // if any packet moved (used for idle backoff).
    bool run_cycle(BlockModel& model) {
        std::fill(taken_.begin(), taken_.end(), false);
        for (auto& e : emitted_) e.reset();
        model.on_cycle(*this);
        bool moved = false;
        for (std::size_t i = 0; i < in_.size(); ++i) {
            bool had = in_[i]->valid();
            in_[i]->rx_step(taken_[i]);
            moved = moved || taken_[i] || (!had && in_[i]->valid());
        }
        for (std::size_t o = 0; o < out_.size(); ++o) {
            bool had = out_[o]->has_pending();
            auto r = out_[o]->tx_step(emitted_[o]);
            moved = moved || r.consumed || (had && !out_[o]->has_pending());
        }
        ++cycle_;
        return moved;
    }

private:
    std::vector<RxBridge*> in_;
    std::vector<TxBridge*> out_;
    std::vector<bool> taken_;
    std::vector<std::optional<Packet>> emitted_;
    std::uint64_t cycle_ = 0;
};

struct RunBlockOptions {
    RateLimiter* pacer = nullptr;
    const std::atomic<bool>* stop = nullptr;
    std::uint64_t max_cycles = 0;  // 0 = until stopped
};

// Drives a block until stopped: inputs step, model computes, outputs step,
// pace. Without a pacer the loop backs off (escalating sleeps) after a run
// of cycles in which nothing moved, so idle blocks do not burn the host.
std::uint64_t run_block(BlockModel& model, std::vector<RxBridge*> in,
                        std::vector<TxBridge*> out, const RunBlockOptions& opts = {});

}  // namespace sbq
