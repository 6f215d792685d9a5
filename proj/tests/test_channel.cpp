#include <doctest.h>

#include <random>
#include <thread>

#include "helpers.hpp"
#include "sbq/blocks.hpp"
#include "sbq/channel.hpp"
#include "sbq/shm_queue.hpp"
#include "sbq/syncnet.hpp"

using namespace sbq;
using sbqtest::TempDir;
using sbqtest::test_packet;

namespace {

struct QueuePair {
    QueuePair(const TempDir& dir, const char* name)
        : prod(dir.file(name), true), cons(dir.file(name)) {}
    QueueProducer prod;
    QueueConsumer cons;
};

// Emits value packets 0,1,2,... whenever the output port is ready, up to a
// limit.
class SeqEmitter : public BlockModel {
public:
    explicit SeqEmitter(std::int64_t limit) : limit_(limit) {}
    void on_cycle(CycleIo& io) override {
        if (next_ < limit_ && io.can_emit(0)) {
            io.emit(0, make_value_packet(next_));
            ++next_;
        }
    }
    std::int64_t emitted() const { return next_; }

private:
    std::int64_t limit_;
    std::int64_t next_ = 0;
};

// Takes everything offered and records the cycle each value arrived at.
class SeqRecorder : public BlockModel {
public:
    void on_cycle(CycleIo& io) override {
        if (const Packet* p = io.peek(0)) {
            arrivals.push_back({io.cycle(), packet_value(*p)});
            io.take(0);
        }
    }
    std::vector<std::pair<std::uint64_t, std::int64_t>> arrivals;
};

}  // namespace

TEST_SUITE_BEGIN("channel");

TEST_CASE("tx latches an offer and flushes it one step later") {
    TempDir dir;
    QueuePair q(dir, "tx.q");
    TxBridge tx(q.prod);

    auto r = tx.tx_step(test_packet(1));
    CHECK(r.consumed);
    CHECK_FALSE(r.ready);  // slot now occupied and nothing was flushed
    CHECK(tx.has_pending());

    Packet got;
    CHECK_FALSE(q.cons.try_recv(got));  // one cycle of latency

    r = tx.tx_step(std::nullopt);
    CHECK(r.ready);
    CHECK_FALSE(tx.has_pending());
    REQUIRE(q.cons.try_recv(got));
    CHECK(got == test_packet(1));
}

TEST_CASE("idle tx asserts ready and touches nothing") {
    TempDir dir;
    QueuePair q(dir, "idle.q");
    TxBridge tx(q.prod);
    for (int i = 0; i < 5; ++i) {
        auto r = tx.tx_step(std::nullopt);
        CHECK(r.ready);
        CHECK_FALSE(r.consumed);
    }
    Packet got;
    CHECK_FALSE(q.cons.try_recv(got));
}

TEST_CASE("tx streams one packet per cycle at steady state") {
    TempDir dir;
    QueuePair q(dir, "stream.q");
    TxBridge tx(q.prod);

    for (std::uint32_t i = 0; i < 20; ++i) {
        auto r = tx.tx_step(test_packet(i));
        REQUIRE(r.consumed);
        if (i > 0) CHECK(r.ready);  // every later step also flushed
    }
    tx.tx_step(std::nullopt);
    Packet got;
    for (std::uint32_t i = 0; i < 20; ++i) {
        REQUIRE(q.cons.try_recv(got));
        CHECK(got == test_packet(i));
    }
}

TEST_CASE("tx against a full queue de-asserts ready and drops nothing") {
    TempDir dir;
    QueuePair q(dir, "full.q");
    for (std::uint32_t i = 0; i < kQueueCapacity; ++i) REQUIRE(q.prod.try_send(test_packet(i)));

    TxBridge tx(q.prod);
    auto r = tx.tx_step(test_packet(1000));  // latched into the pending slot
    CHECK(r.consumed);
    CHECK_FALSE(r.ready);
    for (int c = 0; c < 10; ++c) {
        r = tx.tx_step(test_packet(2000));  // cannot be latched while pending is stuck
        CHECK_FALSE(r.consumed);
        CHECK_FALSE(r.ready);
        CHECK_FALSE(tx.offer_ready());
    }

    Packet got;
    REQUIRE(q.cons.try_recv(got));  // free one slot
    r = tx.tx_step(test_packet(2000));
    CHECK(r.ready);     // pending flushed this cycle
    CHECK(r.consumed);  // and the new offer latched
}

TEST_CASE("rx delivers a packet once, on the first cycle after the fill") {
    TempDir dir;
    QueuePair q(dir, "rx.q");
    REQUIRE(q.prod.try_send(test_packet(3)));

    RxBridge rx(q.cons);
    CHECK_FALSE(rx.valid());
    auto d = rx.rx_step(true);
    CHECK_FALSE(d.has_value());  // this call only fills
    CHECK(rx.valid());
    d = rx.rx_step(true);
    REQUIRE(d.has_value());
    CHECK(*d == test_packet(3));
    CHECK_FALSE(rx.valid());
    d = rx.rx_step(true);
    CHECK_FALSE(d.has_value());
}

TEST_CASE("rx holds the packet across any number of not-ready cycles") {
    TempDir dir;
    QueuePair q(dir, "hold.q");
    REQUIRE(q.prod.try_send(test_packet(4)));

    RxBridge rx(q.cons);
    rx.rx_step(false);  // fill
    for (int k = 0; k < 25; ++k) {
        auto d = rx.rx_step(false);
        CHECK_FALSE(d.has_value());
        CHECK(rx.valid());
        REQUIRE(rx.peek() != nullptr);
        CHECK(*rx.peek() == test_packet(4));
    }
    auto d = rx.rx_step(true);
    REQUIRE(d.has_value());
    CHECK(*d == test_packet(4));
}

TEST_CASE("rx on an empty queue stays invalid") {
    TempDir dir;
    QueuePair q(dir, "rxempty.q");
    RxBridge rx(q.cons);
    for (int i = 0; i < 5; ++i) {
        CHECK_FALSE(rx.rx_step(true).has_value());
        CHECK_FALSE(rx.valid());
    }
}

TEST_CASE("a never-ready sink stalls the source after exactly 63 packets") {
    TempDir dir;
    QueuePair q(dir, "stall.q");
    TxBridge tx(q.prod);
    RxBridge rx(q.cons);
    SeqEmitter src(1'000'000);

    CycleIo src_io({}, {&tx});
    for (int c = 0; c < 200; ++c) {
        src_io.run_cycle(src);
        rx.rx_step(false);  // fills once, then never releases
    }
    // 61 in the queue, one stuck in the tx slot, one held by rx.
    CHECK(src.emitted() == 63);
    CHECK_FALSE(src_io.can_emit(0));
}

TEST_CASE("no packet is lost or duplicated under randomized stalls") {
    TempDir dir;
    QueuePair q(dir, "fuzz.q");
    TxBridge tx(q.prod);
    RxBridge rx(q.cons);

    SeqEmitter src(4000);
    SeqRecorder dst;
    CycleIo src_io({}, {&tx});
    CycleIo dst_io({&rx}, {});

    std::mt19937 rng(1234);
    // Phase 1: both sides make progress only on randomly chosen cycles.
    for (int c = 0; c < 30'000; ++c) {
        if (rng() % 4 != 0) src_io.run_cycle(src);
        if (rng() % 3 == 0) dst_io.run_cycle(dst);
    }
    // Phase 2: drain.
    for (int c = 0; c < 200 && dst.arrivals.size() < 4000; ++c) {
        src_io.run_cycle(src);
        dst_io.run_cycle(dst);
    }
    REQUIRE(src.emitted() == 4000);
    REQUIRE(dst.arrivals.size() == 4000);
    for (std::size_t i = 0; i < dst.arrivals.size(); ++i)
        CHECK(dst.arrivals[i].second == static_cast<std::int64_t>(i));
}

TEST_CASE("one hop through the synchronous scheduler takes exactly 3 cycles") {
    // Tx latch (1) + queue publication (1) + rx hold (1).
    SyncLink link;
    TxBridge tx(link);
    RxBridge rx(link);
    SeqEmitter src(1);
    SeqRecorder dst;
    CycleIo src_io({}, {&tx});
    CycleIo dst_io({&rx}, {});

    for (int c = 0; c < 10; ++c) {
        src_io.run_cycle(src);
        dst_io.run_cycle(dst);
        link.commit();
    }
    REQUIRE(dst.arrivals.size() == 1);
    CHECK(dst.arrivals[0].first == 3);  // emitted during cycle 0
}

TEST_CASE("per-cycle port discipline: one take and one emit per port") {
    SyncLink in_link, out_link;
    RxBridge rx(in_link);
    TxBridge tx(out_link);

    in_link.try_send(test_packet(1));
    in_link.commit();
    rx.rx_step(false);  // hold the packet

    struct Greedy : BlockModel {
        void on_cycle(CycleIo& io) override {
            REQUIRE(io.peek(0) != nullptr);
            io.take(0);
            CHECK(io.peek(0) == nullptr);  // consumed for this cycle
            CHECK_THROWS_AS(io.take(0), Error);

            REQUIRE(io.can_emit(0));
            io.emit(0, test_packet(2));
            CHECK_FALSE(io.can_emit(0));  // port already written this cycle
            CHECK_THROWS_AS(io.emit(0, test_packet(3)), Error);
        }
    } model;

    CycleIo io({&rx}, {&tx});
    io.run_cycle(model);
}

TEST_CASE("run_block drives a payload-incrementing block end to end") {
    TempDir dir;
    QueuePair in_q(dir, "in.q");
    QueuePair out_q(dir, "out.q");

    std::atomic<bool> stop{false};
    std::thread worker([&] {
        auto model = make_model("inc_loopback", nlohmann::json::object());
        RxBridge rx(in_q.cons);
        TxBridge tx(out_q.prod);
        RunBlockOptions opts;
        opts.stop = &stop;
        run_block(*model, {&rx}, {&tx}, opts);
    });

    // Pump both ends together: the block only buffers ~63 packets, so a
    // send-everything-then-receive pattern would deadlock on backpressure.
    const int count = 500;
    int sent = 0;
    std::vector<Packet> got;
    got.reserve(count);
    Packet p;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(30);
    while (static_cast<int>(got.size()) < count && std::chrono::steady_clock::now() < deadline) {
        bool moved = false;
        if (sent < count && in_q.prod.try_send(test_packet(sent))) {
            ++sent;
            moved = true;
        }
        if (out_q.cons.try_recv(p)) {
            got.push_back(p);
            moved = true;
        }
        if (!moved) std::this_thread::sleep_for(std::chrono::microseconds(100));
    }

    const auto t0 = std::chrono::steady_clock::now();
    stop.store(true);
    worker.join();
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(100));

    REQUIRE(static_cast<int>(got.size()) == count);
    for (int i = 0; i < count; ++i) {
        const Packet sentp = test_packet(i);
        CHECK(got[i].flags == sentp.flags);
        CHECK(got[i].destination == sentp.destination);
        for (std::size_t b = 0; b < kPayloadBytes; ++b)
            CHECK(got[i].data[b] == static_cast<std::uint8_t>(sentp.data[b] + 1));
    }
}

TEST_CASE("run_block stops at max_cycles") {
    TempDir dir;
    QueuePair q(dir, "count.q");
    RxBridge rx(q.cons);
    auto model = make_model("null_sink", nlohmann::json{{"ports", 1}});
    RunBlockOptions opts;
    opts.max_cycles = 500;
    CHECK(run_block(*model, {&rx}, {}, opts) == 500);
}

TEST_SUITE_END();
