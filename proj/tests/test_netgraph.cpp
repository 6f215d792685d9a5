#include <doctest.h>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <thread>

#include "helpers.hpp"
#include "sbq/bench.hpp"
#include "sbq/blocks.hpp"
#include "sbq/config.hpp"
#include "sbq/netgraph.hpp"
#include "sbq/syncnet.hpp"

using namespace sbq;
using sbqtest::QueueDirFixture;
using sbqtest::test_packet;

namespace {

// A straight pipeline of `stages` fifos with externals on both ends.
std::shared_ptr<NetworkGraph> fifo_chain(const std::string& name, int stages,
                                         NetMode mode = NetMode::Distributed) {
    auto g = std::make_shared<NetworkGraph>(name, mode);
    auto def = g->add_block("stage", "fifo", nlohmann::json{{"depth", 2}});
    Instance* prev = nullptr;
    for (int i = 0; i < stages; ++i) {
        Instance& f = g->instantiate(def, "f" + std::to_string(i));
        if (prev) g->connect(prev->port("out"), f.port("in"));
        prev = &f;
    }
    g->external("feed", g->find_instance("f0")->port("in"));
    g->external("sink", prev->port("out"));
    return g;
}

std::vector<Packet> value_packets(int n, int base = 0) {
    std::vector<Packet> v;
    for (int i = 0; i < n; ++i) v.push_back(make_value_packet(base + i));
    return v;
}

#ifdef SBQ_CLI_PATH
const char* kWorkerExe = SBQ_CLI_PATH;
#endif

}  // namespace

TEST_SUITE_BEGIN("netgraph");

TEST_CASE("port lookups resolve names and reject unknowns") {
    QueueDirFixture fx;
    NetworkGraph g("lookup");
    auto def = g.add_block("stage", "fifo");
    CHECK(def->port_index("in") == 0);
    CHECK(def->port_index("out") == 1);
    CHECK_FALSE(def->port_index("sideways").has_value());

    Instance& f = g.instantiate(def, "f");
    CHECK(f.port("in").str() == "f.in");
    CHECK_THROWS_AS(f.port("sideways"), GraphError);
}

TEST_CASE("graph construction rejects structural mistakes") {
    QueueDirFixture fx;
    NetworkGraph g("bad");
    auto def = g.add_block("stage", "fifo");
    Instance& a = g.instantiate(def, "a");
    Instance& b = g.instantiate(def, "b");

    SUBCASE("connection endpoints must be out then in") {
        CHECK_THROWS_AS(g.connect(a.port("in"), b.port("in")), DirectionMismatch);
        CHECK_THROWS_AS(g.connect(a.port("out"), b.port("out")), DirectionMismatch);
        CHECK_THROWS_AS(g.connect(a.port("in"), b.port("out")), DirectionMismatch);
    }
    SUBCASE("a port binds at most once") {
        g.connect(a.port("out"), b.port("in"));
        Instance& c = g.instantiate(def, "c");
        CHECK_THROWS_AS(g.connect(a.port("out"), c.port("in")), AlreadyBound);
        CHECK_THROWS_AS(g.connect(c.port("out"), b.port("in")), AlreadyBound);
        CHECK_THROWS_AS(g.external("x", a.port("out")), AlreadyBound);
    }
    SUBCASE("external labels are unique") {
        g.external("x", a.port("in"));
        CHECK_THROWS_AS(g.external("x", b.port("in")), DuplicateLabel);
    }
    SUBCASE("instance names are unique") {
        CHECK_THROWS_AS(g.instantiate(def, "a"), DuplicateLabel);
    }
    SUBCASE("every port must be bound by build time") {
        g.connect(a.port("out"), b.port("in"));
        g.external("feed", a.port("in"));
        CHECK_THROWS_AS(g.build(), UnboundPort);  // b.out dangles
    }
    SUBCASE("block defs are unique and typed") {
        CHECK_THROWS_AS(g.add_block("stage", "fifo"), GraphError);
        CHECK_THROWS_AS(g.add_block("mystery", "flux_capacitor"), ConfigError);
    }
}

TEST_CASE("network names must be safe path components") {
    CHECK_THROWS_AS(NetworkGraph(""), InvalidParam);
    CHECK_THROWS_AS(NetworkGraph("a/b"), InvalidParam);
    CHECK_THROWS_AS(NetworkGraph("."), InvalidParam);
    CHECK_THROWS_AS(NetworkGraph(".."), InvalidParam);
}

TEST_CASE("unnamed instances get deterministic names") {
    QueueDirFixture fx;
    NetworkGraph g("auto");
    auto def = g.add_block("stage", "fifo");
    CHECK(g.instantiate(def).name() == "stage_0");
    CHECK(g.instantiate(def).name() == "stage_1");
    CHECK(g.instantiate(def, "named").name() == "named");
    CHECK(g.instantiate(def).name() == "stage_3");
}

TEST_CASE("the plan lays out queues and worker configs deterministically") {
    QueueDirFixture fx;
    auto g = fifo_chain("plan", 3);
    g->set_max_rate_hz(5000);
    const SpawnPlan plan = g->build();

    const std::string base = fx.dir.path() + "/plan";
    CHECK(plan.run_dir == base);
    REQUIRE(plan.queue_files.size() == 4);  // 2 internal + 2 external
    CHECK(plan.queue_files[0] == base + "/c0.q");
    CHECK(plan.queue_files[1] == base + "/c1.q");
    CHECK(plan.internal_queue_count() == 2);
    CHECK(plan.external("feed").queue_path == base + "/ext_feed.q");
    CHECK(plan.external("feed").dir == PortDir::In);
    CHECK(plan.external("sink").queue_path == base + "/ext_sink.q");
    CHECK(plan.external("sink").dir == PortDir::Out);
    CHECK_THROWS_AS(plan.external("nope"), GraphError);

    REQUIRE(plan.workers.size() == 3);
    const auto& w0 = plan.workers[0].config;
    CHECK(plan.workers[0].instance == "f0");
    CHECK(w0.at("kind") == "block");
    CHECK(w0.at("type") == "fifo");
    CHECK(w0.at("max_rate_hz") == 5000.0);
    REQUIRE(w0.at("ports").size() == 2);
    CHECK(w0.at("ports")[0].at("port") == "in");
    CHECK(w0.at("ports")[0].at("dir") == "in");
    CHECK(w0.at("ports")[0].at("path") == base + "/ext_feed.q");
    CHECK(w0.at("ports")[1].at("port") == "out");
    CHECK(w0.at("ports")[1].at("path") == base + "/c0.q");
}

TEST_CASE("per-instance rate caps override the graph-wide cap") {
    QueueDirFixture fx;
    NetworkGraph g("rates");
    auto def = g.add_block("stage", "fifo");
    Instance& a = g.instantiate(def, "a");
    Instance& b = g.instantiate(def, "b", 250);
    g.set_max_rate_hz(9000);
    g.connect(a.port("out"), b.port("in"));
    g.external("feed", a.port("in"));
    g.external("sink", b.port("out"));

    const SpawnPlan plan = g.build();
    CHECK(plan.workers[0].config.at("max_rate_hz") == 9000.0);
    CHECK(plan.workers[1].config.at("max_rate_hz") == 250.0);
}

TEST_CASE("oracle timing follows the per-hop latency model") {
    QueueDirFixture fx;
    // Each stage costs four cycles: receive-side hold, the block's own
    // buffering, transmit latch, and queue publication. Ingress visibility
    // adds one more; pipelining then streams 1 packet per cycle.
    for (const int stages : {1, 2, 3}) {
        for (const int n : {1, 5}) {
            auto g = fifo_chain("lat" + std::to_string(stages) + "_" + std::to_string(n), stages);
            const auto res = run_oracle(*g, {{"feed", value_packets(n)}}, 100'000);
            const auto& out = res.outputs.at("sink");
            REQUIRE(static_cast<int>(out.size()) == n);
            const std::uint64_t first_expected = 1 + 4 * stages;
            for (int i = 0; i < n; ++i) {
                CHECK(out[i].cycle == first_expected + i);
                CHECK(packet_value(out[i].packet) == i);
            }
            CHECK(res.cycles == first_expected + (n - 1) + 9);
        }
    }
}

TEST_CASE("oracle results do not depend on instantiation order") {
    QueueDirFixture fx;
    auto build = [](const std::string& name, bool reversed) {
        auto g = std::make_shared<NetworkGraph>(name);
        auto def = g->add_block("stage", "fifo");
        auto inc = g->add_block("bump", "inc_loopback");
        if (reversed) {
            g->instantiate(inc, "i");
            g->instantiate(def, "f");
        } else {
            g->instantiate(def, "f");
            g->instantiate(inc, "i");
        }
        g->connect(g->find_instance("f")->port("out"), g->find_instance("i")->port("in"));
        g->external("feed", g->find_instance("f")->port("in"));
        g->external("sink", g->find_instance("i")->port("out"));
        return g;
    };

    const std::vector<Packet> stim = {test_packet(1), test_packet(2), test_packet(3)};
    const auto a = run_oracle(*build("fwd", false), {{"feed", stim}}, 100'000);
    const auto b = run_oracle(*build("rev", true), {{"feed", stim}}, 100'000);

    REQUIRE(a.outputs.at("sink").size() == b.outputs.at("sink").size());
    for (std::size_t i = 0; i < a.outputs.at("sink").size(); ++i) {
        CHECK(a.outputs.at("sink")[i].cycle == b.outputs.at("sink")[i].cycle);
        CHECK(a.outputs.at("sink")[i].packet == b.outputs.at("sink")[i].packet);
    }
    CHECK(a.cycles == b.cycles);
}

TEST_CASE("a run that cannot finish inside the horizon is reported") {
    QueueDirFixture fx;
    auto g = fifo_chain("short", 2);
    CHECK_THROWS_AS(run_oracle(*g, {{"feed", value_packets(5)}}, 6), HorizonExceeded);
}

TEST_CASE("oracle stimulus labels must exist") {
    QueueDirFixture fx;
    auto g = fifo_chain("labels", 1);
    CHECK_THROWS_AS(run_oracle(*g, {{"bogus", value_packets(1)}}, 1000), GraphError);
}

TEST_CASE("a composed sub-network behaves like its flat equivalent") {
    QueueDirFixture fx;

    auto inner = std::make_shared<NetworkGraph>("pair", NetMode::SingleNetlist);
    auto def = inner->add_block("stage", "fifo");
    Instance& x = inner->instantiate(def, "x");
    Instance& y = inner->instantiate(def, "y");
    inner->connect(x.port("out"), y.port("in"));
    inner->external("a", x.port("in"));
    inner->external("b", y.port("out"));

    auto sub = compose("pair_block", inner);
    REQUIRE(sub->ports.size() == 2);
    CHECK(sub->ports[0].name == "a");
    CHECK(sub->ports[0].dir == PortDir::In);
    CHECK(sub->ports[1].name == "b");
    CHECK(sub->ports[1].dir == PortDir::Out);

    NetworkGraph outer("outer");
    auto outer_def = outer.add_block_def(*sub);
    auto bump = outer.add_block("bump", "inc_loopback");
    Instance& p = outer.instantiate(outer_def, "p");
    Instance& i = outer.instantiate(bump, "i");
    outer.connect(p.port("b"), i.port("in"));
    outer.external("feed", p.port("a"));
    outer.external("sink", i.port("out"));

    const auto stim = value_packets(10, 100);
    const auto res = run_oracle(outer, {{"feed", stim}}, 100'000);
    const auto& out = res.outputs.at("sink");
    REQUIRE(out.size() == stim.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
        // Every payload byte gains one from the inc stage; the fifos only
        // forward. Order must be preserved through the nesting.
        Packet expect = stim[k];
        for (auto& byte : expect.data) byte = static_cast<std::uint8_t>(byte + 1);
        CHECK(out[k].packet == expect);
    }
}

TEST_CASE("composition rules are enforced") {
    QueueDirFixture fx;

    auto distributed = std::make_shared<NetworkGraph>("dist");
    auto def = distributed->add_block("stage", "fifo");
    Instance& f = distributed->instantiate(def, "f");
    distributed->external("a", f.port("in"));
    distributed->external("b", f.port("out"));
    CHECK_THROWS_AS(compose("nope", distributed), ModeMismatch);

    auto inner = std::make_shared<NetworkGraph>("inner", NetMode::SingleNetlist);
    auto idef = inner->add_block("stage", "fifo");
    Instance& g0 = inner->instantiate(idef, "g0");
    inner->external("a", g0.port("in"));
    inner->external("b", g0.port("out"));
    auto sub = compose("sub", inner);

    auto nested = std::make_shared<NetworkGraph>("nested", NetMode::SingleNetlist);
    auto ndef = nested->add_block_def(*sub);
    Instance& n0 = nested->instantiate(ndef, "n0");
    nested->external("a", n0.port("a"));
    nested->external("b", n0.port("b"));
    CHECK_THROWS_AS(compose("deeper", nested), GraphError);  // one level only

    NetworkGraph single("tcping", NetMode::SingleNetlist);
    auto sdef = single.add_block("stage", "fifo");
    Instance& s0 = single.instantiate(sdef, "s0");
    single.external("a", s0.port("in"));
    CHECK_THROWS_AS(single.connect_tcp(s0.port("out"), {"server", "127.0.0.1", 29000}, "x"),
                    ModeMismatch);
}

#ifdef SBQ_CLI_PATH

TEST_CASE("a distributed chain moves packets bit-exactly and cleans up after itself") {
    QueueDirFixture fx;
    auto g = fifo_chain("distchain", 3);
    const SpawnPlan plan = g->build();

    std::map<std::string, pid_t> pids;
    {
        auto run = simulate(plan, kWorkerExe);
        pids = run->pids();
        CHECK(pids.size() == 3);
        CHECK(std::filesystem::exists(plan.run_dir));

        auto feed = run->external_producer("feed");
        auto sink = run->external_consumer("sink");
        CHECK_THROWS_AS(run->external_producer("sink"), DirectionMismatch);
        CHECK_THROWS_AS(run->external_consumer("feed"), DirectionMismatch);

        const int count = 500;
        std::atomic<bool> fed{false};
        std::thread pusher([&] {
            for (int i = 0; i < count; ++i)
                if (!feed.send_blocking(stress_packet(77, i), std::chrono::seconds(30))) return;
            fed = true;
        });
        Packet got;
        for (int i = 0; i < count; ++i) {
            REQUIRE(sink.recv_blocking(got, std::chrono::seconds(30)));
            CHECK(got == stress_packet(77, i));
        }
        pusher.join();
        CHECK(fed);
        run->check();
        run->shutdown();
    }

    CHECK_FALSE(std::filesystem::exists(plan.run_dir));
    for (const auto& [name, pid] : pids) {
        // After shutdown the processes are reaped, so the pids are gone (or
        // at worst recycled, which kill(0) cannot distinguish; ESRCH is the
        // expected result).
        CHECK(kill(pid, 0) == -1);
    }
}

TEST_CASE("a crashed worker is reported with its instance name") {
    QueueDirFixture fx;
    auto g = fifo_chain("crash", 2);
    auto run = simulate(g->build(), kWorkerExe);

    const pid_t victim = run->pids().at("f1");
    REQUIRE(kill(victim, SIGKILL) == 0);

    bool died = false;
    for (int i = 0; i < 500; ++i) {
        try {
            run->check();
        } catch (const WorkerDied& e) {
            died = true;
            CHECK(e.instance() == "f1");
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    CHECK(died);
    CHECK(run->failure().has_value());
    run->shutdown();
    CHECK_FALSE(std::filesystem::exists(run->plan().run_dir));
}

TEST_CASE("single-netlist mode runs the whole graph as one worker") {
    QueueDirFixture fx;
    auto g = fifo_chain("onenet", 3, NetMode::SingleNetlist);
    const SpawnPlan plan = g->build();
    REQUIRE(plan.workers.size() == 1);
    CHECK(plan.workers[0].config.at("kind") == "net");

    auto run = simulate(plan, kWorkerExe);
    auto feed = run->external_producer("feed");
    auto sink = run->external_consumer("sink");
    for (int i = 0; i < 50; ++i)
        REQUIRE(feed.send_blocking(test_packet(i), std::chrono::seconds(30)));
    Packet got;
    for (int i = 0; i < 50; ++i) {
        REQUIRE(sink.recv_blocking(got, std::chrono::seconds(30)));
        CHECK(got == test_packet(i));
    }
    run->shutdown();
}

TEST_CASE("a spawned composite matches the oracle on values and order") {
    QueueDirFixture fx;

    auto make_graph = [](const std::string& name) {
        auto inner = std::make_shared<NetworkGraph>(name + "_inner", NetMode::SingleNetlist);
        auto def = inner->add_block("bump", "inc_loopback");
        Instance& x = inner->instantiate(def, "x");
        inner->external("a", x.port("in"));
        inner->external("b", x.port("out"));

        auto g = std::make_shared<NetworkGraph>(name);
        auto sub = compose("bump_net", inner);
        auto gdef = g->add_block_def(*sub);
        auto fdef = g->add_block("stage", "fifo");
        Instance& s = g->instantiate(gdef, "s");
        Instance& f = g->instantiate(fdef, "f");
        g->connect(s.port("b"), f.port("in"));
        g->external("feed", s.port("a"));
        g->external("sink", f.port("out"));
        return g;
    };

    const auto stim = value_packets(40, -20);
    const auto oracle = run_oracle(*make_graph("non_oracle"), {{"feed", stim}}, 100'000);

    auto g = make_graph("non_dist");
    auto run = simulate(g->build(), kWorkerExe);
    auto feed = run->external_producer("feed");
    auto sink = run->external_consumer("sink");
    std::vector<Packet> got;
    std::size_t sent = 0;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(60);
    while (got.size() < stim.size()) {
        if (sent < stim.size() && feed.try_send(stim[sent])) ++sent;
        Packet p;
        while (sink.try_recv(p)) got.push_back(p);
        run->check();
        REQUIRE(std::chrono::steady_clock::now() < deadline);
    }
    run->shutdown();

    REQUIRE(got.size() == oracle.outputs.at("sink").size());
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == oracle.outputs.at("sink")[i].packet);
}

#endif  // SBQ_CLI_PATH

TEST_SUITE_END();
