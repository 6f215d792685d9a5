#include "sbq/worker.hpp"

#include <iostream>
#include <optional>
#include <thread>

#include "sbq/blocks.hpp"
#include "sbq/config.hpp"
#include "sbq/shm_queue.hpp"
#include "sbq/syncnet.hpp"

namespace sbq {

namespace {

using nlohmann::json;

struct PortBinding {
    std::string name;
    bool is_in;
    std::string path;
};

std::vector<PortBinding> parse_ports(const json& cfg) {
    std::vector<PortBinding> out;
    const json& ports = cfg.at("ports");
    if (!ports.is_array()) throw ConfigError("worker config 'ports' must be an array");
    for (const auto& p : ports) {
        PortBinding b;
        b.name = p.at("port").get<std::string>();
        const std::string dir = p.at("dir").get<std::string>();
        if (dir != "in" && dir != "out")
            throw ConfigError("port dir must be 'in' or 'out', got '" + dir + "'");
        b.is_in = dir == "in";
        b.path = p.at("path").get<std::string>();
        out.push_back(std::move(b));
    }
    return out;
}

int run_block_worker(const json& cfg, const std::atomic<bool>& stop) {
    auto model = make_model(cfg.at("type").get<std::string>(),
                            cfg.value("params", json::object()));
    const auto ports = parse_ports(cfg);

    std::vector<std::unique_ptr<QueueConsumer>> consumers;
    std::vector<std::unique_ptr<QueueProducer>> producers;
    std::vector<std::unique_ptr<RxBridge>> rx;
    std::vector<std::unique_ptr<TxBridge>> tx;
    std::vector<RxBridge*> ins;
    std::vector<TxBridge*> outs;
    for (const auto& p : ports) {
        if (p.is_in) {
            consumers.push_back(std::make_unique<QueueConsumer>(p.path));
            rx.push_back(std::make_unique<RxBridge>(*consumers.back()));
            ins.push_back(rx.back().get());
        } else {
            producers.push_back(std::make_unique<QueueProducer>(p.path));
            tx.push_back(std::make_unique<TxBridge>(*producers.back()));
            outs.push_back(tx.back().get());
        }
    }

    const double rate = cfg.value("max_rate_hz", 0.0);
    std::optional<RateLimiter> pacer;
    if (rate > 0) pacer.emplace(rate);
    RunBlockOptions opts;
    opts.pacer = pacer ? &*pacer : nullptr;
    opts.stop = &stop;
    run_block(*model, std::move(ins), std::move(outs), opts);
    return 0;
}

int run_net_worker(const json& cfg, const std::atomic<bool>& stop) {
    auto loaded = network_from_json(cfg.at("net"), "worker config");
    SyncNet net(*loaded.graph);
    const auto ports = parse_ports(cfg);

    struct Ingress {
        QueueConsumer queue;
        SyncLink* link;
    };
    struct Egress {
        QueueProducer queue;
        SyncLink* link;
    };
    std::vector<Ingress> ingress;
    std::vector<Egress> egress;
    for (const auto& p : ports) {
        if (p.is_in)
            ingress.push_back({QueueConsumer(p.path), &net.external_in(p.name)});
        else
            egress.push_back({QueueProducer(p.path), &net.external_out(p.name)});
    }

    const double rate = cfg.value("max_rate_hz", 0.0);
    std::optional<RateLimiter> pacer;
    if (rate > 0) pacer.emplace(rate);

    std::uint64_t idle_run = 0;
    auto backoff = std::chrono::microseconds(50);
    while (!stop.load(std::memory_order_relaxed)) {
        bool moved = false;
        for (auto& in : ingress) {
            Packet p;
            if (in.link->can_accept() && in.queue.try_recv(p)) {
                in.link->try_send(p);
                moved = true;
            }
        }
        moved = net.step_cycle() || moved;
        for (auto& out : egress) {
            Packet p;
            if (out.link->has_visible() && out.queue.can_accept()) {
                out.link->try_recv(p);
                out.queue.try_send(p);
                moved = true;
            }
        }
        net.commit_links();
        if (pacer) {
            pacer->pace();
        } else if (moved) {
            idle_run = 0;
            backoff = std::chrono::microseconds(50);
        } else if (++idle_run >= 256) {
            std::this_thread::sleep_for(backoff);
            backoff = std::min(backoff * 2, std::chrono::microseconds(5000));
        }
    }
    return 0;
}

}  // namespace

int run_worker(const json& config, const std::atomic<bool>& stop) {
    try {
        const std::string kind = config.at("kind").get<std::string>();
        if (kind == "block") return run_block_worker(config, stop);
        if (kind == "net") return run_net_worker(config, stop);
        throw ConfigError("unknown worker kind: " + kind);
    } catch (const ConfigError& e) {
        std::cerr << "worker config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "worker failed: " << e.what() << '\n';
        return 3;
    }
}

}  // namespace sbq
