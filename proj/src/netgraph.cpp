#include "sbq/netgraph.hpp"

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

#include "sbq/blocks.hpp"
#include "sbq/config.hpp"
#include "sbq/spawn.hpp"
#include "sbq/syncnet.hpp"

namespace sbq {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<std::size_t> BlockDef::port_index(const std::string& port_name) const {
    for (std::size_t i = 0; i < ports.size(); ++i)
        if (ports[i].name == port_name) return i;
    return std::nullopt;
}

std::string PortRef::str() const {
    if (!inst) return "<unbound>";
    return inst->name() + "." + inst->def().ports[port].name;
}

PortRef Instance::port(const std::string& port_name) {
    auto idx = def_->port_index(port_name);
    if (!idx)
        throw GraphError("instance '" + name_ + "' (" + def_->name + ") has no port named '" +
                         port_name + "'");
    return {this, *idx};
}

NetworkGraph::NetworkGraph(std::string name, NetMode mode)
    : name_(std::move(name)), mode_(mode) {
    if (name_.empty()) throw InvalidParam("network name must not be empty");
    if (name_.find('/') != std::string::npos || name_ == "." || name_ == "..")
        throw InvalidParam("network name '" + name_ + "' is not usable as a directory name");
}

std::shared_ptr<const BlockDef> NetworkGraph::add_block(const std::string& def_name,
                                                        const std::string& type,
                                                        json params, double sim_rate_hz) {
    BlockDef def;
    def.name = def_name;
    def.ports = describe_model_ports(type, params);
    def.type = type;
    def.params = std::move(params);
    def.sim_rate_hz = sim_rate_hz;
    return add_block_def(std::move(def));
}

std::shared_ptr<const BlockDef> NetworkGraph::add_block_def(BlockDef def) {
    if (def.name.empty()) throw InvalidParam("block def name must not be empty");
    if (def.sim_rate_hz <= 0) throw InvalidParam("sim_rate_hz must be positive");
    if (defs_.count(def.name))
        throw DuplicateLabel("block def '" + def.name + "' already exists");
    auto ptr = std::make_shared<const BlockDef>(std::move(def));
    defs_[ptr->name] = ptr;
    return ptr;
}

Instance& NetworkGraph::instantiate(std::shared_ptr<const BlockDef> def,
                                    std::string inst_name, double max_rate_hz) {
    if (!def) throw InvalidParam("instantiate requires a block def");
    if (max_rate_hz < 0) throw InvalidParam("max_rate_hz must be >= 0");
    if (inst_name.empty())
        inst_name = def->name + "_" + std::to_string(instances_.size());
    if (find_instance(inst_name))
        throw DuplicateLabel("instance '" + inst_name + "' already exists");
    instances_.push_back(std::make_unique<Instance>(instances_.size(), std::move(inst_name),
                                                    std::move(def), max_rate_hz));
    return *instances_.back();
}

Instance* NetworkGraph::find_instance(const std::string& inst_name) const {
    for (const auto& i : instances_)
        if (i->name() == inst_name) return i.get();
    return nullptr;
}

namespace {

bool same_port(const PortRef& a, const PortRef& b) {
    return a.inst == b.inst && a.port == b.port;
}

}  // namespace

bool NetworkGraph::port_bound(const PortRef& p) const {
    for (const auto& c : connections_)
        if (same_port(c.from, p) || same_port(c.to, p)) return true;
    for (const auto& e : externals_)
        if (same_port(e.port, p)) return true;
    for (const auto& t : tcp_)
        if (same_port(t.port, p)) return true;
    return false;
}

void NetworkGraph::require_unbound(const PortRef& p) const {
    if (!p.inst || p.inst->id() >= instances_.size() ||
        instances_[p.inst->id()].get() != p.inst)
        throw GraphError("port reference does not belong to network '" + name_ + "'");
    if (p.port >= p.inst->def().ports.size())
        throw GraphError("port index out of range on instance '" + p.inst->name() + "'");
    if (port_bound(p)) throw AlreadyBound(p.str() + " is already bound");
}

void NetworkGraph::connect(PortRef from, PortRef to) {
    require_unbound(from);
    require_unbound(to);
    if (from.inst->def().ports[from.port].dir != PortDir::Out)
        throw DirectionMismatch(from.str() + " is not an output port");
    if (to.inst->def().ports[to.port].dir != PortDir::In)
        throw DirectionMismatch(to.str() + " is not an input port");
    connections_.push_back({from, to});
}

void NetworkGraph::external(const std::string& label, PortRef port) {
    if (label.empty()) throw InvalidParam("external label must not be empty");
    for (const auto& e : externals_)
        if (e.label == label) throw DuplicateLabel("external label '" + label + "' is taken");
    for (const auto& t : tcp_)
        if (t.label == label) throw DuplicateLabel("label '" + label + "' is taken by a TCP binding");
    require_unbound(port);
    externals_.push_back({label, port});
}

void NetworkGraph::connect_tcp(PortRef port, const TcpEndpointSpec& ep,
                               const std::string& label) {
    if (mode_ == NetMode::SingleNetlist)
        throw ModeMismatch("a single-netlist network cannot carry TCP bindings");
    if (ep.mode != "server" && ep.mode != "client")
        throw InvalidParam("TCP endpoint mode must be 'server' or 'client'");
    if (ep.port == 0) throw InvalidParam("TCP endpoint needs a nonzero port");
    if (label.empty()) throw InvalidParam("TCP binding label must not be empty");
    for (const auto& t : tcp_)
        if (t.label == label) throw DuplicateLabel("TCP label '" + label + "' is taken");
    for (const auto& e : externals_)
        if (e.label == label) throw DuplicateLabel("label '" + label + "' is taken by an external");
    require_unbound(port);
    tcp_.push_back({label, port, ep});
}

namespace {

json port_entry(const std::string& port_name, PortDir dir, const std::string& path) {
    return json{{"port", port_name}, {"dir", dir == PortDir::In ? "in" : "out"}, {"path", path}};
}

}  // namespace

SpawnPlan NetworkGraph::build() const {
    SpawnPlan plan;
    plan.net_name = name_;
    plan.mode = mode_;
    plan.max_rate_hz = max_rate_hz_;
    plan.run_dir = default_queue_dir() + "/" + name_;
    if (mode_ == NetMode::SingleNetlist && !tcp_.empty())
        throw ModeMismatch("a single-netlist network cannot carry TCP bindings");

    for (const auto& inst : instances_)
        for (std::size_t p = 0; p < inst->def().ports.size(); ++p) {
            PortRef ref{inst.get(), p};
            if (!port_bound(ref)) throw UnboundPort(ref.str() + " is not connected");
        }

    std::map<std::pair<const Instance*, std::size_t>, std::string> path_of;
    for (std::size_t k = 0; k < connections_.size(); ++k) {
        const std::string path = plan.run_dir + "/c" + std::to_string(k) + ".q";
        path_of[{connections_[k].from.inst, connections_[k].from.port}] = path;
        path_of[{connections_[k].to.inst, connections_[k].to.port}] = path;
        plan.queue_files.push_back(path);
    }
    for (const auto& e : externals_) {
        const std::string path = plan.run_dir + "/ext_" + e.label + ".q";
        path_of[{e.port.inst, e.port.port}] = path;
        plan.queue_files.push_back(path);
        plan.externals.push_back({e.label, e.port.inst->def().ports[e.port.port].dir, path});
    }
    for (const auto& t : tcp_) {
        const std::string path = plan.run_dir + "/tcp_" + t.label + ".q";
        path_of[{t.port.inst, t.port.port}] = path;
        plan.queue_files.push_back(path);
        const BindingDir dir = t.port.inst->def().ports[t.port.port].dir == PortDir::Out
                                   ? BindingDir::Outbound
                                   : BindingDir::Inbound;
        auto same_ep = [&](const PlannedTcp& pt) {
            return pt.ep.mode == t.ep.mode && pt.ep.host == t.ep.host && pt.ep.port == t.ep.port;
        };
        auto it = std::find_if(plan.tcp.begin(), plan.tcp.end(), same_ep);
        if (it == plan.tcp.end()) {
            plan.tcp.push_back({t.ep, {}});
            it = std::prev(plan.tcp.end());
        }
        it->bindings.push_back({t.label, dir, path});
    }

    if (mode_ == NetMode::SingleNetlist) {
        json ports = json::array();
        for (const auto& e : externals_)
            ports.push_back(port_entry(e.label, e.port.inst->def().ports[e.port.port].dir,
                                       plan.run_dir + "/ext_" + e.label + ".q"));
        json cfg{{"instance", name_},
                 {"kind", "net"},
                 {"net", network_to_json(*this)},
                 {"max_rate_hz", max_rate_hz_},
                 {"ports", std::move(ports)}};
        plan.workers.push_back({name_, std::move(cfg)});
        return plan;
    }

    for (const auto& inst : instances_) {
        const BlockDef& def = inst->def();
        json ports = json::array();
        for (std::size_t p = 0; p < def.ports.size(); ++p)
            ports.push_back(port_entry(def.ports[p].name, def.ports[p].dir,
                                       path_of.at({inst.get(), p})));
        const double rate = inst->max_rate_hz() > 0 ? inst->max_rate_hz() : max_rate_hz_;
        json cfg{{"instance", inst->name()}, {"max_rate_hz", rate}, {"ports", std::move(ports)}};
        if (def.inner) {
            cfg["kind"] = "net";
            cfg["net"] = network_to_json(*def.inner);
        } else {
            cfg["kind"] = "block";
            cfg["type"] = def.type;
            cfg["params"] = def.params;
        }
        plan.workers.push_back({inst->name(), std::move(cfg)});
    }
    return plan;
}

const PlannedExternal& SpawnPlan::external(const std::string& label) const {
    for (const auto& e : externals)
        if (e.label == label) return e;
    throw GraphError("plan for '" + net_name + "' has no external labeled '" + label + "'");
}

std::size_t SpawnPlan::internal_queue_count() const {
    std::size_t tcp_queues = 0;
    for (const auto& t : tcp) tcp_queues += t.bindings.size();
    return queue_files.size() - externals.size() - tcp_queues;
}

std::shared_ptr<const BlockDef> compose(const std::string& def_name,
                                        std::shared_ptr<const NetworkGraph> inner) {
    if (!inner) throw InvalidParam("compose requires a network");
    if (inner->mode() != NetMode::SingleNetlist)
        throw ModeMismatch("composed networks must be single-netlist");
    for (const auto& [n, d] : inner->blocks())
        if (d->inner) throw GraphError("composition nests at most one level");
    for (const auto& inst : inner->instances())
        if (inst->def().inner) throw GraphError("composition nests at most one level");

    BlockDef def;
    def.name = def_name;
    for (const auto& e : inner->externals())
        def.ports.push_back({e.label, e.port.inst->def().ports[e.port.port].dir});
    def.inner = std::move(inner);
    return std::make_shared<const BlockDef>(std::move(def));
}

// RunHandle -------------------------------------------------------------------

RunHandle::RunHandle(SpawnPlan plan, std::string worker_exe) : plan_(std::move(plan)) {
    const std::string exe = worker_exe_path(worker_exe);
    std::error_code ec;
    fs::remove_all(plan_.run_dir, ec);
    fs::create_directories(plan_.run_dir);
    for (const auto& q : plan_.queue_files) detail::QueueMap(q, true);

    try {
        for (const auto& t : plan_.tcp) {
            bridges_.push_back(std::make_unique<TcpBridge>(t.ep, t.bindings));
            bridges_.back()->start_async();
        }
        for (const auto& w : plan_.workers) {
            const std::string cfg_path = plan_.run_dir + "/" + w.instance + ".json";
            {
                std::ofstream f(cfg_path);
                f << w.config.dump(2) << '\n';
                if (!f) throw IoFailure("cannot write " + cfg_path);
            }
            pids_[w.instance] = spawn_process(exe, {"worker", "--config", cfg_path},
                                              plan_.run_dir + "/" + w.instance + ".log");
        }
    } catch (...) {
        done_ = true;
        teardown(false);
        throw;
    }
    monitor_ = std::thread([this] { monitor_loop(); });
}

RunHandle::~RunHandle() { shutdown(); }

void RunHandle::monitor_loop() {
    while (!stopping_.load()) {
        for (const auto& [name, pid] : pids_) {
            {
                std::lock_guard lk(mu_);
                if (dead_.count(name)) continue;
            }
            int st = 0;
            if (waitpid(pid, &st, WNOHANG) == pid) {
                std::string what;
                if (WIFEXITED(st))
                    what = "worker '" + name + "' exited with code " +
                           std::to_string(WEXITSTATUS(st));
                else
                    what = "worker '" + name + "' was killed by signal " +
                           std::to_string(WTERMSIG(st));
                std::lock_guard lk(mu_);
                dead_.insert(name);
                if (!failure_) {
                    failure_ = what;
                    failed_instance_ = name;
                }
            }
        }
        for (const auto& b : bridges_) {
            if (b->failed()) {
                std::lock_guard lk(mu_);
                if (!failure_) {
                    failure_ = "tcp bridge: " + b->error();
                    failed_instance_ = "<tcp>";
                }
            }
        }
        for (int i = 0; i < 4 && !stopping_.load(); ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
}

std::optional<std::string> RunHandle::failure() const {
    std::lock_guard lk(mu_);
    return failure_;
}

void RunHandle::check() {
    std::lock_guard lk(mu_);
    if (failure_) throw WorkerDied(failed_instance_, *failure_);
}

QueueProducer RunHandle::external_producer(const std::string& label) {
    const PlannedExternal& e = plan_.external(label);
    if (e.dir != PortDir::In)
        throw DirectionMismatch("external '" + label + "' is a network output");
    return QueueProducer(e.queue_path, false);
}

QueueConsumer RunHandle::external_consumer(const std::string& label) {
    const PlannedExternal& e = plan_.external(label);
    if (e.dir != PortDir::Out)
        throw DirectionMismatch("external '" + label + "' is a network input");
    return QueueConsumer(e.queue_path, false);
}

void RunHandle::shutdown() {
    if (done_.exchange(true)) return;
    stopping_ = true;
    if (monitor_.joinable()) monitor_.join();
    teardown(false);
}

void RunHandle::teardown(bool) {
    for (auto& b : bridges_) b->stop();
    for (auto& b : bridges_) b->join();

    std::set<std::string> dead;
    {
        std::lock_guard lk(mu_);
        dead = dead_;
    }
    std::map<std::string, pid_t> live;
    for (const auto& [name, pid] : pids_)
        if (!dead.count(name)) live[name] = pid;

    for (const auto& [name, pid] : live) kill(pid, SIGTERM);
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (!live.empty() && std::chrono::steady_clock::now() < deadline) {
        for (auto it = live.begin(); it != live.end();) {
            int st = 0;
            if (waitpid(it->second, &st, WNOHANG) == it->second)
                it = live.erase(it);
            else
                ++it;
        }
        if (!live.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    for (const auto& [name, pid] : live) {
        kill(pid, SIGKILL);
        waitpid(pid, nullptr, 0);
    }

    std::error_code ec;
    fs::remove_all(plan_.run_dir, ec);
}

std::unique_ptr<RunHandle> simulate(const SpawnPlan& plan, std::string worker_exe) {
    return std::make_unique<RunHandle>(plan, std::move(worker_exe));
}

// Oracle ------------------------------------------------------------------------

OracleResult run_oracle(const NetworkGraph& g,
                        const std::map<std::string, std::vector<Packet>>& stimulus,
                        std::uint64_t horizon_cycles) {
    SyncNet net(g);

    struct Feed {
        SyncLink* link;
        const std::vector<Packet>* packets;
        std::size_t pos = 0;
    };
    std::vector<Feed> feeds;
    for (const auto& [label, packets] : stimulus)
        feeds.push_back({&net.external_in(label), &packets});

    OracleResult res;
    for (const auto& label : net.external_out_labels()) res.outputs[label];

    constexpr int kQuietCycles = 8;
    int quiet = 0;
    for (std::uint64_t c = 0;; ++c) {
        if (c >= horizon_cycles)
            throw HorizonExceeded("network '" + g.name() + "' did not complete within " +
                                  std::to_string(horizon_cycles) + " cycles");
        bool exhausted = true;
        for (auto& f : feeds) {
            if (f.pos < f.packets->size()) {
                if (f.link->can_accept() && f.link->try_send((*f.packets)[f.pos])) ++f.pos;
                if (f.pos < f.packets->size()) exhausted = false;
            }
        }
        net.step_cycle();
        bool drained = false;
        for (const auto& label : net.external_out_labels()) {
            SyncLink& link = net.external_out(label);
            Packet p;
            while (link.has_visible() && link.try_recv(p)) {
                res.outputs[label].push_back({c, p});
                drained = true;
            }
        }
        net.commit_links();
        res.cycles = c + 1;
        if (exhausted && !drained && net.quiescent()) {
            if (++quiet >= kQuietCycles) break;
        } else {
            quiet = 0;
        }
    }
    return res;
}

}  // namespace sbq
