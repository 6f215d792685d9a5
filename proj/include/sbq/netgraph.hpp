#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sbq/packet.hpp"
#include "sbq/shm_queue.hpp"
#include "sbq/tcp_bridge.hpp"

namespace sbq {

enum class PortDir { In, Out };
enum class NetMode { Distributed, SingleNetlist };

struct PortDecl {
    std::string name;
    PortDir dir;
};

class NetworkGraph;

// A block design: its port list plus how to build its model. Leaf blocks
// name a registered model type; composite blocks carry a whole inner
// network (see compose).
struct BlockDef {
    std::string name;
    std::vector<PortDecl> ports;
    std::string type;  // registry type; empty for composites
    nlohmann::json params = nlohmann::json::object();
    double sim_rate_hz = 1e6;
    std::shared_ptr<const NetworkGraph> inner;

    std::optional<std::size_t> port_index(const std::string& port_name) const;
};

class Instance;

struct PortRef {
    Instance* inst = nullptr;
    std::size_t port = 0;

    std::string str() const;
};

class Instance {
public:
    Instance(std::size_t id, std::string name, std::shared_ptr<const BlockDef> def,
             double max_rate_hz)
        : id_(id), name_(std::move(name)), def_(std::move(def)), max_rate_hz_(max_rate_hz) {}

    std::size_t id() const { return id_; }
    const std::string& name() const { return name_; }
    const BlockDef& def() const { return *def_; }
    std::shared_ptr<const BlockDef> def_ptr() const { return def_; }
    double max_rate_hz() const { return max_rate_hz_; }

    PortRef port(const std::string& port_name);

private:
    std::size_t id_;
    std::string name_;
    std::shared_ptr<const BlockDef> def_;
    double max_rate_hz_;
};

struct Connection {
    PortRef from;  // out port
    PortRef to;    // in port
};

struct ExternalPort {
    std::string label;
    PortRef port;
};

struct TcpBindingDecl {
    std::string label;
    PortRef port;
    TcpEndpointSpec ep;
};

// What simulate() needs to launch a run: every queue file to create, one
// config per worker, the TCP bridges, and the externally visible queues.
struct PlannedWorker {
    std::string instance;
    nlohmann::json config;
};

struct PlannedExternal {
    std::string label;
    PortDir dir;  // direction of the bound block port
    std::string queue_path;
};

struct PlannedTcp {
    TcpEndpointSpec ep;
    std::vector<Binding> bindings;
};

struct SpawnPlan {
    std::string net_name;
    NetMode mode = NetMode::Distributed;
    std::string run_dir;
    std::vector<std::string> queue_files;
    std::vector<PlannedWorker> workers;
    std::vector<PlannedExternal> externals;
    std::vector<PlannedTcp> tcp;
    double max_rate_hz = 0;  // 0 = unlimited

    const PlannedExternal& external(const std::string& label) const;
    std::size_t internal_queue_count() const;
    std::size_t external_queue_count() const { return externals.size(); }
};

// The design under construction: blocks, instances, point-to-point
// connections, externally exposed ports, and TCP-bridged ports.
class NetworkGraph {
public:
    explicit NetworkGraph(std::string name, NetMode mode = NetMode::Distributed);

    // Leaf block from the model registry; ports are derived from the type.
    std::shared_ptr<const BlockDef> add_block(const std::string& def_name,
                                              const std::string& type,
                                              nlohmann::json params = nlohmann::json::object(),
                                              double sim_rate_hz = 1e6);
    std::shared_ptr<const BlockDef> add_block_def(BlockDef def);

    // Instance ids are dense and follow instantiation order.
    Instance& instantiate(std::shared_ptr<const BlockDef> def, std::string inst_name = "",
                          double max_rate_hz = 0);

    // from must be an out port and to an in port, each bound at most once.
    void connect(PortRef from, PortRef to);

    // Exposes a port to the driver under a unique label.
    void external(const std::string& label, PortRef port);

    // Routes a port over a TCP bridge endpoint instead of a local peer.
    void connect_tcp(PortRef port, const TcpEndpointSpec& ep, const std::string& label);

    // Validates that every port is bound exactly once and assigns
    // deterministic queue paths under <SBQ_DIR>/<net name>/.
    SpawnPlan build() const;

    const std::string& name() const { return name_; }
    NetMode mode() const { return mode_; }
    void set_max_rate_hz(double hz) { max_rate_hz_ = hz; }
    double max_rate_hz() const { return max_rate_hz_; }

    const std::vector<std::unique_ptr<Instance>>& instances() const { return instances_; }
    Instance* find_instance(const std::string& inst_name) const;
    const std::vector<Connection>& connections() const { return connections_; }
    const std::vector<ExternalPort>& externals() const { return externals_; }
    const std::vector<TcpBindingDecl>& tcp_bindings() const { return tcp_; }
    const std::map<std::string, std::shared_ptr<const BlockDef>>& blocks() const {
        return defs_;
    }

private:
    bool port_bound(const PortRef& p) const;
    void require_unbound(const PortRef& p) const;

    std::string name_;
    NetMode mode_;
    double max_rate_hz_ = 0;
    std::map<std::string, std::shared_ptr<const BlockDef>> defs_;
    std::vector<std::unique_ptr<Instance>> instances_;
    std::vector<Connection> connections_;
    std::vector<ExternalPort> externals_;
    std::vector<TcpBindingDecl> tcp_;
};

// Wraps a single-netlist network as a block whose ports are the network's
// externals. The composite runs as one synchronous process when spawned.
std::shared_ptr<const BlockDef> compose(const std::string& def_name,
                                        std::shared_ptr<const NetworkGraph> inner);

// A live run. Shuts itself down on destruction; shutdown() is idempotent.
class RunHandle {
public:
    RunHandle(SpawnPlan plan, std::string worker_exe);
    ~RunHandle();

    RunHandle(const RunHandle&) = delete;
    RunHandle& operator=(const RunHandle&) = delete;

    // Driver-side endpoints for external ports. A network in port is
    // produced into; a network out port is consumed from.
    QueueProducer external_producer(const std::string& label);
    QueueConsumer external_consumer(const std::string& label);

    // Throws WorkerDied if a worker exited or a TCP bridge failed while
    // the run was live.
    void check();
    std::optional<std::string> failure() const;

    // SIGTERM to every child, up to 5 s of grace, SIGKILL stragglers, join
    // bridges, delete the run's queue directory.
    void shutdown();

    const SpawnPlan& plan() const { return plan_; }
    const std::map<std::string, pid_t>& pids() const { return pids_; }

private:
    void monitor_loop();
    void teardown(bool from_monitor);

    SpawnPlan plan_;
    std::map<std::string, pid_t> pids_;
    std::vector<std::unique_ptr<TcpBridge>> bridges_;
    std::thread monitor_;
    std::atomic<bool> stopping_{false};
    std::atomic<bool> done_{false};
    mutable std::mutex mu_;
    std::optional<std::string> failure_;
    std::string failed_instance_;
    std::set<std::string> dead_;
};

// Creates every queue file fresh, writes worker configs, launches one
// process per instance, and starts TCP bridges. worker_exe resolution:
// explicit argument, then $SBQ_WORKER_EXE, then "sbq" on PATH. Partial
// launch failures roll back already-started workers before throwing.
std::unique_ptr<RunHandle> simulate(const SpawnPlan& plan, std::string worker_exe = "");

struct TimedPacket {
    std::uint64_t cycle;
    Packet packet;
};

struct OracleResult {
    std::map<std::string, std::vector<TimedPacket>> outputs;
    std::uint64_t cycles = 0;
};

// Synchronous reference run: global clock, deterministic evaluation,
// per-label stimulus injected one packet per cycle as space permits.
// Completion is stimulus exhausted plus a quiescent network; exceeding
// horizon_cycles first raises HorizonExceeded.
OracleResult run_oracle(const NetworkGraph& g,
                        const std::map<std::string, std::vector<Packet>>& stimulus,
                        std::uint64_t horizon_cycles);

}  // namespace sbq
