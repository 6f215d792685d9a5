#include "sbq/syncnet.hpp"

#include <map>

#include "sbq/blocks.hpp"
#include "sbq/netgraph.hpp"

namespace sbq {

namespace {

std::unique_ptr<BlockModel> instantiate_model(const Instance& inst) {
    const BlockDef& def = inst.def();
    if (def.inner) return make_net_model(def.inner);
    return make_model(def.type, def.params);
}

PortDir bound_dir(const PortRef& p) { return p.inst->def().ports[p.port].dir; }

}  // namespace

struct SyncNet::Impl {
    struct Station {
        const Instance* inst = nullptr;
        std::unique_ptr<BlockModel> model;
        std::vector<std::unique_ptr<RxBridge>> rx;
        std::vector<std::unique_ptr<TxBridge>> tx;
        std::unique_ptr<CycleIo> io;
    };

    std::vector<std::unique_ptr<SyncLink>> links;
    std::map<std::string, std::unique_ptr<SyncLink>> ext_in;
    std::map<std::string, std::unique_ptr<SyncLink>> ext_out;
    std::vector<std::string> in_labels;
    std::vector<std::string> out_labels;
    std::vector<Station> stations;
    std::uint64_t cycle = 0;
};

SyncNet::SyncNet(const NetworkGraph& g) : impl_(std::make_unique<Impl>()) {
    if (!g.tcp_bindings().empty())
        throw ModeMismatch("network '" + g.name() +
                           "' has TCP bindings and cannot run synchronously");

    auto& im = *impl_;
    const auto& insts = g.instances();

    std::vector<std::vector<PacketSource*>> sources(insts.size());
    std::vector<std::vector<PacketSink*>> sinks(insts.size());
    for (std::size_t i = 0; i < insts.size(); ++i) {
        sources[i].assign(insts[i]->def().ports.size(), nullptr);
        sinks[i].assign(insts[i]->def().ports.size(), nullptr);
    }

    auto bind_in = [&](const PortRef& p, PacketSource* s) {
        auto& slot = sources[p.inst->id()][p.port];
        if (slot) throw AlreadyBound(p.str() + " is bound twice");
        slot = s;
    };
    auto bind_out = [&](const PortRef& p, PacketSink* s) {
        auto& slot = sinks[p.inst->id()][p.port];
        if (slot) throw AlreadyBound(p.str() + " is bound twice");
        slot = s;
    };

    for (const auto& c : g.connections()) {
        im.links.push_back(std::make_unique<SyncLink>());
        bind_out(c.from, im.links.back().get());
        bind_in(c.to, im.links.back().get());
    }
    for (const auto& e : g.externals()) {
        auto link = std::make_unique<SyncLink>();
        if (bound_dir(e.port) == PortDir::In) {
            bind_in(e.port, link.get());
            im.in_labels.push_back(e.label);
            im.ext_in.emplace(e.label, std::move(link));
        } else {
            bind_out(e.port, link.get());
            im.out_labels.push_back(e.label);
            im.ext_out.emplace(e.label, std::move(link));
        }
    }

    for (std::size_t i = 0; i < insts.size(); ++i) {
        Impl::Station st;
        st.inst = insts[i].get();
        st.model = instantiate_model(*st.inst);
        std::vector<RxBridge*> ins;
        std::vector<TxBridge*> outs;
        const auto& ports = st.inst->def().ports;
        for (std::size_t p = 0; p < ports.size(); ++p) {
            const PortRef ref{const_cast<Instance*>(st.inst), p};
            if (ports[p].dir == PortDir::In) {
                if (!sources[i][p]) throw UnboundPort(ref.str() + " is not connected");
                st.rx.push_back(std::make_unique<RxBridge>(*sources[i][p]));
                ins.push_back(st.rx.back().get());
            } else {
                if (!sinks[i][p]) throw UnboundPort(ref.str() + " is not connected");
                st.tx.push_back(std::make_unique<TxBridge>(*sinks[i][p]));
                outs.push_back(st.tx.back().get());
            }
        }
        st.io = std::make_unique<CycleIo>(std::move(ins), std::move(outs));
        im.stations.push_back(std::move(st));
    }
}

SyncNet::~SyncNet() = default;
SyncNet::SyncNet(SyncNet&&) noexcept = default;

bool SyncNet::step_cycle() {
    bool moved = false;
    for (auto& st : impl_->stations) moved = st.io->run_cycle(*st.model) || moved;
    ++impl_->cycle;
    return moved;
}

void SyncNet::commit_links() {
    for (auto& l : impl_->links) l->commit();
    for (auto& [label, l] : impl_->ext_in) l->commit();
    for (auto& [label, l] : impl_->ext_out) l->commit();
}

SyncLink& SyncNet::external_in(const std::string& label) {
    auto it = impl_->ext_in.find(label);
    if (it == impl_->ext_in.end())
        throw GraphError("no external input labeled '" + label + "'");
    return *it->second;
}

SyncLink& SyncNet::external_out(const std::string& label) {
    auto it = impl_->ext_out.find(label);
    if (it == impl_->ext_out.end())
        throw GraphError("no external output labeled '" + label + "'");
    return *it->second;
}

const std::vector<std::string>& SyncNet::external_in_labels() const {
    return impl_->in_labels;
}

const std::vector<std::string>& SyncNet::external_out_labels() const {
    return impl_->out_labels;
}

std::uint64_t SyncNet::cycle() const { return impl_->cycle; }

bool SyncNet::quiescent() const {
    for (const auto& l : impl_->links)
        if (!l->idle()) return false;
    for (const auto& [label, l] : impl_->ext_in)
        if (!l->idle()) return false;
    for (const auto& [label, l] : impl_->ext_out)
        if (!l->idle()) return false;
    for (const auto& st : impl_->stations) {
        if (!st.model->idle()) return false;
        for (const auto& rx : st.rx)
            if (rx->valid()) return false;
        for (const auto& tx : st.tx)
            if (tx->has_pending()) return false;
    }
    return true;
}

namespace {

class NestedNetModel final : public BlockModel {
public:
    explicit NestedNetModel(std::shared_ptr<const NetworkGraph> inner)
        : inner_(std::move(inner)), net_(*inner_) {
        for (const auto& e : inner_->externals()) {
            if (bound_dir(e.port) == PortDir::In)
                in_labels_.push_back(e.label);
            else
                out_labels_.push_back(e.label);
        }
    }

    void on_cycle(CycleIo& io) override {
        for (std::size_t i = 0; i < in_labels_.size(); ++i) {
            SyncLink& link = net_.external_in(in_labels_[i]);
            if (io.peek(i) && link.can_accept()) link.try_send(io.take(i));
        }
        net_.step_cycle();
        for (std::size_t o = 0; o < out_labels_.size(); ++o) {
            SyncLink& link = net_.external_out(out_labels_[o]);
            if (link.has_visible() && io.can_emit(o)) {
                Packet p;
                link.try_recv(p);
                io.emit(o, p);
            }
        }
        net_.commit_links();
    }

    bool idle() const override { return net_.quiescent(); }

private:
    std::shared_ptr<const NetworkGraph> inner_;
    SyncNet net_;
    std::vector<std::string> in_labels_;
    std::vector<std::string> out_labels_;
};

}  // namespace

std::unique_ptr<BlockModel> make_net_model(std::shared_ptr<const NetworkGraph> inner) {
    if (!inner) throw InvalidParam("net model requires a network");
    return std::make_unique<NestedNetModel>(std::move(inner));
}

}  // namespace sbq
