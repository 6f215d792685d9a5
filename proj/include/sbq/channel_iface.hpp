#pragma once

namespace sbq {

struct Packet;

// Anything a bridge can push packets into: a shared-memory queue in a live
// run, or an in-process synchronous link under the reference scheduler.
class PacketSink {
public:
    virtual ~PacketSink() = default;
    virtual bool try_send(const Packet& p) = 0;
    virtual bool can_accept() = 0;
};

class PacketSource {
public:
    virtual ~PacketSource() = default;
    virtual bool try_recv(Packet& out) = 0;
};

}  // namespace sbq
