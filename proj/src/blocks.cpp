#include "sbq/blocks.hpp"

#include <cstring>
#include <deque>
#include <map>
#include <thread>

namespace sbq {

namespace {

using nlohmann::json;

std::int64_t param_i64(const json& params, const char* key, std::int64_t fallback,
                       bool required = false) {
    if (auto it = params.find(key); it != params.end()) {
        if (!it->is_number_integer())
            throw ConfigError(std::string("param ") + key + " must be an integer");
        return it->get<std::int64_t>();
    }
    if (required) throw ConfigError(std::string("missing required param ") + key);
    return fallback;
}

std::vector<PortDecl> numbered_ports(const char* prefix, std::size_t n, PortDir dir) {
    std::vector<PortDecl> ports;
    ports.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ports.push_back({prefix + std::to_string(i), dir});
    return ports;
}

// inc_loopback ---------------------------------------------------------------

class IncLoopback final : public BlockModel {
public:
    void on_cycle(CycleIo& io) override {
        if (io.peek(0) && io.can_emit(0)) {
            Packet p = io.take(0);
            for (auto& b : p.data) b = static_cast<std::uint8_t>(b + 1);
            io.emit(0, p);
        }
    }
};

// fifo -----------------------------------------------------------------------

class PassFifo final : public BlockModel {
public:
    explicit PassFifo(std::size_t depth) : depth_(depth) {}

    void on_cycle(CycleIo& io) override {
        if (!buf_.empty() && io.can_emit(0)) {
            io.emit(0, buf_.front());
            buf_.pop_front();
        }
        if (buf_.size() < depth_ && io.peek(0)) buf_.push_back(io.take(0));
    }

    bool idle() const override { return buf_.empty(); }

private:
    std::size_t depth_;
    std::deque<Packet> buf_;
};

// mem ------------------------------------------------------------------------

class MemBlock final : public BlockModel {
public:
    explicit MemBlock(std::size_t size) : mem_(size, 0) {}

    void on_cycle(CycleIo& io) override {
        const Packet* p = io.peek(0);
        if (!p) return;
        const txn::Header h = txn::decode_header(*p);
        const bool bad = h.len > txn::kChunkBytes || h.addr > mem_.size() ||
                         h.len > mem_.size() - h.addr;

        if (h.op == txn::kOpWrite) {
            if (p->last()) {
                if (!io.can_emit(0)) return;  // hold the request until the ack fits
                Packet req = io.take(0);
                const bool failed = bad || burst_error_;
                if (!failed)
                    std::memcpy(mem_.data() + h.addr, txn::chunk_view(req).data(), h.len);
                io.emit(0, txn::encode({failed ? txn::kOpError : txn::kOpWriteAck, h.addr, 0},
                                       {}, true, req.destination));
                burst_error_ = false;
            } else {
                Packet req = io.take(0);
                if (bad || burst_error_)
                    burst_error_ = true;
                else
                    std::memcpy(mem_.data() + h.addr, txn::chunk_view(req).data(), h.len);
            }
        } else if (h.op == txn::kOpRead) {
            if (!io.can_emit(0)) return;
            Packet req = io.take(0);
            if (bad) {
                io.emit(0,
                        txn::encode({txn::kOpError, h.addr, 0}, {}, req.last(), req.destination));
            } else {
                io.emit(0, txn::encode({txn::kOpReadResp, h.addr, h.len},
                                       {mem_.data() + h.addr, h.len}, req.last(),
                                       req.destination));
            }
        } else {
            io.take(0);  // response op on the request port: drop
        }
    }

private:
    std::vector<std::uint8_t> mem_;
    bool burst_error_ = false;
};

// matmul_tile ----------------------------------------------------------------

class MatmulTile final : public BlockModel {
public:
    MatmulTile(std::int64_t b, std::uint32_t mac_delay) : b_(b), mac_delay_(mac_delay) {}

    static constexpr std::size_t kWest = 0, kNorth = 1;
    static constexpr std::size_t kEast = 0, kSouth = 1;

    void on_cycle(CycleIo& io) override {
        if (work_) {
            if (countdown_ > 0) --countdown_;
            if (countdown_ == 0) try_emit(io);
            return;
        }
        // A pair is consumed only when both operands are present; with no
        // delay configured the results leave the same cycle, so the output
        // side must have room too or the tile stalls without consuming.
        if (!io.peek(kWest) || !io.peek(kNorth)) return;
        if (mac_delay_ == 0 && !(io.can_emit(kEast) && io.can_emit(kSouth))) return;
        const std::int64_t a = packet_value(io.take(kWest));
        const std::int64_t psum = packet_value(io.take(kNorth));
        work_ = Work{a, psum + a * b_};
        countdown_ = mac_delay_;
        if (mac_delay_ == 0) try_emit(io);
    }

    bool idle() const override { return !work_.has_value(); }

private:
    struct Work {
        std::int64_t a;
        std::int64_t out;
    };

    void try_emit(CycleIo& io) {
        if (io.can_emit(kEast) && io.can_emit(kSouth)) {
            io.emit(kEast, make_value_packet(work_->a));
            io.emit(kSouth, make_value_packet(work_->out));
            work_.reset();
        }
    }

    std::int64_t b_;
    std::uint32_t mac_delay_;
    std::optional<Work> work_;
    std::uint32_t countdown_ = 0;
};

// vec_feeder / const_feeder ----------------------------------------------------

class VecFeeder final : public BlockModel {
public:
    explicit VecFeeder(std::vector<std::vector<std::int64_t>> streams)
        : streams_(std::move(streams)), pos_(streams_.size(), 0) {}

    void on_cycle(CycleIo& io) override {
        for (std::size_t i = 0; i < streams_.size(); ++i) {
            if (pos_[i] < streams_[i].size() && io.can_emit(i)) {
                const bool last = pos_[i] + 1 == streams_[i].size();
                io.emit(i, make_value_packet(streams_[i][pos_[i]], last));
                ++pos_[i];
            }
        }
    }

    bool idle() const override {
        for (std::size_t i = 0; i < streams_.size(); ++i)
            if (pos_[i] < streams_[i].size()) return false;
        return true;
    }

private:
    std::vector<std::vector<std::int64_t>> streams_;
    std::vector<std::size_t> pos_;
};

// null_sink --------------------------------------------------------------------

class NullSink final : public BlockModel {
public:
    void on_cycle(CycleIo& io) override {
        for (std::size_t i = 0; i < io.in_count(); ++i)
            if (io.peek(i)) io.take(i);
    }
};

// collector ----------------------------------------------------------------------

class Collector final : public BlockModel {
public:
    Collector(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), next_row_(cols, 0), recv_count_(rows, 0),
          first_cycle_(rows, 0), last_cycle_(rows, 0),
          y_(rows, std::vector<std::int64_t>(cols, 0)) {}

    void on_cycle(CycleIo& io) override {
        ++cycle_;
        for (std::size_t c = 0; c < cols_; ++c) {
            if (!io.peek(c)) continue;
            const std::int64_t v = packet_value(io.take(c));
            const std::size_t r = next_row_[c]++;
            if (r >= rows_) continue;  // surplus, drop
            y_[r][c] = v;
            if (recv_count_[r] == 0) first_cycle_[r] = cycle_;
            last_cycle_[r] = cycle_;
            if (++recv_count_[r] == cols_) {
                RowReport rep;
                rep.row = static_cast<std::uint32_t>(r);
                rep.cycles = last_cycle_[r] - first_cycle_[r];
                rep.values = y_[r];
                for (auto& pkt : encode_row_report(rep)) out_.push_back(pkt);
            }
        }
        if (!out_.empty() && io.can_emit(0)) {
            io.emit(0, out_.front());
            out_.pop_front();
        }
    }

    bool idle() const override { return out_.empty(); }

private:
    std::size_t rows_, cols_;
    std::vector<std::size_t> next_row_;
    std::vector<std::size_t> recv_count_;
    std::vector<std::uint64_t> first_cycle_, last_cycle_;
    std::vector<std::vector<std::int64_t>> y_;
    std::deque<Packet> out_;
    std::uint64_t cycle_ = 0;
};

// registry ---------------------------------------------------------------------

std::vector<std::vector<std::int64_t>> parse_streams(const json& params) {
    auto it = params.find("streams");
    if (it == params.end() || !it->is_array())
        throw ConfigError("vec_feeder requires a streams array");
    std::vector<std::vector<std::int64_t>> streams;
    for (const auto& s : *it) {
        if (!s.is_array()) throw ConfigError("vec_feeder streams must be arrays");
        streams.push_back(s.get<std::vector<std::int64_t>>());
    }
    if (streams.empty()) throw ConfigError("vec_feeder requires at least one stream");
    return streams;
}

struct ModelEntry {
    std::vector<PortDecl> (*describe)(const json&);
    std::unique_ptr<BlockModel> (*make)(const json&);
};

const std::map<std::string, ModelEntry>& registry() {
    static const std::map<std::string, ModelEntry> reg = {
        {"inc_loopback",
         {[](const json&) {
              return std::vector<PortDecl>{{"in", PortDir::In}, {"out", PortDir::Out}};
          },
          [](const json&) -> std::unique_ptr<BlockModel> {
              return std::make_unique<IncLoopback>();
          }}},
        {"fifo",
         {[](const json&) {
              return std::vector<PortDecl>{{"in", PortDir::In}, {"out", PortDir::Out}};
          },
          [](const json& p) -> std::unique_ptr<BlockModel> {
              const auto depth = param_i64(p, "depth", 2);
              if (depth < 1) throw ConfigError("fifo depth must be >= 1");
              return std::make_unique<PassFifo>(static_cast<std::size_t>(depth));
          }}},
        {"mem",
         {[](const json&) {
              return std::vector<PortDecl>{{"req", PortDir::In}, {"resp", PortDir::Out}};
          },
          [](const json& p) -> std::unique_ptr<BlockModel> {
              const auto size = param_i64(p, "size", 65536);
              if (size < 0) throw ConfigError("mem size must be >= 0");
              return std::make_unique<MemBlock>(static_cast<std::size_t>(size));
          }}},
        {"matmul_tile",
         {[](const json&) {
              return std::vector<PortDecl>{{"west", PortDir::In},
                                           {"north", PortDir::In},
                                           {"east", PortDir::Out},
                                           {"south", PortDir::Out}};
          },
          [](const json& p) -> std::unique_ptr<BlockModel> {
              const auto b = param_i64(p, "b", 0, /*required=*/true);
              const auto d = param_i64(p, "mac_delay", 0);
              if (d < 0) throw ConfigError("mac_delay must be >= 0");
              return std::make_unique<MatmulTile>(b, static_cast<std::uint32_t>(d));
          }}},
        {"vec_feeder",
         {[](const json& p) {
              return numbered_ports("p", parse_streams(p).size(), PortDir::Out);
          },
          [](const json& p) -> std::unique_ptr<BlockModel> {
              return std::make_unique<VecFeeder>(parse_streams(p));
          }}},
        {"const_feeder",
         {[](const json& p) {
              const auto n = param_i64(p, "ports", 0, true);
              if (n < 1) throw ConfigError("const_feeder needs ports >= 1");
              return numbered_ports("p", static_cast<std::size_t>(n), PortDir::Out);
          },
          [](const json& p) -> std::unique_ptr<BlockModel> {
              const auto n = param_i64(p, "ports", 0, true);
              const auto value = param_i64(p, "value", 0);
              const auto count = param_i64(p, "count", 0, true);
              if (n < 1 || count < 0) throw ConfigError("bad const_feeder params");
              std::vector<std::vector<std::int64_t>> streams(
                  static_cast<std::size_t>(n),
                  std::vector<std::int64_t>(static_cast<std::size_t>(count), value));
              return std::make_unique<VecFeeder>(std::move(streams));
          }}},
        {"null_sink",
         {[](const json& p) {
              const auto n = param_i64(p, "ports", 0, true);
              if (n < 1) throw ConfigError("null_sink needs ports >= 1");
              return numbered_ports("p", static_cast<std::size_t>(n), PortDir::In);
          },
          [](const json&) -> std::unique_ptr<BlockModel> {
              return std::make_unique<NullSink>();
          }}},
        {"collector",
         {[](const json& p) {
              const auto cols = param_i64(p, "cols", 0, true);
              if (cols < 1) throw ConfigError("collector needs cols >= 1");
              auto ports = numbered_ports("s", static_cast<std::size_t>(cols), PortDir::In);
              ports.push_back({"result", PortDir::Out});
              return ports;
          },
          [](const json& p) -> std::unique_ptr<BlockModel> {
              const auto rows = param_i64(p, "rows", 0, true);
              const auto cols = param_i64(p, "cols", 0, true);
              if (rows < 1 || cols < 1) throw ConfigError("bad collector shape");
              return std::make_unique<Collector>(static_cast<std::size_t>(rows),
                                                 static_cast<std::size_t>(cols));
          }}},
    };
    return reg;
}

}  // namespace

bool model_type_exists(const std::string& type) { return registry().count(type) != 0; }

std::vector<PortDecl> describe_model_ports(const std::string& type, const json& params) {
    auto it = registry().find(type);
    if (it == registry().end()) throw ConfigError("unknown block type: " + type);
    return it->second.describe(params);
}

std::unique_ptr<BlockModel> make_model(const std::string& type, const json& params) {
    auto it = registry().find(type);
    if (it == registry().end()) throw ConfigError("unknown block type: " + type);
    return it->second.make(params);
}

Packet make_value_packet(std::int64_t v, bool last) {
    Packet p;
    p.flags = last ? kFlagLast : 0;
    detail::store_le64(p.data.data(), static_cast<std::uint64_t>(v));
    return p;
}

std::int64_t packet_value(const Packet& p) {
    return static_cast<std::int64_t>(detail::load_le64(p.data.data()));
}

// txn ------------------------------------------------------------------------

namespace txn {

Packet encode(const Header& h, std::span<const std::uint8_t> chunk, bool last,
              std::uint32_t destination) {
    if (chunk.size() > kChunkBytes)
        throw WrongLength("transaction chunk is " + std::to_string(chunk.size()) +
                          " bytes, limit is " + std::to_string(kChunkBytes));
    Packet p;
    p.flags = last ? kFlagLast : 0;
    p.destination = destination;
    p.data[0] = h.op;
    detail::store_le64(p.data.data() + 1, h.addr);
    detail::store_le16(p.data.data() + 9, h.len);
    if (!chunk.empty()) std::memcpy(p.data.data() + kHeaderBytes, chunk.data(), chunk.size());
    return p;
}

Header decode_header(const Packet& p) {
    Header h;
    h.op = p.data[0];
    h.addr = detail::load_le64(p.data.data() + 1);
    h.len = detail::load_le16(p.data.data() + 9);
    return h;
}

std::span<const std::uint8_t> chunk_view(const Packet& p) {
    const Header h = decode_header(p);
    const std::size_t n = std::min<std::size_t>(h.len, kChunkBytes);
    return {p.data.data() + kHeaderBytes, n};
}

std::size_t burst_packets(std::size_t len) {
    return len == 0 ? 1 : (len + kChunkBytes - 1) / kChunkBytes;
}

}  // namespace txn

// MemClient --------------------------------------------------------------------

MemClient::MemClient(PacketSink& req, PacketSource& resp, std::chrono::milliseconds timeout)
    : req_(&req), resp_(&resp), timeout_(timeout) {}

void MemClient::transact(std::vector<Packet> requests, std::size_t expected_responses,
                         std::vector<Packet>& responses) {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::size_t sent = 0;
    while (responses.size() < expected_responses) {
        bool progress = false;
        if (sent < requests.size() && req_->try_send(requests[sent])) {
            ++sent;
            progress = true;
        }
        Packet p;
        while (responses.size() < expected_responses && resp_->try_recv(p)) {
            responses.push_back(p);
            progress = true;
        }
        if (!progress) {
            if (std::chrono::steady_clock::now() > deadline)
                throw Timeout("memory transaction timed out");
            std::this_thread::sleep_for(std::chrono::microseconds(5));
        }
    }
}

void MemClient::write(std::uint64_t addr, std::span<const std::uint8_t> bytes) {
    const std::size_t n = txn::burst_packets(bytes.size());
    std::vector<Packet> reqs;
    reqs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t off = k * txn::kChunkBytes;
        const std::size_t len = std::min(txn::kChunkBytes, bytes.size() - off);
        reqs.push_back(txn::encode({txn::kOpWrite, addr + off, static_cast<std::uint16_t>(len)},
                                   bytes.subspan(off, len), k + 1 == n));
    }
    std::vector<Packet> resp;
    transact(std::move(reqs), 1, resp);
    const auto h = txn::decode_header(resp[0]);
    if (h.op == txn::kOpError) throw OutOfRange("write rejected at address " + std::to_string(h.addr));
    if (h.op != txn::kOpWriteAck) throw ProtocolError("unexpected op in write reply");
}

std::vector<std::uint8_t> MemClient::read(std::uint64_t addr, std::size_t len) {
    const std::size_t n = txn::burst_packets(len);
    std::vector<Packet> reqs;
    reqs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t off = k * txn::kChunkBytes;
        const std::size_t chunk = len == 0 ? 0 : std::min(txn::kChunkBytes, len - off);
        reqs.push_back(txn::encode({txn::kOpRead, addr + off, static_cast<std::uint16_t>(chunk)},
                                   {}, k + 1 == n));
    }
    std::vector<Packet> resp;
    transact(std::move(reqs), n, resp);
    std::vector<std::uint8_t> out;
    out.reserve(len);
    for (const auto& p : resp) {
        const auto h = txn::decode_header(p);
        if (h.op == txn::kOpError)
            throw OutOfRange("read rejected at address " + std::to_string(h.addr));
        if (h.op != txn::kOpReadResp) throw ProtocolError("unexpected op in read reply");
        const auto view = txn::chunk_view(p);
        out.insert(out.end(), view.begin(), view.end());
    }
    if (out.size() != len) throw ProtocolError("read returned wrong byte count");
    return out;
}

// Row reports --------------------------------------------------------------------

namespace {

constexpr std::size_t kReportValuesPerPacket = 4;
constexpr std::size_t kReportHeaderBytes = 16;  // row u32, cycles u64, count u8, start u8, pad

}  // namespace

std::vector<Packet> encode_row_report(const RowReport& r) {
    const std::size_t chunks =
        r.values.empty() ? 1
                         : (r.values.size() + kReportValuesPerPacket - 1) / kReportValuesPerPacket;
    std::vector<Packet> out;
    out.reserve(chunks);
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t start = c * kReportValuesPerPacket;
        const std::size_t count =
            std::min(kReportValuesPerPacket, r.values.size() - start);
        Packet p;
        p.flags = (c + 1 == chunks) ? kFlagLast : 0;
        detail::store_le32(p.data.data(), r.row);
        detail::store_le64(p.data.data() + 4, r.cycles);
        p.data[12] = static_cast<std::uint8_t>(count);
        p.data[13] = static_cast<std::uint8_t>(start);
        for (std::size_t i = 0; i < count; ++i)
            detail::store_le64(p.data.data() + kReportHeaderBytes + i * 8,
                               static_cast<std::uint64_t>(r.values[start + i]));
        out.push_back(p);
    }
    return out;
}

std::optional<RowReport> RowReportAssembler::feed(const Packet& p) {
    const std::uint32_t row = detail::load_le32(p.data.data());
    const std::uint64_t cycles = detail::load_le64(p.data.data() + 4);
    const std::size_t count = p.data[12];
    const std::size_t start = p.data[13];
    if (!partial_) {
        partial_ = RowReport{row, cycles, {}};
    } else if (partial_->row != row) {
        throw ProtocolError("interleaved row reports");
    }
    if (partial_->values.size() != start) throw ProtocolError("row report chunk out of order");
    for (std::size_t i = 0; i < count; ++i)
        partial_->values.push_back(static_cast<std::int64_t>(
            detail::load_le64(p.data.data() + kReportHeaderBytes + i * 8)));
    if (p.last()) {
        auto done = std::move(*partial_);
        partial_.reset();
        return done;
    }
    return std::nullopt;
}

}  // namespace sbq
