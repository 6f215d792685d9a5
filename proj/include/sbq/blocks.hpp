#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbq/channel.hpp"
#include "sbq/netgraph.hpp"

namespace sbq {

// Model registry -------------------------------------------------------------
//
// Blocks are constructed by type name so worker processes can rebuild them
// from a config file. Built-in types:
//
//   inc_loopback  in, out        adds 1 to every payload byte (wrapping)
//   fifo          in, out        passthrough with a small internal buffer
//   mem           req, resp      byte-addressable memory, transaction protocol
//   matmul_tile   west, north,   stores one b value; forwards a east, emits
//                 east, south    psum + a*b south, consuming matched pairs
//   vec_feeder    p0..pN-1 out   per-port fixed streams of 64-bit values
//   const_feeder  p0..pN-1 out   one value repeated per port
//   null_sink     p0..pN-1 in    consumes and discards
//   collector     s0..sC-1 in,   gathers a rows x cols result matrix and
//                 result out     reports per-row arrival cycle spans

bool model_type_exists(const std::string& type);
std::vector<PortDecl> describe_model_ports(const std::string& type,
                                           const nlohmann::json& params);
std::unique_ptr<BlockModel> make_model(const std::string& type,
                                       const nlohmann::json& params);

// 64-bit signed values carried in the low 8 payload bytes.
Packet make_value_packet(std::int64_t v, bool last = false);
std::int64_t packet_value(const Packet& p);

// Memory transactions ---------------------------------------------------------
//
// Payload layout: op (1 byte), address (8 bytes), len (2 bytes), then up to
// 41 data bytes. A logical read or write of L bytes is a burst of
// ceil(L/41) packets whose addresses step by 41; the last packet of a burst
// carries the "last" flag. Every read packet is answered by one data packet;
// a write burst is answered by a single ack after its last packet. A range
// violation is answered with the error op.
namespace txn {

inline constexpr std::uint8_t kOpRead = 0;
inline constexpr std::uint8_t kOpWrite = 1;
inline constexpr std::uint8_t kOpReadResp = 2;
inline constexpr std::uint8_t kOpWriteAck = 3;
inline constexpr std::uint8_t kOpError = 4;

inline constexpr std::size_t kHeaderBytes = 11;
inline constexpr std::size_t kChunkBytes = kPayloadBytes - kHeaderBytes;  // 41

struct Header {
    std::uint8_t op = 0;
    std::uint64_t addr = 0;
    std::uint16_t len = 0;
};

Packet encode(const Header& h, std::span<const std::uint8_t> chunk, bool last,
              std::uint32_t destination = 0);
Header decode_header(const Packet& p);
std::span<const std::uint8_t> chunk_view(const Packet& p);

// Number of packets a burst of len bytes occupies (at least 1).
std::size_t burst_packets(std::size_t len);

}  // namespace txn

// Driver-side endpoint of the transaction protocol. Sends request bursts
// and collects replies, interleaving so long bursts cannot deadlock on
// queue capacity.
class MemClient {
public:
    MemClient(PacketSink& req, PacketSource& resp,
              std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

    void write(std::uint64_t addr, std::span<const std::uint8_t> bytes);
    std::vector<std::uint8_t> read(std::uint64_t addr, std::size_t len);

private:
    void transact(std::vector<Packet> requests, std::size_t expected_responses,
                  std::vector<Packet>& responses);

    PacketSink* req_;
    PacketSource* resp_;
    std::chrono::milliseconds timeout_;
};

// Collector row reports -------------------------------------------------------
//
// The collector streams each finished result row back as a burst: row index,
// the cycle span between the row's first and last arriving element, and the
// row's values (four per packet, "last" flag on the final packet).
struct RowReport {
    std::uint32_t row = 0;
    std::uint64_t cycles = 0;
    std::vector<std::int64_t> values;
};

std::vector<Packet> encode_row_report(const RowReport& r);

class RowReportAssembler {
public:
    // Returns a finished report when p completes one.
    std::optional<RowReport> feed(const Packet& p);

private:
    std::optional<RowReport> partial_;
};

}  // namespace sbq
