#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>

#include "sbq/errors.hpp"

namespace sbq {

// Fixed 64-byte wire format, little-endian integers:
//
//   offset  size  field
//        0     4  flags        bit 0 = "last" marker, bits 1..31 opaque
//        4     4  destination  routing tag, opaque to the transport
//        8    52  data         payload, zero-padded
//       60     4  reserved     encodes as zero, ignored on decode
//
// One packet is exactly one queue slot and one cache line.
inline constexpr std::size_t kPacketBytes = 64;
inline constexpr std::size_t kPayloadBytes = 52;
inline constexpr std::uint32_t kFlagLast = 1u;

struct Packet {
    std::uint32_t flags = 0;
    std::uint32_t destination = 0;
    std::array<std::uint8_t, kPayloadBytes> data{};

    Packet() = default;

    // Payloads shorter than 52 bytes are zero-padded; longer ones are refused.
    Packet(std::uint32_t flags_, std::uint32_t destination_,
           std::span<const std::uint8_t> payload)
        : flags(flags_), destination(destination_) {
        if (payload.size() > kPayloadBytes) {
            throw WrongLength("packet payload is " + std::to_string(payload.size()) +
                              " bytes, limit is " + std::to_string(kPayloadBytes));
        }
        if (!payload.empty()) {
            std::memcpy(data.data(), payload.data(), payload.size());
        }
    }

    bool last() const { return (flags & kFlagLast) != 0; }

    friend bool operator==(const Packet& a, const Packet& b) {
        return a.flags == b.flags && a.destination == b.destination && a.data == b.data;
    }
};

namespace detail {

inline void store_le32(std::uint8_t* dst, std::uint32_t v) {
    dst[0] = static_cast<std::uint8_t>(v);
    dst[1] = static_cast<std::uint8_t>(v >> 8);
    dst[2] = static_cast<std::uint8_t>(v >> 16);
    dst[3] = static_cast<std::uint8_t>(v >> 24);
}

inline std::uint32_t load_le32(const std::uint8_t* src) {
    return static_cast<std::uint32_t>(src[0]) |
           static_cast<std::uint32_t>(src[1]) << 8 |
           static_cast<std::uint32_t>(src[2]) << 16 |
           static_cast<std::uint32_t>(src[3]) << 24;
}

inline void store_le64(std::uint8_t* dst, std::uint64_t v) {
    store_le32(dst, static_cast<std::uint32_t>(v));
    store_le32(dst + 4, static_cast<std::uint32_t>(v >> 32));
}

inline std::uint64_t load_le64(const std::uint8_t* src) {
    return static_cast<std::uint64_t>(load_le32(src)) |
           static_cast<std::uint64_t>(load_le32(src + 4)) << 32;
}

inline void store_le16(std::uint8_t* dst, std::uint16_t v) {
    dst[0] = static_cast<std::uint8_t>(v);
    dst[1] = static_cast<std::uint8_t>(v >> 8);
}

inline std::uint16_t load_le16(const std::uint8_t* src) {
    return static_cast<std::uint16_t>(src[0] | src[1] << 8);
}

}  // namespace detail

// Serializes into a caller-provided 64-byte slot. Reserved bytes are zeroed.
inline void encode_packet(const Packet& p, std::uint8_t* dst) {
    detail::store_le32(dst, p.flags);
    detail::store_le32(dst + 4, p.destination);
    std::memcpy(dst + 8, p.data.data(), kPayloadBytes);
    std::memset(dst + 60, 0, 4);
}

inline std::array<std::uint8_t, kPacketBytes> encode_packet(const Packet& p) {
    std::array<std::uint8_t, kPacketBytes> out;
    encode_packet(p, out.data());
    return out;
}

// Reserved bytes are ignored, so any 64-byte buffer decodes.
inline Packet decode_packet_raw(const std::uint8_t* src) {
    Packet p;
    p.flags = detail::load_le32(src);
    p.destination = detail::load_le32(src + 4);
    std::memcpy(p.data.data(), src + 8, kPayloadBytes);
    return p;
}

inline Packet decode_packet(std::span<const std::uint8_t> bytes) {
    if (bytes.size() != kPacketBytes) {
        throw WrongLength("packet buffer is " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(kPacketBytes));
    }
    return decode_packet_raw(bytes.data());
}

}  // namespace sbq
