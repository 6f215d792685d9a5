#include <doctest.h>

#include <cstring>

#include "sbq/packet.hpp"

using namespace sbq;

TEST_SUITE_BEGIN("packet");

TEST_CASE("zero packet encodes to 64 zero bytes") {
    const auto bytes = encode_packet(Packet{});
    REQUIRE(bytes.size() == kPacketBytes);
    for (auto b : bytes) CHECK(b == 0);
}

TEST_CASE("field placement is little-endian at fixed offsets") {
    Packet p;
    p.flags = 0x04030201;
    p.destination = 0xa1b2c3d4;
    for (std::size_t i = 0; i < kPayloadBytes; ++i)
        p.data[i] = static_cast<std::uint8_t>(0x10 + i);

    const auto bytes = encode_packet(p);
    CHECK(bytes[0] == 0x01);
    CHECK(bytes[1] == 0x02);
    CHECK(bytes[2] == 0x03);
    CHECK(bytes[3] == 0x04);
    CHECK(bytes[4] == 0xd4);
    CHECK(bytes[5] == 0xc3);
    CHECK(bytes[6] == 0xb2);
    CHECK(bytes[7] == 0xa1);
    for (std::size_t i = 0; i < kPayloadBytes; ++i)
        CHECK(bytes[8 + i] == 0x10 + i);
    CHECK(bytes[60] == 0);
    CHECK(bytes[61] == 0);
    CHECK(bytes[62] == 0);
    CHECK(bytes[63] == 0);
}

TEST_CASE("encode then decode returns the original") {
    Packet p;
    p.flags = 0xdeadbeef;
    p.destination = 42;
    for (std::size_t i = 0; i < kPayloadBytes; ++i)
        p.data[i] = static_cast<std::uint8_t>(i * 7 + 3);
    CHECK(decode_packet(encode_packet(p)) == p);
}

TEST_CASE("reserved bytes are ignored on decode and zeroed on re-encode") {
    std::array<std::uint8_t, kPacketBytes> bytes{};
    bytes[60] = 0xff;
    bytes[61] = 0xff;
    bytes[62] = 0xff;
    bytes[63] = 0xff;
    const Packet p = decode_packet(bytes);
    CHECK(p == Packet{});
    const auto again = encode_packet(p);
    CHECK(again[60] == 0);
    CHECK(again[63] == 0);
}

TEST_CASE("decode insists on exactly 64 bytes") {
    std::array<std::uint8_t, 63> short_buf{};
    std::array<std::uint8_t, 65> long_buf{};
    CHECK_THROWS_AS(decode_packet(std::span<const std::uint8_t>(short_buf)), WrongLength);
    CHECK_THROWS_AS(decode_packet(std::span<const std::uint8_t>(long_buf)), WrongLength);
}

TEST_CASE("short payloads are zero-padded, oversized ones refused") {
    const std::uint8_t raw[3] = {9, 8, 7};
    const Packet p(0, 0, std::span<const std::uint8_t>(raw, 3));
    CHECK(p.data[0] == 9);
    CHECK(p.data[1] == 8);
    CHECK(p.data[2] == 7);
    for (std::size_t i = 3; i < kPayloadBytes; ++i) CHECK(p.data[i] == 0);

    std::array<std::uint8_t, kPayloadBytes + 1> big{};
    CHECK_THROWS_AS(Packet(0, 0, std::span<const std::uint8_t>(big)), WrongLength);
}

TEST_CASE("last marker is flag bit zero") {
    Packet p;
    CHECK_FALSE(p.last());
    p.flags = kFlagLast;
    CHECK(p.last());
    p.flags = 0xfffffffe;
    CHECK_FALSE(p.last());
    p.flags = 0xffffffff;
    CHECK(p.last());
}

TEST_SUITE_END();
