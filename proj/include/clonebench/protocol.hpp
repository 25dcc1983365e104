#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "clonebench/core.hpp"

// Wire protocol for recording and playing sessions. Big-endian throughout.
// A connection starts with the magic "VCBC" and a u16 version in each
// direction, then length-prefixed messages:
//
//   len:u32  type:u8  payload[len-1]
//
//   0x01 HELLO       tick_rate:u32 (millihertz), mode:u8 (0 realtime,
//                    1 synchronous), nvars:u8, then per variable
//                    cardinality:u16, name_len:u8, name bytes
//   0x02 FRAME       episode:u32, index:u32, ts_us:u64, w:u16, h:u16,
//                    fmt:u8 (0 = RGB24), pixels
//   0x03 INPUT_STATE ts_us:u64, k:u8, indices:u8[k]
//   0x04 EMULATE     same layout as INPUT_STATE
//   0x05 RESET       final:u8 (1 = last episode of the session)
//   0x06 SCORE       delta: f64 bits as u64
//   0x07 BYE         empty
//
// Timestamps are sender-side microseconds from session start. A malformed
// length or unknown type is unrecoverable: the connection must drop, no
// resynchronization is attempted.

namespace clonebench {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr uint8_t PROTO_MAGIC[4] = {'V', 'C', 'B', 'C'};
constexpr uint16_t PROTO_VERSION = 1;
constexpr uint32_t PROTO_MAX_PAYLOAD = 1u << 26; // refuse absurd lengths

struct HelloMsg {
  uint32_t tick_rate_mhz = 17500;
  uint8_t mode = 0; // 0 realtime, 1 synchronous
  ActionSpace space;
  bool operator==(const HelloMsg& o) const {
    return tick_rate_mhz == o.tick_rate_mhz && mode == o.mode && space == o.space;
  }
};

struct FrameMsg {
  uint32_t episode = 0;
  uint32_t index = 0;
  uint64_t ts_us = 0;
  uint16_t width = 0;
  uint16_t height = 0;
  uint8_t format = 0; // 0 = RGB24
  std::vector<uint8_t> pixels;
  bool operator==(const FrameMsg& o) const {
    return episode == o.episode && index == o.index && ts_us == o.ts_us && width == o.width &&
           height == o.height && format == o.format && pixels == o.pixels;
  }
};

struct InputStateMsg {
  uint64_t ts_us = 0;
  std::vector<uint8_t> indices; // one entry per action variable
  bool operator==(const InputStateMsg& o) const { return ts_us == o.ts_us && indices == o.indices; }
};

struct EmulateMsg {
  uint64_t ts_us = 0;
  std::vector<uint8_t> indices;
  bool operator==(const EmulateMsg& o) const { return ts_us == o.ts_us && indices == o.indices; }
};

struct ResetMsg {
  uint8_t final_episode = 0;
  bool operator==(const ResetMsg& o) const { return final_episode == o.final_episode; }
};

struct ScoreMsg {
  double delta = 0.0;
  bool operator==(const ScoreMsg& o) const {
    return std::bit_cast<uint64_t>(delta) == std::bit_cast<uint64_t>(o.delta);
  }
};

struct ByeMsg {
  bool operator==(const ByeMsg&) const { return true; }
};

using Message = std::variant<HelloMsg, FrameMsg, InputStateMsg, EmulateMsg, ResetMsg, ScoreMsg, ByeMsg>;

namespace wire {

inline void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }
inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
  b.push_back(static_cast<uint8_t>(v >> 8));
  b.push_back(static_cast<uint8_t>(v));
}
inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<uint8_t>(v >> s));
}
inline void put_u64(std::vector<uint8_t>& b, uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) b.push_back(static_cast<uint8_t>(v >> s));
}

struct Cursor {
  const uint8_t* p;
  size_t left;
  void need(size_t n) const {
    if (left < n) throw ProtocolError("message payload truncated");
  }
  uint8_t u8() {
    need(1);
    --left;
    return *p++;
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint16_t>((p[0] << 8) | p[1]);
    p += 2;
    left -= 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | p[i];
    p += 4;
    left -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
    p += 8;
    left -= 8;
    return v;
  }
  void bytes(uint8_t* dst, size_t n) {
    need(n);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

} // namespace wire

// Encodes one message as a complete wire record: len, type, payload.
inline std::vector<uint8_t> encode_message(const Message& msg) {
  std::vector<uint8_t> payload;
  uint8_t type = 0;
  if (const auto* m = std::get_if<HelloMsg>(&msg)) {
    type = 0x01;
    wire::put_u32(payload, m->tick_rate_mhz);
    wire::put_u8(payload, m->mode);
    if (m->space.variables.size() > 255)
      throw ProtocolError("action space too wide for the wire (max 255 variables)");
    wire::put_u8(payload, static_cast<uint8_t>(m->space.variables.size()));
    for (const auto& v : m->space.variables) {
      if (v.cardinality < 0 || v.cardinality > 0xFFFF)
        throw ProtocolError("variable cardinality does not fit u16");
      if (v.name.size() > 255) throw ProtocolError("variable name longer than 255 bytes");
      wire::put_u16(payload, static_cast<uint16_t>(v.cardinality));
      wire::put_u8(payload, static_cast<uint8_t>(v.name.size()));
      payload.insert(payload.end(), v.name.begin(), v.name.end());
    }
  } else if (const auto* m = std::get_if<FrameMsg>(&msg)) {
    type = 0x02;
    wire::put_u32(payload, m->episode);
    wire::put_u32(payload, m->index);
    wire::put_u64(payload, m->ts_us);
    wire::put_u16(payload, m->width);
    wire::put_u16(payload, m->height);
    wire::put_u8(payload, m->format);
    if (m->pixels.size() != static_cast<size_t>(m->width) * m->height * 3)
      throw ProtocolError("frame pixel buffer does not match its dimensions");
    payload.insert(payload.end(), m->pixels.begin(), m->pixels.end());
  } else if (const auto* m = std::get_if<InputStateMsg>(&msg)) {
    type = 0x03;
    wire::put_u64(payload, m->ts_us);
    if (m->indices.size() > 255) throw ProtocolError("too many action variables for the wire");
    wire::put_u8(payload, static_cast<uint8_t>(m->indices.size()));
    payload.insert(payload.end(), m->indices.begin(), m->indices.end());
  } else if (const auto* m = std::get_if<EmulateMsg>(&msg)) {
    type = 0x04;
    wire::put_u64(payload, m->ts_us);
    if (m->indices.size() > 255) throw ProtocolError("too many action variables for the wire");
    wire::put_u8(payload, static_cast<uint8_t>(m->indices.size()));
    payload.insert(payload.end(), m->indices.begin(), m->indices.end());
  } else if (const auto* m = std::get_if<ResetMsg>(&msg)) {
    type = 0x05;
    wire::put_u8(payload, m->final_episode);
  } else if (const auto* m = std::get_if<ScoreMsg>(&msg)) {
    type = 0x06;
    wire::put_u64(payload, std::bit_cast<uint64_t>(m->delta));
  } else {
    type = 0x07;
  }
  std::vector<uint8_t> out;
  out.reserve(5 + payload.size());
  wire::put_u32(out, static_cast<uint32_t>(1 + payload.size()));
  wire::put_u8(out, type);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

// Decodes the record beginning at data; sets consumed to the record length.
// Throws ProtocolError on truncation, unknown type or payload mismatch.
inline Message decode_message(const uint8_t* data, size_t size, size_t& consumed) {
  wire::Cursor header{data, size};
  const uint32_t len = header.u32();
  if (len < 1) throw ProtocolError("record length below 1 (missing type byte)");
  if (len > PROTO_MAX_PAYLOAD) throw ProtocolError("record length exceeds protocol maximum");
  if (size < 4 + static_cast<size_t>(len)) throw ProtocolError("record truncated");
  consumed = 4 + static_cast<size_t>(len);

  const uint8_t type = data[4];
  wire::Cursor c{data + 5, static_cast<size_t>(len) - 1};
  switch (type) {
    case 0x01: {
      HelloMsg m;
      m.tick_rate_mhz = c.u32();
      m.mode = c.u8();
      const uint8_t nvars = c.u8();
      for (int i = 0; i < nvars; ++i) {
        DiscreteVariable v;
        v.cardinality = c.u16();
        const uint8_t name_len = c.u8();
        v.name.resize(name_len);
        c.bytes(reinterpret_cast<uint8_t*>(v.name.data()), name_len);
        m.space.variables.push_back(std::move(v));
      }
      if (c.left) throw ProtocolError("HELLO payload has trailing bytes");
      return m;
    }
    case 0x02: {
      FrameMsg m;
      m.episode = c.u32();
      m.index = c.u32();
      m.ts_us = c.u64();
      m.width = c.u16();
      m.height = c.u16();
      m.format = c.u8();
      if (m.format != 0) throw ProtocolError("unknown frame format " + std::to_string(m.format));
      const size_t expect = static_cast<size_t>(m.width) * m.height * 3;
      if (c.left != expect)
        throw ProtocolError("frame payload length " + std::to_string(c.left) +
                            " does not match dimensions (" + std::to_string(expect) + ")");
      m.pixels.resize(expect);
      c.bytes(m.pixels.data(), expect);
      return m;
    }
    case 0x03:
    case 0x04: {
      const uint64_t ts = c.u64();
      const uint8_t k = c.u8();
      std::vector<uint8_t> idx(k);
      c.bytes(idx.data(), k);
      if (c.left) throw ProtocolError("input payload has trailing bytes");
      if (type == 0x03) return InputStateMsg{ts, std::move(idx)};
      return EmulateMsg{ts, std::move(idx)};
    }
    case 0x05: {
      ResetMsg m;
      m.final_episode = c.u8();
      if (c.left) throw ProtocolError("RESET payload has trailing bytes");
      return m;
    }
    case 0x06: {
      ScoreMsg m;
      m.delta = std::bit_cast<double>(c.u64());
      if (c.left) throw ProtocolError("SCORE payload has trailing bytes");
      return m;
    }
    case 0x07: {
      if (c.left) throw ProtocolError("BYE payload has trailing bytes");
      return ByeMsg{};
    }
    default:
      throw ProtocolError("unknown message type 0x" + std::to_string(type));
  }
}

inline std::vector<uint8_t> stream_header() {
  std::vector<uint8_t> h(PROTO_MAGIC, PROTO_MAGIC + 4);
  wire::put_u16(h, PROTO_VERSION);
  return h;
}

inline void check_stream_header(const uint8_t* data, size_t size) {
  if (size < 6) throw ProtocolError("stream header truncated");
  if (std::memcmp(data, PROTO_MAGIC, 4) != 0) throw ProtocolError("bad magic, not a VCBC stream");
  const uint16_t version = static_cast<uint16_t>((data[4] << 8) | data[5]);
  if (version != PROTO_VERSION)
    throw ProtocolError("unsupported protocol version " + std::to_string(version));
}

// Helpers between wire index lists and Actions.
inline Action action_from_indices(const std::vector<uint8_t>& idx) {
  Action a;
  a.indices.assign(idx.begin(), idx.end());
  return a;
}

inline std::vector<uint8_t> indices_from_action(const Action& a) {
  std::vector<uint8_t> out;
  out.reserve(a.indices.size());
  for (int i : a.indices) {
    if (i < 0 || i > 255) throw ProtocolError("action index does not fit the wire (u8)");
    out.push_back(static_cast<uint8_t>(i));
  }
  return out;
}

} // namespace clonebench
