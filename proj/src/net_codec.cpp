#include "fedcast/net.hpp"

#include <bit>

#include <zlib.h>

namespace fedcast::net {

std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

namespace {

struct Writer {
  std::vector<std::uint8_t> buf;

  void u8(std::uint8_t v) { buf.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void word(std::uint64_t v, std::uint8_t nbytes) {
    for (int i = 0; i < nbytes; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
};

struct Reader {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) fail(Err::Truncated, "payload ends mid-field");
  }
  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::uint64_t word(std::uint8_t nbytes) {
    need(nbytes);
    std::uint64_t v = 0;
    for (int i = 0; i < nbytes; ++i) v |= static_cast<std::uint64_t>(data[pos++]) << (8 * i);
    return v;
  }
  std::size_t remaining() const { return data.size() - pos; }
};

void put_config(Writer& w, const AssignConfig& c) {
  w.u8(c.arch);
  w.u32(c.clients);
  w.u32(c.window);
  w.u32(c.horizon);
  w.u32(c.features);
  w.u32(c.hidden);
  w.u32(c.local_epochs);
  w.u32(c.batch);
  w.f64(c.lr);
  w.u64(c.seed);
  w.f64(c.dp_clip);
  w.f64(c.dp_noise);
  w.f64(c.topk);
  w.u8(c.secure_agg);
  w.u32(c.quant_bits);
  w.u32(c.mask_bits);
  w.u32(c.stride);
  w.f64(c.frac_train);
  w.f64(c.frac_val);
  w.f64(c.frac_test);
  w.u8(c.gap_policy);
}

AssignConfig get_config(Reader& r) {
  AssignConfig c;
  c.arch = r.u8();
  c.clients = r.u32();
  c.window = r.u32();
  c.horizon = r.u32();
  c.features = r.u32();
  c.hidden = r.u32();
  c.local_epochs = r.u32();
  c.batch = r.u32();
  c.lr = r.f64();
  c.seed = r.u64();
  c.dp_clip = r.f64();
  c.dp_noise = r.f64();
  c.topk = r.f64();
  c.secure_agg = r.u8();
  c.quant_bits = r.u32();
  c.mask_bits = r.u32();
  c.stride = r.u32();
  c.frac_train = r.f64();
  c.frac_val = r.f64();
  c.frac_test = r.f64();
  c.gap_policy = r.u8();
  return c;
}

/// Bounds a wire count by the bytes actually present so a hostile length
/// can never trigger a huge allocation.
std::uint32_t checked_count(Reader& r, std::size_t elem_bytes) {
  const std::uint32_t count = r.u32();
  if (elem_bytes > 0 && static_cast<std::size_t>(count) * elem_bytes > r.remaining())
    fail(Err::Truncated, "element count exceeds the payload");
  return count;
}

struct PayloadBuilder {
  MsgType type;
  Writer w;

  void operator()(const Join& m) {
    type = MsgType::join;
    w.u32(m.client_id);
    w.u64(m.layout_hash);
  }
  void operator()(const Assign& m) {
    type = MsgType::assign;
    w.u32(m.round);
    put_config(w, m.config);
    w.u32(static_cast<std::uint32_t>(m.participants.size()));
    for (std::uint32_t id : m.participants) w.u32(id);
    w.u32(static_cast<std::uint32_t>(m.global.size()));
    for (double v : m.global) w.f64(v);
  }
  void operator()(const Update& m) {
    type = MsgType::update;
    w.u32(m.round);
    w.u8(static_cast<std::uint8_t>(m.encoding));
    w.u32(m.sample_count);
    switch (m.encoding) {
      case Encoding::dense:
        w.u32(static_cast<std::uint32_t>(m.dense.size()));
        for (double v : m.dense) w.f64(v);
        break;
      case Encoding::sparse:
        if (m.indices.size() != m.values.size())
          fail(Err::BadConfig, "sparse index and value lengths differ");
        w.u32(static_cast<std::uint32_t>(m.indices.size()));
        for (std::uint32_t idx : m.indices) w.u32(idx);
        for (double v : m.values) w.f64(v);
        break;
      case Encoding::masked:
        if (m.words.empty()) fail(Err::BadConfig, "masked update without words");
        if (m.word_bytes < 1 || m.word_bytes > 8) fail(Err::BadConfig, "word width must be 1..8 bytes");
        w.u32(static_cast<std::uint32_t>(m.words.size()));
        for (std::uint64_t v : m.words) w.word(v, m.word_bytes);
        break;
    }
  }
  void operator()(const Ack& m) {
    type = MsgType::ack;
    w.u32(m.round);
    w.u8(m.accepted ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(m.reason.size()));
    for (char c : m.reason) w.u8(static_cast<std::uint8_t>(c));
  }
  void operator()(const Bye&) { type = MsgType::bye; }
};

}  // namespace

std::vector<std::uint8_t> encode(const Message& msg) {
  PayloadBuilder pb;
  std::visit(pb, msg);
  const std::vector<std::uint8_t>& payload = pb.w.buf;
  if (payload.size() > kMaxPayload) fail(Err::BadConfig, "payload too large to frame");

  Writer frame;
  frame.buf.reserve(kFrameOverhead + payload.size());
  for (std::uint8_t b : kMagic) frame.u8(b);
  frame.u8(static_cast<std::uint8_t>(pb.type));
  frame.u8(0);  // flags, reserved
  frame.u32(static_cast<std::uint32_t>(payload.size()));
  frame.buf.insert(frame.buf.end(), payload.begin(), payload.end());
  frame.u32(crc32_bytes(payload));
  return frame.buf;
}

Message decode(std::span<const std::uint8_t> bytes) {
  const std::size_t prefix = std::min<std::size_t>(bytes.size(), kMagic.size());
  for (std::size_t i = 0; i < prefix; ++i) {
    if (bytes[i] != kMagic[i]) fail(Err::BadMagic, "bad magic");
  }
  if (bytes.size() < kFrameOverhead) fail(Err::Truncated, "incomplete frame header");

  const std::uint8_t type = bytes[4];
  std::uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i) payload_len |= static_cast<std::uint32_t>(bytes[6 + i]) << (8 * i);
  if (payload_len > kMaxPayload) fail(Err::Truncated, "implausible payload length");
  if (bytes.size() != kFrameOverhead + payload_len) fail(Err::Truncated, "frame length mismatch");

  std::span<const std::uint8_t> payload = bytes.subspan(10, payload_len);
  std::uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) {
    stored_crc |= static_cast<std::uint32_t>(bytes[10 + payload_len + i]) << (8 * i);
  }
  if (stored_crc != crc32_bytes(payload)) fail(Err::CrcMismatch, "payload checksum failed");

  if (type < 1 || type > 5) fail(Err::UnknownType, "unknown message type " + std::to_string(type));

  Reader r{payload};
  Message out;
  switch (static_cast<MsgType>(type)) {
    case MsgType::join: {
      Join m;
      m.client_id = r.u32();
      m.layout_hash = r.u64();
      out = m;
      break;
    }
    case MsgType::assign: {
      Assign m;
      m.round = r.u32();
      m.config = get_config(r);
      const std::uint32_t npart = checked_count(r, 4);
      m.participants.reserve(npart);
      for (std::uint32_t i = 0; i < npart; ++i) m.participants.push_back(r.u32());
      const std::uint32_t nval = checked_count(r, 8);
      m.global.reserve(nval);
      for (std::uint32_t i = 0; i < nval; ++i) m.global.push_back(r.f64());
      out = m;
      break;
    }
    case MsgType::update: {
      Update m;
      m.round = r.u32();
      const std::uint8_t enc = r.u8();
      if (enc > 2) fail(Err::UnknownType, "unknown update encoding " + std::to_string(enc));
      m.encoding = static_cast<Encoding>(enc);
      m.sample_count = r.u32();
      switch (m.encoding) {
        case Encoding::dense: {
          const std::uint32_t count = checked_count(r, 8);
          m.dense.reserve(count);
          for (std::uint32_t i = 0; i < count; ++i) m.dense.push_back(r.f64());
          break;
        }
        case Encoding::sparse: {
          const std::uint32_t count = checked_count(r, 12);
          m.indices.reserve(count);
          m.values.reserve(count);
          for (std::uint32_t i = 0; i < count; ++i) m.indices.push_back(r.u32());
          for (std::uint32_t i = 0; i < count; ++i) m.values.push_back(r.f64());
          break;
        }
        case Encoding::masked: {
          const std::uint32_t count = checked_count(r, 1);
          if (count == 0) fail(Err::Truncated, "masked update without words");
          if (r.remaining() % count != 0) fail(Err::Truncated, "masked body does not tile into words");
          const std::size_t wb = r.remaining() / count;
          if (wb < 1 || wb > 8) fail(Err::Truncated, "masked word width out of range");
          m.word_bytes = static_cast<std::uint8_t>(wb);
          m.words.reserve(count);
          for (std::uint32_t i = 0; i < count; ++i) m.words.push_back(r.word(m.word_bytes));
          break;
        }
      }
      out = m;
      break;
    }
    case MsgType::ack: {
      Ack m;
      m.round = r.u32();
      m.accepted = r.u8() != 0;
      const std::uint32_t len = checked_count(r, 1);
      m.reason.reserve(len);
      for (std::uint32_t i = 0; i < len; ++i) m.reason.push_back(static_cast<char>(r.u8()));
      out = m;
      break;
    }
    case MsgType::bye: {
      out = Bye{};
      break;
    }
  }
  if (r.pos != payload.size()) fail(Err::Truncated, "trailing bytes after the payload");
  return out;
}

std::vector<std::uint8_t> encode_dense_values(std::span<const double> values) {
  Writer w;
  w.buf.reserve(4 + 8 * values.size());
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (double v : values) w.f64(v);
  return w.buf;
}

std::vector<double> decode_dense_values(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  const std::uint32_t count = checked_count(r, 8);
  std::vector<double> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) out.push_back(r.f64());
  if (r.pos != bytes.size()) fail(Err::Truncated, "trailing bytes after the weights");
  return out;
}

AssignConfig snapshot_config(const fed::FederationConfig& cfg, const data::PipelineParams& pipeline) {
  AssignConfig c;
  c.arch = cfg.model.arch == model::ModelArch::lstm ? 1 : 0;
  c.clients = static_cast<std::uint32_t>(cfg.clients);
  c.window = static_cast<std::uint32_t>(cfg.model.window);
  c.horizon = static_cast<std::uint32_t>(cfg.model.horizon);
  c.features = static_cast<std::uint32_t>(cfg.model.features);
  c.hidden = static_cast<std::uint32_t>(cfg.model.hidden);
  c.local_epochs = static_cast<std::uint32_t>(cfg.local_epochs);
  c.batch = static_cast<std::uint32_t>(cfg.batch);
  c.lr = cfg.lr;
  c.seed = cfg.seed;
  c.dp_clip = cfg.privacy.dp_clip;
  c.dp_noise = cfg.privacy.dp_noise;
  c.topk = cfg.privacy.topk;
  c.secure_agg = cfg.privacy.secure_agg ? 1 : 0;
  c.quant_bits = cfg.privacy.quant_bits;
  c.mask_bits = cfg.privacy.mask_bits;
  c.stride = static_cast<std::uint32_t>(pipeline.stride);
  c.frac_train = pipeline.fractions[0];
  c.frac_val = pipeline.fractions[1];
  c.frac_test = pipeline.fractions[2];
  c.gap_policy = pipeline.gap_policy == data::GapPolicy::drop_segment ? 1 : 0;
  return c;
}

fed::FederationConfig config_from_snapshot(const AssignConfig& snap) {
  fed::FederationConfig cfg;
  cfg.clients = snap.clients;
  cfg.fraction = 1.0;  // selection is the server's business
  cfg.local_epochs = snap.local_epochs;
  cfg.batch = snap.batch;
  cfg.lr = snap.lr;
  cfg.rounds = 0;
  cfg.seed = snap.seed;
  cfg.model.arch = snap.arch == 1 ? model::ModelArch::lstm : model::ModelArch::linear;
  cfg.model.window = snap.window;
  cfg.model.horizon = snap.horizon;
  cfg.model.features = snap.features;
  cfg.model.hidden = snap.hidden;
  cfg.privacy.dp_clip = snap.dp_clip;
  cfg.privacy.dp_noise = snap.dp_noise;
  cfg.privacy.topk = snap.topk;
  cfg.privacy.secure_agg = snap.secure_agg != 0;
  cfg.privacy.quant_bits = snap.quant_bits;
  cfg.privacy.mask_bits = snap.mask_bits;
  return cfg;
}

data::PipelineParams pipeline_from_snapshot(const AssignConfig& snap) {
  data::PipelineParams p;
  p.window = snap.window;
  p.horizon = snap.horizon;
  p.stride = snap.stride;
  p.fractions = {snap.frac_train, snap.frac_val, snap.frac_test};
  p.gap_policy = snap.gap_policy == 1 ? data::GapPolicy::drop_segment : data::GapPolicy::forward_fill;
  return p;
}

}  // namespace fedcast::net
