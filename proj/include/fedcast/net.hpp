#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedcast/fedcore.hpp"

namespace fedcast::net {

// Frame: magic "FCW1" | msg_type u8 | flags u8 | payload_len u32 LE
//        | payload | crc32(payload) u32 LE
// Every multi-byte integer on the wire is little-endian; reals are IEEE-754
// binary64. The version digit in the magic leaves room for evolution.

constexpr std::array<std::uint8_t, 4> kMagic{'F', 'C', 'W', '1'};
constexpr std::size_t kFrameOverhead = 14;
constexpr std::size_t kMaxPayload = 1u << 28;

enum class MsgType : std::uint8_t { join = 1, assign = 2, update = 3, ack = 4, bye = 5 };
enum class Encoding : std::uint8_t { dense = 0, sparse = 1, masked = 2 };

struct Join {
  std::uint32_t client_id = 0;
  std::uint64_t layout_hash = 0;
  bool operator==(const Join&) const = default;
};

/// Everything a client needs to reproduce its half of a round besides the
/// global weights: model shape, schedule, privacy settings and the shared
/// dataset pipeline so both ends window the data identically.
struct AssignConfig {
  std::uint8_t arch = 0;  // 0 linear, 1 lstm
  std::uint32_t clients = 0;
  std::uint32_t window = 0;
  std::uint32_t horizon = 0;
  std::uint32_t features = 0;
  std::uint32_t hidden = 0;
  std::uint32_t local_epochs = 1;
  std::uint32_t batch = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  double dp_clip = 0.0;
  double dp_noise = 0.0;
  double topk = 0.0;
  std::uint8_t secure_agg = 0;
  std::uint32_t quant_bits = 20;
  std::uint32_t mask_bits = 64;
  std::uint32_t stride = 1;
  double frac_train = 0.8;
  double frac_val = 0.1;
  double frac_test = 0.1;
  std::uint8_t gap_policy = 0;  // 0 forward_fill, 1 drop_segment
  bool operator==(const AssignConfig&) const = default;
};

struct Assign {
  std::uint32_t round = 0;
  AssignConfig config;
  std::vector<std::uint32_t> participants;  // this round's selected ids
  std::vector<double> global;               // dense global weights
  bool operator==(const Assign&) const = default;
};

struct Update {
  std::uint32_t round = 0;
  Encoding encoding = Encoding::dense;
  std::uint32_t sample_count = 0;
  std::vector<double> dense;
  std::vector<std::uint32_t> indices;  // sparse
  std::vector<double> values;          // sparse
  std::vector<std::uint64_t> words;    // masked
  std::uint8_t word_bytes = 8;  // masked word width; implied by frame geometry, never a wire field
  bool operator==(const Update&) const = default;
};

struct Ack {
  std::uint32_t round = 0;
  bool accepted = true;
  std::string reason;
  bool operator==(const Ack&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

using Message = std::variant<Join, Assign, Update, Ack, Bye>;

std::vector<std::uint8_t> encode(const Message& msg);

/// Strict decoder: rejects bad magic, short or oversized frames, checksum
/// failures and unknown message or encoding types. decode(encode(m)) == m.
Message decode(std::span<const std::uint8_t> bytes);

std::uint32_t crc32_bytes(std::span<const std::uint8_t> bytes);

/// The dense weight block alone (count-prefixed little-endian doubles); also
/// the on-disk model file format.
std::vector<std::uint8_t> encode_dense_values(std::span<const double> values);
std::vector<double> decode_dense_values(std::span<const std::uint8_t> bytes);

AssignConfig snapshot_config(const fed::FederationConfig& cfg, const data::PipelineParams& pipeline);
fed::FederationConfig config_from_snapshot(const AssignConfig& snap);
data::PipelineParams pipeline_from_snapshot(const AssignConfig& snap);

// ---------------------------------------------------------------------------
// Runtime

struct ServeOptions {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;  // 0 picks an ephemeral port
  double join_timeout_s = 120.0;
  double round_timeout_s = 60.0;
  std::function<void(std::uint16_t)> on_listening;  // reports the bound port
  bool quiet = false;
};

/// Parameter-server process: waits for every client to join, then drives the
/// same orchestration as the in-process simulation, exchanging frames
/// instead of calling into client code. Slow clients are dropped for the
/// round after the timeout (aborting instead when secure aggregation is on,
/// since a partial masked sum is garbage).
fed::FederationResult serve(const ServeOptions& opts, const fed::FederationConfig& cfg,
                            const data::PipelineParams& pipeline,
                            const std::vector<data::ClientDataset>& clients, ExecMode mode);

struct ClientRuntime {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;
  std::size_t client_id = 0;
  model::ModelConfig model;  // must agree with the server; checked at Join
  data::ReadingSet readings;
  data::WeatherSeries weather;
  int max_retries = 5;
  double backoff_start_s = 0.5;  // doubles per attempt, capped at 8s
  bool quiet = false;
};

/// Client process: join, then answer Assigns with trained updates until Bye.
/// Returns 0 on a clean Bye; nonzero when the server cannot be reached or
/// the connection dies mid-run.
int run_client(const ClientRuntime& rt, ExecMode mode);

}  // namespace fedcast::net
