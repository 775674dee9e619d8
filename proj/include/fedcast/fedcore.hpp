#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "fedcast/clustering.hpp"
#include "fedcast/dataset.hpp"
#include "fedcast/model.hpp"
#include "fedcast/privacy.hpp"

namespace fedcast::fed {

struct PrivacyConfig {
  double dp_clip = 0.0;   // L2 clip bound S, 0 disables clipping
  double dp_noise = 0.0;  // noise multiplier z, 0 disables noise
  double topk = 0.0;      // kept fraction rho, 0 disables sparsification
  bool secure_agg = false;
  std::uint32_t quant_bits = 20;
  std::uint32_t mask_bits = 64;
};

struct ClusterSettings {
  bool enabled = false;
  std::size_t warmup_rounds = 1;  // the split happens after this round
  clustering::DistanceMetric metric = clustering::DistanceMetric::euclidean;
  clustering::Linkage linkage = clustering::Linkage::average;
  std::optional<double> threshold;
  std::optional<std::size_t> k;
};

struct FederationConfig {
  std::size_t clients = 20;       // m
  double fraction = 1.0;          // C, share of clients picked each round
  std::size_t local_epochs = 3;   // E
  std::size_t batch = 0;          // B, 0 = full batch
  double lr = 0.01;
  std::size_t rounds = 50;
  std::optional<double> target_val_mape;  // early stop once reached
  std::uint64_t seed = 1;
  model::ModelConfig model;
  PrivacyConfig privacy;
  ClusterSettings cluster;
};

/// Rejects contradictory settings (secure aggregation cannot coexist with
/// sparsification or clustering, both of which need per-client updates).
void validate(const FederationConfig& cfg);

// ---------------------------------------------------------------------------
// Selection and aggregation

/// Exactly max(1, round(C*m)) distinct ids, uniform without replacement from
/// the stream keyed by (seed, round), returned ascending.
std::vector<std::size_t> select_clients(std::size_t m, double fraction, std::uint64_t round,
                                        std::uint64_t seed);

/// Same draw over an arbitrary sorted id list (used inside clusters).
std::vector<std::size_t> select_from(const std::vector<std::size_t>& members, double fraction,
                                     std::uint64_t round, std::uint64_t seed);

/// Sample-count weighted FedAvg: sum of (n_k/N) * delta_k, accumulated in
/// ascending client_id order.
ParamVector aggregate_fedavg(const std::vector<model::ClientUpdate>& updates);

// ---------------------------------------------------------------------------
// Round history

struct RoundRecord {
  std::size_t round = 0;
  int cluster = -1;  // -1 while the fleet trains as one federation
  std::vector<std::size_t> selected;
  double train_loss = 0.0;  // weighted mean client loss before the round's update
  double val_mape_pct = 0.0;
  double val_cvrmse_pct = 0.0;
  double test_mape_pct = 0.0;
  double test_cvrmse_pct = 0.0;
  std::uint64_t uplink_bytes = 0;
  std::uint64_t downlink_bytes = 0;
  std::uint64_t cum_uplink_bytes = 0;
  double wall_ms = 0.0;  // wall-clock timing, never part of determinism checks
};

using RoundHistory = std::vector<RoundRecord>;

void write_history_csv(std::ostream& out, const RoundHistory& history);
void write_history_json(std::ostream& out, const RoundHistory& history);
RoundHistory parse_history_csv(std::istream& in);

// ---------------------------------------------------------------------------
// Run comparison

struct RoundDelta {
  std::size_t round = 0;
  int cluster = -1;
  double d_train_loss = 0.0;
  double d_val_mape = 0.0;
  double d_val_cvrmse = 0.0;
  double d_test_mape = 0.0;
  double d_test_cvrmse = 0.0;
};

struct RunComparison {
  std::vector<RoundDelta> rows;  // b minus a, aligned by (round, cluster)
  double max_abs_delta = 0.0;    // largest metric difference anywhere
  double final_val_mape_a = 0.0, final_val_mape_b = 0.0;
  double final_test_cvrmse_a = 0.0, final_test_cvrmse_b = 0.0;
  std::uint64_t total_uplink_a = 0, total_uplink_b = 0;
};

/// Aligns two histories round by round and reports metric deltas plus a
/// final-model summary. Histories must cover the same (round, cluster) keys.
RunComparison compare_runs(const RoundHistory& a, const RoundHistory& b);
void write_comparison_csv(std::ostream& out, const RunComparison& cmp);
void write_comparison_json(std::ostream& out, const RunComparison& cmp);

// ---------------------------------------------------------------------------
// Update transport abstraction

/// What the server holds for one client after a round's exchange: either a
/// plain delta (possibly clipped, noised or re-densified) or a masked word
/// vector when secure aggregation is on.
struct ReceivedUpdate {
  std::size_t client_id = 0;
  std::size_t sample_count = 0;
  std::optional<ParamVector> delta;
  std::optional<privacy::SparseUpdate> sparse;  // kept alongside delta so the wire can send it verbatim
  std::optional<privacy::MaskedUpdate> masked;
  std::uint64_t payload_bytes = 0;
};

struct RoundRequest {
  std::uint64_t round = 0;
  const ParamVector& global;
  const std::vector<std::size_t>& selected;
};

/// Produces the selected clients' updates for a round. The in-process
/// implementation trains directly on the client datasets; the networked
/// server implementation exchanges wire messages. Both must return updates
/// sorted by client id.
class UpdateProvider {
 public:
  virtual ~UpdateProvider() = default;
  virtual std::vector<ReceivedUpdate> collect(const RoundRequest& request) = 0;
};

/// In-process provider: local training plus the privacy pipeline, clients in
/// parallel under the chosen execution mode.
class SimProvider : public UpdateProvider {
 public:
  SimProvider(const FederationConfig& cfg, const std::vector<data::ClientDataset>& clients, ExecMode mode);
  std::vector<ReceivedUpdate> collect(const RoundRequest& request) override;

 private:
  const FederationConfig& cfg_;
  const std::vector<data::ClientDataset>& clients_;
  ExecMode mode_;
};

/// Client-side half of one round, shared verbatim by SimProvider and the
/// networked client process so the two modes stay bit-identical: local
/// training from the received global, then clip / noise / sparsify / mask
/// per the config.
ReceivedUpdate train_and_protect(const FederationConfig& cfg, const data::ClientDataset& client,
                                 const ParamVector& global, std::uint64_t round,
                                 const std::vector<std::size_t>& participants, ExecMode mode);

// ---------------------------------------------------------------------------
// Fleet evaluation

struct FleetEval {
  double val_mape_pct = 0.0;
  double val_cvrmse_pct = 0.0;
  double test_mape_pct = 0.0;
  double test_cvrmse_pct = 0.0;
};

/// Pooled metrics over the listed clients' validation and test splits, in
/// kWh via each client's own scaler. Pooling weighs every prediction point
/// once, which equals sample-count weighting of per-client means.
FleetEval evaluate_fleet(const model::ModelConfig& cfg, const ParamVector& params,
                         const std::vector<data::ClientDataset>& clients,
                         const std::vector<std::size_t>& members, ExecMode mode);

// ---------------------------------------------------------------------------
// Orchestration

struct FederationResult {
  RoundHistory history;
  ParamVector global;  // final global of the single-federation phase
  std::optional<clustering::ClusterResult> clusters;
  std::vector<ParamVector> cluster_models;  // per-cluster finals when clustering ran
};

/// Full run: round-0 evaluation of the fresh global, then rounds of select /
/// collect / aggregate / evaluate. With clustering enabled the configured
/// warm-up round runs at full participation, its per-client updates feed the
/// clustering, and the remaining rounds run as independent per-cluster
/// federations started from the shared global.
FederationResult run_federation(const FederationConfig& cfg, const std::vector<data::ClientDataset>& clients,
                                UpdateProvider& provider, ExecMode mode);

/// Same model trained by plain minibatch SGD on the pooled training data,
/// with matched epochs, batch size and learning rate per round; history rows
/// share the federation schema.
FederationResult centralized_baseline(const FederationConfig& cfg,
                                      const std::vector<data::ClientDataset>& clients, ExecMode mode);

}  // namespace fedcast::fed
