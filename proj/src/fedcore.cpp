#include "fedcast/fedcore.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <istream>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "fedcast/metrics.hpp"
#include "fedcast/rng.hpp"

namespace fedcast::fed {

void validate(const FederationConfig& cfg) {
  if (cfg.clients < 1) fail(Err::BadConfig, "need at least one client");
  if (!(cfg.fraction > 0.0) || cfg.fraction > 1.0) fail(Err::BadConfig, "fraction must be in (0, 1]");
  if (cfg.local_epochs < 1) fail(Err::BadConfig, "local epochs must be >= 1");
  if (!(cfg.lr >= 0.0)) fail(Err::BadConfig, "learning rate must be >= 0");
  if (cfg.privacy.dp_clip < 0) fail(Err::BadConfig, "clip bound must be >= 0");
  if (cfg.privacy.dp_noise < 0) fail(Err::BadConfig, "noise multiplier must be >= 0");
  if (cfg.privacy.dp_noise > 0 && cfg.privacy.dp_clip == 0)
    fail(Err::BadConfig, "noise needs a clip bound to calibrate against");
  if (cfg.privacy.topk < 0 || cfg.privacy.topk > 1) fail(Err::BadConfig, "top-k fraction must be in [0, 1]");
  if (cfg.privacy.secure_agg && cfg.privacy.topk > 0)
    fail(Err::BadConfig, "secure aggregation and sparsification cannot be combined");
  if (cfg.privacy.secure_agg && cfg.cluster.enabled)
    fail(Err::BadConfig, "clustering needs per-client updates, which secure aggregation hides");
  if (cfg.cluster.enabled) {
    if (cfg.cluster.warmup_rounds < 1) fail(Err::BadConfig, "warm-up must be at least one round");
    if (cfg.cluster.warmup_rounds > cfg.rounds)
      fail(Err::BadConfig, "warm-up round is beyond the round budget");
    const bool has_t = cfg.cluster.threshold.has_value();
    const bool has_k = cfg.cluster.k.has_value();
    if (has_t == has_k) fail(Err::BadConfig, "set exactly one of cluster threshold and cluster count");
  }
  if (cfg.target_val_mape && !(*cfg.target_val_mape > 0))
    fail(Err::BadConfig, "target validation MAPE must be > 0");
}

std::vector<std::size_t> select_from(const std::vector<std::size_t>& members, double fraction,
                                     std::uint64_t round, std::uint64_t seed) {
  const std::size_t m = members.size();
  if (m == 0) fail(Err::BadConfig, "no clients to select from");
  if (!(fraction > 0.0) || fraction > 1.0) fail(Err::BadConfig, "fraction must be in (0, 1]");
  std::size_t n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(m)));
  n = std::clamp<std::size_t>(n, 1, m);

  std::vector<std::size_t> pool = members;
  Rng rng(derive_seed(seed, {fnv1a64("select"), round}));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(m - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> select_clients(std::size_t m, double fraction, std::uint64_t round,
                                        std::uint64_t seed) {
  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), 0);
  return select_from(all, fraction, round, seed);
}

ParamVector aggregate_fedavg(const std::vector<model::ClientUpdate>& updates) {
  if (updates.empty()) fail(Err::EmptyRound, "no updates to aggregate");
  std::vector<const model::ClientUpdate*> ordered;
  ordered.reserve(updates.size());
  for (const auto& u : updates) {
    if (u.sample_count < 1) fail(Err::BadConfig, "update with zero samples");
    ordered.push_back(&u);
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  double total = 0.0;
  for (const auto* u : ordered) total += static_cast<double>(u->sample_count);
  ParamVector acc = zeros_like(ordered.front()->delta);
  for (const auto* u : ordered) {
    require_conformable(acc, u->delta);
    acc.add_scaled(u->delta, static_cast<double>(u->sample_count) / total);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// History serialization

void write_history_csv(std::ostream& out, const RoundHistory& history) {
  out << "round,cluster,selected,train_loss,val_mape_pct,val_cvrmse_pct,test_mape_pct,test_cvrmse_pct,"
         "uplink_bytes,downlink_bytes,cum_uplink_bytes,wall_ms\n";
  for (const RoundRecord& r : history) {
    out << r.round << ',' << r.cluster << ',';
    for (std::size_t i = 0; i < r.selected.size(); ++i) {
      if (i) out << ';';
      out << r.selected[i];
    }
    out << ',' << data::format_double(r.train_loss) << ',' << data::format_double(r.val_mape_pct) << ','
        << data::format_double(r.val_cvrmse_pct) << ',' << data::format_double(r.test_mape_pct) << ','
        << data::format_double(r.test_cvrmse_pct) << ',' << r.uplink_bytes << ',' << r.downlink_bytes << ','
        << r.cum_uplink_bytes << ',' << data::format_double(r.wall_ms) << '\n';
  }
}

void write_history_json(std::ostream& out, const RoundHistory& history) {
  nlohmann::json rows = nlohmann::json::array();
  for (const RoundRecord& r : history) {
    rows.push_back({{"round", r.round},
                    {"cluster", r.cluster},
                    {"selected", r.selected},
                    {"train_loss", r.train_loss},
                    {"val_mape_pct", r.val_mape_pct},
                    {"val_cvrmse_pct", r.val_cvrmse_pct},
                    {"test_mape_pct", r.test_mape_pct},
                    {"test_cvrmse_pct", r.test_cvrmse_pct},
                    {"uplink_bytes", r.uplink_bytes},
                    {"downlink_bytes", r.downlink_bytes},
                    {"cum_uplink_bytes", r.cum_uplink_bytes},
                    {"wall_ms", r.wall_ms}});
  }
  out << rows.dump(2) << '\n';
}

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string body = line;
  if (!body.empty() && body.back() == '\r') body.pop_back();
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || body[i] == sep) {
      fields.push_back(body.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

double parse_num(const std::string& s, std::size_t row, const char* col) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    fail(Err::SchemaMismatch,
         "row " + std::to_string(row) + ": column " + col + " is not numeric ('" + s + "')");
  return v;
}

}  // namespace

RoundHistory parse_history_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(Err::MalformedHeader, "empty history file");
  const std::string expected =
      "round,cluster,selected,train_loss,val_mape_pct,val_cvrmse_pct,test_mape_pct,test_cvrmse_pct,"
      "uplink_bytes,downlink_bytes,cum_uplink_bytes,wall_ms";
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) fail(Err::SchemaMismatch, "unexpected history columns");

  RoundHistory out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f = split_fields(line, ',');
    if (f.size() != 12) fail(Err::SchemaMismatch, "row " + std::to_string(row) + ": wrong field count");
    RoundRecord r;
    r.round = static_cast<std::size_t>(parse_num(f[0], row, "round"));
    r.cluster = static_cast<int>(parse_num(f[1], row, "cluster"));
    if (!f[2].empty()) {
      for (const std::string& id : split_fields(f[2], ';')) {
        r.selected.push_back(static_cast<std::size_t>(parse_num(id, row, "selected")));
      }
    }
    r.train_loss = parse_num(f[3], row, "train_loss");
    r.val_mape_pct = parse_num(f[4], row, "val_mape_pct");
    r.val_cvrmse_pct = parse_num(f[5], row, "val_cvrmse_pct");
    r.test_mape_pct = parse_num(f[6], row, "test_mape_pct");
    r.test_cvrmse_pct = parse_num(f[7], row, "test_cvrmse_pct");
    r.uplink_bytes = static_cast<std::uint64_t>(parse_num(f[8], row, "uplink_bytes"));
    r.downlink_bytes = static_cast<std::uint64_t>(parse_num(f[9], row, "downlink_bytes"));
    r.cum_uplink_bytes = static_cast<std::uint64_t>(parse_num(f[10], row, "cum_uplink_bytes"));
    r.wall_ms = parse_num(f[11], row, "wall_ms");
    out.push_back(std::move(r));
  }
  return out;
}

RunComparison compare_runs(const RoundHistory& a, const RoundHistory& b) {
  if (a.empty() || b.empty()) fail(Err::SchemaMismatch, "cannot compare an empty history");
  if (a.size() != b.size())
    fail(Err::SchemaMismatch, "histories cover different round counts (" + std::to_string(a.size()) +
                                  " vs " + std::to_string(b.size()) + ")");
  RunComparison cmp;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const RoundRecord& ra = a[i];
    const RoundRecord& rb = b[i];
    if (ra.round != rb.round || ra.cluster != rb.cluster)
      fail(Err::SchemaMismatch, "histories diverge at table row " + std::to_string(i + 1));
    RoundDelta d;
    d.round = ra.round;
    d.cluster = ra.cluster;
    d.d_train_loss = rb.train_loss - ra.train_loss;
    d.d_val_mape = rb.val_mape_pct - ra.val_mape_pct;
    d.d_val_cvrmse = rb.val_cvrmse_pct - ra.val_cvrmse_pct;
    d.d_test_mape = rb.test_mape_pct - ra.test_mape_pct;
    d.d_test_cvrmse = rb.test_cvrmse_pct - ra.test_cvrmse_pct;
    for (double v : {d.d_train_loss, d.d_val_mape, d.d_val_cvrmse, d.d_test_mape, d.d_test_cvrmse}) {
      cmp.max_abs_delta = std::max(cmp.max_abs_delta, std::abs(v));
    }
    cmp.rows.push_back(d);
    cmp.total_uplink_a += ra.uplink_bytes;
    cmp.total_uplink_b += rb.uplink_bytes;
  }
  cmp.final_val_mape_a = a.back().val_mape_pct;
  cmp.final_val_mape_b = b.back().val_mape_pct;
  cmp.final_test_cvrmse_a = a.back().test_cvrmse_pct;
  cmp.final_test_cvrmse_b = b.back().test_cvrmse_pct;
  return cmp;
}

void write_comparison_csv(std::ostream& out, const RunComparison& cmp) {
  out << "round,cluster,d_train_loss,d_val_mape,d_val_cvrmse,d_test_mape,d_test_cvrmse\n";
  for (const RoundDelta& d : cmp.rows) {
    out << d.round << ',' << d.cluster << ',' << data::format_double(d.d_train_loss) << ','
        << data::format_double(d.d_val_mape) << ',' << data::format_double(d.d_val_cvrmse) << ','
        << data::format_double(d.d_test_mape) << ',' << data::format_double(d.d_test_cvrmse) << '\n';
  }
}

void write_comparison_json(std::ostream& out, const RunComparison& cmp) {
  nlohmann::json j;
  j["max_abs_delta"] = cmp.max_abs_delta;
  j["final_val_mape"] = {{"a", cmp.final_val_mape_a}, {"b", cmp.final_val_mape_b}};
  j["final_test_cvrmse"] = {{"a", cmp.final_test_cvrmse_a}, {"b", cmp.final_test_cvrmse_b}};
  j["total_uplink_bytes"] = {{"a", cmp.total_uplink_a}, {"b", cmp.total_uplink_b}};
  j["rounds"] = nlohmann::json::array();
  for (const RoundDelta& d : cmp.rows) {
    j["rounds"].push_back({{"round", d.round},
                           {"cluster", d.cluster},
                           {"d_train_loss", d.d_train_loss},
                           {"d_val_mape", d.d_val_mape},
                           {"d_val_cvrmse", d.d_val_cvrmse},
                           {"d_test_mape", d.d_test_mape},
                           {"d_test_cvrmse", d.d_test_cvrmse}});
  }
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Client-side round work

ReceivedUpdate train_and_protect(const FederationConfig& cfg, const data::ClientDataset& client,
                                 const ParamVector& global, std::uint64_t round,
                                 const std::vector<std::size_t>& participants, ExecMode mode) {
  model::LocalTrainConfig tc;
  tc.epochs = cfg.local_epochs;
  tc.batch_size = cfg.batch == 0 ? client.train.size() : cfg.batch;
  tc.lr = cfg.lr;
  model::ClientUpdate up = model::local_train(
      cfg.model, global, client.train, tc,
      derive_seed(cfg.seed, {fnv1a64("train"), client.id, round}), mode);

  ParamVector delta = std::move(up.delta);
  if (cfg.privacy.dp_clip > 0) delta = privacy::clip_update(delta, cfg.privacy.dp_clip);
  if (cfg.privacy.dp_noise > 0) {
    privacy::add_gaussian_noise(delta, cfg.privacy.dp_noise, cfg.privacy.dp_clip,
                                derive_seed(cfg.seed, {fnv1a64("noise"), client.id, round}));
  }

  ReceivedUpdate out;
  out.client_id = client.id;
  out.sample_count = up.sample_count;
  if (cfg.privacy.secure_agg) {
    // Clients pre-weight by their sample count so the server can divide the
    // unmasked sum by the round total without seeing anyone's delta.
    ParamVector weighted = delta;
    weighted.scale(static_cast<double>(up.sample_count));
    privacy::SecureAggConfig sc{derive_seed(cfg.seed, {fnv1a64("pairs")}), cfg.privacy.quant_bits,
                                cfg.privacy.mask_bits};
    out.masked = privacy::secure_mask(weighted, client.id, participants, sc, round);
    out.payload_bytes = privacy::payload_bytes_masked(delta.dim(), cfg.privacy.mask_bits);
  } else if (cfg.privacy.topk > 0) {
    privacy::SparseUpdate sp = privacy::sparsify_topk(delta, cfg.privacy.topk);
    out.payload_bytes = privacy::payload_bytes_sparse(sp.indices.size());
    out.delta = privacy::densify(sp, global.layout);
    out.sparse = std::move(sp);
  } else {
    out.payload_bytes = privacy::payload_bytes_dense(delta.dim());
    out.delta = std::move(delta);
  }
  return out;
}

SimProvider::SimProvider(const FederationConfig& cfg, const std::vector<data::ClientDataset>& clients,
                         ExecMode mode)
    : cfg_(cfg), clients_(clients), mode_(mode) {}

std::vector<ReceivedUpdate> SimProvider::collect(const RoundRequest& request) {
  std::vector<ReceivedUpdate> out(request.selected.size());
  std::vector<std::exception_ptr> errors(request.selected.size());
  parallel_for(request.selected.size(), mode_, [&](std::size_t k) {
    try {
      const std::size_t id = request.selected[k];
      out[k] = train_and_protect(cfg_, clients_.at(id), request.global, request.round, request.selected,
                                 mode_);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  });
  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (errors[k]) {
      try {
        std::rethrow_exception(errors[k]);
      } catch (const FedError& e) {
        fail(Err::ClientFailure, "client " + std::to_string(request.selected[k]) + ": " + e.what());
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fleet evaluation

FleetEval evaluate_fleet(const model::ModelConfig& cfg, const ParamVector& params,
                         const std::vector<data::ClientDataset>& clients,
                         const std::vector<std::size_t>& members, ExecMode mode) {
  if (members.empty()) fail(Err::EmptyDataset, "no clients to evaluate");
  metrics::PooledAccumulator val, test;
  for (std::size_t id : members) {
    const data::ClientDataset& c = clients.at(id);
    auto add_split = [&](const data::SampleSet& s, metrics::PooledAccumulator& acc) {
      if (s.size() == 0) return;
      std::vector<double> pred = model::predict(cfg, params, s, mode);
      for (std::size_t i = 0; i < pred.size(); ++i) {
        acc.add(data::inverse_target(c.scaler, s.y[i]), data::inverse_target(c.scaler, pred[i]));
      }
    };
    add_split(c.val, val);
    add_split(c.test, test);
  }
  FleetEval out;
  out.val_mape_pct = val.mape_pct();
  out.val_cvrmse_pct = val.cv_rmse_pct();
  out.test_mape_pct = test.mape_pct();
  out.test_cvrmse_pct = test.cv_rmse_pct();
  return out;
}

// ---------------------------------------------------------------------------
// Orchestration

namespace {

double weighted_train_loss(const model::ModelConfig& cfg, const ParamVector& params,
                           const std::vector<data::ClientDataset>& clients,
                           const std::vector<std::size_t>& members, ExecMode mode) {
  double weighted = 0.0, total = 0.0;
  for (std::size_t id : members) {
    const data::ClientDataset& c = clients.at(id);
    const double n = static_cast<double>(c.train.size());
    weighted += n * model::mean_loss(cfg, params, c.train, mode);
    total += n;
  }
  return weighted / total;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

/// Combines a round's received updates into the aggregated delta.
ParamVector combine_updates(const FederationConfig& cfg, const std::vector<ReceivedUpdate>& received,
                            std::shared_ptr<const Layout> layout) {
  if (received.empty()) fail(Err::EmptyRound, "round produced no updates");
  if (cfg.privacy.secure_agg) {
    std::vector<privacy::MaskedUpdate> masked;
    std::uint64_t total = 0;
    for (const ReceivedUpdate& r : received) {
      if (!r.masked) fail(Err::ClientFailure, "expected a masked update");
      masked.push_back(*r.masked);
      total += r.sample_count;
    }
    privacy::SecureAggConfig sc{derive_seed(cfg.seed, {fnv1a64("pairs")}), cfg.privacy.quant_bits,
                                cfg.privacy.mask_bits};
    ParamVector sum = privacy::secure_unmask_sum(masked, std::move(layout), sc);
    sum.scale(1.0 / static_cast<double>(total));
    return sum;
  }
  std::vector<model::ClientUpdate> updates;
  updates.reserve(received.size());
  for (const ReceivedUpdate& r : received) {
    if (!r.delta) fail(Err::ClientFailure, "expected a plain update");
    model::ClientUpdate u;
    u.client_id = r.client_id;
    u.delta = *r.delta;
    u.sample_count = r.sample_count;
    updates.push_back(std::move(u));
  }
  return aggregate_fedavg(updates);
}

struct RoundOutcome {
  std::uint64_t uplink = 0;
  std::vector<ReceivedUpdate> received;
};

RoundOutcome run_one_round(const FederationConfig& cfg, UpdateProvider& provider, ParamVector& global,
                           std::uint64_t round, const std::vector<std::size_t>& selected) {
  RoundRequest req{round, global, selected};
  RoundOutcome outcome;
  outcome.received = provider.collect(req);
  if (outcome.received.empty()) fail(Err::EmptyRound, "no client returned an update");
  for (std::size_t i = 1; i < outcome.received.size(); ++i) {
    if (outcome.received[i].client_id <= outcome.received[i - 1].client_id)
      fail(Err::BadConfig, "provider must return updates in ascending client order");
  }
  for (const ReceivedUpdate& r : outcome.received) outcome.uplink += r.payload_bytes;

  ParamVector agg = combine_updates(cfg, outcome.received, global.layout);
  global.add_scaled(agg, 1.0);  // server learning rate is fixed at 1
  if (!global.all_finite()) fail(Err::NonFiniteInput, "global model diverged to a non-finite value");
  return outcome;
}

}  // namespace

FederationResult run_federation(const FederationConfig& cfg, const std::vector<data::ClientDataset>& clients,
                                UpdateProvider& provider, ExecMode mode) {
  validate(cfg);
  if (clients.size() != cfg.clients)
    fail(Err::BadConfig, "have " + std::to_string(clients.size()) + " client datasets for m = " +
                             std::to_string(cfg.clients));
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (clients[i].id != i) fail(Err::BadConfig, "client datasets must be indexed by id");
  }

  std::vector<std::size_t> all_ids(cfg.clients);
  std::iota(all_ids.begin(), all_ids.end(), 0);

  FederationResult result;
  result.global = model::init_params(cfg.model, cfg.seed);
  const std::size_t dim = result.global.dim();
  std::uint64_t cum_uplink = 0;

  auto push_row = [&](std::size_t round, int cluster, std::vector<std::size_t> selected, double train_loss,
                      const FleetEval& fe, std::uint64_t up, std::uint64_t down, double wall) {
    RoundRecord r;
    r.round = round;
    r.cluster = cluster;
    r.selected = std::move(selected);
    r.train_loss = train_loss;
    r.val_mape_pct = fe.val_mape_pct;
    r.val_cvrmse_pct = fe.val_cvrmse_pct;
    r.test_mape_pct = fe.test_mape_pct;
    r.test_cvrmse_pct = fe.test_cvrmse_pct;
    r.uplink_bytes = up;
    r.downlink_bytes = down;
    cum_uplink += up;
    r.cum_uplink_bytes = cum_uplink;
    r.wall_ms = wall;
    result.history.push_back(std::move(r));
  };

  {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss0 = weighted_train_loss(cfg.model, result.global, clients, all_ids, mode);
    const FleetEval fe = evaluate_fleet(cfg.model, result.global, clients, all_ids, mode);
    push_row(0, -1, {}, loss0, fe, 0, 0, elapsed_ms(t0));
  }

  std::vector<ParamVector> warmup_updates;
  std::size_t split_round = 0;

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const bool warmup = cfg.cluster.enabled && r == cfg.cluster.warmup_rounds;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> selected =
        warmup ? all_ids : select_clients(cfg.clients, cfg.fraction, r, cfg.seed);
    const double train_loss = weighted_train_loss(cfg.model, result.global, clients, selected, mode);
    RoundOutcome outcome = run_one_round(cfg, provider, result.global, r, selected);
    if (warmup) {
      if (outcome.received.size() != cfg.clients)
        fail(Err::ClientFailure, "warm-up round needs every client's update");
      for (ReceivedUpdate& u : outcome.received) warmup_updates.push_back(std::move(*u.delta));
    }
    const std::uint64_t down =
        static_cast<std::uint64_t>(selected.size()) * privacy::payload_bytes_dense(dim);
    const FleetEval fe = evaluate_fleet(cfg.model, result.global, clients, all_ids, mode);
    const double val_mape = fe.val_mape_pct;
    push_row(r, -1, std::move(selected), train_loss, fe, outcome.uplink, down, elapsed_ms(t0));

    if (cfg.target_val_mape && val_mape <= *cfg.target_val_mape) return result;
    if (warmup) {
      split_round = r;
      break;
    }
  }

  if (!warmup_updates.empty()) {
    std::vector<double> dist = clustering::pairwise_distances(warmup_updates, cfg.cluster.metric, mode);
    clustering::ClusterStop stop{cfg.cluster.threshold, cfg.cluster.k};
    result.clusters = clustering::agglomerate(dist, cfg.clients, cfg.cluster.linkage, stop);

    std::vector<std::vector<std::size_t>> members(result.clusters->n_clusters);
    for (std::size_t id = 0; id < cfg.clients; ++id) {
      members[result.clusters->labels[id]].push_back(id);
    }
    result.cluster_models.assign(result.clusters->n_clusters, result.global);

    for (std::size_t r = split_round + 1; r <= cfg.rounds; ++r) {
      for (std::size_t c = 0; c < members.size(); ++c) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> selected = select_from(members[c], cfg.fraction, r, cfg.seed);
        const double train_loss =
            weighted_train_loss(cfg.model, result.cluster_models[c], clients, selected, mode);
        RoundOutcome outcome = run_one_round(cfg, provider, result.cluster_models[c], r, selected);
        const std::uint64_t down =
            static_cast<std::uint64_t>(selected.size()) * privacy::payload_bytes_dense(dim);
        const FleetEval fe =
            evaluate_fleet(cfg.model, result.cluster_models[c], clients, members[c], mode);
        push_row(r, static_cast<int>(c), std::move(selected), train_loss, fe, outcome.uplink, down,
                 elapsed_ms(t0));
      }
    }
  }
  return result;
}

FederationResult centralized_baseline(const FederationConfig& cfg,
                                      const std::vector<data::ClientDataset>& clients, ExecMode mode) {
  validate(cfg);
  if (clients.empty()) fail(Err::EmptyDataset, "no client data to pool");

  data::SampleSet pooled;
  for (const data::ClientDataset& c : clients) data::append_samples(pooled, c.train);
  if (pooled.size() == 0) fail(Err::EmptyDataset, "pooled training set is empty");

  std::vector<std::size_t> all_ids(clients.size());
  std::iota(all_ids.begin(), all_ids.end(), 0);

  FederationResult result;
  result.global = model::init_params(cfg.model, cfg.seed);
  std::uint64_t cum = 0;

  auto push_row = [&](std::size_t round, double train_loss, const FleetEval& fe, double wall) {
    RoundRecord r;
    r.round = round;
    r.cluster = -1;
    r.train_loss = train_loss;
    r.val_mape_pct = fe.val_mape_pct;
    r.val_cvrmse_pct = fe.val_cvrmse_pct;
    r.test_mape_pct = fe.test_mape_pct;
    r.test_cvrmse_pct = fe.test_cvrmse_pct;
    r.cum_uplink_bytes = cum;
    r.wall_ms = wall;
    result.history.push_back(std::move(r));
  };

  {
    const auto t0 = std::chrono::steady_clock::now();
    const double loss0 = model::mean_loss(cfg.model, result.global, pooled, mode);
    const FleetEval fe = evaluate_fleet(cfg.model, result.global, clients, all_ids, mode);
    push_row(0, loss0, fe, elapsed_ms(t0));
  }

  model::LocalTrainConfig tc;
  tc.epochs = cfg.local_epochs;
  tc.batch_size = cfg.batch == 0 ? pooled.size() : cfg.batch;
  tc.lr = cfg.lr;

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const double train_loss = model::mean_loss(cfg.model, result.global, pooled, mode);
    model::ClientUpdate up = model::local_train(cfg.model, result.global, pooled, tc,
                                                derive_seed(cfg.seed, {fnv1a64("central"), r}), mode);
    result.global.add_scaled(up.delta, 1.0);
    if (!result.global.all_finite())
      fail(Err::NonFiniteInput, "baseline model diverged to a non-finite value");
    const FleetEval fe = evaluate_fleet(cfg.model, result.global, clients, all_ids, mode);
    push_row(r, train_loss, fe, elapsed_ms(t0));
    if (cfg.target_val_mape && fe.val_mape_pct <= *cfg.target_val_mape) break;
  }
  return result;
}

}  // namespace fedcast::fed
