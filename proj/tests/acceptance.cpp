// End-to-end acceptance checks for the forecasting toolkit. Each check prints
// exactly one PASS/FAIL line; the process exits nonzero when any check fails.
//
// Usage: acceptance <path-to-fedcast-cli>
//
// The CLI path is only needed by the manifest-rerun check; every other check
// drives the library directly.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fedcast/clustering.hpp"
#include "fedcast/dataset.hpp"
#include "fedcast/fedcore.hpp"
#include "fedcast/metrics.hpp"
#include "fedcast/model.hpp"
#include "fedcast/net.hpp"
#include "fedcast/privacy.hpp"
#include "fedcast/rng.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using namespace fedcast;
using Clock = std::chrono::steady_clock;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw Failure(what);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Runner {
 public:
  void run(int num, const char* label, const std::function<void()>& body) {
    const auto t0 = Clock::now();
    try {
      body();
      std::printf("[PASS] %2d %s (%.1fs)\n", num, label, seconds_since(t0));
    } catch (const std::exception& e) {
      ++failures_;
      std::printf("[FAIL] %2d %s: %s\n", num, label, e.what());
    }
    std::fflush(stdout);
  }

  int exit_code() const { return failures_ == 0 ? 0 : 1; }

 private:
  int failures_ = 0;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients against central finite differences, 25 seeds per
//    architecture, inside a minute.

void check_gradients() {
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    {
      model::ModelConfig cfg;
      cfg.arch = model::ModelArch::linear;
      cfg.window = 4 + (seed % 5) * 10;
      cfg.horizon = 1 + seed % 2;
      const auto samples = testutil::random_samples(3, cfg.window, cfg.horizon, 1000 + seed);
      const ParamVector params = model::init_params(cfg, 500 + seed);
      const std::vector<std::size_t> batch = {0, 1, 2};
      const ParamVector g = model::batch_gradient(cfg, params, samples, batch, ExecMode::serial);
      const ParamVector fd = model::finite_diff_gradient(cfg, params, samples, batch, 1e-6);
      const double rel = testutil::rel_err(g.values, fd.values);
      require(rel < 1e-6, "linear gradient off by " + fmt(rel) + " at seed " + std::to_string(seed));
    }
    {
      model::ModelConfig cfg;
      cfg.arch = model::ModelArch::lstm;
      cfg.window = 4 + (seed % 3) * 4;
      cfg.horizon = 1;
      cfg.hidden = 4 + (seed % 4) * 4;
      const auto samples = testutil::random_samples(2, cfg.window, cfg.horizon, 2000 + seed);
      const ParamVector params = model::init_params(cfg, 700 + seed);
      const std::vector<std::size_t> batch = {0, 1};
      const ParamVector g = model::batch_gradient(cfg, params, samples, batch, ExecMode::serial);
      const ParamVector fd = model::finite_diff_gradient(cfg, params, samples, batch, 1e-5);
      const double rel = testutil::rel_err(g.values, fd.values);
      require(rel < 1e-4, "lstm gradient off by " + fmt(rel) + " at seed " + std::to_string(seed));
    }
  }
  const double elapsed = seconds_since(t0);
  require(elapsed < 60.0, "gradient sweep took " + fmt(elapsed) + "s, budget is 60s");
}

// ---------------------------------------------------------------------------
// 2. Full-participation single-epoch full-batch federated averaging equals
//    centralized gradient descent on the pooled data.

void check_centralized_equivalence() {
  const auto fleet = testutil::tiny_fleet(4, 4, 8, 5);

  fed::FederationConfig cfg;
  cfg.clients = 4;
  cfg.fraction = 1.0;
  cfg.local_epochs = 1;
  cfg.batch = 0;
  cfg.lr = 0.01;
  cfg.rounds = 10;
  cfg.seed = 3;
  cfg.model.window = 24;

  fed::SimProvider provider(cfg, fleet, ExecMode::serial);
  const fed::FederationResult federated = fed::run_federation(cfg, fleet, provider, ExecMode::serial);
  const fed::FederationResult central = fed::centralized_baseline(cfg, fleet, ExecMode::serial);

  require(federated.global.dim() == central.global.dim(), "model dimensions differ");
  for (std::size_t j = 0; j < federated.global.dim(); ++j) {
    const double f = federated.global.values[j];
    const double c = central.global.values[j];
    require(std::abs(f - c) <= 1e-9 * (1.0 + std::abs(c)),
            "weight " + std::to_string(j) + " differs: federated " + fmt(f) + " vs centralized " + fmt(c));
  }

  const fed::RunComparison cmp = fed::compare_runs(federated.history, central.history);
  require(cmp.max_abs_delta < 1e-9,
          "per-round metric deltas reach " + fmt(cmp.max_abs_delta) + ", expected < 1e-9");
}

// ---------------------------------------------------------------------------
// 3. The default 20-client / 60-day / 50-round run actually learns: final
//    validation MAPE beats round 0 and the smoothed training loss never rises.

void check_learning_signal() {
  const auto t0 = Clock::now();
  const data::SyntheticData raw = data::generate_synthetic(data::SyntheticConfig{});
  const data::PipelineParams pipeline;
  const auto clients = data::build_clients(raw.readings, raw.weather, 20, pipeline, ExecMode::serial);

  const fed::FederationConfig cfg;  // stock settings: 20 clients, 50 rounds, linear model
  fed::SimProvider provider(cfg, clients, ExecMode::serial);
  const fed::FederationResult result = fed::run_federation(cfg, clients, provider, ExecMode::serial);

  const double elapsed = seconds_since(t0);
  require(elapsed < 120.0, "training run took " + fmt(elapsed) + "s, budget is 120s");

  const fed::RoundHistory& h = result.history;
  require(h.size() == 51, "expected 51 history rows, got " + std::to_string(h.size()));
  require(h.back().val_mape_pct < h.front().val_mape_pct,
          "final val MAPE " + fmt(h.back().val_mape_pct) + "% did not improve on round 0's " +
              fmt(h.front().val_mape_pct) + "%");

  std::vector<double> loss;
  for (const auto& row : h) loss.push_back(row.train_loss);
  auto trailing_mean = [&](std::size_t end_inclusive) {
    double s = 0.0;
    for (std::size_t i = end_inclusive - 4; i <= end_inclusive; ++i) s += loss[i];
    return s / 5.0;
  };
  for (std::size_t i = 5; i < loss.size(); ++i) {
    const double prev = trailing_mean(i - 1);
    const double cur = trailing_mean(i);
    require(cur <= prev + 1e-12, "trailing-5 mean training loss rose at row " + std::to_string(i) + ": " +
                                     fmt(prev) + " -> " + fmt(cur));
  }
}

// ---------------------------------------------------------------------------
// 4. Pairwise masking cancels exactly in the modular sum, and the decoded real
//    sum sits within the quantization error budget.

void check_secure_aggregation() {
  struct Case {
    std::size_t m;
    std::uint32_t quant_bits;
    std::uint32_t mask_bits;
  };
  const Case cases[] = {{2, 20, 64}, {3, 20, 64}, {5, 20, 64}, {8, 20, 64}, {5, 12, 32}};

  auto layout = testutil::flat_layout(17);
  for (const Case& c : cases) {
    Rng rng(900 + c.m * 13 + c.mask_bits);
    std::vector<ParamVector> updates;
    for (std::size_t i = 0; i < c.m; ++i) updates.push_back(testutil::random_vec(layout, rng, 1.0));

    privacy::SecureAggConfig sc;
    sc.pair_seed_base = 4242 + c.m;
    sc.quant_bits = c.quant_bits;
    sc.mask_bits = c.mask_bits;
    std::vector<std::size_t> participants(c.m);
    std::iota(participants.begin(), participants.end(), 0);
    const std::uint64_t word_mask =
        c.mask_bits == 64 ? ~0ULL : (1ULL << c.mask_bits) - 1;

    for (std::uint64_t round : {1, 3}) {
      std::vector<privacy::MaskedUpdate> masked;
      for (std::size_t i = 0; i < c.m; ++i) {
        masked.push_back(privacy::secure_mask(updates[i], i, participants, sc, round));
      }
      for (std::size_t j = 0; j < layout->dim; ++j) {
        std::uint64_t masked_sum = 0, plain_sum = 0;
        for (std::size_t i = 0; i < c.m; ++i) {
          masked_sum += masked[i].words[j];
          plain_sum += privacy::quantize(updates[i], sc)[j];
        }
        require((masked_sum & word_mask) == (plain_sum & word_mask),
                "masked sum != quantized sum at coordinate " + std::to_string(j) + " (m=" +
                    std::to_string(c.m) + ")");
      }

      const ParamVector decoded = privacy::secure_unmask_sum(masked, layout, sc);
      const double bound = std::ldexp(static_cast<double>(c.m), -static_cast<int>(c.quant_bits) - 1);
      for (std::size_t j = 0; j < layout->dim; ++j) {
        double exact = 0.0;
        for (const auto& u : updates) exact += u.values[j];
        require(std::abs(decoded.values[j] - exact) <= bound,
                "decoded sum off by " + fmt(std::abs(decoded.values[j] - exact)) + " at coordinate " +
                    std::to_string(j) + ", budget " + fmt(bound));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// 5. Clipping bounds every update norm, the noise stream has the advertised
//    spread, and a zero multiplier changes nothing.

void check_dp_pipeline() {
  auto layout = testutil::flat_layout(12);
  Rng rng(55);
  for (int t = 0; t < 60; ++t) {
    const ParamVector v = testutil::random_vec(layout, rng, 2.0);
    const double clip = 0.05 + 0.05 * t;
    const ParamVector clipped = privacy::clip_update(v, clip);
    require(clipped.l2_norm() <= clip + 1e-12,
            "clipped norm " + fmt(clipped.l2_norm()) + " exceeds bound " + fmt(clip));
  }
  {
    ParamVector small = testutil::random_vec(layout, rng, 0.01);
    const ParamVector untouched = privacy::clip_update(small, 10.0);
    require(untouched.values == small.values, "clipping altered an update already inside the ball");
  }

  auto noise_layout = testutil::flat_layout(8);
  const double clip = 2.0, multiplier = 0.8;
  const double sigma = multiplier * clip;
  const std::size_t draws = 10000;
  std::vector<double> sum(noise_layout->dim, 0.0), sumsq(noise_layout->dim, 0.0);
  for (std::size_t s = 0; s < draws; ++s) {
    ParamVector zero = make_zero(noise_layout);
    privacy::add_gaussian_noise(zero, multiplier, clip, 100000 + s);
    for (std::size_t j = 0; j < zero.dim(); ++j) {
      sum[j] += zero.values[j];
      sumsq[j] += zero.values[j] * zero.values[j];
    }
  }
  for (std::size_t j = 0; j < noise_layout->dim; ++j) {
    const double mean = sum[j] / static_cast<double>(draws);
    const double var = sumsq[j] / static_cast<double>(draws) - mean * mean;
    const double std_j = std::sqrt(var);
    require(std::abs(std_j - sigma) <= 0.03 * sigma,
            "noise std at coordinate " + std::to_string(j) + " is " + fmt(std_j) + ", expected " +
                fmt(sigma) + " within 3%");
  }

  {
    const ParamVector v = testutil::random_vec(layout, rng, 1.0);
    ParamVector w = v;
    privacy::add_gaussian_noise(w, 0.0, clip, 999);
    require(w.values == v.values, "zero noise multiplier was not the identity");
    const ParamVector c2 = privacy::clip_update(v, 1e6);
    require(c2.values == v.values, "generous clip bound was not the identity");
  }
}

// ---------------------------------------------------------------------------
// 6. Top-k keeps the provably best coordinate subset and the payload size
//    formulas match both the documentation and the real wire frames.

void check_sparsification() {
  Rng rng(808);
  {
    auto layout = testutil::flat_layout(9);
    const ParamVector v = testutil::random_vec(layout, rng, 1.0);
    const privacy::SparseUpdate s = privacy::sparsify_topk(v, 1.0);
    const ParamVector back = privacy::densify(s, layout);
    require(back.values == v.values, "rho = 1 round trip altered the vector");
  }

  for (std::size_t d = 3; d <= 12; ++d) {
    auto layout = testutil::flat_layout(d);
    const ParamVector v = testutil::random_vec(layout, rng, 2.0);
    for (double rho : {0.3, 0.6, 0.9}) {
      const std::size_t k = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(d)));
      const privacy::SparseUpdate s = privacy::sparsify_topk(v, rho);
      require(s.indices.size() == k, "kept " + std::to_string(s.indices.size()) + " coordinates, wanted " +
                                         std::to_string(k));
      double kept_sum = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        require(s.values[i] == v.values[s.indices[i]], "sparse value does not match its source coordinate");
        kept_sum += std::abs(s.values[i]);
      }
      double best = 0.0;
      for (std::uint32_t mask = 1; mask < (1u << d); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
        double total = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          if (mask & (1u << i)) total += std::abs(v.values[i]);
        }
        best = std::max(best, total);
      }
      require(std::abs(kept_sum - best) <= 1e-12,
              "kept |value| sum " + fmt(kept_sum) + " is not the optimum " + fmt(best) + " at d=" +
                  std::to_string(d) + " rho=" + fmt(rho));
    }
  }

  for (std::size_t d : {std::size_t{1}, std::size_t{7}, std::size_t{337}, std::size_t{1553}}) {
    require(privacy::payload_bytes_dense(d) == 8 * d + 27, "dense payload formula broke at d=" + std::to_string(d));
  }
  for (std::size_t k : {std::size_t{1}, std::size_t{34}}) {
    require(privacy::payload_bytes_sparse(k) == 12 * k + 27, "sparse payload formula broke at k=" + std::to_string(k));
  }
  require(privacy::payload_bytes_masked(5, 64) == 8 * 5 + 27, "masked payload formula broke at 64 bits");
  require(privacy::payload_bytes_masked(5, 32) == 4 * 5 + 27, "masked payload formula broke at 32 bits");
  require(privacy::payload_bytes_masked(5, 16) == 2 * 5 + 27, "masked payload formula broke at 16 bits");

  {
    net::Update u;
    u.round = 1;
    u.sample_count = 3;
    u.dense = {0.25, -1.0, 2.0, 3.0, 4.0};
    require(net::encode(u).size() == privacy::payload_bytes_dense(5),
            "dense frame size disagrees with payload_bytes_dense");
  }
  {
    net::Update u;
    u.round = 1;
    u.encoding = net::Encoding::sparse;
    u.sample_count = 3;
    u.indices = {0, 3, 7};
    u.values = {1.5, -2.5, 0.75};
    require(net::encode(u).size() == privacy::payload_bytes_sparse(3),
            "sparse frame size disagrees with payload_bytes_sparse");
  }
  {
    net::Update u;
    u.round = 1;
    u.encoding = net::Encoding::masked;
    u.sample_count = 3;
    u.words = {1, 2, 3, 4};
    u.word_bytes = 8;
    require(net::encode(u).size() == privacy::payload_bytes_masked(4, 64),
            "masked frame size disagrees with payload_bytes_masked");
  }
}

// ---------------------------------------------------------------------------
// 7. Two behavioral regimes (heating-driven vs flat) separate in update space
//    after one warm-up round, every linkage recovers the exact partition, and
//    the per-cluster models beat the single shared model on both regimes.

void check_cluster_recovery() {
  data::SyntheticConfig flat_cfg;
  flat_cfg.n_households = 4;
  flat_cfg.n_days = 40;
  flat_cfg.seed = 11;
  flat_cfg.id_prefix = "A";
  flat_cfg.heating_lo = 0.0;
  flat_cfg.heating_hi = 0.0;

  data::SyntheticConfig heat_cfg = flat_cfg;
  heat_cfg.id_prefix = "B";
  heat_cfg.heating_lo = 0.10;
  heat_cfg.heating_hi = 0.15;

  // Same seed, so the fleets share the weather trace and differ only in their
  // heating response.
  const data::SyntheticData flat = data::generate_synthetic(flat_cfg);
  const data::SyntheticData heat = data::generate_synthetic(heat_cfg);
  data::ReadingSet merged = flat.readings;
  for (const auto& hh : heat.readings.households) merged.households.push_back(hh);

  data::PipelineParams pipeline;
  pipeline.window = 24;
  const auto clients = data::build_clients(merged, flat.weather, 8, pipeline, ExecMode::serial);

  fed::FederationConfig cfg;
  cfg.clients = 8;
  cfg.rounds = 12;
  cfg.lr = 0.02;
  cfg.seed = 7;
  cfg.model.window = 24;
  cfg.cluster.enabled = true;
  cfg.cluster.warmup_rounds = 1;
  cfg.cluster.k = 2;

  // Reproduce the warm-up round's client updates and measure their spread.
  const ParamVector g0 = model::init_params(cfg.model, cfg.seed);
  const std::vector<std::size_t> everyone = testutil::all_indices(8);
  std::vector<ParamVector> deltas;
  for (std::size_t i = 0; i < 8; ++i) {
    fed::ReceivedUpdate up = fed::train_and_protect(cfg, clients[i], g0, 1, everyone, ExecMode::serial);
    require(up.delta.has_value(), "warm-up update carried no dense delta");
    deltas.push_back(std::move(*up.delta));
  }
  const auto dist = clustering::pairwise_distances(deltas, clustering::DistanceMetric::euclidean,
                                                   ExecMode::serial);
  double intra_sum = 0.0, inter_sum = 0.0;
  std::size_t intra_n = 0, inter_n = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = i + 1; j < 8; ++j) {
      const bool same_regime = (i < 4) == (j < 4);
      (same_regime ? intra_sum : inter_sum) += dist[i * 8 + j];
      ++(same_regime ? intra_n : inter_n);
    }
  }
  const double ratio = (inter_sum / static_cast<double>(inter_n)) / (intra_sum / static_cast<double>(intra_n));
  require(ratio > 3.0, "inter/intra update distance ratio is " + fmt(ratio) + ", needs > 3");

  const std::vector<std::size_t> truth = {0, 0, 0, 0, 1, 1, 1, 1};
  for (clustering::Linkage linkage :
       {clustering::Linkage::single, clustering::Linkage::complete, clustering::Linkage::average}) {
    clustering::ClusterStop stop;
    stop.max_clusters = 2;
    const clustering::ClusterResult res = clustering::agglomerate(dist, 8, linkage, stop);
    require(res.n_clusters == 2, "expected 2 clusters under " + std::string(clustering::linkage_name(linkage)));
    require(res.labels == truth,
            "partition under " + std::string(clustering::linkage_name(linkage)) + " missed the two regimes");
  }

  fed::SimProvider clustered_provider(cfg, clients, ExecMode::serial);
  const fed::FederationResult clustered = fed::run_federation(cfg, clients, clustered_provider, ExecMode::serial);
  require(clustered.clusters.has_value() && clustered.clusters->n_clusters == 2, "run did not split the fleet");
  require(clustered.clusters->labels == truth, "full run clustered the fleet differently");
  require(clustered.cluster_models.size() == 2, "expected one model per cluster");

  fed::FederationConfig plain_cfg = cfg;
  plain_cfg.cluster = fed::ClusterSettings{};
  fed::SimProvider plain_provider(plain_cfg, clients, ExecMode::serial);
  const fed::FederationResult plain = fed::run_federation(plain_cfg, clients, plain_provider, ExecMode::serial);

  const std::vector<std::size_t> regime_a = {0, 1, 2, 3};
  const std::vector<std::size_t> regime_b = {4, 5, 6, 7};
  const fed::FleetEval ca = fed::evaluate_fleet(cfg.model, clustered.cluster_models[0], clients, regime_a,
                                                ExecMode::serial);
  const fed::FleetEval cb = fed::evaluate_fleet(cfg.model, clustered.cluster_models[1], clients, regime_b,
                                                ExecMode::serial);
  const fed::FleetEval pa = fed::evaluate_fleet(cfg.model, plain.global, clients, regime_a, ExecMode::serial);
  const fed::FleetEval pb = fed::evaluate_fleet(cfg.model, plain.global, clients, regime_b, ExecMode::serial);
  require(ca.test_mape_pct <= pa.test_mape_pct,
          "flat regime: clustered test MAPE " + fmt(ca.test_mape_pct) + "% vs shared " + fmt(pa.test_mape_pct) + "%");
  require(cb.test_mape_pct <= pb.test_mape_pct,
          "heating regime: clustered test MAPE " + fmt(cb.test_mape_pct) + "% vs shared " +
              fmt(pb.test_mape_pct) + "%");
}

// ---------------------------------------------------------------------------
// 8. A real TCP run reproduces the simulation bit for bit, and the frame
//    decoder survives hostile input with sane classifications.

void check_cross_mode_determinism() {
  data::SyntheticConfig synth;
  synth.n_households = 3;
  synth.n_days = 6;
  synth.seed = 21;
  const data::SyntheticData raw = data::generate_synthetic(synth);
  data::PipelineParams pipeline;
  pipeline.window = 24;
  const auto clients = data::build_clients(raw.readings, raw.weather, 3, pipeline, ExecMode::serial);

  fed::FederationConfig cfg;
  cfg.clients = 3;
  cfg.rounds = 5;
  cfg.local_epochs = 2;
  cfg.seed = 9;
  cfg.model.window = 24;

  fed::SimProvider provider(cfg, clients, ExecMode::serial);
  const fed::FederationResult sim = fed::run_federation(cfg, clients, provider, ExecMode::serial);

  std::promise<std::uint16_t> port_promise;
  auto port_future = port_promise.get_future();
  net::ServeOptions so;
  so.port = 0;
  so.join_timeout_s = 60.0;
  so.round_timeout_s = 60.0;
  so.quiet = true;
  so.on_listening = [&](std::uint16_t p) { port_promise.set_value(p); };

  fed::FederationResult net_result;
  std::thread server([&] { net_result = net::serve(so, cfg, pipeline, clients, ExecMode::serial); });
  require(port_future.wait_for(std::chrono::seconds(30)) == std::future_status::ready,
          "server never reported a listening port");
  const std::uint16_t port = port_future.get();

  std::vector<int> codes(3, -1);
  std::vector<std::thread> client_threads;
  for (std::size_t i = 0; i < 3; ++i) {
    client_threads.emplace_back([&, i] {
      net::ClientRuntime rt;
      rt.host = "127.0.0.1";
      rt.port = port;
      rt.client_id = i;
      rt.model = cfg.model;
      rt.readings = raw.readings;
      rt.weather = raw.weather;
      rt.quiet = true;
      codes[i] = net::run_client(rt, ExecMode::serial);
    });
  }
  for (auto& t : client_threads) t.join();
  server.join();
  for (std::size_t i = 0; i < 3; ++i) {
    require(codes[i] == 0, "client " + std::to_string(i) + " exited with " + std::to_string(codes[i]));
  }

  require(net_result.history.size() == sim.history.size(), "history row counts differ across modes");
  for (std::size_t r = 0; r < sim.history.size(); ++r) {
    const auto& a = sim.history[r];
    const auto& b = net_result.history[r];
    require(a.round == b.round && a.cluster == b.cluster && a.selected == b.selected,
            "row " + std::to_string(r) + " keys differ across modes");
    require(a.train_loss == b.train_loss && a.val_mape_pct == b.val_mape_pct &&
                a.val_cvrmse_pct == b.val_cvrmse_pct && a.test_mape_pct == b.test_mape_pct &&
                a.test_cvrmse_pct == b.test_cvrmse_pct,
            "row " + std::to_string(r) + " metrics differ across modes");
    require(a.uplink_bytes == b.uplink_bytes && a.downlink_bytes == b.downlink_bytes &&
                a.cum_uplink_bytes == b.cum_uplink_bytes,
            "row " + std::to_string(r) + " traffic differs across modes");
  }
  require(net_result.global.values == sim.global.values, "final weights differ across modes");

  // Decoder abuse. Any outcome other than a clean decode or a classified
  // decode error is a failure.
  auto probe = [](std::span<const std::uint8_t> bytes) {
    try {
      (void)net::decode(bytes);
    } catch (const FedError& e) {
      const Err c = e.code();
      require(c == Err::BadMagic || c == Err::Truncated || c == Err::CrcMismatch || c == Err::UnknownType,
              "decoder threw an unexpected error class");
    }
  };

  Rng rng(31337);
  for (int iter = 0; iter < 100000; ++iter) {
    std::vector<std::uint8_t> junk(rng.below(96));
    for (auto& b : junk) b = static_cast<std::uint8_t>(rng.next_u64() & 0xFF);
    probe(junk);
  }

  std::vector<std::vector<std::uint8_t>> corpus;
  corpus.push_back(net::encode(net::Join{7, 0x1234}));
  {
    net::Assign a;
    a.round = 2;
    a.config = net::snapshot_config(cfg, pipeline);
    a.participants = {0, 1, 2};
    a.global = {0.5, -1.25, 3.0, 4.0, 5.5};
    corpus.push_back(net::encode(a));
  }
  {
    net::Update u;
    u.round = 1;
    u.sample_count = 4;
    u.dense = {1.0, 2.0, 3.0};
    corpus.push_back(net::encode(u));
  }
  {
    net::Update u;
    u.round = 1;
    u.encoding = net::Encoding::sparse;
    u.sample_count = 4;
    u.indices = {1, 4};
    u.values = {0.5, -0.5};
    corpus.push_back(net::encode(u));
  }
  {
    net::Update u;
    u.round = 1;
    u.encoding = net::Encoding::masked;
    u.sample_count = 4;
    u.words = {10, 20, 30};
    u.word_bytes = 8;
    corpus.push_back(net::encode(u));
  }
  corpus.push_back(net::encode(net::Ack{3, false, "busy"}));
  corpus.push_back(net::encode(net::Bye{}));

  for (int iter = 0; iter < 1000; ++iter) {
    std::vector<std::uint8_t> frame = corpus[rng.below(corpus.size())];
    const std::size_t pos = rng.below(frame.size());
    frame[pos] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    probe(frame);
  }

  // Spot checks that the classification is the right one, not merely a
  // survivable one.
  {
    std::vector<std::uint8_t> f = corpus[2];
    std::vector<std::uint8_t> cut(f.begin(), f.end() - 1);
    require(testutil::code_of([&] { net::decode(cut); }) == Err::Truncated, "short frame not Truncated");
    std::vector<std::uint8_t> magic = f;
    magic[0] = 'X';
    require(testutil::code_of([&] { net::decode(magic); }) == Err::BadMagic, "bad magic not BadMagic");
    std::vector<std::uint8_t> corrupt = f;
    corrupt[12] ^= 0x40;
    require(testutil::code_of([&] { net::decode(corrupt); }) == Err::CrcMismatch,
            "payload corruption not CrcMismatch");
    std::vector<std::uint8_t> badtype = f;
    badtype[4] = 9;
    require(testutil::code_of([&] { net::decode(badtype); }) == Err::UnknownType, "type 9 not UnknownType");
  }
}

// ---------------------------------------------------------------------------
// 9. The error metrics compute the textbook formulas and ignore units.

void check_metric_formulas() {
  const std::vector<double> y = {1.0, 2.0, 4.0};
  const std::vector<double> p = {2.0, 1.0, 5.0};
  const metrics::MapeResult m = metrics::mape(y, p);
  require(std::abs(m.mape_pct - 175.0 / 3.0) <= 1e-9,
          "mape([1,2,4],[2,1,5]) = " + fmt(m.mape_pct) + ", expected 58.333...");

  const std::vector<double> y2 = {2.0, 2.0};
  const std::vector<double> p2 = {3.0, 1.0};
  const double cv = metrics::cv_rmse(y2, p2);
  require(std::abs(cv - 50.0) <= 1e-9, "cv_rmse([2,2],[3,1]) = " + fmt(cv) + ", expected 50");

  for (double c : {0.5, 3.0}) {
    std::vector<double> ys, ps, y2s, p2s;
    for (double v : y) ys.push_back(c * v);
    for (double v : p) ps.push_back(c * v);
    for (double v : y2) y2s.push_back(c * v);
    for (double v : p2) p2s.push_back(c * v);
    require(std::abs(metrics::mape(ys, ps).mape_pct - m.mape_pct) <= 1e-9,
            "MAPE moved under scaling by " + fmt(c));
    require(std::abs(metrics::cv_rmse(y2s, p2s) - cv) <= 1e-9, "CV-RMSE moved under scaling by " + fmt(c));
  }
}

// ---------------------------------------------------------------------------
// 10. Any simulate run can be replayed from its own manifest, reproducing the
//     history table (timings aside) and the model files byte for byte.

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void require_history_match_excluding_wall(const fs::path& a, const fs::path& b) {
  const auto la = read_lines(a);
  const auto lb = read_lines(b);
  require(la.size() == lb.size(), a.string() + " and " + b.string() + " have different row counts");
  require(!la.empty() && la[0].rfind(",wall_ms") == la[0].size() - 8,
          "history header does not end in the timing column");
  for (std::size_t i = 0; i < la.size(); ++i) {
    const auto cut = [](const std::string& s) { return s.substr(0, s.rfind(',')); };
    require(cut(la[i]) == cut(lb[i]),
            "history line " + std::to_string(i + 1) + " differs between " + a.string() + " and " + b.string());
  }
}

void require_files_equal(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  require(fa.good() && fb.good(), "cannot open " + a.string() + " or " + b.string());
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  require(sa.str() == sb.str(), a.string() + " and " + b.string() + " differ");
}

void check_manifest_rerun(const std::string& cli) {
  char tmpl[] = "/tmp/fedcast-accept-XXXXXX";
  require(mkdtemp(tmpl) != nullptr, "mkdtemp failed");
  const fs::path tmp(tmpl);

  auto run_cli = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    require(rc != -1, "could not launch the command shell");
    require(WIFEXITED(rc) && WEXITSTATUS(rc) == 0, "command exited nonzero: " + args);
  };
  auto rerun_and_compare = [&](const std::string& name, const std::string& flags,
                               const std::vector<std::string>& model_files) {
    const fs::path first = tmp / (name + "-first");
    const fs::path second = tmp / (name + "-second");
    run_cli("simulate " + flags + " --quiet --out \"" + first.string() + "\"");
    run_cli("simulate --from-manifest \"" + (first / "manifest.json").string() + "\" --quiet --out \"" +
            second.string() + "\"");
    require_history_match_excluding_wall(first / "history.csv", second / "history.csv");
    for (const std::string& f : model_files) require_files_equal(first / f, second / f);
  };

  rerun_and_compare("plain", "--households 6 --days 8 --clients 6 --rounds 3 --window 24 --seed 4",
                    {"model.bin"});
  rerun_and_compare("private",
                    "--households 6 --days 8 --clients 6 --rounds 4 --window 24 --lr 0.02 "
                    "--dp-clip 1.0 --dp-noise 0.2 --cluster-k 2 --cluster-after 1",
                    {"model.bin", "model.cluster0.bin", "model.cluster1.bin", "clusters.csv"});
  rerun_and_compare("masked", "--households 4 --days 6 --clients 4 --rounds 3 --window 24 --secure-agg",
                    {"model.bin"});

  fs::remove_all(tmp);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <path-to-fedcast-cli>\n", argv[0]);
    return 2;
  }
  const std::string cli = fs::absolute(argv[1]).string();

  Runner runner;
  runner.run(1, "analytic gradients match central finite differences", check_gradients);
  runner.run(2, "federated averaging equals centralized training", check_centralized_equivalence);
  runner.run(3, "stock training run learns", check_learning_signal);
  runner.run(4, "secure aggregation sums exactly", check_secure_aggregation);
  runner.run(5, "clipping and noise behave as configured", check_dp_pipeline);
  runner.run(6, "top-k keeps the best coordinates and sizes add up", check_sparsification);
  runner.run(7, "clustering recovers the two behavioral regimes", check_cluster_recovery);
  runner.run(8, "networked run matches simulation; decoder survives fuzzing", check_cross_mode_determinism);
  runner.run(9, "error metrics follow the formulas", check_metric_formulas);
  runner.run(10, "simulate reruns reproduce byte-identical artifacts",
             [&] { check_manifest_rerun(cli); });
  return runner.exit_code();
}
