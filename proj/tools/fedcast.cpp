#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fedcast/manifest.hpp"
#include "fedcast/metrics.hpp"
#include "fedcast/net.hpp"

namespace fs = std::filesystem;

using namespace fedcast;

namespace {

const char* kSynopsis =
    "usage: fedcast <subcommand> [flags]\n"
    "\n"
    "  gen-data   write a synthetic readings/weather CSV pair\n"
    "  simulate   run an in-process federated training run\n"
    "  serve      run the parameter server over TCP\n"
    "  client     run one training client against a server\n"
    "  evaluate   score a finished run's model on its test split\n"
    "  compare    diff two run histories\n"
    "\n"
    "run 'fedcast <subcommand> --help' for the full flag list.\n";

// ---------------------------------------------------------------------------
// Option bags. Defaults here must mirror the config structs they feed, since
// an unset flag leaves the config value untouched.

struct ExecOpts {
  std::string parallel = "serial";
  int threads = 0;
};

struct DataOpts {
  std::string readings, weather;
  std::string schema = "canonical";
  std::size_t households = 20, days = 60;
  std::uint64_t seed = 1;
  double noise_std = 0.05;
  std::string id_prefix = "H";
  std::string start = "2013-01-01T00:00:00Z";
};

struct PipelineOpts {
  std::size_t window = 48, horizon = 1, stride = 1;
  double frac_train = 0.8, frac_val = 0.1, frac_test = 0.1;
  std::string gap = "forward_fill";
};

struct ModelOpts {
  std::string arch = "linear";
  std::size_t hidden = 32;
};

struct FedOpts {
  std::size_t clients = 20, rounds = 50, local_epochs = 3, batch = 0;
  double fraction = 1.0, lr = 0.01, target_val_mape = 0.0;
  std::uint64_t seed = 1;
};

struct PrivacyOpts {
  double dp_clip = 0.0, dp_noise = 0.0, topk = 0.0;
  bool secure_agg = false;
  std::uint32_t quant_bits = 20, mask_bits = 64;
};

struct ClusterOpts {
  std::size_t after = 1;
  double threshold = 0.0;
  std::size_t k = 0;
  std::string metric = "euclidean", linkage = "average";
};

struct NetOpts {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;
  double join_timeout = 120.0, round_timeout = 60.0;
};

// ---------------------------------------------------------------------------
// Flag registration

void add_exec_flags(CLI::App* cmd, ExecOpts& o) {
  cmd->add_option("--parallel", o.parallel, "Execution mode")
      ->check(CLI::IsMember({"serial", "openmp"}))
      ->capture_default_str();
  cmd->add_option("--threads", o.threads, "Worker threads in openmp mode, 0 = runtime default")
      ->capture_default_str();
}

void add_file_data_flags(CLI::App* cmd, DataOpts& o) {
  auto* r = cmd->add_option("--readings", o.readings, "Half-hourly readings CSV");
  auto* w = cmd->add_option("--weather", o.weather, "Hourly weather CSV");
  r->needs(w);
  w->needs(r);
  cmd->add_option("--schema", o.schema, "Readings CSV dialect")
      ->check(CLI::IsMember({"canonical", "lcl"}))
      ->capture_default_str();
}

void add_synthetic_flags(CLI::App* cmd, DataOpts& o) {
  cmd->add_option("--households", o.households, "Synthetic fleet size")->capture_default_str();
  cmd->add_option("--days", o.days, "Synthetic days per household")->capture_default_str();
  cmd->add_option("--data-seed", o.seed, "Synthetic generator seed")->capture_default_str();
  cmd->add_option("--noise-std", o.noise_std, "Synthetic reading noise, kWh")->capture_default_str();
  cmd->add_option("--id-prefix", o.id_prefix, "Synthetic household id prefix")->capture_default_str();
  cmd->add_option("--start", o.start, "First synthetic day, ISO-8601 UTC")->capture_default_str();
}

void add_pipeline_flags(CLI::App* cmd, PipelineOpts& o) {
  cmd->add_option("--window", o.window, "Lookback window W, half-hour steps")->capture_default_str();
  cmd->add_option("--horizon", o.horizon, "Forecast horizon H, half-hour steps")->capture_default_str();
  cmd->add_option("--stride", o.stride, "Window stride")->capture_default_str();
  cmd->add_option("--frac-train", o.frac_train, "Chronological train fraction")->capture_default_str();
  cmd->add_option("--frac-val", o.frac_val, "Chronological validation fraction")->capture_default_str();
  cmd->add_option("--frac-test", o.frac_test, "Chronological test fraction")->capture_default_str();
  cmd->add_option("--gap-policy", o.gap, "What to do at gaps in a meter series")
      ->check(CLI::IsMember({"forward_fill", "drop_segment"}))
      ->capture_default_str();
}

void add_model_flags(CLI::App* cmd, ModelOpts& o) {
  cmd->add_option("--model", o.arch, "Forecaster architecture")
      ->check(CLI::IsMember({"linear", "lstm"}))
      ->capture_default_str();
  cmd->add_option("--hidden", o.hidden, "LSTM hidden units")->capture_default_str();
}

void add_federation_flags(CLI::App* cmd, FedOpts& o) {
  cmd->add_option("--clients", o.clients, "Number of clients m")->capture_default_str();
  cmd->add_option("--rounds", o.rounds, "Federated rounds")->capture_default_str();
  cmd->add_option("--fraction", o.fraction, "Client fraction C selected per round")->capture_default_str();
  cmd->add_option("--local-epochs", o.local_epochs, "Local epochs E per round")->capture_default_str();
  cmd->add_option("--batch", o.batch, "Local minibatch size B, 0 = full batch")->capture_default_str();
  cmd->add_option("--lr", o.lr, "Local learning rate")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Run seed")->capture_default_str();
  cmd->add_option("--target-val-mape", o.target_val_mape, "Stop early at this validation MAPE, percent");
}

void add_privacy_flags(CLI::App* cmd, PrivacyOpts& o) {
  cmd->add_option("--dp-clip", o.dp_clip, "L2 clip bound S, 0 = off")->capture_default_str();
  cmd->add_option("--dp-noise", o.dp_noise, "Gaussian noise multiplier z, 0 = off")->capture_default_str();
  cmd->add_option("--topk", o.topk, "Kept update fraction rho, 0 = off")->capture_default_str();
  cmd->add_flag("--secure-agg", o.secure_agg, "Pairwise-masked secure aggregation");
  cmd->add_option("--quant-bits", o.quant_bits, "Secure aggregation quantization bits")->capture_default_str();
  cmd->add_option("--mask-bits", o.mask_bits, "Secure aggregation modulus bits")->capture_default_str();
}

void add_cluster_flags(CLI::App* cmd, ClusterOpts& o) {
  cmd->add_option("--cluster-after", o.after, "Split the fleet after this warm-up round");
  cmd->add_option("--cluster-threshold", o.threshold, "Stop merging above this distance");
  cmd->add_option("--cluster-k", o.k, "Stop merging at this many clusters");
  cmd->add_option("--cluster-metric", o.metric, "Update distance metric")
      ->check(CLI::IsMember({"euclidean", "cosine"}))
      ->capture_default_str();
  cmd->add_option("--cluster-linkage", o.linkage, "Agglomeration linkage")
      ->check(CLI::IsMember({"single", "complete", "average"}))
      ->capture_default_str();
}

// ---------------------------------------------------------------------------
// Flag -> config resolution. A manifest (when given) is the base; flags the
// user actually typed win over it.

void put(CLI::App* cmd, const std::string& flag, auto& dst, const auto& src) {
  if (cmd->count(flag) > 0) dst = src;
}

fed::FederationConfig resolve_federation(CLI::App* cmd, const FedOpts& f, const ModelOpts& m,
                                         const PrivacyOpts& p, const ClusterOpts& c, const PipelineOpts& pl,
                                         const std::optional<fed::FederationConfig>& base) {
  fed::FederationConfig cfg = base ? *base : fed::FederationConfig{};
  put(cmd, "--clients", cfg.clients, f.clients);
  put(cmd, "--rounds", cfg.rounds, f.rounds);
  put(cmd, "--fraction", cfg.fraction, f.fraction);
  put(cmd, "--local-epochs", cfg.local_epochs, f.local_epochs);
  put(cmd, "--batch", cfg.batch, f.batch);
  put(cmd, "--lr", cfg.lr, f.lr);
  put(cmd, "--seed", cfg.seed, f.seed);
  if (cmd->count("--target-val-mape") > 0) cfg.target_val_mape = f.target_val_mape;

  if (cmd->count("--model") > 0) cfg.model.arch = model::arch_from_name(m.arch);
  put(cmd, "--hidden", cfg.model.hidden, m.hidden);
  put(cmd, "--window", cfg.model.window, pl.window);
  put(cmd, "--horizon", cfg.model.horizon, pl.horizon);
  cfg.model.features = data::kFeatureCount;

  put(cmd, "--dp-clip", cfg.privacy.dp_clip, p.dp_clip);
  put(cmd, "--dp-noise", cfg.privacy.dp_noise, p.dp_noise);
  put(cmd, "--topk", cfg.privacy.topk, p.topk);
  if (p.secure_agg) cfg.privacy.secure_agg = true;
  put(cmd, "--quant-bits", cfg.privacy.quant_bits, p.quant_bits);
  put(cmd, "--mask-bits", cfg.privacy.mask_bits, p.mask_bits);

  if (cmd->count("--cluster-after") > 0) {
    cfg.cluster.enabled = true;
    cfg.cluster.warmup_rounds = c.after;
  }
  if (cmd->count("--cluster-threshold") > 0) {
    cfg.cluster.enabled = true;
    cfg.cluster.threshold = c.threshold;
  }
  if (cmd->count("--cluster-k") > 0) {
    cfg.cluster.enabled = true;
    cfg.cluster.k = c.k;
  }
  if (cmd->count("--cluster-metric") > 0) cfg.cluster.metric = clustering::metric_from_name(c.metric);
  if (cmd->count("--cluster-linkage") > 0) cfg.cluster.linkage = clustering::linkage_from_name(c.linkage);
  return cfg;
}

data::PipelineParams resolve_pipeline(CLI::App* cmd, const PipelineOpts& o,
                                      const std::optional<data::PipelineParams>& base) {
  data::PipelineParams p = base ? *base : data::PipelineParams{};
  put(cmd, "--window", p.window, o.window);
  put(cmd, "--horizon", p.horizon, o.horizon);
  put(cmd, "--stride", p.stride, o.stride);
  put(cmd, "--frac-train", p.fractions[0], o.frac_train);
  put(cmd, "--frac-val", p.fractions[1], o.frac_val);
  put(cmd, "--frac-test", p.fractions[2], o.frac_test);
  if (cmd->count("--gap-policy") > 0) {
    p.gap_policy = o.gap == "drop_segment" ? data::GapPolicy::drop_segment : data::GapPolicy::forward_fill;
  }
  return p;
}

data::SyntheticConfig resolve_synthetic(CLI::App* cmd, const DataOpts& o,
                                        const std::optional<data::SyntheticConfig>& base) {
  data::SyntheticConfig s = base ? *base : data::SyntheticConfig{};
  put(cmd, "--households", s.n_households, o.households);
  put(cmd, "--days", s.n_days, o.days);
  put(cmd, "--data-seed", s.seed, o.seed);
  put(cmd, "--noise-std", s.noise_std, o.noise_std);
  put(cmd, "--id-prefix", s.id_prefix, o.id_prefix);
  if (cmd->count("--start") > 0) s.start = data::parse_iso8601(o.start);
  return s;
}

bool any_synthetic_flag(CLI::App* cmd) {
  for (const char* f : {"--households", "--days", "--data-seed", "--noise-std", "--id-prefix", "--start"}) {
    if (cmd->get_option_no_throw(f) && cmd->count(f) > 0) return true;
  }
  return false;
}

app::DataSpec resolve_data(CLI::App* cmd, const DataOpts& o, const std::optional<app::DataSpec>& base) {
  app::DataSpec spec = base ? *base : app::DataSpec{};
  const bool file_flags = cmd->get_option_no_throw("--readings") && cmd->count("--readings") > 0;
  if (file_flags) {
    spec.synthetic.reset();
    spec.readings = app::FileRef{fs::absolute(o.readings).string(), 0};
    spec.weather = app::FileRef{fs::absolute(o.weather).string(), 0};
    spec.schema = o.schema;
    return spec;
  }
  if (spec.readings && !any_synthetic_flag(cmd)) return spec;  // keep the manifest's files
  spec.readings.reset();
  spec.weather.reset();
  spec.synthetic = resolve_synthetic(cmd, o, base ? base->synthetic : std::nullopt);
  return spec;
}

ExecMode resolve_exec(CLI::App* cmd, const ExecOpts& o, std::string& mode_name, int& threads,
                      const std::string& base_mode, int base_threads) {
  mode_name = base_mode;
  threads = base_threads;
  put(cmd, "--parallel", mode_name, o.parallel);
  put(cmd, "--threads", threads, o.threads);
  set_thread_count(threads);
  return mode_name == "openmp" ? ExecMode::openmp : ExecMode::serial;
}

// ---------------------------------------------------------------------------
// Data loading and artifact writing

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::IoError, "cannot open '" + path + "'");
  return in;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) fail(Err::IoError, "cannot write '" + path.string() + "'");
  return out;
}

/// Loads or regenerates the fleet's raw data, filling in content digests.
/// With `verify` set (a manifest rerun), a digest change is an error: the
/// rerun could not possibly reproduce the original outputs.
data::SyntheticData load_data(app::DataSpec& spec, bool verify, bool quiet) {
  if (spec.synthetic) return data::generate_synthetic(*spec.synthetic);
  if (!spec.readings || !spec.weather) fail(Err::BadConfig, "no data source configured");

  auto check = [&](app::FileRef& ref) {
    const std::uint32_t crc = app::crc32_file(ref.path);
    if (verify && ref.crc32 != 0 && crc != ref.crc32) {
      fail(Err::IoError, "'" + ref.path + "' changed since the manifest was written");
    }
    ref.crc32 = crc;
  };
  check(*spec.readings);
  check(*spec.weather);

  data::SyntheticData out;
  {
    auto in = open_in(spec.readings->path);
    out.readings =
        data::parse_readings(in, spec.schema == "lcl" ? data::CsvSchema::lcl : data::CsvSchema::canonical);
  }
  if (!quiet && !out.readings.skips.empty()) {
    std::cerr << "note: skipped " << out.readings.skips.size() << " malformed reading rows\n";
  }
  {
    auto in = open_in(spec.weather->path);
    out.weather = data::parse_weather(in);
  }
  return out;
}

void write_run_outputs(const fs::path& out_dir, const fed::FederationResult& result) {
  {
    auto out = open_out(out_dir / "history.csv");
    fed::write_history_csv(out, result.history);
  }
  {
    auto out = open_out(out_dir / "history.json");
    fed::write_history_json(out, result.history);
  }
  {
    auto out = open_out(out_dir / "model.bin", true);
    const auto bytes = net::encode_dense_values(result.global.values);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  if (result.clusters) {
    {
      auto out = open_out(out_dir / "clusters.csv");
      out << "client_id,cluster_id\n";
      for (std::size_t i = 0; i < result.clusters->labels.size(); ++i) {
        out << i << "," << result.clusters->labels[i] << "\n";
      }
    }
    for (std::size_t k = 0; k < result.cluster_models.size(); ++k) {
      auto out = open_out(out_dir / ("model.cluster" + std::to_string(k) + ".bin"), true);
      const auto bytes = net::encode_dense_values(result.cluster_models[k].values);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
  }
}

void write_history_pair(const fs::path& out_dir, const std::string& stem, const fed::RoundHistory& history) {
  {
    auto out = open_out(out_dir / (stem + ".csv"));
    fed::write_history_csv(out, history);
  }
  {
    auto out = open_out(out_dir / (stem + ".json"));
    fed::write_history_json(out, history);
  }
}

void print_final_rows(const fed::RoundHistory& history) {
  if (history.empty()) return;
  const std::size_t last_round = history.back().round;
  for (const auto& r : history) {
    if (r.round != last_round) continue;
    std::cout << "round " << r.round;
    if (r.cluster >= 0) std::cout << " cluster " << r.cluster;
    std::cout << ": train_loss=" << data::format_double(r.train_loss)
              << " val_mape=" << data::format_double(r.val_mape_pct)
              << "% test_cvrmse=" << data::format_double(r.test_cvrmse_pct)
              << "% cum_uplink=" << r.cum_uplink_bytes << "B\n";
  }
}

std::optional<app::RunManifest> maybe_load_manifest(const std::string& path, const std::string& command) {
  if (path.empty()) return std::nullopt;
  auto in = open_in(path);
  app::RunManifest m = app::parse_manifest(in);
  if (m.command != command) {
    fail(Err::SchemaMismatch, "manifest records a '" + m.command + "' run, not '" + command + "'");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDataCmd {
  CLI::App* cmd = nullptr;
  DataOpts data;
  std::string out, from_manifest;
  bool quiet = false;

  int run() {
    auto base = maybe_load_manifest(from_manifest, "gen-data");
    app::RunManifest m;
    m.command = "gen-data";
    m.artifacts = {"readings.csv", "weather.csv"};
    app::DataSpec spec;
    spec.synthetic =
        resolve_synthetic(cmd, data, base && base->data_spec ? base->data_spec->synthetic : std::nullopt);
    m.data_spec = spec;

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    {
      auto os = open_out(out_dir / "manifest.json");
      app::write_manifest(os, m);
    }
    const data::SyntheticData generated = data::generate_synthetic(*spec.synthetic);
    {
      auto os = open_out(out_dir / "readings.csv");
      data::write_readings_csv(os, generated.readings);
    }
    {
      auto os = open_out(out_dir / "weather.csv");
      data::write_weather_csv(os, generated.weather);
    }
    if (!quiet) {
      std::cout << "wrote " << generated.readings.households.size() << " households, "
                << generated.readings.total_readings() << " readings to " << out_dir.string() << "\n";
    }
    return 0;
  }
};

struct SimulateCmd {
  CLI::App* cmd = nullptr;
  ExecOpts exec;
  DataOpts data;
  PipelineOpts pipe;
  ModelOpts model_opts;
  FedOpts fedopts;
  PrivacyOpts priv;
  ClusterOpts clus;
  std::string out, from_manifest;
  bool baseline = false;
  bool quiet = false;

  int run() {
    auto base = maybe_load_manifest(from_manifest, "simulate");
    app::RunManifest m;
    m.command = "simulate";

    fed::FederationConfig cfg = resolve_federation(cmd, fedopts, model_opts, priv, clus, pipe,
                                                   base ? base->federation : std::nullopt);
    data::PipelineParams pipeline = resolve_pipeline(cmd, pipe, base ? base->pipeline : std::nullopt);
    app::DataSpec spec = resolve_data(cmd, data, base ? base->data_spec : std::nullopt);
    ExecMode mode = resolve_exec(cmd, exec, m.mode, m.threads, base ? base->mode : "serial",
                                 base ? base->threads : 0);
    m.baseline = baseline || (base && base->baseline);
    fed::validate(cfg);

    const data::SyntheticData raw = load_data(spec, base.has_value(), quiet);
    const std::vector<data::ClientDataset> clients =
        data::build_clients(raw.readings, raw.weather, cfg.clients, pipeline, mode);

    m.federation = cfg;
    m.pipeline = pipeline;
    m.data_spec = spec;
    m.artifacts = {"history.csv", "history.json", "model.bin"};
    if (cfg.cluster.enabled) m.artifacts.push_back("clusters.csv");
    if (m.baseline) {
      m.artifacts.push_back("baseline.csv");
      m.artifacts.push_back("baseline.json");
    }

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    {
      auto os = open_out(out_dir / "manifest.json");
      app::write_manifest(os, m);
    }

    fed::SimProvider provider(cfg, clients, mode);
    const fed::FederationResult result = fed::run_federation(cfg, clients, provider, mode);
    write_run_outputs(out_dir, result);

    if (m.baseline) {
      const fed::FederationResult central = fed::centralized_baseline(cfg, clients, mode);
      write_history_pair(out_dir, "baseline", central.history);
    }
    if (!quiet) {
      print_final_rows(result.history);
      std::cout << "wrote " << (out_dir / "history.csv").string() << "\n";
    }
    return 0;
  }
};

struct ServeCmd {
  CLI::App* cmd = nullptr;
  ExecOpts exec;
  DataOpts data;
  PipelineOpts pipe;
  ModelOpts model_opts;
  FedOpts fedopts;
  PrivacyOpts priv;
  ClusterOpts clus;
  NetOpts net_opts;
  std::string out, from_manifest;
  bool quiet = false;

  int run() {
    auto base = maybe_load_manifest(from_manifest, "serve");
    app::RunManifest m;
    m.command = "serve";

    fed::FederationConfig cfg = resolve_federation(cmd, fedopts, model_opts, priv, clus, pipe,
                                                   base ? base->federation : std::nullopt);
    data::PipelineParams pipeline = resolve_pipeline(cmd, pipe, base ? base->pipeline : std::nullopt);
    app::DataSpec spec = resolve_data(cmd, data, base ? base->data_spec : std::nullopt);
    ExecMode mode = resolve_exec(cmd, exec, m.mode, m.threads, base ? base->mode : "serial",
                                 base ? base->threads : 0);

    app::ServeSpec ss = base && base->serve ? *base->serve : app::ServeSpec{};
    put(cmd, "--host", ss.host, net_opts.host);
    put(cmd, "--port", ss.port, net_opts.port);
    put(cmd, "--join-timeout", ss.join_timeout_s, net_opts.join_timeout);
    put(cmd, "--round-timeout", ss.round_timeout_s, net_opts.round_timeout);
    fed::validate(cfg);

    const data::SyntheticData raw = load_data(spec, base.has_value(), quiet);
    const std::vector<data::ClientDataset> clients =
        data::build_clients(raw.readings, raw.weather, cfg.clients, pipeline, mode);

    m.federation = cfg;
    m.pipeline = pipeline;
    m.data_spec = spec;
    m.serve = ss;
    m.artifacts = {"history.csv", "history.json", "model.bin"};
    if (cfg.cluster.enabled) m.artifacts.push_back("clusters.csv");

    const fs::path out_dir(out);
    fs::create_directories(out_dir);
    {
      auto os = open_out(out_dir / "manifest.json");
      app::write_manifest(os, m);
    }

    net::ServeOptions so;
    so.host = ss.host;
    so.port = ss.port;
    so.join_timeout_s = ss.join_timeout_s;
    so.round_timeout_s = ss.round_timeout_s;
    so.quiet = quiet;
    const fed::FederationResult result = net::serve(so, cfg, pipeline, clients, mode);
    write_run_outputs(out_dir, result);
    if (!quiet) {
      print_final_rows(result.history);
      std::cout << "wrote " << (out_dir / "history.csv").string() << "\n";
    }
    return 0;
  }
};

struct ClientCmd {
  CLI::App* cmd = nullptr;
  ExecOpts exec;
  DataOpts data;
  ModelOpts model_opts;
  std::size_t window = 48, horizon = 1;
  NetOpts net_opts;
  std::size_t id = 0;
  int retries = 5;
  bool quiet = false;

  int run() {
    std::string mode_name;
    int threads = 0;
    ExecMode mode = resolve_exec(cmd, exec, mode_name, threads, "serial", 0);

    app::DataSpec spec = resolve_data(cmd, data, std::nullopt);
    const data::SyntheticData raw = load_data(spec, false, quiet);

    net::ClientRuntime rt;
    rt.host = net_opts.host;
    rt.port = net_opts.port;
    rt.client_id = id;
    rt.model.arch = model::arch_from_name(model_opts.arch);
    rt.model.window = window;
    rt.model.horizon = horizon;
    rt.model.features = data::kFeatureCount;
    rt.model.hidden = model_opts.hidden;
    rt.readings = raw.readings;
    rt.weather = raw.weather;
    rt.max_retries = retries;
    rt.quiet = quiet;
    return net::run_client(rt, mode);
  }
};

struct EvaluateCmd {
  CLI::App* cmd = nullptr;
  ExecOpts exec;
  DataOpts data;
  std::string run_dir, out;
  bool quiet = false;

  int do_run() {
    const fs::path run_path(run_dir);
    app::RunManifest run_manifest;
    {
      auto in = open_in((run_path / "manifest.json").string());
      run_manifest = app::parse_manifest(in);
    }
    if (!run_manifest.federation || !run_manifest.pipeline || !run_manifest.data_spec) {
      fail(Err::SchemaMismatch, "'" + run_dir + "' does not hold a training run manifest");
    }
    fed::FederationConfig cfg = *run_manifest.federation;
    data::PipelineParams pipeline = *run_manifest.pipeline;

    std::string mode_name;
    int threads = 0;
    ExecMode mode = resolve_exec(cmd, exec, mode_name, threads, run_manifest.mode, run_manifest.threads);

    app::DataSpec spec = resolve_data(cmd, data, run_manifest.data_spec);
    const bool own_data = cmd->count("--readings") > 0 || any_synthetic_flag(cmd);
    const data::SyntheticData raw = load_data(spec, !own_data, quiet);
    const std::vector<data::ClientDataset> clients =
        data::build_clients(raw.readings, raw.weather, cfg.clients, pipeline, mode);

    const std::string model_path = (run_path / "model.bin").string();
    std::vector<double> values;
    {
      std::ifstream in(model_path, std::ios::binary);
      if (!in) fail(Err::IoError, "cannot open '" + model_path + "'");
      std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      values = net::decode_dense_values(bytes);
    }
    auto layout = model::make_layout(cfg.model);
    if (values.size() != layout->dim) {
      fail(Err::SchemaMismatch, "model file holds " + std::to_string(values.size()) +
                                    " weights, expected " + std::to_string(layout->dim));
    }
    ParamVector params{layout, std::move(values)};

    metrics::EvalReport report = metrics::build_eval_report(cfg.model, params, clients, mode);
    report.model_tag = model::arch_name(cfg.model.arch);
    report.horizon = cfg.model.horizon;

    std::cout << "test MAPE " << data::format_double(report.global.mape_pct) << "% | test CV-RMSE "
              << data::format_double(report.global.cvrmse_pct) << "% | RMSE "
              << data::format_double(report.global.rmse) << " kWh over " << report.global.points
              << " points\n";
    if (!quiet) {
      for (const auto& c : report.per_client) {
        std::cout << "  client " << c.client_id << ": MAPE " << data::format_double(c.test.mape_pct)
                  << "% CV-RMSE " << data::format_double(c.test.cvrmse_pct) << "%\n";
      }
    }

    if (!out.empty()) {
      const fs::path out_dir(out);
      fs::create_directories(out_dir);
      app::RunManifest m;
      m.command = "evaluate";
      m.mode = mode_name;
      m.threads = threads;
      m.data_spec = spec;
      m.pipeline = pipeline;
      m.federation = cfg;
      m.evaluate = app::EvaluateSpec{app::FileRef{fs::absolute(model_path).string(), app::crc32_file(model_path)}};
      m.artifacts = {"eval.csv", "eval.json"};
      {
        auto os = open_out(out_dir / "manifest.json");
        app::write_manifest(os, m);
      }
      {
        auto os = open_out(out_dir / "eval.csv");
        metrics::write_eval_report_csv(os, report);
      }
      {
        auto os = open_out(out_dir / "eval.json");
        metrics::write_eval_report_json(os, report);
      }
    }
    return 0;
  }
};

struct CompareCmd {
  CLI::App* cmd = nullptr;
  std::string a, b, out;
  double tolerance = 0.0;
  bool quiet = false;

  int run() {
    fed::RoundHistory ha, hb;
    {
      auto in = open_in(a);
      ha = fed::parse_history_csv(in);
    }
    {
      auto in = open_in(b);
      hb = fed::parse_history_csv(in);
    }
    const fed::RunComparison cmp = fed::compare_runs(ha, hb);

    std::cout << "rows compared: " << cmp.rows.size() << "\n"
              << "max |metric delta|: " << data::format_double(cmp.max_abs_delta) << "\n"
              << "final val MAPE: a=" << data::format_double(cmp.final_val_mape_a)
              << "% b=" << data::format_double(cmp.final_val_mape_b) << "%\n"
              << "final test CV-RMSE: a=" << data::format_double(cmp.final_test_cvrmse_a)
              << "% b=" << data::format_double(cmp.final_test_cvrmse_b) << "%\n"
              << "total uplink: a=" << cmp.total_uplink_a << "B b=" << cmp.total_uplink_b << "B\n";

    if (!out.empty()) {
      const fs::path out_dir(out);
      fs::create_directories(out_dir);
      app::RunManifest m;
      m.command = "compare";
      app::CompareSpec cs;
      cs.a = app::FileRef{fs::absolute(a).string(), app::crc32_file(a)};
      cs.b = app::FileRef{fs::absolute(b).string(), app::crc32_file(b)};
      if (cmd->count("--tolerance") > 0) cs.tolerance = tolerance;
      m.compare = cs;
      m.artifacts = {"compare.csv", "compare.json"};
      {
        auto os = open_out(out_dir / "manifest.json");
        app::write_manifest(os, m);
      }
      {
        auto os = open_out(out_dir / "compare.csv");
        fed::write_comparison_csv(os, cmp);
      }
      {
        auto os = open_out(out_dir / "compare.json");
        fed::write_comparison_json(os, cmp);
      }
    }

    if (cmd->count("--tolerance") > 0 && cmp.max_abs_delta > tolerance) {
      std::cerr << "histories differ: max |metric delta| " << data::format_double(cmp.max_abs_delta)
                << " exceeds " << data::format_double(tolerance) << "\n";
      return 2;
    }
    return 0;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated half-hourly energy-demand forecasting toolkit"};
  app.set_version_flag("--version", app::kToolVersion);
  app.require_subcommand(1);

  GenDataCmd gen;
  gen.cmd = app.add_subcommand("gen-data", "Write a synthetic readings/weather CSV pair");
  add_synthetic_flags(gen.cmd, gen.data);
  gen.cmd->add_option("--out", gen.out, "Output directory")->required();
  gen.cmd->add_option("--from-manifest", gen.from_manifest, "Rerun an earlier gen-data manifest");
  gen.cmd->add_flag("--quiet", gen.quiet, "Suppress progress output");

  SimulateCmd sim;
  sim.cmd = app.add_subcommand("simulate", "Run an in-process federated training run");
  add_exec_flags(sim.cmd, sim.exec);
  add_file_data_flags(sim.cmd, sim.data);
  add_synthetic_flags(sim.cmd, sim.data);
  add_pipeline_flags(sim.cmd, sim.pipe);
  add_model_flags(sim.cmd, sim.model_opts);
  add_federation_flags(sim.cmd, sim.fedopts);
  add_privacy_flags(sim.cmd, sim.priv);
  add_cluster_flags(sim.cmd, sim.clus);
  sim.cmd->add_option("--out", sim.out, "Output directory")->required();
  sim.cmd->add_option("--from-manifest", sim.from_manifest, "Rerun an earlier simulate manifest");
  sim.cmd->add_flag("--baseline", sim.baseline, "Also train the pooled-data baseline");
  sim.cmd->add_flag("--quiet", sim.quiet, "Suppress progress output");

  ServeCmd srv;
  srv.cmd = app.add_subcommand("serve", "Run the parameter server over TCP");
  add_exec_flags(srv.cmd, srv.exec);
  add_file_data_flags(srv.cmd, srv.data);
  add_synthetic_flags(srv.cmd, srv.data);
  add_pipeline_flags(srv.cmd, srv.pipe);
  add_model_flags(srv.cmd, srv.model_opts);
  add_federation_flags(srv.cmd, srv.fedopts);
  add_privacy_flags(srv.cmd, srv.priv);
  add_cluster_flags(srv.cmd, srv.clus);
  srv.cmd->add_option("--host", srv.net_opts.host, "Bind address")->capture_default_str();
  srv.cmd->add_option("--port", srv.net_opts.port, "Bind port, 0 = ephemeral")->capture_default_str();
  srv.cmd->add_option("--join-timeout", srv.net_opts.join_timeout, "Seconds to wait for the fleet to join")
      ->capture_default_str();
  srv.cmd->add_option("--round-timeout", srv.net_opts.round_timeout, "Seconds to wait for a round's updates")
      ->capture_default_str();
  srv.cmd->add_option("--out", srv.out, "Output directory")->required();
  srv.cmd->add_option("--from-manifest", srv.from_manifest, "Rerun an earlier serve manifest");
  srv.cmd->add_flag("--quiet", srv.quiet, "Suppress progress output");

  ClientCmd cli;
  cli.cmd = app.add_subcommand("client", "Run one training client against a server");
  add_exec_flags(cli.cmd, cli.exec);
  add_file_data_flags(cli.cmd, cli.data);
  add_synthetic_flags(cli.cmd, cli.data);
  add_model_flags(cli.cmd, cli.model_opts);
  cli.cmd->add_option("--window", cli.window, "Lookback window W, must match the server")
      ->capture_default_str();
  cli.cmd->add_option("--horizon", cli.horizon, "Forecast horizon H, must match the server")
      ->capture_default_str();
  cli.cmd->add_option("--host", cli.net_opts.host, "Server address")->capture_default_str();
  cli.cmd->add_option("--port", cli.net_opts.port, "Server port")->capture_default_str();
  cli.cmd->add_option("--id", cli.id, "This client's id, 0-based")->required();
  cli.cmd->add_option("--retries", cli.retries, "Connection attempts before giving up")
      ->capture_default_str();
  cli.cmd->add_flag("--quiet", cli.quiet, "Suppress progress output");

  EvaluateCmd ev;
  ev.cmd = app.add_subcommand("evaluate", "Score a finished run's model on its test split");
  add_exec_flags(ev.cmd, ev.exec);
  add_file_data_flags(ev.cmd, ev.data);
  add_synthetic_flags(ev.cmd, ev.data);
  ev.cmd->add_option("--run", ev.run_dir, "A simulate/serve output directory")->required();
  ev.cmd->add_option("--out", ev.out, "Write eval.csv/eval.json here");
  ev.cmd->add_flag("--quiet", ev.quiet, "Only print the pooled result");

  CompareCmd cp;
  cp.cmd = app.add_subcommand("compare", "Diff two run histories");
  cp.cmd->add_option("--a", cp.a, "First history.csv")->required();
  cp.cmd->add_option("--b", cp.b, "Second history.csv")->required();
  cp.cmd->add_option("--tolerance", cp.tolerance, "Exit 2 when any metric delta exceeds this");
  cp.cmd->add_option("--out", cp.out, "Write compare.csv/compare.json here");
  cp.cmd->add_flag("--quiet", cp.quiet, "Suppress the summary table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << kSynopsis;
    return 1;
  }

  try {
    if (gen.cmd->parsed()) return gen.run();
    if (sim.cmd->parsed()) return sim.run();
    if (srv.cmd->parsed()) return srv.run();
    if (cli.cmd->parsed()) return cli.run();
    if (ev.cmd->parsed()) return ev.do_run();
    if (cp.cmd->parsed()) return cp.run();
  } catch (const FedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cerr << kSynopsis;
  return 1;
}
