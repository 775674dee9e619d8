#include "fedcast/manifest.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>
#include <zlib.h>

#include "fedcast/clustering.hpp"
#include "fedcast/model.hpp"

namespace fedcast::app {

using nlohmann::json;

namespace {

json file_ref_json(const FileRef& f) { return json{{"path", f.path}, {"crc32", f.crc32}}; }

FileRef file_ref_from(const json& j) {
  FileRef f;
  f.path = j.at("path").get<std::string>();
  f.crc32 = j.at("crc32").get<std::uint32_t>();
  return f;
}

json federation_json(const fed::FederationConfig& c) {
  json j;
  j["clients"] = c.clients;
  j["fraction"] = c.fraction;
  j["local_epochs"] = c.local_epochs;
  j["batch"] = c.batch;
  j["lr"] = c.lr;
  j["rounds"] = c.rounds;
  j["target_val_mape"] = c.target_val_mape ? json(*c.target_val_mape) : json(nullptr);
  j["seed"] = c.seed;
  j["model"] = {{"arch", model::arch_name(c.model.arch)},
                {"window", c.model.window},
                {"horizon", c.model.horizon},
                {"features", c.model.features},
                {"hidden", c.model.hidden}};
  j["privacy"] = {{"dp_clip", c.privacy.dp_clip},     {"dp_noise", c.privacy.dp_noise},
                  {"topk", c.privacy.topk},           {"secure_agg", c.privacy.secure_agg},
                  {"quant_bits", c.privacy.quant_bits}, {"mask_bits", c.privacy.mask_bits}};
  j["cluster"] = {{"enabled", c.cluster.enabled},
                  {"warmup_rounds", c.cluster.warmup_rounds},
                  {"metric", clustering::metric_name(c.cluster.metric)},
                  {"linkage", clustering::linkage_name(c.cluster.linkage)},
                  {"threshold", c.cluster.threshold ? json(*c.cluster.threshold) : json(nullptr)},
                  {"k", c.cluster.k ? json(*c.cluster.k) : json(nullptr)}};
  return j;
}

fed::FederationConfig federation_from(const json& j) {
  fed::FederationConfig c;
  c.clients = j.at("clients").get<std::size_t>();
  c.fraction = j.at("fraction").get<double>();
  c.local_epochs = j.at("local_epochs").get<std::size_t>();
  c.batch = j.at("batch").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.rounds = j.at("rounds").get<std::size_t>();
  if (!j.at("target_val_mape").is_null()) c.target_val_mape = j.at("target_val_mape").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const json& m = j.at("model");
  c.model.arch = model::arch_from_name(m.at("arch").get<std::string>());
  c.model.window = m.at("window").get<std::size_t>();
  c.model.horizon = m.at("horizon").get<std::size_t>();
  c.model.features = m.at("features").get<std::size_t>();
  c.model.hidden = m.at("hidden").get<std::size_t>();
  const json& p = j.at("privacy");
  c.privacy.dp_clip = p.at("dp_clip").get<double>();
  c.privacy.dp_noise = p.at("dp_noise").get<double>();
  c.privacy.topk = p.at("topk").get<double>();
  c.privacy.secure_agg = p.at("secure_agg").get<bool>();
  c.privacy.quant_bits = p.at("quant_bits").get<std::uint32_t>();
  c.privacy.mask_bits = p.at("mask_bits").get<std::uint32_t>();
  const json& k = j.at("cluster");
  c.cluster.enabled = k.at("enabled").get<bool>();
  c.cluster.warmup_rounds = k.at("warmup_rounds").get<std::size_t>();
  c.cluster.metric = clustering::metric_from_name(k.at("metric").get<std::string>());
  c.cluster.linkage = clustering::linkage_from_name(k.at("linkage").get<std::string>());
  if (!k.at("threshold").is_null()) c.cluster.threshold = k.at("threshold").get<double>();
  if (!k.at("k").is_null()) c.cluster.k = k.at("k").get<std::size_t>();
  return c;
}

json pipeline_json(const data::PipelineParams& p) {
  return json{{"window", p.window},
              {"horizon", p.horizon},
              {"stride", p.stride},
              {"fractions", {p.fractions[0], p.fractions[1], p.fractions[2]}},
              {"gap_policy", p.gap_policy == data::GapPolicy::drop_segment ? "drop_segment" : "forward_fill"}};
}

data::PipelineParams pipeline_from(const json& j) {
  data::PipelineParams p;
  p.window = j.at("window").get<std::size_t>();
  p.horizon = j.at("horizon").get<std::size_t>();
  p.stride = j.at("stride").get<std::size_t>();
  const json& f = j.at("fractions");
  p.fractions = {f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>()};
  const std::string gp = j.at("gap_policy").get<std::string>();
  if (gp == "forward_fill") {
    p.gap_policy = data::GapPolicy::forward_fill;
  } else if (gp == "drop_segment") {
    p.gap_policy = data::GapPolicy::drop_segment;
  } else {
    fail(Err::SchemaMismatch, "unknown gap policy '" + gp + "'");
  }
  return p;
}

json synthetic_json(const data::SyntheticConfig& s) {
  json j;
  j["n_households"] = s.n_households;
  j["n_days"] = s.n_days;
  j["seed"] = s.seed;
  j["start"] = s.start;
  j["noise_std"] = s.noise_std;
  j["base"] = {s.base_lo, s.base_hi};
  j["daily_amp"] = {s.daily_amp_lo, s.daily_amp_hi};
  j["weekend"] = {s.weekend_lo, s.weekend_hi};
  j["heating"] = {s.heating_lo, s.heating_hi};
  j["id_prefix"] = s.id_prefix;
  return j;
}

data::SyntheticConfig synthetic_from(const json& j) {
  data::SyntheticConfig s;
  s.n_households = j.at("n_households").get<std::size_t>();
  s.n_days = j.at("n_days").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.start = j.at("start").get<data::Timestamp>();
  s.noise_std = j.at("noise_std").get<double>();
  auto range = [&](const char* key, double& lo, double& hi) {
    lo = j.at(key).at(0).get<double>();
    hi = j.at(key).at(1).get<double>();
  };
  range("base", s.base_lo, s.base_hi);
  range("daily_amp", s.daily_amp_lo, s.daily_amp_hi);
  range("weekend", s.weekend_lo, s.weekend_hi);
  range("heating", s.heating_lo, s.heating_hi);
  s.id_prefix = j.at("id_prefix").get<std::string>();
  return s;
}

json data_spec_json(const DataSpec& d) {
  json j;
  if (d.synthetic) j["synthetic"] = synthetic_json(*d.synthetic);
  if (d.readings) {
    j["readings"] = file_ref_json(*d.readings);
    j["schema"] = d.schema;
  }
  if (d.weather) j["weather"] = file_ref_json(*d.weather);
  return j;
}

DataSpec data_spec_from(const json& j) {
  DataSpec d;
  if (j.contains("synthetic")) d.synthetic = synthetic_from(j.at("synthetic"));
  if (j.contains("readings")) d.readings = file_ref_from(j.at("readings"));
  if (j.contains("weather")) d.weather = file_ref_from(j.at("weather"));
  d.schema = j.value("schema", "canonical");
  return d;
}

}  // namespace

void write_manifest(std::ostream& out, const RunManifest& m) {
  json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["schema"] = kManifestSchema;
  j["command"] = m.command;
  j["mode"] = m.mode;
  j["threads"] = m.threads;
  j["baseline"] = m.baseline;
  j["artifacts"] = m.artifacts;
  if (m.federation) j["federation"] = federation_json(*m.federation);
  if (m.pipeline) j["pipeline"] = pipeline_json(*m.pipeline);
  if (m.data_spec) j["data"] = data_spec_json(*m.data_spec);
  if (m.serve) {
    j["serve"] = {{"host", m.serve->host},
                  {"port", m.serve->port},
                  {"join_timeout_s", m.serve->join_timeout_s},
                  {"round_timeout_s", m.serve->round_timeout_s}};
  }
  if (m.evaluate) j["evaluate"] = {{"model_file", file_ref_json(m.evaluate->model_file)}};
  if (m.compare) {
    json c;
    c["a"] = file_ref_json(m.compare->a);
    c["b"] = file_ref_json(m.compare->b);
    c["tolerance"] = m.compare->tolerance ? json(*m.compare->tolerance) : json(nullptr);
    j["compare"] = c;
  }
  out << j.dump(2) << "\n";
}

RunManifest parse_manifest(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(Err::SchemaMismatch, std::string("manifest is not valid JSON: ") + e.what());
  }
  RunManifest m;
  try {
    if (j.at("tool").get<std::string>() != kToolName)
      fail(Err::SchemaMismatch, "manifest was written by a different tool");
    if (j.at("schema").get<int>() != kManifestSchema)
      fail(Err::SchemaMismatch, "unsupported manifest schema version");
    m.command = j.at("command").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    m.threads = j.at("threads").get<int>();
    m.baseline = j.value("baseline", false);
    if (j.contains("artifacts")) m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    if (j.contains("federation")) m.federation = federation_from(j.at("federation"));
    if (j.contains("pipeline")) m.pipeline = pipeline_from(j.at("pipeline"));
    if (j.contains("data")) m.data_spec = data_spec_from(j.at("data"));
    if (j.contains("serve")) {
      const json& s = j.at("serve");
      ServeSpec sp;
      sp.host = s.at("host").get<std::string>();
      sp.port = s.at("port").get<std::uint16_t>();
      sp.join_timeout_s = s.at("join_timeout_s").get<double>();
      sp.round_timeout_s = s.at("round_timeout_s").get<double>();
      m.serve = sp;
    }
    if (j.contains("evaluate")) {
      EvaluateSpec ev;
      ev.model_file = file_ref_from(j.at("evaluate").at("model_file"));
      m.evaluate = ev;
    }
    if (j.contains("compare")) {
      const json& c = j.at("compare");
      CompareSpec cs;
      cs.a = file_ref_from(c.at("a"));
      cs.b = file_ref_from(c.at("b"));
      if (!c.at("tolerance").is_null()) cs.tolerance = c.at("tolerance").get<double>();
      m.compare = cs;
    }
  } catch (const json::exception& e) {
    fail(Err::SchemaMismatch, std::string("manifest field error: ") + e.what());
  }
  return m;
}

std::uint32_t crc32_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Err::IoError, "cannot open '" + path + "'");
  uLong crc = ::crc32(0L, Z_NULL, 0);
  char buf[65536];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(buf), static_cast<uInt>(in.gcount()));
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace fedcast::app
