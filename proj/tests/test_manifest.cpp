#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fedcast/manifest.hpp"
#include "helpers.hpp"

using namespace fedcast;
using namespace fedcast::app;
using testutil::code_of;

namespace {

RunManifest full_manifest() {
  RunManifest m;
  m.command = "simulate";
  m.mode = "openmp";
  m.threads = 4;
  m.baseline = true;
  m.artifacts = {"manifest.json", "history.csv", "model.bin"};

  fed::FederationConfig cfg;
  cfg.clients = 8;
  cfg.fraction = 0.5;
  cfg.local_epochs = 2;
  cfg.batch = 16;
  cfg.lr = 0.02;
  cfg.rounds = 12;
  cfg.target_val_mape = 9.5;
  cfg.seed = 77;
  cfg.model.arch = model::ModelArch::lstm;
  cfg.model.window = 24;
  cfg.model.hidden = 16;
  cfg.privacy.dp_clip = 1.0;
  cfg.privacy.dp_noise = 0.4;
  cfg.cluster.enabled = true;
  cfg.cluster.warmup_rounds = 2;
  cfg.cluster.metric = clustering::DistanceMetric::cosine;
  cfg.cluster.linkage = clustering::Linkage::complete;
  cfg.cluster.k = 3;
  m.federation = cfg;

  data::PipelineParams pipeline;
  pipeline.window = 24;
  pipeline.stride = 2;
  pipeline.fractions = {0.7, 0.15, 0.15};
  pipeline.gap_policy = data::GapPolicy::drop_segment;
  m.pipeline = pipeline;

  DataSpec ds;
  data::SyntheticConfig synth;
  synth.n_households = 10;
  synth.n_days = 14;
  synth.seed = 3;
  synth.heating_lo = 0.01;
  synth.heating_hi = 0.09;
  ds.synthetic = synth;
  m.data_spec = ds;
  return m;
}

}  // namespace

TEST_CASE("manifest json round trip preserves every resolved setting") {
  RunManifest m = full_manifest();
  std::ostringstream out;
  write_manifest(out, m);

  std::istringstream in(out.str());
  RunManifest back = parse_manifest(in);

  CHECK(back.command == m.command);
  CHECK(back.mode == m.mode);
  CHECK(back.threads == m.threads);
  CHECK(back.baseline == m.baseline);
  CHECK(back.artifacts == m.artifacts);

  REQUIRE(back.federation.has_value());
  const auto& f = *back.federation;
  const auto& g = *m.federation;
  CHECK(f.clients == g.clients);
  CHECK(f.fraction == g.fraction);
  CHECK(f.local_epochs == g.local_epochs);
  CHECK(f.batch == g.batch);
  CHECK(f.lr == g.lr);
  CHECK(f.rounds == g.rounds);
  CHECK(f.target_val_mape == g.target_val_mape);
  CHECK(f.seed == g.seed);
  CHECK(f.model == g.model);
  CHECK(f.privacy.dp_clip == g.privacy.dp_clip);
  CHECK(f.privacy.dp_noise == g.privacy.dp_noise);
  CHECK(f.privacy.topk == g.privacy.topk);
  CHECK(f.privacy.secure_agg == g.privacy.secure_agg);
  CHECK(f.cluster.enabled == g.cluster.enabled);
  CHECK(f.cluster.warmup_rounds == g.cluster.warmup_rounds);
  CHECK(f.cluster.metric == g.cluster.metric);
  CHECK(f.cluster.linkage == g.cluster.linkage);
  CHECK(f.cluster.k == g.cluster.k);
  CHECK(f.cluster.threshold == g.cluster.threshold);

  REQUIRE(back.pipeline.has_value());
  CHECK(back.pipeline->window == m.pipeline->window);
  CHECK(back.pipeline->stride == m.pipeline->stride);
  CHECK(back.pipeline->fractions == m.pipeline->fractions);
  CHECK(back.pipeline->gap_policy == m.pipeline->gap_policy);

  REQUIRE(back.data_spec.has_value());
  REQUIRE(back.data_spec->synthetic.has_value());
  CHECK(back.data_spec->synthetic->n_households == 10);
  CHECK(back.data_spec->synthetic->n_days == 14);
  CHECK(back.data_spec->synthetic->seed == 3);
  CHECK(back.data_spec->synthetic->heating_lo == 0.01);
  CHECK(back.data_spec->synthetic->heating_hi == 0.09);
  CHECK_FALSE(back.data_spec->readings.has_value());
  CHECK_FALSE(back.serve.has_value());
  CHECK_FALSE(back.evaluate.has_value());

  // a second trip through the writer is byte-stable
  std::ostringstream out2;
  write_manifest(out2, back);
  CHECK(out2.str() == out.str());
}

TEST_CASE("manifest with file-backed data and serve settings") {
  RunManifest m;
  m.command = "serve";
  DataSpec ds;
  ds.readings = FileRef{"/data/readings.csv", 0xCAFEBABE};
  ds.weather = FileRef{"/data/weather.csv", 0x1234};
  ds.schema = "lcl";
  m.data_spec = ds;
  ServeSpec sv;
  sv.host = "0.0.0.0";
  sv.port = 7788;
  sv.join_timeout_s = 30.0;
  sv.round_timeout_s = 15.0;
  m.serve = sv;
  CompareSpec cmp;
  cmp.a = FileRef{"/runs/a/history.csv", 1};
  cmp.b = FileRef{"/runs/b/history.csv", 2};
  cmp.tolerance = 1e-9;
  m.compare = cmp;

  std::ostringstream out;
  write_manifest(out, m);
  std::istringstream in(out.str());
  RunManifest back = parse_manifest(in);

  REQUIRE(back.data_spec.has_value());
  REQUIRE(back.data_spec->readings.has_value());
  CHECK(back.data_spec->readings->path == "/data/readings.csv");
  CHECK(back.data_spec->readings->crc32 == 0xCAFEBABE);
  CHECK(back.data_spec->schema == "lcl");
  REQUIRE(back.serve.has_value());
  CHECK(back.serve->host == "0.0.0.0");
  CHECK(back.serve->port == 7788);
  CHECK(back.serve->round_timeout_s == 15.0);
  REQUIRE(back.compare.has_value());
  CHECK(back.compare->a.path == "/runs/a/history.csv");
  CHECK(back.compare->tolerance == 1e-9);
}

TEST_CASE("manifest parsing rejects foreign documents") {
  std::istringstream junk("not json at all {");
  CHECK(code_of([&] { parse_manifest(junk); }) == Err::SchemaMismatch);

  std::istringstream wrong_tool(R"({"tool":"othertool","schema":1,"command":"simulate"})");
  CHECK(code_of([&] { parse_manifest(wrong_tool); }) == Err::SchemaMismatch);

  std::istringstream wrong_schema(
      R"({"tool":"fedcast","version":"0.4.0","schema":99,"command":"simulate","mode":"serial","threads":0})");
  CHECK(code_of([&] { parse_manifest(wrong_schema); }) == Err::SchemaMismatch);

  std::istringstream missing_field(R"({"tool":"fedcast","schema":1})");
  CHECK(code_of([&] { parse_manifest(missing_field); }) == Err::SchemaMismatch);
}

TEST_CASE("file checksums use the standard crc32") {
  const std::string path = "/tmp/fedcast-test-crc32.txt";
  {
    std::ofstream out(path, std::ios::binary);
    out << "123456789";
  }
  CHECK(crc32_file(path) == 0xCBF43926u);  // the classic crc32 check value
  std::remove(path.c_str());

  CHECK(code_of([] { crc32_file("/tmp/definitely-missing-fedcast-file"); }) == Err::IoError);
}
