#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedcast/dataset.hpp"
#include "fedcast/fedcore.hpp"

namespace fedcast::app {

constexpr const char* kToolName = "fedcast";
constexpr const char* kToolVersion = "0.4.0";
constexpr int kManifestSchema = 1;

/// An input file pinned by absolute path and content checksum, so a rerun
/// can prove it is reading the same bytes.
struct FileRef {
  std::string path;
  std::uint32_t crc32 = 0;
};

/// Where the readings come from: either a fully seeded synthetic fleet or a
/// pair of CSV files.
struct DataSpec {
  std::optional<data::SyntheticConfig> synthetic;
  std::optional<FileRef> readings;
  std::optional<FileRef> weather;
  std::string schema = "canonical";  // readings CSV dialect when files are used
};

struct ServeSpec {
  std::string host = "127.0.0.1";
  std::uint16_t port = 7700;
  double join_timeout_s = 120.0;
  double round_timeout_s = 60.0;
};

struct EvaluateSpec {
  FileRef model_file;
};

struct CompareSpec {
  FileRef a, b;
  std::optional<double> tolerance;
};

/// Everything needed to rerun a command bit-identically: the resolved config
/// with every default materialized, the data source, and the list of files
/// the run wrote. Always the first artifact written.
struct RunManifest {
  std::string command;
  std::string mode = "serial";
  int threads = 0;
  bool baseline = false;
  std::vector<std::string> artifacts;
  std::optional<fed::FederationConfig> federation;
  std::optional<data::PipelineParams> pipeline;
  std::optional<DataSpec> data_spec;
  std::optional<ServeSpec> serve;
  std::optional<EvaluateSpec> evaluate;
  std::optional<CompareSpec> compare;
};

void write_manifest(std::ostream& out, const RunManifest& m);
RunManifest parse_manifest(std::istream& in);

std::uint32_t crc32_file(const std::string& path);

}  // namespace fedcast::app
