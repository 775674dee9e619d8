#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcast/errors.hpp"
#include "fedcast/parallel.hpp"

namespace fedcast::data {

/// Seconds since the Unix epoch, UTC. All readings sit on 30-minute boundaries.
using Timestamp = std::int64_t;

constexpr std::int64_t kStepSeconds = 1800;
constexpr std::size_t kHalfHoursPerDay = 48;

Timestamp parse_iso8601(std::string_view text);
std::string format_iso8601(Timestamp t);

/// Half-hour slot of the day, 0..47, from the reading's own timestamp.
int hour_of_day_index(Timestamp t);
/// Day of week, 0 = Monday .. 6 = Sunday.
int day_of_week(Timestamp t);

/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Raw readings

struct SkipRecord {
  std::size_t row;  // 1-based line number in the source CSV
  std::string reason;
};

struct HouseholdSeries {
  std::string household_id;
  std::vector<Timestamp> t;
  std::vector<double> kwh;
};

struct ReadingSet {
  std::vector<HouseholdSeries> households;  // sorted by household_id
  std::vector<SkipRecord> skips;

  std::size_t total_readings() const;
  const HouseholdSeries* find(std::string_view household_id) const;
};

enum class CsvSchema {
  canonical,  // household_id,timestamp,kwh
  lcl,        // Low Carbon London export: LCLid,...,DateTime,KWH/hh...
};

ReadingSet parse_readings(std::istream& in, CsvSchema schema = CsvSchema::canonical);
void write_readings_csv(std::ostream& out, const ReadingSet& readings);

struct WeatherSeries {
  std::vector<Timestamp> t;  // strictly increasing
  std::vector<double> temperature_c;
  std::vector<double> humidity_pct;
};

WeatherSeries parse_weather(std::istream& in);
void write_weather_csv(std::ostream& out, const WeatherSeries& weather);

// ---------------------------------------------------------------------------
// Aligned series and supervised samples

enum class GapPolicy {
  forward_fill,  // fill up to kMaxForwardFill missing steps, split beyond that
  drop_segment,  // split at every gap
};

constexpr std::size_t kMaxForwardFill = 2;

/// One gap-free run of half-hourly rows for a household.
struct AlignedSeries {
  std::string household_id;
  std::vector<Timestamp> t;
  std::vector<double> kwh;
  std::vector<double> temperature_c;
  std::vector<double> humidity_pct;
  std::vector<int> hour_of_day;
  std::vector<int> day_of_week;
  std::vector<std::uint8_t> filled;  // 1 where kwh was forward-filled

  std::size_t size() const { return t.size(); }
};

/// Pairs each reading with linearly interpolated weather and calendar
/// features; gaps handled per policy. Returns the gap-free segments in time
/// order (usually one).
std::vector<AlignedSeries> join_weather(const HouseholdSeries& readings, const WeatherSeries& weather,
                                        GapPolicy policy);

// Feature layout per window row. Fixed; F = 7.
//   0 kwh
//   1 temperature_c
//   2 humidity_pct
//   3 sin(2*pi*hour_of_day/48)
//   4 cos(2*pi*hour_of_day/48)
//   5 sin(2*pi*day_of_week/7)
//   6 cos(2*pi*day_of_week/7)
constexpr std::size_t kFeatureCount = 7;

struct SampleSet {
  std::size_t window = 0;   // W
  std::size_t horizon = 0;  // H
  std::size_t features = kFeatureCount;
  std::vector<double> x;              // n * W * F, row-major per sample
  std::vector<double> y;              // n * H
  std::vector<Timestamp> target_time;  // timestamp of each sample's first target row

  std::size_t size() const { return horizon == 0 ? 0 : y.size() / horizon; }
  std::span<const double> sample_features(std::size_t i) const {
    return {x.data() + i * window * features, window * features};
  }
  std::span<const double> sample_target(std::size_t i) const { return {y.data() + i * horizon, horizon}; }
};

SampleSet make_windows(const AlignedSeries& series, std::size_t window, std::size_t horizon, std::size_t stride);

/// Appends all samples of `extra` to `base` (same window/horizon shape).
void append_samples(SampleSet& base, const SampleSet& extra);

struct SplitSamples {
  SampleSet train, val, test;
};

/// Chronological split: no shuffling, floor-partitioned counts, remainder to
/// train.
SplitSamples split_chronological(const SampleSet& samples, std::array<double, 3> fractions);

struct Scaler {
  std::array<double, kFeatureCount> mean{};
  std::array<double, kFeatureCount> stddev{};
  std::array<bool, kFeatureCount> degenerate{};  // population std was 0, recorded as 1
};

/// Population mean/std per feature over every window row of the training set.
Scaler fit_scaler(const SampleSet& train);
SampleSet apply_scaler(const Scaler& scaler, const SampleSet& samples);
SampleSet invert_scaler(const Scaler& scaler, const SampleSet& samples);
/// Inverse of the target transform: scaled prediction back to kWh.
double inverse_target(const Scaler& scaler, double scaled);

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticConfig {
  std::size_t n_households = 20;
  std::size_t n_days = 60;
  std::uint64_t seed = 1;
  Timestamp start = 1356998400;  // 2013-01-01T00:00:00Z
  double noise_std = 0.05;
  // per-household parameter ranges, drawn from the seeded RNG
  double base_lo = 0.10, base_hi = 0.35;
  double daily_amp_lo = 0.2, daily_amp_hi = 0.6;
  double weekend_lo = -0.05, weekend_hi = 0.15;
  double heating_lo = 0.0, heating_hi = 0.05;  // kWh per degree below 18 C
  std::string id_prefix = "H";
};

struct SyntheticData {
  ReadingSet readings;
  WeatherSeries weather;
};

/// Deterministic artificial fleet: per-household base load + a two-peak daily
/// profile + weekday/weekend offset + heating response to the shared weather
/// trace + seeded Gaussian noise, clamped at zero.
SyntheticData generate_synthetic(const SyntheticConfig& cfg);

// ---------------------------------------------------------------------------
// Client assembly

struct PipelineParams {
  std::size_t window = 48;
  std::size_t horizon = 1;
  std::size_t stride = 1;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  GapPolicy gap_policy = GapPolicy::forward_fill;
};

struct ClientDataset {
  std::size_t id = 0;
  std::vector<std::string> households;
  SampleSet train, val, test;  // scaled
  Scaler scaler;
};

/// households sorted by id, dealt round-robin across `clients` slots.
std::vector<std::vector<std::string>> assign_households_round_robin(const ReadingSet& readings,
                                                                    std::size_t clients);

/// Full per-client pipeline: join -> window -> chronological split -> scale.
/// Households run in parallel; results merged in household-id order.
std::vector<ClientDataset> build_clients(const ReadingSet& readings, const WeatherSeries& weather,
                                         std::size_t clients, const PipelineParams& params, ExecMode mode);

/// Same pipeline for one household list (client process side).
ClientDataset build_one_client(const ReadingSet& readings, const WeatherSeries& weather, std::size_t id,
                               const std::vector<std::string>& households, const PipelineParams& params);

}  // namespace fedcast::data
