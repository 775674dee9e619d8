#include "fedcast/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

#include "fedcast/rng.hpp"

namespace fedcast::data {

namespace {

// Howard Hinnant's civil-date algorithms; exact over the whole int range.
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = static_cast<int>(yy + (m <= 2));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      fields.emplace_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return fields;
}

bool parse_strict_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  std::string buf(s);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (end != buf.c_str() + buf.size()) return false;
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

bool parse_uint(std::string_view s, std::size_t digits, int& out) {
  if (s.size() != digits) return false;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace

Timestamp parse_iso8601(std::string_view text) {
  // YYYY-MM-DD[T ]HH:MM:SS[.fraction][Z]
  text = trim(text);
  auto bad = [&] { fail(Err::IoError, "bad timestamp '" + std::string(text) + "'"); };
  if (text.size() < 19) bad();
  int year, month, day, hour, minute, second;
  if (!parse_uint(text.substr(0, 4), 4, year) || text[4] != '-' || !parse_uint(text.substr(5, 2), 2, month) ||
      text[7] != '-' || !parse_uint(text.substr(8, 2), 2, day))
    bad();
  if (text[10] != 'T' && text[10] != ' ') bad();
  if (!parse_uint(text.substr(11, 2), 2, hour) || text[13] != ':' || !parse_uint(text.substr(14, 2), 2, minute) ||
      text[16] != ':' || !parse_uint(text.substr(17, 2), 2, second))
    bad();
  std::size_t pos = 19;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
  }
  if (pos < text.size() && text[pos] == 'Z') ++pos;
  if (pos != text.size()) bad();
  if (month < 1 || month > 12 || day < 1 || hour > 23 || minute > 59 || second > 59) bad();
  static constexpr int month_days[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = year % 4 == 0 && (year % 100 != 0 || year % 400 == 0);
  if (day > (month == 2 && leap ? 29 : month_days[month - 1])) bad();
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 +
         hour * 3600 + minute * 60 + second;
}

std::string format_iso8601(Timestamp t) {
  std::int64_t days = t / 86400;
  std::int64_t rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", y, m, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

int hour_of_day_index(Timestamp t) {
  std::int64_t rem = t % 86400;
  if (rem < 0) rem += 86400;
  return static_cast<int>(rem / kStepSeconds);
}

int day_of_week(Timestamp t) {
  std::int64_t days = t / 86400;
  if (t % 86400 < 0) --days;
  return static_cast<int>(((days + 3) % 7 + 7) % 7);  // epoch day 0 was a Thursday
}

std::string format_double(double v) {
  for (int prec = 1; prec <= 17; ++prec) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    double back = std::strtod(buf, nullptr);
    if (back == v) return buf;
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t ReadingSet::total_readings() const {
  std::size_t n = 0;
  for (const auto& h : households) n += h.t.size();
  return n;
}

const HouseholdSeries* ReadingSet::find(std::string_view household_id) const {
  for (const auto& h : households) {
    if (h.household_id == household_id) return &h;
  }
  return nullptr;
}

ReadingSet parse_readings(std::istream& in, CsvSchema schema) {
  std::string line;
  if (!std::getline(in, line)) fail(Err::MalformedHeader, "empty input");
  std::vector<std::string> header = split_csv(line);

  std::size_t col_id = 0, col_time = 1, col_kwh = 2;
  std::size_t min_fields = 3;
  bool exact_fields = true;
  if (schema == CsvSchema::canonical) {
    if (header.size() != 3 || header[0] != "household_id" || header[1] != "timestamp" || header[2] != "kwh")
      fail(Err::MalformedHeader, "expected household_id,timestamp,kwh got '" + line + "'");
  } else {
    // Low Carbon London export; columns located by name, extras ignored.
    std::size_t id = SIZE_MAX, tm = SIZE_MAX, kw = SIZE_MAX;
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == "LCLid") id = i;
      else if (header[i] == "DateTime") tm = i;
      else if (header[i].rfind("KWH/hh", 0) == 0) kw = i;
    }
    if (id == SIZE_MAX || tm == SIZE_MAX || kw == SIZE_MAX)
      fail(Err::MalformedHeader, "LCL export needs LCLid, DateTime and KWH/hh columns");
    col_id = id;
    col_time = tm;
    col_kwh = kw;
    min_fields = std::max({id, tm, kw}) + 1;
    exact_fields = false;
  }

  ReadingSet out;
  std::map<std::string, std::vector<std::pair<Timestamp, double>>> by_household;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_csv(line);
    auto skip = [&](const std::string& reason) { out.skips.push_back({row, reason}); };
    if (fields.size() < min_fields || (exact_fields && fields.size() != 3)) {
      skip("bad field count");
      continue;
    }
    Timestamp t;
    try {
      t = parse_iso8601(fields[col_time]);
    } catch (const FedError&) {
      skip("bad timestamp");
      continue;
    }
    if (t % kStepSeconds != 0) {
      skip("timestamp not on a half-hour boundary");
      continue;
    }
    double kwh;
    if (!parse_strict_double(fields[col_kwh], kwh)) {
      skip("non-numeric kwh");
      continue;
    }
    if (kwh < 0) {
      skip("negative kwh");
      continue;
    }
    if (fields[col_id].empty()) {
      skip("empty household id");
      continue;
    }
    by_household[fields[col_id]].emplace_back(t, kwh);
  }

  for (auto& [id, rows] : by_household) {
    std::sort(rows.begin(), rows.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (std::size_t i = 1; i < rows.size(); ++i) {
      if (rows[i].first == rows[i - 1].first)
        fail(Err::DuplicateReading, "household " + id + " at " + format_iso8601(rows[i].first));
    }
    HouseholdSeries hs;
    hs.household_id = id;
    hs.t.reserve(rows.size());
    hs.kwh.reserve(rows.size());
    for (const auto& [t, kwh] : rows) {
      hs.t.push_back(t);
      hs.kwh.push_back(kwh);
    }
    out.households.push_back(std::move(hs));
  }
  return out;
}

void write_readings_csv(std::ostream& out, const ReadingSet& readings) {
  out << "household_id,timestamp,kwh\n";
  for (const auto& h : readings.households) {
    for (std::size_t i = 0; i < h.t.size(); ++i) {
      out << h.household_id << ',' << format_iso8601(h.t[i]) << ',' << format_double(h.kwh[i]) << '\n';
    }
  }
}

WeatherSeries parse_weather(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(Err::MalformedHeader, "empty weather input");
  std::vector<std::string> header = split_csv(line);
  if (header.size() != 3 || header[0] != "timestamp" || header[1] != "temperature_c" ||
      header[2] != "humidity_pct")
    fail(Err::MalformedHeader, "expected timestamp,temperature_c,humidity_pct");
  WeatherSeries w;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_csv(line);
    if (fields.size() != 3) fail(Err::IoError, "weather row " + std::to_string(row) + ": bad field count");
    Timestamp t = parse_iso8601(fields[0]);
    double temp, hum;
    if (!parse_strict_double(fields[1], temp) || !parse_strict_double(fields[2], hum))
      fail(Err::IoError, "weather row " + std::to_string(row) + ": non-numeric value");
    if (hum < 0 || hum > 100)
      fail(Err::IoError, "weather row " + std::to_string(row) + ": humidity out of [0,100]");
    if (!w.t.empty() && t <= w.t.back())
      fail(Err::IoError, "weather row " + std::to_string(row) + ": timestamps must strictly increase");
    w.t.push_back(t);
    w.temperature_c.push_back(temp);
    w.humidity_pct.push_back(hum);
  }
  return w;
}

void write_weather_csv(std::ostream& out, const WeatherSeries& weather) {
  out << "timestamp,temperature_c,humidity_pct\n";
  for (std::size_t i = 0; i < weather.t.size(); ++i) {
    out << format_iso8601(weather.t[i]) << ',' << format_double(weather.temperature_c[i]) << ','
        << format_double(weather.humidity_pct[i]) << '\n';
  }
}

namespace {

constexpr std::int64_t kMaxWeatherDistance = 6 * 3600;

struct WeatherSample {
  double temperature_c;
  double humidity_pct;
};

WeatherSample interpolate_weather(const WeatherSeries& w, Timestamp t) {
  auto it = std::lower_bound(w.t.begin(), w.t.end(), t);
  if (it != w.t.end() && *it == t) {
    std::size_t i = static_cast<std::size_t>(it - w.t.begin());
    return {w.temperature_c[i], w.humidity_pct[i]};
  }
  if (it == w.t.begin() || it == w.t.end())
    fail(Err::WeatherCoverageGap, "no weather around " + format_iso8601(t));
  std::size_t hi = static_cast<std::size_t>(it - w.t.begin());
  std::size_t lo = hi - 1;
  if (t - w.t[lo] > kMaxWeatherDistance || w.t[hi] - t > kMaxWeatherDistance)
    fail(Err::WeatherCoverageGap, "weather more than 6h away from " + format_iso8601(t));
  double a = static_cast<double>(t - w.t[lo]) / static_cast<double>(w.t[hi] - w.t[lo]);
  return {w.temperature_c[lo] + a * (w.temperature_c[hi] - w.temperature_c[lo]),
          w.humidity_pct[lo] + a * (w.humidity_pct[hi] - w.humidity_pct[lo])};
}

void append_row(AlignedSeries& s, Timestamp t, double kwh, const WeatherSample& ws, bool was_filled) {
  s.t.push_back(t);
  s.kwh.push_back(kwh);
  s.temperature_c.push_back(ws.temperature_c);
  s.humidity_pct.push_back(ws.humidity_pct);
  s.hour_of_day.push_back(hour_of_day_index(t));
  s.day_of_week.push_back(day_of_week(t));
  s.filled.push_back(was_filled ? 1 : 0);
}

}  // namespace

std::vector<AlignedSeries> join_weather(const HouseholdSeries& readings, const WeatherSeries& weather,
                                        GapPolicy policy) {
  if (readings.t.empty()) fail(Err::EmptyHousehold, "household " + readings.household_id + " has no readings");
  std::vector<AlignedSeries> segments;
  AlignedSeries current;
  current.household_id = readings.household_id;
  int segment_count = 0;

  auto close_segment = [&] {
    if (!current.t.empty()) {
      segments.push_back(std::move(current));
      current = AlignedSeries{};
      current.household_id = readings.household_id;
      ++segment_count;
    }
  };

  for (std::size_t i = 0; i < readings.t.size(); ++i) {
    Timestamp t = readings.t[i];
    if (!current.t.empty()) {
      std::int64_t gap_steps = (t - current.t.back()) / kStepSeconds - 1;
      if (gap_steps > 0) {
        if (policy == GapPolicy::forward_fill && static_cast<std::size_t>(gap_steps) <= kMaxForwardFill) {
          for (std::int64_t g = 1; g <= gap_steps; ++g) {
            Timestamp tf = current.t.back() + kStepSeconds;
            append_row(current, tf, current.kwh.back(), interpolate_weather(weather, tf), true);
          }
        } else {
          close_segment();
        }
      }
    }
    append_row(current, t, readings.kwh[i], interpolate_weather(weather, t), false);
  }
  close_segment();
  return segments;
}

SampleSet make_windows(const AlignedSeries& series, std::size_t window, std::size_t horizon,
                       std::size_t stride) {
  if (window < 1 || horizon < 1 || stride < 1) fail(Err::BadDimensions, "window, horizon, stride must be >= 1");
  const std::size_t len = series.size();
  if (len < window + horizon)
    fail(Err::SeriesTooShort, "need " + std::to_string(window + horizon) + " rows, have " + std::to_string(len));

  SampleSet set;
  set.window = window;
  set.horizon = horizon;
  const std::size_t n = (len - window - horizon) / stride + 1;
  set.x.reserve(n * window * kFeatureCount);
  set.y.reserve(n * horizon);
  set.target_time.reserve(n);

  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t begin = i * stride;
    for (std::size_t r = begin; r < begin + window; ++r) {
      set.x.push_back(series.kwh[r]);
      set.x.push_back(series.temperature_c[r]);
      set.x.push_back(series.humidity_pct[r]);
      const double hod = static_cast<double>(series.hour_of_day[r]);
      const double dow = static_cast<double>(series.day_of_week[r]);
      set.x.push_back(std::sin(two_pi * hod / 48.0));
      set.x.push_back(std::cos(two_pi * hod / 48.0));
      set.x.push_back(std::sin(two_pi * dow / 7.0));
      set.x.push_back(std::cos(two_pi * dow / 7.0));
    }
    for (std::size_t r = begin + window; r < begin + window + horizon; ++r) {
      set.y.push_back(series.kwh[r]);
    }
    set.target_time.push_back(series.t[begin + window]);
  }
  return set;
}

void append_samples(SampleSet& base, const SampleSet& extra) {
  if (base.size() == 0 && base.window == 0) {
    base.window = extra.window;
    base.horizon = extra.horizon;
  }
  if (base.window != extra.window || base.horizon != extra.horizon)
    fail(Err::BadDimensions, "sample shapes differ");
  base.x.insert(base.x.end(), extra.x.begin(), extra.x.end());
  base.y.insert(base.y.end(), extra.y.begin(), extra.y.end());
  base.target_time.insert(base.target_time.end(), extra.target_time.begin(), extra.target_time.end());
}

namespace {

SampleSet slice_samples(const SampleSet& s, std::size_t begin, std::size_t count) {
  SampleSet out;
  out.window = s.window;
  out.horizon = s.horizon;
  const std::size_t row = s.window * s.features;
  out.x.assign(s.x.begin() + begin * row, s.x.begin() + (begin + count) * row);
  out.y.assign(s.y.begin() + begin * s.horizon, s.y.begin() + (begin + count) * s.horizon);
  out.target_time.assign(s.target_time.begin() + begin, s.target_time.begin() + begin + count);
  return out;
}

}  // namespace

SplitSamples split_chronological(const SampleSet& samples, std::array<double, 3> fractions) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0 || std::abs(sum - 1.0) > 1e-9)
    fail(Err::BadFractions, "fractions must be positive and sum to 1");
  const std::size_t n = samples.size();
  std::size_t n_train = static_cast<std::size_t>(std::floor(n * fractions[0] + 1e-12));
  std::size_t n_val = static_cast<std::size_t>(std::floor(n * fractions[1] + 1e-12));
  std::size_t n_test = static_cast<std::size_t>(std::floor(n * fractions[2] + 1e-12));
  n_train += n - (n_train + n_val + n_test);  // remainder goes to train

  SplitSamples out;
  out.train = slice_samples(samples, 0, n_train);
  out.val = slice_samples(samples, n_train, n_val);
  out.test = slice_samples(samples, n_train + n_val, n_test);
  return out;
}

Scaler fit_scaler(const SampleSet& train) {
  if (train.size() == 0) fail(Err::EmptyTrainingSet, "cannot fit a scaler on an empty training set");
  const std::size_t rows = train.size() * train.window;
  Scaler sc;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    double mean = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mean += train.x[r * kFeatureCount + f];
    mean /= static_cast<double>(rows);
    double var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = train.x[r * kFeatureCount + f] - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows);  // population variance
    double sd = std::sqrt(var);
    sc.mean[f] = mean;
    if (sd < 1e-12 * std::max(1.0, std::abs(mean))) {
      sc.stddev[f] = 1.0;
      sc.degenerate[f] = true;
    } else {
      sc.stddev[f] = sd;
      sc.degenerate[f] = false;
    }
  }
  return sc;
}

SampleSet apply_scaler(const Scaler& scaler, const SampleSet& samples) {
  SampleSet out = samples;
  const std::size_t rows = out.size() * out.window;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      double& v = out.x[r * kFeatureCount + f];
      v = (v - scaler.mean[f]) / scaler.stddev[f];
    }
  }
  for (double& v : out.y) v = (v - scaler.mean[0]) / scaler.stddev[0];
  return out;
}

SampleSet invert_scaler(const Scaler& scaler, const SampleSet& samples) {
  SampleSet out = samples;
  const std::size_t rows = out.size() * out.window;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      double& v = out.x[r * kFeatureCount + f];
      v = v * scaler.stddev[f] + scaler.mean[f];
    }
  }
  for (double& v : out.y) v = v * scaler.stddev[0] + scaler.mean[0];
  return out;
}

double inverse_target(const Scaler& scaler, double scaled) {
  return scaled * scaler.stddev[0] + scaler.mean[0];
}

namespace {

// Circular Gaussian bump on the 48-slot daily cycle.
double daily_bump(double hod, double center, double width) {
  double d = std::abs(hod - center);
  d = std::min(d, 48.0 - d);
  return std::exp(-0.5 * (d / width) * (d / width));
}

double analytic_temperature(const SyntheticConfig& cfg, Timestamp t) {
  const double day = static_cast<double>(t - cfg.start) / 86400.0;
  const double tod = static_cast<double>(((t % 86400) + 86400) % 86400) / 86400.0;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return 9.0 + 7.0 * std::sin(two_pi * (day / 365.0 - 0.25)) + 5.0 * std::sin(two_pi * tod - 2.3);
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_households < 1 || cfg.n_days < 2)
    fail(Err::BadDimensions, "need n_households >= 1 and n_days >= 2");

  SyntheticData out;

  // Hourly weather table covering [start, start + n_days*86400] inclusive, so
  // every reading timestamp (interval ends) has bracketing points.
  Rng wrng(derive_seed(cfg.seed, {fnv1a64("weather")}));
  const std::size_t weather_points = cfg.n_days * 24 + 1;
  out.weather.t.reserve(weather_points);
  for (std::size_t k = 0; k < weather_points; ++k) {
    const Timestamp t = cfg.start + static_cast<Timestamp>(k) * 3600;
    out.weather.t.push_back(t);
    out.weather.temperature_c.push_back(analytic_temperature(cfg, t) + wrng.normal(0.0, 0.5));
    double hum = 70.0 + 15.0 * std::sin(2.0 * std::numbers::pi * (static_cast<double>(k) / (24.0 * 7.0))) +
                 wrng.normal(0.0, 2.0);
    out.weather.humidity_pct.push_back(std::clamp(hum, 0.0, 100.0));
  }

  int id_width = 1;
  for (std::size_t v = cfg.n_households > 0 ? cfg.n_households - 1 : 0; v >= 10; v /= 10) ++id_width;
  id_width = std::max(id_width, 4);

  const std::size_t readings_per_household = cfg.n_days * kHalfHoursPerDay;
  for (std::size_t i = 0; i < cfg.n_households; ++i) {
    Rng rng(derive_seed(cfg.seed, {fnv1a64("household"), i}));
    const double base = rng.uniform(cfg.base_lo, cfg.base_hi);
    const double amp = rng.uniform(cfg.daily_amp_lo, cfg.daily_amp_hi);
    const double weekend = rng.uniform(cfg.weekend_lo, cfg.weekend_hi);
    const double heating = rng.uniform(cfg.heating_lo, cfg.heating_hi);

    HouseholdSeries hs;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "%s%0*zu", cfg.id_prefix.c_str(), id_width, i);
    hs.household_id = idbuf;
    hs.t.reserve(readings_per_household);
    hs.kwh.reserve(readings_per_household);
    for (std::size_t k = 0; k < readings_per_household; ++k) {
      // Reading timestamped at the end of its half-hour interval.
      const Timestamp t = cfg.start + static_cast<Timestamp>(k + 1) * kStepSeconds;
      const double hod = static_cast<double>(hour_of_day_index(t));
      const int dow = day_of_week(t);
      // The heating term uses the noise-free temperature trace; the weather
      // table the pipeline joins against carries its own observation noise.
      const double temp = analytic_temperature(cfg, t);
      double kwh = base;
      kwh += amp * (0.7 * daily_bump(hod, 16.0, 5.0) + daily_bump(hod, 38.0, 6.0));
      kwh += (dow >= 5) ? weekend : 0.0;
      kwh += heating * std::max(0.0, 18.0 - temp);
      kwh += rng.normal(0.0, cfg.noise_std);
      hs.t.push_back(t);
      hs.kwh.push_back(std::max(0.0, kwh));
    }
    out.readings.households.push_back(std::move(hs));
  }
  std::sort(out.readings.households.begin(), out.readings.households.end(),
            [](const HouseholdSeries& a, const HouseholdSeries& b) { return a.household_id < b.household_id; });
  return out;
}

std::vector<std::vector<std::string>> assign_households_round_robin(const ReadingSet& readings,
                                                                    std::size_t clients) {
  if (clients < 1) fail(Err::BadConfig, "need at least one client");
  if (readings.households.size() < clients)
    fail(Err::BadConfig, "fewer households (" + std::to_string(readings.households.size()) +
                             ") than clients (" + std::to_string(clients) + ")");
  std::vector<std::vector<std::string>> assignment(clients);
  for (std::size_t j = 0; j < readings.households.size(); ++j) {
    assignment[j % clients].push_back(readings.households[j].household_id);
  }
  return assignment;
}

namespace {

struct HouseholdSplit {
  SplitSamples split;
  bool ok = false;
  std::string error;
  Err code = Err::EmptyHousehold;
};

HouseholdSplit process_household(const HouseholdSeries& hs, const WeatherSeries& weather,
                                 const PipelineParams& params) {
  HouseholdSplit out;
  try {
    std::vector<AlignedSeries> segments = join_weather(hs, weather, params.gap_policy);
    SampleSet samples;
    for (const AlignedSeries& seg : segments) {
      if (seg.size() < params.window + params.horizon) continue;  // short tail segments carry no samples
      append_samples(samples, make_windows(seg, params.window, params.horizon, params.stride));
    }
    if (samples.size() == 0) {
      out.error = "household " + hs.household_id + " yields no samples";
      out.code = Err::EmptyHousehold;
      return out;
    }
    out.split = split_chronological(samples, params.fractions);
    if (out.split.train.size() == 0) {
      out.error = "household " + hs.household_id + " has an empty training split";
      out.code = Err::EmptyTrainingSet;
      return out;
    }
    out.ok = true;
  } catch (const FedError& e) {
    out.error = e.what();
    out.code = e.code();
  }
  return out;
}

}  // namespace

std::vector<ClientDataset> build_clients(const ReadingSet& readings, const WeatherSeries& weather,
                                         std::size_t clients, const PipelineParams& params, ExecMode mode) {
  auto assignment = assign_households_round_robin(readings, clients);

  std::vector<HouseholdSplit> splits(readings.households.size());
  parallel_for(readings.households.size(), mode, [&](std::size_t j) {
    splits[j] = process_household(readings.households[j], weather, params);
  });
  for (const auto& s : splits) {
    if (!s.ok) fail(s.code, s.error);
  }

  std::vector<ClientDataset> out(clients);
  for (std::size_t c = 0; c < clients; ++c) {
    out[c].id = c;
    out[c].households = assignment[c];
  }
  for (std::size_t j = 0; j < readings.households.size(); ++j) {
    ClientDataset& cd = out[j % clients];
    append_samples(cd.train, splits[j].split.train);
    append_samples(cd.val, splits[j].split.val);
    append_samples(cd.test, splits[j].split.test);
  }
  for (ClientDataset& cd : out) {
    cd.scaler = fit_scaler(cd.train);
    cd.train = apply_scaler(cd.scaler, cd.train);
    cd.val = apply_scaler(cd.scaler, cd.val);
    cd.test = apply_scaler(cd.scaler, cd.test);
  }
  return out;
}

ClientDataset build_one_client(const ReadingSet& readings, const WeatherSeries& weather, std::size_t id,
                               const std::vector<std::string>& households, const PipelineParams& params) {
  ClientDataset cd;
  cd.id = id;
  cd.households = households;
  for (const std::string& hid : households) {
    const HouseholdSeries* hs = readings.find(hid);
    if (hs == nullptr) fail(Err::EmptyHousehold, "household " + hid + " not present in the readings");
    HouseholdSplit split = process_household(*hs, weather, params);
    if (!split.ok) fail(split.code, split.error);
    append_samples(cd.train, split.split.train);
    append_samples(cd.val, split.split.val);
    append_samples(cd.test, split.split.test);
  }
  cd.scaler = fit_scaler(cd.train);
  cd.train = apply_scaler(cd.scaler, cd.train);
  cd.val = apply_scaler(cd.scaler, cd.val);
  cd.test = apply_scaler(cd.scaler, cd.test);
  return cd;
}

}  // namespace fedcast::data
