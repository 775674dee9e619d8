#pragma once

// Shared fixtures for the unit tests: tiny layouts, deterministic synthetic
// fleets and a few comparison helpers.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "fedcast/dataset.hpp"
#include "fedcast/errors.hpp"
#include "fedcast/param_vector.hpp"
#include "fedcast/rng.hpp"

namespace testutil {

inline std::shared_ptr<const fedcast::Layout> flat_layout(std::size_t n) {
  fedcast::Layout layout;
  layout.segments.push_back({"w", 0, {n}});
  layout.dim = n;
  layout.validate();
  return std::make_shared<const fedcast::Layout>(std::move(layout));
}

inline fedcast::ParamVector vec(std::vector<double> v) {
  auto layout = flat_layout(v.size());
  return fedcast::ParamVector{std::move(layout), std::move(v)};
}

inline fedcast::ParamVector random_vec(std::shared_ptr<const fedcast::Layout> layout, fedcast::Rng& rng,
                                       double scale = 1.0) {
  std::vector<double> v(layout->dim);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return fedcast::ParamVector{std::move(layout), std::move(v)};
}

/// Random supervised set with plausible magnitudes, F = kFeatureCount.
inline fedcast::data::SampleSet random_samples(std::size_t n, std::size_t window, std::size_t horizon,
                                               std::uint64_t seed) {
  fedcast::data::SampleSet s;
  s.window = window;
  s.horizon = horizon;
  s.features = fedcast::data::kFeatureCount;
  fedcast::Rng rng(seed);
  s.x.resize(n * window * s.features);
  s.y.resize(n * horizon);
  for (double& v : s.x) v = rng.uniform(-1.5, 1.5);
  for (double& v : s.y) v = rng.uniform(-1.0, 1.0);
  s.target_time.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.target_time[i] = 1356998400 + 1800 * static_cast<fedcast::data::Timestamp>(i);
  }
  return s;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

/// Small synthetic fleet shared by the federation tests.
inline std::vector<fedcast::data::ClientDataset> tiny_fleet(std::size_t clients, std::size_t households,
                                                            std::size_t days, std::uint64_t seed,
                                                            std::size_t window = 24) {
  fedcast::data::SyntheticConfig cfg;
  cfg.n_households = households;
  cfg.n_days = days;
  cfg.seed = seed;
  auto data = fedcast::data::generate_synthetic(cfg);
  fedcast::data::PipelineParams pipeline;
  pipeline.window = window;
  return fedcast::data::build_clients(data.readings, data.weather, clients, pipeline,
                                      fedcast::ExecMode::serial);
}

/// ||a - b|| / max(1, ||b||), the relative error used by the gradient checks.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(1.0, std::sqrt(den));
}

/// Runs f and reports the FedError code it threw, if any.
template <class F>
std::optional<fedcast::Err> code_of(F&& f) {
  try {
    std::forward<F>(f)();
    return std::nullopt;
  } catch (const fedcast::FedError& e) {
    return e.code();
  }
}

}  // namespace testutil
