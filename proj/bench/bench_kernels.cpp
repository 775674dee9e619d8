// Timing table for the kernels that run under both execution modes. Not a
// correctness test; the unit suite already pins serial/OpenMP equality.
//
// Usage: bench_kernels [threads]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "fedcast/clustering.hpp"
#include "fedcast/dataset.hpp"
#include "fedcast/fedcore.hpp"
#include "fedcast/model.hpp"
#include "fedcast/rng.hpp"

using namespace fedcast;
using Clock = std::chrono::steady_clock;

namespace {

double best_of(int reps, const std::function<void()>& body) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = Clock::now();
    body();
    const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    if (ms < best) best = ms;
  }
  return best;
}

void report(const char* name, double serial_ms, double openmp_ms) {
  std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, serial_ms, openmp_ms,
              openmp_ms > 0.0 ? serial_ms / openmp_ms : 0.0);
}

data::SampleSet random_samples(std::size_t n, std::size_t window, std::uint64_t seed) {
  data::SampleSet s;
  s.window = window;
  s.horizon = 1;
  s.features = data::kFeatureCount;
  Rng rng(seed);
  s.x.resize(n * window * s.features);
  s.y.resize(n);
  s.target_time.resize(n);
  for (double& v : s.x) v = rng.uniform(-1.5, 1.5);
  for (double& v : s.y) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) s.target_time[i] = 1356998400 + 1800 * static_cast<std::int64_t>(i);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  const int threads = argc > 1 ? std::atoi(argv[1]) : 0;
  set_thread_count(threads);
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  {
    model::ModelConfig cfg;
    cfg.window = 48;
    const auto samples = random_samples(4000, cfg.window, 1);
    const ParamVector params = model::init_params(cfg, 7);
    std::vector<std::size_t> batch(samples.size());
    std::iota(batch.begin(), batch.end(), 0);
    const double s = best_of(5, [&] { model::batch_gradient(cfg, params, samples, batch, ExecMode::serial); });
    const double p = best_of(5, [&] { model::batch_gradient(cfg, params, samples, batch, ExecMode::openmp); });
    report("linear gradient, n=4000", s, p);
  }

  {
    model::ModelConfig cfg;
    cfg.arch = model::ModelArch::lstm;
    cfg.window = 24;
    cfg.hidden = 32;
    const auto samples = random_samples(256, cfg.window, 2);
    const ParamVector params = model::init_params(cfg, 7);
    std::vector<std::size_t> batch(samples.size());
    std::iota(batch.begin(), batch.end(), 0);
    const double s = best_of(3, [&] { model::batch_gradient(cfg, params, samples, batch, ExecMode::serial); });
    const double p = best_of(3, [&] { model::batch_gradient(cfg, params, samples, batch, ExecMode::openmp); });
    report("lstm gradient, n=256", s, p);
  }

  data::SyntheticConfig synth;
  synth.n_households = 12;
  synth.n_days = 30;
  const data::SyntheticData raw = data::generate_synthetic(synth);
  data::PipelineParams pipeline;
  pipeline.window = 48;

  {
    const double s =
        best_of(3, [&] { data::build_clients(raw.readings, raw.weather, 12, pipeline, ExecMode::serial); });
    const double p =
        best_of(3, [&] { data::build_clients(raw.readings, raw.weather, 12, pipeline, ExecMode::openmp); });
    report("client assembly, 12 homes", s, p);
  }

  const auto clients = data::build_clients(raw.readings, raw.weather, 12, pipeline, ExecMode::serial);
  fed::FederationConfig cfg;
  cfg.clients = 12;
  cfg.local_epochs = 1;

  {
    const ParamVector global = model::init_params(cfg.model, cfg.seed);
    std::vector<std::size_t> selected(12);
    std::iota(selected.begin(), selected.end(), 0);
    fed::SimProvider serial_provider(cfg, clients, ExecMode::serial);
    fed::SimProvider openmp_provider(cfg, clients, ExecMode::openmp);
    const double s = best_of(3, [&] {
      fed::RoundRequest req{1, global, selected};
      serial_provider.collect(req);
    });
    const double p = best_of(3, [&] {
      fed::RoundRequest req{1, global, selected};
      openmp_provider.collect(req);
    });
    report("training round, 12 clients", s, p);
  }

  {
    Rng rng(99);
    fedcast::Layout layout;
    layout.segments.push_back({"w", 0, {2000}});
    layout.dim = 2000;
    auto shared = std::make_shared<const fedcast::Layout>(layout);
    std::vector<ParamVector> vecs;
    for (int i = 0; i < 64; ++i) {
      std::vector<double> v(2000);
      for (double& x : v) x = rng.uniform(-1.0, 1.0);
      vecs.push_back(ParamVector{shared, std::move(v)});
    }
    const double s = best_of(5, [&] {
      clustering::pairwise_distances(vecs, clustering::DistanceMetric::euclidean, ExecMode::serial);
    });
    const double p = best_of(5, [&] {
      clustering::pairwise_distances(vecs, clustering::DistanceMetric::euclidean, ExecMode::openmp);
    });
    report("pairwise distances, 64x2000", s, p);
  }

  return 0;
}
