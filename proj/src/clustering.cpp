#include "fedcast/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fedcast::clustering {

const char* metric_name(DistanceMetric m) { return m == DistanceMetric::euclidean ? "euclidean" : "cosine"; }

DistanceMetric metric_from_name(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::euclidean;
  if (name == "cosine") return DistanceMetric::cosine;
  fail(Err::BadConfig, "unknown distance metric '" + std::string(name) + "'");
}

const char* linkage_name(Linkage l) {
  switch (l) {
    case Linkage::single: return "single";
    case Linkage::complete: return "complete";
    case Linkage::average: return "average";
  }
  return "average";
}

Linkage linkage_from_name(std::string_view name) {
  if (name == "single") return Linkage::single;
  if (name == "complete") return Linkage::complete;
  if (name == "average") return Linkage::average;
  fail(Err::BadConfig, "unknown linkage '" + std::string(name) + "'");
}

namespace {

double euclidean_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

std::vector<double> pairwise_distances(const std::vector<ParamVector>& vectors, DistanceMetric metric,
                                       ExecMode mode) {
  const std::size_t n = vectors.size();
  if (n == 0) fail(Err::TooFewClients, "no vectors to compare");
  for (std::size_t i = 1; i < n; ++i) require_conformable(vectors[0], vectors[i]);

  std::vector<double> dist(n * n, 0.0);
  parallel_for(n, mode, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = metric == DistanceMetric::euclidean
                           ? euclidean_distance(vectors[i].values, vectors[j].values)
                           : cosine_distance(vectors[i].values, vectors[j].values);
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }
  });
  return dist;
}

ClusterResult agglomerate(const std::vector<double>& dist, std::size_t n, Linkage linkage,
                          const ClusterStop& stop) {
  if (n == 0) fail(Err::TooFewClients, "cannot cluster zero clients");
  if (dist.size() != n * n) fail(Err::BadDimensions, "distance matrix size does not match n");
  if (!stop.threshold && !stop.max_clusters) fail(Err::BadConfig, "no stop rule given");
  if (stop.max_clusters) {
    if (*stop.max_clusters < 1) fail(Err::BadConfig, "cluster count must be >= 1");
    if (*stop.max_clusters > n)
      fail(Err::TooFewClients, "asked for " + std::to_string(*stop.max_clusters) + " clusters from " +
                                   std::to_string(n) + " clients");
  }
  if (stop.threshold && !(*stop.threshold >= 0)) fail(Err::BadConfig, "threshold must be >= 0");

  std::vector<double> d = dist;  // working copy, updated in place
  std::vector<bool> active(n, true);
  std::vector<std::size_t> size(n, 1);
  ClusterResult out;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = i;  // cluster id = lowest member index

  std::size_t active_count = n;
  while (active_count > 1) {
    if (stop.max_clusters && active_count <= *stop.max_clusters) break;

    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = n, bj = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (!active[j]) continue;
        if (d[i * n + j] < best) {  // strict: ties keep the first (lowest) pair
          best = d[i * n + j];
          bi = i;
          bj = j;
        }
      }
    }
    if (stop.threshold && best > *stop.threshold) break;

    const std::size_t ni = size[bi], nj = size[bj];
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == bi || k == bj) continue;
      const double dik = d[bi * n + k], djk = d[bj * n + k];
      double merged;
      switch (linkage) {
        case Linkage::single: merged = std::min(dik, djk); break;
        case Linkage::complete: merged = std::max(dik, djk); break;
        case Linkage::average:
        default:
          merged = (static_cast<double>(ni) * dik + static_cast<double>(nj) * djk) /
                   static_cast<double>(ni + nj);
          break;
      }
      d[bi * n + k] = merged;
      d[k * n + bi] = merged;
    }
    active[bj] = false;
    size[bi] = ni + nj;
    for (std::size_t p = 0; p < n; ++p) {
      if (out.labels[p] == bj) out.labels[p] = bi;
    }
    out.merges.push_back({bi, bj, best, size[bi]});
    --active_count;
  }

  // renumber surviving cluster ids compactly, ordered by lowest member
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < n; ++i) {
    if (active[i]) survivors.push_back(i);
  }
  std::vector<std::size_t> compact(n, 0);
  for (std::size_t c = 0; c < survivors.size(); ++c) compact[survivors[c]] = c;
  for (std::size_t p = 0; p < n; ++p) out.labels[p] = compact[out.labels[p]];
  out.n_clusters = survivors.size();
  return out;
}

}  // namespace fedcast::clustering
