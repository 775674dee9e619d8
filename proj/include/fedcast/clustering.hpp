#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "fedcast/parallel.hpp"
#include "fedcast/param_vector.hpp"

namespace fedcast::clustering {

enum class DistanceMetric { euclidean, cosine };
enum class Linkage { single, complete, average };

const char* metric_name(DistanceMetric m);
DistanceMetric metric_from_name(std::string_view name);
const char* linkage_name(Linkage l);
Linkage linkage_from_name(std::string_view name);

/// Full n*n symmetric matrix, zero diagonal, row-major. Cosine distance
/// against a zero vector is defined as 1.
std::vector<double> pairwise_distances(const std::vector<ParamVector>& vectors, DistanceMetric metric,
                                       ExecMode mode);

struct MergeStep {
  std::size_t a = 0;  // surviving cluster id (lowest member index), a < b
  std::size_t b = 0;
  double distance = 0.0;
  std::size_t size = 0;  // members after the merge
};

/// Stop rules; at least one must be set. Merging halts when the closest pair
/// is farther than `threshold` or when `max_clusters` remain, whichever
/// comes first.
struct ClusterStop {
  std::optional<double> threshold;
  std::optional<std::size_t> max_clusters;
};

struct ClusterResult {
  std::vector<std::size_t> labels;  // compact, 0..n_clusters-1, ordered by lowest member
  std::size_t n_clusters = 0;
  std::vector<MergeStep> merges;
};

/// Bottom-up agglomeration over a precomputed distance matrix using
/// Lance-Williams updates. Distance ties pick the lexicographically smallest
/// cluster-id pair, which makes the dendrogram reproducible.
ClusterResult agglomerate(const std::vector<double>& dist, std::size_t n, Linkage linkage,
                          const ClusterStop& stop);

}  // namespace fedcast::clustering
