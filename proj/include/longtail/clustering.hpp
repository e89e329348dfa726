#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "longtail/geometry.hpp"
#include "longtail/scene.hpp"

namespace longtail {

struct ClusterModel {
  Geometry geometry = Geometry::kPoincare;
  std::vector<std::vector<double>> centroids;
  std::vector<int> assignment;  // point index -> cluster id
  double inertia = 0.0;         // sum of squared distances to assigned centroids

  int k() const { return static_cast<int>(centroids.size()); }
};

// Lloyd iterations under the chosen metric: nearest-centroid assignment and
// Frechet-mean (resp. arithmetic-mean) centroid updates, with k-means++ style
// seeding. Inertia is non-increasing across iterations; empty clusters are
// re-seeded at the point farthest from its current centroid. Runs `restarts`
// independent seedings and keeps the lowest-inertia run (ties keep the
// earliest). Deterministic for a fixed seed.
ClusterModel kmeans(const std::vector<std::vector<double>>& points, int k,
                    Geometry geometry, std::uint64_t seed, int max_iter = 100,
                    int restarts = 1);

ClusterModel hyperbolic_kmeans(const std::vector<BallPoint>& points, int k,
                               std::uint64_t seed, int max_iter = 100,
                               int restarts = 1);

struct ElbowResult {
  int k_star = 0;
  std::vector<int> k_grid;
  std::vector<double> inertia;
  std::vector<double> explained;  // 1 - inertia / total variance
};

// The elbow rule on an inertia curve: the interior k with the largest second
// difference, ties toward smaller k.
int elbow_pick(const std::vector<int>& k_grid,
               const std::vector<double>& inertia);

// Runs kmeans for every k in the grid and picks the k with the largest
// normalized second difference of the inertia curve (interior points only,
// ties toward smaller k).
ElbowResult elbow_select_k(const std::vector<std::vector<double>>& points,
                           const std::vector<int>& k_grid, Geometry geometry,
                           std::uint64_t seed, int restarts = 1);

// (1/N) * sum over clusters of the count of the cluster's most common ground
// truth label. Throws on empty or mismatched input.
double purity(const std::vector<int>& assignment,
              const std::vector<int>& gt_labels);

struct LabelAssignment {
  std::map<int, int> cluster_to_label;     // injective
  std::vector<int> novel_clusters;         // ascending cluster ids
  std::map<int, double> matched_distance;  // mean distance to the matched anchors
};

// Greedy one-to-one matching on a cost matrix (rows = clusters, columns =
// labels): repeatedly take the globally smallest finite cost among unassigned
// rows and unused columns. Ties break by row, then column.
std::map<int, int> greedy_match(const std::vector<std::vector<double>>& cost);

// Greedy cluster-to-label assignment. The cost of (cluster, label) is the
// mean distance from the cluster's member points to the label's anchor set.
// Clusters left unmatched are novel.
LabelAssignment assign_labels(
    const ClusterModel& model, const std::vector<std::vector<double>>& points,
    const std::map<int, std::vector<std::vector<double>>>& anchors);

// Purity restricted to clusters mapped to a label (novel clusters excluded).
double purity_mapped(const std::vector<int>& assignment,
                     const std::vector<int>& gt_labels,
                     const LabelAssignment& labels);

// Per-tier purity over the clusters whose assigned label falls in each tier.
// Tiers with no mapped cluster are absent from the result.
std::map<Tier, double> split_purity(const std::vector<int>& assignment,
                                    const std::vector<int>& gt_labels,
                                    const LabelAssignment& labels,
                                    const std::vector<Tier>& category_tiers);

void save_cluster_model(const std::string& path, const ClusterModel& model);
ClusterModel load_cluster_model(const std::string& path, Geometry geometry);
void save_label_assignment(const std::string& path, const LabelAssignment& la);
LabelAssignment load_label_assignment(const std::string& path);

}  // namespace longtail
