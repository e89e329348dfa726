#include "longtail/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "longtail/rng.hpp"

namespace longtail {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sq(double x) { return x * x; }

int nearest_centroid(Geometry geom, const std::vector<double>& p,
                     const std::vector<std::vector<double>>& centroids) {
  int best = 0;
  double best_d = kInf;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = metric_distance(geom, p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

double compute_inertia(Geometry geom,
                       const std::vector<std::vector<double>>& points,
                       const std::vector<std::vector<double>>& centroids,
                       const std::vector<int>& assignment) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    inertia += sq(metric_distance(geom, points[i], centroids[assignment[i]]));
  return inertia;
}

}  // namespace

namespace {

ClusterModel kmeans_single(const std::vector<std::vector<double>>& points,
                           int k, Geometry geometry, std::uint64_t seed,
                           int max_iter) {
  const std::size_t n = points.size();
  Rng rng(seed);

  // k-means++ style seeding under the metric.
  ClusterModel model;
  model.geometry = geometry;
  std::vector<bool> chosen(n, false);
  const std::size_t first = rng.uniform_index(n);
  model.centroids.push_back(points[first]);
  chosen[first] = true;
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i)
    d2[i] = sq(metric_distance(geometry, points[i], model.centroids[0]));
  while (static_cast<int>(model.centroids.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        u -= d2[i];
        if (u < 0.0) {
          pick = i;
          break;
        }
      }
    }
    if (pick == n || chosen[pick]) {
      // Duplicate-heavy input: fall back to the first unchosen point.
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    chosen[pick] = true;
    model.centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(
          d2[i], sq(metric_distance(geometry, points[i], model.centroids.back())));
  }

  std::vector<int> assignment(n, -1);
  double prev_inertia = kInf;
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> next(n);
    for (std::size_t i = 0; i < n; ++i)
      next[i] = nearest_centroid(geometry, points[i], model.centroids);

    // Re-seed empty clusters at the point farthest from its centroid.
    std::vector<int> sizes(k, 0);
    for (int a : next) ++sizes[a];
    for (int c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sizes[next[i]] <= 1) continue;
        const double d =
            metric_distance(geometry, points[i], model.centroids[next[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far == n) continue;  // all clusters are singletons already
      --sizes[next[far]];
      model.centroids[c] = points[far];
      next[far] = c;
      ++sizes[c];
    }

    const double inertia =
        compute_inertia(geometry, points, model.centroids, next);
    if (inertia > prev_inertia + 1e-9 * std::max(1.0, prev_inertia))
      throw std::logic_error("kmeans inertia increased");
    prev_inertia = inertia;
    model.inertia = inertia;

    const bool converged = next == assignment;
    assignment = std::move(next);
    if (converged) break;

    // Centroid update; keep the previous centroid when the mean does not
    // improve its members' objective, so inertia stays monotone.
    std::vector<std::vector<std::vector<double>>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[assignment[i]].push_back(points[i]);
    for (int c = 0; c < k; ++c) {
      if (members[c].empty()) continue;
      std::vector<double> mean = metric_mean(geometry, members[c]);
      double old_obj = 0.0, new_obj = 0.0;
      for (const auto& m : members[c]) {
        old_obj += sq(metric_distance(geometry, m, model.centroids[c]));
        new_obj += sq(metric_distance(geometry, m, mean));
      }
      if (new_obj <= old_obj) model.centroids[c] = std::move(mean);
    }
  }

  // If the loop exhausted max_iter right after an update, refresh assignment.
  {
    bool stale = false;
    for (std::size_t i = 0; i < n && !stale; ++i)
      stale = nearest_centroid(geometry, points[i], model.centroids) !=
              assignment[i];
    if (stale) {
      for (std::size_t i = 0; i < n; ++i)
        assignment[i] = nearest_centroid(geometry, points[i], model.centroids);
      model.inertia =
          compute_inertia(geometry, points, model.centroids, assignment);
    }
  }
  model.assignment = std::move(assignment);
  return model;
}

}  // namespace

ClusterModel kmeans(const std::vector<std::vector<double>>& points, int k,
                    Geometry geometry, std::uint64_t seed, int max_iter,
                    int restarts) {
  if (points.empty()) throw std::invalid_argument("kmeans needs >= 1 point");
  if (k < 1) throw std::invalid_argument("kmeans needs k >= 1");
  if (k > static_cast<int>(points.size()))
    throw std::invalid_argument("kmeans needs k <= number of points");
  if (restarts < 1) throw std::invalid_argument("kmeans needs >= 1 restart");
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim)
      throw std::invalid_argument("kmeans points have mixed dimensions");

  ClusterModel best;
  for (int r = 0; r < restarts; ++r) {
    ClusterModel model = kmeans_single(points, k, geometry,
                                       derive_seed(seed, "restart", r), max_iter);
    if (r == 0 || model.inertia < best.inertia) best = std::move(model);
  }
  return best;
}

ClusterModel hyperbolic_kmeans(const std::vector<BallPoint>& points, int k,
                               std::uint64_t seed, int max_iter, int restarts) {
  std::vector<std::vector<double>> raw;
  raw.reserve(points.size());
  for (const BallPoint& p : points) raw.push_back(p.coords());
  return kmeans(raw, k, Geometry::kPoincare, seed, max_iter, restarts);
}

int elbow_pick(const std::vector<int>& k_grid,
               const std::vector<double>& inertia) {
  if (k_grid.size() < 3)
    throw std::invalid_argument("elbow needs a grid of >= 3 entries");
  if (k_grid.size() != inertia.size())
    throw std::invalid_argument("elbow grid/curve size mismatch");
  if (!std::is_sorted(k_grid.begin(), k_grid.end()) ||
      std::adjacent_find(k_grid.begin(), k_grid.end()) != k_grid.end())
    throw std::invalid_argument("elbow grid must be strictly ascending");
  double scale = 0.0;
  for (double v : inertia) scale = std::max(scale, v);
  const double floor = std::max(scale, 1.0) * 1e-12;
  // Second difference of log-inertia: relative curvature. The raw second
  // difference peaks at the first big split of a steeply decaying curve; the
  // log form peaks where the marginal gain collapses.
  auto lg = [&](std::size_t i) { return std::log(std::max(inertia[i], floor)); };
  std::size_t best = 1;
  double best_curvature = -kInf;
  for (std::size_t i = 1; i + 1 < k_grid.size(); ++i) {
    const double curvature = lg(i - 1) - 2.0 * lg(i) + lg(i + 1);
    if (curvature > best_curvature) {
      best_curvature = curvature;
      best = i;
    }
  }
  return k_grid[best];
}

ElbowResult elbow_select_k(const std::vector<std::vector<double>>& points,
                           const std::vector<int>& k_grid, Geometry geometry,
                           std::uint64_t seed, int restarts) {
  if (k_grid.size() < 3)
    throw std::invalid_argument("elbow needs a grid of >= 3 entries");

  ElbowResult result;
  result.k_grid = k_grid;
  for (int k : k_grid) {
    const ClusterModel model =
        kmeans(points, k, geometry, derive_seed(seed, "elbow", k), 100, restarts);
    result.inertia.push_back(model.inertia);
  }

  // Total variance around the global mean normalizes the curve into
  // "% variance explained" units. The argmax is unaffected, but the curve is
  // reported in those units.
  double total_variance = 0.0;
  {
    const std::vector<double> mean = metric_mean(geometry, points);
    for (const auto& p : points)
      total_variance += sq(metric_distance(geometry, p, mean));
  }
  const double tv = total_variance > 0.0 ? total_variance : 1.0;
  for (double in : result.inertia) result.explained.push_back(1.0 - in / tv);

  result.k_star = elbow_pick(k_grid, result.inertia);
  return result;
}

double purity(const std::vector<int>& assignment,
              const std::vector<int>& gt_labels) {
  if (assignment.empty()) throw std::invalid_argument("purity of empty assignment");
  if (assignment.size() != gt_labels.size())
    throw std::invalid_argument("purity label count mismatch");
  std::map<int, std::map<int, int>> counts;
  for (std::size_t i = 0; i < assignment.size(); ++i)
    ++counts[assignment[i]][gt_labels[i]];
  long correct = 0;
  for (const auto& [cluster, labels] : counts) {
    int best = 0;
    for (const auto& [label, count] : labels) best = std::max(best, count);
    correct += best;
  }
  return static_cast<double>(correct) / static_cast<double>(assignment.size());
}

std::map<int, int> greedy_match(const std::vector<std::vector<double>>& cost) {
  std::map<int, int> match;
  if (cost.empty()) return match;
  const std::size_t rows = cost.size();
  const std::size_t cols = cost[0].size();
  std::vector<bool> row_used(rows, false), col_used(cols, false);
  while (true) {
    double best = kInf;
    std::size_t br = rows, bc = cols;
    for (std::size_t r = 0; r < rows; ++r) {
      if (row_used[r]) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        if (col_used[c]) continue;
        if (cost[r][c] < best) {
          best = cost[r][c];
          br = r;
          bc = c;
        }
      }
    }
    if (br == rows) break;  // nothing finite left
    row_used[br] = true;
    col_used[bc] = true;
    match[static_cast<int>(br)] = static_cast<int>(bc);
  }
  return match;
}

LabelAssignment assign_labels(
    const ClusterModel& model, const std::vector<std::vector<double>>& points,
    const std::map<int, std::vector<std::vector<double>>>& anchors) {
  if (model.assignment.size() != points.size())
    throw std::invalid_argument("assign_labels point count mismatch");
  for (const auto& [label, list] : anchors)
    if (list.empty())
      throw std::invalid_argument("label " + std::to_string(label) +
                                  " has no anchors");

  std::vector<int> label_ids;
  label_ids.reserve(anchors.size());
  for (const auto& [label, list] : anchors) label_ids.push_back(label);

  const int k = model.k();
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < points.size(); ++i)
    members[model.assignment[i]].push_back(i);

  std::vector<std::vector<double>> cost(k,
                                        std::vector<double>(label_ids.size(), kInf));
  for (int c = 0; c < k; ++c) {
    if (members[c].empty()) continue;  // empty clusters stay novel
    for (std::size_t li = 0; li < label_ids.size(); ++li) {
      const auto& anchor_set = anchors.at(label_ids[li]);
      double sum = 0.0;
      for (std::size_t m : members[c])
        for (const auto& a : anchor_set)
          sum += metric_distance(model.geometry, points[m], a);
      cost[c][li] = sum / (double(members[c].size()) * double(anchor_set.size()));
    }
  }

  LabelAssignment out;
  for (const auto& [row, col] : greedy_match(cost)) {
    out.cluster_to_label[row] = label_ids[col];
    out.matched_distance[row] = cost[row][col];
  }
  for (int c = 0; c < k; ++c)
    if (!out.cluster_to_label.contains(c)) out.novel_clusters.push_back(c);
  return out;
}

double purity_mapped(const std::vector<int>& assignment,
                     const std::vector<int>& gt_labels,
                     const LabelAssignment& labels) {
  std::vector<int> sub_assign, sub_labels;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (labels.cluster_to_label.contains(assignment[i])) {
      sub_assign.push_back(assignment[i]);
      sub_labels.push_back(gt_labels[i]);
    }
  }
  return purity(sub_assign, sub_labels);
}

std::map<Tier, double> split_purity(const std::vector<int>& assignment,
                                    const std::vector<int>& gt_labels,
                                    const LabelAssignment& labels,
                                    const std::vector<Tier>& category_tiers) {
  if (assignment.size() != gt_labels.size())
    throw std::invalid_argument("split_purity label count mismatch");
  std::map<int, std::map<int, int>> counts;
  std::map<int, int> cluster_sizes;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    ++counts[assignment[i]][gt_labels[i]];
    ++cluster_sizes[assignment[i]];
  }
  std::map<Tier, long> correct, total;
  for (const auto& [cluster, label] : labels.cluster_to_label) {
    if (label < 0 || label >= static_cast<int>(category_tiers.size()))
      throw std::invalid_argument("split_purity tier map does not cover label " +
                                  std::to_string(label));
    if (!counts.contains(cluster)) continue;  // mapped cluster with no points here
    const Tier t = category_tiers[label];
    int best = 0;
    for (const auto& [gt, count] : counts[cluster]) best = std::max(best, count);
    correct[t] += best;
    total[t] += cluster_sizes[cluster];
  }
  std::map<Tier, double> out;
  for (const auto& [tier, tot] : total)
    if (tot > 0)
      out[tier] = static_cast<double>(correct[tier]) / static_cast<double>(tot);
  return out;
}

void save_cluster_model(const std::string& path, const ClusterModel& model) {
  nlohmann::json j;
  j["k"] = model.k();
  j["centroids"] = model.centroids;
  j["assignment"] = model.assignment;
  j["inertia"] = model.inertia;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

ClusterModel load_cluster_model(const std::string& path, Geometry geometry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open cluster model: " + path);
  nlohmann::json j;
  in >> j;
  ClusterModel model;
  model.geometry = geometry;
  model.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
  model.assignment = j.at("assignment").get<std::vector<int>>();
  model.inertia = j.at("inertia").get<double>();
  const int k = j.at("k").get<int>();
  if (k != model.k())
    throw std::runtime_error("cluster model k/centroid count mismatch");
  for (int a : model.assignment)
    if (a < 0 || a >= k)
      throw std::runtime_error("cluster model assignment out of range");
  return model;
}

void save_label_assignment(const std::string& path, const LabelAssignment& la) {
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [cluster, label] : la.cluster_to_label)
    labels[std::to_string(cluster)] = label;
  nlohmann::json j;
  j["labels"] = std::move(labels);
  j["novel"] = la.novel_clusters;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

LabelAssignment load_label_assignment(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open label assignment: " + path);
  nlohmann::json j;
  in >> j;
  LabelAssignment la;
  for (const auto& [key, value] : j.at("labels").items())
    la.cluster_to_label[std::stoi(key)] = value.get<int>();
  la.novel_clusters = j.at("novel").get<std::vector<int>>();
  return la;
}

}  // namespace longtail
