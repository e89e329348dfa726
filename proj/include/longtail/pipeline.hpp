#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "longtail/clustering.hpp"
#include "longtail/embedder.hpp"
#include "longtail/evaluation.hpp"
#include "longtail/scene.hpp"

namespace longtail {

struct ClusterConfig {
  int k = 40;
  std::vector<int> k_grid;  // nonempty: run the elbow and cluster at k*
  int anchors_per_label = 5;
  int max_iter = 100;
  int restarts = 8;  // independent k-means seedings, best inertia wins
};

struct EvalConfig {
  double provenance_min_iou = 0.5;  // proposal-to-instance matching for purity
};

// Full configuration of a run. All stage seeds derive from the root seed.
struct RunConfig {
  std::uint64_t seed = 0;
  WorldConfig world;
  SceneConfig scene;
  int n_scenes = 400;
  TrainConfig train;
  ClusterConfig cluster;
  EvalConfig eval;
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Scenes 0..n_scenes-1 with per-scene derived seeds.
std::vector<Scene> generate_scenes(const CategoryTree& world,
                                   const RunConfig& config);

// Synthetic ground-truth anchors: per category, anchors_per_label fresh
// prototype-plus-noise features embedded with the trained encoder.
std::map<int, std::vector<std::vector<double>>> make_anchor_embeddings(
    const CategoryTree& world, const EncoderParams& params,
    const RunConfig& config);

struct DiscoveryOutput {
  ClusterModel model;
  LabelAssignment labels;
  ElbowResult elbow;
  bool ran_elbow = false;
  std::vector<std::vector<Proposal>> kept;           // per scene
  std::vector<std::vector<double>> points;           // embedded fg features
  std::vector<std::pair<int, int>> point_origin;     // (scene, kept index)
};

DiscoveryOutput discover(const std::vector<Scene>& scenes,
                         const CategoryTree& world, const EncoderParams& params,
                         const RunConfig& config);

struct PipelineReport {
  EvalReport eval;
  double purity = 0.0;  // mapped clusters only, proposals with provenance
  std::map<Tier, double> purity_split;
  int k_used = 0;
  int detections = 0;
  int novel_detections = 0;
};

// Fraction of ground-truth parent/child proposal pairs whose embeddings obey
// the radial ordering |z_parent| < |z_child|. Pairs are proposals whose
// best-IoU instances stand in a parent/child relation.
double hierarchy_ordering_fraction(const std::vector<Scene>& scenes,
                                   const EncoderParams& params,
                                   const RunConfig& config);

PipelineReport evaluate_discovery(const std::vector<Scene>& scenes,
                                  const CategoryTree& world,
                                  const DiscoveryOutput& discovery,
                                  const RunConfig& config);

struct PipelineResult {
  TrainResult train;
  DiscoveryOutput discovery;
  PipelineReport report;
};

// train -> cluster -> evaluate on in-memory data with the config's seed.
PipelineResult run_pipeline(const CategoryTree& world,
                            const std::vector<Scene>& scenes,
                            const RunConfig& config);

// One named single-field delta against the base config. Values are carried
// as strings and parsed according to the key.
struct AblationVariant {
  std::string name;
  std::string key;
  std::string value;
};

// The standard grid: proposal counts, margins, mask-loss weights, single-loss
// removals, and the Euclidean/Poincare geometry swap.
std::vector<AblationVariant> default_ablation_suite();

std::vector<AblationVariant> load_ablation_suite(const std::string& path);

RunConfig apply_variant(RunConfig base, const AblationVariant& variant);

struct AblationRow {
  std::string name;
  std::string key;
  std::string value;
  PipelineReport report;
};

// Base row first, then one row per variant, all under the shared seed.
std::vector<AblationRow> run_ablation(const CategoryTree& world,
                                      const std::vector<Scene>& scenes,
                                      const RunConfig& base,
                                      const std::vector<AblationVariant>& suite);

// File-level commands backing the CLI. The world sidecar of cmd_gen lives at
// world_sidecar_path(out_path).
std::string world_sidecar_path(const std::string& dataset_path);
void cmd_gen(const RunConfig& config, const std::string& out_path);
void cmd_train(const RunConfig& config, const std::string& dataset_path,
               const std::string& out_params, const std::string& out_trace);
void cmd_cluster(const RunConfig& config, const std::string& dataset_path,
                 const std::string& params_path, const std::string& world_path,
                 const std::string& out_model, const std::string& out_labels);
void cmd_eval(const RunConfig& config, const std::string& dataset_path,
              const std::string& params_path, const std::string& world_path,
              const std::string& model_path, const std::string& labels_path,
              const std::string& out_json, const std::string& out_csv);
void cmd_ablate(const RunConfig& config, const std::string& dataset_path,
                const std::string& world_path, const std::string& suite_path,
                const std::string& out_csv);

void save_report_json(const std::string& path, const PipelineReport& report);
void save_report_csv(const std::string& path, const PipelineReport& report);
void save_ablation_csv(const std::string& path,
                       const std::vector<AblationRow>& rows);

}  // namespace longtail
