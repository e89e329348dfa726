#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace longtail {

struct BoundingBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
};

// Intersection over union; 0 for disjoint boxes, 1 for identical ones.
double iou(const BoundingBox& a, const BoundingBox& b);

// Fraction of `inner`'s area that lies inside `outer`.
double contained_fraction(const BoundingBox& inner, const BoundingBox& outer);

// Binary mask sampled on a fixed-resolution grid over its bounding box.
struct MaskGrid {
  int resolution = 0;              // G
  std::vector<std::uint8_t> bits;  // G*G entries, row-major

  // Fraction of set bits; always > 0 for generated masks.
  double area_fraction() const;
};

// Row-major run-length encoding; runs alternate starting with zeros.
std::vector<int> mask_rle_encode(const MaskGrid& mask);
MaskGrid mask_rle_decode(const std::vector<int>& runs);

struct Proposal {
  BoundingBox box;
  MaskGrid mask;
  double objectness = 0.0;
  std::vector<double> feature_full;
  std::vector<double> feature_fg;
  std::vector<double> feature_bg;
};

// Greedy non-maximum suppression: keep the highest-objectness proposal, drop
// everything with IoU above the threshold against a kept box, repeat. Output
// is sorted by descending objectness; ties keep input order.
std::vector<Proposal> nms(const std::vector<Proposal>& proposals,
                          double threshold);

inline constexpr int kNoParent = -1;

enum class Tier { kRare, kCommon, kFrequent };

const char* tier_name(Tier t);
Tier tier_from_name(const std::string& name);

struct CategoryNode {
  int id = 0;
  std::string name;
  int parent = kNoParent;
  int depth = 0;
  double weight = 0.0;  // sampling frequency; Zipf over leaves
  std::vector<double> prototype;
};

struct CategoryTree {
  int feature_dim = 0;
  std::vector<CategoryNode> nodes;  // node id == index
  std::vector<Tier> tiers;          // per node id

  bool is_leaf(int id) const;
  std::vector<int> children_of(int id) const;
  std::vector<int> roots() const;
  std::vector<int> leaves() const;
};

struct WorldConfig {
  // counts_per_depth[0] roots, then children per node at each further depth.
  std::vector<int> counts_per_depth = {5, 5};
  int feature_dim = 32;
  double zipf_exponent = 1.0;
  double child_proto_radius = 0.5;  // max prototype offset child vs parent
  double proto_scale = 3.0;         // norm of root prototypes
};

// Deterministic category hierarchy with Zipf leaf frequencies and
// prototype features satisfying the bounded child-perturbation rule.
CategoryTree generate_world(const WorldConfig& config, std::uint64_t seed);

struct GroundTruthInstance {
  int category = 0;
  BoundingBox box;
  MaskGrid mask;
  int parent_instance = kNoParent;  // index into Scene::instances
};

struct Scene {
  std::int64_t id = 0;
  double canvas_h = 0.0;
  double canvas_w = 0.0;
  std::vector<GroundTruthInstance> instances;
  std::vector<Proposal> proposals;
};

struct SceneConfig {
  double canvas_h = 256.0;
  double canvas_w = 256.0;
  int mask_resolution = 28;
  int parents_per_scene = 3;
  int max_children_per_parent = 2;
  int proposals_per_instance = 2;
  int distractors = 5;
  double sigma_jitter = 0.05;     // box noise as a fraction of box size
  double scale_spread = 4.0;      // extra scale noise on duplicate proposals
  double sigma_feat = 0.1;        // feature noise around prototypes
  double child_area_min = 0.02;   // child box area as fraction of parent
  double child_area_max = 0.25;   // sigma_child
  double parent_size_min = 0.20;  // parent box side as fraction of canvas
  double parent_size_max = 0.45;
  double max_parent_iou = 0.30;   // rejection bound when placing parents
  double gt_objectness_min = 0.55;
  double gt_objectness_max = 1.0;
  double distractor_objectness_min = 0.0;
  double distractor_objectness_max = 0.65;
};

// Synthetic stand-in for a pretrained class-agnostic proposal network:
// samples ground-truth instances from the category tree, then emits noisy
// proposals over them plus background distractors. Deterministic per seed.
// If id < 0 the scene id is taken from the seed.
Scene generate_scene(const CategoryTree& world, const SceneConfig& config,
                     std::uint64_t seed, std::int64_t id = -1);

// NMS at nms_threshold, then the top k survivors by objectness.
std::vector<Proposal> top_k_proposals(const Scene& scene, int k,
                                      double nms_threshold = 0.75);

// Index of the max-IoU ground-truth instance per kept proposal (IoU >= min_iou),
// or -1 for proposals that match nothing (distractors).
std::vector<int> match_proposals_to_instances(
    const Scene& scene, const std::vector<Proposal>& kept,
    double min_iou = 0.5);

// JSON Lines dataset and world sidecar files.
std::string scene_to_json_line(const Scene& scene);
Scene scene_from_json_line(const std::string& line);
void save_dataset(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_dataset(const std::string& path);
void save_world(const std::string& path, const CategoryTree& world);
CategoryTree load_world(const std::string& path);

}  // namespace longtail
