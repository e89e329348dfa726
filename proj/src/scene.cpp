#include "longtail/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "longtail/rng.hpp"

namespace longtail {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) -
                                      std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) -
                                      std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

double contained_fraction(const BoundingBox& inner, const BoundingBox& outer) {
  const double ix = std::max(0.0, std::min(inner.x_max, outer.x_max) -
                                      std::max(inner.x_min, outer.x_min));
  const double iy = std::max(0.0, std::min(inner.y_max, outer.y_max) -
                                      std::max(inner.y_min, outer.y_min));
  return ix * iy / inner.area();
}

double MaskGrid::area_fraction() const {
  if (bits.empty()) return 0.0;
  const auto set = std::count(bits.begin(), bits.end(), std::uint8_t{1});
  return static_cast<double>(set) / static_cast<double>(bits.size());
}

std::vector<int> mask_rle_encode(const MaskGrid& mask) {
  std::vector<int> runs;
  std::uint8_t current = 0;  // runs start with zeros
  int length = 0;
  for (std::uint8_t b : mask.bits) {
    if (b == current) {
      ++length;
    } else {
      runs.push_back(length);
      current = b;
      length = 1;
    }
  }
  runs.push_back(length);
  return runs;
}

MaskGrid mask_rle_decode(const std::vector<int>& runs) {
  MaskGrid mask;
  long total = 0;
  for (int r : runs) {
    if (r < 0) throw std::invalid_argument("negative run length");
    total += r;
  }
  const int g = static_cast<int>(std::lround(std::sqrt(double(total))));
  if (static_cast<long>(g) * g != total)
    throw std::invalid_argument("mask run lengths do not form a square grid");
  mask.resolution = g;
  mask.bits.reserve(total);
  std::uint8_t current = 0;
  for (int r : runs) {
    mask.bits.insert(mask.bits.end(), r, current);
    current = 1 - current;
  }
  return mask;
}

std::vector<Proposal> nms(const std::vector<Proposal>& proposals,
                          double threshold) {
  std::vector<std::size_t> order(proposals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return proposals[a].objectness > proposals[b].objectness;
  });

  std::vector<Proposal> kept;
  std::vector<bool> suppressed(proposals.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(proposals[i]);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(proposals[i].box, proposals[j].box) > threshold)
        suppressed[j] = true;
    }
  }
  return kept;
}

const char* tier_name(Tier t) {
  switch (t) {
    case Tier::kRare: return "rare";
    case Tier::kCommon: return "common";
    case Tier::kFrequent: return "frequent";
  }
  return "rare";
}

Tier tier_from_name(const std::string& name) {
  if (name == "rare") return Tier::kRare;
  if (name == "common") return Tier::kCommon;
  if (name == "frequent") return Tier::kFrequent;
  throw std::invalid_argument("unknown tier name: " + name);
}

bool CategoryTree::is_leaf(int id) const {
  for (const auto& n : nodes)
    if (n.parent == id) return false;
  return true;
}

std::vector<int> CategoryTree::children_of(int id) const {
  std::vector<int> out;
  for (const auto& n : nodes)
    if (n.parent == id) out.push_back(n.id);
  return out;
}

std::vector<int> CategoryTree::roots() const {
  std::vector<int> out;
  for (const auto& n : nodes)
    if (n.parent == kNoParent) out.push_back(n.id);
  return out;
}

std::vector<int> CategoryTree::leaves() const {
  std::vector<int> out;
  for (const auto& n : nodes)
    if (is_leaf(n.id)) out.push_back(n.id);
  return out;
}

namespace {

std::vector<double> random_direction(Rng& rng, int dim) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& c : v) {
      c = rng.normal();
      n2 += c * c;
    }
  } while (n2 < 1e-12);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& c : v) c *= inv;
  return v;
}

std::size_t weighted_pick(Rng& rng, const std::vector<double>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return i;
  }
  return weights.size() - 1;
}

}  // namespace

CategoryTree generate_world(const WorldConfig& config, std::uint64_t seed) {
  if (config.counts_per_depth.empty() ||
      std::any_of(config.counts_per_depth.begin(), config.counts_per_depth.end(),
                  [](int c) { return c < 1; }))
    throw std::invalid_argument("world config needs >= 1 category per depth");
  if (config.feature_dim < 1)
    throw std::invalid_argument("feature dimension must be >= 1");

  Rng rng(seed);
  CategoryTree tree;
  tree.feature_dim = config.feature_dim;

  // Breadth-first construction, so node ids are stable in (depth, parent) order.
  std::vector<int> previous_level;
  for (std::size_t depth = 0; depth < config.counts_per_depth.size(); ++depth) {
    std::vector<int> level;
    const int count = config.counts_per_depth[depth];
    const std::vector<int> parents =
        depth == 0 ? std::vector<int>{kNoParent} : previous_level;
    for (int parent : parents) {
      for (int c = 0; c < count; ++c) {
        CategoryNode node;
        node.id = static_cast<int>(tree.nodes.size());
        node.name = "cat_" + std::to_string(node.id);
        node.parent = parent;
        node.depth = static_cast<int>(depth);
        if (parent == kNoParent) {
          node.prototype = random_direction(rng, config.feature_dim);
          for (double& v : node.prototype) v *= config.proto_scale;
        } else {
          node.prototype = tree.nodes[parent].prototype;
          const auto dir = random_direction(rng, config.feature_dim);
          const double radius =
              rng.uniform(0.5, 1.0) * config.child_proto_radius;
          for (int k = 0; k < config.feature_dim; ++k)
            node.prototype[k] += radius * dir[k];
        }
        tree.nodes.push_back(std::move(node));
        level.push_back(tree.nodes.back().id);
      }
    }
    previous_level = std::move(level);
  }

  // Zipf frequencies over leaves, propagated up as subtree sums.
  const std::vector<int> leaf_ids = tree.leaves();
  double zipf_total = 0.0;
  for (std::size_t i = 0; i < leaf_ids.size(); ++i)
    zipf_total += std::pow(double(i + 1), -config.zipf_exponent);
  for (std::size_t i = 0; i < leaf_ids.size(); ++i)
    tree.nodes[leaf_ids[i]].weight =
        std::pow(double(i + 1), -config.zipf_exponent) / zipf_total;
  for (auto it = tree.nodes.rbegin(); it != tree.nodes.rend(); ++it)
    if (it->parent != kNoParent) tree.nodes[it->parent].weight += it->weight;

  // Frequency tiers over all categories, by descending weight.
  std::vector<int> by_weight(tree.nodes.size());
  std::iota(by_weight.begin(), by_weight.end(), 0);
  std::stable_sort(by_weight.begin(), by_weight.end(), [&](int a, int b) {
    return tree.nodes[a].weight > tree.nodes[b].weight;
  });
  tree.tiers.resize(tree.nodes.size());
  const std::size_t n = by_weight.size();
  for (std::size_t rank = 0; rank < n; ++rank) {
    Tier t = Tier::kRare;
    if (rank * 3 < n) t = Tier::kFrequent;
    else if (rank * 3 < 2 * n) t = Tier::kCommon;
    tree.tiers[by_weight[rank]] = t;
  }
  return tree;
}

namespace {

MaskGrid make_blob_mask(Rng& rng, int resolution) {
  MaskGrid mask;
  mask.resolution = resolution;
  mask.bits.assign(std::size_t(resolution) * resolution, 0);
  const double cx = (resolution - 1) / 2.0;
  const double cy = (resolution - 1) / 2.0;
  const double rx = rng.uniform(0.35, 0.48) * resolution;
  const double ry = rng.uniform(0.35, 0.48) * resolution;
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      const double dx = (col - cx) / rx;
      const double dy = (row - cy) / ry;
      if (dx * dx + dy * dy <= 1.0)
        mask.bits[std::size_t(row) * resolution + col] = 1;
    }
  }
  // Resolution >= 2 always covers the center, but keep the invariant airtight.
  if (std::count(mask.bits.begin(), mask.bits.end(), std::uint8_t{1}) == 0)
    mask.bits[std::size_t(resolution / 2) * resolution + resolution / 2] = 1;
  return mask;
}

BoundingBox clamp_box(BoundingBox box, double w, double h) {
  box.x_min = std::clamp(box.x_min, 0.0, w);
  box.x_max = std::clamp(box.x_max, 0.0, w);
  box.y_min = std::clamp(box.y_min, 0.0, h);
  box.y_max = std::clamp(box.y_max, 0.0, h);
  const double min_side = 2.0;
  if (box.width() < min_side) {
    const double c = std::clamp((box.x_min + box.x_max) / 2.0, min_side / 2.0,
                                w - min_side / 2.0);
    box.x_min = c - min_side / 2.0;
    box.x_max = c + min_side / 2.0;
  }
  if (box.height() < min_side) {
    const double c = std::clamp((box.y_min + box.y_max) / 2.0, min_side / 2.0,
                                h - min_side / 2.0);
    box.y_min = c - min_side / 2.0;
    box.y_max = c + min_side / 2.0;
  }
  return box;
}

std::vector<double> noisy_feature(Rng& rng, const std::vector<double>& base,
                                  double sigma) {
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = base[i] + sigma * rng.normal();
  return out;
}

std::vector<double> mixed_full_feature(const std::vector<double>& fg,
                                       const std::vector<double>& bg,
                                       double mask_fraction) {
  std::vector<double> out(fg.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = mask_fraction * fg[i] + (1.0 - mask_fraction) * bg[i];
  return out;
}

// Jittered copy of a ground-truth box. Duplicate proposals get extra scale
// noise so that pairs of proposals over one object cover a range of IoUs.
BoundingBox jitter_box(Rng& rng, const BoundingBox& box, double sigma,
                       double scale_spread, bool duplicate, double canvas_w,
                       double canvas_h) {
  const double w = box.width();
  const double h = box.height();
  const double dx = sigma * w * rng.normal();
  const double dy = sigma * h * rng.normal();
  const double scale_sigma = duplicate ? scale_spread * sigma : sigma;
  // Written as offsets so that zero noise passes the box through unchanged.
  const double grow_x = w * (std::exp(scale_sigma * rng.normal()) - 1.0) / 2.0;
  const double grow_y = h * (std::exp(scale_sigma * rng.normal()) - 1.0) / 2.0;
  BoundingBox out{box.x_min + dx - grow_x, box.y_min + dy - grow_y,
                  box.x_max + dx + grow_x, box.y_max + dy + grow_y};
  return clamp_box(out, canvas_w, canvas_h);
}

}  // namespace

Scene generate_scene(const CategoryTree& world, const SceneConfig& config,
                     std::uint64_t seed, std::int64_t id) {
  Rng rng(seed);
  Scene scene;
  scene.id = id >= 0 ? id : static_cast<std::int64_t>(seed & 0x7FFFFFFFFFFFFFFFULL);
  scene.canvas_h = config.canvas_h;
  scene.canvas_w = config.canvas_w;

  const std::vector<int> root_ids = world.roots();
  std::vector<double> root_weights;
  root_weights.reserve(root_ids.size());
  for (int r : root_ids) root_weights.push_back(world.nodes[r].weight);

  // Scene-level background feature distribution.
  std::vector<double> bg_mean = random_direction(rng, world.feature_dim);
  {
    // Match the prototype scale so background is a distinct "category".
    double scale = 0.0;
    for (int r : root_ids) {
      double n2 = 0.0;
      for (double v : world.nodes[r].prototype) n2 += v * v;
      scale = std::max(scale, std::sqrt(n2));
    }
    if (scale <= 0.0) scale = 1.0;
    for (double& v : bg_mean) v *= scale;
  }

  // Place parent instances with bounded mutual overlap.
  for (int p = 0; p < config.parents_per_scene; ++p) {
    const int category = root_ids[weighted_pick(rng, root_weights)];
    BoundingBox box;
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double side = std::min(config.canvas_w, config.canvas_h);
      const double w = rng.uniform(config.parent_size_min, config.parent_size_max) * side;
      const double h = rng.uniform(config.parent_size_min, config.parent_size_max) * side;
      const double x = rng.uniform(0.0, config.canvas_w - w);
      const double y = rng.uniform(0.0, config.canvas_h - h);
      box = BoundingBox{x, y, x + w, y + h};
      bool ok = true;
      for (const auto& inst : scene.instances)
        if (inst.parent_instance == kNoParent &&
            iou(box, inst.box) > config.max_parent_iou) {
          ok = false;
          break;
        }
      if (ok) break;
    }
    GroundTruthInstance inst;
    inst.category = category;
    inst.box = box;
    inst.mask = make_blob_mask(rng, config.mask_resolution);
    inst.parent_instance = kNoParent;
    scene.instances.push_back(std::move(inst));

    // Contained children, recursively for deeper hierarchies.
    std::vector<std::size_t> frontier = {scene.instances.size() - 1};
    while (!frontier.empty()) {
      std::vector<std::size_t> next_frontier;
      for (std::size_t parent_idx : frontier) {
        const int parent_cat = scene.instances[parent_idx].category;
        const std::vector<int> child_cats = world.children_of(parent_cat);
        if (child_cats.empty()) continue;
        std::vector<double> child_weights;
        for (int c : child_cats) child_weights.push_back(world.nodes[c].weight);
        const int n_children = static_cast<int>(
            rng.uniform_index(config.max_children_per_parent + 1));
        for (int c = 0; c < n_children; ++c) {
          const int category_c = child_cats[weighted_pick(rng, child_weights)];
          const BoundingBox pbox = scene.instances[parent_idx].box;
          BoundingBox cbox;
          for (int attempt = 0; attempt < 50; ++attempt) {
            const double frac =
                rng.uniform(config.child_area_min, config.child_area_max);
            const double aspect = rng.uniform(0.8, 1.25);
            double cw = std::sqrt(frac * pbox.area() * aspect);
            double ch = frac * pbox.area() / cw;
            cw = std::min(cw, pbox.width());
            ch = std::min(frac * pbox.area() / cw, pbox.height());
            const double x = pbox.x_min + rng.uniform(0.0, pbox.width() - cw);
            const double y = pbox.y_min + rng.uniform(0.0, pbox.height() - ch);
            cbox = BoundingBox{x, y, x + cw, y + ch};
            bool ok = true;
            for (const auto& sibling : scene.instances)
              if (sibling.parent_instance == static_cast<int>(parent_idx) &&
                  iou(cbox, sibling.box) > 0.0) {
                ok = false;
                break;
              }
            if (ok) break;
          }
          GroundTruthInstance child;
          child.category = category_c;
          child.box = cbox;
          child.mask = make_blob_mask(rng, config.mask_resolution);
          child.parent_instance = static_cast<int>(parent_idx);
          scene.instances.push_back(std::move(child));
          next_frontier.push_back(scene.instances.size() - 1);
        }
      }
      frontier = std::move(next_frontier);
    }
  }

  // Proposals over ground truth.
  for (const auto& inst : scene.instances) {
    for (int copy = 0; copy < config.proposals_per_instance; ++copy) {
      Proposal prop;
      prop.box = jitter_box(rng, inst.box, config.sigma_jitter,
                            config.scale_spread, copy > 0, config.canvas_w,
                            config.canvas_h);
      prop.mask = make_blob_mask(rng, config.mask_resolution);
      prop.objectness =
          rng.uniform(config.gt_objectness_min, config.gt_objectness_max);
      prop.feature_fg = noisy_feature(rng, world.nodes[inst.category].prototype,
                                      config.sigma_feat);
      prop.feature_bg = noisy_feature(rng, bg_mean, config.sigma_feat);
      prop.feature_full = mixed_full_feature(prop.feature_fg, prop.feature_bg,
                                             prop.mask.area_fraction());
      scene.proposals.push_back(std::move(prop));
    }
  }

  // Background distractors.
  for (int d = 0; d < config.distractors; ++d) {
    const double side = std::min(config.canvas_w, config.canvas_h);
    const double w = rng.uniform(0.05, 0.30) * side;
    const double h = rng.uniform(0.05, 0.30) * side;
    const double x = rng.uniform(0.0, config.canvas_w - w);
    const double y = rng.uniform(0.0, config.canvas_h - h);
    Proposal prop;
    prop.box = BoundingBox{x, y, x + w, y + h};
    prop.mask = make_blob_mask(rng, config.mask_resolution);
    prop.objectness = rng.uniform(config.distractor_objectness_min,
                                  config.distractor_objectness_max);
    prop.feature_fg = noisy_feature(rng, bg_mean, config.sigma_feat);
    prop.feature_bg = noisy_feature(rng, bg_mean, config.sigma_feat);
    prop.feature_full = mixed_full_feature(prop.feature_fg, prop.feature_bg,
                                           prop.mask.area_fraction());
    scene.proposals.push_back(std::move(prop));
  }

  return scene;
}

std::vector<Proposal> top_k_proposals(const Scene& scene, int k,
                                      double nms_threshold) {
  if (k < 1) throw std::invalid_argument("top_k_proposals needs k >= 1");
  std::vector<Proposal> kept = nms(scene.proposals, nms_threshold);
  if (static_cast<int>(kept.size()) > k) kept.resize(k);
  return kept;
}

std::vector<int> match_proposals_to_instances(const Scene& scene,
                                              const std::vector<Proposal>& kept,
                                              double min_iou) {
  std::vector<int> out(kept.size(), -1);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    double best = min_iou;
    for (std::size_t g = 0; g < scene.instances.size(); ++g) {
      const double v = iou(kept[i].box, scene.instances[g].box);
      if (v > best) {
        best = v;
        out[i] = static_cast<int>(g);
      }
    }
  }
  return out;
}

namespace {

using nlohmann::json;

json box_to_json(const BoundingBox& b) {
  return json::array({b.x_min, b.y_min, b.x_max, b.y_max});
}

BoundingBox box_from_json(const json& j) {
  return BoundingBox{j.at(0).get<double>(), j.at(1).get<double>(),
                     j.at(2).get<double>(), j.at(3).get<double>()};
}

}  // namespace

std::string scene_to_json_line(const Scene& scene) {
  json j;
  j["id"] = scene.id;
  j["canvas"] = json::array({scene.canvas_h, scene.canvas_w});
  json instances = json::array();
  for (const auto& inst : scene.instances) {
    json ji;
    ji["cat"] = inst.category;
    ji["box"] = box_to_json(inst.box);
    ji["mask_rle"] = mask_rle_encode(inst.mask);
    if (inst.parent_instance == kNoParent)
      ji["parent"] = nullptr;
    else
      ji["parent"] = inst.parent_instance;
    instances.push_back(std::move(ji));
  }
  j["instances"] = std::move(instances);
  json proposals = json::array();
  for (const auto& p : scene.proposals) {
    json jp;
    jp["box"] = box_to_json(p.box);
    jp["mask_rle"] = mask_rle_encode(p.mask);
    jp["objectness"] = p.objectness;
    jp["f_full"] = p.feature_full;
    jp["f_fg"] = p.feature_fg;
    jp["f_bg"] = p.feature_bg;
    proposals.push_back(std::move(jp));
  }
  j["proposals"] = std::move(proposals);
  return j.dump();
}

Scene scene_from_json_line(const std::string& line) {
  const json j = json::parse(line);
  Scene scene;
  scene.id = j.at("id").get<std::int64_t>();
  scene.canvas_h = j.at("canvas").at(0).get<double>();
  scene.canvas_w = j.at("canvas").at(1).get<double>();
  for (const auto& ji : j.at("instances")) {
    GroundTruthInstance inst;
    inst.category = ji.at("cat").get<int>();
    inst.box = box_from_json(ji.at("box"));
    inst.mask = mask_rle_decode(ji.at("mask_rle").get<std::vector<int>>());
    inst.parent_instance =
        ji.at("parent").is_null() ? kNoParent : ji.at("parent").get<int>();
    scene.instances.push_back(std::move(inst));
  }
  for (const auto& jp : j.at("proposals")) {
    Proposal p;
    p.box = box_from_json(jp.at("box"));
    p.mask = mask_rle_decode(jp.at("mask_rle").get<std::vector<int>>());
    p.objectness = jp.at("objectness").get<double>();
    p.feature_full = jp.at("f_full").get<std::vector<double>>();
    p.feature_fg = jp.at("f_fg").get<std::vector<double>>();
    p.feature_bg = jp.at("f_bg").get<std::vector<double>>();
    scene.proposals.push_back(std::move(p));
  }
  return scene;
}

void save_dataset(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : scenes) out << scene_to_json_line(s) << '\n';
}

std::vector<Scene> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset: " + path);
  std::vector<Scene> scenes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      scenes.push_back(scene_from_json_line(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": parse error: " + e.what());
    }
  }
  return scenes;
}

void save_world(const std::string& path, const CategoryTree& world) {
  json j;
  j["feature_dim"] = world.feature_dim;
  json nodes = json::array();
  for (const auto& n : world.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["name"] = n.name;
    jn["parent"] = n.parent;
    jn["depth"] = n.depth;
    jn["weight"] = n.weight;
    jn["prototype"] = n.prototype;
    nodes.push_back(std::move(jn));
  }
  j["nodes"] = std::move(nodes);
  json tiers = json::array();
  for (Tier t : world.tiers) tiers.push_back(tier_name(t));
  j["tiers"] = std::move(tiers);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

CategoryTree load_world(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open world file: " + path);
  json j;
  in >> j;
  CategoryTree world;
  world.feature_dim = j.at("feature_dim").get<int>();
  for (const auto& jn : j.at("nodes")) {
    CategoryNode n;
    n.id = jn.at("id").get<int>();
    n.name = jn.at("name").get<std::string>();
    n.parent = jn.at("parent").get<int>();
    n.depth = jn.at("depth").get<int>();
    n.weight = jn.at("weight").get<double>();
    n.prototype = jn.at("prototype").get<std::vector<double>>();
    world.nodes.push_back(std::move(n));
  }
  for (const auto& jt : j.at("tiers"))
    world.tiers.push_back(tier_from_name(jt.get<std::string>()));
  return world;
}

}  // namespace longtail
