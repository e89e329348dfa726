#include "longtail/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "longtail/rng.hpp"

namespace longtail {

namespace {

using nlohmann::json;

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_world_config(const json& j, WorldConfig& w) {
  read_if(j, "counts_per_depth", w.counts_per_depth);
  read_if(j, "feature_dim", w.feature_dim);
  read_if(j, "zipf_exponent", w.zipf_exponent);
  read_if(j, "child_proto_radius", w.child_proto_radius);
  read_if(j, "proto_scale", w.proto_scale);
}

void parse_scene_config(const json& j, SceneConfig& s) {
  read_if(j, "canvas_h", s.canvas_h);
  read_if(j, "canvas_w", s.canvas_w);
  read_if(j, "mask_resolution", s.mask_resolution);
  read_if(j, "parents_per_scene", s.parents_per_scene);
  read_if(j, "max_children_per_parent", s.max_children_per_parent);
  read_if(j, "proposals_per_instance", s.proposals_per_instance);
  read_if(j, "distractors", s.distractors);
  read_if(j, "sigma_jitter", s.sigma_jitter);
  read_if(j, "scale_spread", s.scale_spread);
  read_if(j, "sigma_feat", s.sigma_feat);
  read_if(j, "child_area_min", s.child_area_min);
  read_if(j, "child_area_max", s.child_area_max);
  read_if(j, "parent_size_min", s.parent_size_min);
  read_if(j, "parent_size_max", s.parent_size_max);
  read_if(j, "max_parent_iou", s.max_parent_iou);
  read_if(j, "gt_objectness_min", s.gt_objectness_min);
  read_if(j, "gt_objectness_max", s.gt_objectness_max);
  read_if(j, "distractor_objectness_min", s.distractor_objectness_min);
  read_if(j, "distractor_objectness_max", s.distractor_objectness_max);
}

void parse_train_config(const json& j, TrainConfig& t) {
  read_if(j, "margin", t.margin);
  read_if(j, "beta", t.beta);
  read_if(j, "gamma", t.gamma);
  read_if(j, "hier_weight", t.hier_weight);
  read_if(j, "learning_rate", t.learning_rate);
  read_if(j, "epochs", t.epochs);
  read_if(j, "batch_size", t.batch_size);
  if (j.contains("geometry"))
    t.geometry = geometry_from_name(j.at("geometry").get<std::string>());
  read_if(j, "proposals_per_scene", t.proposals_per_scene);
  read_if(j, "nms_threshold", t.nms_threshold);
  read_if(j, "tau_pos", t.tau_pos);
  read_if(j, "n_neg", t.n_neg);
  read_if(j, "sigma_hier", t.sigma_hier);
  read_if(j, "kappa_contain", t.kappa_contain);
  read_if(j, "hidden", t.hidden);
  read_if(j, "ball_dim", t.ball_dim);
}

void parse_cluster_config(const json& j, ClusterConfig& c) {
  read_if(j, "k", c.k);
  read_if(j, "k_grid", c.k_grid);
  read_if(j, "anchors_per_label", c.anchors_per_label);
  read_if(j, "max_iter", c.max_iter);
  read_if(j, "restarts", c.restarts);
}

void parse_eval_config(const json& j, EvalConfig& e) {
  read_if(j, "provenance_min_iou", e.provenance_min_iou);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json j = json::parse(json_text);
  RunConfig config;
  read_if(j, "seed", config.seed);
  read_if(j, "n_scenes", config.n_scenes);
  if (j.contains("world")) parse_world_config(j.at("world"), config.world);
  if (j.contains("scene")) parse_scene_config(j.at("scene"), config.scene);
  if (j.contains("train")) parse_train_config(j.at("train"), config.train);
  if (j.contains("cluster")) parse_cluster_config(j.at("cluster"), config.cluster);
  if (j.contains("eval")) parse_eval_config(j.at("eval"), config.eval);
  return config;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::vector<Scene> generate_scenes(const CategoryTree& world,
                                   const RunConfig& config) {
  std::vector<Scene> scenes;
  scenes.reserve(config.n_scenes);
  for (int i = 0; i < config.n_scenes; ++i)
    scenes.push_back(generate_scene(world, config.scene,
                                    derive_seed(config.seed, "scene", i), i));
  return scenes;
}

std::map<int, std::vector<std::vector<double>>> make_anchor_embeddings(
    const CategoryTree& world, const EncoderParams& params,
    const RunConfig& config) {
  Rng rng(derive_seed(config.seed, "anchors"));
  std::map<int, std::vector<std::vector<double>>> anchors;
  for (const CategoryNode& node : world.nodes) {
    std::vector<std::vector<double>>& list = anchors[node.id];
    for (int a = 0; a < config.cluster.anchors_per_label; ++a) {
      std::vector<double> feature(node.prototype.size());
      for (std::size_t k = 0; k < feature.size(); ++k)
        feature[k] = node.prototype[k] + config.scene.sigma_feat * rng.normal();
      list.push_back(embed(params, feature));
    }
  }
  return anchors;
}

DiscoveryOutput discover(const std::vector<Scene>& scenes,
                         const CategoryTree& world, const EncoderParams& params,
                         const RunConfig& config) {
  if (params.dims.front() != world.feature_dim)
    throw std::invalid_argument("encoder input dimension does not match world");

  DiscoveryOutput out;
  out.kept.reserve(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    out.kept.push_back(top_k_proposals(scenes[s], config.train.proposals_per_scene,
                                       config.train.nms_threshold));
    for (std::size_t j = 0; j < out.kept.back().size(); ++j) {
      out.points.push_back(embed(params, out.kept.back()[j].feature_fg));
      out.point_origin.emplace_back(static_cast<int>(s), static_cast<int>(j));
    }
  }
  if (out.points.empty())
    throw std::invalid_argument("no proposals survived selection");

  const std::uint64_t cluster_seed = derive_seed(config.seed, "cluster");
  int k = config.cluster.k;
  if (!config.cluster.k_grid.empty()) {
    out.elbow = elbow_select_k(out.points, config.cluster.k_grid,
                               params.geometry, cluster_seed,
                               config.cluster.restarts);
    out.ran_elbow = true;
    k = out.elbow.k_star;
  }
  out.model = kmeans(out.points, k, params.geometry, cluster_seed,
                     config.cluster.max_iter, config.cluster.restarts);
  out.labels = assign_labels(out.model, out.points,
                             make_anchor_embeddings(world, params, config));
  return out;
}

PipelineReport evaluate_discovery(const std::vector<Scene>& scenes,
                                  const CategoryTree& world,
                                  const DiscoveryOutput& discovery,
                                  const RunConfig& config) {
  PipelineReport report;
  report.k_used = discovery.model.k();

  // Ground truth across all scenes.
  std::vector<GroundTruth> gts;
  for (const Scene& scene : scenes)
    for (const auto& inst : scene.instances)
      gts.push_back(GroundTruth{scene.id, inst.category, inst.box});

  // Labeled detections from mapped clusters; novel-cluster hits are counted.
  std::vector<Detection> dets;
  for (std::size_t p = 0; p < discovery.points.size(); ++p) {
    const auto [s, j] = discovery.point_origin[p];
    const int cluster = discovery.model.assignment[p];
    const auto it = discovery.labels.cluster_to_label.find(cluster);
    if (it == discovery.labels.cluster_to_label.end()) {
      ++report.novel_detections;
      continue;
    }
    const Proposal& prop = discovery.kept[s][j];
    dets.push_back(Detection{scenes[s].id, prop.box, it->second, prop.objectness});
  }
  report.detections = static_cast<int>(dets.size());

  report.eval = map_summary(dets, gts, world.tiers,
                            default_size_bins(config.scene.canvas_w,
                                              config.scene.canvas_h));
  report.eval.novel_clusters =
      static_cast<int>(discovery.labels.novel_clusters.size());

  // Purity over proposals that correspond to a ground-truth instance,
  // restricted to clusters mapped to a label.
  std::vector<std::vector<int>> provenance;
  provenance.reserve(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s)
    provenance.push_back(match_proposals_to_instances(
        scenes[s], discovery.kept[s], config.eval.provenance_min_iou));
  std::vector<int> assignment, gt_labels;
  for (std::size_t p = 0; p < discovery.points.size(); ++p) {
    const auto [s, j] = discovery.point_origin[p];
    const int inst = provenance[s][j];
    if (inst < 0) continue;
    assignment.push_back(discovery.model.assignment[p]);
    gt_labels.push_back(scenes[s].instances[inst].category);
  }
  bool any_mapped = false;
  for (int a : assignment)
    if (discovery.labels.cluster_to_label.contains(a)) {
      any_mapped = true;
      break;
    }
  if (any_mapped) {
    report.purity = purity_mapped(assignment, gt_labels, discovery.labels);
    report.purity_split =
        split_purity(assignment, gt_labels, discovery.labels, world.tiers);
  }
  return report;
}

double hierarchy_ordering_fraction(const std::vector<Scene>& scenes,
                                   const EncoderParams& params,
                                   const RunConfig& config) {
  long ordered = 0, total = 0;
  for (const Scene& scene : scenes) {
    const std::vector<Proposal> kept = top_k_proposals(
        scene, config.train.proposals_per_scene, config.train.nms_threshold);
    const std::vector<int> provenance = match_proposals_to_instances(
        scene, kept, config.eval.provenance_min_iou);
    std::vector<double> norms(kept.size());
    for (std::size_t j = 0; j < kept.size(); ++j) {
      const auto z = embed(params, kept[j].feature_fg);
      double n2 = 0.0;
      for (double c : z) n2 += c * c;
      norms[j] = std::sqrt(n2);
    }
    for (std::size_t a = 0; a < kept.size(); ++a) {
      if (provenance[a] < 0) continue;
      for (std::size_t b = 0; b < kept.size(); ++b) {
        if (a == b || provenance[b] < 0) continue;
        if (scene.instances[provenance[b]].parent_instance != provenance[a])
          continue;
        ++total;
        if (norms[a] < norms[b]) ++ordered;
      }
    }
  }
  return total == 0 ? 0.0 : double(ordered) / double(total);
}

PipelineResult run_pipeline(const CategoryTree& world,
                            const std::vector<Scene>& scenes,
                            const RunConfig& config) {
  PipelineResult result;
  TrainConfig train_config = config.train;
  train_config.seed = derive_seed(config.seed, "train");
  result.train = train(scenes, train_config);
  result.discovery = discover(scenes, world, result.train.params, config);
  result.report = evaluate_discovery(scenes, world, result.discovery, config);
  return result;
}

std::vector<AblationVariant> default_ablation_suite() {
  return {
      {"rp_20", "proposals_per_scene", "20"},
      {"rp_50", "proposals_per_scene", "50"},
      {"rp_100", "proposals_per_scene", "100"},
      {"alpha_0.1", "alpha", "0.1"},
      {"alpha_0.2", "alpha", "0.2"},
      {"alpha_0.5", "alpha", "0.5"},
      {"beta_0.1", "beta", "0.1"},
      {"beta_0.2", "beta", "0.2"},
      {"beta_0.5", "beta", "0.5"},
      {"no_mask_loss", "beta", "0"},
      {"no_object_loss", "gamma", "0"},
      {"no_hierarchical_loss", "hier_weight", "0"},
      {"euclidean", "geometry", "euclidean"},
      {"poincare", "geometry", "poincare"},
  };
}

std::vector<AblationVariant> load_ablation_suite(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ablation suite: " + path);
  json j;
  in >> j;
  std::vector<AblationVariant> suite;
  for (const auto& jv : j.at("variants")) {
    AblationVariant v;
    v.name = jv.at("name").get<std::string>();
    v.key = jv.at("key").get<std::string>();
    const auto& value = jv.at("value");
    if (value.is_string())
      v.value = value.get<std::string>();
    else if (value.is_number_integer())
      v.value = std::to_string(value.get<long>());
    else
      v.value = std::to_string(value.get<double>());
    suite.push_back(std::move(v));
  }
  return suite;
}

RunConfig apply_variant(RunConfig base, const AblationVariant& variant) {
  if (variant.key == "proposals_per_scene")
    base.train.proposals_per_scene = std::stoi(variant.value);
  else if (variant.key == "alpha")
    base.train.margin = std::stod(variant.value);
  else if (variant.key == "beta")
    base.train.beta = std::stod(variant.value);
  else if (variant.key == "gamma")
    base.train.gamma = std::stod(variant.value);
  else if (variant.key == "hier_weight")
    base.train.hier_weight = std::stod(variant.value);
  else if (variant.key == "geometry")
    base.train.geometry = geometry_from_name(variant.value);
  else
    throw std::invalid_argument("unknown ablation key: " + variant.key);
  return base;
}

std::vector<AblationRow> run_ablation(const CategoryTree& world,
                                      const std::vector<Scene>& scenes,
                                      const RunConfig& base,
                                      const std::vector<AblationVariant>& suite) {
  std::vector<AblationRow> rows;
  {
    AblationRow row;
    row.name = "base";
    row.report = run_pipeline(world, scenes, base).report;
    rows.push_back(std::move(row));
  }
  for (const AblationVariant& v : suite) {
    AblationRow row;
    row.name = v.name;
    row.key = v.key;
    row.value = v.value;
    row.report = run_pipeline(world, scenes, apply_variant(base, v)).report;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string world_sidecar_path(const std::string& dataset_path) {
  std::filesystem::path p(dataset_path);
  p.replace_extension(".world.json");
  return p.string();
}

void cmd_gen(const RunConfig& config, const std::string& out_path) {
  const CategoryTree world =
      generate_world(config.world, derive_seed(config.seed, "world"));
  const std::vector<Scene> scenes = generate_scenes(world, config);
  save_dataset(out_path, scenes);
  save_world(world_sidecar_path(out_path), world);
}

void cmd_train(const RunConfig& config, const std::string& dataset_path,
               const std::string& out_params, const std::string& out_trace) {
  const std::vector<Scene> scenes = load_dataset(dataset_path);
  TrainConfig train_config = config.train;
  train_config.seed = derive_seed(config.seed, "train");
  const TrainResult result = train(scenes, train_config);
  save_params(out_params, result.params);
  save_loss_trace(out_trace, result.trace);
}

void cmd_cluster(const RunConfig& config, const std::string& dataset_path,
                 const std::string& params_path, const std::string& world_path,
                 const std::string& out_model, const std::string& out_labels) {
  const std::vector<Scene> scenes = load_dataset(dataset_path);
  const EncoderParams params = load_params(params_path);
  const CategoryTree world = load_world(world_path);
  const DiscoveryOutput out = discover(scenes, world, params, config);
  save_cluster_model(out_model, out.model);
  save_label_assignment(out_labels, out.labels);
}

void cmd_eval(const RunConfig& config, const std::string& dataset_path,
              const std::string& params_path, const std::string& world_path,
              const std::string& model_path, const std::string& labels_path,
              const std::string& out_json, const std::string& out_csv) {
  const std::vector<Scene> scenes = load_dataset(dataset_path);
  const EncoderParams params = load_params(params_path);
  const CategoryTree world = load_world(world_path);

  DiscoveryOutput discovery;
  discovery.model = load_cluster_model(model_path, params.geometry);
  discovery.labels = load_label_assignment(labels_path);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    discovery.kept.push_back(top_k_proposals(scenes[s],
                                             config.train.proposals_per_scene,
                                             config.train.nms_threshold));
    for (std::size_t j = 0; j < discovery.kept.back().size(); ++j) {
      discovery.points.push_back(embed(params, discovery.kept.back()[j].feature_fg));
      discovery.point_origin.emplace_back(static_cast<int>(s),
                                          static_cast<int>(j));
    }
  }
  if (discovery.model.assignment.size() != discovery.points.size())
    throw std::runtime_error(
        "cluster assignment does not cover the kept proposals; "
        "check proposals_per_scene and nms_threshold");

  const PipelineReport report =
      evaluate_discovery(scenes, world, discovery, config);
  save_report_json(out_json, report);
  save_report_csv(out_csv, report);
}

void cmd_ablate(const RunConfig& config, const std::string& dataset_path,
                const std::string& world_path, const std::string& suite_path,
                const std::string& out_csv) {
  const std::vector<Scene> scenes = load_dataset(dataset_path);
  const CategoryTree world = load_world(world_path);
  const std::vector<AblationVariant> suite =
      suite_path.empty() ? default_ablation_suite()
                         : load_ablation_suite(suite_path);
  save_ablation_csv(out_csv, run_ablation(world, scenes, config, suite));
}

namespace {

json report_to_json(const PipelineReport& r) {
  json j;
  j["purity"] = r.purity;
  json split = json::object();
  for (const auto& [tier, value] : r.purity_split) split[tier_name(tier)] = value;
  j["purity_split"] = std::move(split);
  j["map"] = r.eval.map;
  j["map50"] = r.eval.map50;
  j["map75"] = r.eval.map75;
  j["map_r"] = r.eval.map_rare;
  j["map_c"] = r.eval.map_common;
  j["map_f"] = r.eval.map_frequent;
  j["map_s"] = r.eval.map_small;
  j["map_m"] = r.eval.map_medium;
  j["map_l"] = r.eval.map_large;
  j["novel_clusters"] = r.eval.novel_clusters;
  j["k"] = r.k_used;
  j["detections"] = r.detections;
  j["novel_detections"] = r.novel_detections;
  return j;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_report_json(const std::string& path, const PipelineReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << report_to_json(report).dump(2) << '\n';
}

void save_report_csv(const std::string& path, const PipelineReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "purity,purity_r,purity_c,purity_f,mAP,mAP50,mAP75,mAP_r,mAP_c,mAP_f,"
         "mAP_s,mAP_m,mAP_l,novel_clusters,k\n";
  auto split = [&](Tier t) {
    const auto it = report.purity_split.find(t);
    return it == report.purity_split.end() ? std::string() : fmt(it->second);
  };
  out << fmt(report.purity) << ',' << split(Tier::kRare) << ','
      << split(Tier::kCommon) << ',' << split(Tier::kFrequent) << ','
      << fmt(report.eval.map) << ',' << fmt(report.eval.map50) << ','
      << fmt(report.eval.map75) << ',' << fmt(report.eval.map_rare) << ','
      << fmt(report.eval.map_common) << ',' << fmt(report.eval.map_frequent)
      << ',' << fmt(report.eval.map_small) << ',' << fmt(report.eval.map_medium)
      << ',' << fmt(report.eval.map_large) << ','
      << report.eval.novel_clusters << ',' << report.k_used << '\n';
}

void save_ablation_csv(const std::string& path,
                       const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "variant,key,value,mAP,mAP50,mAP75,mAP_r,mAP_c,mAP_f,mAP_s,mAP_m,"
         "mAP_l,purity,novel_clusters\n";
  for (const AblationRow& row : rows) {
    const EvalReport& e = row.report.eval;
    out << row.name << ',' << row.key << ',' << row.value << ',' << fmt(e.map)
        << ',' << fmt(e.map50) << ',' << fmt(e.map75) << ',' << fmt(e.map_rare)
        << ',' << fmt(e.map_common) << ',' << fmt(e.map_frequent) << ','
        << fmt(e.map_small) << ',' << fmt(e.map_medium) << ','
        << fmt(e.map_large) << ',' << fmt(row.report.purity) << ','
        << e.novel_clusters << '\n';
  }
}

}  // namespace longtail
