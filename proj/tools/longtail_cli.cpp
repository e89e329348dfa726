#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "longtail/pipeline.hpp"

namespace {

std::string with_extension(const std::string& path, const char* ext) {
  std::filesystem::path p(path);
  p.replace_extension(ext);
  return p.string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic long-tail category discovery pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON run configuration file");

  // Overrides applied on top of the config file when present.
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "root seed");
  int k = 0;
  auto* k_opt = app.add_option("--k", k, "number of clusters");
  std::vector<int> k_grid;
  auto* k_grid_opt =
      app.add_option("--k-grid", k_grid, "elbow grid, e.g. 6,8,10")
          ->delimiter(',');
  std::string geometry;
  auto* geometry_opt = app.add_option("--geometry", geometry,
                                      "poincare or euclidean");
  int epochs = 0;
  auto* epochs_opt = app.add_option("--epochs", epochs, "training epochs");
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
  auto* alpha_opt = app.add_option("--alpha", alpha, "triplet margin");
  auto* beta_opt = app.add_option("--beta", beta, "mask loss weight");
  auto* gamma_opt = app.add_option("--gamma", gamma, "object loss weight");
  int rp = 0;
  auto* rp_opt = app.add_option("--proposals-per-scene", rp,
                                "kept proposals per scene");

  auto* gen = app.add_subcommand("gen", "generate a scene dataset + world sidecar");
  std::string gen_out;
  gen->add_option("--out", gen_out, "dataset JSONL path")->required();

  auto* train_cmd = app.add_subcommand("train", "train the encoder");
  std::string train_data, train_out, train_trace;
  train_cmd->add_option("--data", train_data, "dataset JSONL")->required();
  train_cmd->add_option("--out", train_out, "encoder params JSON")->required();
  train_cmd->add_option("--trace", train_trace, "loss trace CSV");

  auto* cluster_cmd = app.add_subcommand("cluster", "cluster embedded proposals");
  std::string cl_data, cl_params, cl_world, cl_out, cl_labels;
  cluster_cmd->add_option("--data", cl_data, "dataset JSONL")->required();
  cluster_cmd->add_option("--params", cl_params, "encoder params JSON")->required();
  cluster_cmd->add_option("--world", cl_world, "world sidecar JSON")->required();
  cluster_cmd->add_option("--out", cl_out, "cluster model JSON")->required();
  cluster_cmd->add_option("--labels-out", cl_labels, "label assignment JSON");

  auto* eval_cmd = app.add_subcommand("eval", "purity + mAP report");
  std::string ev_data, ev_params, ev_world, ev_model, ev_labels, ev_out, ev_csv;
  eval_cmd->add_option("--data", ev_data, "dataset JSONL")->required();
  eval_cmd->add_option("--params", ev_params, "encoder params JSON")->required();
  eval_cmd->add_option("--world", ev_world, "world sidecar JSON")->required();
  eval_cmd->add_option("--model", ev_model, "cluster model JSON")->required();
  eval_cmd->add_option("--labels", ev_labels, "label assignment JSON")->required();
  eval_cmd->add_option("--out", ev_out, "report JSON")->required();
  eval_cmd->add_option("--csv", ev_csv, "report CSV");

  auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation table");
  std::string ab_data, ab_world, ab_suite, ab_out;
  ablate_cmd->add_option("--data", ab_data, "dataset JSONL")->required();
  ablate_cmd->add_option("--world", ab_world, "world sidecar JSON")->required();
  ablate_cmd->add_option("--suite", ab_suite,
                         "ablation suite JSON (default: standard grid)");
  ablate_cmd->add_option("--out", ab_out, "ablation table CSV")->required();

  for (auto* sub : {gen, train_cmd, cluster_cmd, eval_cmd, ablate_cmd})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    longtail::RunConfig config;
    if (!config_path.empty()) config = longtail::load_run_config(config_path);
    if (*seed_opt) config.seed = seed;
    if (*k_opt) config.cluster.k = k;
    if (*k_grid_opt) config.cluster.k_grid = k_grid;
    if (*geometry_opt)
      config.train.geometry = longtail::geometry_from_name(geometry);
    if (*epochs_opt) config.train.epochs = epochs;
    if (*alpha_opt) config.train.margin = alpha;
    if (*beta_opt) config.train.beta = beta;
    if (*gamma_opt) config.train.gamma = gamma;
    if (*rp_opt) config.train.proposals_per_scene = rp;

    if (app.got_subcommand(gen)) {
      longtail::cmd_gen(config, gen_out);
      std::cout << "wrote " << gen_out << " and "
                << longtail::world_sidecar_path(gen_out) << "\n";
    } else if (app.got_subcommand(train_cmd)) {
      if (train_trace.empty()) train_trace = with_extension(train_out, ".loss.csv");
      longtail::cmd_train(config, train_data, train_out, train_trace);
      std::cout << "wrote " << train_out << " and " << train_trace << "\n";
    } else if (app.got_subcommand(cluster_cmd)) {
      if (cl_labels.empty()) cl_labels = with_extension(cl_out, ".labels.json");
      longtail::cmd_cluster(config, cl_data, cl_params, cl_world, cl_out,
                            cl_labels);
      std::cout << "wrote " << cl_out << " and " << cl_labels << "\n";
    } else if (app.got_subcommand(eval_cmd)) {
      if (ev_csv.empty()) ev_csv = with_extension(ev_out, ".csv");
      longtail::cmd_eval(config, ev_data, ev_params, ev_world, ev_model,
                         ev_labels, ev_out, ev_csv);
      std::cout << "wrote " << ev_out << " and " << ev_csv << "\n";
    } else if (app.got_subcommand(ablate_cmd)) {
      longtail::cmd_ablate(config, ab_data, ab_world, ab_suite, ab_out);
      std::cout << "wrote " << ab_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
