#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <set>

#include "doctest.h"
#include "longtail/rng.hpp"
#include "longtail/scene.hpp"
#include "oracles.hpp"

using namespace longtail;

namespace {

Proposal box_proposal(double x0, double y0, double x1, double y1,
                      double objectness) {
  Proposal p;
  p.box = BoundingBox{x0, y0, x1, y1};
  p.mask.resolution = 2;
  p.mask.bits = {1, 1, 1, 1};
  p.objectness = objectness;
  p.feature_full = {0.0};
  p.feature_fg = {0.0};
  p.feature_bg = {0.0};
  return p;
}

std::vector<Proposal> random_proposals(Rng& rng, int n) {
  std::vector<Proposal> out;
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 80.0);
    const double y = rng.uniform(0.0, 80.0);
    const double w = rng.uniform(2.0, 20.0);
    const double h = rng.uniform(2.0, 20.0);
    out.push_back(box_proposal(x, y, x + w, y + h, rng.uniform()));
  }
  return out;
}

}  // namespace

TEST_CASE("iou worked values") {
  const BoundingBox a{0, 0, 2, 2};
  CHECK(iou(a, a) == 1.0);
  const BoundingBox b{1, 1, 3, 3};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(iou(BoundingBox{0, 0, 1, 1}, BoundingBox{2, 2, 3, 3}) == 0.0);
}

TEST_CASE("iou symmetry and bounds") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto props = random_proposals(rng, 2);
    const double v = iou(props[0].box, props[1].box);
    CHECK(v == iou(props[1].box, props[0].box));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("nms keeps the higher-scored duplicate") {
  std::vector<Proposal> props{box_proposal(0, 0, 10, 10, 0.9),
                              box_proposal(0, 0, 10, 10, 0.8)};
  const auto kept = nms(props, 0.75);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].objectness == 0.9);
}

TEST_CASE("nms suppresses iou 0.8 at threshold 0.75") {
  // Equal 9x10 boxes shifted by one: intersection 80, union 100.
  std::vector<Proposal> props{box_proposal(0, 0, 9, 10, 0.9),
                              box_proposal(1, 0, 10, 10, 0.7)};
  REQUIRE(iou(props[0].box, props[1].box) == doctest::Approx(0.8));
  const auto kept = nms(props, 0.75);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].objectness == 0.9);
}

TEST_CASE("nms equals the brute-force reference") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + int(rng.uniform_index(64));
    const auto props = random_proposals(rng, n);
    const double threshold = rng.uniform(0.2, 0.9);
    const auto kept = nms(props, threshold);
    const auto ref = oracle::nms_reference(props, threshold);
    REQUIRE(kept.size() == ref.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      CHECK(kept[i].objectness == ref[i].objectness);
      CHECK(kept[i].box.x_min == ref[i].box.x_min);
      CHECK(kept[i].box.y_min == ref[i].box.y_min);
    }
    // Antichain: no two kept boxes overlap above the threshold.
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j)
        CHECK(iou(kept[i].box, kept[j].box) <= threshold);
    // Output is sorted by descending objectness.
    for (std::size_t i = 1; i < kept.size(); ++i)
      CHECK(kept[i - 1].objectness >= kept[i].objectness);
  }
}

TEST_CASE("nms on empty input") { CHECK(nms({}, 0.75).empty()); }

TEST_CASE("generate_world determinism and shape") {
  WorldConfig config;
  config.counts_per_depth = {5, 4};
  const CategoryTree a = generate_world(config, 7);
  const CategoryTree b = generate_world(config, 7);
  REQUIRE(a.nodes.size() == 25);  // 5 roots + 20 children
  REQUIRE(b.nodes.size() == 25);
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    CHECK(a.nodes[i].prototype == b.nodes[i].prototype);
    CHECK(a.nodes[i].weight == b.nodes[i].weight);
    CHECK(a.nodes[i].parent == b.nodes[i].parent);
  }
  CHECK(a.roots().size() == 5);
  CHECK(a.leaves().size() == 20);

  // Child prototypes stay within the perturbation radius of their parent.
  for (const auto& node : a.nodes) {
    if (node.parent == kNoParent) continue;
    double d2 = 0.0;
    for (std::size_t k = 0; k < node.prototype.size(); ++k) {
      const double d = node.prototype[k] - a.nodes[node.parent].prototype[k];
      d2 += d * d;
    }
    CHECK(std::sqrt(d2) <= config.child_proto_radius + 1e-12);
  }
}

TEST_CASE("generate_world zipf exponent zero means equal leaf weights") {
  WorldConfig config;
  config.counts_per_depth = {3, 3};
  config.zipf_exponent = 0.0;
  const CategoryTree tree = generate_world(config, 1);
  const auto leaves = tree.leaves();
  for (int leaf : leaves)
    CHECK(tree.nodes[leaf].weight ==
          doctest::Approx(1.0 / double(leaves.size())).epsilon(1e-12));
}

TEST_CASE("generate_world rejects an empty hierarchy") {
  WorldConfig config;
  config.counts_per_depth = {};
  CHECK_THROWS_AS(generate_world(config, 0), std::invalid_argument);
  config.counts_per_depth = {0};
  CHECK_THROWS_AS(generate_world(config, 0), std::invalid_argument);
}

TEST_CASE("generate_scene determinism") {
  WorldConfig wc;
  const CategoryTree world = generate_world(wc, 3);
  SceneConfig sc;
  const Scene a = generate_scene(world, sc, 11, 0);
  const Scene b = generate_scene(world, sc, 11, 0);
  CHECK(scene_to_json_line(a) == scene_to_json_line(b));
  const Scene c = generate_scene(world, sc, 12, 0);
  CHECK(scene_to_json_line(a) != scene_to_json_line(c));
}

TEST_CASE("generate_scene with zero jitter and no distractors echoes GT boxes") {
  WorldConfig wc;
  const CategoryTree world = generate_world(wc, 3);
  SceneConfig sc;
  sc.sigma_jitter = 0.0;
  sc.distractors = 0;
  const Scene scene = generate_scene(world, sc, 21, 0);
  REQUIRE(!scene.proposals.empty());
  for (const auto& prop : scene.proposals) {
    bool matches_gt = false;
    for (const auto& inst : scene.instances)
      if (prop.box.x_min == inst.box.x_min && prop.box.y_min == inst.box.y_min &&
          prop.box.x_max == inst.box.x_max && prop.box.y_max == inst.box.y_max)
        matches_gt = true;
    CHECK(matches_gt);
  }
}

TEST_CASE("child instances are contained with bounded area over many seeds") {
  WorldConfig wc;
  wc.counts_per_depth = {4, 3};
  const CategoryTree world = generate_world(wc, 17);
  SceneConfig sc;
  for (int seed = 0; seed < 1000; ++seed) {
    const Scene scene = generate_scene(world, sc, seed, seed);
    for (const auto& inst : scene.instances) {
      if (inst.parent_instance == kNoParent) continue;
      const auto& parent = scene.instances[inst.parent_instance];
      CHECK(contained_fraction(inst.box, parent.box) ==
            doctest::Approx(1.0).epsilon(1e-12));
      CHECK(inst.box.area() <= sc.child_area_max * parent.box.area() + 1e-9);
    }
  }
}

TEST_CASE("GT-derived proposals outrank distractors in expectation") {
  WorldConfig wc;
  const CategoryTree world = generate_world(wc, 8);
  SceneConfig sc;
  double gt_sum = 0.0, d_sum = 0.0;
  long gt_n = 0, d_n = 0;
  for (int seed = 0; seed < 50; ++seed) {
    const Scene scene = generate_scene(world, sc, 700 + seed, seed);
    const std::size_t n_gt =
        scene.instances.size() * std::size_t(sc.proposals_per_instance);
    for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
      if (i < n_gt) {
        gt_sum += scene.proposals[i].objectness;
        ++gt_n;
      } else {
        d_sum += scene.proposals[i].objectness;
        ++d_n;
      }
    }
  }
  CHECK(gt_sum / gt_n > d_sum / d_n);
}

TEST_CASE("top_k_proposals") {
  WorldConfig wc;
  const CategoryTree world = generate_world(wc, 3);
  SceneConfig sc;
  sc.parents_per_scene = 6;
  sc.distractors = 12;
  const Scene scene = generate_scene(world, sc, 31, 0);

  const auto survivors = nms(scene.proposals, 0.75);
  const auto all = top_k_proposals(scene, int(survivors.size()) + 100, 0.75);
  CHECK(all.size() == survivors.size());

  const auto one = top_k_proposals(scene, 1, 0.75);
  REQUIRE(one.size() == 1);
  CHECK(one[0].objectness == survivors[0].objectness);

  const auto k20 = top_k_proposals(scene, 20, 0.75);
  const auto k50 = top_k_proposals(scene, 50, 0.75);
  REQUIRE(k20.size() <= k50.size());
  for (std::size_t i = 0; i < k20.size(); ++i) {
    CHECK(k20[i].objectness == k50[i].objectness);
    CHECK(k20[i].box.x_min == k50[i].box.x_min);
  }

  CHECK_THROWS_AS(top_k_proposals(scene, 0, 0.75), std::invalid_argument);
}

TEST_CASE("mask RLE round trip") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    MaskGrid mask;
    mask.resolution = 1 + int(rng.uniform_index(16));
    mask.bits.resize(std::size_t(mask.resolution) * mask.resolution);
    for (auto& b : mask.bits) b = rng.uniform() < 0.4 ? 1 : 0;
    const MaskGrid round = mask_rle_decode(mask_rle_encode(mask));
    CHECK(round.resolution == mask.resolution);
    CHECK(round.bits == mask.bits);
  }
  CHECK_THROWS_AS(mask_rle_decode({1, 2}), std::invalid_argument);
}

TEST_CASE("scene JSONL round trip") {
  WorldConfig wc;
  const CategoryTree world = generate_world(wc, 5);
  SceneConfig sc;
  const Scene scene = generate_scene(world, sc, 41, 3);
  const Scene round = scene_from_json_line(scene_to_json_line(scene));
  CHECK(round.id == scene.id);
  CHECK(round.canvas_h == scene.canvas_h);
  REQUIRE(round.instances.size() == scene.instances.size());
  REQUIRE(round.proposals.size() == scene.proposals.size());
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    CHECK(round.instances[i].category == scene.instances[i].category);
    CHECK(round.instances[i].parent_instance ==
          scene.instances[i].parent_instance);
    CHECK(round.instances[i].box.x_max == scene.instances[i].box.x_max);
    CHECK(round.instances[i].mask.bits == scene.instances[i].mask.bits);
  }
  for (std::size_t i = 0; i < scene.proposals.size(); ++i) {
    CHECK(round.proposals[i].objectness == scene.proposals[i].objectness);
    CHECK(round.proposals[i].feature_full == scene.proposals[i].feature_full);
    CHECK(round.proposals[i].feature_fg == scene.proposals[i].feature_fg);
    CHECK(round.proposals[i].feature_bg == scene.proposals[i].feature_bg);
  }
  // Re-serialization is byte identical.
  CHECK(scene_to_json_line(round) == scene_to_json_line(scene));
}

TEST_CASE("world JSON round trip") {
  WorldConfig wc;
  wc.counts_per_depth = {3, 2};
  const CategoryTree world = generate_world(wc, 9);
  const std::string path = "/tmp/longtail_test_world.json";
  save_world(path, world);
  const CategoryTree round = load_world(path);
  REQUIRE(round.nodes.size() == world.nodes.size());
  for (std::size_t i = 0; i < world.nodes.size(); ++i) {
    CHECK(round.nodes[i].prototype == world.nodes[i].prototype);
    CHECK(round.nodes[i].weight == world.nodes[i].weight);
  }
  CHECK(round.tiers == world.tiers);
  CHECK(round.feature_dim == world.feature_dim);
}

TEST_CASE("proposal provenance matching on exact boxes") {
  WorldConfig wc;
  const CategoryTree world = generate_world(wc, 3);
  SceneConfig sc;
  sc.sigma_jitter = 0.0;
  sc.distractors = 0;
  const Scene scene = generate_scene(world, sc, 51, 0);
  const auto matches =
      match_proposals_to_instances(scene, scene.proposals, 0.5);
  REQUIRE(matches.size() == scene.proposals.size());
  for (std::size_t i = 0; i < matches.size(); ++i) {
    REQUIRE(matches[i] >= 0);
    const auto& inst = scene.instances[matches[i]];
    CHECK(iou(scene.proposals[i].box, inst.box) == 1.0);
  }
}
