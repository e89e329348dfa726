#include "longtail/sampling.hpp"

#include <stdexcept>

#include "longtail/rng.hpp"

namespace longtail {

std::vector<MaskTriplet> sample_mask_triplets(
    const std::vector<Proposal>& proposals) {
  if (proposals.empty())
    throw std::invalid_argument("mask triplets need at least one proposal");
  std::vector<MaskTriplet> out(proposals.size());
  for (std::size_t j = 0; j < proposals.size(); ++j)
    out[j].proposal = static_cast<int>(j);
  return out;
}

std::vector<ObjectTriplet> sample_object_triplets(
    const std::vector<std::vector<Proposal>>& batch_kept, int scene_index,
    int n_neg, double tau_pos, std::uint64_t seed) {
  if (tau_pos <= 0.0 || tau_pos >= 1.0)
    throw std::invalid_argument("tau_pos must be in (0,1)");
  if (n_neg < 1) throw std::invalid_argument("n_neg must be >= 1");
  if (scene_index < 0 || scene_index >= static_cast<int>(batch_kept.size()))
    throw std::invalid_argument("scene_index out of range");

  const std::vector<Proposal>& proposals = batch_kept[scene_index];
  Rng rng(seed);
  std::vector<ObjectTriplet> out;

  for (std::size_t j = 0; j < proposals.size(); ++j) {
    std::vector<int> positives;
    std::vector<int> same_scene_negatives;
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      if (i == j) continue;
      const double overlap = iou(proposals[j].box, proposals[i].box);
      if (overlap >= tau_pos)
        positives.push_back(static_cast<int>(i));
      else if (overlap == 0.0)
        same_scene_negatives.push_back(static_cast<int>(i));
    }
    if (positives.empty()) continue;

    // Ordered negative pool: same scene first, then other scenes in batch order.
    std::vector<std::pair<int, int>> pool;
    for (int i : same_scene_negatives) pool.emplace_back(scene_index, i);
    for (std::size_t s = 0; s < batch_kept.size(); ++s) {
      if (static_cast<int>(s) == scene_index) continue;
      for (std::size_t i = 0; i < batch_kept[s].size(); ++i)
        pool.emplace_back(static_cast<int>(s), static_cast<int>(i));
    }
    if (pool.empty()) continue;

    const int positive = positives[rng.uniform_index(positives.size())];

    // Partial Fisher-Yates draw without replacement.
    const std::size_t draws = std::min<std::size_t>(n_neg, pool.size());
    for (std::size_t d = 0; d < draws; ++d) {
      const std::size_t pick = d + rng.uniform_index(pool.size() - d);
      std::swap(pool[d], pool[pick]);
      ObjectTriplet t;
      t.anchor = static_cast<int>(j);
      t.positive = positive;
      t.negative_scene = pool[d].first;
      t.negative_proposal = pool[d].second;
      out.push_back(t);
    }
  }
  return out;
}

std::vector<HierPair> sample_hier_pairs(const std::vector<Proposal>& proposals,
                                        double sigma_hier,
                                        double kappa_contain) {
  if (sigma_hier <= 0.0 || sigma_hier >= 1.0)
    throw std::invalid_argument("sigma_hier must be in (0,1)");
  if (kappa_contain <= 0.0 || kappa_contain > 1.0)
    throw std::invalid_argument("kappa_contain must be in (0,1]");

  std::vector<HierPair> out;
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    const double parent_area = proposals[p].box.area();
    for (std::size_t c = 0; c < proposals.size(); ++c) {
      if (c == p) continue;
      const BoundingBox& child = proposals[c].box;
      if (child.area() > sigma_hier * parent_area) continue;
      if (contained_fraction(child, proposals[p].box) < kappa_contain) continue;
      out.push_back(HierPair{static_cast<int>(p), static_cast<int>(c)});
    }
  }
  return out;
}

}  // namespace longtail
