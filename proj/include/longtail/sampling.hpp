#pragma once

#include <cstdint>
#include <vector>

#include "longtail/scene.hpp"

namespace longtail {

// One triplet per kept proposal: the full-box view is the anchor, the
// foreground view the positive, the background view the negative.
struct MaskTriplet {
  int proposal = 0;  // index into the kept proposal list
};

// Anchor and positive are overlapping proposals from the same scene; the
// negative is a non-overlapping proposal from the same scene or any proposal
// from another scene in the batch. All three use foreground features.
struct ObjectTriplet {
  int anchor = 0;
  int positive = 0;
  int negative_scene = 0;     // index into the batch
  int negative_proposal = 0;  // index into that scene's kept list
};

// Parent/child proposal pair: the child box is (nearly) contained in the
// parent box and markedly smaller. Foreground features on both sides.
struct HierPair {
  int parent = 0;
  int child = 0;
};

// Exactly one MaskTriplet per proposal, in proposal order.
std::vector<MaskTriplet> sample_mask_triplets(
    const std::vector<Proposal>& proposals);

// For each anchor with at least one positive candidate (IoU >= tau_pos),
// draws one positive uniformly and n_neg negatives without replacement from
// the pool of same-scene non-overlapping proposals plus every proposal of the
// other scenes in the batch. Anchors without positives are skipped.
std::vector<ObjectTriplet> sample_object_triplets(
    const std::vector<std::vector<Proposal>>& batch_kept, int scene_index,
    int n_neg, double tau_pos, std::uint64_t seed);

// Every ordered (parent, child) pair where the child box is contained in the
// parent box by at least kappa_contain of its area and the child box area is
// at most sigma_hier times the parent box area. Enumeration order is parent
// index, then child index.
std::vector<HierPair> sample_hier_pairs(const std::vector<Proposal>& proposals,
                                        double sigma_hier,
                                        double kappa_contain);

}  // namespace longtail
