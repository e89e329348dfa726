#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "longtail/geometry.hpp"
#include "longtail/sampling.hpp"
#include "longtail/scene.hpp"

namespace longtail {

// Fully-connected encoder (tanh hidden layers, linear output) followed by the
// exponential-map head. In Euclidean mode the head is the identity.
struct EncoderParams {
  std::vector<int> dims;  // {F, hidden..., d}
  Geometry geometry = Geometry::kPoincare;
  std::vector<double> values;  // per layer: weights row-major [out][in], then bias

  // Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
  static EncoderParams init(std::vector<int> dims, Geometry geometry,
                            std::uint64_t seed);

  std::size_t layer_count() const { return dims.size() - 1; }
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;
  static std::size_t value_count(const std::vector<int>& dims);
};

// Raw embedding in the configured geometry.
std::vector<double> embed(const EncoderParams& params,
                          std::span<const double> feature);

// Poincare-mode embedding as a validated ball point.
BallPoint encode(const EncoderParams& params, std::span<const double> feature);

struct TrainConfig {
  double margin = 0.2;       // alpha
  double beta = 0.2;         // weight of the mask loss
  double gamma = 0.2;        // weight of the object loss
  double hier_weight = 1.0;  // 0 removes the hierarchical term (ablations)
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 4;  // scenes per batch
  std::uint64_t seed = 0;
  Geometry geometry = Geometry::kPoincare;

  // Proposal selection and sampling rules.
  int proposals_per_scene = 50;
  double nms_threshold = 0.75;
  double tau_pos = 0.4;
  int n_neg = 3;
  double sigma_hier = 0.3;
  double kappa_contain = 0.9;

  // Encoder architecture.
  std::vector<int> hidden = {64, 16};
  int ball_dim = 2;

  void validate() const;
};

// A batch of scenes after proposal selection and triplet sampling.
struct SampledBatch {
  std::vector<std::vector<Proposal>> kept;
  std::vector<std::vector<MaskTriplet>> mask;
  std::vector<std::vector<ObjectTriplet>> object;
  std::vector<std::vector<HierPair>> hier;
};

SampledBatch sample_batch(std::span<const Scene> scenes,
                          const TrainConfig& config, std::uint64_t seed);

// Hinge around the triplet margin: max(0, margin + d_pos - d_neg).
double hinge_loss(double margin, double d_pos, double d_neg);

// Per-scene loss sums over the sampled triplets (plain sums, no batch
// normalization). `proposals` is the kept list the triplets index into.
double loss_mask(const std::vector<MaskTriplet>& triplets,
                 const std::vector<Proposal>& proposals,
                 const EncoderParams& params, double margin);
double loss_object(const std::vector<ObjectTriplet>& triplets,
                   const std::vector<std::vector<Proposal>>& batch_kept,
                   int scene_index, const EncoderParams& params, double margin);
double loss_hierarchical(const std::vector<HierPair>& pairs,
                         const std::vector<Proposal>& proposals,
                         const EncoderParams& params, double margin);

struct LossBreakdown {
  double mask = 0.0;    // mean over scenes of the raw mask-loss sum
  double object = 0.0;  // mean over scenes of the raw object-loss sum
  double hier = 0.0;    // mean over scenes, already scaled by hier_weight
  double total = 0.0;   // beta*mask + gamma*object + hier
  long degenerate_pairs = 0;  // coincident-pair gradients skipped
};

// Batch loss and, when `grad` is non-null, the full analytic parameter
// gradient (same length as params.values).
LossBreakdown total_loss(const SampledBatch& batch, const EncoderParams& params,
                         const TrainConfig& config,
                         std::vector<double>* grad = nullptr);

struct EpochTrace {
  int epoch = 0;
  double mask = 0.0;
  double object = 0.0;
  double hier = 0.0;
  double total = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochTrace> trace;
  long degenerate_pairs = 0;
};

// Adam on the total loss. Deterministic for a fixed config seed; throws if
// the loss stops being finite.
TrainResult train(std::span<const Scene> scenes, const TrainConfig& config);

void save_params(const std::string& path, const EncoderParams& params);
EncoderParams load_params(const std::string& path);
void save_loss_trace(const std::string& path,
                     const std::vector<EpochTrace>& trace);

}  // namespace longtail
