#include "longtail/embedder.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "longtail/rng.hpp"

namespace longtail {

std::size_t EncoderParams::value_count(const std::vector<int>& dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    n += std::size_t(dims[l + 1]) * dims[l] + dims[l + 1];
  return n;
}

std::size_t EncoderParams::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l)
    off += std::size_t(dims[l + 1]) * dims[l] + dims[l + 1];
  return off;
}

std::size_t EncoderParams::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + std::size_t(dims[layer + 1]) * dims[layer];
}

EncoderParams EncoderParams::init(std::vector<int> dims, Geometry geometry,
                                  std::uint64_t seed) {
  if (dims.size() < 2)
    throw std::invalid_argument("encoder needs at least input and output dims");
  for (int d : dims)
    if (d < 1) throw std::invalid_argument("encoder dims must be >= 1");
  EncoderParams p;
  p.dims = std::move(dims);
  p.geometry = geometry;
  p.values.resize(value_count(p.dims));
  Rng rng(seed);
  std::size_t idx = 0;
  for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) {
    const double bound = 1.0 / std::sqrt(double(p.dims[l]));
    const std::size_t count = std::size_t(p.dims[l + 1]) * p.dims[l] + p.dims[l + 1];
    for (std::size_t i = 0; i < count; ++i)
      p.values[idx++] = rng.uniform(-bound, bound);
  }
  return p;
}

namespace {

struct ForwardCache {
  // acts[0] is the input; acts[i] the post-activation output of layer i-1.
  // The last entry is the linear tangent output v.
  std::vector<std::vector<double>> acts;
  std::vector<double> out;  // embedding after the head
  double v_norm = 0.0;
  bool clipped = false;
};

void forward(const EncoderParams& p, std::span<const double> x,
             ForwardCache& cache) {
  if (static_cast<int>(x.size()) != p.dims[0])
    throw std::invalid_argument("feature dimension mismatch");
  const std::size_t n_layers = p.layer_count();
  cache.acts.assign(n_layers + 1, {});
  cache.acts[0].assign(x.begin(), x.end());
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int in_dim = p.dims[l];
    const int out_dim = p.dims[l + 1];
    const double* w = p.values.data() + p.weight_offset(l);
    const double* b = p.values.data() + p.bias_offset(l);
    const std::vector<double>& in = cache.acts[l];
    std::vector<double>& out = cache.acts[l + 1];
    out.resize(out_dim);
    for (int i = 0; i < out_dim; ++i) {
      double s = b[i];
      const double* wrow = w + std::size_t(i) * in_dim;
      for (int j = 0; j < in_dim; ++j) s += wrow[j] * in[j];
      out[i] = (l + 1 < n_layers) ? std::tanh(s) : s;
    }
  }

  const std::vector<double>& v = cache.acts[n_layers];
  if (p.geometry == Geometry::kEuclidean) {
    cache.out = v;
    cache.clipped = false;
    cache.v_norm = 0.0;
    return;
  }
  double n2 = 0.0;
  for (double c : v) n2 += c * c;
  const double n = std::sqrt(n2);
  cache.v_norm = n;
  const double scale = n < 1e-8 ? 1.0 - n2 / 3.0 : std::tanh(n) / n;
  cache.out.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) cache.out[i] = scale * v[i];
  const double limit = 1.0 - kBallEpsilon;
  const double out_norm = n < 1e-8 ? scale * n : std::tanh(n);
  cache.clipped = out_norm > limit;
  if (cache.clipped) {
    const double rescale = limit / out_norm;
    for (double& c : cache.out) c *= rescale;
  }
}

// Accumulates d(loss)/d(params) for one embedding given the upstream
// d(loss)/d(embedding).
void backward(const EncoderParams& p, const ForwardCache& cache,
              std::span<const double> upstream, std::span<double> grad) {
  const std::size_t n_layers = p.layer_count();
  const std::vector<double>& v = cache.acts[n_layers];
  std::vector<double> dv(v.size());

  if (p.geometry == Geometry::kEuclidean) {
    std::copy(upstream.begin(), upstream.end(), dv.begin());
  } else {
    const double n = cache.v_norm;
    if (cache.clipped) {
      // Output depends only on the direction of v: p = r * v/|v|.
      const double r = 1.0 - kBallEpsilon;
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * upstream[i];
      for (std::size_t i = 0; i < v.size(); ++i)
        dv[i] = (r / n) * (upstream[i] - (dot / (n * n)) * v[i]);
    } else if (n < 1e-8) {
      std::copy(upstream.begin(), upstream.end(), dv.begin());
    } else {
      const double t = std::tanh(n);
      const double g = t / n;
      const double gp = ((1.0 - t * t) * n - t) / (n * n);
      double dot = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * upstream[i];
      for (std::size_t i = 0; i < v.size(); ++i)
        dv[i] = g * upstream[i] + (gp / n) * dot * v[i];
    }
  }

  std::vector<double> delta = std::move(dv);
  for (std::size_t li = n_layers; li-- > 0;) {
    const int in_dim = p.dims[li];
    const int out_dim = p.dims[li + 1];
    if (li + 1 < n_layers) {
      // delta currently holds d/d(activation); fold in tanh'.
      const std::vector<double>& a = cache.acts[li + 1];
      for (int i = 0; i < out_dim; ++i) delta[i] *= 1.0 - a[i] * a[i];
    }
    const std::vector<double>& in = cache.acts[li];
    double* gw = grad.data() + p.weight_offset(li);
    double* gb = grad.data() + p.bias_offset(li);
    const double* w = p.values.data() + p.weight_offset(li);
    std::vector<double> din(in_dim, 0.0);
    for (int i = 0; i < out_dim; ++i) {
      const double d = delta[i];
      gb[i] += d;
      double* gwrow = gw + std::size_t(i) * in_dim;
      const double* wrow = w + std::size_t(i) * in_dim;
      for (int j = 0; j < in_dim; ++j) {
        gwrow[j] += d * in[j];
        din[j] += d * wrow[j];
      }
    }
    delta = std::move(din);
  }
}

bool nearly_coincident(std::span<const double> a, std::span<const double> b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::abs(a[i] - b[i]) > 1e-12) return false;
  return true;
}

}  // namespace

std::vector<double> embed(const EncoderParams& params,
                          std::span<const double> feature) {
  ForwardCache cache;
  forward(params, feature, cache);
  return std::move(cache.out);
}

BallPoint encode(const EncoderParams& params, std::span<const double> feature) {
  if (params.geometry != Geometry::kPoincare)
    throw std::invalid_argument("encode requires Poincare geometry");
  return project_to_ball(embed(params, feature));
}

void TrainConfig::validate() const {
  if (margin <= 0.0) throw std::invalid_argument("margin must be > 0");
  if (beta < 0.0 || gamma < 0.0 || hier_weight < 0.0)
    throw std::invalid_argument("loss weights must be >= 0");
  if (learning_rate < 0.0)
    throw std::invalid_argument("learning rate must be >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (proposals_per_scene < 1)
    throw std::invalid_argument("proposals_per_scene must be >= 1");
  if (ball_dim < 1) throw std::invalid_argument("ball_dim must be >= 1");
}

SampledBatch sample_batch(std::span<const Scene> scenes,
                          const TrainConfig& config, std::uint64_t seed) {
  SampledBatch batch;
  batch.kept.reserve(scenes.size());
  for (const Scene& s : scenes)
    batch.kept.push_back(
        top_k_proposals(s, config.proposals_per_scene, config.nms_threshold));
  batch.mask.resize(scenes.size());
  batch.object.resize(scenes.size());
  batch.hier.resize(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (batch.kept[i].empty()) continue;
    batch.mask[i] = sample_mask_triplets(batch.kept[i]);
    batch.object[i] = sample_object_triplets(batch.kept, static_cast<int>(i),
                                             config.n_neg, config.tau_pos,
                                             derive_seed(seed, "object", i));
    batch.hier[i] = sample_hier_pairs(batch.kept[i], config.sigma_hier,
                                      config.kappa_contain);
  }
  return batch;
}

double hinge_loss(double margin, double d_pos, double d_neg) {
  return std::max(0.0, margin + d_pos - d_neg);
}

namespace {

constexpr int kViewFull = 0;
constexpr int kViewFg = 1;
constexpr int kViewBg = 2;

std::span<const double> view_feature(const Proposal& p, int view) {
  switch (view) {
    case kViewFull: return p.feature_full;
    case kViewFg: return p.feature_fg;
    default: return p.feature_bg;
  }
}

}  // namespace

double loss_mask(const std::vector<MaskTriplet>& triplets,
                 const std::vector<Proposal>& proposals,
                 const EncoderParams& params, double margin) {
  double sum = 0.0;
  for (const MaskTriplet& t : triplets) {
    const Proposal& p = proposals.at(t.proposal);
    const auto z_full = embed(params, p.feature_full);
    const auto z_fg = embed(params, p.feature_fg);
    const auto z_bg = embed(params, p.feature_bg);
    const double d_pos = metric_distance(params.geometry, z_full, z_fg);
    const double d_neg = metric_distance(params.geometry, z_full, z_bg);
    sum += hinge_loss(margin, d_pos, d_neg);
  }
  return sum;
}

double loss_object(const std::vector<ObjectTriplet>& triplets,
                   const std::vector<std::vector<Proposal>>& batch_kept,
                   int scene_index, const EncoderParams& params, double margin) {
  const std::vector<Proposal>& proposals = batch_kept.at(scene_index);
  double sum = 0.0;
  for (const ObjectTriplet& t : triplets) {
    const auto z_anchor = embed(params, proposals.at(t.anchor).feature_fg);
    const auto z_pos = embed(params, proposals.at(t.positive).feature_fg);
    const auto z_neg = embed(
        params,
        batch_kept.at(t.negative_scene).at(t.negative_proposal).feature_fg);
    const double d_pos = metric_distance(params.geometry, z_anchor, z_pos);
    const double d_neg = metric_distance(params.geometry, z_anchor, z_neg);
    sum += hinge_loss(margin, d_pos, d_neg);
  }
  return sum;
}

double loss_hierarchical(const std::vector<HierPair>& pairs,
                         const std::vector<Proposal>& proposals,
                         const EncoderParams& params, double margin) {
  double sum = 0.0;
  for (const HierPair& pr : pairs) {
    const auto z_parent = embed(params, proposals.at(pr.parent).feature_fg);
    const auto z_child = embed(params, proposals.at(pr.child).feature_fg);
    const std::vector<double> origin(z_parent.size(), 0.0);
    const double d_parent = metric_distance(params.geometry, z_parent, origin);
    const double d_child = metric_distance(params.geometry, z_child, origin);
    sum += hinge_loss(margin, d_parent, d_child);
  }
  return sum;
}

LossBreakdown total_loss(const SampledBatch& batch, const EncoderParams& params,
                         const TrainConfig& config, std::vector<double>* grad) {
  LossBreakdown out;
  const std::size_t n_scenes = batch.kept.size();
  if (n_scenes == 0) return out;
  if (grad) grad->assign(params.values.size(), 0.0);

  // Forward every view of every kept proposal once; gradients accumulate on
  // the embeddings first and flow back through the encoder at the end.
  std::vector<std::vector<std::array<ForwardCache, 3>>> caches(n_scenes);
  std::vector<std::vector<std::array<std::vector<double>, 3>>> upstream;
  if (grad) upstream.resize(n_scenes);
  bool poisoned = false;
  for (std::size_t s = 0; s < n_scenes; ++s) {
    caches[s].resize(batch.kept[s].size());
    if (grad) upstream[s].resize(batch.kept[s].size());
    for (std::size_t j = 0; j < batch.kept[s].size(); ++j)
      for (int view = 0; view < 3; ++view) {
        forward(params, view_feature(batch.kept[s][j], view), caches[s][j][view]);
        for (double c : caches[s][j][view].out)
          if (!std::isfinite(c)) poisoned = true;
      }
  }
  if (poisoned) {
    // The clamps downstream would mask NaN embeddings; surface them instead.
    out.total = std::numeric_limits<double>::quiet_NaN();
    out.mask = out.object = out.hier = out.total;
    return out;
  }

  const double inv_scenes = 1.0 / static_cast<double>(n_scenes);
  const Geometry geom = params.geometry;
  const int dim = params.dims.back();
  const std::vector<double> origin(dim, 0.0);

  auto upstream_of = [&](std::size_t s, std::size_t j, int view) -> std::vector<double>& {
    std::vector<double>& u = upstream[s][j][view];
    if (u.empty()) u.assign(dim, 0.0);
    return u;
  };

  // Adds weight * grad d(a,b) for embeddings a=(s1,j1,v1), b=(s2,j2,v2).
  auto add_pair_grad = [&](double weight, std::size_t s1, std::size_t j1,
                           int v1, std::size_t s2, std::size_t j2, int v2) {
    const auto& za = caches[s1][j1][v1].out;
    const auto& zb = caches[s2][j2][v2].out;
    if (nearly_coincident(za, zb)) {
      ++out.degenerate_pairs;
      return;
    }
    const DistanceGrad dg = metric_distance_grad(geom, za, zb);
    auto& ua = upstream_of(s1, j1, v1);
    auto& ub = upstream_of(s2, j2, v2);
    for (int k = 0; k < dim; ++k) {
      ua[k] += weight * dg.wrt_x[k];
      ub[k] += weight * dg.wrt_y[k];
    }
  };

  // Same, against the fixed origin (hierarchical term).
  auto add_origin_grad = [&](double weight, std::size_t s, std::size_t j, int v) {
    const auto& z = caches[s][j][v].out;
    if (nearly_coincident(z, origin)) {
      ++out.degenerate_pairs;
      return;
    }
    const DistanceGrad dg = metric_distance_grad(geom, z, origin);
    auto& u = upstream_of(s, j, v);
    for (int k = 0; k < dim; ++k) u[k] += weight * dg.wrt_x[k];
  };

  double mask_sum = 0.0, object_sum = 0.0, hier_sum = 0.0;
  for (std::size_t s = 0; s < n_scenes; ++s) {
    double mask_s = 0.0;
    for (const MaskTriplet& t : batch.mask[s]) {
      const std::size_t j = t.proposal;
      const double d_pos =
          metric_distance(geom, caches[s][j][kViewFull].out, caches[s][j][kViewFg].out);
      const double d_neg =
          metric_distance(geom, caches[s][j][kViewFull].out, caches[s][j][kViewBg].out);
      const double term = hinge_loss(config.margin, d_pos, d_neg);
      mask_s += term;
      if (grad && term > 0.0 && config.beta > 0.0) {
        const double w = config.beta * inv_scenes;
        add_pair_grad(w, s, j, kViewFull, s, j, kViewFg);
        add_pair_grad(-w, s, j, kViewFull, s, j, kViewBg);
      }
    }

    double object_s = 0.0;
    for (const ObjectTriplet& t : batch.object[s]) {
      const std::size_t a = t.anchor;
      const std::size_t p = t.positive;
      const std::size_t ns = t.negative_scene;
      const std::size_t np = t.negative_proposal;
      const double d_pos =
          metric_distance(geom, caches[s][a][kViewFg].out, caches[s][p][kViewFg].out);
      const double d_neg =
          metric_distance(geom, caches[s][a][kViewFg].out, caches[ns][np][kViewFg].out);
      const double term = hinge_loss(config.margin, d_pos, d_neg);
      object_s += term;
      if (grad && term > 0.0 && config.gamma > 0.0) {
        const double w = config.gamma * inv_scenes;
        add_pair_grad(w, s, a, kViewFg, s, p, kViewFg);
        add_pair_grad(-w, s, a, kViewFg, ns, np, kViewFg);
      }
    }

    double hier_s = 0.0;
    for (const HierPair& pr : batch.hier[s]) {
      const std::size_t pa = pr.parent;
      const std::size_t ch = pr.child;
      const double d_parent = metric_distance(geom, caches[s][pa][kViewFg].out, origin);
      const double d_child = metric_distance(geom, caches[s][ch][kViewFg].out, origin);
      const double term = hinge_loss(config.margin, d_parent, d_child);
      hier_s += term;
      if (grad && term > 0.0 && config.hier_weight > 0.0) {
        const double w = config.hier_weight * inv_scenes;
        add_origin_grad(w, s, pa, kViewFg);
        add_origin_grad(-w, s, ch, kViewFg);
      }
    }

    mask_sum += mask_s;
    object_sum += object_s;
    hier_sum += hier_s;
  }

  if (grad) {
    for (std::size_t s = 0; s < n_scenes; ++s)
      for (std::size_t j = 0; j < batch.kept[s].size(); ++j)
        for (int view = 0; view < 3; ++view)
          if (!upstream[s][j][view].empty())
            backward(params, caches[s][j][view], upstream[s][j][view], *grad);
  }

  out.mask = mask_sum * inv_scenes;
  out.object = object_sum * inv_scenes;
  out.hier = config.hier_weight * hier_sum * inv_scenes;
  out.total = config.beta * out.mask + config.gamma * out.object + out.hier;
  return out;
}

TrainResult train(std::span<const Scene> scenes, const TrainConfig& config) {
  config.validate();
  if (scenes.empty()) throw std::invalid_argument("train needs >= 1 scene");
  int feature_dim = -1;
  for (const Scene& s : scenes)
    if (!s.proposals.empty()) {
      feature_dim = static_cast<int>(s.proposals.front().feature_fg.size());
      break;
    }
  if (feature_dim < 1)
    throw std::invalid_argument("train needs scenes with proposals");

  std::vector<int> dims;
  dims.push_back(feature_dim);
  for (int h : config.hidden) dims.push_back(h);
  dims.push_back(config.ball_dim);

  TrainResult result;
  result.params = EncoderParams::init(dims, config.geometry,
                                      derive_seed(config.seed, "init"));

  std::vector<double> m(result.params.values.size(), 0.0);
  std::vector<double> v(result.params.values.size(), 0.0);
  std::vector<double> grad;
  long step = 0;
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, "shuffle", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    double mask_sum = 0.0, object_sum = 0.0, hier_sum = 0.0;
    int n_batches = 0;
    const std::uint64_t epoch_seed = derive_seed(config.seed, "epoch", epoch);
    for (std::size_t start = 0; start < order.size();
         start += config.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + std::size_t(config.batch_size));
      std::vector<Scene> batch_scenes;
      batch_scenes.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        batch_scenes.push_back(scenes[order[i]]);

      const SampledBatch batch = sample_batch(
          batch_scenes, config, derive_seed(epoch_seed, "batch", n_batches));
      const LossBreakdown loss =
          total_loss(batch, result.params, config, &grad);
      if (!std::isfinite(loss.total))
        throw std::runtime_error(
            "non-finite loss at epoch " + std::to_string(epoch) + " batch " +
            std::to_string(n_batches) + "; check step size and clipping");
      result.degenerate_pairs += loss.degenerate_pairs;

      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, double(step));
      const double bc2 = 1.0 - std::pow(kBeta2, double(step));
      for (std::size_t i = 0; i < grad.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        result.params.values[i] -= config.learning_rate * (m[i] / bc1) /
                                   (std::sqrt(v[i] / bc2) + kAdamEps);
      }

      mask_sum += loss.mask;
      object_sum += loss.object;
      hier_sum += loss.hier;
      ++n_batches;
    }

    EpochTrace row;
    row.epoch = epoch;
    row.mask = mask_sum / n_batches;
    row.object = object_sum / n_batches;
    row.hier = hier_sum / n_batches;
    row.total = config.beta * row.mask + config.gamma * row.object + row.hier;
    result.trace.push_back(row);
  }
  return result;
}

void save_params(const std::string& path, const EncoderParams& params) {
  nlohmann::json j;
  j["dims"] = params.dims;
  j["geometry"] = geometry_name(params.geometry);
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t l = 0; l + 1 < params.dims.size(); ++l) {
    const int in_dim = params.dims[l];
    const int out_dim = params.dims[l + 1];
    nlohmann::json w = nlohmann::json::array();
    const double* wd = params.values.data() + params.weight_offset(l);
    for (int i = 0; i < out_dim; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int jj = 0; jj < in_dim; ++jj)
        row.push_back(wd[std::size_t(i) * in_dim + jj]);
      w.push_back(std::move(row));
    }
    nlohmann::json layer;
    layer["w"] = std::move(w);
    const double* bd = params.values.data() + params.bias_offset(l);
    layer["b"] = std::vector<double>(bd, bd + out_dim);
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

EncoderParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open params file: " + path);
  nlohmann::json j;
  in >> j;
  EncoderParams p;
  p.dims = j.at("dims").get<std::vector<int>>();
  p.geometry = geometry_from_name(j.at("geometry").get<std::string>());
  p.values.resize(EncoderParams::value_count(p.dims));
  const auto& layers = j.at("layers");
  if (layers.size() + 1 != p.dims.size())
    throw std::runtime_error("params file layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const int in_dim = p.dims[l];
    const int out_dim = p.dims[l + 1];
    const auto& w = layers[l].at("w");
    const auto b = layers[l].at("b").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != out_dim ||
        static_cast<int>(b.size()) != out_dim)
      throw std::runtime_error("params file layer shape mismatch");
    double* wd = p.values.data() + p.weight_offset(l);
    for (int i = 0; i < out_dim; ++i) {
      const auto row = w[i].get<std::vector<double>>();
      if (static_cast<int>(row.size()) != in_dim)
        throw std::runtime_error("params file weight row mismatch");
      std::copy(row.begin(), row.end(), wd + std::size_t(i) * in_dim);
    }
    double* bd = p.values.data() + p.bias_offset(l);
    std::copy(b.begin(), b.end(), bd);
  }
  return p;
}

void save_loss_trace(const std::string& path,
                     const std::vector<EpochTrace>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "epoch,L_mask,L_object,L_hier,total\n";
  char buf[256];
  for (const EpochTrace& row : trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", row.epoch,
                  row.mask, row.object, row.hier, row.total);
    out << buf;
  }
}

}  // namespace longtail
