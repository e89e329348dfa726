#include "longtail/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace longtail {

namespace {

double squared_norm(std::span<const double> v) {
  double s = 0.0;
  for (double c : v) s += c * c;
  return s;
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double c) { return std::isfinite(c); });
}

void require_same_dim(const BallPoint& x, const BallPoint& y) {
  if (x.dim() != y.dim())
    throw std::invalid_argument("ball points have mismatched dimensions");
}

// Absolute slack so that a point rescaled to exactly 1 - kBallEpsilon still
// validates after rounding.
constexpr double kNormSlack = 1e-12;

}  // namespace

BallPoint::BallPoint(std::vector<double> coords) : coords_(std::move(coords)) {
  if (coords_.empty())
    throw std::invalid_argument("ball point must have dimension >= 1");
  if (!all_finite(coords_))
    throw std::invalid_argument("ball point has non-finite coordinate");
  if (std::sqrt(squared_norm(coords_)) > 1.0 - kBallEpsilon + kNormSlack)
    throw std::invalid_argument("ball point norm exceeds 1 - epsilon");
}

BallPoint BallPoint::origin(std::size_t dim) {
  return BallPoint(std::vector<double>(dim, 0.0), Unchecked{});
}

double BallPoint::norm() const { return std::sqrt(squared_norm(coords_)); }

double poincare_distance(std::span<const double> x, std::span<const double> y) {
  double diff2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    diff2 += d * d;
  }
  const double ax = 1.0 - squared_norm(x);
  const double ay = 1.0 - squared_norm(y);
  // Rounding can push the argument below 1 for near-coincident points.
  const double arg = std::max(1.0, 1.0 + 2.0 * diff2 / (ax * ay));
  return std::acosh(arg);
}

double poincare_distance(const BallPoint& x, const BallPoint& y) {
  require_same_dim(x, y);
  return poincare_distance(std::span<const double>(x.coords()),
                           std::span<const double>(y.coords()));
}

BallPoint exp_map_origin(const TangentVector& v) {
  if (!all_finite(v.coords))
    throw std::invalid_argument("tangent vector has non-finite coordinate");
  const double n = std::sqrt(squared_norm(v.coords));
  // tanh(n)/n -> 1 as n -> 0; second-order series below the noise floor.
  const double scale = n < 1e-8 ? 1.0 - n * n / 3.0 : std::tanh(n) / n;
  std::vector<double> out(v.coords.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * v.coords[i];
  return project_to_ball(std::move(out));
}

TangentVector log_map_origin(const BallPoint& p) {
  const double r = p.norm();
  const double scale = r < 1e-8 ? 1.0 + r * r / 3.0 : std::atanh(r) / r;
  std::vector<double> out(p.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * p.coords()[i];
  return TangentVector{std::move(out)};
}

BallPoint project_to_ball(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("cannot project empty vector");
  if (!all_finite(v))
    throw std::invalid_argument("cannot project non-finite vector");
  const double limit = 1.0 - kBallEpsilon;
  const double n = std::sqrt(squared_norm(v));
  if (n > limit) {
    const double scale = limit / n;
    for (double& c : v) c *= scale;
  }
  return BallPoint(std::move(v), BallPoint::Unchecked{});
}

DistanceGrad poincare_distance_grad(std::span<const double> xc,
                                    std::span<const double> yc) {
  const std::size_t d = xc.size();

  bool coincident = true;
  for (std::size_t i = 0; i < d; ++i) {
    if (std::abs(xc[i] - yc[i]) > 1e-12) {
      coincident = false;
      break;
    }
  }
  if (coincident)
    throw std::invalid_argument(
        "distance gradient is undefined at coincident points");

  const double xx = squared_norm(xc);
  const double yy = squared_norm(yc);
  double xy = 0.0;
  double diff2 = 0.0;  // summed symmetrically so swapped calls agree bitwise
  for (std::size_t i = 0; i < d; ++i) {
    xy += xc[i] * yc[i];
    const double diff = xc[i] - yc[i];
    diff2 += diff * diff;
  }
  const double ax = 1.0 - xx;
  const double ay = 1.0 - yy;
  const double gamma = std::max(1.0, 1.0 + 2.0 * diff2 / (ax * ay));
  const double denom = std::sqrt(std::max(gamma * gamma - 1.0, 1e-300));

  // d acosh(g)/dg = 1/sqrt(g^2-1); g expands to the rational form below.
  const double cx = 4.0 / (ay * denom);
  const double cy = 4.0 / (ax * denom);

  DistanceGrad g;
  g.wrt_x.resize(d);
  g.wrt_y.resize(d);
  const double bx = (yy - 2.0 * xy + 1.0) / (ax * ax);
  const double by = (xx - 2.0 * xy + 1.0) / (ay * ay);
  for (std::size_t i = 0; i < d; ++i) {
    g.wrt_x[i] = cx * (bx * xc[i] - yc[i] / ax);
    g.wrt_y[i] = cy * (by * yc[i] - xc[i] / ay);
  }
  return g;
}

DistanceGrad distance_grad(const BallPoint& x, const BallPoint& y) {
  require_same_dim(x, y);
  return poincare_distance_grad(std::span<const double>(x.coords()),
                                std::span<const double>(y.coords()));
}

namespace {

double weighted_objective(const BallPoint& c, std::span<const BallPoint> pts,
                          std::span<const double> w) {
  double obj = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dist = poincare_distance(c, pts[i]);
    obj += w[i] * dist * dist;
  }
  return obj;
}

}  // namespace

BallPoint frechet_mean(std::span<const BallPoint> points,
                       std::span<const double> weights) {
  if (points.empty())
    throw std::invalid_argument("frechet_mean of empty point set");
  if (weights.size() != points.size())
    throw std::invalid_argument("frechet_mean weight count mismatch");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("frechet_mean negative weight");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("frechet_mean weights must sum to 1");
  if (points.size() == 1) return points[0];

  const std::size_t dim = points[0].dim();

  // Initialize at the exp of the weighted tangent-space average.
  std::vector<double> tangent_avg(dim, 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const TangentVector t = log_map_origin(points[i]);
    for (std::size_t k = 0; k < dim; ++k)
      tangent_avg[k] += weights[i] * t.coords[k];
  }
  BallPoint c = exp_map_origin(TangentVector{std::move(tangent_avg)});
  double obj = weighted_objective(c, points, weights);

  double step = 0.2;
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> grad(dim, 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (weights[i] == 0.0) continue;
      const double dist = poincare_distance(c, points[i]);
      if (dist < 1e-12) continue;  // grad of dist^2 vanishes at coincidence
      const DistanceGrad dg = distance_grad(c, points[i]);
      const double coeff = weights[i] * 2.0 * dist;
      for (std::size_t k = 0; k < dim; ++k) grad[k] += coeff * dg.wrt_x[k];
    }
    // Riemannian gradient: rescale by the inverse metric (1-|c|^2)^2 / 4.
    const double lam = (1.0 - squared_norm(c.coords()));
    const double metric = lam * lam / 4.0;
    double gnorm2 = 0.0;
    for (double& gk : grad) {
      gk *= metric;
      gnorm2 += gk * gk;
    }
    if (std::sqrt(gnorm2) < 1e-8) break;

    std::vector<double> candidate(dim);
    for (std::size_t k = 0; k < dim; ++k)
      candidate[k] = c.coords()[k] - step * grad[k];
    BallPoint next = project_to_ball(std::move(candidate));
    const double next_obj = weighted_objective(next, points, weights);
    if (next_obj > obj) {
      step *= 0.5;
      if (step < 1e-14) break;
      continue;
    }
    c = std::move(next);
    obj = next_obj;
  }
  return c;
}

BallPoint frechet_mean(std::span<const BallPoint> points) {
  const std::vector<double> w(points.size(),
                              1.0 / static_cast<double>(points.size()));
  return frechet_mean(points, w);
}

double euclidean_distance(std::span<const double> x,
                          std::span<const double> y) {
  if (x.size() != y.size())
    throw std::invalid_argument("vectors have mismatched dimensions");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

DistanceGrad euclidean_distance_grad(std::span<const double> x,
                                     std::span<const double> y) {
  if (x.size() != y.size())
    throw std::invalid_argument("vectors have mismatched dimensions");
  bool coincident = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i] - y[i]) > 1e-12) {
      coincident = false;
      break;
    }
  }
  if (coincident)
    throw std::invalid_argument(
        "distance gradient is undefined at coincident points");
  const double dist = euclidean_distance(x, y);
  DistanceGrad g;
  g.wrt_x.resize(x.size());
  g.wrt_y.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    g.wrt_x[i] = (x[i] - y[i]) / dist;
    g.wrt_y[i] = -g.wrt_x[i];
  }
  return g;
}

const char* geometry_name(Geometry g) {
  return g == Geometry::kPoincare ? "poincare" : "euclidean";
}

Geometry geometry_from_name(const std::string& name) {
  if (name == "poincare") return Geometry::kPoincare;
  if (name == "euclidean") return Geometry::kEuclidean;
  throw std::invalid_argument("unknown geometry: " + name);
}

double metric_distance(Geometry g, std::span<const double> x,
                       std::span<const double> y) {
  return g == Geometry::kPoincare ? poincare_distance(x, y)
                                  : euclidean_distance(x, y);
}

DistanceGrad metric_distance_grad(Geometry g, std::span<const double> x,
                                  std::span<const double> y) {
  return g == Geometry::kPoincare ? poincare_distance_grad(x, y)
                                  : euclidean_distance_grad(x, y);
}

std::vector<double> metric_mean(Geometry g,
                                const std::vector<std::vector<double>>& points) {
  if (points.empty()) throw std::invalid_argument("mean of empty point set");
  if (g == Geometry::kEuclidean) {
    std::vector<double> mean(points[0].size(), 0.0);
    for (const auto& p : points)
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += p[k];
    for (double& v : mean) v /= static_cast<double>(points.size());
    return mean;
  }
  std::vector<BallPoint> ball;
  ball.reserve(points.size());
  for (const auto& p : points) ball.push_back(project_to_ball(p));
  return frechet_mean(ball).coords();
}

}  // namespace longtail
