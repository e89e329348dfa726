#pragma once

#include <span>
#include <string>
#include <vector>

namespace longtail {

// Points are clipped to Euclidean norm <= 1 - kBallEpsilon. The distance
// formula diverges as the norm approaches 1, so the clip keeps distances and
// gradients finite everywhere.
inline constexpr double kBallEpsilon = 1e-5;

// A point inside the unit Poincare ball (curvature -1).
class BallPoint {
 public:
  // Validates finiteness and the norm bound; throws std::invalid_argument.
  explicit BallPoint(std::vector<double> coords);

  static BallPoint origin(std::size_t dim);

  const std::vector<double>& coords() const { return coords_; }
  std::size_t dim() const { return coords_.size(); }
  double norm() const;

  bool operator==(const BallPoint& other) const = default;

 private:
  struct Unchecked {};
  BallPoint(std::vector<double> coords, Unchecked) : coords_(std::move(coords)) {}

  std::vector<double> coords_;

  friend BallPoint project_to_ball(std::vector<double> v);
};

// Tangent vector at the origin; unbounded.
struct TangentVector {
  std::vector<double> coords;
};

// Geodesic distance between two ball points:
//   d(x,y) = arccosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2)))
// Throws on dimension mismatch.
double poincare_distance(const BallPoint& x, const BallPoint& y);

// exp_0(v) = tanh(|v|) * v/|v|, with exp_0(0) = 0. Output is projected into
// the clipped ball.
BallPoint exp_map_origin(const TangentVector& v);

// Exact inverse of exp_map_origin: log_0(p) = artanh(|p|) * p/|p|.
TangentVector log_map_origin(const BallPoint& p);

// Returns v unchanged if |v| <= 1 - kBallEpsilon, otherwise rescales it to
// that norm. Throws on non-finite input.
BallPoint project_to_ball(std::vector<double> v);

struct DistanceGrad {
  std::vector<double> wrt_x;
  std::vector<double> wrt_y;
};

// Analytic Euclidean partials of poincare_distance. The distance is not
// differentiable at coincidence; x == y within 1e-12 per coordinate throws.
DistanceGrad distance_grad(const BallPoint& x, const BallPoint& y);

// Weighted Frechet mean: argmin_c sum_i w_i d(c, p_i)^2, found by Riemannian
// gradient descent with a projection retraction. Weights must be nonnegative
// and sum to 1; the point list must be nonempty.
BallPoint frechet_mean(std::span<const BallPoint> points,
                       std::span<const double> weights);

// Uniform-weight convenience overload.
BallPoint frechet_mean(std::span<const BallPoint> points);

// Plain Euclidean metric, used by the geometry ablation. Same coincidence
// guard as distance_grad.
double euclidean_distance(std::span<const double> x, std::span<const double> y);
DistanceGrad euclidean_distance_grad(std::span<const double> x,
                                     std::span<const double> y);

// Unchecked raw-coordinate versions for hot loops. Callers guarantee the
// points already satisfy the ball invariants.
double poincare_distance(std::span<const double> x, std::span<const double> y);
DistanceGrad poincare_distance_grad(std::span<const double> x,
                                    std::span<const double> y);

enum class Geometry { kPoincare, kEuclidean };

const char* geometry_name(Geometry g);
Geometry geometry_from_name(const std::string& name);

double metric_distance(Geometry g, std::span<const double> x,
                       std::span<const double> y);
DistanceGrad metric_distance_grad(Geometry g, std::span<const double> x,
                                  std::span<const double> y);

// Minimizer of the summed squared metric distance: Frechet mean under the
// Poincare metric, arithmetic mean under the Euclidean one.
std::vector<double> metric_mean(Geometry g,
                                const std::vector<std::vector<double>>& points);

}  // namespace longtail
