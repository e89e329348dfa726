#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "longtail/geometry.hpp"
#include "longtail/rng.hpp"
#include "oracles.hpp"

using namespace longtail;

namespace {

BallPoint random_point(Rng& rng, std::size_t dim, double max_norm = 0.9) {
  std::vector<double> v(dim);
  double n2 = 0.0;
  for (double& c : v) {
    c = rng.normal();
    n2 += c * c;
  }
  const double r = max_norm * std::pow(rng.uniform(), 1.0 / double(dim));
  const double scale = r / std::sqrt(n2);
  for (double& c : v) c *= scale;
  return BallPoint(v);
}

double rel_err(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 1e-12;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num = std::max(num, std::abs(got[i] - want[i]));
    den = std::max(den, std::abs(want[i]));
  }
  return num / den;
}

}  // namespace

TEST_CASE("distance identity and closed forms") {
  const BallPoint o = BallPoint::origin(2);
  CHECK(poincare_distance(o, o) == 0.0);

  const BallPoint p({0.5, 0.0});
  // d(0, p) = 2 artanh(|p|) = ln 3
  CHECK(poincare_distance(o, p) ==
        doctest::Approx(1.0986122886681098).epsilon(1e-12));

  const BallPoint x({0.3, 0.0});
  const BallPoint y({0.0, 0.4});
  CHECK(poincare_distance(x, y) ==
        doctest::Approx(1.0891371665366823).epsilon(1e-12));
  const double ld = double(oracle::poincare_distance_ld(x.coords(), y.coords()));
  CHECK(poincare_distance(x, y) == doctest::Approx(ld).epsilon(1e-12));
}

TEST_CASE("distance input validation") {
  CHECK_THROWS_AS(poincare_distance(BallPoint({0.1}), BallPoint({0.1, 0.2})),
                  std::invalid_argument);
  CHECK_THROWS_AS(BallPoint({1.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(BallPoint({0.99999999, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(BallPoint(std::vector<double>{}), std::invalid_argument);
  const double nan = std::nan("");
  CHECK_THROWS_AS(BallPoint({nan, 0.0}), std::invalid_argument);
}

TEST_CASE("distance symmetry, positivity, triangle inequality") {
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    const BallPoint a = random_point(rng, 2, 0.95);
    const BallPoint b = random_point(rng, 2, 0.95);
    const BallPoint c = random_point(rng, 2, 0.95);
    CHECK(poincare_distance(a, b) == poincare_distance(b, a));
    if (!(a == b)) CHECK(poincare_distance(a, b) > 0.0);
    CHECK(poincare_distance(a, c) <=
          poincare_distance(a, b) + poincare_distance(b, c) + 1e-9);
  }
}

TEST_CASE("rotation isometry") {
  Rng rng(42);
  for (int i = 0; i < 200; ++i) {
    const double theta = rng.uniform(0.0, 6.283185307179586);
    const double ct = std::cos(theta), st = std::sin(theta);
    const BallPoint a = random_point(rng, 2, 0.95);
    const BallPoint b = random_point(rng, 2, 0.95);
    auto rotate = [&](const BallPoint& p) {
      return BallPoint({ct * p.coords()[0] - st * p.coords()[1],
                        st * p.coords()[0] + ct * p.coords()[1]});
    };
    CHECK(poincare_distance(rotate(a), rotate(b)) ==
          doctest::Approx(poincare_distance(a, b)).epsilon(1e-10));
    // Reflection across the x axis is orthogonal too.
    const BallPoint ra({a.coords()[0], -a.coords()[1]});
    const BallPoint rb({b.coords()[0], -b.coords()[1]});
    CHECK(poincare_distance(ra, rb) ==
          doctest::Approx(poincare_distance(a, b)).epsilon(1e-10));
  }
}

TEST_CASE("exp map at the origin") {
  const BallPoint z = exp_map_origin(TangentVector{{0.0, 0.0}});
  CHECK(z.coords()[0] == 0.0);
  CHECK(z.coords()[1] == 0.0);

  const BallPoint tiny = exp_map_origin(TangentVector{{1e-6, 0.0}});
  CHECK(tiny.coords()[0] == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK(tiny.coords()[1] == 0.0);

  const BallPoint one = exp_map_origin(TangentVector{{1.0, 0.0}});
  CHECK(one.coords()[0] == doctest::Approx(0.7615941559557649).epsilon(1e-15));

  // A huge tangent vector lands on the clip radius, not outside it.
  const BallPoint big = exp_map_origin(TangentVector{{50.0, 0.0}});
  CHECK(big.norm() <= 1.0 - kBallEpsilon + 1e-12);
}

TEST_CASE("log map inverts exp map") {
  const TangentVector back = log_map_origin(BallPoint({0.7615941559557649, 0.0}));
  CHECK(back.coords[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(back.coords[1] == 0.0);
  CHECK(log_map_origin(BallPoint::origin(2)).coords ==
        std::vector<double>{0.0, 0.0});

  Rng rng(7);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const BallPoint p = random_point(rng, 3, 0.99);
    const BallPoint round = exp_map_origin(log_map_origin(p));
    for (std::size_t k = 0; k < 3; ++k)
      worst = std::max(worst, std::abs(round.coords()[k] - p.coords()[k]));
    const TangentVector v{{rng.normal(), rng.normal(), rng.normal()}};
    const TangentVector vr = log_map_origin(exp_map_origin(v));
    for (std::size_t k = 0; k < 3; ++k)
      worst = std::max(worst, std::abs(vr.coords[k] - v.coords[k]));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("project_to_ball") {
  const BallPoint inside = project_to_ball({0.1, 0.1});
  CHECK(inside.coords() == std::vector<double>{0.1, 0.1});
  const BallPoint clipped = project_to_ball({2.0, 0.0});
  CHECK(clipped.coords()[0] == 1.0 - 1e-5);
  CHECK(clipped.coords()[1] == 0.0);
  CHECK(project_to_ball({0.0, 0.0}).coords() == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(project_to_ball({std::numeric_limits<double>::infinity(), 0.0}),
                  std::invalid_argument);
}

TEST_CASE("distance gradient direction on a geodesic ray") {
  const DistanceGrad g = distance_grad(BallPoint({0.2, 0.0}), BallPoint({0.5, 0.0}));
  CHECK(g.wrt_x[0] < 0.0);  // moving x toward y decreases the distance
  CHECK(g.wrt_x[1] == 0.0);
  CHECK(g.wrt_y[0] > 0.0);
}

TEST_CASE("distance gradient matches finite differences") {
  Rng rng(123);
  int done = 0;
  while (done < 200) {
    const BallPoint x = random_point(rng, 2);
    const BallPoint y = random_point(rng, 2);
    if (poincare_distance(x, y) < 1e-3) continue;
    const DistanceGrad g = distance_grad(x, y);

    auto fx = [&](const std::vector<double>& v) {
      return poincare_distance(BallPoint(v), y);
    };
    auto fy = [&](const std::vector<double>& v) {
      return poincare_distance(x, BallPoint(v));
    };
    const auto fdx = oracle::finite_difference(fx, x.coords(), 1e-6);
    const auto fdy = oracle::finite_difference(fy, y.coords(), 1e-6);
    CHECK(rel_err(g.wrt_x, fdx) < 1e-5);
    CHECK(rel_err(g.wrt_y, fdy) < 1e-5);
    ++done;
  }
}

TEST_CASE("distance gradient swap symmetry") {
  Rng rng(321);
  for (int i = 0; i < 50; ++i) {
    const BallPoint x = random_point(rng, 3);
    const BallPoint y = random_point(rng, 3);
    if (poincare_distance(x, y) < 1e-6) continue;
    const DistanceGrad g = distance_grad(x, y);
    const DistanceGrad swapped = distance_grad(y, x);
    CHECK(g.wrt_x == swapped.wrt_y);
    CHECK(g.wrt_y == swapped.wrt_x);
  }
}

TEST_CASE("distance gradient rejects coincident points") {
  const BallPoint p({0.3, 0.1});
  CHECK_THROWS_AS(distance_grad(p, p), std::invalid_argument);
}

TEST_CASE("frechet mean basics") {
  const BallPoint p({0.4, -0.2});
  const std::vector<BallPoint> single{p};
  CHECK(frechet_mean(single) == p);

  const std::vector<BallPoint> pair{BallPoint({0.6, 0.0}), BallPoint({-0.6, 0.0})};
  const BallPoint mid = frechet_mean(pair);
  CHECK(std::abs(mid.coords()[0]) < 1e-9);
  CHECK(std::abs(mid.coords()[1]) < 1e-9);

  CHECK_THROWS_AS(frechet_mean(std::vector<BallPoint>{}), std::invalid_argument);
  const std::vector<double> bad_weights{0.5, 0.2};
  CHECK_THROWS_AS(frechet_mean(pair, bad_weights), std::invalid_argument);
  const std::vector<double> negative{1.5, -0.5};
  CHECK_THROWS_AS(frechet_mean(pair, negative), std::invalid_argument);
}

TEST_CASE("frechet mean matches grid search") {
  Rng rng(2024);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<BallPoint> pts;
    std::vector<std::array<double, 2>> raw;
    for (int i = 0; i < 3; ++i) {
      const BallPoint p = random_point(rng, 2, 0.8);
      pts.push_back(p);
      raw.push_back({p.coords()[0], p.coords()[1]});
    }
    const std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const BallPoint mean = frechet_mean(pts, w);
    const auto grid = oracle::frechet_grid_search(raw, w, 1e-3);
    CHECK(std::abs(mean.coords()[0] - grid[0]) <= 2e-3);
    CHECK(std::abs(mean.coords()[1] - grid[1]) <= 2e-3);
    CHECK(mean.norm() < 1.0 - kBallEpsilon + 1e-12);
  }
}

TEST_CASE("euclidean metric helpers") {
  const std::vector<double> a{1.0, 2.0}, b{4.0, 6.0};
  CHECK(euclidean_distance(a, b) == doctest::Approx(5.0));
  const DistanceGrad g = euclidean_distance_grad(a, b);
  CHECK(g.wrt_x[0] == doctest::Approx(-0.6));
  CHECK(g.wrt_x[1] == doctest::Approx(-0.8));
  CHECK(g.wrt_y[0] == doctest::Approx(0.6));
  CHECK_THROWS_AS(euclidean_distance_grad(a, a), std::invalid_argument);

  const std::vector<std::vector<double>> pts{{1.0, 1.0}, {3.0, 5.0}};
  const auto mean = metric_mean(Geometry::kEuclidean, pts);
  CHECK(mean == std::vector<double>{2.0, 3.0});
}
