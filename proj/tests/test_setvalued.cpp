#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "setkkl/errors.hpp"
#include "setkkl/setvalued.hpp"
#include "support.hpp"

using namespace setkkl;
using testing::vec;

namespace {

constexpr double pi = std::numbers::pi;

TransformField sine_field() {
  auto sys = example_registry("sine_pair_map");
  auto cut = cutoff_field(sys, pi, 1.5 * pi);
  return TransformField(cut, make_filter_pair(2, 1, {-1.0}));
}

std::vector<Vec> random_set(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<Vec> s;
  for (int i = 0; i < n; ++i) s.push_back(vec({u(rng), u(rng)}));
  return s;
}

bool contains_near(const PointSet& s, const Vec& x, double tol) {
  for (const auto& p : s.points)
    if ((p - x).norm() <= tol) return true;
  return false;
}

}  // namespace

TEST_CASE("hausdorff: worked examples") {
  const std::vector<Vec> s{vec({0.5}), vec({-1.0})};
  CHECK(hausdorff(s, s).d_H == 0.0);
  CHECK(hausdorff({vec({1.0, 2.0})}, {vec({4.0, 6.0})}).d_H == 5.0);
  const auto r = hausdorff({vec({0.0})}, {vec({-1.0}), vec({1.0})});
  CHECK(r.d_H == 1.0);
  CHECK(r.delta_ab == 1.0);
  CHECK(r.delta_ba == 1.0);
  const auto r2 = hausdorff({vec({0.0}), vec({3.0})}, {vec({0.0})});
  CHECK(r2.delta_ab == 3.0);
  CHECK(r2.delta_ba == 0.0);
  CHECK_THROWS_AS(hausdorff(std::vector<Vec>{}, s), EmptySet);
}

TEST_CASE("hausdorff: metric properties on random sets") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_set(rng, 1 + trial % 4);
    const auto b = random_set(rng, 1 + trial % 3);
    const auto c = random_set(rng, 2);
    const double ab = hausdorff(a, b).d_H;
    CHECK(ab == hausdorff(b, a).d_H);
    CHECK(hausdorff(a, c).d_H <= ab + hausdorff(b, c).d_H + 1e-12);
    CHECK(hausdorff(a, a).d_H == 0.0);
  }
}

TEST_CASE("tuple_distance: worked examples and errors") {
  const std::vector<Vec> s{vec({0.0}), vec({10.0})};
  CHECK(tuple_distance(s, s) == 0.0);
  CHECK(tuple_distance(s, {vec({10.0}), vec({0.0})}) == 0.0);
  CHECK(tuple_distance({vec({0.0}), vec({3.0})}, {vec({1.0}), vec({5.0})}) == 2.0);
  CHECK_THROWS_AS(tuple_distance(s, {vec({0.0})}), LengthMismatch);
  std::vector<Vec> nine(9, vec({0.0}));
  CHECK_THROWS_AS(tuple_distance(nine, nine), TooLarge);
}

TEST_CASE("tuple_distance dominates hausdorff") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int p = 1 + trial % 5;
    const auto a = random_set(rng, p);
    const auto b = random_set(rng, p);
    CHECK(tuple_distance(a, b) >= hausdorff(a, b).d_H - 1e-12);
  }
}

TEST_CASE("InversionConfig defaults and validation") {
  const auto tf = sine_field();
  const auto atlas = tabulate_image(tf, tf.system().domain);
  const auto cfg = default_inversion_config(tf, atlas);
  CHECK(cfg.residual_tol == doctest::Approx(10 * tf.tol_trunc()));
  CHECK(cfg.cluster_radius == doctest::Approx(2 * atlas.spacing()));
  InversionConfig bad;
  bad.residual_tol = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("preimage: sine pair map triple point") {
  const auto tf = sine_field();
  const auto atlas = tabulate_image(tf, tf.system().domain);
  const auto cfg = default_inversion_config(tf, atlas);
  const auto pre = preimage(tf, atlas, vec({0.0, 0.0}), cfg);
  REQUIRE(pre.size() == 3);
  CHECK(std::abs(pre.points[0](0) + pi) <= 1e-6);
  CHECK(std::abs(pre.points[1](0)) <= 1e-6);
  CHECK(std::abs(pre.points[2](0) - pi) <= 1e-6);
  CHECK(preimage(tf, atlas, vec({5.0, 5.0}), cfg).empty());
}

TEST_CASE("preimage contains the query point") {
  const auto tf = sine_field();
  const auto atlas = tabulate_image(tf, tf.system().domain);
  const auto cfg = default_inversion_config(tf, atlas);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-pi, pi);
  for (int i = 0; i < 200; ++i) {
    const Vec x = vec({u(rng)});
    const auto z = tf.evaluate(x);
    const auto pre = preimage(tf, atlas, z, cfg);
    CHECK(contains_near(pre, x, cfg.cluster_radius));
    const auto ext = extend_inverse(tf, atlas, z, cfg);
    CHECK(hausdorff(pre, ext).d_H <= cfg.cluster_radius);
  }
}

TEST_CASE("extend_inverse: far off-image query returns the brute-force argmin") {
  const auto tf = sine_field();
  const auto atlas = tabulate_image(tf, tf.system().domain);
  const auto cfg = default_inversion_config(tf, atlas);
  const Vec z = vec({5.0, 5.0});
  const auto ext = extend_inverse(tf, atlas, z, cfg);
  REQUIRE_FALSE(ext.empty());
  double best = 1e300, arg = 0;
  for (int i = 0; i <= 200000; ++i) {
    const double x = -pi + 2 * pi * i / 200000.0;
    const double r = std::hypot(std::sin(2 * x) - 5, std::sin(x) - 5);
    if (r < best) best = r, arg = x;
  }
  CHECK(contains_near(ext, vec({arg}), 1e-3));
}

TEST_CASE("cardinality_profile: static injective map") {
  auto sys = example_registry("static");
  const TransformField tf(cutoff_field(sys, 1.0, 1.5), make_filter_pair(1, 1, {-1.0}));
  const auto atlas = tabulate_image(tf, sys.domain);
  const auto rep = cardinality_profile(tf, atlas, default_inversion_config(tf, atlas));
  CHECK(rep.modal_p == 1);
  CHECK(rep.violations.empty());
}

TEST_CASE("cardinality_profile: sine pair map is injective except at the triple point") {
  // Brute force: sin(2x) = sin(2x') and sin(x) = sin(x') on [-pi, pi] force
  // x' = x unless both outputs vanish.
  const auto tf = sine_field();
  const auto atlas = tabulate_image(tf, tf.system().domain);
  const auto rep = cardinality_profile(tf, atlas, default_inversion_config(tf, atlas));
  CHECK(rep.modal_p == 1);
  REQUIRE(rep.violations.size() == 3);
  for (int v : rep.violations) {
    CHECK(rep.cardinality[v] == 3);
    const double x = rep.points[v](0);
    CHECK(std::min({std::abs(x + pi), std::abs(x), std::abs(x - pi)}) < 1e-12);
  }
  const std::string csv = cardinality_csv(rep);
  CHECK(csv.rfind("x_1,card,modal_flag\n", 0) == 0);
}

TEST_CASE("preimage: limit cycle returns the antipodal pair") {
  const auto tf = testing::limit_cycle_field();
  const auto atlas = tabulate_image(tf, DomainSpec::annulus(vec({0, 0}), 0.5, 1.7, 16));
  const auto cfg = default_inversion_config(tf, atlas);
  for (const Vec& x : {vec({1.2, 0.0}), vec({0.37, -1.05}), vec({-0.6, 0.6})}) {
    const auto pre = preimage(tf, atlas, tf.evaluate(x), cfg);
    REQUIRE(pre.size() == 2);
    CHECK(hausdorff(pre.points, {x, Vec(-x)}).d_H <= 1e-4);
  }
}

TEST_CASE("extend_inverse: off-image perturbation stays Lipschitz-close") {
  const auto tf = testing::limit_cycle_field();
  const auto atlas = tabulate_image(tf, DomainSpec::annulus(vec({0, 0}), 0.5, 1.7, 16));
  const auto cfg = default_inversion_config(tf, atlas);
  const auto lip = empirical_lipschitz(tf, atlas, cfg, 40, 1);
  REQUIRE(lip.pairs > 0);
  CHECK(std::isfinite(lip.max_ratio));
  CHECK(lip.median_ratio <= lip.max_ratio);
  const Vec x = vec({1.0, 0.6});
  Vec u = Vec::Ones(tf.n_z()).normalized();
  const auto ext = extend_inverse(tf, atlas, tf.evaluate(x) + 0.1 * u, cfg);
  REQUIRE_FALSE(ext.empty());
  CHECK(hausdorff(ext.points, {x, Vec(-x)}).d_H <= 0.1 * lip.max_ratio);
}

TEST_CASE("match_branches: identity, greedy pairing, cardinality change") {
  PointSet a{{vec({0.0}), vec({1.0})}, 0.1};
  CHECK(match_branches(a, a).pairing == std::vector<int>{0, 1});
  PointSet b{{vec({0.9}), vec({0.1})}, 0.1};
  const auto m = match_branches(a, b);
  CHECK(m.pairing == std::vector<int>{1, 0});
  CHECK(m.max_distance == doctest::Approx(0.1));
  PointSet c{{vec({0.95})}, 0.1};
  const auto mc = match_branches(a, c);
  CHECK(mc.cardinality_changed);
  CHECK(mc.pairing == std::vector<int>{1});
  CHECK(mc.unmatched_prev == std::vector<int>{0});
  CHECK_THROWS_AS(match_branches(a, PointSet{}), EmptySet);
}

TEST_CASE("track_branches: circle map swaps branches once per loop") {
  const int n = 200;
  std::vector<PointSet> sets;
  for (int i = 0; i < n; ++i) sets.push_back({split_circle_branches(static_cast<double>(i) / n), 0.0});
  for (int i = 1; i < n; ++i) CHECK(match_branches(sets[i - 1], sets[i]).pairing == std::vector<int>{0, 1});
  sets.push_back({split_circle_branches(0.0), 0.0});
  const auto track = track_branches(sets);
  REQUIRE(track.swap_steps.size() == 1);
  CHECK(track.swap_steps[0] == n);
  CHECK(track.labels.back() == std::vector<int>{1, 0});
}
