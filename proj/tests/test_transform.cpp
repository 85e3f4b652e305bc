#include <doctest.h>

#include <cmath>
#include <random>

#include "setkkl/errors.hpp"
#include "support.hpp"

using namespace setkkl;
using testing::vec;

namespace {

TransformField static_field(double eig = -1.0, double k = 1.0) {
  auto sys = example_registry("static");
  auto cut = cutoff_field(sys, 1.0, 1.5);
  TransformOptions opt;
  opt.k = k;
  return TransformField(cut, make_filter_pair(1, 1, {eig}), opt);
}

TransformField harmonic_field() {
  auto sys = example_registry("harmonic_oscillator");
  auto cut = cutoff_field(sys, 1.5, 2.25);
  return TransformField(cut, make_filter_pair(1, 3, {-1.0, -2.0, -3.0}));
}

}  // namespace

TEST_CASE("make_filter_pair: scalar and Kronecker structure") {
  const auto p1 = make_filter_pair(1, 1, {-1.0});
  CHECK(p1.A(0, 0) == -1.0);
  CHECK(p1.B(0, 0) == 1.0);
  CHECK(p1.hurwitz_margin == 1.0);

  const auto p = make_filter_pair(2, 3, {-1.0, -2.0, -3.0});
  REQUIRE(p.A.rows() == 6);
  CHECK(p.A.block(0, 0, 3, 3) == p.A_o);
  CHECK(p.A.block(3, 3, 3, 3) == p.A_o);
  CHECK(p.A.block(0, 3, 3, 3).isZero(0));
  CHECK(p.A.block(3, 0, 3, 3).isZero(0));
  CHECK(kron_identity(2, p.A_o) == p.A);
  CHECK(kron_identity(2, p.B_o) == p.B);
  CHECK(p.n_z() == 6);
}

TEST_CASE("make_filter_pair: complex pairs give rotation blocks") {
  const auto p = make_filter_pair(1, 3, {{-1.0, 2.0}, {-1.0, -2.0}, {-0.5, 0.0}});
  Eigen::EigenSolver<Mat> es(p.A_o);
  std::vector<double> re, im;
  for (int i = 0; i < 3; ++i) {
    re.push_back(es.eigenvalues()(i).real());
    im.push_back(std::abs(es.eigenvalues()(i).imag()));
  }
  std::sort(re.begin(), re.end());
  std::sort(im.begin(), im.end());
  CHECK(re[0] == doctest::Approx(-1.0));
  CHECK(re[2] == doctest::Approx(-0.5));
  CHECK(im[2] == doctest::Approx(2.0));
  CHECK(p.hurwitz_margin == 0.5);
}

TEST_CASE("make_filter_pair: errors") {
  CHECK_THROWS_AS(make_filter_pair(1, 2, {-1.0, -1.0}), NotControllable);
  CHECK_THROWS_AS(make_filter_pair(1, 1, {0.5}), NotHurwitz);
  CHECK_THROWS_AS(make_filter_pair(1, 2, {-1.0}), ConfigError);
  const auto a = make_filter_pair(1, 2, {-1.0, -2.0}, 5, 0.1);
  const auto b = make_filter_pair(1, 2, {-1.0, -2.0}, 5, 0.1);
  CHECK(a.B_o == b.B_o);
  CHECK(a.B_o != Vec::Ones(2));
}

TEST_CASE("transform: static system gives T = h") {
  const auto tf = static_field();
  for (double x : {-0.9, -0.2, 0.0, 0.5, 1.0}) {
    CHECK(std::abs(tf.evaluate(vec({x}))(0) - x) <= tf.tol_trunc());
    CHECK(std::abs(tf.jacobian(vec({x}))(0, 0) - 1.0) <= tf.tol_trunc());
    CHECK(pde_residual(tf, vec({x})) <= 1e-6);
  }
}

TEST_CASE("transform: horizon covers the truncation tail") {
  const auto tf = testing::limit_cycle_field();
  const double bound = std::log(tf.output_bound() / tf.tol_trunc()) / (tf.k() * tf.pair().hurwitz_margin);
  CHECK(tf.horizon() >= bound);
  const auto tf2 = testing::limit_cycle_field(2.0);
  CHECK(tf2.horizon() < tf.horizon());
}

TEST_CASE("transform: harmonic oscillator matches the Sylvester solution") {
  const auto tf = harmonic_field();
  Mat S(2, 2);
  S << 0, 1, -1, 0;
  Mat C(1, 2);
  C << 1, 0;
  const Mat M = testing::sylvester(S, tf.pair().A, tf.pair().B * C);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10; ++i) {
    const Vec x = vec({u(rng), u(rng)});
    CHECK((tf.evaluate(x) - M * x).norm() <= 1e-6);
    CHECK((tf.jacobian(x) - M).norm() <= 1e-6);
  }
}

TEST_CASE("transform: mirror symmetry on the limit cycle") {
  const auto tf = testing::limit_cycle_field();
  for (const Vec& x : {vec({1.2, 0.0}), vec({0.3, -0.8}), vec({-1.1, 1.0})}) {
    CHECK((tf.evaluate(x) - tf.evaluate(-x)).norm() <= 2 * tf.tol_trunc());
  }
}

TEST_CASE("transform: Jacobian agrees with finite differences") {
  const auto tf = testing::limit_cycle_field();
  for (const Vec& x : {vec({1.2, 0.1}), vec({0.5, -0.7})}) {
    const Mat J = tf.jacobian(x);
    Mat fd(tf.n_z(), 2);
    for (int j = 0; j < 2; ++j) {
      Vec e = Vec::Zero(2);
      e(j) = 1e-5;
      fd.col(j) = (tf.evaluate(x + e) - tf.evaluate(x - e)) / 2e-5;
    }
    CHECK((J - fd).norm() <= 1e-4 * J.norm());
    Vec z;
    Mat J2;
    tf.evaluate_into(x, z, &J2);
    CHECK(z == tf.evaluate(x));
    CHECK(J2 == J);
  }
}

TEST_CASE("transform: lengthening the horizon changes T below tol_trunc") {
  const auto base = testing::limit_cycle_field();
  auto sys = cutoff_field(example_registry("limit_cycle_squared_output"), 1.7, 2.55);
  TransformOptions opt;
  opt.horizon = 1.25 * base.horizon();
  const TransformField longer(sys, base.pair(), opt);
  for (const Vec& x : {vec({1.0, 0.5}), vec({-0.2, 1.4})}) {
    CHECK((longer.evaluate(x) - base.evaluate(x)).norm() < base.tol_trunc());
  }
}

TEST_CASE("transform: pde residual is small and delta-insensitive") {
  const auto tf = testing::limit_cycle_field();
  for (const Vec& x : {vec({1.0, 0.3}), vec({-0.4, -1.2})}) {
    const double r1 = pde_residual(tf, x, 1e-4);
    const double r2 = pde_residual(tf, x, 5e-5);
    CHECK(r1 <= 1e-3);
    CHECK(std::abs(r1 - r2) <= 1e-3);
  }
}

TEST_CASE("tabulate_image and conditioning_map") {
  const auto tf = static_field();
  const auto atlas = tabulate_image(tf, tf.system().domain);
  REQUIRE(atlas.size() == 21);
  const auto cond = conditioning_map(atlas);
  CHECK(cond.full_rank);
  CHECK(cond.max_cond == doctest::Approx(1.0));
  for (std::size_t i = 0; i < atlas.size(); ++i) CHECK(atlas.domain.contains(atlas.grid_points[i]));

  const auto single = tabulate_image(tf, DomainSpec::box(vec({0.2}), vec({0.3}), 1));
  CHECK(single.size() == 1);

  const std::string csv = atlas_csv(atlas);
  CHECK(csv.rfind("x_1,z_1,sigma_min,cond\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 22);
}

TEST_CASE("tabulate_image: mirrored partners on a coarse annulus") {
  const auto tf = testing::limit_cycle_field();
  const auto dom = DomainSpec::annulus(vec({0, 0}), 0.5, 1.7, 8);
  const auto atlas = tabulate_image(tf, dom);
  REQUIRE(atlas.size() > 10);
  for (std::size_t i = 0; i < atlas.size(); ++i) {
    const Vec zm = tf.evaluate(-atlas.grid_points[i]);
    CHECK((zm - atlas.images[i]).norm() <= 2 * tf.tol_trunc());
    CHECK(atlas.jacobian_min_sv[i] > 0);
  }
}
