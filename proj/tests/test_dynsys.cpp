#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "setkkl/errors.hpp"
#include "support.hpp"

using namespace setkkl;
using testing::vec;

TEST_CASE("integrate: zero field keeps the state") {
  auto m = example_registry("static");
  const auto traj = integrate(m, vec({0.3}), 0.0, 2.0, 0.1);
  CHECK(traj.times.back() == 2.0);
  for (const auto& x : traj.states) CHECK(x(0) == 0.3);
}

TEST_CASE("integrate: exponential decay matches e^-1") {
  const auto m = testing::scalar_linear(-1.0);
  const auto traj = integrate(m, vec({1.0}), 0.0, 1.0, 1e-3);
  CHECK(traj.times.back() == 1.0);
  CHECK(std::abs(traj.back()(0) - std::exp(-1.0)) <= 1e-9);
}

TEST_CASE("integrate: RK4 order on the exponential") {
  const auto m = testing::scalar_linear(-1.0);
  const double exact = std::exp(-1.0);
  const double e1 = std::abs(integrate(m, vec({1.0}), 0.0, 1.0, 0.1).back()(0) - exact);
  const double e2 = std::abs(integrate(m, vec({1.0}), 0.0, 1.0, 0.05).back()(0) - exact);
  CHECK(e1 / e2 >= 14.0);
}

TEST_CASE("integrate: last step is shortened onto t1") {
  const auto m = testing::scalar_linear(-1.0);
  const auto traj = integrate(m, vec({1.0}), 0.0, 0.25, 0.1);
  REQUIRE(traj.size() == 4);
  CHECK(traj.times.back() == 0.25);
  CHECK(std::abs(traj.back()(0) - std::exp(-0.25)) < 1e-6);
  const auto back = integrate(m, vec({1.0}), 0.0, -0.25, 0.1);
  for (std::size_t i = 1; i < back.size(); ++i) CHECK(back.times[i] < back.times[i - 1]);
}

TEST_CASE("integrate: harmonic oscillator returns after one period") {
  const auto m = example_registry("harmonic_oscillator");
  const auto traj = integrate(m, vec({1.0, 0.0}), 0.0, 2 * std::numbers::pi, 1e-3);
  CHECK((traj.back() - vec({1.0, 0.0})).norm() <= 1e-6);
}

TEST_CASE("integrate: rejects bad steps and blow-up") {
  const auto m = testing::scalar_linear(-1.0);
  CHECK_THROWS_AS(integrate(m, vec({1.0}), 0.0, 1.0, 0.0), ConfigError);
  SystemModel blow = testing::scalar_linear(0.0);
  blow.f = [](Eigen::Ref<const Vec> x, Eigen::Ref<Vec> dx) { dx = x.array().square(); };
  CHECK_THROWS_AS(integrate(blow, vec({1.0}), 0.0, 5.0, 0.01), NonFiniteState);
}

TEST_CASE("flow: identity, backward exponential, composition") {
  const auto m = testing::scalar_linear(-1.0);
  CHECK(flow(m, vec({0.7}), 0.0, Direction::forward, 1e-3)(0) == 0.7);
  CHECK(std::abs(flow(m, vec({2.0}), 1.0, Direction::backward, 1e-3)(0) - 2 * std::exp(1.0)) <= 1e-8);

  const auto lc = example_registry("limit_cycle_squared_output");
  const Vec x = vec({0.4, -0.9});
  const Vec a = flow(lc, flow(lc, x, 0.7, Direction::forward, 1e-3), 0.5, Direction::forward, 1e-3);
  const Vec b = flow(lc, x, 1.2, Direction::forward, 1e-3);
  CHECK((a - b).norm() < 1e-10);
}

TEST_CASE("flow: the unit circle is invariant for the limit cycle field") {
  const auto m = example_registry("limit_cycle_squared_output");
  for (double theta : {0.0, 1.0, 2.5, 4.0}) {
    const Vec x = vec({std::cos(theta), std::sin(theta)});
    const auto traj = integrate(m, x, 0.0, 5.0, 1e-3);
    for (const auto& s : traj.states) CHECK(std::abs(s.norm() - 1.0) <= 1e-6);
  }
}

TEST_CASE("output_along: squared output values") {
  const auto m = example_registry("limit_cycle_squared_output");
  Trajectory traj;
  traj.times = {0.0, 1.0, 2.0};
  traj.states = {vec({1, 0}), vec({0, 1}), vec({1, 1})};
  const auto y = output_along(m, traj);
  CHECK((y.values[0] - vec({1, 0})).norm() == 0.0);
  CHECK((y.values[1] - vec({-1, 0})).norm() == 0.0);
  CHECK((y.values[2] - vec({0, 2})).norm() == 0.0);
  CHECK(y.at(1.0) == y.values[1]);
  CHECK((y.at(0.5) - vec({0, 0})).norm() < 1e-15);
}

TEST_CASE("registry: named models") {
  CHECK(example_registry("sine_pair_map").eval_h(vec({0.0})).norm() == 0.0);
  CHECK(example_registry("static").eval_f(vec({0.4}))(0) == 0.0);
  CHECK_THROWS_AS(example_registry("no_such_model"), UnknownExample);
  const auto lc = example_registry("limit_cycle_squared_output");
  CHECK(lc.domain.kind == DomainKind::ball);
  CHECK(lc.domain.r_outer == 1.7);
  for (const auto& name : example_names()) CHECK(example_registry(name).has_analytic_jacobians());
}

TEST_CASE("registry: analytic Jacobians agree with finite differences") {
  for (const auto& name : example_names()) {
    const auto m = example_registry(name);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 10; ++i) {
      Vec x(m.n_x);
      for (int j = 0; j < m.n_x; ++j) x(j) = u(rng);
      CHECK((m.jacobian_f(x) - finite_difference_jacobian(m.f, m.n_x, x)).norm() < 1e-6);
      CHECK((m.jacobian_h(x) - finite_difference_jacobian(m.h, m.n_y, x)).norm() < 1e-6);
    }
  }
}

TEST_CASE("limit cycle symmetry: f odd, h even") {
  const auto m = example_registry("limit_cycle_squared_output");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.7, 1.7);
  for (int i = 0; i < 50; ++i) {
    const Vec x = vec({u(rng), u(rng)});
    CHECK((m.eval_f(-x) + m.eval_f(x)).norm() == 0.0);
    CHECK((m.eval_h(-x) - m.eval_h(x)).norm() == 0.0);
  }
}

TEST_CASE("cutoff_field: keeps f inside, vanishes outside") {
  const auto m = example_registry("limit_cycle_squared_output");
  const auto cut = cutoff_field(m, 1.7, 2.55);
  const Vec inside = vec({1.0, 1.2});
  CHECK((cut.eval_f(inside) - m.eval_f(inside)).norm() == 0.0);
  CHECK(cut.eval_f(vec({2.0, 2.0})).norm() == 0.0);
  CHECK(cutoff_weight(1.7, 1.7, 2.55) == 1.0);
  CHECK(cutoff_weight(2.55, 1.7, 2.55) == 0.0);
  CHECK(cutoff_weight_derivative(1.7, 1.7, 2.55) == doctest::Approx(0.0));
  CHECK(cutoff_weight_derivative(2.55, 1.7, 2.55) == doctest::Approx(0.0));
  CHECK_THROWS_AS(cutoff_field(m, 2.0, 2.0), BadRadii);
}

TEST_CASE("cutoff_field: backward flow stays in the r_zero ball") {
  const auto m = example_registry("limit_cycle_squared_output");
  const auto cut = cutoff_field(m, 1.7, 2.55);
  for (double theta : {0.0, 0.8, 2.0, 3.5, 5.0}) {
    const Vec x = 1.7 * vec({std::cos(theta), std::sin(theta)});
    const auto traj = integrate(cut, x, 0.0, -50.0, 1e-2);
    for (const auto& s : traj.states) CHECK(s.norm() <= 2.55 + 1e-9);
  }
}

TEST_CASE("cutoff_field: trajectories agree with the original inside r_keep") {
  const auto m = example_registry("limit_cycle_squared_output");
  const auto cut = cutoff_field(m, 1.7, 2.55);
  const auto a = integrate(m, vec({0.3, 0.2}), 0.0, 3.0, 1e-3);
  const auto b = integrate(cut, vec({0.3, 0.2}), 0.0, 3.0, 1e-3);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a.states[i] - b.states[i]).norm() == 0.0);
}

TEST_CASE("DomainSpec: validation, membership, grid") {
  CHECK_THROWS_AS(DomainSpec::annulus(vec({0, 0}), 0.0, 1.0).validate(), ConfigError);
  CHECK_THROWS_AS(DomainSpec::annulus(vec({0, 0}), 1.0, 0.5).validate(), ConfigError);
  const auto ann = DomainSpec::annulus(vec({0, 0}), 0.5, 1.7, 40);
  CHECK(ann.contains(vec({1.0, 0.0})));
  CHECK_FALSE(ann.contains(vec({0.1, 0.0})));
  CHECK((ann.project(vec({0.1, 0.0})) - vec({0.5, 0.0})).norm() < 1e-15);
  for (const auto& x : ann.grid()) CHECK(ann.contains(x));
  const auto box = DomainSpec::box(vec({-1}), vec({1}), 5);
  const auto g = box.grid();
  REQUIRE(g.size() == 5);
  CHECK(g[0](0) == -1.0);
  CHECK(g[4](0) == 1.0);
  CHECK(box.grid_spacing() == 0.5);
}

TEST_CASE("split circle branches: exchange after one loop") {
  const auto b0 = split_circle_branches(0.0);
  const auto b1 = split_circle_branches(1.0 - 1e-9);
  CHECK((b1[0] - b0[1]).norm() < 1e-8);
  CHECK((b1[1] - b0[0]).norm() < 1e-8);
}
