#include <cmath>
#include <numbers>

#include "setkkl/dynsys.hpp"

namespace setkkl {

namespace {

using Ref = Eigen::Ref<const Vec>;
using Out = Eigen::Ref<Vec>;
using JOut = Eigen::Ref<Mat>;

std::vector<Vec> antipodal_pair(const Vec& x) {
  if (x.norm() == 0) return {x};
  return {x, Vec(-x)};
}

void squared_output(Ref x, Out y) {
  y(0) = x(0) * x(0) - x(1) * x(1);
  y(1) = 2 * x(0) * x(1);
}

void squared_output_jacobian(Ref x, JOut j) {
  j(0, 0) = 2 * x(0);
  j(0, 1) = -2 * x(1);
  j(1, 0) = 2 * x(1);
  j(1, 1) = 2 * x(0);
}

void limit_cycle_field(Ref x, Out dx) {
  const double s = 1 - x.squaredNorm();
  dx(0) = x(1) + x(0) * s;
  dx(1) = -x(0) + x(1) * s;
}

void limit_cycle_jacobian(Ref x, JOut j) {
  const double s = 1 - x.squaredNorm();
  j(0, 0) = s - 2 * x(0) * x(0);
  j(0, 1) = 1 - 2 * x(0) * x(1);
  j(1, 0) = -1 - 2 * x(0) * x(1);
  j(1, 1) = s - 2 * x(1) * x(1);
}

SystemModel limit_cycle_squared_output() {
  SystemModel m;
  m.name = "limit_cycle_squared_output";
  m.n_x = 2;
  m.n_y = 2;
  m.f = limit_cycle_field;
  m.df = limit_cycle_jacobian;
  m.h = squared_output;
  m.dh = squared_output_jacobian;
  m.domain = DomainSpec::ball(Vec::Zero(2), 1.7, 60);
  m.indistinguishable = antipodal_pair;
  return m;
}

// phi(q) = (1 - q)^2 for q < 1, 0 otherwise; evaluated at q = |x|^2.
SystemModel rescaled_limit_cycle() {
  SystemModel m;
  m.name = "rescaled_limit_cycle";
  m.n_x = 2;
  m.n_y = 2;
  m.f = [](Ref x, Out dx) {
    const double q = x.squaredNorm();
    const double phi = q < 1 ? (1 - q) * (1 - q) : 0.0;
    limit_cycle_field(x, dx);
    dx *= phi;
  };
  m.df = [](Ref x, JOut j) {
    const double q = x.squaredNorm();
    if (q >= 1) {
      j.setZero();
      return;
    }
    const double phi = (1 - q) * (1 - q);
    const double dphi = -2 * (1 - q);
    Eigen::Vector2d fx;
    limit_cycle_field(x, fx);
    limit_cycle_jacobian(x, j);
    j *= phi;
    j.noalias() += (2 * dphi) * fx * x.transpose();
  };
  m.h = squared_output;
  m.dh = squared_output_jacobian;
  m.domain = DomainSpec::ball(Vec::Zero(2), 2.0, 60);
  m.indistinguishable = antipodal_pair;
  return m;
}

SystemModel sine_pair_map() {
  SystemModel m;
  m.name = "sine_pair_map";
  m.n_x = 1;
  m.n_y = 2;
  m.f = [](Ref, Out dx) { dx.setZero(); };
  m.df = [](Ref, JOut j) { j.setZero(); };
  m.h = [](Ref x, Out y) {
    y(0) = std::sin(2 * x(0));
    y(1) = std::sin(x(0));
  };
  m.dh = [](Ref x, JOut j) {
    j(0, 0) = 2 * std::cos(2 * x(0));
    j(1, 0) = std::cos(x(0));
  };
  const double pi = std::numbers::pi;
  m.domain = DomainSpec::box(Vec::Constant(1, -pi), Vec::Constant(1, pi), 201);
  // With f = 0 the indistinguishable set is the level set of h on the
  // domain; it is {x} except at the triple point h = 0.
  m.indistinguishable = [pi](const Vec& x) -> std::vector<Vec> {
    const double s = std::abs(std::sin(x(0))) + std::abs(std::sin(2 * x(0)));
    if (s < 1e-12) return {Vec::Constant(1, -pi), Vec::Constant(1, 0.0), Vec::Constant(1, pi)};
    return {x};
  };
  return m;
}

SystemModel harmonic_oscillator() {
  SystemModel m;
  m.name = "harmonic_oscillator";
  m.n_x = 2;
  m.n_y = 1;
  m.f = [](Ref x, Out dx) {
    dx(0) = x(1);
    dx(1) = -x(0);
  };
  m.df = [](Ref, JOut j) { j << 0, 1, -1, 0; };
  m.h = [](Ref x, Out y) { y(0) = x(0); };
  m.dh = [](Ref, JOut j) { j << 1, 0; };
  m.domain = DomainSpec::ball(Vec::Zero(2), 1.5, 30);
  m.indistinguishable = [](const Vec& x) { return std::vector<Vec>{x}; };
  return m;
}

SystemModel static_identity() {
  SystemModel m;
  m.name = "static";
  m.n_x = 1;
  m.n_y = 1;
  m.f = [](Ref, Out dx) { dx.setZero(); };
  m.df = [](Ref, JOut j) { j.setZero(); };
  m.h = [](Ref x, Out y) { y = x; };
  m.dh = [](Ref, JOut j) { j.setIdentity(); };
  m.domain = DomainSpec::box(Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), 21);
  m.indistinguishable = [](const Vec& x) { return std::vector<Vec>{x}; };
  return m;
}

}  // namespace

std::vector<std::string> example_names() {
  return {"limit_cycle_squared_output", "sine_pair_map", "rescaled_limit_cycle", "harmonic_oscillator",
          "static"};
}

SystemModel example_registry(const std::string& name) {
  if (name == "limit_cycle_squared_output") return limit_cycle_squared_output();
  if (name == "sine_pair_map") return sine_pair_map();
  if (name == "rescaled_limit_cycle") return rescaled_limit_cycle();
  if (name == "harmonic_oscillator") return harmonic_oscillator();
  if (name == "static") return static_identity();
  throw UnknownExample("unknown example system '" + name + "'");
}

}  // namespace setkkl
