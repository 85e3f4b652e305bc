#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "setkkl/transform.hpp"

namespace testing {

using setkkl::Mat;
using setkkl::Vec;

inline Vec vec(std::initializer_list<double> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

// x' = rate * x, y = x.
inline setkkl::SystemModel scalar_linear(double rate) {
  setkkl::SystemModel m;
  m.name = "scalar_linear";
  m.n_x = 1;
  m.n_y = 1;
  m.f = [rate](Eigen::Ref<const Vec> x, Eigen::Ref<Vec> dx) { dx = rate * x; };
  m.h = [](Eigen::Ref<const Vec> x, Eigen::Ref<Vec> y) { y = x; };
  m.domain = setkkl::DomainSpec::box(vec({-1}), vec({1}), 11);
  return m;
}

// The squared-output limit cycle with the cutoff and filter pair used throughout the suite.
inline setkkl::TransformField limit_cycle_field(double k = 1.0) {
  auto sys = setkkl::example_registry("limit_cycle_squared_output");
  auto cut = setkkl::cutoff_field(sys, 1.7, 2.55);
  auto pair = setkkl::make_filter_pair(2, 3, {-1.0, -2.0, -3.0});
  setkkl::TransformOptions opt;
  opt.k = k;
  return setkkl::TransformField(cut, pair, opt);
}

// M solving M S - A M = B C via the Kronecker form of the Sylvester equation.
inline Mat sylvester(const Mat& S, const Mat& A, const Mat& BC) {
  const Eigen::Index nz = A.rows();
  const Eigen::Index nx = S.rows();
  const Mat I_z = Mat::Identity(nz, nz);
  Mat K = Mat::Zero(nz * nx, nz * nx);
  for (Eigen::Index i = 0; i < nx; ++i) {
    for (Eigen::Index j = 0; j < nx; ++j) K.block(j * nz, i * nz, nz, nz) += S(i, j) * I_z;
    K.block(i * nz, i * nz, nz, nz) -= A;
  }
  const Vec rhs = Eigen::Map<const Vec>(BC.data(), BC.size());
  const Vec m = K.fullPivLu().solve(rhs);
  return Eigen::Map<const Mat>(m.data(), nz, nx);
}

}  // namespace testing
