#pragma once

// Plant models, fixed-step RK4 integration and radial field cutoff.
//
// A SystemModel carries x' = f(x), y = h(x) as callbacks writing into caller
// buffers, so the hot integration loops in the transform module never
// allocate. Jacobians are optional; when absent they are approximated by
// central differences with step 1e-6 * max(1, |x|).

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "setkkl/errors.hpp"

namespace setkkl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

using VecFn = std::function<void(Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out)>;
using JacFn = std::function<void(Eigen::Ref<const Vec> x, Eigen::Ref<Mat> out)>;
// Ground-truth indistinguishable set of a state, when known in closed form.
using IndistFn = std::function<std::vector<Vec>(const Vec& x)>;

enum class DomainKind { box, ball, annulus };

struct DomainSpec {
  DomainKind kind = DomainKind::box;
  Vec lower;           // box
  Vec upper;           // box
  Vec center;          // ball / annulus
  double r_inner = 0;  // annulus
  double r_outer = 0;  // ball / annulus
  int grid_resolution = 20;

  static DomainSpec box(Vec lower, Vec upper, int resolution = 20);
  static DomainSpec ball(Vec center, double radius, int resolution = 20);
  static DomainSpec annulus(Vec center, double r_inner, double r_outer, int resolution = 20);

  int dim() const;
  // Throws ConfigError when the interior would be empty.
  void validate() const;
  bool contains(const Vec& x, double slack = 1e-9) const;
  // Nearest point of the domain (radial clamp for balls and annuli).
  Vec project(const Vec& x) const;
  // Largest |x| over the domain.
  double bounding_radius() const;
  Vec bbox_lower() const;
  Vec bbox_upper() const;
  // Lattice spacing along the widest axis of the bounding box.
  double grid_spacing() const;

  // Row-major lattice over the bounding box (first coordinate slowest),
  // filtered to domain points. `lattice_index`, when given, receives the
  // linear lattice index of each returned point.
  std::vector<Vec> grid(std::vector<long>* lattice_index = nullptr) const;
};

struct CutoffInfo {
  double r_keep = 0;
  double r_zero = 0;
};

struct SystemModel {
  std::string name;
  int n_x = 0;
  int n_y = 0;
  VecFn f;
  VecFn h;
  JacFn df;  // optional
  JacFn dh;  // optional
  DomainSpec domain;
  IndistFn indistinguishable;  // optional
  std::optional<CutoffInfo> cutoff;

  Vec eval_f(const Vec& x) const;
  Vec eval_h(const Vec& x) const;
  Mat jacobian_f(const Vec& x) const;
  Mat jacobian_h(const Vec& x) const;
  bool has_analytic_jacobians() const { return static_cast<bool>(df) && static_cast<bool>(dh); }
};

// Central-difference Jacobian of `fn` (m outputs) at x.
Mat finite_difference_jacobian(const VecFn& fn, int m, const Vec& x);

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;

  std::size_t size() const { return times.size(); }
  const Vec& back() const { return states.back(); }
};

// Piecewise-linear signal; exact at stored nodes.
struct OutputSignal {
  std::vector<double> times;
  std::vector<Vec> values;

  double t_min() const;
  double t_max() const;
  Vec at(double t) const;
};

enum class Direction { forward, backward };

// Classical RK4 from t0 to t1 (t1 < t0 integrates backward). The last step is
// shortened so the final node lands on t1.
Trajectory integrate(const SystemModel& system, const Vec& x0, double t0, double t1, double step);

// Endpoint of integrate over [0, duration] in the given direction.
Vec flow(const SystemModel& system, const Vec& x, double duration, Direction direction, double step);

OutputSignal output_along(const SystemModel& system, const Trajectory& traj);

// C1 radial bump: 1 on [0, r_keep], 0 on [r_zero, inf), cubic Hermite between.
double cutoff_weight(double r, double r_keep, double r_zero);
double cutoff_weight_derivative(double r, double r_keep, double r_zero);

// f_cut(x) = sigma(|x|) f(x). Balls of radius >= r_zero are invariant both ways.
SystemModel cutoff_field(const SystemModel& system, double r_keep, double r_zero);

// Registered models: limit_cycle_squared_output, sine_pair_map,
// rescaled_limit_cycle, harmonic_oscillator, static.
SystemModel example_registry(const std::string& name);
std::vector<std::string> example_names();

// Two-valued map on the unit circle whose branches exchange after one loop:
// t in [0,1) -> {(2-t, 4-t), (1+t, 3+t e^{t-1})}.
std::vector<Vec> split_circle_branches(double t);

}  // namespace setkkl
