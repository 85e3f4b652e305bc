#include "setkkl/dynsys.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace setkkl {

DomainSpec DomainSpec::box(Vec lower, Vec upper, int resolution) {
  DomainSpec d;
  d.kind = DomainKind::box;
  d.lower = std::move(lower);
  d.upper = std::move(upper);
  d.grid_resolution = resolution;
  d.validate();
  return d;
}

DomainSpec DomainSpec::ball(Vec center, double radius, int resolution) {
  DomainSpec d;
  d.kind = DomainKind::ball;
  d.center = std::move(center);
  d.r_outer = radius;
  d.grid_resolution = resolution;
  d.validate();
  return d;
}

DomainSpec DomainSpec::annulus(Vec center, double r_inner, double r_outer, int resolution) {
  DomainSpec d;
  d.kind = DomainKind::annulus;
  d.center = std::move(center);
  d.r_inner = r_inner;
  d.r_outer = r_outer;
  d.grid_resolution = resolution;
  d.validate();
  return d;
}

int DomainSpec::dim() const {
  return static_cast<int>(kind == DomainKind::box ? lower.size() : center.size());
}

void DomainSpec::validate() const {
  if (grid_resolution < 1) throw ConfigError("domain: grid_resolution must be >= 1");
  switch (kind) {
    case DomainKind::box:
      if (lower.size() == 0 || lower.size() != upper.size())
        throw ConfigError("domain: box corners must be nonempty and of equal length");
      if ((upper.array() <= lower.array()).any())
        throw ConfigError("domain: box upper corner must exceed lower corner on every axis");
      break;
    case DomainKind::ball:
      if (center.size() == 0) throw ConfigError("domain: ball center is empty");
      if (!(r_outer > 0)) throw ConfigError("domain: ball radius must be positive");
      break;
    case DomainKind::annulus:
      if (center.size() == 0) throw ConfigError("domain: annulus center is empty");
      if (!(r_inner > 0) || !(r_inner < r_outer))
        throw ConfigError("domain: annulus requires 0 < inner radius < outer radius");
      break;
  }
}

bool DomainSpec::contains(const Vec& x, double slack) const {
  switch (kind) {
    case DomainKind::box:
      return ((x.array() >= lower.array() - slack) && (x.array() <= upper.array() + slack)).all();
    case DomainKind::ball:
      return (x - center).norm() <= r_outer + slack;
    case DomainKind::annulus: {
      const double r = (x - center).norm();
      return r >= r_inner - slack && r <= r_outer + slack;
    }
  }
  return false;
}

Vec DomainSpec::project(const Vec& x) const {
  switch (kind) {
    case DomainKind::box:
      return x.cwiseMax(lower).cwiseMin(upper);
    case DomainKind::ball: {
      const Vec d = x - center;
      const double r = d.norm();
      return r <= r_outer ? x : Vec(center + d * (r_outer / r));
    }
    case DomainKind::annulus: {
      Vec d = x - center;
      const double r = d.norm();
      if (r == 0) {
        d = Vec::Zero(x.size());
        d(0) = r_inner;
        return center + d;
      }
      const double rc = std::clamp(r, r_inner, r_outer);
      return rc == r ? x : Vec(center + d * (rc / r));
    }
  }
  return x;
}

double DomainSpec::bounding_radius() const {
  if (kind == DomainKind::box) return lower.cwiseAbs().cwiseMax(upper.cwiseAbs()).norm();
  return center.norm() + r_outer;
}

Vec DomainSpec::bbox_lower() const {
  if (kind == DomainKind::box) return lower;
  return center.array() - r_outer;
}

Vec DomainSpec::bbox_upper() const {
  if (kind == DomainKind::box) return upper;
  return center.array() + r_outer;
}

double DomainSpec::grid_spacing() const {
  const double width = (bbox_upper() - bbox_lower()).maxCoeff();
  return grid_resolution > 1 ? width / (grid_resolution - 1) : width;
}

std::vector<Vec> DomainSpec::grid(std::vector<long>* lattice_index) const {
  const int n = dim();
  const Vec lo = bbox_lower();
  const Vec hi = bbox_upper();
  const int res = grid_resolution;
  long total = 1;
  for (int i = 0; i < n; ++i) total *= res;

  std::vector<Vec> out;
  if (lattice_index) lattice_index->clear();
  std::vector<int> idx(n, 0);
  Vec x(n);
  for (long lin = 0; lin < total; ++lin) {
    long rem = lin;
    for (int a = n - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(rem % res);
      rem /= res;
    }
    for (int a = 0; a < n; ++a) {
      x(a) = res == 1 ? 0.5 * (lo(a) + hi(a))
                      : lo(a) + (hi(a) - lo(a)) * static_cast<double>(idx[a]) / (res - 1);
    }
    if (contains(x, 1e-12)) {
      out.push_back(x);
      if (lattice_index) lattice_index->push_back(lin);
    }
  }
  return out;
}

Vec SystemModel::eval_f(const Vec& x) const {
  Vec out(n_x);
  f(x, out);
  return out;
}

Vec SystemModel::eval_h(const Vec& x) const {
  Vec out(n_y);
  h(x, out);
  return out;
}

Mat finite_difference_jacobian(const VecFn& fn, int m, const Vec& x) {
  const int n = static_cast<int>(x.size());
  Mat jac(m, n);
  Vec xp = x, xm = x, fp(m), fm(m);
  const double step = 1e-6 * std::max(1.0, x.norm());
  for (int j = 0; j < n; ++j) {
    xp(j) = x(j) + step;
    xm(j) = x(j) - step;
    fn(xp, fp);
    fn(xm, fm);
    jac.col(j) = (fp - fm) / (2 * step);
    xp(j) = x(j);
    xm(j) = x(j);
  }
  return jac;
}

Mat SystemModel::jacobian_f(const Vec& x) const {
  if (!df) return finite_difference_jacobian(f, n_x, x);
  Mat out(n_x, n_x);
  df(x, out);
  return out;
}

Mat SystemModel::jacobian_h(const Vec& x) const {
  if (!dh) return finite_difference_jacobian(h, n_y, x);
  Mat out(n_y, n_x);
  dh(x, out);
  return out;
}

double OutputSignal::t_min() const { return std::min(times.front(), times.back()); }
double OutputSignal::t_max() const { return std::max(times.front(), times.back()); }

Vec OutputSignal::at(double t) const {
  if (times.empty()) throw SignalGap("output signal is empty");
  if (t < t_min() || t > t_max()) {
    std::ostringstream msg;
    msg << "query t=" << t << " outside signal coverage [" << t_min() << ", " << t_max() << "]";
    throw SignalGap(msg.str());
  }
  if (times.size() == 1) return values.front();
  const bool ascending = times.back() > times.front();
  auto it = ascending ? std::lower_bound(times.begin(), times.end(), t)
                      : std::lower_bound(times.begin(), times.end(), t, std::greater<>());
  const auto i = static_cast<std::size_t>(it - times.begin());
  if (i < times.size() && times[i] == t) return values[i];
  const std::size_t hi = std::min(i, times.size() - 1);
  const std::size_t lo = hi - 1;
  const double w = (t - times[lo]) / (times[hi] - times[lo]);
  return (1 - w) * values[lo] + w * values[hi];
}

namespace {

void rk4_step(const SystemModel& system, Vec& x, double h, Vec& k1, Vec& k2, Vec& k3, Vec& k4, Vec& tmp) {
  system.f(x, k1);
  tmp = x + 0.5 * h * k1;
  system.f(tmp, k2);
  tmp = x + 0.5 * h * k2;
  system.f(tmp, k3);
  tmp = x + h * k3;
  system.f(tmp, k4);
  x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

void check_finite(const Vec& x, double t) {
  if (!x.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite state at t=" << t << "; apply cutoff_field before integrating";
    throw NonFiniteState(msg.str());
  }
}

void check_step(double step) {
  if (!(step > 0) || !std::isfinite(step)) throw ConfigError("integration step must be positive");
}

}  // namespace

Trajectory integrate(const SystemModel& system, const Vec& x0, double t0, double t1, double step) {
  check_step(step);
  if (t0 == t1) throw ConfigError("integrate: t0 and t1 must differ");
  check_finite(x0, t0);
  const double span = std::abs(t1 - t0);
  const double sign = t1 > t0 ? 1.0 : -1.0;
  const auto n_full = static_cast<long>(std::floor(span / step * (1 + 1e-12)));
  const double rest = span - static_cast<double>(n_full) * step;
  const long n_steps = n_full + (rest > 1e-12 * step ? 1 : 0);

  Trajectory traj;
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);
  traj.times.push_back(t0);
  traj.states.push_back(x0);

  const int n = system.n_x;
  Vec x = x0, k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (long i = 0; i < n_steps; ++i) {
    const bool last = i == n_steps - 1;
    const double t_next = last ? t1 : t0 + sign * static_cast<double>(i + 1) * step;
    const double h = t_next - traj.times.back();
    rk4_step(system, x, h, k1, k2, k3, k4, tmp);
    check_finite(x, t_next);
    traj.times.push_back(t_next);
    traj.states.push_back(x);
  }
  return traj;
}

Vec flow(const SystemModel& system, const Vec& x, double duration, Direction direction, double step) {
  if (duration < 0) throw ConfigError("flow: duration must be nonnegative");
  check_step(step);
  if (duration == 0) return x;
  const auto n_full = static_cast<long>(std::floor(duration / step * (1 + 1e-12)));
  const double rest = duration - static_cast<double>(n_full) * step;
  const double sign = direction == Direction::forward ? 1.0 : -1.0;
  const int n = system.n_x;
  Vec y = x, k1(n), k2(n), k3(n), k4(n), tmp(n);
  for (long i = 0; i < n_full; ++i) {
    rk4_step(system, y, sign * step, k1, k2, k3, k4, tmp);
    check_finite(y, sign * static_cast<double>(i + 1) * step);
  }
  if (rest > 1e-12 * step) {
    rk4_step(system, y, sign * rest, k1, k2, k3, k4, tmp);
    check_finite(y, sign * duration);
  }
  return y;
}

OutputSignal output_along(const SystemModel& system, const Trajectory& traj) {
  if (traj.times.empty()) throw ConfigError("output_along: empty trajectory");
  OutputSignal out;
  out.times = traj.times;
  out.values.reserve(traj.states.size());
  for (const auto& x : traj.states) out.values.push_back(system.eval_h(x));
  return out;
}

double cutoff_weight(double r, double r_keep, double r_zero) {
  if (r <= r_keep) return 1.0;
  if (r >= r_zero) return 0.0;
  const double t = (r - r_keep) / (r_zero - r_keep);
  return 1.0 - t * t * (3.0 - 2.0 * t);
}

double cutoff_weight_derivative(double r, double r_keep, double r_zero) {
  if (r <= r_keep || r >= r_zero) return 0.0;
  const double t = (r - r_keep) / (r_zero - r_keep);
  return 6.0 * t * (t - 1.0) / (r_zero - r_keep);
}

SystemModel cutoff_field(const SystemModel& system, double r_keep, double r_zero) {
  if (!(r_keep < r_zero) || !(r_keep > 0)) {
    std::ostringstream msg;
    msg << "cutoff radii must satisfy 0 < r_keep < r_zero (got " << r_keep << ", " << r_zero << ")";
    throw BadRadii(msg.str());
  }
  if (system.domain.dim() > 0 && system.domain.bounding_radius() > r_keep * (1 + 1e-12)) {
    std::ostringstream msg;
    msg << "domain of '" << system.name << "' (radius " << system.domain.bounding_radius()
        << ") is not inside the kept ball r_keep=" << r_keep;
    throw BadRadii(msg.str());
  }

  SystemModel cut = system;
  const VecFn f0 = system.f;
  const int n = system.n_x;
  cut.f = [f0, r_keep, r_zero](Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out) {
    const double s = cutoff_weight(x.norm(), r_keep, r_zero);
    if (s == 0.0) {
      out.setZero();
      return;
    }
    f0(x, out);
    if (s != 1.0) out *= s;
  };
  if (system.df) {
    const JacFn df0 = system.df;
    cut.df = [f0, df0, r_keep, r_zero, n](Eigen::Ref<const Vec> x, Eigen::Ref<Mat> out) {
      const double r = x.norm();
      const double s = cutoff_weight(r, r_keep, r_zero);
      if (s == 0.0) {
        out.setZero();
        return;
      }
      df0(x, out);
      if (s == 1.0) return;
      out *= s;
      const double ds = cutoff_weight_derivative(r, r_keep, r_zero);
      Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 16, 1> fx(n);
      f0(x, fx);
      out.noalias() += (ds / r) * fx * x.transpose();
    };
  }
  cut.cutoff = CutoffInfo{r_keep, r_zero};
  cut.name = system.name;
  return cut;
}

std::vector<Vec> split_circle_branches(double t) {
  Vec f(2), g(2);
  f << 2.0 - t, 4.0 - t;
  g << 1.0 + t, 3.0 + t * std::exp(t - 1.0);
  return {f, g};
}

}  // namespace setkkl
