#include "setkkl/observer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "setkkl/csv.hpp"
#include "setkkl/distinguish.hpp"
#include "setkkl/rng.hpp"

namespace setkkl {

std::string noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::none: return "none";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::sinusoid: return "sinusoid";
  }
  return "none";
}

NoiseKind parse_noise_kind(const std::string& name) {
  if (name == "none") return NoiseKind::none;
  if (name == "uniform") return NoiseKind::uniform;
  if (name == "sinusoid") return NoiseKind::sinusoid;
  throw ConfigError("noise.kind: expected none, uniform or sinusoid, got '" + name + "'");
}

void NoiseSpec::validate() const {
  if (!(amplitude >= 0)) throw ConfigError("noise.amplitude must be nonnegative");
  if (!std::isfinite(frequency)) throw ConfigError("noise.frequency must be finite");
}

NoiseSource::NoiseSource(const NoiseSpec& spec, int n_y) : spec_(spec), n_y_(n_y), rng_(spec.seed), phase_(n_y) {
  spec_.validate();
  for (int j = 0; j < n_y_; ++j) phase_(j) = 2 * std::numbers::pi * uniform01(rng_);
}

Vec NoiseSource::sample(double t) {
  Vec nu = Vec::Zero(n_y_);
  switch (spec_.kind) {
    case NoiseKind::none:
      break;
    case NoiseKind::uniform:
      for (int j = 0; j < n_y_; ++j) nu(j) = spec_.amplitude * (2 * uniform01(rng_) - 1);
      break;
    case NoiseKind::sinusoid:
      for (int j = 0; j < n_y_; ++j) nu(j) = spec_.amplitude * std::sin(spec_.frequency * t + phase_(j));
      break;
  }
  return nu;
}

Trajectory run_filter(const FilterPair& pair, const OutputSignal& y, const Vec& z0, double step, double k) {
  if (!(step > 0)) throw ConfigError("run_filter: step must be positive");
  if (z0.size() != pair.n_z()) throw LengthMismatch("run_filter: z0 has the wrong dimension");
  if (y.times.empty()) throw SignalGap("run_filter: empty output signal");
  const Mat A = k * pair.A;
  const double t0 = y.times.front();
  const double t1 = y.times.back();
  Trajectory out;
  out.times.push_back(t0);
  out.states.push_back(z0);
  if (t1 == t0) return out;
  const double span = std::abs(t1 - t0);
  const double sign = t1 > t0 ? 1.0 : -1.0;
  const auto n_full = static_cast<long>(std::floor(span / step * (1 + 1e-12)));
  const long n_steps = n_full + (span - static_cast<double>(n_full) * step > 1e-12 * step ? 1 : 0);
  auto rhs = [&](const Vec& z, double t) -> Vec { return A * z + pair.B * y.at(t); };
  Vec z = z0;
  for (long i = 0; i < n_steps; ++i) {
    const double t = out.times.back();
    const double t_next = i == n_steps - 1 ? t1 : t0 + sign * static_cast<double>(i + 1) * step;
    const double h = t_next - t;
    const double t_mid = t + 0.5 * h;
    const Vec k1 = rhs(z, t);
    const Vec k2 = rhs(z + 0.5 * h * k1, t_mid);
    const Vec k3 = rhs(z + 0.5 * h * k2, t_mid);
    const Vec k4 = rhs(z + h * k3, t_next);
    z += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
    out.times.push_back(t_next);
    out.states.push_back(z);
  }
  return out;
}

SelectionResult continuous_selection(const std::vector<PointSet>& estimates, const Vec& initial_guess,
                                     double jump_tol) {
  SelectionResult sel;
  sel.jump_tol = jump_tol;
  Vec current = initial_guess;
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const PointSet& est = estimates[i];
    if (est.empty()) {
      sel.gaps.push_back(static_cast<int>(i));
    } else {
      PointSet prev;
      prev.points.push_back(current);
      const auto m = match_branches(prev, est);
      for (std::size_t k = 0; k < m.pairing.size(); ++k) {
        if (m.pairing[k] == 0) {
          current = est.points[k];
          break;
        }
      }
    }
    if (i > 0) {
      sel.jumps.push_back((current - sel.path.back()).norm());
      sel.max_jump = std::max(sel.max_jump, sel.jumps.back());
    }
    sel.path.push_back(current);
  }
  sel.continuous = sel.max_jump <= jump_tol;
  return sel;
}

namespace {

PointSet to_point_set(std::vector<Vec> pts, double merge_radius) {
  PointSet s;
  s.merge_radius = merge_radius;
  for (auto& p : pts) {
    bool dup = false;
    for (const auto& q : s.points) dup = dup || (p - q).norm() <= 1e-12;
    if (!dup) s.points.push_back(std::move(p));
  }
  return s;
}

std::vector<Vec> extrapolated_warm_starts(const std::vector<PointSet>& estimates, double radius) {
  std::vector<Vec> warm;
  const std::size_t n = estimates.size();
  if (n == 0) return warm;
  const PointSet& last = estimates[n - 1];
  if (n == 1 || estimates[n - 2].empty() || last.empty()) return last.points;
  const auto m = match_branches(estimates[n - 2], last);
  for (std::size_t k = 0; k < last.size(); ++k) {
    const Vec& p = last.points[k];
    const int j = m.pairing[k];
    if (j >= 0 && (p - estimates[n - 2].points[j]).norm() <= radius) {
      warm.push_back(2 * p - estimates[n - 2].points[j]);
    } else {
      warm.push_back(p);
    }
  }
  return warm;
}

}  // namespace

ObserverRun run_set_observer(const TransformField& field, const ImageAtlas& atlas, const Vec& x0, const Vec& z0,
                             const ObserverOptions& opts, const InversionConfig& cfg, const IndistFn& indist) {
  const SystemModel& sys = field.system();
  if (!(opts.horizon >= 0)) throw ConfigError("observer.horizon must be nonnegative");
  if (!(opts.step > 0)) throw ConfigError("observer.step must be positive");
  if (opts.decimation < 1) throw ConfigError("observer.decimation must be >= 1");
  if (x0.size() != sys.n_x) throw LengthMismatch("observer: x0 has the wrong dimension");
  if (z0.size() != field.n_z()) throw LengthMismatch("observer: z0 has the wrong dimension");
  if (!atlas.domain.contains(x0)) throw ConfigError("observer: x0 lies outside the domain");
  opts.noise.validate();
  cfg.validate();

  // Plant and output on the half-step grid.
  const double fine = 0.5 * opts.step;
  Trajectory plant;
  if (opts.horizon > 0) {
    plant = integrate(sys, x0, 0.0, opts.horizon, fine);
  } else {
    plant.times = {0.0};
    plant.states = {x0};
  }
  NoiseSource noise(opts.noise, sys.n_y);
  OutputSignal y;
  y.times = plant.times;
  for (std::size_t i = 0; i < plant.size(); ++i) y.values.push_back(sys.eval_h(plant.states[i]) + noise.sample(plant.times[i]));
  const Trajectory filter = run_filter(field.pair(), y, z0, opts.step, field.k());

  IndistFn truth_map = indist;
  ObserverRun run;
  run.truth_provenance = "analytic";
  if (!truth_map) {
    if (sys.indistinguishable) {
      truth_map = sys.indistinguishable;
    } else {
      truth_map = make_oracle_indist(sys, atlas.domain, default_oracle_horizon(sys, atlas.domain, opts.step), 1e-3,
                                     opts.step);
      run.truth_provenance = "oracle";
    }
  }

  for (std::size_t i = 0; i < filter.size(); i += opts.decimation) {
    const double t = filter.times[i];
    const auto j = std::min<std::size_t>(plant.size() - 1, static_cast<std::size_t>(std::llround(t / fine)));
    const Vec& x = plant.states[j];
    const Vec& z = filter.states[i];
    run.times.push_back(t);
    run.z_states.push_back(z);
    run.truth.times.push_back(t);
    run.truth.states.push_back(x);
    const auto warm = extrapolated_warm_starts(run.estimates, cfg.cluster_radius);
    run.estimates.push_back(extend_inverse(field, atlas, z, cfg, warm));
    run.indist_truth.push_back(to_point_set(truth_map(x), cfg.cluster_radius));
    run.hausdorff_series.push_back(hausdorff(run.estimates.back(), run.indist_truth.back()).d_H);
    run.z_error_series.push_back((z - field.evaluate(x)).norm());
    if (!atlas.domain.contains(x)) run.domain_exits.push_back(static_cast<int>(run.times.size() - 1));
  }

  double max_truth_step = 0;
  for (std::size_t i = 1; i < run.truth.size(); ++i)
    max_truth_step = std::max(max_truth_step, (run.truth.states[i] - run.truth.states[i - 1]).norm());
  const Vec guess = opts.initial_guess ? *opts.initial_guess
                                       : Vec(0.5 * (atlas.domain.bbox_lower() + atlas.domain.bbox_upper()));
  run.selection = continuous_selection(run.estimates, guess, 5 * max_truth_step);
  for (std::size_t i = 0; i < run.times.size(); ++i) {
    std::vector<double> errs;
    for (const auto& p : run.indist_truth[i].points) errs.push_back((run.selection.path[i] - p).norm());
    run.selection_error_series.push_back(std::move(errs));
  }
  return run;
}

SlopeFit fit_decay_slope(const std::vector<double>& times, const std::vector<double>& series, double lo, double hi) {
  SlopeFit fit;
  if (series.empty() || !(series[0] > 0)) return fit;
  const double ref = series[0];
  std::size_t begin = 0;
  while (begin < series.size() && series[begin] / ref > hi) ++begin;
  std::size_t end = begin;
  for (std::size_t i = begin; i < series.size(); ++i)
    if (series[i] / ref >= lo) end = i + 1;
  const auto n = static_cast<int>(end - begin);
  if (n < 2) return fit;
  double st = 0, sl = 0, stt = 0, stl = 0;
  for (std::size_t i = begin; i < end; ++i) {
    const double l = std::log(series[i]);
    st += times[i];
    sl += l;
    stt += times[i] * times[i];
    stl += times[i] * l;
  }
  const double denom = n * stt - st * st;
  fit.slope = (n * stl - st * sl) / denom;
  fit.intercept = (sl - fit.slope * st) / n;
  fit.samples = n;
  fit.t_begin = times[begin];
  fit.t_end = times[end - 1];
  return fit;
}

double terminal_max(const std::vector<double>& times, const std::vector<double>& series, double fraction) {
  if (times.empty()) throw EmptySet("terminal_max: empty series");
  const double cut = times.back() - fraction * (times.back() - times.front());
  double m = 0;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] >= cut) m = std::max(m, series[i]);
  return m;
}

std::vector<IssRow> iss_sweep(const TransformField& field, const ImageAtlas& atlas, const Vec& x0, const Vec& z0,
                              const ObserverOptions& base, const std::vector<double>& amplitudes,
                              const InversionConfig& cfg) {
  for (std::size_t i = 0; i < amplitudes.size(); ++i) {
    if (!(amplitudes[i] >= 0)) throw ConfigError("iss_sweep: amplitudes must be nonnegative");
    if (i > 0 && amplitudes[i] < amplitudes[i - 1]) throw ConfigError("iss_sweep: amplitudes must be sorted");
  }
  std::vector<IssRow> rows;
  for (double a : amplitudes) {
    ObserverOptions opts = base;
    opts.noise.amplitude = a;
    if (opts.noise.kind == NoiseKind::none) opts.noise.kind = NoiseKind::uniform;
    const auto run = run_set_observer(field, atlas, x0, z0, opts, cfg);
    rows.push_back({a, terminal_max(run.times, run.hausdorff_series)});
  }
  return rows;
}

namespace {

// Distance between segments [p0, p1] and [q0, q1] in any dimension.
double segment_distance(const Vec& p0, const Vec& p1, const Vec& q0, const Vec& q1) {
  const Vec d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0, t = 0;
  if (a <= 1e-300 && e <= 1e-300) return r.norm();
  if (a <= 1e-300) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-300) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2), denom = a * e - b * b;
      s = denom > 0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return (p0 + s * d1 - (q0 + t * d2)).norm();
}

}  // namespace

ShortArcReport short_arc_check(const std::vector<Vec>& z_path, int window, double tol) {
  ShortArcReport rep;
  rep.window = window;
  rep.tol = tol;
  const int segs = static_cast<int>(z_path.size()) - 1;
  for (int a = 0; a < segs; ++a)
    for (int b = a + 2; b < std::min(segs, a + window); ++b)
      if (segment_distance(z_path[a], z_path[a + 1], z_path[b], z_path[b + 1]) < tol) ++rep.near_crossings;
  return rep;
}

std::string run_csv(const ObserverRun& run) {
  CsvWriter w;
  const Eigen::Index nz = run.z_states.empty() ? 0 : run.z_states[0].size();
  const Eigen::Index nx = run.truth.states.empty() ? 0 : run.truth.states[0].size();
  std::size_t branches = 0;
  for (const auto& e : run.selection_error_series) branches = std::max(branches, e.size());
  std::vector<std::string> head{"t"};
  for (Eigen::Index i = 0; i < nz; ++i) head.push_back("z_" + std::to_string(i + 1));
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_true_" + std::to_string(i + 1));
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("selection_" + std::to_string(i + 1));
  head.push_back("hausdorff");
  head.push_back("z_error");
  for (std::size_t b = 0; b < branches; ++b) head.push_back("err_branch_" + std::to_string(b + 1));
  w.header(head);
  std::vector<std::string> row;
  for (std::size_t r = 0; r < run.times.size(); ++r) {
    row.clear();
    row.push_back(format_double(run.times[r]));
    for (Eigen::Index i = 0; i < nz; ++i) row.push_back(format_double(run.z_states[r](i)));
    for (Eigen::Index i = 0; i < nx; ++i) row.push_back(format_double(run.truth.states[r](i)));
    for (Eigen::Index i = 0; i < nx; ++i) row.push_back(format_double(run.selection.path[r](i)));
    row.push_back(format_double(run.hausdorff_series[r]));
    row.push_back(format_double(run.z_error_series[r]));
    for (std::size_t b = 0; b < branches; ++b) {
      const auto& e = run.selection_error_series[r];
      row.push_back(b < e.size() ? format_double(e[b]) : std::string());
    }
    w.row(row);
  }
  return w.str();
}

std::string estimates_csv(const ObserverRun& run) {
  CsvWriter w;
  const Eigen::Index nx = run.truth.states.empty() ? 0 : run.truth.states[0].size();
  std::vector<std::string> head{"t", "branch"};
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_" + std::to_string(i + 1));
  w.header(head);
  std::vector<double> row;
  for (std::size_t r = 0; r < run.times.size(); ++r) {
    for (std::size_t b = 0; b < run.estimates[r].size(); ++b) {
      row.assign({run.times[r], static_cast<double>(b)});
      const Vec& p = run.estimates[r].points[b];
      row.insert(row.end(), p.data(), p.data() + p.size());
      w.row(row);
    }
  }
  return w.str();
}

std::string iss_csv(const std::vector<IssRow>& rows) {
  CsvWriter w;
  w.header({"amplitude", "floor"});
  for (const auto& r : rows) w.row({r.amplitude, r.floor});
  return w.str();
}

}  // namespace setkkl
