#pragma once

// The linear z-filter, set-valued estimates through the extended inverse,
// continuous selections by branch tracking, error series and noise sweeps.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "setkkl/setvalued.hpp"

namespace setkkl {

enum class NoiseKind { none, uniform, sinusoid };

std::string noise_kind_name(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double amplitude = 0;
  std::uint64_t seed = 0;
  double frequency = 3.0;  // rad per time unit, sinusoid only

  void validate() const;
};

// Deterministic noise samples nu(t_k) for successive nodes t_k.
class NoiseSource {
 public:
  NoiseSource(const NoiseSpec& spec, int n_y);
  Vec sample(double t);

 private:
  NoiseSpec spec_;
  int n_y_;
  std::mt19937_64 rng_;
  Vec phase_;
};

// RK4 for z' = k A z + B y(t) over the coverage of y, with y linearly
// interpolated at the stage times.
Trajectory run_filter(const FilterPair& pair, const OutputSignal& y, const Vec& z0, double step, double k = 1.0);

struct SelectionResult {
  std::vector<Vec> path;
  std::vector<double> jumps;  // |x_hat(t_{i+1}) - x_hat(t_i)|
  double max_jump = 0;
  double jump_tol = 0;
  bool continuous = false;
  std::vector<int> gaps;  // indices with an empty estimate
};

// x_hat(t_0) is the point of estimates[0] nearest `initial_guess`; each next
// value is the point of the next estimate paired with the previous value.
SelectionResult continuous_selection(const std::vector<PointSet>& estimates, const Vec& initial_guess,
                                     double jump_tol);

struct ObserverOptions {
  double horizon = 15.0;
  double step = 1e-3;
  int decimation = 10;
  NoiseSpec noise;
  std::optional<Vec> initial_guess;  // defaults to the domain centre
};

struct ObserverRun {
  std::vector<double> times;  // decimated grid
  std::vector<Vec> z_states;
  std::vector<PointSet> estimates;
  Trajectory truth;  // plant states on the decimated grid
  std::vector<PointSet> indist_truth;
  std::string truth_provenance;  // "analytic" or "oracle"
  std::vector<double> hausdorff_series;
  std::vector<double> z_error_series;  // |z - T(x)|
  std::vector<std::vector<double>> selection_error_series;  // [i][branch]
  SelectionResult selection;
  std::vector<int> domain_exits;  // decimated indices with x outside the domain
};

// Simulates the plant (step / 2 so filter midpoints fall on samples), feeds
// y = h(x) + nu to the filter and inverts every `decimation`-th z.
// `indist`, when set, overrides the system's analytic indistinguishable map.
ObserverRun run_set_observer(const TransformField& field, const ImageAtlas& atlas, const Vec& x0, const Vec& z0,
                             const ObserverOptions& opts, const InversionConfig& cfg, const IndistFn& indist = {});

struct SlopeFit {
  double slope = 0;
  double intercept = 0;
  int samples = 0;
  double t_begin = 0;
  double t_end = 0;
};

// Least-squares slope of log(series) from the first sample with
// series / series[0] <= hi through the last one with series / series[0] >= lo.
// samples == 0 when the window is empty.
SlopeFit fit_decay_slope(const std::vector<double>& times, const std::vector<double>& series, double lo = 1e-4,
                         double hi = 1e-1);

// Max of series over t >= t_end - fraction * (t_end - t_0).
double terminal_max(const std::vector<double>& times, const std::vector<double>& series, double fraction = 0.2);

struct IssRow {
  double amplitude = 0;
  double floor = 0;
};

std::vector<IssRow> iss_sweep(const TransformField& field, const ImageAtlas& atlas, const Vec& x0, const Vec& z0,
                              const ObserverOptions& base, const std::vector<double>& amplitudes,
                              const InversionConfig& cfg);

struct ShortArcReport {
  int window = 0;
  int near_crossings = 0;  // non-adjacent segment pairs closer than tol
  double tol = 0;
};

// Heuristic self-intersection scan of the z path over sliding windows.
ShortArcReport short_arc_check(const std::vector<Vec>& z_path, int window, double tol);

// Columns t, z_*, x_true_*, selection_*, hausdorff, z_error, err_branch_*.
std::string run_csv(const ObserverRun& run);
// Columns t, branch, x_*.
std::string estimates_csv(const ObserverRun& run);
std::string iss_csv(const std::vector<IssRow>& rows);

}  // namespace setkkl
