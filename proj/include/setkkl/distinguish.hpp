#pragma once

// Backward indistinguishability by brute force over a grid, the check that a
// transform separates exactly the indistinguishable pairs, and rank profiles
// of the differential observability map H_m and of dT/dx across gains k.

#include <string>
#include <utility>
#include <vector>

#include "setkkl/transform.hpp"

namespace setkkl {

struct IndistReport {
  std::vector<Vec> grid;
  std::vector<std::vector<int>> classes;  // sorted, each class sorted
  std::vector<int> class_of;              // grid index -> class id
  std::vector<std::vector<int>> related;  // adjacency of the relation, sorted
  // Same-class pairs that are not directly related.
  std::vector<std::pair<int, int>> transitivity_violations;
  double horizon = 0;
  double tol = 0;
  double step = 0;

  std::size_t modal_class_size() const;
};

// Empirical contraction rate of the plant: median over sampled domain points
// of the largest |log singular value| of the backward flow Jacobian over one
// time unit, clamped to [0.5, 10].
double plant_contraction_rate(const SystemModel& system, const DomainSpec& domain, double step);

// 10 / plant_contraction_rate.
double default_oracle_horizon(const SystemModel& system, const DomainSpec& domain, double step);

// Two grid points are related when sup_t |h(phi_a(t)) - h(phi_b(t))| <= tol
// over t in [-horizon, 0], with outputs compared on at most ~2000 samples.
IndistReport backward_indist_oracle(const SystemModel& system, const DomainSpec& domain, double horizon, double tol,
                                    double step);

// Number of classes of `coarse` that `fine` splits across several classes.
int count_split_classes(const IndistReport& coarse, const IndistReport& fine);

// Indistinguishable-set functor backed by the oracle outputs of `domain`'s
// grid: returns x together with every grid point whose backward output stays
// within tol of x's.
IndistFn make_oracle_indist(const SystemModel& system, const DomainSpec& domain, double horizon, double tol,
                            double step);

struct CharacterizationResult {
  bool pass = false;
  double match_tol = 0;
  double forward_margin = 0;  // max |T(a) - T(b)| over related pairs
  double reverse_margin = 0;  // min |T(a) - T(b)| over unrelated pairs
  std::pair<int, int> worst_forward{-1, -1};
  std::pair<int, int> worst_reverse{-1, -1};
};

// `images`, when given, holds T at report.grid in the same order.
CharacterizationResult characterization_check(const TransformField& field, const IndistReport& report,
                                              double match_tol, const std::vector<Vec>* images = nullptr);

struct ObservabilityMap {
  Vec H;  // (h, L_f h, ..., L_f^{m-1} h)
  Mat J;  // dH/dx
};

// Lie derivatives from the analytic dh when present, nested central
// differences otherwise; the total difference nesting is capped at 3.
ObservabilityMap diff_observability_map(const SystemModel& system, const Vec& x, int m);

struct ObservabilityReport {
  int m = 0;
  double rank_tol = 1e-4;
  std::vector<Vec> points;
  std::vector<double> sigma_min;
  std::vector<double> sigma_max;
  std::vector<int> rank;
  // Local Lipschitz estimate of sigma_min from lattice neighbours.
  std::vector<double> sigma_slope;
  std::vector<char> full_rank;
  std::vector<int> deficient;
};

// A grid point counts as full rank when sigma_min > rank_tol * sigma_max and
// sigma_min cannot reach zero within one lattice spacing at the local slope.
ObservabilityReport rank_profile_Hm(const SystemModel& system, const DomainSpec& domain, int m,
                                    double rank_tol = 1e-4);

struct KSweepRow {
  double k = 0;
  double min_sigma_min = 0;
  double max_cond = 0;
  bool full_rank = false;  // sigma_min > rank_tol * sigma_max at every probe
  double horizon = 0;
};

// One TransformField per gain (pair (k A, B)); Jacobian statistics on probes.
std::vector<KSweepRow> k_sweep_rank(const SystemModel& system, const FilterPair& pair, const std::vector<double>& ks,
                                    const std::vector<Vec>& probes, const TransformOptions& base,
                                    double rank_tol = 1e-4);

// Smallest k whose row and every later row are full rank, or -1.
double k_star_estimate(const std::vector<KSweepRow>& rows);

std::string indist_csv(const IndistReport& report);
std::string observability_csv(const ObservabilityReport& report);
std::string ksweep_csv(const std::vector<KSweepRow>& rows);

}  // namespace setkkl
