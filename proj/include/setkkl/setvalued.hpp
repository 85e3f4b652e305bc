#pragma once

// Finite point sets, Hausdorff and permutation distances, numerical preimages
// of the transform and their extension off the image.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "setkkl/transform.hpp"

namespace setkkl {

struct PointSet {
  std::vector<Vec> points;
  double merge_radius = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

struct InversionConfig {
  double residual_tol = 1e-5;
  double cluster_radius = 0.1;
  int max_gn_iters = 50;
  int seeds_per_query = 4;

  void validate() const;
};

// residual_tol = 10 tol_trunc, cluster_radius = 2 x atlas spacing.
InversionConfig default_inversion_config(const TransformField& field, const ImageAtlas& atlas);

struct HausdorffResult {
  double d_H = 0;
  double delta_ab = 0;  // max_a min_b |a - b|
  double delta_ba = 0;
};

HausdorffResult hausdorff(const std::vector<Vec>& a, const std::vector<Vec>& b);
HausdorffResult hausdorff(const PointSet& a, const PointSet& b);

// min over permutations s of max_i |a_i - b_s(i)|, by enumeration (p <= 8).
double tuple_distance(const std::vector<Vec>& a, const std::vector<Vec>& b);

struct GaussNewtonResult {
  Vec x;
  double residual = 0;
  int iterations = 0;
  bool abandoned = false;  // stopped early by a GaussNewtonStop rule
};

struct GaussNewtonStop {
  // Stop once an iterate lies within capture_radius of one of `roots` whose
  // residual (from `root_residuals`, when given) is no larger than its own.
  const std::vector<Vec>* roots = nullptr;
  const std::vector<double>* root_residuals = nullptr;
  double capture_radius = 0;
  // Stop when the residual stays above this level and decreased by less
  // than 1% in the last step.
  double abandon_above = std::numeric_limits<double>::infinity();
  // Above residual_tol, add the differenced second-order term to the
  // Gauss-Newton model (n_x extra Jacobian evaluations per step).
  bool curvature = true;
};

// Damped, domain-projected Gauss-Newton on 1/2 |T(x) - z|^2, iterated until
// the residual drops below residual_tol / 10, the step stalls or
// max_gn_iters is hit. `z0` and `j0`, when given, are T(x0) and its Jacobian.
GaussNewtonResult gauss_newton(const TransformField& field, const DomainSpec& domain, const Vec& z, const Vec& x0,
                               const InversionConfig& cfg, const Vec* z0 = nullptr, const Mat* j0 = nullptr,
                               const GaussNewtonStop& stop = {});

// Multi-start preimage {x in X : |T(x) - z| <= residual_tol}, clustered at
// cluster_radius. Empty when z is off the image. `warm_starts` are refined
// before the atlas seeds.
PointSet preimage(const TransformField& field, const ImageAtlas& atlas, const Vec& z, const InversionConfig& cfg,
                  const std::vector<Vec>& warm_starts = {});

// Argmin set of |T(x) - z| over the domain; coincides with preimage on the
// image and is never empty.
PointSet extend_inverse(const TransformField& field, const ImageAtlas& atlas, const Vec& z,
                        const InversionConfig& cfg, const std::vector<Vec>& warm_starts = {});

struct CardinalityReport {
  std::vector<Vec> points;
  std::vector<int> cardinality;
  int modal_p = 0;
  std::vector<int> violations;  // atlas rows with cardinality != modal_p
};

CardinalityReport cardinality_profile(const TransformField& field, const ImageAtlas& atlas,
                                      const InversionConfig& cfg);

// Columns x_1..x_n, card, modal_flag.
std::string cardinality_csv(const CardinalityReport& report);

struct BranchMatch {
  std::vector<int> pairing;  // pairing[i] = index into prev matched to next[i], or -1
  std::vector<int> unmatched_prev;
  bool cardinality_changed = false;
  double max_distance = 0;  // largest matched distance
};

// Greedy nearest pairing of next onto prev, ties broken by (next, prev) index.
BranchMatch match_branches(const PointSet& prev, const PointSet& next);

struct BranchTrack {
  // labels[t][i] = branch label carried by point i of the t-th set.
  std::vector<std::vector<int>> labels;
  // Steps whose pairing is not the identity on raw indices.
  std::vector<int> swap_steps;
};

// Propagates branch labels through a sequence of equal-cardinality sets.
BranchTrack track_branches(const std::vector<PointSet>& sets);

struct LipschitzEstimate {
  double max_ratio = 0;
  double median_ratio = 0;
  int pairs = 0;
};

// d_H(T^inv(z_a), T^inv(z_b)) / |z_a - z_b| over random lattice-neighbour
// atlas pairs.
LipschitzEstimate empirical_lipschitz(const TransformField& field, const ImageAtlas& atlas,
                                      const InversionConfig& cfg, int max_pairs, std::uint64_t seed);

}  // namespace setkkl
