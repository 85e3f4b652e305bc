#pragma once

// KKL transform T(x) = int_{-tau}^{0} exp(-k A s) B h(X(x, s)) ds evaluated by
// integrating the backward flow of the cutoff field together with the
// integrand and the variational equation on one RK4 grid.

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "setkkl/dynsys.hpp"

namespace setkkl {

struct FilterPair {
  Mat A;    // I_{n_y} (x) A_o
  Mat B;    // I_{n_y} (x) B_o
  Mat A_o;
  Vec B_o;
  int n_o = 0;
  int n_y = 0;
  double hurwitz_margin = 0;  // -max Re eig(A_o)
  double controllability_cond = 0;

  int n_z() const { return n_o * n_y; }
};

// Real block-diagonal A_o with the requested spectrum (1x1 blocks for real
// eigenvalues, [[a, b], [-b, a]] blocks for conjugate pairs) and B_o = ones.
// A nonzero `perturbation` adds a seeded uniform perturbation in
// [-perturbation, perturbation] to each entry of B_o.
FilterPair make_filter_pair(int n_y, int n_o, const std::vector<std::complex<double>>& eigenvalues,
                            std::uint64_t seed = 0, double perturbation = 0.0);

// I_{n_y} (x) block, rebuilt from the stored blocks.
Mat kron_identity(int n, const Mat& block);

struct TransformOptions {
  double tol_trunc = 1e-6;
  double step = 1e-3;
  double k = 1.0;
  std::optional<double> horizon;  // overrides the truncation-derived horizon
};

class TransformField {
 public:
  TransformField(SystemModel system, FilterPair pair, TransformOptions options = {});

  const SystemModel& system() const { return system_; }
  const FilterPair& pair() const { return pair_; }
  const TransformOptions& options() const { return options_; }
  double horizon() const { return horizon_; }
  double step() const { return options_.step; }
  double k() const { return options_.k; }
  double tol_trunc() const { return options_.tol_trunc; }
  // Sampled bound on |B h| over the invariant ball used to pick the horizon.
  double output_bound() const { return output_bound_; }
  int n_x() const { return system_.n_x; }
  int n_z() const { return pair_.n_z(); }
  // k A, the matrix the transform intertwines with.
  Mat scaled_A() const { return options_.k * pair_.A; }

  Vec evaluate(const Vec& x) const;
  Mat jacobian(const Vec& x) const;
  // One pass computing T(x) and, when `jac` is non-null, dT/dx.
  void evaluate_into(const Vec& x, Vec& z, Mat* jac) const;

 private:
  SystemModel system_;
  FilterPair pair_;
  TransformOptions options_;
  double horizon_ = 0;
  double output_bound_ = 0;
  long n_steps_ = 0;
  // exp(k A_o s) B_o at every half step s = m * step / 2, m = 0 .. 2 n_steps.
  std::vector<Vec> weights_;
};

Vec evaluate_T(const TransformField& field, const Vec& x);
Mat jacobian_T(const TransformField& field, const Vec& x);

// |(T(X(x,+d)) - T(X(x,-d))) / (2 d) - (k A T(x) + B h(x))|.
double pde_residual(const TransformField& field, const Vec& x, double delta = 1e-4);

struct ImageAtlas {
  std::vector<Vec> grid_points;
  std::vector<Vec> images;
  std::vector<Mat> jacobians;
  std::vector<double> jacobian_min_sv;
  std::vector<double> jacobian_max_sv;
  std::vector<double> jacobian_cond;
  std::vector<long> lattice_index;
  DomainSpec domain;

  std::size_t size() const { return grid_points.size(); }
  double spacing() const { return domain.grid_spacing(); }
  // Atlas rows of the axis-aligned lattice neighbours of row i.
  std::vector<int> neighbors(int i) const;

  std::vector<int> lattice_to_row_;
};

ImageAtlas tabulate_image(const TransformField& field, const DomainSpec& domain);

struct SingularValueStats {
  double sigma_min = 0;
  double sigma_max = 0;
  double cond = 0;  // +inf when sigma_min == 0
};
SingularValueStats singular_value_stats(const Mat& m);

struct ConditioningRow {
  Vec x;
  double sigma_min = 0;
  double cond = 0;
  bool full_rank = false;
};

struct ConditioningReport {
  std::vector<ConditioningRow> rows;
  double min_sigma_min = 0;
  double max_cond = 0;
  double rank_tol = 1e-4;
  bool full_rank = false;     // sigma_min > rank_tol * sigma_max at every point
  bool below_1e3 = false;     // max_cond < 1e3
};

ConditioningReport conditioning_map(const ImageAtlas& atlas, double rank_tol = 1e-4);

// Columns x_1..x_n, z_1..z_m, sigma_min, cond.
std::string atlas_csv(const ImageAtlas& atlas);
std::string conditioning_csv(const ConditioningReport& report);

}  // namespace setkkl
