#include "setkkl/transform.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "setkkl/csv.hpp"
#include "setkkl/rng.hpp"

namespace setkkl {

Mat kron_identity(int n, const Mat& block) {
  Mat out = Mat::Zero(n * block.rows(), n * block.cols());
  for (int i = 0; i < n; ++i) out.block(i * block.rows(), i * block.cols(), block.rows(), block.cols()) = block;
  return out;
}

FilterPair make_filter_pair(int n_y, int n_o, const std::vector<std::complex<double>>& eigenvalues,
                            std::uint64_t seed, double perturbation) {
  if (n_o < 1) throw ConfigError("filter pair: n_o must be >= 1");
  if (n_y < 1) throw ConfigError("filter pair: n_y must be >= 1");
  if (static_cast<int>(eigenvalues.size()) != n_o) {
    std::ostringstream msg;
    msg << "filter pair: expected " << n_o << " eigenvalues, got " << eigenvalues.size();
    throw ConfigError(msg.str());
  }
  for (const auto& e : eigenvalues) {
    if (!(e.real() < 0)) {
      std::ostringstream msg;
      msg << "filter pair: eigenvalue " << e.real() << (e.imag() < 0 ? "" : "+") << e.imag()
          << "i has nonnegative real part";
      throw NotHurwitz(msg.str());
    }
  }

  Mat A_o = Mat::Zero(n_o, n_o);
  for (int i = 0; i < n_o;) {
    const auto e = eigenvalues[i];
    if (e.imag() == 0) {
      A_o(i, i) = e.real();
      ++i;
      continue;
    }
    if (i + 1 >= n_o || std::abs(eigenvalues[i + 1] - std::conj(e)) > 1e-12 * std::abs(e))
      throw ConfigError("filter pair: complex eigenvalues must be listed as adjacent conjugate pairs");
    const double a = e.real();
    const double b = std::abs(e.imag());
    A_o(i, i) = a;
    A_o(i, i + 1) = b;
    A_o(i + 1, i) = -b;
    A_o(i + 1, i + 1) = a;
    i += 2;
  }

  Vec B_o = Vec::Ones(n_o);
  if (perturbation > 0) {
    std::mt19937_64 rng(seed);
    for (int i = 0; i < n_o; ++i) {
      const double u = uniform01(rng);
      B_o(i) += perturbation * (2 * u - 1);
    }
  }

  Mat ctrb(n_o, n_o);
  ctrb.col(0) = B_o;
  for (int i = 1; i < n_o; ++i) ctrb.col(i) = A_o * ctrb.col(i - 1);
  Eigen::JacobiSVD<Mat> svd(ctrb);
  const Vec sv = svd.singularValues();
  const double smax = sv(0);
  const double smin = sv(n_o - 1);
  if (!(smin > 1e-10 * smax)) {
    std::ostringstream msg;
    msg << "filter pair: (A_o, B_o) is not controllable (controllability matrix sigma_min=" << smin
        << ", sigma_max=" << smax << "); repeated eigenvalues are not controllable with B_o = ones";
    throw NotControllable(msg.str());
  }

  FilterPair pair;
  pair.n_o = n_o;
  pair.n_y = n_y;
  pair.A_o = A_o;
  pair.B_o = B_o;
  pair.A = kron_identity(n_y, A_o);
  pair.B = kron_identity(n_y, Mat(B_o));
  double max_re = -std::numeric_limits<double>::infinity();
  for (const auto& e : eigenvalues) max_re = std::max(max_re, e.real());
  pair.hurwitz_margin = -max_re;
  pair.controllability_cond = smax / smin;
  return pair;
}

namespace {

double sample_output_bound(const SystemModel& system, const FilterPair& pair) {
  const double radius = system.cutoff ? system.cutoff->r_zero : system.domain.bounding_radius();
  const int n = system.n_x;
  const double b_norm = pair.B_o.norm();
  Vec y(system.n_y);
  double best = 0;
  auto visit = [&](const Vec& x) {
    if (x.norm() > radius) return;
    system.h(x, y);
    best = std::max(best, b_norm * y.norm());
  };
  if (n <= 3) {
    const int res = 41;
    long total = 1;
    for (int i = 0; i < n; ++i) total *= res;
    Vec x(n);
    for (long lin = 0; lin < total; ++lin) {
      long rem = lin;
      for (int a = n - 1; a >= 0; --a) {
        x(a) = -radius + 2 * radius * static_cast<double>(rem % res) / (res - 1);
        rem /= res;
      }
      visit(x);
    }
  } else {
    std::mt19937_64 rng(12345);
    Vec x(n);
    for (int s = 0; s < 8192; ++s) {
      for (int a = 0; a < n; ++a) x(a) = uniform_in(rng, -radius, radius);
      visit(x);
    }
  }
  // Lattice sampling can miss the peak between nodes.
  return 1.1 * best;
}

}  // namespace

TransformField::TransformField(SystemModel system, FilterPair pair, TransformOptions options)
    : system_(std::move(system)), pair_(std::move(pair)), options_(options) {
  if (!(options_.step > 0)) throw ConfigError("transform: step must be positive");
  if (!(options_.tol_trunc > 0)) throw ConfigError("transform: tol_trunc must be positive");
  if (!(options_.k > 0)) throw ConfigError("transform: gain k must be positive");
  if (pair_.n_y != system_.n_y) {
    std::ostringstream msg;
    msg << "transform: filter pair built for n_y=" << pair_.n_y << " but system '" << system_.name
        << "' has n_y=" << system_.n_y;
    throw ConfigError(msg.str());
  }

  output_bound_ = sample_output_bound(system_, pair_);
  const double rate = options_.k * pair_.hurwitz_margin;
  double tau = options_.step;
  if (options_.horizon) {
    tau = *options_.horizon;
    if (!(tau > 0)) throw ConfigError("transform: horizon must be positive");
  } else if (output_bound_ > 0) {
    // Tail of the integral beyond tau is at most M exp(-rate tau) / rate.
    const double by_ratio = std::log(output_bound_ / options_.tol_trunc) / rate;
    const double by_tail = std::log(output_bound_ / (rate * options_.tol_trunc)) / rate;
    tau = std::max({tau, by_ratio, by_tail});
  }
  n_steps_ = std::max<long>(1, static_cast<long>(std::ceil(tau / options_.step - 1e-9)));
  horizon_ = static_cast<double>(n_steps_) * options_.step;

  const Mat half = (options_.k * pair_.A_o * (0.5 * options_.step)).exp();
  weights_.resize(2 * n_steps_ + 1);
  weights_[0] = pair_.B_o;
  for (std::size_t m = 1; m < weights_.size(); ++m) weights_[m] = half * weights_[m - 1];
}

namespace {

// Joint RK4 in backward time sigma = -s over [0, n_steps * dt]:
//   X' = -f(X),  Psi' = -Df(X) Psi,
//   z_j' = w(sigma) h_j(X),  J_j' = w(sigma) Dh_j(X) Psi,
// with w(sigma) = exp(k A_o sigma) B_o tabulated at half steps.
template <int N, int NY, int NO>
void transform_kernel(const SystemModel& sys, const std::vector<Vec>& weights, long n_steps, double dt,
                      const Vec& x, Vec& z, Mat* jac) {
  using VX = Eigen::Matrix<double, N, 1>;
  using VY = Eigen::Matrix<double, NY, 1>;
  using VO = Eigen::Matrix<double, NO, 1>;
  using MXX = Eigen::Matrix<double, N, N>;
  using MYX = Eigen::Matrix<double, NY, N>;
  using MOY = Eigen::Matrix<double, NO, NY>;
  using MZX = Eigen::Matrix<double, (NO == Eigen::Dynamic || NY == Eigen::Dynamic) ? Eigen::Dynamic : NO * NY, N>;

  const int n = sys.n_x;
  const int ny = sys.n_y;
  const int no = static_cast<int>(weights[0].size());
  const bool want_jac = jac != nullptr;
  const bool fd_f = want_jac && !sys.df;
  const bool fd_h = want_jac && !sys.dh;

  VX X = x;
  VX Xs(n), fs(n), kx_prev(n), kx_sum(n);
  VY hs(ny);
  VO w(no);
  MOY zacc = MOY::Zero(no, ny);
  MXX Psi, Psis(n, n), kp_prev(n, n), kp_sum(n, n), Dfs(n, n);
  MYX Dhs(ny, n), G(ny, n);
  MZX jacc;
  if (want_jac) {
    Psi = MXX::Identity(n, n);
    jacc = MZX::Zero(no * ny, n);
  }

  static constexpr double kStageOffset[4] = {0.0, 0.5, 0.5, 1.0};
  static constexpr double kStageWeight[4] = {1.0, 2.0, 2.0, 1.0};
  static constexpr int kStageNode[4] = {0, 1, 1, 2};

  for (long i = 0; i < n_steps; ++i) {
    kx_sum.setZero();
    if (want_jac) kp_sum.setZero();
    for (int s = 0; s < 4; ++s) {
      const double c = kStageOffset[s] * dt;
      if (s == 0) {
        Xs = X;
      } else {
        Xs = X + c * kx_prev;
      }
      sys.f(Xs, fs);
      fs = -fs;
      sys.h(Xs, hs);
      const double b = kStageWeight[s] * dt / 6.0;
      w = b * weights[2 * i + kStageNode[s]];
      zacc.noalias() += w * hs.transpose();

      if (want_jac) {
        if (s == 0) {
          Psis = Psi;
        } else {
          Psis = Psi + c * kp_prev;
        }
        if (fd_f) {
          Dfs = finite_difference_jacobian(sys.f, n, Xs);
        } else {
          sys.df(Xs, Dfs);
        }
        if (fd_h) {
          Dhs = finite_difference_jacobian(sys.h, ny, Xs);
        } else {
          sys.dh(Xs, Dhs);
        }
        kp_prev.noalias() = -Dfs * Psis;
        G.noalias() = Dhs * Psis;
        for (int j = 0; j < ny; ++j) jacc.middleRows(j * no, no).noalias() += w * G.row(j);
        kp_sum += kStageWeight[s] * kp_prev;
      }
      kx_prev = fs;
      kx_sum += kStageWeight[s] * fs;
    }
    X += (dt / 6.0) * kx_sum;
    if (want_jac) Psi += (dt / 6.0) * kp_sum;
    if (!X.allFinite()) {
      std::ostringstream msg;
      msg << "transform: backward flow became non-finite at s=-" << static_cast<double>(i + 1) * dt;
      throw NonFiniteState(msg.str());
    }
  }

  z.resize(no * ny);
  for (int j = 0; j < ny; ++j) z.segment(j * no, no) = zacc.col(j);
  if (want_jac) *jac = jacc;
}

using KernelFn = void (*)(const SystemModel&, const std::vector<Vec>&, long, double, const Vec&, Vec&, Mat*);

template <int N, int NY>
KernelFn pick_by_no(int no) {
  switch (no) {
    case 1: return &transform_kernel<N, NY, 1>;
    case 2: return &transform_kernel<N, NY, 2>;
    case 3: return &transform_kernel<N, NY, 3>;
    case 5: return &transform_kernel<N, NY, 5>;
    default: return &transform_kernel<N, NY, Eigen::Dynamic>;
  }
}

template <int N>
KernelFn pick_by_ny(int ny, int no) {
  switch (ny) {
    case 1: return pick_by_no<N, 1>(no);
    case 2: return pick_by_no<N, 2>(no);
    default: return pick_by_no<N, Eigen::Dynamic>(no);
  }
}

KernelFn pick_kernel(int n, int ny, int no) {
  switch (n) {
    case 1: return pick_by_ny<1>(ny, no);
    case 2: return pick_by_ny<2>(ny, no);
    default: return &transform_kernel<Eigen::Dynamic, Eigen::Dynamic, Eigen::Dynamic>;
  }
}

}  // namespace

void TransformField::evaluate_into(const Vec& x, Vec& z, Mat* jac) const {
  if (x.size() != system_.n_x) throw ConfigError("transform: state dimension mismatch");
  if (system_.cutoff && x.norm() > system_.cutoff->r_zero * (1 + 1e-9)) {
    std::ostringstream msg;
    msg << "transform: |x|=" << x.norm() << " lies outside the cutoff ball r_zero=" << system_.cutoff->r_zero;
    throw ConfigError(msg.str());
  }
  const KernelFn kernel = pick_kernel(system_.n_x, system_.n_y, pair_.n_o);
  kernel(system_, weights_, n_steps_, options_.step, x, z, jac);
}

Vec TransformField::evaluate(const Vec& x) const {
  Vec z;
  evaluate_into(x, z, nullptr);
  return z;
}

Mat TransformField::jacobian(const Vec& x) const {
  Vec z;
  Mat j;
  evaluate_into(x, z, &j);
  return j;
}

Vec evaluate_T(const TransformField& field, const Vec& x) { return field.evaluate(x); }

Mat jacobian_T(const TransformField& field, const Vec& x) { return field.jacobian(x); }

double pde_residual(const TransformField& field, const Vec& x, double delta) {
  if (!(delta > 0)) throw ConfigError("pde_residual: delta must be positive");
  const double step = std::min(field.step(), delta);
  const Vec xf = flow(field.system(), x, delta, Direction::forward, step);
  const Vec xb = flow(field.system(), x, delta, Direction::backward, step);
  const Vec derivative = (field.evaluate(xf) - field.evaluate(xb)) / (2 * delta);
  const Vec rhs = field.scaled_A() * field.evaluate(x) + field.pair().B * field.system().eval_h(x);
  return (derivative - rhs).norm();
}

SingularValueStats singular_value_stats(const Mat& m) {
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec sv = svd.singularValues();
  SingularValueStats s;
  if (sv.size() == 0) return s;
  s.sigma_max = sv(0);
  s.sigma_min = sv(sv.size() - 1);
  s.cond = s.sigma_min > 0 ? s.sigma_max / s.sigma_min : std::numeric_limits<double>::infinity();
  return s;
}

std::vector<int> ImageAtlas::neighbors(int i) const {
  std::vector<int> out;
  const int n = grid_points.empty() ? 0 : static_cast<int>(grid_points[0].size());
  const long res = domain.grid_resolution;
  const long lin = lattice_index[i];
  long stride = 1;
  for (int a = n - 1; a >= 0; --a) {
    const long coord = (lin / stride) % res;
    for (int d : {-1, 1}) {
      const long c = coord + d;
      if (c < 0 || c >= res) continue;
      const long other = lin + d * stride;
      const int row = lattice_to_row_[other];
      if (row >= 0) out.push_back(row);
    }
    stride *= res;
  }
  return out;
}

ImageAtlas tabulate_image(const TransformField& field, const DomainSpec& domain) {
  domain.validate();
  if (domain.dim() != field.n_x()) throw ConfigError("tabulate_image: domain dimension does not match system");
  ImageAtlas atlas;
  atlas.domain = domain;
  atlas.grid_points = domain.grid(&atlas.lattice_index);
  long total = 1;
  for (int i = 0; i < domain.dim(); ++i) total *= domain.grid_resolution;
  atlas.lattice_to_row_.assign(total, -1);
  for (std::size_t r = 0; r < atlas.lattice_index.size(); ++r)
    atlas.lattice_to_row_[atlas.lattice_index[r]] = static_cast<int>(r);

  const std::size_t n = atlas.grid_points.size();
  atlas.images.resize(n);
  atlas.jacobians.resize(n);
  atlas.jacobian_min_sv.resize(n);
  atlas.jacobian_max_sv.resize(n);
  atlas.jacobian_cond.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    field.evaluate_into(atlas.grid_points[i], atlas.images[i], &atlas.jacobians[i]);
    const auto stats = singular_value_stats(atlas.jacobians[i]);
    atlas.jacobian_min_sv[i] = stats.sigma_min;
    atlas.jacobian_max_sv[i] = stats.sigma_max;
    atlas.jacobian_cond[i] = stats.cond;
  }
  return atlas;
}

ConditioningReport conditioning_map(const ImageAtlas& atlas, double rank_tol) {
  ConditioningReport rep;
  rep.rank_tol = rank_tol;
  rep.min_sigma_min = std::numeric_limits<double>::infinity();
  rep.max_cond = 0;
  rep.full_rank = !atlas.grid_points.empty();
  for (std::size_t i = 0; i < atlas.size(); ++i) {
    ConditioningRow row;
    row.x = atlas.grid_points[i];
    row.sigma_min = atlas.jacobian_min_sv[i];
    row.cond = atlas.jacobian_cond[i];
    row.full_rank = row.sigma_min > rank_tol * atlas.jacobian_max_sv[i];
    rep.full_rank = rep.full_rank && row.full_rank;
    rep.min_sigma_min = std::min(rep.min_sigma_min, row.sigma_min);
    rep.max_cond = std::max(rep.max_cond, row.cond);
    rep.rows.push_back(std::move(row));
  }
  rep.below_1e3 = rep.max_cond < 1e3;
  return rep;
}

std::string atlas_csv(const ImageAtlas& atlas) {
  CsvWriter w;
  if (atlas.size() == 0) {
    w.header({"sigma_min", "cond"});
    return w.str();
  }
  const auto nx = atlas.grid_points[0].size();
  const auto nz = atlas.images[0].size();
  std::vector<std::string> head;
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_" + std::to_string(i + 1));
  for (Eigen::Index i = 0; i < nz; ++i) head.push_back("z_" + std::to_string(i + 1));
  head.push_back("sigma_min");
  head.push_back("cond");
  w.header(head);
  std::vector<double> row;
  for (std::size_t r = 0; r < atlas.size(); ++r) {
    row.clear();
    for (Eigen::Index i = 0; i < nx; ++i) row.push_back(atlas.grid_points[r](i));
    for (Eigen::Index i = 0; i < nz; ++i) row.push_back(atlas.images[r](i));
    row.push_back(atlas.jacobian_min_sv[r]);
    row.push_back(atlas.jacobian_cond[r]);
    w.row(row);
  }
  return w.str();
}

std::string conditioning_csv(const ConditioningReport& report) {
  CsvWriter w;
  if (report.rows.empty()) {
    w.header({"sigma_min", "cond", "full_rank"});
    return w.str();
  }
  const auto nx = report.rows[0].x.size();
  std::vector<std::string> head;
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_" + std::to_string(i + 1));
  head.insert(head.end(), {"sigma_min", "cond", "full_rank"});
  w.header(head);
  std::vector<double> row;
  for (const auto& r : report.rows) {
    row.assign(r.x.data(), r.x.data() + r.x.size());
    row.push_back(r.sigma_min);
    row.push_back(r.cond);
    row.push_back(r.full_rank ? 1.0 : 0.0);
    w.row(row);
  }
  return w.str();
}

}  // namespace setkkl
