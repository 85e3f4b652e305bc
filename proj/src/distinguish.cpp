#include "setkkl/distinguish.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "setkkl/csv.hpp"

namespace setkkl {

std::size_t IndistReport::modal_class_size() const {
  std::vector<std::size_t> count(grid.size() + 1, 0);
  for (const auto& c : classes) ++count[c.size()];
  return static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
}

namespace {

// Backward output samples of one state, stored column-wise.
Mat backward_outputs(const SystemModel& system, const Vec& x, double horizon, double step, long stride) {
  const Trajectory traj = integrate(system, x, 0.0, -horizon, step);
  const long n = static_cast<long>(traj.size());
  const long samples = (n - 1) / stride + 1 + ((n - 1) % stride != 0 ? 1 : 0);
  Mat out(system.n_y, samples);
  Vec y(system.n_y);
  long col = 0;
  for (long i = 0; i < n; i += stride) {
    system.h(traj.states[i], y);
    out.col(col++) = y;
  }
  if ((n - 1) % stride != 0) {
    system.h(traj.states[n - 1], y);
    out.col(col++) = y;
  }
  return out;
}

long sample_stride(double horizon, double step) {
  const auto n_steps = static_cast<long>(std::ceil(horizon / step - 1e-9));
  return std::max<long>(1, (n_steps + 1999) / 2000);
}

bool outputs_related(const Mat& a, const Mat& b, double tol) {
  if (std::isinf(tol)) return true;
  const double tol2 = tol * tol;
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    if ((a.col(c) - b.col(c)).squaredNorm() > tol2) return false;
  return true;
}

int find_root(std::vector<int>& parent, int i) {
  while (parent[i] != i) {
    parent[i] = parent[parent[i]];
    i = parent[i];
  }
  return i;
}

std::vector<std::vector<int>> lattice_neighbors(const DomainSpec& domain, const std::vector<long>& lattice_index) {
  const int n = domain.dim();
  const long res = domain.grid_resolution;
  long total = 1;
  for (int i = 0; i < n; ++i) total *= res;
  std::vector<int> to_row(total, -1);
  for (std::size_t r = 0; r < lattice_index.size(); ++r) to_row[lattice_index[r]] = static_cast<int>(r);
  std::vector<std::vector<int>> nb(lattice_index.size());
  for (std::size_t r = 0; r < lattice_index.size(); ++r) {
    const long lin = lattice_index[r];
    long stride = 1;
    for (int a = n - 1; a >= 0; --a) {
      const long coord = (lin / stride) % res;
      for (int d : {-1, 1}) {
        const long c = coord + d;
        if (c < 0 || c >= res) continue;
        const int row = to_row[lin + d * stride];
        if (row >= 0) nb[r].push_back(row);
      }
      stride *= res;
    }
  }
  return nb;
}

void check_oracle_args(double horizon, double tol, double step) {
  if (!(horizon > 0)) throw ConfigError("indistinguishability oracle: horizon must be positive");
  if (!(tol >= 0)) throw ConfigError("indistinguishability oracle: tol must be nonnegative");
  if (!(step > 0)) throw ConfigError("indistinguishability oracle: step must be positive");
}

}  // namespace

double plant_contraction_rate(const SystemModel& system, const DomainSpec& domain, double step) {
  const auto grid = domain.grid();
  if (grid.empty()) throw EmptySet("plant_contraction_rate: domain grid is empty");
  const std::size_t every = std::max<std::size_t>(1, grid.size() / 64);
  const double eps = 1e-6;
  std::vector<double> rates;
  for (std::size_t i = 0; i < grid.size(); i += every) {
    const Vec& x = grid[i];
    Mat psi(system.n_x, system.n_x);
    for (int j = 0; j < system.n_x; ++j) {
      Vec xp = x, xm = x;
      xp(j) += eps;
      xm(j) -= eps;
      psi.col(j) = (flow(system, xp, 1.0, Direction::backward, step) - flow(system, xm, 1.0, Direction::backward, step)) /
                   (2 * eps);
    }
    const auto s = singular_value_stats(psi);
    double rate = std::abs(std::log(s.sigma_max));
    if (s.sigma_min > 0) rate = std::max(rate, std::abs(std::log(s.sigma_min)));
    rates.push_back(rate);
  }
  std::nth_element(rates.begin(), rates.begin() + rates.size() / 2, rates.end());
  return std::clamp(rates[rates.size() / 2], 0.5, 10.0);
}

double default_oracle_horizon(const SystemModel& system, const DomainSpec& domain, double step) {
  return 10.0 / plant_contraction_rate(system, domain, step);
}

IndistReport backward_indist_oracle(const SystemModel& system, const DomainSpec& domain, double horizon, double tol,
                                    double step) {
  check_oracle_args(horizon, tol, step);
  IndistReport rep;
  rep.horizon = horizon;
  rep.tol = tol;
  rep.step = step;
  rep.grid = domain.grid();
  const int N = static_cast<int>(rep.grid.size());

  const long stride = sample_stride(horizon, step);
  std::vector<Mat> outputs(N);
  if (!std::isinf(tol))
    for (int i = 0; i < N; ++i) outputs[i] = backward_outputs(system, rep.grid[i], horizon, step, stride);

  rep.related.assign(N, {});
  std::vector<int> parent(N);
  std::iota(parent.begin(), parent.end(), 0);
  for (int a = 0; a < N; ++a) {
    for (int b = a + 1; b < N; ++b) {
      if (!outputs_related(outputs[a], outputs[b], tol)) continue;
      rep.related[a].push_back(b);
      rep.related[b].push_back(a);
      const int ra = find_root(parent, a), rb = find_root(parent, b);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  }
  for (auto& r : rep.related) std::sort(r.begin(), r.end());

  std::vector<int> root_to_class(N, -1);
  rep.class_of.assign(N, -1);
  for (int i = 0; i < N; ++i) {
    const int r = find_root(parent, i);
    if (root_to_class[r] < 0) {
      root_to_class[r] = static_cast<int>(rep.classes.size());
      rep.classes.emplace_back();
    }
    rep.class_of[i] = root_to_class[r];
    rep.classes[root_to_class[r]].push_back(i);
  }
  for (const auto& cls : rep.classes) {
    for (std::size_t p = 0; p < cls.size(); ++p) {
      for (std::size_t q = p + 1; q < cls.size(); ++q) {
        const auto& adj = rep.related[cls[p]];
        if (!std::binary_search(adj.begin(), adj.end(), cls[q])) rep.transitivity_violations.emplace_back(cls[p], cls[q]);
      }
    }
  }
  return rep;
}

int count_split_classes(const IndistReport& coarse, const IndistReport& fine) {
  if (coarse.grid.size() != fine.grid.size()) throw LengthMismatch("count_split_classes: grids differ");
  int split = 0;
  for (const auto& cls : coarse.classes) {
    const int id = fine.class_of[cls.front()];
    for (int i : cls) {
      if (fine.class_of[i] != id) {
        ++split;
        break;
      }
    }
  }
  return split;
}

IndistFn make_oracle_indist(const SystemModel& system, const DomainSpec& domain, double horizon, double tol,
                            double step) {
  check_oracle_args(horizon, tol, step);
  struct Bank {
    SystemModel system;
    std::vector<Vec> grid;
    std::vector<Mat> outputs;
    double horizon, tol, step;
    long stride;
  };
  auto bank = std::make_shared<Bank>();
  bank->system = system;
  bank->grid = domain.grid();
  bank->horizon = horizon;
  bank->tol = tol;
  bank->step = step;
  bank->stride = sample_stride(horizon, step);
  for (const auto& g : bank->grid) bank->outputs.push_back(backward_outputs(system, g, horizon, step, bank->stride));
  return [bank](const Vec& x) {
    const Mat ox = backward_outputs(bank->system, x, bank->horizon, bank->step, bank->stride);
    std::vector<Vec> out{x};
    for (std::size_t i = 0; i < bank->grid.size(); ++i) {
      if ((bank->grid[i] - x).norm() <= 1e-9) continue;
      if (outputs_related(ox, bank->outputs[i], bank->tol)) out.push_back(bank->grid[i]);
    }
    return out;
  };
}

CharacterizationResult characterization_check(const TransformField& field, const IndistReport& report,
                                              double match_tol, const std::vector<Vec>* images) {
  const int N = static_cast<int>(report.grid.size());
  std::vector<Vec> own;
  if (!images) {
    own.reserve(N);
    for (const auto& x : report.grid) own.push_back(field.evaluate(x));
    images = &own;
  }
  if (static_cast<int>(images->size()) != N) throw LengthMismatch("characterization_check: image count differs from grid");

  CharacterizationResult res;
  res.match_tol = match_tol;
  res.forward_margin = 0;
  res.reverse_margin = std::numeric_limits<double>::infinity();
  for (int a = 0; a < N; ++a) {
    const auto& adj = report.related[a];
    auto it = adj.begin();
    for (int b = a + 1; b < N; ++b) {
      while (it != adj.end() && *it < b) ++it;
      const bool related = it != adj.end() && *it == b;
      const double d = ((*images)[a] - (*images)[b]).norm();
      if (related) {
        if (d > res.forward_margin || res.worst_forward.first < 0) {
          res.forward_margin = std::max(res.forward_margin, d);
          res.worst_forward = {a, b};
        }
      } else if (d < res.reverse_margin) {
        res.reverse_margin = d;
        res.worst_reverse = {a, b};
      }
    }
  }
  res.pass = res.forward_margin <= match_tol && res.reverse_margin > match_tol;
  return res;
}

namespace {

struct LieContext {
  const SystemModel& system;
  double eps;
};

Vec lie_derivative(const LieContext& c, int i, const Vec& x);

Mat lie_jacobian(const LieContext& c, int j, const Vec& x) {
  if (j == 0 && c.system.dh) return c.system.jacobian_h(x);
  const int n = c.system.n_x;
  Mat out(c.system.n_y, n);
  const double step = c.eps * std::max(1.0, x.norm());
  Vec xp = x, xm = x;
  for (int a = 0; a < n; ++a) {
    xp(a) = x(a) + step;
    xm(a) = x(a) - step;
    out.col(a) = (lie_derivative(c, j, xp) - lie_derivative(c, j, xm)) / (2 * step);
    xp(a) = x(a);
    xm(a) = x(a);
  }
  return out;
}

Vec lie_derivative(const LieContext& c, int i, const Vec& x) {
  if (i == 0) return c.system.eval_h(x);
  return lie_jacobian(c, i - 1, x) * c.system.eval_f(x);
}

}  // namespace

ObservabilityMap diff_observability_map(const SystemModel& system, const Vec& x, int m) {
  if (m < 1) throw ConfigError("diff_observability_map: m must be >= 1");
  const int depth = system.dh ? m - 1 : m;
  if (depth > 3) {
    throw OrderTooHigh("diff_observability_map: order m=" + std::to_string(m) +
                       " needs more than three nested finite differences");
  }
  const LieContext c{system, depth <= 1 ? 1e-5 : 1e-3};
  const int ny = system.n_y;
  ObservabilityMap out;
  out.H.resize(m * ny);
  out.J.resize(m * ny, system.n_x);
  for (int i = 0; i < m; ++i) {
    out.H.segment(i * ny, ny) = lie_derivative(c, i, x);
    out.J.middleRows(i * ny, ny) = lie_jacobian(c, i, x);
  }
  return out;
}

ObservabilityReport rank_profile_Hm(const SystemModel& system, const DomainSpec& domain, int m, double rank_tol) {
  ObservabilityReport rep;
  rep.m = m;
  rep.rank_tol = rank_tol;
  std::vector<long> lattice;
  rep.points = domain.grid(&lattice);
  const std::size_t N = rep.points.size();
  rep.sigma_min.resize(N);
  rep.sigma_max.resize(N);
  rep.rank.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    const Mat J = diff_observability_map(system, rep.points[i], m).J;
    Eigen::JacobiSVD<Mat> svd(J);
    const Vec sv = svd.singularValues();
    rep.sigma_max[i] = sv.size() ? sv(0) : 0.0;
    rep.sigma_min[i] = J.rows() >= J.cols() && sv.size() ? sv(sv.size() - 1) : 0.0;
    int r = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k)
      if (sv(k) > rank_tol * rep.sigma_max[i] && sv(k) > 0) ++r;
    rep.rank[i] = r;
  }
  const auto nb = lattice_neighbors(domain, lattice);
  const double spacing = domain.grid_spacing();
  rep.sigma_slope.assign(N, 0.0);
  rep.full_rank.assign(N, 0);
  for (std::size_t i = 0; i < N; ++i) {
    for (int j : nb[i]) {
      const double d = (rep.points[i] - rep.points[j]).norm();
      rep.sigma_slope[i] = std::max(rep.sigma_slope[i], std::abs(rep.sigma_min[i] - rep.sigma_min[j]) / d);
    }
    const bool ok = rep.rank[i] == system.n_x && rep.sigma_min[i] > rank_tol * rep.sigma_max[i] &&
                    rep.sigma_min[i] > rep.sigma_slope[i] * spacing;
    rep.full_rank[i] = ok ? 1 : 0;
    if (!ok) rep.deficient.push_back(static_cast<int>(i));
  }
  return rep;
}

std::vector<KSweepRow> k_sweep_rank(const SystemModel& system, const FilterPair& pair, const std::vector<double>& ks,
                                    const std::vector<Vec>& probes, const TransformOptions& base, double rank_tol) {
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (!(ks[i] > 0)) throw ConfigError("k_sweep_rank: gains must be positive");
    if (i > 0 && !(ks[i] > ks[i - 1])) throw ConfigError("k_sweep_rank: gains must be ascending");
  }
  if (probes.empty()) throw EmptySet("k_sweep_rank: no probe points");
  std::vector<KSweepRow> rows;
  for (double k : ks) {
    TransformOptions opt = base;
    opt.k = k;
    if (base.horizon) opt.horizon = *base.horizon * base.k / k;
    TransformField field(system, pair, opt);
    KSweepRow row;
    row.k = k;
    row.horizon = field.horizon();
    row.min_sigma_min = std::numeric_limits<double>::infinity();
    row.full_rank = true;
    for (const auto& x : probes) {
      const auto s = singular_value_stats(field.jacobian(x));
      row.min_sigma_min = std::min(row.min_sigma_min, s.sigma_min);
      row.max_cond = std::max(row.max_cond, s.cond);
      row.full_rank = row.full_rank && s.sigma_min > rank_tol * s.sigma_max;
    }
    rows.push_back(row);
  }
  return rows;
}

double k_star_estimate(const std::vector<KSweepRow>& rows) {
  double k_star = -1;
  for (auto it = rows.rbegin(); it != rows.rend() && it->full_rank; ++it) k_star = it->k;
  return k_star;
}

std::string indist_csv(const IndistReport& report) {
  CsvWriter w;
  const auto nx = report.grid.empty() ? 0 : report.grid[0].size();
  std::vector<std::string> head{"index"};
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_" + std::to_string(i + 1));
  head.push_back("class_id");
  w.header(head);
  std::vector<double> row;
  for (std::size_t r = 0; r < report.grid.size(); ++r) {
    row.assign(1, static_cast<double>(r));
    row.insert(row.end(), report.grid[r].data(), report.grid[r].data() + nx);
    row.push_back(report.class_of[r]);
    w.row(row);
  }
  return w.str();
}

std::string observability_csv(const ObservabilityReport& report) {
  CsvWriter w;
  const auto nx = report.points.empty() ? 0 : report.points[0].size();
  std::vector<std::string> head;
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_" + std::to_string(i + 1));
  head.insert(head.end(), {"sigma_min", "rank", "full_rank"});
  w.header(head);
  std::vector<double> row;
  for (std::size_t r = 0; r < report.points.size(); ++r) {
    row.assign(report.points[r].data(), report.points[r].data() + nx);
    row.push_back(report.sigma_min[r]);
    row.push_back(report.rank[r]);
    row.push_back(report.full_rank[r]);
    w.row(row);
  }
  return w.str();
}

std::string ksweep_csv(const std::vector<KSweepRow>& rows) {
  CsvWriter w;
  w.header({"k", "horizon", "min_sigma_min", "max_cond", "full_rank"});
  for (const auto& r : rows) w.row({r.k, r.horizon, r.min_sigma_min, r.max_cond, r.full_rank ? 1.0 : 0.0});
  return w.str();
}

}  // namespace setkkl
