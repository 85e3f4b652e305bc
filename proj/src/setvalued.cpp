#include "setkkl/setvalued.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "setkkl/csv.hpp"
#include "setkkl/rng.hpp"

namespace setkkl {

void InversionConfig::validate() const {
  if (!(residual_tol > 0)) throw ConfigError("inversion: residual_tol must be positive");
  if (!(cluster_radius > 0)) throw ConfigError("inversion: cluster_radius must be positive");
  if (max_gn_iters < 0) throw ConfigError("inversion: max_gn_iters must be nonnegative");
  if (seeds_per_query < 1) throw ConfigError("inversion: seeds_per_query must be >= 1");
}

InversionConfig default_inversion_config(const TransformField& field, const ImageAtlas& atlas) {
  InversionConfig cfg;
  cfg.residual_tol = 10 * field.tol_trunc();
  cfg.cluster_radius = 2 * atlas.spacing();
  return cfg;
}

namespace {

double directed_gap(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  double gap = 0;
  for (const auto& p : a) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : b) best = std::min(best, (p - q).norm());
    gap = std::max(gap, best);
  }
  return gap;
}

bool lex_less(const Vec& a, const Vec& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
}

}  // namespace

HausdorffResult hausdorff(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.empty() || b.empty()) throw EmptySet("hausdorff: both sets must be nonempty");
  HausdorffResult r;
  r.delta_ab = directed_gap(a, b);
  r.delta_ba = directed_gap(b, a);
  r.d_H = std::max(r.delta_ab, r.delta_ba);
  return r;
}

HausdorffResult hausdorff(const PointSet& a, const PointSet& b) { return hausdorff(a.points, b.points); }

double tuple_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  if (a.size() != b.size()) throw LengthMismatch("tuple_distance: tuples differ in length");
  if (a.size() > 8) throw TooLarge("tuple_distance: p > 8 is not enumerated");
  const std::size_t p = a.size();
  std::vector<std::vector<double>> d(p, std::vector<double>(p));
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) d[i][j] = (a[i] - b[j]).norm();
  std::vector<std::size_t> perm(p);
  std::iota(perm.begin(), perm.end(), 0);
  double best = p == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  do {
    double worst = 0;
    for (std::size_t i = 0; i < p && worst < best; ++i) worst = std::max(worst, d[i][perm[i]]);
    best = std::min(best, worst);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

GaussNewtonResult gauss_newton(const TransformField& field, const DomainSpec& domain, const Vec& z, const Vec& x0,
                               const InversionConfig& cfg, const Vec* z0, const Mat* j0, const GaussNewtonStop& stop) {
  GaussNewtonResult out;
  out.x = domain.project(x0);
  Vec T;
  Mat J;
  if (z0 && j0 && out.x == x0) {
    T = *z0;
    J = *j0;
  } else {
    field.evaluate_into(out.x, T, &J);
  }
  out.residual = (T - z).norm();

  Vec Tt;
  Mat Jt;
  for (int it = 0; it < cfg.max_gn_iters; ++it) {
    if (out.residual <= 0.1 * cfg.residual_tol) break;
    const Vec r = T - z;
    const Vec g = J.transpose() * r;
    if (g.norm() < 1e-10) break;
    Mat JtJ = J.transpose() * J;
    const double mu = 1e-12 * std::max(1.0, JtJ.diagonal().maxCoeff());
    JtJ.diagonal().array() += mu;
    Vec dx = JtJ.ldlt().solve(-g);
    bool newton = false;
    // Off the image the curvature term sum_i r_i Hess(T_i) matters; it is
    // differenced from the Jacobian and used whenever the full Hessian is
    // positive definite.
    if (stop.curvature && out.residual > cfg.residual_tol) {
      const Eigen::Index n = out.x.size();
      Mat S(n, n);
      for (Eigen::Index j = 0; j < n; ++j) {
        const double h = 1e-6 * (1 + std::abs(out.x(j)));
        Vec xh = out.x;
        xh(j) += h;
        field.evaluate_into(xh, Tt, &Jt);
        S.col(j) = (Jt - J).transpose() * r / h;
      }
      const Mat H = JtJ + 0.5 * (S + S.transpose());
      Eigen::LDLT<Mat> ldlt(H);
      if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > mu).all()) {
        dx = ldlt.solve(-g);
        newton = true;
      }
    }

    // The full step is tried with the Jacobian attached; halved trials
    // evaluate T alone and fetch the Jacobian once accepted.
    double alpha = 1;
    bool accepted = false;
    Vec xt;
    double rt = 0;
    for (int halving = 0; halving <= 30; ++halving, alpha *= 0.5) {
      xt = domain.project(out.x + alpha * dx);
      if ((xt - out.x).norm() == 0) break;
      field.evaluate_into(xt, Tt, halving == 0 ? &Jt : nullptr);
      rt = (Tt - z).norm();
      if (rt < out.residual) {
        accepted = true;
        if (halving > 0) field.evaluate_into(xt, Tt, &Jt);
        break;
      }
    }
    if (!accepted) break;
    const double moved = (xt - out.x).norm();
    const double drop = out.residual - rt;
    const double decrease = drop / out.residual;
    out.x = xt;
    out.residual = rt;
    T.swap(Tt);
    J.swap(Jt);
    out.iterations = it + 1;
    if (moved < 1e-10 * (1 + out.x.norm())) break;
    // Off the image the residual settles at a positive floor.
    if (out.residual > cfg.residual_tol) {
      if (newton ? moved < 1e-6 * (1 + out.x.norm())
                 : drop < std::max(0.1 * cfg.residual_tol, 1e-3 * out.residual))
        break;
    }
    if (out.residual > stop.abandon_above && decrease < 1e-2) {
      out.abandoned = true;
      return out;
    }
    if (stop.roots) {
      for (std::size_t k = 0; k < stop.roots->size(); ++k) {
        if (stop.root_residuals && (*stop.root_residuals)[k] > out.residual) continue;
        if (((*stop.roots)[k] - out.x).norm() <= stop.capture_radius) {
          out.abandoned = true;
          return out;
        }
      }
    }
  }
  return out;
}

namespace {

// Residual band treated as tied with the best residual r off the image.
double argmin_slack(double r, const InversionConfig& cfg) { return std::max(cfg.residual_tol, 1e-2 * r); }

struct Candidate {
  Vec x;
  double residual = 0;
};

// Start for the branch through w matching the move of another branch from
// w0 to x: w + J(w)^+ J(w0) (x - w0).
Vec transport_start(const TransformField& field, const Vec& w0, const Vec& x, const Vec& w) {
  Vec T;
  Mat J0, J;
  field.evaluate_into(w0, T, &J0);
  field.evaluate_into(w, T, &J);
  return w + J.completeOrthogonalDecomposition().solve(Vec(J0 * (x - w0)));
}

std::vector<Candidate> multistart(const TransformField& field, const ImageAtlas& atlas, const Vec& z,
                                  const InversionConfig& cfg, const std::vector<Vec>& warm_starts) {
  cfg.validate();
  if (atlas.size() == 0) throw EmptySet("inversion: atlas is empty");
  const int N = static_cast<int>(atlas.size());
  std::vector<double> dist(N);
  for (int i = 0; i < N; ++i) dist[i] = (atlas.images[i] - z).norm();
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });

  std::vector<int> seeds;
  std::vector<char> taken(N, 0);
  auto take = [&](int i) {
    if (!taken[i]) {
      taken[i] = 1;
      seeds.push_back(i);
    }
  };
  for (int i : order) {
    if (dist[i] > 3 * cfg.residual_tol) break;
    take(i);
  }
  for (int k = 0; k < std::min(cfg.seeds_per_query, N); ++k) take(order[k]);

  // Minimisers of the per-row linear models T_i + J_i s, |s| <= width,
  // ranked by predicted residual and thinned at the cluster radius.
  const double width = std::sqrt(static_cast<double>(field.n_x())) * atlas.spacing();
  std::vector<double> model(N);
  std::vector<Vec> model_x(N);
  for (int i = 0; i < N; ++i) {
    const Mat& J = atlas.jacobians[i];
    const Vec r = atlas.images[i] - z;
    Mat JtJ = J.transpose() * J;
    JtJ.diagonal().array() += 1e-12 * std::max(1.0, JtJ.diagonal().maxCoeff());
    Vec step = JtJ.ldlt().solve(Vec(-J.transpose() * r));
    const double len = step.norm();
    if (len > width) step *= width / len;
    model_x[i] = atlas.domain.project(atlas.grid_points[i] + step);
    model[i] = (r + J * (model_x[i] - atlas.grid_points[i])).norm();
  }
  std::vector<int> by_model(N);
  std::iota(by_model.begin(), by_model.end(), 0);
  std::sort(by_model.begin(), by_model.end(),
            [&](int a, int b) { return model[a] < model[b] || (model[a] == model[b] && a < b); });
  std::vector<int> model_seeds;
  for (int i : by_model) {
    if (static_cast<int>(model_seeds.size()) >= cfg.seeds_per_query) break;
    bool close = false;
    for (int m : model_seeds) close = close || (model_x[m] - model_x[i]).norm() <= cfg.cluster_radius;
    if (!close) model_seeds.push_back(i);
  }

  std::vector<Candidate> cands;
  std::vector<Vec> found;
  std::vector<double> found_residual;
  const double skip = 0.5 * cfg.cluster_radius;
  GaussNewtonStop stop;
  stop.roots = &found;
  stop.root_residuals = &found_residual;
  stop.capture_radius = skip;
  std::vector<char> polished;
  auto record = [&](const GaussNewtonResult& gn, bool second_order) {
    if (gn.abandoned) return;
    cands.push_back({gn.x, gn.residual});
    polished.push_back(second_order);
    found.push_back(gn.x);
    found_residual.push_back(gn.residual);
    stop.abandon_above = std::min(stop.abandon_above, gn.residual + argmin_slack(gn.residual, cfg));
  };
  auto near_existing = [&](const Vec& x) {
    for (const auto& c : cands)
      if ((c.x - x).norm() <= skip) return true;
    return false;
  };
  // The first tracked branch is minimised; later ones are first carried
  // over from it by solving T(y) = T(x) (see transport_start).
  std::vector<std::pair<Vec, std::size_t>> tracks;  // warm start, candidate index
  GaussNewtonStop exact;
  exact.curvature = false;
  for (const auto& w : warm_starts) {
    if (near_existing(w)) continue;
    if (!tracks.empty()) {
      const auto& [w0, k0] = tracks.front();
      const Vec target = field.evaluate(cands[k0].x);
      const auto gn = gauss_newton(field, atlas.domain, target, transport_start(field, w0, cands[k0].x, w), cfg, nullptr,
                                   nullptr, exact);
      if (gn.residual <= cfg.residual_tol && (gn.x - cands[k0].x).norm() > cfg.cluster_radius) {
        tracks.emplace_back(w, cands.size());
        cands.push_back({gn.x, (field.evaluate(gn.x) - z).norm()});
        polished.push_back(1);
        found.push_back(gn.x);
        found_residual.push_back(cands.back().residual);
        continue;
      }
    }
    GaussNewtonStop tracked = stop;
    tracked.abandon_above = std::numeric_limits<double>::infinity();
    const auto gn = gauss_newton(field, atlas.domain, z, w, cfg, nullptr, nullptr, tracked);
    if (!gn.abandoned) tracks.emplace_back(w, cands.size());
    record(gn, true);
  }
  stop.curvature = false;
  // A model seed next to a candidate still runs when its predicted residual
  // undercuts that candidate.
  for (int i : model_seeds) {
    bool covered = false;
    for (const auto& c : cands) covered = covered || ((c.x - model_x[i]).norm() <= skip && c.residual <= model[i]);
    if (covered) continue;
    record(gauss_newton(field, atlas.domain, z, model_x[i], cfg, nullptr, nullptr, stop), false);
  }
  for (int i : seeds) {
    if (near_existing(atlas.grid_points[i])) continue;
    record(gauss_newton(field, atlas.domain, z, atlas.grid_points[i], cfg, &atlas.images[i], &atlas.jacobians[i], stop),
           false);
  }

  // Off the image, first-order runs stop short of the minimiser; the ones
  // competing for the argmin are refined with the curvature term.
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) best = std::min(best, c.residual);
  if (best > cfg.residual_tol) {
    GaussNewtonStop refine;
    for (std::size_t k = 0; k < cands.size(); ++k) {
      if (polished[k] || cands[k].residual > best + argmin_slack(best, cfg)) continue;
      const auto gn = gauss_newton(field, atlas.domain, z, cands[k].x, cfg, nullptr, nullptr, refine);
      cands[k] = {gn.x, gn.residual};
    }
  }

  // Branches that fell into a worse local minimum are recovered by solving
  // T(y) = T(x) for an admissible candidate x; any solution away from x
  // shares its residual. A tracked branch starts from its warm start moved
  // by the winner's displacement, mapped through the two Jacobians.
  for (const auto& c : cands) best = std::min(best, c.residual);
  const double keep = best + argmin_slack(best, cfg);
  std::vector<std::size_t> winners;
  for (std::size_t k = 0; k < cands.size(); ++k)
    if (cands[k].residual <= keep) winners.push_back(k);
  struct Lagging {
    Vec x;
    const Vec* warm = nullptr;
  };
  std::vector<Lagging> lagging;
  auto isolated = [&](const Vec& x) {
    for (std::size_t k : winners)
      if ((cands[k].x - x).norm() <= cfg.cluster_radius) return false;
    for (const auto& l : lagging)
      if ((l.x - x).norm() <= cfg.cluster_radius) return false;
    return true;
  };
  for (const auto& [w, k] : tracks)
    if (cands[k].residual > keep && isolated(cands[k].x)) lagging.push_back({cands[k].x, &w});
  for (const auto& c : cands) {
    if (static_cast<int>(lagging.size()) >= cfg.seeds_per_query) break;
    if (c.residual > keep && isolated(c.x)) lagging.push_back({c.x, nullptr});
  }
  if (!lagging.empty()) {
    for (std::size_t d : winners) {
      const Vec& xd = cands[d].x;
      const Vec target = field.evaluate(xd);
      const Vec* origin = warm_starts.empty() ? nullptr : &warm_starts.front();
      for (const auto& v : warm_starts)
        if ((v - xd).norm() < (*origin - xd).norm()) origin = &v;
      for (const auto& lag : lagging) {
        std::vector<Vec> starts;
        if (lag.warm && origin && (*lag.warm - *origin).norm() > cfg.cluster_radius)
          starts.push_back(transport_start(field, *origin, xd, *lag.warm));
        starts.push_back(lag.x);
        for (const auto& start : starts) {
          const auto gn = gauss_newton(field, atlas.domain, target, start, cfg, nullptr, nullptr, exact);
          if (gn.residual > cfg.residual_tol || (gn.x - xd).norm() <= cfg.cluster_radius) continue;
          const double r = (field.evaluate(gn.x) - z).norm();
          if (r <= keep) {
            cands.push_back({gn.x, r});
            break;
          }
        }
      }
    }
  }
  return cands;
}

PointSet cluster(std::vector<Candidate> cands, double radius) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.residual != b.residual) return a.residual < b.residual;
    return lex_less(a.x, b.x);
  });
  PointSet out;
  out.merge_radius = radius;
  for (const auto& c : cands) {
    bool merged = false;
    for (const auto& p : out.points) {
      if ((p - c.x).norm() <= radius) {
        merged = true;
        break;
      }
    }
    if (!merged) out.points.push_back(c.x);
  }
  std::sort(out.points.begin(), out.points.end(), lex_less);
  return out;
}

std::vector<Candidate> admissible(const std::vector<Candidate>& cands, const DomainSpec& domain, double threshold) {
  std::vector<Candidate> kept;
  for (const auto& c : cands)
    if (c.residual <= threshold && domain.contains(c.x)) kept.push_back(c);
  return kept;
}

}  // namespace

PointSet preimage(const TransformField& field, const ImageAtlas& atlas, const Vec& z, const InversionConfig& cfg,
                  const std::vector<Vec>& warm_starts) {
  const auto cands = multistart(field, atlas, z, cfg, warm_starts);
  return cluster(admissible(cands, atlas.domain, cfg.residual_tol), cfg.cluster_radius);
}

PointSet extend_inverse(const TransformField& field, const ImageAtlas& atlas, const Vec& z,
                        const InversionConfig& cfg, const std::vector<Vec>& warm_starts) {
  const auto cands = multistart(field, atlas, z, cfg, warm_starts);
  double r_star = std::numeric_limits<double>::infinity();
  for (const auto& c : cands) r_star = std::min(r_star, c.residual);
  const double threshold = r_star + argmin_slack(r_star, cfg);
  PointSet out = cluster(admissible(cands, atlas.domain, threshold), cfg.cluster_radius);
  if (out.empty()) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(atlas.size()); ++i)
      if ((atlas.images[i] - z).norm() < (atlas.images[best] - z).norm()) best = i;
    out.points.push_back(atlas.grid_points[best]);
  }
  return out;
}

CardinalityReport cardinality_profile(const TransformField& field, const ImageAtlas& atlas,
                                      const InversionConfig& cfg) {
  CardinalityReport rep;
  rep.points = atlas.grid_points;
  rep.cardinality.resize(atlas.size());
  std::map<int, int> counts;
  for (std::size_t i = 0; i < atlas.size(); ++i) {
    rep.cardinality[i] = static_cast<int>(preimage(field, atlas, atlas.images[i], cfg).size());
    ++counts[rep.cardinality[i]];
  }
  int best = -1;
  for (const auto& [card, count] : counts) {
    if (count > best) {
      best = count;
      rep.modal_p = card;
    }
  }
  for (std::size_t i = 0; i < atlas.size(); ++i)
    if (rep.cardinality[i] != rep.modal_p) rep.violations.push_back(static_cast<int>(i));
  return rep;
}

std::string cardinality_csv(const CardinalityReport& report) {
  CsvWriter w;
  const auto nx = report.points.empty() ? 0 : report.points[0].size();
  std::vector<std::string> head;
  for (Eigen::Index i = 0; i < nx; ++i) head.push_back("x_" + std::to_string(i + 1));
  head.insert(head.end(), {"card", "modal_flag"});
  w.header(head);
  std::vector<double> row;
  for (std::size_t r = 0; r < report.points.size(); ++r) {
    row.assign(report.points[r].data(), report.points[r].data() + nx);
    row.push_back(report.cardinality[r]);
    row.push_back(report.cardinality[r] == report.modal_p ? 1.0 : 0.0);
    w.row(row);
  }
  return w.str();
}

BranchMatch match_branches(const PointSet& prev, const PointSet& next) {
  if (prev.empty() || next.empty()) throw EmptySet("match_branches: both sets must be nonempty");
  struct Pair {
    double d;
    int i;  // next
    int j;  // prev
  };
  std::vector<Pair> pairs;
  for (int i = 0; i < static_cast<int>(next.size()); ++i)
    for (int j = 0; j < static_cast<int>(prev.size()); ++j) pairs.push_back({(next.points[i] - prev.points[j]).norm(), i, j});
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  BranchMatch m;
  m.pairing.assign(next.size(), -1);
  std::vector<char> used(prev.size(), 0);
  for (const auto& p : pairs) {
    if (m.pairing[p.i] >= 0 || used[p.j]) continue;
    m.pairing[p.i] = p.j;
    used[p.j] = 1;
    m.max_distance = std::max(m.max_distance, p.d);
  }
  for (int j = 0; j < static_cast<int>(prev.size()); ++j)
    if (!used[j]) m.unmatched_prev.push_back(j);
  m.cardinality_changed = prev.size() != next.size();
  return m;
}

BranchTrack track_branches(const std::vector<PointSet>& sets) {
  BranchTrack track;
  if (sets.empty()) return track;
  std::vector<int> first(sets[0].size());
  std::iota(first.begin(), first.end(), 0);
  track.labels.push_back(first);
  int next_label = static_cast<int>(first.size());
  for (std::size_t t = 1; t < sets.size(); ++t) {
    const auto m = match_branches(sets[t - 1], sets[t]);
    std::vector<int> labels(sets[t].size());
    bool identity = !m.cardinality_changed;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int j = m.pairing[i];
      labels[i] = j >= 0 ? track.labels[t - 1][j] : next_label++;
      if (j != static_cast<int>(i)) identity = false;
    }
    if (!identity) track.swap_steps.push_back(static_cast<int>(t));
    track.labels.push_back(std::move(labels));
  }
  return track;
}

LipschitzEstimate empirical_lipschitz(const TransformField& field, const ImageAtlas& atlas,
                                      const InversionConfig& cfg, int max_pairs, std::uint64_t seed) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < static_cast<int>(atlas.size()); ++i)
    for (int j : atlas.neighbors(i))
      if (i < j) pairs.emplace_back(i, j);
  std::mt19937_64 rng(seed);
  for (std::size_t k = pairs.size(); k > 1; --k) std::swap(pairs[k - 1], pairs[uniform_index(rng, k)]);
  if (static_cast<int>(pairs.size()) > max_pairs) pairs.resize(max_pairs);

  std::map<int, PointSet> cache;
  auto inv = [&](int i) -> const PointSet& {
    auto it = cache.find(i);
    if (it == cache.end()) it = cache.emplace(i, extend_inverse(field, atlas, atlas.images[i], cfg)).first;
    return it->second;
  };
  LipschitzEstimate est;
  std::vector<double> ratios;
  for (const auto& [a, b] : pairs) {
    const double dz = (atlas.images[a] - atlas.images[b]).norm();
    if (dz == 0) continue;
    ratios.push_back(hausdorff(inv(a), inv(b)).d_H / dz);
  }
  est.pairs = static_cast<int>(ratios.size());
  if (!ratios.empty()) {
    est.max_ratio = *std::max_element(ratios.begin(), ratios.end());
    std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
    est.median_ratio = ratios[ratios.size() / 2];
  }
  return est;
}

}  // namespace setkkl
