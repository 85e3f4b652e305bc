#include "setkkl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "setkkl/csv.hpp"

namespace setkkl {

using nlohmann::json;

namespace {

// Typed access into a JSON object with dotted-path error messages.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail("", "must be an object");
  }

  bool has(const std::string& key) const { return node_.contains(key) && !node_.at(key).is_null(); }

  Section sub(const std::string& key) const { return Section(node_.at(key), name(key)); }

  std::optional<Section> optional_sub(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return sub(key);
  }

  double number(const std::string& key) const {
    require(key);
    const json& v = node_.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    return v.get<double>();
  }

  double number(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

  std::optional<double> optional_number(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return number(key);
  }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_integer()) fail(key, "must be an integer");
    return v.get<int>();
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(key, "must be a nonnegative integer");
    return v.get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_boolean()) fail(key, "must be true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& key) const {
    require(key);
    const json& v = node_.at(key);
    if (!v.is_string()) fail(key, "must be a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const std::string& key) const {
    require(key);
    const json& v = node_.at(key);
    if (!v.is_array()) fail(key, "must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::optional<Vec> optional_vector(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const auto v = numbers(key);
    return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  const json& at(const std::string& key) const { return node_.at(key); }

  void require(const std::string& key) const {
    if (!has(key)) throw ConfigError("config: missing required field '" + name(key) + "'");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError("config: field '" + (key.empty() ? path_ : name(key)) + "' " + what);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& node_;
  std::string path_;
};

DomainSpec parse_domain(const Section& d) {
  const std::string kind = d.string("kind");
  const int res = d.integer("resolution", 20);
  if (res < 1) d.fail("resolution", "must be >= 1");
  auto vec = [&](const std::string& key) {
    const auto v = d.numbers(key);
    return Vec(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  if (kind == "box") return DomainSpec::box(vec("lower"), vec("upper"), res);
  if (kind == "ball") return DomainSpec::ball(vec("center"), d.number("radius"), res);
  if (kind == "annulus") return DomainSpec::annulus(vec("center"), d.number("r_inner"), d.number("r_outer"), res);
  d.fail("kind", "must be box, ball or annulus");
}

std::vector<std::complex<double>> parse_eigenvalues(const Section& pair) {
  pair.require("eigenvalues");
  const json& v = pair.at("eigenvalues");
  const std::string field = pair.name("eigenvalues");
  if (!v.is_array()) throw ConfigError("config: field '" + field + "' must be an array");
  std::vector<std::complex<double>> out;
  for (const auto& e : v) {
    if (e.is_number()) {
      out.emplace_back(e.get<double>(), 0.0);
    } else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
      out.emplace_back(e[0].get<double>(), e[1].get<double>());
    } else {
      throw ConfigError("config: field '" + field + "' entries must be numbers or [re, im] pairs");
    }
  }
  return out;
}

json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json domain_json(const DomainSpec& d) {
  json j;
  j["resolution"] = d.grid_resolution;
  switch (d.kind) {
    case DomainKind::box:
      j["kind"] = "box";
      j["lower"] = vec_json(d.lower);
      j["upper"] = vec_json(d.upper);
      break;
    case DomainKind::ball:
      j["kind"] = "ball";
      j["center"] = vec_json(d.center);
      j["radius"] = d.r_outer;
      break;
    case DomainKind::annulus:
      j["kind"] = "annulus";
      j["center"] = vec_json(d.center);
      j["r_inner"] = d.r_inner;
      j["r_outer"] = d.r_outer;
      break;
  }
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::filesystem::path emit(CommandResult& res, const ExperimentConfig& cfg, const std::string& name,
                           const std::string& content) {
  const std::filesystem::path dir(cfg.output_dir);
  std::filesystem::create_directories(dir);
  const std::filesystem::path path = dir / name;
  write_file_atomic(path, content);
  res.files.push_back(path);
  return path;
}

InversionConfig inversion_for(const Pipeline& p, const ImageAtlas& atlas) {
  InversionConfig inv = default_inversion_config(p.transform(), atlas);
  if (p.config.residual_tol) inv.residual_tol = *p.config.residual_tol;
  if (p.config.cluster_radius) inv.cluster_radius = *p.config.cluster_radius;
  inv.max_gn_iters = p.config.max_gn_iters;
  inv.seeds_per_query = p.config.seeds_per_query;
  inv.validate();
  return inv;
}

json transform_facts(const Pipeline& p) {
  const auto& f = p.transform();
  return {{"horizon", f.horizon()},
          {"output_bound", f.output_bound()},
          {"hurwitz_margin", p.pair.hurwitz_margin},
          {"controllability_cond", p.pair.controllability_cond},
          {"n_z", f.n_z()}};
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  const Section root(doc, "");
  ExperimentConfig c;
  c.system = root.string("system");
  if (auto d = root.optional_sub("domain")) {
    c.domain = parse_domain(*d);
    c.domain->validate();
  }
  c.output_dir = root.has("output_dir") ? root.string("output_dir") : c.output_dir;

  root.require("pair");
  const Section pair = root.sub("pair");
  pair.require("n_o");
  c.n_o = pair.integer("n_o", 0);
  c.eigenvalues = parse_eigenvalues(pair);
  c.pair_seed = pair.seed("seed", 0);
  c.pair_perturbation = pair.number("perturbation", 0.0);
  c.k = pair.number("k", 1.0);
  if (!(c.k > 0)) pair.fail("k", "must be positive");

  if (auto t = root.optional_sub("transform")) {
    c.tol_trunc = t->number("tol_trunc", c.tol_trunc);
    c.step = t->number("step", c.step);
    c.horizon = t->optional_number("horizon");
    if (auto cut = t->optional_sub("cutoff")) {
      c.r_keep = cut->optional_number("r_keep");
      c.r_zero = cut->optional_number("r_zero");
    }
    if (!(c.tol_trunc > 0)) t->fail("tol_trunc", "must be positive");
    if (!(c.step > 0)) t->fail("step", "must be positive");
  }

  if (auto inv = root.optional_sub("inversion")) {
    c.residual_tol = inv->optional_number("residual_tol");
    c.cluster_radius = inv->optional_number("cluster_radius");
    c.max_gn_iters = inv->integer("max_gn_iters", c.max_gn_iters);
    c.seeds_per_query = inv->integer("seeds_per_query", c.seeds_per_query);
  }

  if (auto obs = root.optional_sub("observer")) {
    c.x0 = obs->optional_vector("x0");
    c.z0 = obs->optional_vector("z0");
    c.obs_horizon = obs->number("horizon", c.obs_horizon);
    c.obs_step = obs->number("step", c.obs_step);
    c.decimation = obs->integer("decimation", c.decimation);
    c.initial_guess = obs->optional_vector("initial_guess");
    if (obs->has("iss_amplitudes")) c.iss_amplitudes = obs->numbers("iss_amplitudes");
    if (auto n = obs->optional_sub("noise")) {
      c.noise.kind = n->has("kind") ? parse_noise_kind(n->string("kind")) : NoiseKind::none;
      c.noise.amplitude = n->number("amplitude", 0.0);
      c.noise.seed = n->seed("seed", 0);
      c.noise.frequency = n->number("frequency", c.noise.frequency);
      c.noise.validate();
    }
    if (!(c.obs_horizon >= 0)) obs->fail("horizon", "must be nonnegative");
    if (!(c.obs_step > 0)) obs->fail("step", "must be positive");
    if (c.decimation < 1) obs->fail("decimation", "must be >= 1");
  }

  if (auto d = root.optional_sub("diagnostics")) {
    c.cardinality = d->boolean("cardinality", false);
    c.characterization = d->boolean("characterization", false);
    c.rank_map = d->boolean("rank_map", false);
    c.hm_order = d->integer("hm_order", 1);
    if (d->has("k_sweep")) c.k_sweep = d->numbers("k_sweep");
    c.k_sweep_probes = d->integer("k_sweep_probes", c.k_sweep_probes);
    c.lipschitz = d->boolean("lipschitz", false);
    c.lipschitz_pairs = d->integer("lipschitz_pairs", c.lipschitz_pairs);
    c.oracle_horizon = d->optional_number("oracle_horizon");
    c.oracle_tol = d->number("oracle_tol", c.oracle_tol);
    c.match_tol = d->optional_number("match_tol");
    c.horizon_doubling = d->boolean("horizon_doubling", false);
    if (c.hm_order < 1) d->fail("hm_order", "must be >= 1");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.noise.seed = seed;
  cfg.pair_seed = seed;
}

Pipeline build_pipeline(const ExperimentConfig& cfg) {
  Pipeline p;
  p.config = cfg;
  p.base = example_registry(cfg.system);
  if (cfg.domain) {
    if (cfg.domain->dim() != p.base.n_x) throw ConfigError("config: field 'domain' has the wrong dimension");
    p.base.domain = *cfg.domain;
  }
  p.domain = p.base.domain;
  const double r_keep = cfg.r_keep.value_or(p.domain.bounding_radius());
  const double r_zero = cfg.r_zero.value_or(1.5 * r_keep);
  p.cut = cutoff_field(p.base, r_keep, r_zero);
  p.pair = make_filter_pair(p.base.n_y, cfg.n_o, cfg.eigenvalues, cfg.pair_seed, cfg.pair_perturbation);
  TransformOptions opt;
  opt.tol_trunc = cfg.tol_trunc;
  opt.step = cfg.step;
  opt.k = cfg.k;
  opt.horizon = cfg.horizon;
  p.field = std::make_unique<TransformField>(p.cut, p.pair, opt);
  return p;
}

json resolved_config_json(const Pipeline& p, const InversionConfig* inv) {
  const ExperimentConfig& c = p.config;
  json eig = json::array();
  for (const auto& e : c.eigenvalues) eig.push_back(e.imag() == 0 ? json(e.real()) : json({e.real(), e.imag()}));
  json j;
  j["system"] = c.system;
  j["domain"] = domain_json(p.domain);
  j["pair"] = {{"n_o", c.n_o}, {"eigenvalues", eig}, {"seed", c.pair_seed}, {"perturbation", c.pair_perturbation},
               {"k", c.k}};
  j["transform"] = {{"tol_trunc", c.tol_trunc},
                    {"step", c.step},
                    {"horizon", p.transform().horizon()},
                    {"horizon_from_config", c.horizon.has_value()},
                    {"cutoff", {{"r_keep", p.cut.cutoff->r_keep}, {"r_zero", p.cut.cutoff->r_zero}}}};
  if (inv) {
    j["inversion"] = {{"residual_tol", inv->residual_tol},
                      {"cluster_radius", inv->cluster_radius},
                      {"max_gn_iters", inv->max_gn_iters},
                      {"seeds_per_query", inv->seeds_per_query}};
  }
  json obs;
  obs["x0"] = c.x0 ? vec_json(*c.x0) : json(nullptr);
  obs["z0"] = c.z0 ? vec_json(*c.z0) : vec_json(Vec::Zero(p.transform().n_z()));
  obs["horizon"] = c.obs_horizon;
  obs["step"] = c.obs_step;
  obs["decimation"] = c.decimation;
  obs["initial_guess"] = c.initial_guess ? vec_json(*c.initial_guess)
                                         : vec_json(0.5 * (p.domain.bbox_lower() + p.domain.bbox_upper()));
  obs["noise"] = {{"kind", noise_kind_name(c.noise.kind)},
                  {"amplitude", c.noise.amplitude},
                  {"seed", c.noise.seed},
                  {"frequency", c.noise.frequency}};
  obs["iss_amplitudes"] = c.iss_amplitudes;
  j["observer"] = obs;
  j["diagnostics"] = {{"cardinality", c.cardinality},
                      {"characterization", c.characterization},
                      {"rank_map", c.rank_map},
                      {"hm_order", c.hm_order},
                      {"k_sweep", c.k_sweep},
                      {"k_sweep_probes", c.k_sweep_probes},
                      {"lipschitz", c.lipschitz},
                      {"lipschitz_pairs", c.lipschitz_pairs},
                      {"oracle_horizon", c.oracle_horizon ? json(*c.oracle_horizon) : json(nullptr)},
                      {"oracle_tol", c.oracle_tol},
                      {"match_tol", c.match_tol ? json(*c.match_tol) : json(nullptr)},
                      {"horizon_doubling", c.horizon_doubling}};
  j["output_dir"] = c.output_dir;
  return j;
}

CommandResult cmd_transform_build(const ExperimentConfig& cfg) {
  const Pipeline p = build_pipeline(cfg);
  const ImageAtlas atlas = tabulate_image(p.transform(), p.domain);
  const ConditioningReport cond = conditioning_map(atlas);
  const InversionConfig inv = inversion_for(p, atlas);

  CommandResult res;
  emit(res, cfg, "atlas.csv", atlas_csv(atlas));
  emit(res, cfg, "conditioning.csv", conditioning_csv(cond));
  res.summary = {{"command", "transform-build"},
                 {"points", atlas.size()},
                 {"min_sigma_min", cond.min_sigma_min},
                 {"max_cond", cond.max_cond},
                 {"full_rank", cond.full_rank},
                 {"cond_below_1e3", cond.below_1e3},
                 {"transform", transform_facts(p)}};
  emit(res, cfg, "summary.json", dump(res.summary));
  json meta{{"config", resolved_config_json(p, &inv)}, {"summary", res.summary}};
  emit(res, cfg, "meta.json", dump(meta));
  return res;
}

CommandResult cmd_observe(const ExperimentConfig& cfg) {
  const Pipeline p = build_pipeline(cfg);
  if (!cfg.x0) throw ConfigError("config: missing required field 'observer.x0'");
  const ImageAtlas atlas = tabulate_image(p.transform(), p.domain);
  const InversionConfig inv = inversion_for(p, atlas);

  ObserverOptions opts;
  opts.horizon = cfg.obs_horizon;
  opts.step = cfg.obs_step;
  opts.decimation = cfg.decimation;
  opts.noise = cfg.noise;
  opts.initial_guess = cfg.initial_guess;
  const Vec z0 = cfg.z0.value_or(Vec::Zero(p.transform().n_z()));
  const ObserverRun run = run_set_observer(p.transform(), atlas, *cfg.x0, z0, opts, inv);

  CommandResult res;
  emit(res, cfg, "run.csv", run_csv(run));
  emit(res, cfg, "estimates.csv", estimates_csv(run));
  emit(res, cfg, "atlas.csv", atlas_csv(atlas));

  const SlopeFit fit = fit_decay_slope(run.times, run.hausdorff_series);
  const SlopeFit zfit = fit_decay_slope(run.times, run.z_error_series);
  const ShortArcReport arc = short_arc_check(run.z_states, 50, 1e-9);
  res.summary = {{"command", "observe"},
                 {"rows", run.times.size()},
                 {"truth_provenance", run.truth_provenance},
                 {"hausdorff_slope", fit.slope},
                 {"hausdorff_slope_samples", fit.samples},
                 {"hausdorff_floor", terminal_max(run.times, run.hausdorff_series)},
                 {"z_error_slope", zfit.slope},
                 {"selection_max_jump", run.selection.max_jump},
                 {"selection_jump_tol", run.selection.jump_tol},
                 {"selection_continuous", run.selection.continuous},
                 {"selection_gaps", run.selection.gaps.size()},
                 {"domain_exits", run.domain_exits.size()},
                 {"short_arc_near_crossings", arc.near_crossings},
                 {"transform", transform_facts(p)}};

  if (!cfg.iss_amplitudes.empty()) {
    const auto rows = iss_sweep(p.transform(), atlas, *cfg.x0, z0, opts, cfg.iss_amplitudes, inv);
    emit(res, cfg, "iss.csv", iss_csv(rows));
    json floors = json::array();
    for (const auto& r : rows) floors.push_back({{"amplitude", r.amplitude}, {"floor", r.floor}});
    res.summary["iss"] = floors;
  }
  json meta{{"config", resolved_config_json(p, &inv)}, {"summary", res.summary}};
  emit(res, cfg, "meta.json", dump(meta));
  return res;
}

CommandResult cmd_diagnose(const ExperimentConfig& cfg) {
  const Pipeline p = build_pipeline(cfg);
  CommandResult res;
  res.summary = {{"command", "diagnose"}};

  std::optional<ImageAtlas> atlas;
  std::optional<InversionConfig> inv;
  auto need_atlas = [&]() -> const ImageAtlas& {
    if (!atlas) {
      atlas = tabulate_image(p.transform(), p.domain);
      inv = inversion_for(p, *atlas);
    }
    return *atlas;
  };

  if (cfg.cardinality) {
    const auto& a = need_atlas();
    const CardinalityReport card = cardinality_profile(p.transform(), a, *inv);
    emit(res, cfg, "cardinality.csv", cardinality_csv(card));
    json viol = json::array();
    for (int v : card.violations) viol.push_back({{"x", vec_json(a.grid_points[v])}, {"card", card.cardinality[v]}});
    res.summary["cardinality"] = {{"modal_p", card.modal_p}, {"violations", viol}};
  }

  if (cfg.characterization) {
    const auto& a = need_atlas();
    const double horizon = cfg.oracle_horizon.value_or(default_oracle_horizon(p.cut, p.domain, cfg.step));
    const IndistReport oracle = backward_indist_oracle(p.cut, p.domain, horizon, cfg.oracle_tol, cfg.step);
    const double match_tol = cfg.match_tol.value_or(inv->residual_tol);
    const CharacterizationResult ch = characterization_check(p.transform(), oracle, match_tol, &a.images);
    emit(res, cfg, "indist.csv", indist_csv(oracle));
    json s{{"oracle_horizon", horizon},
           {"oracle_tol", cfg.oracle_tol},
           {"classes", oracle.classes.size()},
           {"modal_class_size", oracle.modal_class_size()},
           {"transitivity_violations", oracle.transitivity_violations.size()},
           {"pass", ch.pass},
           {"match_tol", ch.match_tol},
           {"forward_margin", ch.forward_margin},
           {"reverse_margin", std::isinf(ch.reverse_margin) ? json(nullptr) : json(ch.reverse_margin)}};
    if (cfg.horizon_doubling) {
      const IndistReport longer = backward_indist_oracle(p.cut, p.domain, 2 * horizon, cfg.oracle_tol, cfg.step);
      s["classes_split_by_doubling"] = count_split_classes(oracle, longer);
    }
    res.summary["characterization"] = s;
  }

  if (cfg.rank_map) {
    const ObservabilityReport obs = rank_profile_Hm(p.base, p.domain, cfg.hm_order);
    emit(res, cfg, "observability.csv", observability_csv(obs));
    json def = json::array();
    for (int d : obs.deficient) def.push_back(vec_json(obs.points[d]));
    res.summary["rank_map"] = {{"m", obs.m}, {"points", obs.points.size()}, {"deficient", def}};
  }

  if (!cfg.k_sweep.empty()) {
    const auto grid = p.domain.grid();
    std::vector<Vec> probes;
    const std::size_t every = std::max<std::size_t>(1, grid.size() / std::max(1, cfg.k_sweep_probes));
    for (std::size_t i = 0; i < grid.size(); i += every) probes.push_back(grid[i]);
    TransformOptions opt;
    opt.tol_trunc = cfg.tol_trunc;
    opt.step = cfg.step;
    opt.k = cfg.k;
    opt.horizon = cfg.horizon;
    const auto rows = k_sweep_rank(p.cut, p.pair, cfg.k_sweep, probes, opt);
    emit(res, cfg, "ksweep.csv", ksweep_csv(rows));
    const double k_star = k_star_estimate(rows);
    res.summary["k_sweep"] = {{"probes", probes.size()}, {"k_star_estimate", k_star < 0 ? json(nullptr) : json(k_star)}};
  }

  if (cfg.lipschitz) {
    const auto& a = need_atlas();
    const auto est = empirical_lipschitz(p.transform(), a, *inv, cfg.lipschitz_pairs, cfg.pair_seed);
    res.summary["lipschitz"] = {{"max_ratio", est.max_ratio}, {"median_ratio", est.median_ratio}, {"pairs", est.pairs}};
  }

  json meta{{"config", resolved_config_json(p, inv ? &*inv : nullptr)}, {"summary", res.summary}};
  emit(res, cfg, "meta.json", dump(meta));
  return res;
}

}  // namespace setkkl
