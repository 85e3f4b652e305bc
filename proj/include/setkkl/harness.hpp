#pragma once

// Declarative experiment configs and the three pipeline commands behind the
// setkkl CLI. Every command writes its artifacts atomically into the output
// directory and returns a JSON summary.

#include <complex>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "setkkl/distinguish.hpp"
#include "setkkl/observer.hpp"

namespace setkkl {

struct ExperimentConfig {
  std::string system;
  std::optional<DomainSpec> domain;  // defaults to the registered domain

  // Filter pair.
  int n_o = 0;
  std::vector<std::complex<double>> eigenvalues;
  std::uint64_t pair_seed = 0;
  double pair_perturbation = 0;
  double k = 1.0;

  // Transform.
  double tol_trunc = 1e-6;
  double step = 1e-3;
  std::optional<double> horizon;
  std::optional<double> r_keep;
  std::optional<double> r_zero;

  // Inversion; unset values follow the atlas-derived defaults.
  std::optional<double> residual_tol;
  std::optional<double> cluster_radius;
  int max_gn_iters = 50;
  int seeds_per_query = 4;

  // Observer.
  std::optional<Vec> x0;
  std::optional<Vec> z0;
  double obs_horizon = 15.0;
  double obs_step = 1e-3;
  int decimation = 10;
  NoiseSpec noise;
  std::optional<Vec> initial_guess;
  std::vector<double> iss_amplitudes;

  // Diagnostics.
  bool cardinality = false;
  bool characterization = false;
  bool rank_map = false;
  int hm_order = 1;
  std::vector<double> k_sweep;
  int k_sweep_probes = 32;
  bool lipschitz = false;
  int lipschitz_pairs = 200;
  std::optional<double> oracle_horizon;
  double oracle_tol = 1e-3;
  std::optional<double> match_tol;
  bool horizon_doubling = false;

  std::string output_dir = "out";
};

// Throws ConfigError naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Applies a --seed override to every seeded component.
void apply_seed(ExperimentConfig& cfg, std::uint64_t seed);

// The assembled objects for one config.
struct Pipeline {
  ExperimentConfig config;
  SystemModel base;  // registered model with the config domain
  SystemModel cut;   // cutoff field used by the transform and simulations
  FilterPair pair;
  std::unique_ptr<TransformField> field;
  DomainSpec domain;

  const TransformField& transform() const { return *field; }
};

Pipeline build_pipeline(const ExperimentConfig& cfg);

// Resolved config (defaults filled in) as written to meta.json.
nlohmann::json resolved_config_json(const Pipeline& p, const InversionConfig* inv = nullptr);

struct CommandResult {
  std::vector<std::filesystem::path> files;
  nlohmann::json summary;
};

CommandResult cmd_transform_build(const ExperimentConfig& cfg);
CommandResult cmd_observe(const ExperimentConfig& cfg);
CommandResult cmd_diagnose(const ExperimentConfig& cfg);

}  // namespace setkkl
