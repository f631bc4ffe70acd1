#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "rlab/dynamics.hpp"
#include "rlab/evaluation.hpp"
#include "rlab/hybridcell.hpp"
#include "rlab/netcore.hpp"
#include "rlab/trainer.hpp"

namespace rlab {

/// Recorded in place of Discovery R^2 when a seed has nothing finite to evaluate.
inline constexpr double kFailedR2 = -10.0;

/// One experiment cell. Field names double as config-file keys.
struct ExperimentConfig {
  std::string name = "custom";
  std::string label = "Custom";
  /// True for registry entries whose hyperparameters are reconstructions.
  bool reconstructed = false;

  OscillatorKind system = OscillatorKind::Duffing;
  std::string arch = "mlp-small";  // arch registry name, or "oracle"

  // KAN overrides
  int grid_size = 5;
  int spline_order = 3;
  double l1_weight = 0.0;
  bool base_blend = true;

  Paradigm paradigm = Paradigm::TeacherForcing;
  std::size_t horizon = 50;
  std::size_t steps = 2000;
  double learning_rate = 0.0;  // 0: 1e-3 for MLP, 3e-3 for KAN
  std::size_t batch = 0;       // 0: 256 transitions (TF), 16 windows (BPTT)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;
  std::size_t checkpoint_every = 100;
  Integrator integrator = Integrator::RK4;

  std::size_t n_seeds = 100;
  std::uint64_t seed_base = 0;

  std::uint64_t data_seed = 0;
  bool per_seed_data = false;
  std::size_t n_train = 20;
  std::size_t n_test = 5;
  double dt = 0.01;
  std::size_t n_steps = 1000;
  double noise_std = 0.0;

  double stlsq_threshold = 0.05;
  std::size_t stlsq_max_iters = 10;
  std::size_t bootstrap_resamples = 10000;

  std::string output_dir;

  /// Replaces the 0 = auto sentinels with concrete values.
  ExperimentConfig resolved() const;
  void validate() const;
};

Arch build_arch(const ExperimentConfig& cfg);
TrainConfig make_train_config(const ExperimentConfig& cfg, std::uint64_t seed);
DataConfig make_data_config(const ExperimentConfig& cfg, std::uint64_t seed);

/// key -> value text of every field of the resolved config.
std::map<std::string, std::string> to_key_values(const ExperimentConfig& cfg);

/// Flat `key = value` text, `#` comments. Unknown keys and malformed values
/// throw std::invalid_argument. Keys absent from the text keep `base`'s value.
ExperimentConfig parse_config_text(std::string_view text, const ExperimentConfig& base = {});
ExperimentConfig load_config_file(const std::filesystem::path& path);

/// FNV-1a 64 over the canonical key/value form, excluding output_dir,
/// n_seeds and seed_base (so partial sweeps can be extended and relocated).
std::string fingerprint(const ExperimentConfig& cfg);

/// Configs A-G (configuration ablation), the eight parameter-scale entries,
/// and an "oracle" smoke entry.
const std::vector<ExperimentConfig>& builtin_configs();

/// Registry name, or a path to a config file.
ExperimentConfig resolve_config(std::string_view name_or_path);

/// Default output root: $RESIDUAL_LAB_OUT, else "runs".
std::filesystem::path default_output_root();

/// Directory name for a sweep: <name>_<system>_<paradigm>.
std::string sweep_dir_name(const ExperimentConfig& cfg);

enum class SeedStatus { Converged, MaxSteps, Unstable, UnstableNoCheckpoint };
std::string_view to_string(SeedStatus status);
SeedStatus parse_seed_status(std::string_view text);

struct MetricRow {
  OscillatorKind system = OscillatorKind::Duffing;
  std::string arch;
  std::string config;
  Paradigm paradigm = Paradigm::TeacherForcing;
  std::uint64_t seed = 0;
  double discovery_r2 = 0.0;
  double test_mse = 0.0;
  double fit_r2 = 0.0;
  std::string fit_terms;
  SeedStatus status = SeedStatus::MaxSteps;
};

inline constexpr std::string_view kMetricsHeader =
    "system,arch,config,paradigm,seed,discovery_r2,test_mse,fit_r2,fit_terms,status";
std::string format_metric_row(const MetricRow& row);
MetricRow parse_metric_row(std::string_view line);

struct MetricSummary {
  ConfidenceInterval ci;
  std::size_t count = 0;  // values that entered the aggregate
};

struct SweepResult {
  ExperimentConfig config;
  std::string fingerprint;
  std::size_t params = 0;
  std::vector<MetricRow> rows;
  MetricSummary discovery_r2;
  MetricSummary test_mse;  // finite values only
  MetricSummary fit_r2;    // finite values only
  double unstable_fraction = 0.0;
  double no_checkpoint_fraction = 0.0;
  /// Fraction of seeds whose largest STLSQ term is x^3.
  double cubic_top_fraction = 0.0;
  /// Seeds trained by this call (0 when every row was resumed from disk).
  std::size_t computed_seeds = 0;
};

/// Trains and evaluates one seed against a prepared dataset.
MetricRow run_seed(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed,
                   ResidualBranch* final_branch = nullptr);

struct SweepOptions {
  std::size_t workers = 1;
};

/// Runs seeds seed_base .. seed_base + n_seeds - 1 into `dir`:
///   metrics.csv          rows in seed order
///   sweep.json           fingerprint, config, aggregates
///   seeds/seed_<n>.csv   committed rows, reused on rerun when fingerprints match
///   seeds/seed_<n>.ckpt  evaluated parameters
SweepResult run_sweep(const ExperimentConfig& cfg, const std::filesystem::path& dir, const SweepOptions& opts = {});

SweepResult load_sweep(const std::filesystem::path& dir);

/// "0.500 ± 0.100"
std::string format_cell(const ConfidenceInterval& ci);

struct AggregateOutput {
  std::string csv;
  std::string text;
};

/// Table-shaped report: rows (family, config, params) by columns
/// (Duffing, VdP) x (TF, BPTT). Throws on empty input or on two results for
/// the same cell with different fingerprints.
AggregateOutput aggregate_tables(const std::vector<SweepResult>& results);
void write_aggregate(const AggregateOutput& out, const std::filesystem::path& dir);

}  // namespace rlab
