#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfmrg/data_io.hpp"
#include "hfmrg/dbn.hpp"
#include "hfmrg/rg_transform.hpp"

namespace hfmrg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string digits_images;
  std::string digits_labels;
  std::optional<std::string> letters_images;
  std::optional<std::string> letters_labels;
};

struct AnalysisConfig {
  /// Peak threshold; floor(n/3) per layer when absent.
  std::optional<std::size_t> peak_threshold;
  std::string g_strategy = "ml_mean_level";
  /// Which samples to analyze: "clamped", "equilibrium".
  std::vector<std::string> kinds = {"clamped", "equilibrium"};
};

struct TapConfig {
  std::size_t inits = 200;
  TapOptions options;
  double dedup_tol = 0.01;
};

struct ObservableConfig {
  std::size_t states = 300;
  std::size_t rollouts = 200;
  std::size_t hist_bins = 20;
};

struct EnumerationConfig {
  bool enabled = false;
  std::size_t samples = 1000000;
  double tv_tolerance = 0.02;
};

struct RgSweepConfig {
  std::vector<std::size_t> n;
  std::vector<double> g;
  std::size_t starts = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  DataConfig data;
  LadderConfig ladder;
  std::vector<std::string> datasets = {"narrow", "medium", "broad"};
  std::vector<std::size_t> hidden_sizes;
  TrainConfig train;
  std::size_t clamped_passes = 1;
  EquilibriumConfig equilibrium;
  AnalysisConfig analysis;
  TapConfig tap;
  ObservableConfig observables;
  EnumerationConfig enumeration;
  RgSweepConfig rg_sweep;
  /// Directory the config was read from; relative data paths resolve against it.
  std::string base_dir = ".";

  /// Throws ConfigError on invalid values or missing input files.
  void validate() const;
};

/// Parses and validates; unknown keys at any level are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

enum class StageStatus { ok, failed, skipped };

struct StageRecord {
  std::string name;
  StageStatus status = StageStatus::ok;
  std::string message;
};

struct PipelineResult {
  std::vector<StageRecord> stages;
  nlohmann::json summary;
  std::string manifest_path;

  bool all_ok() const;
};

/// Runs ladder, training, sampling, analysis and checks, writing everything
/// under config.output_dir. Failed stages mark their dependents skipped.
PipelineResult run_pipeline(const ExperimentConfig& config, int jobs = 0);

/// Rows "n,g,start,iterations,final_distance,tv_to_fixed_point,converged" without header.
std::vector<std::string> rg_sweep_rows(const RgSweepConfig& sweep, std::uint64_t seed);

}  // namespace hfmrg
