#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "expose/bench.hpp"
#include "expose/model_config.hpp"
#include "expose/schedule.hpp"
#include "expose/scorer.hpp"
#include "expose/synthdata.hpp"
#include "expose/trainer.hpp"

namespace expose {

struct ScheduleConfig {
  int steps = kDefaultDiffusionSteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  NoiseSchedule build() const { return make_linear_schedule(steps, beta_start, beta_end); }
  bool operator==(const ScheduleConfig&) const = default;
};

struct BenchmarkSection {
  std::vector<double> threshold_ks{1.0, 2.0, 3.0};
  std::vector<std::string> perturbations;  // kind names; empty = no sweep
  std::vector<int> severities{1, 2, 3, 4, 5};
  int temporal_window = kTemporalWindow;
  bool operator==(const BenchmarkSection&) const = default;
};

/// Everything a command needs. Section seeds are derived from `seed` by resolve().
struct ExperimentConfig {
  std::string preset = "full";
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig pretrain;
  TrainConfig personalize;
  ScoringConfig scoring;
  GuidanceConfig guidance;
  BenchmarkSection benchmark;
  CorpusConfig data;

  /// Propagates the global seed into every section and checks cross-section consistency.
  void resolve();
  void validate() const;
  BenchConfig bench_config() const;
  bool operator==(const ExperimentConfig&) const = default;
};

/// Full-size model hyperparameters, learning rate 1e-4.
ExperimentConfig full_preset();
/// Same with learning rate 4e-4.
ExperimentConfig full_alt_preset();
/// Desk-scale model and corpus used by the acceptance suite.
ExperimentConfig desk_preset();
ExperimentConfig preset_by_name(const std::string& name);

/// Canonical JSON text; parse rejects unknown keys and missing sections default to the preset.
std::string to_json_string(const ExperimentConfig& config, int indent = 2);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void save_config(const ExperimentConfig& config, const std::string& path);

std::string model_config_json(const ModelConfig& model);
ModelConfig parse_model_config(const std::string& text);

/// Hex SHA-256 of the canonical model section.
std::string model_config_digest(const ModelConfig& model);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::string& path);

}  // namespace expose
