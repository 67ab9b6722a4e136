#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgrade/dataset.hpp"
#include "octgrade/metrics.hpp"
#include "octgrade/model.hpp"
#include "octgrade/splits.hpp"
#include "octgrade/train.hpp"

namespace octgrade {

enum class Mode { baseline, proposed, lower_bound, upper_bound, backbone_compare };
enum class CheckpointRule { best_validation, final_epoch };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view text);  // throws UnknownMode

struct ExperimentSeeds {
  std::uint64_t split = 0;
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
};

struct ExperimentConfig {
  Mode mode = Mode::proposed;
  ModelConfig model;
  ExperimentSeeds seeds;
  // Either both manifests or a synthetic configuration.
  std::optional<std::string> source_manifest;
  std::optional<std::string> target_manifest;
  std::optional<SynthConfig> synthetic;
  TrainingConfig training;
  int cv_folds = 5;
  double target_fraction = 2.0 / 3.0;
  double pseudo_threshold = 0.0;
  CheckpointRule checkpoint = CheckpointRule::best_validation;
  std::optional<std::string> pretrained_weights;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON of the config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

struct ArchitectureCv {
  std::string name;
  CrossValSummary cv;
};

struct ExperimentResult {
  Mode mode = Mode::baseline;
  std::string architecture;
  std::string backbone;
  std::string checkpoint;
  std::optional<MetricReport> test;
  std::optional<CrossValSummary> cv;
  std::optional<MetricReport> pseudo_label_quality;  // diagnostic, reads target truth
  std::vector<ArchitectureCv> comparison;            // backbone_compare only
  int best_fold = -1;
  std::int64_t stage1_train_size = 0;
  std::int64_t final_train_size = 0;
  std::int64_t pool_size = 0;
  std::int64_t test_size = 0;
  std::vector<std::string> test_patients;
  std::string test_split_id;
  // Eval-only target labels read before the test evaluation started.
  std::uint64_t target_label_reads_before_test = 0;
  std::string config_hash;
  ExperimentSeeds seeds;
};

void to_json(nlohmann::json& j, const ExperimentResult& r);
void from_json(const nlohmann::json& j, ExperimentResult& r);

struct ExperimentData {
  Dataset source;
  Dataset target;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

using ProgressFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress = {});

/// Runs several modes over one dataset pair, training the shared stage-1
/// cross-validation models once. Each result equals run_experiment with
/// config.mode set to that mode.
std::vector<ExperimentResult> run_experiments(const ExperimentConfig& config, std::span<const Mode> modes,
                                              const ProgressFn& progress = {});

struct ComparisonRow {
  Mode mode = Mode::baseline;
  MetricReport metrics;
  MetricReport delta;  // metrics minus the baseline (or first) row
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // baseline, proposed, lower_bound, upper_bound order
};

ComparisonTable compare_report(std::span<const ExperimentResult> results);

void to_json(nlohmann::json& j, const ComparisonTable& t);

/// Text table with the data-usage check marks and SN/SP/FS/ACC/AUC columns.
std::string render_table(const ComparisonTable& table);
/// Single result: test row or, for backbone_compare, the mean +- std table.
std::string render_result(const ExperimentResult& result);

}  // namespace octgrade
