#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgrade/dataset.hpp"

namespace octgrade {

/// Rows are true classes, columns predicted classes.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};

  std::int64_t total() const;
  std::int64_t correct() const;
  bool operator==(const ConfusionMatrix&) const = default;
};

struct MicroMetrics {
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f_score = 0.0;
  double accuracy = 0.0;
};

struct MetricReport {
  double sn = 0.0;
  double sp = 0.0;
  double fs = 0.0;
  double acc = 0.0;
  double auc = 0.0;
  std::int64_t n_samples = 0;
  // Plain top-1 agreement, kept alongside the micro figures.
  double top1 = 0.0;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

ConfusionMatrix confusion(std::span<const GradeLabel> predictions, std::span<const GradeLabel> truths);

/// One-vs-rest binarisation of every class with the counts pooled.
MicroMetrics micro_metrics(const ConfusionMatrix& cm);

using ScoreVector = std::array<double, kNumClasses>;

/// Pooled one-vs-rest ROC over all (sample, class) pairs; thresholds at the
/// distinct scores, area by trapezoids.
double roc_auc_micro(std::span<const ScoreVector> scores, std::span<const GradeLabel> truths);

/// Argmax with ties broken toward the lower class index.
GradeLabel argmax_grade(const ScoreVector& p);

/// SN/SP/FS/ACC from argmax predictions plus micro AUC from the scores.
MetricReport make_report(std::span<const ScoreVector> scores, std::span<const GradeLabel> truths);

/// Report from hard labels only; AUC computed from one-hot scores.
MetricReport make_report(std::span<const GradeLabel> predictions, std::span<const GradeLabel> truths);

struct MetricStat {
  double mean = 0.0;
  double std = 0.0;
};

struct CrossValSummary {
  MetricStat sn, sp, fs, acc, auc;
  std::vector<MetricReport> folds;
};

void to_json(nlohmann::json& j, const CrossValSummary& s);
void from_json(const nlohmann::json& j, CrossValSummary& s);

/// Mean and population standard deviation across folds.
CrossValSummary cross_val_aggregate(std::span<const MetricReport> reports);

}  // namespace octgrade
