#include "octgrade/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "octgrade/error.hpp"

namespace octgrade {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::int64_t{0});
  return t;
}

std::int64_t ConfusionMatrix::correct() const {
  std::int64_t t = 0;
  for (int c = 0; c < kNumClasses; ++c) t += counts[c][c];
  return t;
}

void to_json(nlohmann::json& j, const MetricReport& r) {
  j = nlohmann::json{{"SN", r.sn},   {"SP", r.sp},   {"FS", r.fs},          {"ACC", r.acc},
                     {"AUC", r.auc}, {"top1", r.top1}, {"n_samples", r.n_samples}};
}

void from_json(const nlohmann::json& j, MetricReport& r) {
  r.sn = j.at("SN").get<double>();
  r.sp = j.at("SP").get<double>();
  r.fs = j.at("FS").get<double>();
  r.acc = j.at("ACC").get<double>();
  r.auc = j.at("AUC").get<double>();
  r.top1 = j.value("top1", 0.0);
  r.n_samples = j.at("n_samples").get<std::int64_t>();
}

ConfusionMatrix confusion(std::span<const GradeLabel> predictions, std::span<const GradeLabel> truths) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                               std::to_string(truths.size()) + " truths");
  }
  if (predictions.empty()) throw Error(ErrorCode::Empty, "no samples to score");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    ++cm.counts[index_of(truths[i])][index_of(predictions[i])];
  }
  return cm;
}

MicroMetrics micro_metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total <= 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix has no counts");
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::int64_t row = 0, col = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      row += cm.counts[c][k];
      col += cm.counts[k][c];
    }
    const std::int64_t hit = cm.counts[c][c];
    tp += hit;
    fn += row - hit;
    fp += col - hit;
    tn += total - row - col + hit;
  }
  MicroMetrics m;
  m.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  m.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.f_score = precision + m.sensitivity > 0.0
                  ? 2.0 * precision * m.sensitivity / (precision + m.sensitivity)
                  : 0.0;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(tp + tn + fp + fn);
  return m;
}

double roc_auc_micro(std::span<const ScoreVector> scores, std::span<const GradeLabel> truths) {
  if (scores.size() != truths.size()) throw Error(ErrorCode::LengthMismatch, "scores vs truths");
  if (scores.empty()) throw Error(ErrorCode::Empty, "no samples to score");
  struct Pair {
    double score;
    bool positive;
  };
  std::vector<Pair> pairs;
  pairs.reserve(scores.size() * kNumClasses);
  std::int64_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (int c = 0; c < kNumClasses; ++c) {
      const bool p = index_of(truths[i]) == c;
      pairs.push_back({scores[i][c], p});
      pos += p;
    }
  }
  const std::int64_t neg = static_cast<std::int64_t>(pairs.size()) - pos;
  if (pos == 0 || neg == 0) {
    throw Error(ErrorCode::SingleClassDegenerate, "all pooled binary labels are identical");
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const Pair& a, const Pair& b) { return a.score > b.score; });
  double area = 0.0;
  std::int64_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    const std::int64_t tp0 = tp, fp0 = fp;
    const double s = pairs[i].score;
    for (; i < pairs.size() && pairs[i].score == s; ++i) {
      if (pairs[i].positive) ++tp; else ++fp;
    }
    area += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0) * 0.5;
  }
  return area / (static_cast<double>(pos) * static_cast<double>(neg));
}

GradeLabel argmax_grade(const ScoreVector& p) {
  int best = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    if (p[c] > p[best]) best = c;
  }
  return grade_from_index(best);
}

namespace {

MetricReport finish_report(const std::vector<GradeLabel>& predictions,
                           std::span<const GradeLabel> truths, double auc) {
  const auto cm = confusion(predictions, truths);
  const auto m = micro_metrics(cm);
  MetricReport r;
  r.sn = m.sensitivity;
  r.sp = m.specificity;
  r.fs = m.f_score;
  r.acc = m.accuracy;
  r.auc = auc;
  r.n_samples = cm.total();
  r.top1 = static_cast<double>(cm.correct()) / static_cast<double>(cm.total());
  return r;
}

}  // namespace

MetricReport make_report(std::span<const ScoreVector> scores, std::span<const GradeLabel> truths) {
  std::vector<GradeLabel> predictions;
  predictions.reserve(scores.size());
  for (const auto& s : scores) predictions.push_back(argmax_grade(s));
  return finish_report(predictions, truths, roc_auc_micro(scores, truths));
}

MetricReport make_report(std::span<const GradeLabel> predictions, std::span<const GradeLabel> truths) {
  std::vector<ScoreVector> onehot(predictions.size(), ScoreVector{});
  for (std::size_t i = 0; i < predictions.size(); ++i) onehot[i][index_of(predictions[i])] = 1.0;
  return finish_report({predictions.begin(), predictions.end()}, truths, roc_auc_micro(onehot, truths));
}

namespace {

MetricStat stat_of(std::span<const MetricReport> reports, double MetricReport::*field) {
  MetricStat s;
  for (const auto& r : reports) s.mean += r.*field;
  s.mean /= static_cast<double>(reports.size());
  double var = 0.0;
  for (const auto& r : reports) var += (r.*field - s.mean) * (r.*field - s.mean);
  s.std = std::sqrt(var / static_cast<double>(reports.size()));
  return s;
}

nlohmann::json stat_json(const MetricStat& s) { return {{"mean", s.mean}, {"std", s.std}}; }

MetricStat stat_from(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>()};
}

}  // namespace

CrossValSummary cross_val_aggregate(std::span<const MetricReport> reports) {
  if (reports.empty()) throw Error(ErrorCode::Empty, "no fold reports");
  CrossValSummary s;
  s.sn = stat_of(reports, &MetricReport::sn);
  s.sp = stat_of(reports, &MetricReport::sp);
  s.fs = stat_of(reports, &MetricReport::fs);
  s.acc = stat_of(reports, &MetricReport::acc);
  s.auc = stat_of(reports, &MetricReport::auc);
  s.folds.assign(reports.begin(), reports.end());
  return s;
}

void to_json(nlohmann::json& j, const CrossValSummary& s) {
  j = nlohmann::json{{"SN", stat_json(s.sn)},   {"SP", stat_json(s.sp)},   {"FS", stat_json(s.fs)},
                     {"ACC", stat_json(s.acc)}, {"AUC", stat_json(s.auc)}, {"folds", s.folds}};
}

void from_json(const nlohmann::json& j, CrossValSummary& s) {
  s.sn = stat_from(j.at("SN"));
  s.sp = stat_from(j.at("SP"));
  s.fs = stat_from(j.at("FS"));
  s.acc = stat_from(j.at("ACC"));
  s.auc = stat_from(j.at("AUC"));
  s.folds = j.at("folds").get<std::vector<MetricReport>>();
}

}  // namespace octgrade
