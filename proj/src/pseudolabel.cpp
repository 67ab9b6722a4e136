#include "octgrade/pseudolabel.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "octgrade/error.hpp"
#include "octgrade/train.hpp"

namespace octgrade {

PseudoLabelSet predict_pseudo_labels(const Network& net, const Dataset& pool) {
  if (pool.empty()) throw Error(ErrorCode::EmptyPool, "no images to pseudo-label");
  const auto scores = predict(net, pool);
  PseudoLabelSet out;
  out.entries.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    PseudoLabel e;
    e.image_id = pool.scan(i).image_id;
    e.probabilities = scores[i];
    e.hard = argmax_grade(scores[i]);
    e.confidence = scores[i][index_of(e.hard)];
    out.entries.push_back(std::move(e));
  }
  return out;
}

namespace {

std::unordered_map<std::string, const PseudoLabel*> index_by_id(const Dataset& pool,
                                                                const PseudoLabelSet& labels) {
  std::unordered_map<std::string, const PseudoLabel*> by_id;
  for (const auto& e : labels.entries) by_id.emplace(e.image_id, &e);
  bool covered = by_id.size() == labels.entries.size() && by_id.size() == pool.size();
  for (std::size_t i = 0; covered && i < pool.size(); ++i) covered = by_id.count(pool.scan(i).image_id) > 0;
  if (!covered) throw Error(ErrorCode::CoverageMismatch, "pseudo-labels do not match the pool ids");
  return by_id;
}

}  // namespace

AugmentedDataset augment_dataset(const Dataset& source, const Dataset& pool, const PseudoLabelSet& labels,
                                 double threshold) {
  const auto by_id = index_by_id(pool, labels);
  std::vector<Sample> samples = source.copy_samples();
  std::vector<Provenance> provenance(samples.size(), Provenance::source_gt);
  for (const auto& s : pool.samples()) {
    const PseudoLabel* e = by_id.at(s.scan.image_id);
    if (e->confidence < threshold) continue;
    Sample copy;
    copy.scan = s.scan;
    copy.label = e->hard;
    copy.eval_only = false;
    samples.push_back(std::move(copy));
    provenance.push_back(Provenance::target_pseudo);
  }
  const bool mixed = provenance.size() > source.size();
  return {Dataset(mixed ? Domain::mixed : source.domain(), std::move(samples)), std::move(provenance)};
}

Dataset pseudo_labeled_pool(const Dataset& pool, const PseudoLabelSet& labels) {
  const auto by_id = index_by_id(pool, labels);
  std::vector<Sample> samples;
  for (const auto& s : pool.samples()) {
    Sample copy;
    copy.scan = s.scan;
    copy.label = by_id.at(s.scan.image_id)->hard;
    samples.push_back(std::move(copy));
  }
  return Dataset(pool.domain(), std::move(samples));
}

MetricReport pseudo_label_quality(const PseudoLabelSet& labels, const Dataset& truth) {
  const auto by_id = index_by_id(truth, labels);
  std::vector<ScoreVector> scores;
  std::vector<GradeLabel> truths;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth.has_label(i)) throw Error(ErrorCode::MissingTruth, truth.scan(i).image_id);
    truths.push_back(truth.label(i));
    scores.push_back(by_id.at(truth.scan(i).image_id)->probabilities);
  }
  std::vector<GradeLabel> hard;
  for (std::size_t i = 0; i < truth.size(); ++i) hard.push_back(by_id.at(truth.scan(i).image_id)->hard);
  MetricReport r = make_report(hard, truths);
  r.auc = roc_auc_micro(scores, truths);
  return r;
}

void write_pseudo_labels_csv(const PseudoLabelSet& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out << "image_id,pseudo_grade,confidence,p_healthy,p_early,p_advanced\n";
  out << std::setprecision(17);
  for (const auto& e : labels.entries) {
    out << e.image_id << ',' << index_of(e.hard) << ',' << e.confidence;
    for (double p : e.probabilities) out << ',' << p;
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

PseudoLabelSet read_pseudo_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  PseudoLabelSet out;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 6) throw Error(ErrorCode::BadManifest, "pseudo-label row needs 6 fields");
    PseudoLabel e;
    e.image_id = f[0];
    e.hard = parse_grade(f[1]);
    e.confidence = std::stod(f[2]);
    for (int c = 0; c < kNumClasses; ++c) e.probabilities[c] = std::stod(f[3 + c]);
    out.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace octgrade
