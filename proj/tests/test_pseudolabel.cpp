#include <cmath>

#include "helpers.hpp"
#include "octgrade/pseudolabel.hpp"
#include "octgrade/train.hpp"

using namespace octgrade;

namespace {

Dataset constant_set(Domain domain, int n, const std::string& prefix, bool labelled, bool eval_only) {
  std::vector<Sample> samples;
  for (int i = 0; i < n; ++i) {
    Sample s;
    s.scan = testutil::constant_scan(prefix + std::to_string(i), 0.1 + 0.8 * (i % 7) / 7.0);
    s.scan.domain = domain;
    if (labelled) s.label = grade_from_index(i % 3);
    s.eval_only = eval_only;
    samples.push_back(std::move(s));
  }
  return Dataset(domain, std::move(samples));
}

PseudoLabelSet labels_for(const Dataset& pool, const std::vector<int>& hard, const std::vector<double>& conf) {
  PseudoLabelSet set;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    PseudoLabel p;
    p.image_id = pool.scan(i).image_id;
    p.hard = grade_from_index(hard[i]);
    p.confidence = conf[i];
    const double rest = (1.0 - conf[i]) / 2.0;
    p.probabilities = {rest, rest, rest};
    p.probabilities[hard[i]] = conf[i];
    set.entries.push_back(p);
  }
  return set;
}

}  // namespace

TEST_CASE("pseudo-label inference leaves parameters untouched") {
  const auto synth = generate_synthetic(testutil::small_synth(11, 3, 4));
  const Network net = build_network(testutil::tiny_model(), nullptr, 3);
  const ModelParameters before = net.params;
  const auto labels = predict_pseudo_labels(net, synth.target);
  CHECK(net.params == before);
  REQUIRE(labels.entries.size() == synth.target.size());
  for (std::size_t i = 0; i < labels.entries.size(); ++i) {
    const auto& e = labels.entries[i];
    CHECK(e.image_id == synth.target.scan(i).image_id);
    CHECK(std::abs(e.probabilities[0] + e.probabilities[1] + e.probabilities[2] - 1.0) <= 1e-6);
    CHECK(e.hard == argmax_grade(e.probabilities));
    CHECK(e.confidence == std::max({e.probabilities[0], e.probabilities[1], e.probabilities[2]}));
  }
  const auto again = predict_pseudo_labels(net, synth.target);
  for (std::size_t i = 0; i < labels.entries.size(); ++i) {
    CHECK(again.entries[i].probabilities == labels.entries[i].probabilities);
  }
  CHECK_ERROR_CODE(predict_pseudo_labels(net, Dataset(Domain::target, std::vector<Sample>{})), ErrorCode::EmptyPool);
}

TEST_CASE("augmentation is the union of source and pool") {
  const Dataset source = constant_set(Domain::source, 107, "s", true, false);
  const Dataset pool = constant_set(Domain::target, 75, "t", false, false);
  std::vector<int> hard(75);
  std::vector<double> conf(75);
  for (int i = 0; i < 75; ++i) {
    hard[i] = (i * 2) % 3;
    conf[i] = 0.34 + 0.6 * i / 75.0;
  }
  const auto labels = labels_for(pool, hard, conf);
  const auto aug = augment_dataset(source, pool, labels);
  REQUIRE(aug.data.size() == 182);
  REQUIRE(aug.provenance.size() == 182);
  for (std::size_t i = 0; i < 107; ++i) {
    CHECK(aug.provenance[i] == Provenance::source_gt);
    CHECK(aug.data.label(i) == source.label(i));
    CHECK(aug.data.scan(i).image_id == source.scan(i).image_id);
  }
  for (std::size_t i = 0; i < 75; ++i) {
    CHECK(aug.provenance[107 + i] == Provenance::target_pseudo);
    CHECK(aug.data.label(107 + i) == grade_from_index(hard[i]));
  }

  const auto none = augment_dataset(source, pool, labels, 0.99);
  REQUIRE(none.data.size() == source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    CHECK(none.data.scan(i).pixels == source.scan(i).pixels);
    CHECK(none.data.label(i) == source.label(i));
  }

  std::size_t previous = aug.data.size();
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    const std::size_t n = augment_dataset(source, pool, labels, t).data.size();
    CHECK(n <= previous);
    previous = n;
  }

  auto missing = labels;
  missing.entries.pop_back();
  CHECK_ERROR_CODE(augment_dataset(source, pool, missing), ErrorCode::CoverageMismatch);
  auto renamed = labels;
  renamed.entries[3].image_id = "other";
  CHECK_ERROR_CODE(augment_dataset(source, pool, renamed), ErrorCode::CoverageMismatch);
}

TEST_CASE("pseudo-labelled pool carries the hard labels") {
  const Dataset pool = constant_set(Domain::target, 6, "t", false, false);
  const auto labels = labels_for(pool, {2, 1, 0, 0, 1, 2}, std::vector<double>(6, 0.5));
  const Dataset relabelled = pseudo_labeled_pool(pool, labels);
  REQUIRE(relabelled.size() == 6);
  CHECK(relabelled.label(0) == GradeLabel::advanced);
  CHECK(relabelled.label(2) == GradeLabel::healthy);
  CHECK_FALSE(relabelled.is_eval_only(0));
}

TEST_CASE("pseudo-label quality against held truth") {
  const Dataset truth = constant_set(Domain::target, 4, "t", true, true);
  std::vector<int> same, shifted, three;
  for (int i = 0; i < 4; ++i) {
    same.push_back(i % 3);
    shifted.push_back((i + 1) % 3);
    three.push_back(i == 2 ? 0 : i % 3);
  }
  const std::vector<double> conf(4, 0.6);
  label_guard::EvaluationScope scope;
  CHECK(pseudo_label_quality(labels_for(truth, same, conf), truth).top1 == 1.0);
  CHECK(pseudo_label_quality(labels_for(truth, shifted, conf), truth).top1 == 0.0);
  CHECK(pseudo_label_quality(labels_for(truth, three, conf), truth).top1 == doctest::Approx(0.75));
  const Dataset unlabelled = constant_set(Domain::target, 4, "t", false, false);
  CHECK_ERROR_CODE(pseudo_label_quality(labels_for(unlabelled, same, conf), unlabelled), ErrorCode::MissingTruth);
}

TEST_CASE("pseudo-label quality outside evaluation is a leak") {
  const Dataset truth = constant_set(Domain::target, 3, "t", true, true);
  CHECK_ERROR_CODE(pseudo_label_quality(labels_for(truth, {0, 1, 2}, {0.5, 0.5, 0.5}), truth),
                   ErrorCode::LabelLeakage);
}

TEST_CASE("pseudo-label csv round trip") {
  const auto dir = testutil::temp_dir("pseudo");
  const Dataset pool = constant_set(Domain::target, 5, "t", false, false);
  auto labels = labels_for(pool, {0, 1, 2, 1, 0}, {0.4, 0.5, 0.6, 0.7, 0.8});
  labels.entries[1].probabilities = {0.123456789012345, 0.5, 0.376543210987655};
  write_pseudo_labels_csv(labels, dir / "p.csv");
  const auto back = read_pseudo_labels_csv(dir / "p.csv");
  REQUIRE(back.entries.size() == labels.entries.size());
  for (std::size_t i = 0; i < back.entries.size(); ++i) {
    CHECK(back.entries[i].image_id == labels.entries[i].image_id);
    CHECK(back.entries[i].hard == labels.entries[i].hard);
    CHECK(back.entries[i].confidence == labels.entries[i].confidence);
    CHECK(back.entries[i].probabilities == labels.entries[i].probabilities);
  }
}
