#include "helpers.hpp"
#include "octgrade/metrics.hpp"
#include "octgrade/rng.hpp"
#include "oracles.hpp"

using namespace octgrade;

namespace {

std::vector<GradeLabel> grades(std::initializer_list<int> v) {
  std::vector<GradeLabel> out;
  for (int x : v) out.push_back(grade_from_index(x));
  return out;
}

std::vector<int> ints(const std::vector<GradeLabel>& g) {
  std::vector<int> out;
  for (auto x : g) out.push_back(index_of(x));
  return out;
}

}  // namespace

TEST_CASE("confusion counts by truth and prediction") {
  const auto cm = confusion(grades({0, 1, 2, 0}), grades({0, 1, 1, 2}));
  using Row = std::array<std::int64_t, 3>;
  CHECK(cm.counts[0] == Row{1, 0, 0});
  CHECK(cm.counts[1] == Row{0, 1, 1});
  CHECK(cm.counts[2] == Row{1, 0, 0});
  CHECK(cm.total() == 4);
  const auto perfect = confusion(grades({0, 1, 2}), grades({0, 1, 2}));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(perfect.counts[r][c] == (r == c ? 1 : 0));
  CHECK_ERROR_CODE(confusion(grades({0, 1, 2}), grades({0, 1, 2, 0})), ErrorCode::LengthMismatch);
  CHECK_ERROR_CODE(confusion(grades({}), grades({})), ErrorCode::Empty);
  CHECK_ERROR_CODE(micro_metrics(ConfusionMatrix{}), ErrorCode::EmptyMatrix);
}

TEST_CASE("diagonal confusion gives perfect micro metrics") {
  ConfusionMatrix cm;
  cm.counts[0][0] = 4;
  cm.counts[1][1] = 2;
  cm.counts[2][2] = 7;
  const auto m = micro_metrics(cm);
  CHECK(m.sensitivity == 1.0);
  CHECK(m.specificity == 1.0);
  CHECK(m.f_score == 1.0);
  CHECK(m.accuracy == 1.0);
}

TEST_CASE("micro metrics match the binarization oracle and the identities") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.index(trial < 500 ? 10 : 200));
    std::vector<GradeLabel> p, t;
    for (int i = 0; i < n; ++i) {
      p.push_back(grade_from_index(static_cast<int>(rng.index(3))));
      t.push_back(grade_from_index(static_cast<int>(rng.index(3))));
    }
    const auto cm = confusion(p, t);
    const auto m = micro_metrics(cm);
    const double top1 = static_cast<double>(cm.correct()) / n;
    CHECK(m.sensitivity == doctest::Approx(top1).epsilon(1e-12));
    CHECK(std::abs(m.f_score - top1) <= 1e-9);
    CHECK(std::abs(m.specificity - (1 + top1) / 2) <= 1e-9);
    CHECK(std::abs(m.accuracy - (1 + 2 * top1) / 3) <= 1e-9);
    if (top1 > 0) {
      const auto o = oracle::binarized_micro(ints(p), ints(t));
      CHECK(std::abs(m.sensitivity - o.sn) <= 1e-12);
      CHECK(std::abs(m.specificity - o.sp) <= 1e-12);
      CHECK(std::abs(m.f_score - o.fs) <= 1e-12);
      CHECK(std::abs(m.accuracy - o.acc) <= 1e-12);
    }
  }
}

TEST_CASE("sensitivity 0.7353 gives SP 0.8676 and ACC 0.8235") {
  const double sn = 0.7353;
  CHECK(std::abs((1 + sn) / 2 - 0.8676) <= 5e-5);
  CHECK(std::abs((1 + 2 * sn) / 3 - 0.8235) <= 5e-5);
  // A confusion matrix realizing top-1 = 25/34 = 0.73529 gives the same row.
  ConfusionMatrix cm;
  cm.counts[0][0] = 10;
  cm.counts[1][1] = 8;
  cm.counts[2][2] = 7;
  cm.counts[0][1] = 3;
  cm.counts[1][2] = 4;
  cm.counts[2][0] = 2;
  const auto m = micro_metrics(cm);
  CHECK(std::abs(m.sensitivity - 0.7353) <= 5e-5);
  CHECK(std::abs(m.specificity - 0.8676) <= 5e-5);
  CHECK(std::abs(m.accuracy - 0.8235) <= 5e-5);
  CHECK(std::abs(m.f_score - 0.7353) <= 5e-5);
}

TEST_CASE("micro AUC edge cases") {
  const std::vector<ScoreVector> sep = {{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}, {0.2, 0.1, 0.7}};
  CHECK(roc_auc_micro(sep, grades({0, 1, 2})) == doctest::Approx(1.0));
  const std::vector<ScoreVector> flat(4, ScoreVector{1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(roc_auc_micro(flat, grades({0, 1, 2, 0})) == doctest::Approx(0.5));
  CHECK_ERROR_CODE(roc_auc_micro(flat, grades({0, 1})), ErrorCode::LengthMismatch);
}

TEST_CASE("micro AUC matches exhaustive oracles on a hand-chosen case") {
  const std::vector<ScoreVector> s = {{0.5, 0.3, 0.2}, {0.2, 0.2, 0.6}, {0.1, 0.7, 0.2}, {0.4, 0.4, 0.2}};
  const auto t = grades({0, 2, 0, 1});
  std::vector<std::array<double, 3>> raw(s.begin(), s.end());
  std::vector<double> flat;
  std::vector<bool> pos;
  oracle::pool_pairs(raw, ints(t), flat, pos);
  const double got = roc_auc_micro(s, t);
  CHECK(std::abs(got - oracle::threshold_sweep_auc(flat, pos)) <= 1e-9);
  CHECK(std::abs(got - oracle::mann_whitney(flat, pos)) <= 1e-9);
}

TEST_CASE("micro AUC equals both oracles on random tied scores") {
  Rng rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(30));
    std::vector<ScoreVector> s(n);
    std::vector<GradeLabel> t;
    for (int i = 0; i < n; ++i) {
      // Quantized scores force many ties.
      double a = std::round(rng.uniform() * 5), b = std::round(rng.uniform() * 5), c = std::round(rng.uniform() * 5);
      const double z = a + b + c + 1e-300;
      s[i] = a + b + c > 0 ? ScoreVector{a / z, b / z, c / z} : ScoreVector{1.0 / 3, 1.0 / 3, 1.0 / 3};
      t.push_back(grade_from_index(static_cast<int>(rng.index(3))));
    }
    std::vector<std::array<double, 3>> raw(s.begin(), s.end());
    std::vector<double> flat;
    std::vector<bool> pos;
    oracle::pool_pairs(raw, ints(t), flat, pos);
    const double got = roc_auc_micro(s, t);
    CHECK(std::abs(got - oracle::mann_whitney(flat, pos)) <= 1e-9);
    CHECK(std::abs(got - oracle::threshold_sweep_auc(flat, pos)) <= 1e-9);
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("micro AUC is invariant under strictly monotone score maps") {
  Rng rng(5);
  std::vector<ScoreVector> s(40), mapped(40);
  std::vector<GradeLabel> t;
  for (int i = 0; i < 40; ++i) {
    for (int c = 0; c < 3; ++c) {
      s[i][c] = rng.uniform();
      mapped[i][c] = std::exp(3.0 * s[i][c]) - 7.0;
    }
    t.push_back(grade_from_index(i % 3));
  }
  CHECK(std::abs(roc_auc_micro(s, t) - roc_auc_micro(mapped, t)) <= 1e-12);
}

TEST_CASE("argmax breaks ties toward the lower class") {
  CHECK(argmax_grade({0.4, 0.4, 0.2}) == GradeLabel::healthy);
  CHECK(argmax_grade({0.2, 0.4, 0.4}) == GradeLabel::early);
  CHECK(argmax_grade({1.0 / 3, 1.0 / 3, 1.0 / 3}) == GradeLabel::healthy);
  CHECK(argmax_grade({0.1, 0.2, 0.7}) == GradeLabel::advanced);
}

TEST_CASE("reports carry micro figures and sample counts") {
  const std::vector<ScoreVector> s = {{0.7, 0.2, 0.1}, {0.3, 0.6, 0.1}, {0.5, 0.1, 0.4}};
  const auto r = make_report(s, grades({0, 1, 2}));
  CHECK(r.n_samples == 3);
  CHECK(r.top1 == doctest::Approx(2.0 / 3));
  CHECK(r.sn == doctest::Approx(2.0 / 3));
  CHECK(r.sp == doctest::Approx(5.0 / 6));
  const auto j = nlohmann::json(r);
  for (const char* k : {"SN", "SP", "FS", "ACC", "AUC", "n_samples"}) CHECK(j.contains(k));
  const MetricReport back = j.get<MetricReport>();
  CHECK(back.acc == r.acc);
  CHECK(back.n_samples == 3);
}

TEST_CASE("cross validation aggregates with population std") {
  MetricReport a, b;
  a.acc = 0.8;
  b.acc = 0.9;
  const std::vector<MetricReport> two = {a, b};
  const auto s = cross_val_aggregate(two);
  CHECK(s.acc.mean == doctest::Approx(0.85));
  CHECK(s.acc.std == doctest::Approx(0.05));
  CHECK(s.folds.size() == 2);
  const std::vector<MetricReport> same(5, a);
  const auto z = cross_val_aggregate(same);
  CHECK(z.acc.std == 0.0);
  CHECK(z.sn.std == 0.0);
  CHECK_ERROR_CODE(cross_val_aggregate(std::vector<MetricReport>{}), ErrorCode::Empty);
  const auto back = nlohmann::json(s).get<CrossValSummary>();
  CHECK(back.acc.mean == s.acc.mean);
  CHECK(back.folds.size() == 2);
}
