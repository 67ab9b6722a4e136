#include <fstream>

#include "helpers.hpp"
#include "octgrade/orchestrate.hpp"

using namespace octgrade;

namespace {

ExperimentConfig tiny_experiment(Mode mode) {
  ExperimentConfig c;
  c.mode = mode;
  c.model = testutil::tiny_model();
  c.synthetic = testutil::small_synth(8, 6, 6);
  c.training.epochs = 2;
  c.training.batch_size = 8;
  c.cv_folds = 3;
  c.seeds = {1, 2, 3};
  return c;
}

MetricReport report_with_acc(double acc) {
  MetricReport r;
  r.acc = acc;
  r.sn = acc;
  r.n_samples = 10;
  return r;
}

ExperimentResult fake_result(Mode mode, double acc, const std::string& split) {
  ExperimentResult r;
  r.mode = mode;
  r.test = report_with_acc(acc);
  r.test_split_id = split;
  return r;
}

}  // namespace

TEST_CASE("modes and checkpoint rules parse") {
  for (Mode m : {Mode::baseline, Mode::proposed, Mode::lower_bound, Mode::upper_bound, Mode::backbone_compare}) {
    CHECK(parse_mode(to_string(m)) == m);
  }
  CHECK_ERROR_CODE(parse_mode("teacher"), ErrorCode::UnknownMode);
}

TEST_CASE("experiment config json round trip and validation") {
  ExperimentConfig c = tiny_experiment(Mode::upper_bound);
  c.pseudo_threshold = 0.4;
  c.checkpoint = CheckpointRule::final_epoch;
  const nlohmann::json j = c;
  const ExperimentConfig back = j.get<ExperimentConfig>();
  CHECK(back.mode == Mode::upper_bound);
  CHECK(back.cv_folds == 3);
  CHECK(back.pseudo_threshold == 0.4);
  CHECK(back.checkpoint == CheckpointRule::final_epoch);
  CHECK(back.training.epochs == 2);
  CHECK(back.synthetic->n_patients_source == 6);
  CHECK(config_hash(back) == config_hash(c));
  ExperimentConfig other = c;
  other.seeds.init = 99;
  CHECK(config_hash(other) != config_hash(c));
  CHECK(config_hash(c).size() == 16);

  nlohmann::json bad = j;
  bad["mode"] = "nope";
  CHECK_ERROR_CODE(bad.get<ExperimentConfig>(), ErrorCode::UnknownMode);
  bad = j;
  bad["pseudo_threshold"] = 1.5;
  CHECK_ERROR_CODE(bad.get<ExperimentConfig>(), ErrorCode::InvalidConfig);
  bad = j;
  bad["checkpoint"] = "latest";
  CHECK_ERROR_CODE(bad.get<ExperimentConfig>(), ErrorCode::InvalidConfig);
}

TEST_CASE("config files resolve manifests relative to themselves") {
  const auto dir = testutil::temp_dir("orch_cfg");
  const auto synth = generate_synthetic(testutil::small_synth(2, 3, 3));
  write_synthetic(synth, testutil::small_synth(2, 3, 3), dir / "data");
  {
    std::ofstream f(dir / "exp.json");
    f << R"({"mode":"baseline","data":{"source_manifest":"data/source.csv","target_manifest":"data/target.csv"}})";
  }
  const auto cfg = load_experiment_config(dir / "exp.json");
  REQUIRE(cfg.source_manifest);
  CHECK(std::filesystem::path(*cfg.source_manifest) == dir / "data" / "source.csv");
  const auto data = load_experiment_data(cfg);
  CHECK(data.source.size() == synth.source.size());
  CHECK(data.target.size() == synth.target.size());
  ExperimentConfig empty;
  CHECK_ERROR_CODE(load_experiment_data(empty), ErrorCode::InvalidConfig);
}

TEST_CASE("baseline never reads target labels before the test") {
  const auto r = run_experiment(tiny_experiment(Mode::baseline));
  CHECK(r.target_label_reads_before_test == 0);
  REQUIRE(r.test);
  REQUIRE(r.cv);
  CHECK(r.cv->folds.size() == 3);
  CHECK(r.test->n_samples == r.test_size);
  CHECK(r.final_train_size == r.stage1_train_size);
  CHECK(r.best_fold >= 0);
  CHECK_FALSE(r.pseudo_label_quality);
}

TEST_CASE("modes share one test split and use the expected training sets") {
  const ExperimentConfig c = tiny_experiment(Mode::baseline);
  const std::vector<Mode> modes = {Mode::baseline, Mode::proposed, Mode::lower_bound, Mode::upper_bound};
  const auto results = run_experiments(c, modes);
  REQUIRE(results.size() == 4);
  const auto data = load_experiment_data(c);
  for (const auto& r : results) {
    CHECK(r.test_split_id == results[0].test_split_id);
    CHECK(r.test_patients == results[0].test_patients);
    CHECK(r.pool_size + r.test_size == static_cast<std::int64_t>(data.target.size()));
  }
  const auto& proposed = results[1];
  CHECK(proposed.final_train_size == static_cast<std::int64_t>(data.source.size()) + proposed.pool_size);
  CHECK(proposed.target_label_reads_before_test == 0);
  REQUIRE(proposed.pseudo_label_quality);
  CHECK(results[2].final_train_size == results[2].pool_size);
  CHECK(results[2].target_label_reads_before_test == 0);
  CHECK(results[3].final_train_size == proposed.final_train_size);
  CHECK(results[3].target_label_reads_before_test > 0);

  // A single-mode run reproduces the corresponding multi-mode result.
  ExperimentConfig single = c;
  single.mode = Mode::proposed;
  CHECK(nlohmann::json(run_experiment(single)).dump() == nlohmann::json(proposed).dump());

  const auto table = compare_report(results);
  REQUIRE(table.rows.size() == 4);
  CHECK(table.rows[0].mode == Mode::baseline);
  CHECK(table.rows[0].delta.acc == 0.0);
  CHECK(table.rows[1].delta.acc == doctest::Approx(proposed.test->acc - results[0].test->acc));
  const std::string text = render_table(table);
  CHECK(text.find("Proposed") != std::string::npos);
  CHECK(text.find("ACC") != std::string::npos);
}

TEST_CASE("result json round trip") {
  const auto r = run_experiment(tiny_experiment(Mode::baseline));
  const nlohmann::json j = r;
  for (const char* k : {"mode", "test", "cv", "provenance", "test_split_id", "target_label_reads_before_test"}) {
    CHECK(j.contains(k));
  }
  const ExperimentResult back = j.get<ExperimentResult>();
  CHECK(nlohmann::json(back).dump() == j.dump());
}

TEST_CASE("comparison deltas and mismatched splits") {
  const std::vector<ExperimentResult> rs = {fake_result(Mode::upper_bound, 0.9, "a"),
                                            fake_result(Mode::baseline, 0.7, "a"),
                                            fake_result(Mode::proposed, 0.75, "a")};
  const auto t = compare_report(rs);
  REQUIRE(t.rows.size() == 3);
  CHECK(t.rows[0].mode == Mode::baseline);
  CHECK(t.rows[1].mode == Mode::proposed);
  CHECK(t.rows[2].mode == Mode::upper_bound);
  CHECK(t.rows[1].delta.acc == doctest::Approx(0.05));
  CHECK(t.rows[2].delta.acc == doctest::Approx(0.2));
  const auto j = nlohmann::json(t);
  CHECK(j.is_array());
  CHECK(j.size() == 3);

  const std::vector<ExperimentResult> mixed = {fake_result(Mode::baseline, 0.7, "a"),
                                               fake_result(Mode::proposed, 0.75, "b")};
  CHECK_ERROR_CODE(compare_report(mixed), ErrorCode::MismatchedTestSplit);
  std::vector<ExperimentResult> untested = {fake_result(Mode::baseline, 0.7, "a"), fake_result(Mode::proposed, 0.7, "a")};
  untested[1].test.reset();
  CHECK_ERROR_CODE(compare_report(untested), ErrorCode::MismatchedTestSplit);
}

TEST_CASE("identical configs give identical results") {
  const auto a = run_experiment(tiny_experiment(Mode::proposed));
  const auto b = run_experiment(tiny_experiment(Mode::proposed));
  CHECK(nlohmann::json(a).dump() == nlohmann::json(b).dump());
}
