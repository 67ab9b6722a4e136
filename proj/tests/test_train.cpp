#include <cmath>
#include <fstream>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "octgrade/splits.hpp"
#include "octgrade/train.hpp"
#include "oracles.hpp"

using namespace octgrade;

namespace {

// Two well separated grades rendered without any domain shift.
Dataset separable_set(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> samples;
  for (int i = 0; i < n; ++i) {
    const GradeLabel g = i % 2 == 0 ? GradeLabel::healthy : GradeLabel::advanced;
    Sample s;
    s.scan.image_id = "s" + std::to_string(i);
    s.scan.patient_id = "p" + std::to_string(i);
    s.scan.pixels = render_bands(draw_band_params(g, rng));
    s.label = g;
    samples.push_back(std::move(s));
  }
  return Dataset(Domain::source, std::move(samples));
}

TrainingConfig short_config(int epochs) {
  TrainingConfig c;
  c.epochs = epochs;
  c.batch_size = 8;
  c.shuffle_seed = 3;
  return c;
}

}  // namespace

TEST_CASE("cross entropy closed forms and clamp") {
  const std::vector<double> e0 = {1, 0, 0};
  const std::vector<double> sure = {1, 0, 0};
  CHECK(cross_entropy(e0, sure) <= 1e-6);
  const std::vector<double> uniform = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  CHECK(std::abs(cross_entropy(e0, uniform) - std::log(3.0)) <= 1e-6);
  CHECK(std::abs(cross_entropy(e0, uniform) - 1.098612) <= 1e-6);
  const std::vector<double> miss = {0, 0.5, 0.5};
  CHECK(cross_entropy(e0, miss) == doctest::Approx(-std::log(1e-7)));
  CHECK(cross_entropy(e0, miss) == doctest::Approx(16.118).epsilon(1e-4));
  CHECK(cross_entropy(GradeLabel::early, std::vector<double>{0.2, 0.5, 0.3}) == doctest::Approx(-std::log(0.5)));
  const std::vector<double> notone = {0.5, 0.5, 0};
  CHECK_ERROR_CODE(cross_entropy(notone, uniform), ErrorCode::NotOneHot);
  const std::vector<double> two = {1, 1, 0};
  CHECK_ERROR_CODE(cross_entropy(two, uniform), ErrorCode::NotOneHot);
}

TEST_CASE("adadelta single step matches the scalar oracle") {
  std::vector<double> w = {0.0};
  const std::vector<double> g = {1.0};
  AdadeltaAccumulators acc;
  adadelta_step(w, g, acc, AdadeltaHyper{});
  // Reference value rounded to four significant digits; the oracle below is the tight check.
  CHECK(std::abs(w[0] - (-0.0044719)) <= 5e-7);
  const long double expected = oracle::adadelta_first_step(1.0L, 0.95L, 1e-6L);
  CHECK(std::abs(w[0] - static_cast<double>(expected)) <= 1e-9);
  CHECK(acc.sq_grad[0] == doctest::Approx(0.05));
  CHECK(acc.sq_update[0] == doctest::Approx(0.05 * expected * expected));
}

TEST_CASE("adadelta zero gradient decays accumulators only") {
  std::vector<double> w = {0.3, -1.2};
  AdadeltaAccumulators acc{{0.4, 0.2}, {0.01, 0.02}};
  const std::vector<double> g = {0.0, 0.0};
  adadelta_step(w, g, acc, AdadeltaHyper{});
  CHECK(w == std::vector<double>{0.3, -1.2});
  CHECK(acc.sq_grad[0] == doctest::Approx(0.95 * 0.4));
  CHECK(acc.sq_update[1] == doctest::Approx(0.95 * 0.02));
}

TEST_CASE("adadelta is deterministic and checks shapes") {
  std::vector<double> w1 = {0.5, 0.1}, w2 = w1;
  AdadeltaAccumulators a1{{0.1, 0.2}, {0.3, 0.4}}, a2 = a1;
  const std::vector<double> g = {0.7, -0.2};
  adadelta_step(w1, g, a1, AdadeltaHyper{});
  adadelta_step(w2, g, a2, AdadeltaHyper{});
  CHECK(w1 == w2);
  CHECK(a1.sq_grad == a2.sq_grad);
  CHECK(a1.sq_update == a2.sq_update);
  const std::vector<double> short_g = {0.1};
  CHECK_ERROR_CODE(adadelta_step(w1, short_g, a1, AdadeltaHyper{}), ErrorCode::ShapeMismatch);
}

TEST_CASE("analytic gradients match central differences") {
  for (Architecture arch : {Architecture::ragnet_v2, Architecture::vgg}) {
    const Network net = gradcheck::mini_network(arch, 21);
    const Tensor input = gradcheck::random_input(net, 4);
    for (GradeLabel truth : {GradeLabel::healthy, GradeLabel::advanced}) {
      int skipped = 0;
      const auto probes = gradcheck::run(net, input, truth, 40, 1e-4, 9, &skipped);
      REQUIRE(probes.size() == 40);
      CHECK(skipped <= 10);
      double worst = 0.0;
      for (const auto& p : probes) worst = std::max(worst, p.rel_error);
      CHECK_MESSAGE(worst <= 1e-3, "worst relative error " << worst);
    }
  }
}

TEST_CASE("training config validation and json") {
  TrainingConfig c;
  CHECK(c.epochs == 100);
  CHECK(c.batch_size == 16);
  c.epochs = 7;
  c.batch_size = 4;
  c.optimizer.rho = 0.9;
  const TrainingConfig back = nlohmann::json(c).get<TrainingConfig>();
  CHECK(back.epochs == 7);
  CHECK(back.batch_size == 4);
  CHECK(back.optimizer.rho == 0.9);
  CHECK_ERROR_CODE(nlohmann::json({{"epochs", -1}}).get<TrainingConfig>(), ErrorCode::InvalidConfig);
  CHECK_ERROR_CODE(nlohmann::json({{"batch_size", 0}}).get<TrainingConfig>(), ErrorCode::InvalidConfig);
}

TEST_CASE("zero epochs returns the initial parameters") {
  const Network net = build_network(testutil::tiny_model(), nullptr, 1);
  const Dataset train = separable_set(4, 1);
  const auto r = train_model(net, train, Dataset{}, short_config(0));
  CHECK(r.final_params == net.params);
  CHECK(r.best_params == net.params);
  CHECK(r.trace.epochs.empty());
  CHECK_ERROR_CODE(train_model(net, Dataset{}, Dataset{}, short_config(1)), ErrorCode::EmptyTrainSet);
}

TEST_CASE("tiny separable set is learned and frozen blocks stay put") {
  const Network net = build_network(testutil::tiny_model(), nullptr, 2);
  const Dataset train = separable_set(30, 5);
  const auto r = train_model(net, train, train, short_config(50));
  REQUIRE(r.trace.epochs.size() == 50);
  CHECK(r.trace.epochs.back().train_loss < r.trace.epochs.front().train_loss);
  Network trained{net.graph, r.final_params};
  CHECK(evaluate(trained, train).top1 >= 0.95);
  for (const auto& e : r.trace.epochs) {
    CHECK(e.train_loss >= 0.0);
    CHECK(e.train_loss <= -std::log(1e-7));
    CHECK(e.val.has_value());
  }
  std::size_t changed = 0;
  for (std::size_t a = 0; a < net.params.arrays.size(); ++a) {
    const auto& before = net.params.arrays[a];
    const auto& after = r.final_params.arrays[a];
    if (before.frozen) {
      CHECK_MESSAGE(before.values == after.values, before.name);
    } else {
      changed += before.values != after.values;
    }
  }
  CHECK(changed > 0);
  CHECK(r.best_epoch >= 1);
  CHECK(r.best_val_acc == doctest::Approx(r.trace.epochs[r.best_epoch - 1].val->acc));
}

TEST_CASE("training is fully deterministic") {
  const Network net = build_network(testutil::tiny_model(), nullptr, 2);
  const Dataset train = separable_set(10, 6);
  const auto a = train_model(net, train, train, short_config(3));
  const auto b = train_model(net, train, train, short_config(3));
  CHECK(a.final_params == b.final_params);
  CHECK(a.optimizer == b.optimizer);
  for (std::size_t e = 0; e < 3; ++e) CHECK(a.trace.epochs[e].train_loss == b.trace.epochs[e].train_loss);
  auto other = short_config(3);
  other.shuffle_seed = 4;
  const auto c = train_model(net, train, train, other);
  CHECK_FALSE(c.final_params == a.final_params);
}

TEST_CASE("training refuses eval-only labels outside evaluation") {
  const auto synth = generate_synthetic(testutil::small_synth(3, 3, 3));
  const Network net = build_network(testutil::tiny_model(), nullptr, 2);
  CHECK_ERROR_CODE(train_model(net, synth.target, Dataset{}, short_config(1)), ErrorCode::LabelLeakage);
  std::vector<Sample> bare;
  for (const auto& s : synth.target.samples()) {
    Sample copy;
    copy.scan = s.scan;
    bare.push_back(std::move(copy));
  }
  const Dataset unlabelled(Domain::target, std::move(bare));
  CHECK_ERROR_CODE(train_model(net, unlabelled, Dataset{}, short_config(1)), ErrorCode::UnlabeledSample);
}

TEST_CASE("checkpoints and traces are written") {
  const auto dir = testutil::temp_dir("ckpt");
  const Network net = build_network(testutil::tiny_model(), nullptr, 2);
  const Dataset train = separable_set(6, 7);
  const auto r = train_model(net, train, train, short_config(2));
  save_checkpoint(dir / "ck", Network{net.graph, r.final_params}, r.optimizer, short_config(2), 2);
  CHECK(load_weights(dir / "ck" / "weights") == r.final_params);
  CHECK(std::filesystem::exists(dir / "ck" / "checkpoint.json"));
  write_trace_jsonl(r.trace, dir / "trace.jsonl");
  std::ifstream f(dir / "trace.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(f, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("epoch"));
    CHECK(j.contains("train_loss"));
    ++lines;
  }
  CHECK(lines == 2);
}
