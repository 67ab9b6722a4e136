#include "octgrade/orchestrate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "octgrade/error.hpp"
#include "octgrade/pseudolabel.hpp"
#include "octgrade/rng.hpp"

namespace octgrade {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::baseline: return "baseline";
    case Mode::proposed: return "proposed";
    case Mode::lower_bound: return "lower_bound";
    case Mode::upper_bound: return "upper_bound";
    case Mode::backbone_compare: return "backbone_compare";
  }
  return "?";
}

Mode parse_mode(std::string_view text) {
  for (Mode m : {Mode::baseline, Mode::proposed, Mode::lower_bound, Mode::upper_bound,
                 Mode::backbone_compare}) {
    if (text == to_string(m)) return m;
  }
  throw Error(ErrorCode::UnknownMode, std::string(text));
}

namespace {

std::string_view to_string(CheckpointRule r) {
  return r == CheckpointRule::best_validation ? "best_validation" : "final";
}

CheckpointRule parse_checkpoint(std::string_view text) {
  if (text == "best_validation") return CheckpointRule::best_validation;
  if (text == "final") return CheckpointRule::final_epoch;
  throw Error(ErrorCode::InvalidConfig, "checkpoint must be best_validation or final");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fnv_hex(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"mode", to_string(c.mode)},
                     {"model", c.model},
                     {"seeds", {{"split", c.seeds.split}, {"init", c.seeds.init}, {"shuffle", c.seeds.shuffle}}},
                     {"training", c.training},
                     {"cv_folds", c.cv_folds},
                     {"target_fraction", c.target_fraction},
                     {"pseudo_threshold", c.pseudo_threshold},
                     {"checkpoint", to_string(c.checkpoint)}};
  nlohmann::json data = nlohmann::json::object();
  if (c.source_manifest) data["source_manifest"] = *c.source_manifest;
  if (c.target_manifest) data["target_manifest"] = *c.target_manifest;
  if (c.synthetic) data["synthetic"] = *c.synthetic;
  j["data"] = data;
  if (c.pretrained_weights) j["pretrained_weights"] = *c.pretrained_weights;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("backbone")) c.model.backbone = parse_backbone(j.at("backbone").get<std::string>());
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    c.seeds.split = s.value("split", c.seeds.split);
    c.seeds.init = s.value("init", c.seeds.init);
    c.seeds.shuffle = s.value("shuffle", c.seeds.shuffle);
  }
  if (j.contains("training")) c.training = j.at("training").get<TrainingConfig>();
  c.cv_folds = j.value("cv_folds", c.cv_folds);
  c.target_fraction = j.value("target_fraction", c.target_fraction);
  c.pseudo_threshold = j.value("pseudo_threshold", c.pseudo_threshold);
  if (j.contains("checkpoint")) c.checkpoint = parse_checkpoint(j.at("checkpoint").get<std::string>());
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (d.contains("source_manifest")) c.source_manifest = d.at("source_manifest").get<std::string>();
    if (d.contains("target_manifest")) c.target_manifest = d.at("target_manifest").get<std::string>();
    if (d.contains("synthetic")) c.synthetic = d.at("synthetic").get<SynthConfig>();
  }
  if (j.contains("pretrained_weights")) c.pretrained_weights = j.at("pretrained_weights").get<std::string>();
  if (c.pseudo_threshold < 0.0 || c.pseudo_threshold > 1.0) {
    throw Error(ErrorCode::InvalidConfig, "pseudo_threshold must lie in [0, 1]");
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, e.what());
  }
  auto cfg = j.get<ExperimentConfig>();
  // Manifest paths in a config file are relative to the file.
  const auto base = path.parent_path();
  auto resolve = [&](std::optional<std::string>& p) {
    if (p && std::filesystem::path(*p).is_relative()) p = (base / *p).string();
  };
  resolve(cfg.source_manifest);
  resolve(cfg.target_manifest);
  resolve(cfg.pretrained_weights);
  return cfg;
}

std::string config_hash(const ExperimentConfig& c) { return fnv_hex(nlohmann::json(c).dump()); }

void to_json(nlohmann::json& j, const ExperimentResult& r) {
  j = nlohmann::json{{"mode", to_string(r.mode)},
                     {"architecture", r.architecture},
                     {"backbone", r.backbone},
                     {"checkpoint", r.checkpoint},
                     {"best_fold", r.best_fold},
                     {"sizes",
                      {{"stage1_train", r.stage1_train_size},
                       {"final_train", r.final_train_size},
                       {"pseudo_pool", r.pool_size},
                       {"test", r.test_size}}},
                     {"test_patients", r.test_patients},
                     {"test_split_id", r.test_split_id},
                     {"target_label_reads_before_test", r.target_label_reads_before_test},
                     {"provenance",
                      {{"config_hash", r.config_hash},
                       {"seeds", {{"split", r.seeds.split}, {"init", r.seeds.init}, {"shuffle", r.seeds.shuffle}}}}}};
  j["test"] = r.test ? nlohmann::json(*r.test) : nlohmann::json(nullptr);
  j["cv"] = r.cv ? nlohmann::json(*r.cv) : nlohmann::json(nullptr);
  if (r.pseudo_label_quality) {
    j["pseudo_label_quality"] = *r.pseudo_label_quality;
    j["pseudo_label_quality"]["diagnostic_only"] = true;
  } else {
    j["pseudo_label_quality"] = nullptr;
  }
  nlohmann::json cmp = nlohmann::json::array();
  for (const auto& a : r.comparison) cmp.push_back({{"name", a.name}, {"cv", a.cv}});
  j["comparison"] = cmp;
}

void from_json(const nlohmann::json& j, ExperimentResult& r) {
  r = ExperimentResult{};
  r.mode = parse_mode(j.at("mode").get<std::string>());
  r.architecture = j.value("architecture", "");
  r.backbone = j.value("backbone", "");
  r.checkpoint = j.value("checkpoint", "");
  r.best_fold = j.value("best_fold", -1);
  const auto& sizes = j.at("sizes");
  r.stage1_train_size = sizes.value("stage1_train", std::int64_t{0});
  r.final_train_size = sizes.value("final_train", std::int64_t{0});
  r.pool_size = sizes.value("pseudo_pool", std::int64_t{0});
  r.test_size = sizes.value("test", std::int64_t{0});
  r.test_patients = j.value("test_patients", std::vector<std::string>{});
  r.test_split_id = j.value("test_split_id", "");
  r.target_label_reads_before_test = j.value("target_label_reads_before_test", std::uint64_t{0});
  if (!j.at("test").is_null()) r.test = j.at("test").get<MetricReport>();
  if (!j.at("cv").is_null()) r.cv = j.at("cv").get<CrossValSummary>();
  if (j.contains("pseudo_label_quality") && !j.at("pseudo_label_quality").is_null()) {
    r.pseudo_label_quality = j.at("pseudo_label_quality").get<MetricReport>();
  }
  for (const auto& a : j.value("comparison", nlohmann::json::array())) {
    r.comparison.push_back({a.at("name").get<std::string>(), a.at("cv").get<CrossValSummary>()});
  }
  const auto& prov = j.at("provenance");
  r.config_hash = prov.value("config_hash", "");
  const auto& seeds = prov.at("seeds");
  r.seeds = {seeds.at("split").get<std::uint64_t>(), seeds.at("init").get<std::uint64_t>(),
             seeds.at("shuffle").get<std::uint64_t>()};
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  if (config.source_manifest && config.target_manifest) {
    ExperimentData d{load_manifest(*config.source_manifest), load_manifest(*config.target_manifest)};
    if (d.source.domain() != Domain::source || d.target.domain() != Domain::target) {
      throw Error(ErrorCode::BadManifest, "source/target manifests must each hold a single domain");
    }
    return d;
  }
  if (config.synthetic) {
    auto synth = generate_synthetic(*config.synthetic);
    return {std::move(synth.source), std::move(synth.target)};
  }
  throw Error(ErrorCode::InvalidConfig, "config needs source/target manifests or a synthetic block");
}

namespace {

constexpr std::uint64_t kStudentStream = 0x53545544454e5432ULL;

struct FoldModel {
  ModelParameters params;
  MetricReport val;
};

struct StageOne {
  std::vector<FoldModel> folds;
  CrossValSummary cv;
  int best_fold = 0;
  Dataset best_val;
  std::int64_t best_train_size = 0;
};

class Runner {
 public:
  Runner(const ExperimentConfig& config, const ProgressFn& progress)
      : config_(config), progress_(progress) {
    if (config_.cv_folds < 2) throw Error(ErrorCode::InvalidConfig, "cv_folds must be >= 2");
    training_ = config_.training;
    training_.shuffle_seed = config_.seeds.shuffle;
    if (config_.pretrained_weights) pretrained_ = load_weights(*config_.pretrained_weights);
  }

  ExperimentResult run(Mode mode) {
    ExperimentConfig cfg = config_;
    cfg.mode = mode;
    ExperimentResult r;
    r.mode = mode;
    r.architecture = std::string(to_string(cfg.model.architecture));
    r.backbone = std::string(to_string(cfg.model.backbone));
    r.checkpoint = std::string(to_string(cfg.checkpoint));
    r.config_hash = config_hash(cfg);
    r.seeds = cfg.seeds;
    const std::uint64_t reads_at_start = label_guard::eval_only_reads();

    ensure_data();
    if (mode == Mode::backbone_compare) {
      run_backbone_compare(r);
      r.target_label_reads_before_test = label_guard::eval_only_reads() - reads_at_start;
      return r;
    }

    ensure_split();
    const StageOne& s1 = stage_one(config_.model);
    r.cv = s1.cv;
    r.best_fold = s1.best_fold;
    r.stage1_train_size = s1.best_train_size;
    r.pool_size = static_cast<std::int64_t>(pool_.size());
    r.test_size = static_cast<std::int64_t>(test_.size());
    r.test_patients = split_.test_patients;
    r.test_split_id = fnv_hex(nlohmann::json(split_.test_patients).dump());

    Network final_net = mode == Mode::baseline ? fresh(config_.model) : fresh_student(config_.model);
    std::optional<PseudoLabelSet> pseudo;
    switch (mode) {
      case Mode::baseline:
        final_net.params = s1.folds[s1.best_fold].params;
        r.final_train_size = s1.best_train_size;
        break;
      case Mode::proposed: {
        pseudo = pseudo_labels(s1);
        auto aug = augment_dataset(data_->source, pool_, *pseudo, config_.pseudo_threshold);
        log("proposed: training on " + std::to_string(aug.data.size()) + " samples");
        final_net.params = train_final(final_net, aug.data, s1.best_val);
        r.final_train_size = static_cast<std::int64_t>(aug.data.size());
        break;
      }
      case Mode::lower_bound: {
        pseudo = pseudo_labels(s1);
        const Dataset train = pseudo_labeled_pool(pool_, *pseudo);
        log("lower_bound: training on " + std::to_string(train.size()) + " samples");
        final_net.params = train_final(final_net, train, s1.best_val);
        r.final_train_size = static_cast<std::int64_t>(train.size());
        break;
      }
      case Mode::upper_bound: {
        const Dataset train = with_true_pool_labels();
        log("upper_bound: training on " + std::to_string(train.size()) + " samples");
        final_net.params = train_final(final_net, train, s1.best_val);
        r.final_train_size = static_cast<std::int64_t>(train.size());
        break;
      }
      case Mode::backbone_compare:
        break;
    }

    r.target_label_reads_before_test = label_guard::eval_only_reads() - reads_at_start;
    {
      label_guard::EvaluationScope scope;
      r.test = evaluate(final_net, test_);
      if (pseudo) r.pseudo_label_quality = pseudo_label_quality(*pseudo, pool_);
    }
    return r;
  }

 private:
  void log(const std::string& msg) const {
    if (progress_) progress_(msg);
  }

  void ensure_data() {
    if (!data_) data_ = load_experiment_data(config_);
  }

  void ensure_split() {
    if (split_ready_) return;
    split_ = split_target(data_->target, config_.target_fraction, config_.seeds.split);
    auto parts = materialize(data_->target, split_);
    pool_ = std::move(parts.pool);
    test_ = std::move(parts.test);
    split_ready_ = true;
  }

  Network fresh(const ModelConfig& model) const {
    return build_network(model, pretrained_ ? &*pretrained_ : nullptr, config_.seeds.init);
  }

  // Stage-2 model: the same frozen (pretrained) blocks with newly drawn
  // trainable layers.
  Network fresh_student(const ModelConfig& model) const {
    const Network base = fresh(model);
    Network net = build_network(model, pretrained_ ? &*pretrained_ : nullptr,
                                mix_seed(config_.seeds.init, kStudentStream));
    for (std::size_t i = 0; i < net.params.arrays.size(); ++i) {
      if (net.params.arrays[i].frozen) net.params.arrays[i] = base.params.arrays[i];
    }
    return net;
  }

  const ModelParameters& pick(const TrainResult& t) const {
    return config_.checkpoint == CheckpointRule::best_validation ? t.best_params : t.final_params;
  }

  ModelParameters train_final(const Network& net, const Dataset& train, const Dataset& val) const {
    auto t = train_model(net, train, val, training_);
    return pick(t);
  }

  std::string key(const ModelConfig& m) const { return nlohmann::json(m).dump(); }

  const StageOne& stage_one(const ModelConfig& model) {
    const auto k = key(model);
    if (auto it = stage_one_.find(k); it != stage_one_.end()) return it->second;
    const SplitPlan plan = make_cv_folds(data_->source, config_.cv_folds, config_.seeds.split);
    StageOne s;
    std::vector<MetricReport> reports;
    std::vector<Dataset> vals;
    std::vector<std::int64_t> train_sizes;
    for (int f = 0; f < config_.cv_folds; ++f) {
      auto tv = materialize(data_->source, plan, f);
      const Network net = fresh(model);
      const auto t = train_model(net, tv.train, tv.val, training_);
      Network trained{net.graph, pick(t)};
      const MetricReport val = evaluate(trained, tv.val);
      log(std::string(to_string(model.architecture)) + "/" + std::string(to_string(model.backbone)) +
          " fold " + std::to_string(f) + ": val ACC " + std::to_string(val.acc));
      s.folds.push_back({trained.params, val});
      reports.push_back(val);
      vals.push_back(std::move(tv.val));
      train_sizes.push_back(static_cast<std::int64_t>(tv.train.size()));
    }
    s.cv = cross_val_aggregate(reports);
    for (int f = 1; f < config_.cv_folds; ++f) {
      if (reports[f].acc > reports[s.best_fold].acc) s.best_fold = f;
    }
    s.best_val = vals[s.best_fold];
    s.best_train_size = train_sizes[s.best_fold];
    return stage_one_.emplace(k, std::move(s)).first->second;
  }

  PseudoLabelSet pseudo_labels(const StageOne& s1) {
    if (!pseudo_) {
      Network teacher = fresh(config_.model);
      teacher.params = s1.folds[s1.best_fold].params;
      pseudo_ = predict_pseudo_labels(teacher, pool_);
    }
    return *pseudo_;
  }

  // Full-supervision reference: the pool's ground truth is promoted to
  // ordinary labels, which is exactly the read the guard accounts for.
  Dataset with_true_pool_labels() const {
    std::vector<Sample> samples = data_->source.copy_samples();
    label_guard::EvaluationScope scope;
    for (std::size_t i = 0; i < pool_.size(); ++i) {
      Sample s;
      s.scan = pool_.scan(i);
      s.label = pool_.label(i);
      samples.push_back(std::move(s));
    }
    return Dataset(Domain::mixed, std::move(samples));
  }

  void run_backbone_compare(ExperimentResult& r) {
    for (Backbone b : {Backbone::vgg16, Backbone::vgg19}) {
      for (Architecture a : {Architecture::vgg, Architecture::ragnet_v2}) {
        ModelConfig m = config_.model;
        m.backbone = b;
        m.architecture = a;
        const auto& s1 = stage_one(m);
        const std::string name = a == Architecture::vgg
                                     ? std::string(to_string(b))
                                     : "ragnet_v2_" + std::string(to_string(b));
        r.comparison.push_back({name, s1.cv});
      }
    }
    // Order as VGG16, VGG19, RAGNet_v2 (VGG16), RAGNet_v2 (VGG19).
    std::swap(r.comparison[1], r.comparison[2]);
    r.stage1_train_size = stage_one(config_.model).best_train_size;
  }

  const ExperimentConfig& config_;
  const ProgressFn& progress_;
  TrainingConfig training_;
  std::optional<ModelParameters> pretrained_;
  std::optional<ExperimentData> data_;
  bool split_ready_ = false;
  TargetSplit split_;
  Dataset pool_;
  Dataset test_;
  std::map<std::string, StageOne> stage_one_;
  std::optional<PseudoLabelSet> pseudo_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const ProgressFn& progress) {
  Runner runner(config, progress);
  return runner.run(config.mode);
}

std::vector<ExperimentResult> run_experiments(const ExperimentConfig& config, std::span<const Mode> modes,
                                              const ProgressFn& progress) {
  Runner runner(config, progress);
  std::vector<ExperimentResult> out;
  for (Mode m : modes) out.push_back(runner.run(m));
  return out;
}

namespace {

int row_rank(Mode m) {
  switch (m) {
    case Mode::baseline: return 0;
    case Mode::proposed: return 1;
    case Mode::lower_bound: return 2;
    case Mode::upper_bound: return 3;
    case Mode::backbone_compare: return 4;
  }
  return 5;
}

MetricReport minus(const MetricReport& a, const MetricReport& b) {
  MetricReport d;
  d.sn = a.sn - b.sn;
  d.sp = a.sp - b.sp;
  d.fs = a.fs - b.fs;
  d.acc = a.acc - b.acc;
  d.auc = a.auc - b.auc;
  d.top1 = a.top1 - b.top1;
  d.n_samples = a.n_samples - b.n_samples;
  return d;
}

}  // namespace

ComparisonTable compare_report(std::span<const ExperimentResult> results) {
  if (results.size() < 2) throw Error(ErrorCode::Empty, "comparison needs at least two results");
  for (const auto& r : results) {
    if (!r.test) throw Error(ErrorCode::MismatchedTestSplit, std::string(to_string(r.mode)) + " has no test metrics");
    if (r.test_split_id != results[0].test_split_id) {
      throw Error(ErrorCode::MismatchedTestSplit, "results were scored on different test splits");
    }
  }
  std::vector<const ExperimentResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const ExperimentResult* a, const ExperimentResult* b) {
    return row_rank(a->mode) < row_rank(b->mode);
  });
  const ExperimentResult* ref = sorted.front();
  for (const auto* r : sorted) {
    if (r->mode == Mode::baseline) {
      ref = r;
      break;
    }
  }
  ComparisonTable t;
  for (const auto* r : sorted) t.rows.push_back({r->mode, *r->test, minus(*r->test, *ref->test)});
  return t;
}

void to_json(nlohmann::json& j, const ComparisonTable& t) {
  j = nlohmann::json::array();
  for (const auto& row : t.rows) {
    j.push_back({{"mode", to_string(row.mode)}, {"metrics", row.metrics}, {"delta", row.delta}});
  }
}

namespace {

// Which of X^S, X^T, Y^S, Y^T, pseudo Y^T each configuration trains on.
std::array<bool, 5> data_marks(Mode m) {
  switch (m) {
    case Mode::baseline: return {true, false, true, false, false};
    case Mode::proposed: return {true, true, true, false, true};
    case Mode::lower_bound: return {false, true, false, false, true};
    case Mode::upper_bound: return {true, true, true, true, false};
    case Mode::backbone_compare: return {true, false, true, false, false};
  }
  return {};
}

std::string label_of(Mode m) {
  switch (m) {
    case Mode::baseline: return "Baseline";
    case Mode::proposed: return "Proposed";
    case Mode::lower_bound: return "Lower bound";
    case Mode::upper_bound: return "Upper bound";
    case Mode::backbone_compare: return "Backbone compare";
  }
  return "?";
}

void header(std::ostringstream& os) {
  os << std::left << std::setw(14) << "" << std::setw(5) << "X^S" << std::setw(5) << "X^T" << std::setw(5)
     << "Y^S" << std::setw(5) << "Y^T" << std::setw(7) << "~Y^T";
  for (const char* m : {"SN", "SP", "FS", "ACC", "AUC"}) os << std::right << std::setw(9) << m;
  os << '\n';
}

void metric_row(std::ostringstream& os, Mode mode, const MetricReport& r) {
  os << std::left << std::setw(14) << label_of(mode);
  const auto marks = data_marks(mode);
  for (int i = 0; i < 5; ++i) os << std::setw(i == 4 ? 7 : 5) << (marks[i] ? "x" : "--");
  os << std::right << std::fixed << std::setprecision(4);
  for (double v : {r.sn, r.sp, r.fs, r.acc, r.auc}) os << std::setw(9) << v;
  os << '\n';
}

}  // namespace

std::string render_table(const ComparisonTable& table) {
  std::ostringstream os;
  header(os);
  for (const auto& row : table.rows) metric_row(os, row.mode, row.metrics);
  os << "\nDelta vs " << label_of(table.rows.front().mode) << ":\n";
  for (const auto& row : table.rows) {
    os << std::left << std::setw(14) << label_of(row.mode) << std::right << std::showpos << std::fixed
       << std::setprecision(4);
    for (double v : {row.delta.sn, row.delta.sp, row.delta.fs, row.delta.acc, row.delta.auc}) {
      os << std::setw(9) << v;
    }
    os << std::noshowpos << '\n';
  }
  return os.str();
}

std::string render_result(const ExperimentResult& r) {
  std::ostringstream os;
  if (r.mode == Mode::backbone_compare) {
    os << std::left << std::setw(8) << "";
    for (const auto& a : r.comparison) os << std::setw(20) << a.name;
    os << '\n' << std::fixed << std::setprecision(2);
    const std::pair<const char*, MetricStat CrossValSummary::*> rows[] = {
        {"SN", &CrossValSummary::sn}, {"SP", &CrossValSummary::sp}, {"FS", &CrossValSummary::fs},
        {"ACC", &CrossValSummary::acc}, {"AUC", &CrossValSummary::auc}};
    for (const auto& [name, field] : rows) {
      os << std::setw(8) << name;
      for (const auto& a : r.comparison) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(2) << (a.cv.*field).mean << " +- " << (a.cv.*field).std;
        os << std::setw(20) << cell.str();
      }
      os << '\n';
    }
    return os.str();
  }
  header(os);
  if (r.test) metric_row(os, r.mode, *r.test);
  if (r.pseudo_label_quality) {
    os << "\npseudo-label top-1 accuracy on the pool (diagnostic): " << std::fixed << std::setprecision(4)
       << r.pseudo_label_quality->top1 << '\n';
  }
  return os.str();
}

}  // namespace octgrade
