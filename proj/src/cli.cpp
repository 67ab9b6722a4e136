#include "octgrade/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "octgrade/error.hpp"
#include "octgrade/image.hpp"
#include "octgrade/interpret.hpp"
#include "octgrade/orchestrate.hpp"
#include "octgrade/pseudolabel.hpp"
#include "octgrade/splits.hpp"

namespace octgrade {
namespace {

namespace fs = std::filesystem;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string backbone;
  std::string mode;
  std::string out = ".";
};

struct RunRecord {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nullptr;
  std::vector<std::string> artifacts;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoFailure, "write failed: " + path.string());
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
}

void write_run_manifest(const fs::path& out, const RunRecord& rec, const std::optional<ExperimentConfig>& cfg) {
  nlohmann::json j{{"command", rec.command}, {"argv", rec.argv}, {"artifacts", rec.artifacts}};
  if (cfg) {
    j["config"] = *cfg;
    j["config_hash"] = config_hash(*cfg);
    j["seeds"] = {{"split", cfg->seeds.split}, {"init", cfg->seeds.init}, {"shuffle", cfg->seeds.shuffle}};
  } else {
    j["config"] = rec.config;
  }
  write_json(out / "run_manifest.json", j);
}

ExperimentConfig experiment_config(const GlobalOptions& g) {
  if (g.config.empty()) throw Error(ErrorCode::InvalidConfig, "--config is required for this command");
  ExperimentConfig cfg = load_experiment_config(g.config);
  if (g.seed) cfg.seeds = {*g.seed, *g.seed, *g.seed};
  if (!g.backbone.empty()) cfg.model.backbone = parse_backbone(g.backbone);
  if (!g.mode.empty() && g.mode.find(',') == std::string::npos) cfg.mode = parse_mode(g.mode);
  return cfg;
}

Network load_network(const ExperimentConfig& cfg, const fs::path& weights) {
  fs::path dir = weights;
  if (fs::exists(dir / "weights" / "index.json")) dir /= "weights";
  Network net = build_network(cfg.model, nullptr, cfg.seeds.init);
  load_into(net.params, load_weights(dir));
  return net;
}

ProgressFn progress_to(std::ostream& err) {
  return [&err](const std::string& msg) { err << msg << '\n'; };
}

int cmd_synth(const GlobalOptions& g, RunRecord& rec) {
  SynthConfig sc;
  if (!g.config.empty()) sc = read_json(g.config).get<SynthConfig>();
  if (g.seed) sc.seed = *g.seed;
  rec.config = sc;
  const fs::path out = g.out;
  write_synthetic(generate_synthetic(sc), sc, out);
  rec.artifacts = {"images", "source.csv", "target.csv", "synth_meta.json"};
  write_run_manifest(out, rec, std::nullopt);
  return 0;
}

int cmd_train(const GlobalOptions& g, int fold, std::ostream& out_stream, RunRecord& rec) {
  const ExperimentConfig cfg = experiment_config(g);
  const fs::path out = g.out;
  const auto data = load_experiment_data(cfg);
  const auto plan = make_cv_folds(data.source, cfg.cv_folds, cfg.seeds.split);
  const auto tv = materialize(data.source, plan, fold);
  const Network net = build_network(cfg.model, nullptr, cfg.seeds.init);
  Network init = net;
  if (cfg.pretrained_weights) load_into(init.params, load_weights(*cfg.pretrained_weights));
  TrainingConfig tc = cfg.training;
  tc.shuffle_seed = cfg.seeds.shuffle;
  const TrainResult t = train_model(init, tv.train, tv.val, tc);
  Network trained{init.graph,
                  cfg.checkpoint == CheckpointRule::best_validation ? t.best_params : t.final_params};
  save_checkpoint(out / "checkpoint", trained, t.optimizer, tc,
                  cfg.checkpoint == CheckpointRule::best_validation ? t.best_epoch : tc.epochs);
  write_trace_jsonl(t.trace, out / "trace.jsonl");
  const MetricReport val = evaluate(trained, tv.val);
  write_json(out / "val_metrics.json",
             {{"fold", fold}, {"metrics", val}, {"best_epoch", t.best_epoch}, {"train_size", tv.train.size()}});
  out_stream << "fold " << fold << " val ACC " << val.acc << '\n';
  rec.artifacts = {"checkpoint", "trace.jsonl", "val_metrics.json"};
  write_run_manifest(out, rec, cfg);
  return 0;
}

int cmd_pseudolabel(const GlobalOptions& g, const std::string& weights, RunRecord& rec) {
  const ExperimentConfig cfg = experiment_config(g);
  const fs::path out = g.out;
  const auto data = load_experiment_data(cfg);
  const auto split = split_target(data.target, cfg.target_fraction, cfg.seeds.split);
  const auto parts = materialize(data.target, split);
  const Network net = load_network(cfg, weights);
  write_pseudo_labels_csv(predict_pseudo_labels(net, parts.pool), out / "pseudo_labels.csv");
  write_json(out / "target_split.json", split);
  rec.artifacts = {"pseudo_labels.csv", "target_split.json"};
  write_run_manifest(out, rec, cfg);
  return 0;
}

std::vector<Mode> parse_modes(const std::string& text) {
  std::vector<Mode> modes;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) modes.push_back(parse_mode(item));
  if (modes.empty()) throw Error(ErrorCode::UnknownMode, "no mode given");
  return modes;
}

int cmd_selftrain(const GlobalOptions& g, std::ostream& out_stream, std::ostream& err, RunRecord& rec) {
  ExperimentConfig cfg = experiment_config(g);
  const fs::path out = g.out;
  const std::vector<Mode> modes = g.mode.empty() ? std::vector<Mode>{cfg.mode} : parse_modes(g.mode);
  const auto results = run_experiments(cfg, modes, progress_to(err));
  if (results.size() == 1) {
    write_json(out / "result.json", results[0]);
    const std::string table = render_result(results[0]);
    write_text(out / "table.txt", table);
    out_stream << table;
    rec.artifacts = {"result.json", "table.txt"};
  } else {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : results) {
      const std::string name = "result_" + std::string(to_string(r.mode)) + ".json";
      write_json(out / name, r);
      rec.artifacts.push_back(name);
      all.push_back(r);
    }
    write_json(out / "results.json", all);
    rec.artifacts.push_back("results.json");
    std::string table;
    std::vector<ExperimentResult> scored;
    for (const auto& r : results) {
      if (r.test) scored.push_back(r);
    }
    if (scored.size() >= 2) {
      const auto cmp = compare_report(scored);
      write_json(out / "comparison.json", cmp);
      rec.artifacts.push_back("comparison.json");
      table = render_table(cmp);
    }
    for (const auto& r : results) {
      if (!r.test) table += "\n" + render_result(r);
    }
    write_text(out / "table.txt", table);
    rec.artifacts.push_back("table.txt");
    out_stream << table;
  }
  if (modes.size() == 1) cfg.mode = modes[0];
  write_run_manifest(out, rec, cfg);
  return 0;
}

int cmd_eval(const GlobalOptions& g, const std::string& weights, std::ostream& out_stream, RunRecord& rec) {
  const ExperimentConfig cfg = experiment_config(g);
  const fs::path out = g.out;
  const auto data = load_experiment_data(cfg);
  const auto split = split_target(data.target, cfg.target_fraction, cfg.seeds.split);
  const auto parts = materialize(data.target, split);
  const Network net = load_network(cfg, weights);
  MetricReport report;
  {
    label_guard::EvaluationScope scope;
    report = evaluate(net, parts.test);
  }
  write_json(out / "test_metrics.json", {{"metrics", report}, {"test_patients", split.test_patients}});
  out_stream << nlohmann::json(report).dump(2) << '\n';
  rec.artifacts = {"test_metrics.json"};
  write_run_manifest(out, rec, cfg);
  return 0;
}

int cmd_cam(const GlobalOptions& g, const std::string& weights, const std::string& image,
            const std::string& grade_text, RunRecord& rec) {
  const ExperimentConfig cfg = experiment_config(g);
  const fs::path out = g.out;
  const Network net = load_network(cfg, weights);
  BScan scan;
  scan.image_id = fs::path(image).stem().string();
  scan.pixels = normalize_bscan(read_png(image));
  const ForwardTrace trace = forward(net, scan);
  const GradeLabel grade =
      grade_text.empty() ? argmax_grade({trace.probabilities[0], trace.probabilities[1], trace.probabilities[2]})
                         : parse_grade(grade_text);
  ClassActivationMap cam = compute_cam(net, trace, grade);
  cam.image_id = scan.image_id;
  const std::string stem = scan.image_id + "_" + std::string(to_string(grade));
  export_heatmap(cam, scan, out / (stem + "_cam.png"));
  write_float_matrix(cam.map, out / (stem + "_cam.txt"));
  rec.artifacts = {stem + "_cam.png", stem + "_cam.txt"};
  write_run_manifest(out, rec, cfg);
  return 0;
}

int cmd_compare(const GlobalOptions& g, const std::vector<std::string>& inputs, std::ostream& out_stream,
                RunRecord& rec) {
  std::vector<ExperimentResult> results;
  for (const auto& p : inputs) {
    nlohmann::json j = read_json(p);
    if (j.is_array()) {
      for (const auto& r : j) results.push_back(r.get<ExperimentResult>());
    } else {
      results.push_back(j.get<ExperimentResult>());
    }
  }
  const fs::path out = g.out;
  const auto table = compare_report(results);
  write_json(out / "comparison.json", table);
  const std::string text = render_table(table);
  write_text(out / "table.txt", text);
  out_stream << text;
  rec.artifacts = {"comparison.json", "table.txt"};
  rec.config = inputs;
  write_run_manifest(out, rec, std::nullopt);
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"OCT glaucoma grading with a two-stage self-training pipeline", "octgrade"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for data generation or all experiment seeds");
  app.add_option("--config", g.config, "Experiment (or synthetic) JSON config");
  app.add_option("--backbone", g.backbone, "vgg16 | vgg19");
  app.add_option("--mode", g.mode, "baseline | proposed | lower_bound | upper_bound | backbone_compare (comma list)");
  app.add_option("--out", g.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic source/target corpus");
  int fold = 0;
  auto* train = app.add_subcommand("train", "Train one stage-1 cross-validation fold on the source domain");
  train->add_option("--fold", fold, "Validation fold index")->check(CLI::NonNegativeNumber);
  std::string weights;
  auto* pseudo = app.add_subcommand("pseudolabel", "Predict pseudo-labels for the target pool");
  pseudo->add_option("--weights", weights, "Checkpoint or weight directory")->required();
  auto* selftrain = app.add_subcommand("selftrain", "Run experiment modes end to end");
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the target test split");
  eval->add_option("--weights", weights, "Checkpoint or weight directory")->required();
  std::string image;
  std::string grade;
  auto* cam = app.add_subcommand("cam", "Class activation heatmap for one PNG scan");
  cam->add_option("--weights", weights, "Checkpoint or weight directory")->required();
  cam->add_option("--image", image, "Grayscale PNG B-scan")->required();
  cam->add_option("--grade", grade, "healthy | early | advanced (default: predicted)");
  std::vector<std::string> inputs;
  auto* compare = app.add_subcommand("compare", "Tabulate result JSON files scored on one test split");
  compare->add_option("results", inputs, "result JSON files")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n" << app.help();
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed;

  RunRecord rec;
  rec.argv = args;
  try {
    if (*synth) {
      rec.command = "synth";
    } else if (*train) {
      rec.command = "train";
    } else if (*pseudo) {
      rec.command = "pseudolabel";
    } else if (*selftrain) {
      rec.command = "selftrain";
    } else if (*eval) {
      rec.command = "eval";
    } else if (*cam) {
      rec.command = "cam";
    } else {
      rec.command = "compare";
    }
    fs::create_directories(g.out);
    if (*synth) return cmd_synth(g, rec);
    if (*train) return cmd_train(g, fold, out, rec);
    if (*pseudo) return cmd_pseudolabel(g, weights, rec);
    if (*selftrain) return cmd_selftrain(g, out, err, rec);
    if (*eval) return cmd_eval(g, weights, out, rec);
    if (*cam) return cmd_cam(g, weights, image, grade, rec);
    return cmd_compare(g, inputs, out, rec);
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error [InvalidConfig]: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error [IoFailure]: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace octgrade
