#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgrade/dataset.hpp"
#include "octgrade/engine.hpp"
#include "octgrade/metrics.hpp"
#include "octgrade/model.hpp"

namespace octgrade {

inline constexpr double kDefaultLossFloor = 1e-7;

/// -sum_c y_c log(max(p_c, floor)). Throws NotOneHot.
double cross_entropy(std::span<const double> onehot, std::span<const double> probs,
                     double floor = kDefaultLossFloor);
double cross_entropy(GradeLabel truth, std::span<const double> probs, double floor = kDefaultLossFloor);

struct AdadeltaHyper {
  double rho = 0.95;
  double epsilon = 1e-6;
  double learning_rate = 1.0;
};

/// Running averages E[g^2] and E[dx^2] of one parameter array.
struct AdadeltaAccumulators {
  std::vector<double> sq_grad;
  std::vector<double> sq_update;
};

/// One Adadelta update in place. Empty accumulators are treated as zeros.
/// Throws ShapeMismatch when the spans or accumulators disagree in length.
void adadelta_step(std::span<double> params, std::span<const double> grads,
                   AdadeltaAccumulators& acc, const AdadeltaHyper& hyper);

/// Accumulators for every trainable array; frozen arrays stay empty.
struct OptimizerState {
  std::vector<AdadeltaAccumulators> arrays;

  static OptimizerState for_params(const ModelParameters& params);
  bool operator==(const OptimizerState& o) const;
};

/// Updates only the unfrozen arrays of `params`.
void adadelta_step(ModelParameters& params, const engine::Gradients& grads, OptimizerState& state,
                   const AdadeltaHyper& hyper);

struct TrainingConfig {
  int epochs = 100;
  int batch_size = 16;
  AdadeltaHyper optimizer;
  std::uint64_t shuffle_seed = 0;
  double loss_floor = kDefaultLossFloor;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<MetricReport> val;
};

struct TrainingTrace {
  std::vector<EpochRecord> epochs;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void write_trace_jsonl(const TrainingTrace& trace, const std::filesystem::path& path);

struct TrainResult {
  ModelParameters final_params;
  // Parameters after the epoch with the highest validation ACC (earliest on
  // ties); equal to final_params when there is no validation set.
  ModelParameters best_params;
  int best_epoch = 0;
  double best_val_acc = 0.0;
  TrainingTrace trace;
  OptimizerState optimizer;
};

/// Mini-batch cross-entropy training with Adadelta on the unfrozen arrays.
/// Outputs of the frozen prefix are computed once per sample and reused.
TrainResult train_model(const Network& net, const Dataset& train_set, const Dataset& val_set,
                        const TrainingConfig& config);

/// Loss of one sample and its parameter gradient (accumulated into `grads`).
double loss_and_gradient(const Network& net, const Tensor& input, GradeLabel truth, double floor,
                         engine::Gradients& grads);

/// Class probabilities for every sample, in dataset order.
std::vector<ScoreVector> predict(const Network& net, const Dataset& dataset);

/// Scores `net` against `dataset` labels (guarded reads).
MetricReport evaluate(const Network& net, const Dataset& dataset);

/// Truth labels in order, read through the label guard.
std::vector<GradeLabel> labels_of(const Dataset& dataset);

/// Weight bundle, optimizer accumulators and a JSON record of config + epoch.
void save_checkpoint(const std::filesystem::path& dir, const Network& net,
                     const OptimizerState& state, const TrainingConfig& config, int epoch);

}  // namespace octgrade
