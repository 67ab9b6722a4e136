#include "octgrade/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "octgrade/error.hpp"
#include "octgrade/rng.hpp"

namespace octgrade {

double cross_entropy(std::span<const double> onehot, std::span<const double> probs, double floor) {
  if (onehot.size() != probs.size()) throw Error(ErrorCode::NotOneHot, "length differs from probabilities");
  int ones = 0;
  for (double y : onehot) {
    if (y == 1.0) ++ones;
    else if (y != 0.0) throw Error(ErrorCode::NotOneHot, "entries must be 0 or 1");
  }
  if (ones != 1) throw Error(ErrorCode::NotOneHot, "exactly one entry must be 1");
  double loss = 0.0;
  for (std::size_t c = 0; c < probs.size(); ++c) {
    if (onehot[c] == 1.0) loss -= std::log(std::clamp(probs[c], floor, 1.0));
  }
  return loss;
}

double cross_entropy(GradeLabel truth, std::span<const double> probs, double floor) {
  std::vector<double> y(probs.size(), 0.0);
  y.at(index_of(truth)) = 1.0;
  return cross_entropy(y, probs, floor);
}

void adadelta_step(std::span<double> params, std::span<const double> grads, AdadeltaAccumulators& acc,
                   const AdadeltaHyper& h) {
  const std::size_t n = params.size();
  if (grads.size() != n) throw Error(ErrorCode::ShapeMismatch, "gradient length differs from parameters");
  if (acc.sq_grad.empty()) acc.sq_grad.assign(n, 0.0);
  if (acc.sq_update.empty()) acc.sq_update.assign(n, 0.0);
  if (acc.sq_grad.size() != n || acc.sq_update.size() != n) {
    throw Error(ErrorCode::ShapeMismatch, "accumulator length differs from parameters");
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    acc.sq_grad[i] = h.rho * acc.sq_grad[i] + (1.0 - h.rho) * g * g;
    const double delta = -std::sqrt(acc.sq_update[i] + h.epsilon) / std::sqrt(acc.sq_grad[i] + h.epsilon) * g;
    acc.sq_update[i] = h.rho * acc.sq_update[i] + (1.0 - h.rho) * delta * delta;
    params[i] += h.learning_rate * delta;
  }
}

OptimizerState OptimizerState::for_params(const ModelParameters& params) {
  OptimizerState s;
  s.arrays.resize(params.arrays.size());
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    if (params.arrays[i].frozen) continue;
    s.arrays[i].sq_grad.assign(params.arrays[i].values.size(), 0.0);
    s.arrays[i].sq_update.assign(params.arrays[i].values.size(), 0.0);
  }
  return s;
}

bool OptimizerState::operator==(const OptimizerState& o) const {
  if (arrays.size() != o.arrays.size()) return false;
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].sq_grad != o.arrays[i].sq_grad || arrays[i].sq_update != o.arrays[i].sq_update) {
      return false;
    }
  }
  return true;
}

void adadelta_step(ModelParameters& params, const engine::Gradients& grads, OptimizerState& state,
                   const AdadeltaHyper& hyper) {
  if (grads.arrays.size() != params.arrays.size() || state.arrays.size() != params.arrays.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient/state layout differs from parameters");
  }
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    if (params.arrays[i].frozen) continue;
    adadelta_step(params.arrays[i].values, grads.arrays[i], state.arrays[i], hyper);
  }
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"rho", c.optimizer.rho},
                     {"epsilon", c.optimizer.epsilon},
                     {"learning_rate", c.optimizer.learning_rate},
                     {"shuffle_seed", c.shuffle_seed},
                     {"loss_floor", c.loss_floor}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c = TrainingConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer.rho = j.value("rho", c.optimizer.rho);
  c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
  c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
  c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
  c.loss_floor = j.value("loss_floor", c.loss_floor);
  if (c.epochs < 0 || c.batch_size < 1) {
    throw Error(ErrorCode::InvalidConfig, "epochs must be >= 0 and batch_size >= 1");
  }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = nlohmann::json{{"epoch", r.epoch}, {"train_loss", r.train_loss}};
  j["val"] = r.val ? nlohmann::json(*r.val) : nlohmann::json(nullptr);
}

void write_trace_jsonl(const TrainingTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  for (const auto& r : trace.epochs) out << nlohmann::json(r).dump() << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

namespace {

// dL/dlogits for the clamped cross-entropy; zero once the floor is engaged.
double softmax_xent_grad(const std::vector<double>& probs, int truth, double floor, double scale,
                         std::vector<double>& dlogits) {
  const double p = probs[truth];
  const double loss = -std::log(std::clamp(p, floor, 1.0));
  dlogits.assign(probs.size(), 0.0);
  if (p >= floor) {
    for (std::size_t c = 0; c < probs.size(); ++c) {
      dlogits[c] = scale * (probs[c] - (static_cast<int>(c) == truth ? 1.0 : 0.0));
    }
  }
  return loss;
}

// Outputs of the frozen layers that feed trainable ones, per sample.
class FrozenPrefixCache {
 public:
  FrozenPrefixCache(const Network& net, const std::vector<char>& needs) : net_(net) {
    const auto& layers = net.graph.layers;
    skip_.assign(layers.size(), 0);
    for (std::size_t i = 0; i < layers.size(); ++i) skip_[i] = !needs[i];
    std::vector<char> boundary(layers.size(), 0);
    for (std::size_t j = 0; j < layers.size(); ++j) {
      if (!needs[j]) continue;
      for (int in : layers[j].inputs) {
        if (!needs[in]) boundary[in] = 1;
      }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (boundary[i]) boundary_.push_back(static_cast<int>(i));
    }
  }

  void fill(const Dataset& data) {
    entries_.clear();
    entries_.reserve(data.size());
    engine::Workspace ws;
    for (std::size_t i = 0; i < data.size(); ++i) {
      engine::forward(net_.graph, net_.params, make_input(data.scan(i), net_.graph.config), ws);
      std::vector<Tensor> e;
      for (int b : boundary_) e.push_back(ws.outputs[b]);
      entries_.push_back(std::move(e));
    }
  }

  // Runs the trainable part of the graph for cached sample `i`.
  void forward(const ModelParameters& params, std::size_t i, engine::Workspace& ws) const {
    ws.outputs.resize(net_.graph.layers.size());
    for (std::size_t k = 0; k < boundary_.size(); ++k) ws.outputs[boundary_[k]] = entries_[i][k];
    engine::forward(net_.graph, params, Tensor{}, ws, &skip_);
  }

 private:
  const Network& net_;
  std::vector<char> skip_;
  std::vector<int> boundary_;
  std::vector<std::vector<Tensor>> entries_;
};

MetricReport evaluate_cached(const Network& net, const ModelParameters& params,
                             const FrozenPrefixCache& cache, const Dataset& data,
                             const std::vector<GradeLabel>& truths) {
  std::vector<ScoreVector> scores(data.size());
  engine::Workspace ws;
  for (std::size_t i = 0; i < data.size(); ++i) {
    cache.forward(params, i, ws);
    const auto p = softmax(ws.outputs[net.graph.logits_node].data);
    std::copy_n(p.begin(), kNumClasses, scores[i].begin());
  }
  return make_report(scores, truths);
}

}  // namespace

std::vector<GradeLabel> labels_of(const Dataset& dataset) {
  std::vector<GradeLabel> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) out.push_back(dataset.label(i));
  return out;
}

TrainResult train_model(const Network& net, const Dataset& train_set, const Dataset& val_set,
                        const TrainingConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1) {
    throw Error(ErrorCode::InvalidConfig, "epochs must be >= 0 and batch_size >= 1");
  }
  if (train_set.empty()) throw Error(ErrorCode::EmptyTrainSet, "no training samples");
  const std::vector<GradeLabel> train_labels = labels_of(train_set);
  const std::vector<GradeLabel> val_labels = labels_of(val_set);

  TrainResult result;
  result.final_params = net.params;
  result.best_params = net.params;
  result.optimizer = OptimizerState::for_params(net.params);
  if (config.epochs == 0) return result;

  const auto needs = engine::trainable_layers(net.graph, net.params);
  FrozenPrefixCache train_cache(net, needs);
  train_cache.fill(train_set);
  FrozenPrefixCache val_cache(net, needs);
  val_cache.fill(val_set);

  ModelParameters& params = result.final_params;
  auto grads = engine::Gradients::zeros_like(params);
  engine::Workspace ws;
  std::vector<double> dlogits;
  Rng rng(config.shuffle_seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  result.best_val_acc = -1.0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const double scale = 1.0 / static_cast<double>(stop - start);
      grads.zero();
      for (std::size_t b = start; b < stop; ++b) {
        const std::size_t i = order[b];
        train_cache.forward(params, i, ws);
        const auto probs = softmax(ws.outputs[net.graph.logits_node].data);
        loss_sum += softmax_xent_grad(probs, index_of(train_labels[i]), config.loss_floor, scale, dlogits);
        engine::backward(net.graph, params, ws, dlogits, needs, grads);
      }
      adadelta_step(params, grads, result.optimizer, config.optimizer);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val_set.empty()) {
      record.val = evaluate_cached(net, params, val_cache, val_set, val_labels);
      if (record.val->acc > result.best_val_acc) {
        result.best_val_acc = record.val->acc;
        result.best_epoch = epoch;
        result.best_params = params;
      }
    }
    result.trace.epochs.push_back(std::move(record));
  }
  if (val_set.empty()) {
    result.best_params = params;
    result.best_epoch = config.epochs;
    result.best_val_acc = 0.0;
  }
  return result;
}

double loss_and_gradient(const Network& net, const Tensor& input, GradeLabel truth, double floor,
                         engine::Gradients& grads) {
  const auto needs = engine::trainable_layers(net.graph, net.params);
  engine::Workspace ws;
  engine::forward(net.graph, net.params, input, ws);
  const auto probs = softmax(ws.outputs[net.graph.logits_node].data);
  std::vector<double> dlogits;
  const double loss = softmax_xent_grad(probs, index_of(truth), floor, 1.0, dlogits);
  engine::backward(net.graph, net.params, ws, dlogits, needs, grads);
  return loss;
}

std::vector<ScoreVector> predict(const Network& net, const Dataset& dataset) {
  std::vector<ScoreVector> out(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto t = forward(net, dataset.scan(i));
    std::copy_n(t.probabilities.begin(), kNumClasses, out[i].begin());
  }
  return out;
}

MetricReport evaluate(const Network& net, const Dataset& dataset) {
  const auto truths = labels_of(dataset);
  return make_report(predict(net, dataset), truths);
}

void save_checkpoint(const std::filesystem::path& dir, const Network& net, const OptimizerState& state,
                     const TrainingConfig& config, int epoch) {
  std::filesystem::create_directories(dir);
  save_weights(net.params, dir / "weights");
  ModelParameters opt;
  for (std::size_t i = 0; i < state.arrays.size(); ++i) {
    if (state.arrays[i].sq_grad.empty()) continue;
    const auto& p = net.params.arrays[i];
    opt.arrays.push_back({p.name + "/sq_grad", p.shape, state.arrays[i].sq_grad, false});
    opt.arrays.push_back({p.name + "/sq_update", p.shape, state.arrays[i].sq_update, false});
  }
  save_weights(opt, dir / "optimizer");
  std::ofstream out(dir / "checkpoint.json", std::ios::binary);
  out << nlohmann::json{{"model", net.graph.config}, {"training", config}, {"epoch", epoch}}.dump(2)
      << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write checkpoint.json");
}

}  // namespace octgrade
