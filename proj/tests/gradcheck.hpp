#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "octgrade/engine.hpp"
#include "octgrade/model.hpp"
#include "octgrade/rng.hpp"
#include "octgrade/train.hpp"

namespace gradcheck {

struct Probe {
  int array = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

/// Miniature network the checks run on: narrow widths, a 32x64 input and
/// every block trainable so the probes reach the whole graph.
inline octgrade::Network mini_network(octgrade::Architecture arch, std::uint64_t seed) {
  octgrade::ModelConfig m;
  m.architecture = arch;
  m.backbone = octgrade::Backbone::vgg16;
  m.input_height = 32;
  m.input_width = 64;
  m.width_divisor = 32;
  m.embedding_channels = 6;
  m.frozen_blocks = 0;
  return octgrade::build_network(m, nullptr, seed);
}

inline octgrade::Tensor random_input(const octgrade::Network& net, std::uint64_t seed) {
  octgrade::Rng rng(seed);
  octgrade::Tensor t(net.graph.input_shape());
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

/// ReLU on/off states and max-pool winners of one forward pass. Equal
/// patterns at x-h, x and x+h mean the loss is smooth on that interval.
inline std::vector<int> switch_pattern(const octgrade::Network& net, const octgrade::Tensor& input) {
  octgrade::engine::Workspace ws;
  octgrade::engine::forward(net.graph, net.params, input, ws);
  std::vector<int> pattern;
  for (std::size_t l = 0; l < net.graph.layers.size(); ++l) {
    if (net.graph.layers[l].activation == octgrade::Activation::relu) {
      for (double v : ws.outputs[l].data) pattern.push_back(v > 0.0);
    }
    if (l < ws.argmax.size()) pattern.insert(pattern.end(), ws.argmax[l].begin(), ws.argmax[l].end());
  }
  return pattern;
}

inline double loss_at(const octgrade::Network& net, const octgrade::Tensor& input, octgrade::GradeLabel truth) {
  const auto trace = octgrade::forward_tensor(net, input);
  return octgrade::cross_entropy(truth, trace.probabilities);
}

/// Central differences (step h) against the analytic gradient at `n_probes`
/// trainable coordinates drawn so that every trainable array is visited.
/// Coordinates whose +-h step flips a ReLU or max-pool switch are redrawn:
/// the loss has a kink inside the interval there. `skipped` counts them.
inline std::vector<Probe> run(octgrade::Network net, const octgrade::Tensor& input,
                              octgrade::GradeLabel truth, int n_probes, double h, std::uint64_t seed,
                              int* skipped = nullptr) {
  auto grads = octgrade::engine::Gradients::zeros_like(net.params);
  octgrade::loss_and_gradient(net, input, truth, octgrade::kDefaultLossFloor, grads);
  std::vector<int> trainable;
  for (std::size_t a = 0; a < net.params.arrays.size(); ++a) {
    if (!net.params.arrays[a].frozen) trainable.push_back(static_cast<int>(a));
  }
  octgrade::Rng rng(seed);
  const std::vector<int> base = switch_pattern(net, input);
  std::vector<Probe> probes;
  int redrawn = 0;
  for (int k = 0; static_cast<int>(probes.size()) < n_probes && redrawn < 50 * n_probes; ++k) {
    Probe p;
    p.array = trainable[probes.size() % trainable.size()];
    auto& values = net.params.arrays[p.array].values;
    p.index = static_cast<std::size_t>(rng.index(values.size()));
    p.analytic = grads.arrays[p.array][p.index];
    const double saved = values[p.index];
    values[p.index] = saved + h;
    const double up = loss_at(net, input, truth);
    const bool smooth_up = switch_pattern(net, input) == base;
    values[p.index] = saved - h;
    const double down = loss_at(net, input, truth);
    const bool smooth_down = switch_pattern(net, input) == base;
    values[p.index] = saved;
    if (!smooth_up || !smooth_down) {
      ++redrawn;
      continue;
    }
    p.numeric = (up - down) / (2.0 * h);
    const double scale = std::max({std::abs(p.analytic), std::abs(p.numeric), 1e-7});
    p.rel_error = std::abs(p.analytic - p.numeric) / scale;
    probes.push_back(p);
  }
  if (skipped) *skipped = redrawn;
  return probes;
}

}  // namespace gradcheck
