#pragma once

// Per-sample forward and reverse passes over an ArchitectureGraph.

#include <span>
#include <vector>

#include "octgrade/model.hpp"

namespace octgrade::engine {

struct Workspace {
  std::vector<Tensor> outputs;             // one per layer
  std::vector<std::vector<int>> argmax;    // max-pool winners, per layer
};

/// Gradient buffers aligned with ModelParameters::arrays. Frozen arrays get
/// no storage.
struct Gradients {
  std::vector<std::vector<double>> arrays;

  static Gradients zeros_like(const ModelParameters& params);
  void zero();
};

/// Layers whose output depends on at least one trainable parameter. Only
/// these need gradients.
std::vector<char> trainable_layers(const ArchitectureGraph& graph, const ModelParameters& params);

/// Evaluates every layer. When `skip` is given, layers with skip[i] set are
/// assumed to already hold their outputs in `ws` and are not recomputed.
void forward(const ArchitectureGraph& graph, const ModelParameters& params, const Tensor& input,
             Workspace& ws, const std::vector<char>* skip = nullptr);

/// Accumulates parameter gradients given dLoss/dlogits. Propagates only into
/// layers flagged in `needs_grad`.
void backward(const ArchitectureGraph& graph, const ModelParameters& params, const Workspace& ws,
              std::span<const double> dlogits, const std::vector<char>& needs_grad,
              Gradients& grads);

}  // namespace octgrade::engine
