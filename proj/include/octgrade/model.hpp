#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgrade/dataset.hpp"
#include "octgrade/tensor.hpp"

namespace octgrade {

enum class Backbone { vgg16, vgg19 };
enum class Architecture { ragnet_v2, vgg };

std::string_view to_string(Backbone b);
Backbone parse_backbone(std::string_view text);
std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view text);

enum class NodeKind { input, conv, max_pool, concat, multiply, global_avg_pool, dense };
enum class Activation { none, relu, sigmoid };

std::string_view to_string(NodeKind k);
std::string_view to_string(Activation a);

struct LayerSpec {
  std::string name;
  NodeKind kind = NodeKind::input;
  std::vector<int> inputs;  // indices of earlier layers
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int out_channels = 0;
  Activation activation = Activation::none;
  int block = 0;  // backbone block 1..5; 0 for layers outside the backbone
  Shape3 output;
  int weight_param = -1;
  int bias_param = -1;
};

struct ModelConfig {
  Architecture architecture = Architecture::ragnet_v2;
  Backbone backbone = Backbone::vgg19;
  int input_height = kScanRows;
  int input_width = kScanCols;
  // Every backbone width (64..512) is divided by this; 1 gives the canonical VGG.
  int width_divisor = 1;
  int embedding_channels = 60;
  int frozen_blocks = 3;
  int n_classes = kNumClasses;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Layer DAG in topological order (inputs always precede consumers).
struct ArchitectureGraph {
  ModelConfig config;
  std::vector<LayerSpec> layers;
  int feature_node = -1;    // pre-pooling feature volume
  int attention_node = -1;  // sigmoid mask; -1 for plain VGG
  int embedding_node = -1;  // global average pool
  int logits_node = -1;

  int find(std::string_view name) const;
  const LayerSpec& at(std::string_view name) const;
  Shape3 input_shape() const { return layers.front().output; }
};

nlohmann::json to_json(const ArchitectureGraph& graph);

/// Output shape of one layer given its input shapes.
Shape3 infer_shape(const LayerSpec& layer, std::span<const Shape3> inputs);

struct ParamArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
  bool frozen = false;

  bool operator==(const ParamArray&) const = default;
};

/// Parameters of every layer. Conv weights are (out, in, kh, kw); dense
/// weights are (in, out), so the classifier matrix is embedding x classes.
struct ModelParameters {
  std::vector<ParamArray> arrays;

  int find(std::string_view name) const;
  std::size_t count() const;
  bool operator==(const ModelParameters&) const = default;
};

struct Network {
  ArchitectureGraph graph;
  ModelParameters params;
};

/// RAGNet_v2: VGG backbone, 3x1 residual branch from block 3, channel
/// reduction, 1x1 attention autoencoder over an identity shortcut, and a
/// final 1x1 convolution to `embedding_channels`, followed by GAP and a dense
/// classifier. Blocks 1..frozen_blocks are frozen.
Network build_ragnet_v2(ModelConfig config, const ModelParameters* pretrained,
                        std::uint64_t seed);

/// Canonical VGG backbone + GAP + dense classifier, same freezing policy.
Network build_vgg_baseline(ModelConfig config, const ModelParameters* pretrained,
                           std::uint64_t seed);

/// Dispatches on config.architecture.
Network build_network(const ModelConfig& config, const ModelParameters* pretrained,
                      std::uint64_t seed);

/// Copies every array of `bundle` into `params`; each name must exist with the
/// same shape or ShapeMismatch is raised.
void load_into(ModelParameters& params, const ModelParameters& bundle);

void save_weights(const ModelParameters& params, const std::filesystem::path& dir);
ModelParameters load_weights(const std::filesystem::path& dir);

struct ForwardTrace {
  Tensor features;        // (C, H, W) before pooling
  Tensor attention_mask;  // empty for plain VGG
  std::vector<double> embedding;
  std::vector<double> logits;
  std::vector<double> probabilities;
};

/// Max-shifted softmax. Throws NonFiniteLogit.
std::vector<double> softmax(std::span<const double> logits);

/// Resamples a scan to the network input size and replicates it to 3 channels.
Tensor make_input(const BScan& scan, const ModelConfig& config);

std::vector<ForwardTrace> forward(const Network& net, std::span<const BScan> batch);
ForwardTrace forward(const Network& net, const BScan& scan);
/// Forward on an already prepared (3, H, W) input.
ForwardTrace forward_tensor(const Network& net, const Tensor& input);

}  // namespace octgrade
