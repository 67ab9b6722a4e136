#include "octgrade/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "octgrade/engine.hpp"
#include "octgrade/error.hpp"
#include "octgrade/rng.hpp"

namespace octgrade {

std::string_view to_string(Backbone b) { return b == Backbone::vgg16 ? "vgg16" : "vgg19"; }

Backbone parse_backbone(std::string_view text) {
  if (text == "vgg16") return Backbone::vgg16;
  if (text == "vgg19") return Backbone::vgg19;
  throw Error(ErrorCode::UnknownBackbone, std::string(text));
}

std::string_view to_string(Architecture a) { return a == Architecture::vgg ? "vgg" : "ragnet_v2"; }

Architecture parse_architecture(std::string_view text) {
  if (text == "vgg") return Architecture::vgg;
  if (text == "ragnet_v2") return Architecture::ragnet_v2;
  throw Error(ErrorCode::InvalidConfig, "unknown architecture '" + std::string(text) + "'");
}

std::string_view to_string(NodeKind k) {
  switch (k) {
    case NodeKind::input: return "input";
    case NodeKind::conv: return "conv";
    case NodeKind::max_pool: return "max_pool";
    case NodeKind::concat: return "concat";
    case NodeKind::multiply: return "multiply";
    case NodeKind::global_avg_pool: return "global_avg_pool";
    case NodeKind::dense: return "dense";
  }
  return "?";
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"architecture", to_string(c.architecture)},
                     {"backbone", to_string(c.backbone)},
                     {"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"width_divisor", c.width_divisor},
                     {"embedding_channels", c.embedding_channels},
                     {"frozen_blocks", c.frozen_blocks},
                     {"n_classes", c.n_classes}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  if (j.contains("architecture")) c.architecture = parse_architecture(j.at("architecture").get<std::string>());
  if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  c.input_height = j.value("input_height", c.input_height);
  c.input_width = j.value("input_width", c.input_width);
  c.width_divisor = j.value("width_divisor", c.width_divisor);
  c.embedding_channels = j.value("embedding_channels", c.embedding_channels);
  c.frozen_blocks = j.value("frozen_blocks", c.frozen_blocks);
  c.n_classes = j.value("n_classes", c.n_classes);
}

int ArchitectureGraph::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const LayerSpec& ArchitectureGraph::at(std::string_view name) const {
  const int i = find(name);
  if (i < 0) throw Error(ErrorCode::ShapeMismatch, "no layer named " + std::string(name));
  return layers[i];
}

int ModelParameters::find(std::string_view name) const {
  for (std::size_t i = 0; i < arrays.size(); ++i) {
    if (arrays[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::size_t ModelParameters::count() const {
  std::size_t n = 0;
  for (const auto& a : arrays) n += a.values.size();
  return n;
}

Shape3 infer_shape(const LayerSpec& l, std::span<const Shape3> in) {
  auto require = [&](bool ok, const char* what) {
    if (!ok) throw Error(ErrorCode::ShapeMismatch, l.name + ": " + what);
  };
  switch (l.kind) {
    case NodeKind::input:
      return l.output;
    case NodeKind::conv: {
      require(in.size() == 1, "conv takes one input");
      const int h = (in[0].height + 2 * l.pad_h - l.kernel_h) / l.stride_h + 1;
      const int w = (in[0].width + 2 * l.pad_w - l.kernel_w) / l.stride_w + 1;
      require(h > 0 && w > 0, "input smaller than kernel");
      return {l.out_channels, h, w};
    }
    case NodeKind::max_pool: {
      require(in.size() == 1, "pool takes one input");
      const int h = (in[0].height - l.kernel_h) / l.stride_h + 1;
      const int w = (in[0].width - l.kernel_w) / l.stride_w + 1;
      require(in[0].height >= l.kernel_h && in[0].width >= l.kernel_w && h > 0 && w > 0,
              "input smaller than pooling window");
      return {in[0].channels, h, w};
    }
    case NodeKind::concat: {
      require(!in.empty(), "concat needs inputs");
      Shape3 s = in[0];
      s.channels = 0;
      for (const auto& x : in) {
        require(x.height == s.height && x.width == s.width, "concat spatial mismatch");
        s.channels += x.channels;
      }
      return s;
    }
    case NodeKind::multiply:
      require(in.size() == 2 && in[0] == in[1], "multiply operands differ in shape");
      return in[0];
    case NodeKind::global_avg_pool:
      require(in.size() == 1, "pool takes one input");
      return {in[0].channels, 1, 1};
    case NodeKind::dense:
      require(in.size() == 1, "dense takes one input");
      return {l.out_channels, 1, 1};
  }
  return {};
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class GraphBuilder {
 public:
  GraphBuilder(const ModelConfig& config, std::uint64_t seed) : seed_(seed) {
    graph_.config = config;
    LayerSpec input;
    input.name = "input";
    input.kind = NodeKind::input;
    input.output = {3, config.input_height, config.input_width};
    graph_.layers.push_back(input);
  }

  int conv(const std::string& name, int from, int out_channels, int kh, int kw, Activation act,
           int block = 0) {
    LayerSpec l;
    l.name = name;
    l.kind = NodeKind::conv;
    l.inputs = {from};
    l.kernel_h = kh;
    l.kernel_w = kw;
    l.pad_h = kh / 2;
    l.pad_w = kw / 2;
    l.out_channels = out_channels;
    l.activation = act;
    l.block = block;
    const int in_channels = graph_.layers[from].output.channels;
    l.weight_param = add_param(name + "/kernel", {out_channels, in_channels, kh, kw},
                               in_channels * kh * kw, act, block);
    l.bias_param = add_param(name + "/bias", {out_channels}, 0, act, block);
    return push(std::move(l));
  }

  int pool(const std::string& name, int from, int block = 0) {
    LayerSpec l;
    l.name = name;
    l.kind = NodeKind::max_pool;
    l.inputs = {from};
    l.kernel_h = l.kernel_w = 2;
    l.stride_h = l.stride_w = 2;
    l.block = block;
    return push(std::move(l));
  }

  int join(const std::string& name, NodeKind kind, std::vector<int> from) {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.inputs = std::move(from);
    return push(std::move(l));
  }

  int dense(const std::string& name, int from, int out) {
    LayerSpec l;
    l.name = name;
    l.kind = NodeKind::dense;
    l.inputs = {from};
    l.out_channels = out;
    const int n_in = graph_.layers[from].output.channels;
    l.weight_param = add_param(name + "/kernel", {n_in, out}, n_in, Activation::none, 0);
    l.bias_param = add_param(name + "/bias", {out}, 0, Activation::none, 0);
    return push(std::move(l));
  }

  ArchitectureGraph& graph() { return graph_; }
  ModelParameters& params() { return params_; }

 private:
  int push(LayerSpec l) {
    std::vector<Shape3> in;
    for (int i : l.inputs) in.push_back(graph_.layers[i].output);
    l.output = infer_shape(l, in);
    graph_.layers.push_back(std::move(l));
    return static_cast<int>(graph_.layers.size()) - 1;
  }

  // Uniform fan-in initialisation, seeded per array name so arrays with the
  // same name get the same values in every architecture.
  int add_param(const std::string& name, std::vector<int> shape, int fan_in, Activation act,
                int block) {
    ParamArray p;
    p.name = name;
    p.shape = std::move(shape);
    std::size_t n = 1;
    for (int d : p.shape) n *= static_cast<std::size_t>(d);
    p.values.assign(n, 0.0);
    if (fan_in > 0) {
      const double limit = std::sqrt((act == Activation::relu ? 6.0 : 3.0) / fan_in);
      Rng rng(mix_seed(seed_, fnv1a(name)));
      for (double& v : p.values) v = rng.uniform(-limit, limit);
    }
    p.frozen = block > 0 && block <= graph_.config.frozen_blocks;
    params_.arrays.push_back(std::move(p));
    return static_cast<int>(params_.arrays.size()) - 1;
  }

  std::uint64_t seed_;
  ArchitectureGraph graph_;
  ModelParameters params_;
};

void validate(const ModelConfig& c) {
  if (c.width_divisor < 1 || c.embedding_channels < 1 || c.n_classes < 2 || c.frozen_blocks < 0 ||
      c.frozen_blocks > 5 || c.input_height < 32 || c.input_width < 32) {
    throw Error(ErrorCode::InvalidConfig, "invalid model configuration");
  }
}

// Returns the block-3 and block-5 outputs.
std::pair<int, int> add_backbone(GraphBuilder& b, const ModelConfig& c) {
  static constexpr int kWidths[5] = {64, 128, 256, 512, 512};
  const int vgg16[5] = {2, 2, 3, 3, 3};
  const int vgg19[5] = {2, 2, 4, 4, 4};
  const int* depth = c.backbone == Backbone::vgg16 ? vgg16 : vgg19;
  int x = 0;
  int block3 = -1;
  for (int blk = 1; blk <= 5; ++blk) {
    const int width = std::max(1, kWidths[blk - 1] / c.width_divisor);
    for (int i = 1; i <= depth[blk - 1]; ++i) {
      x = b.conv("block" + std::to_string(blk) + "_conv" + std::to_string(i), x, width, 3, 3,
                 Activation::relu, blk);
    }
    x = b.pool("block" + std::to_string(blk) + "_pool", x, blk);
    if (blk == 3) block3 = x;
  }
  return {block3, x};
}

Network finish(GraphBuilder& b, const ModelParameters* pretrained) {
  Network net{std::move(b.graph()), std::move(b.params())};
  if (pretrained) load_into(net.params, *pretrained);
  return net;
}

}  // namespace

Network build_ragnet_v2(ModelConfig config, const ModelParameters* pretrained, std::uint64_t seed) {
  config.architecture = Architecture::ragnet_v2;
  validate(config);
  GraphBuilder b(config, seed);
  const auto [block3, block5] = add_backbone(b, config);
  const int width = b.graph().layers[block5].output.channels;

  // Residual branch: vertical 3x1 kernels, pooled down to the block-5 grid.
  int r = b.conv("res_conv1", block3, width, 3, 1, Activation::relu);
  r = b.pool("res_pool1", r);
  r = b.conv("res_conv2", r, width, 3, 1, Activation::relu);
  r = b.pool("res_pool2", r);

  const int merged = b.join("res_concat", NodeKind::concat, {block5, r});
  const int fused = b.conv("fuse_conv", merged, width, 1, 1, Activation::relu);

  // Attention: 1x1 autoencoder whose sigmoid output gates an identity shortcut.
  const int code = b.conv("att_encode", fused, std::max(1, width / 4), 1, 1, Activation::relu);
  const int mask = b.conv("att_decode", code, width, 1, 1, Activation::sigmoid);
  const int gated = b.join("att_apply", NodeKind::multiply, {fused, mask});
  const int joined = b.join("att_concat", NodeKind::concat, {fused, gated});

  const int features = b.conv("features", joined, config.embedding_channels, 1, 1, Activation::relu);
  const int gap = b.join("gap", NodeKind::global_avg_pool, {features});
  const int logits = b.dense("logits", gap, config.n_classes);

  auto& g = b.graph();
  g.feature_node = features;
  g.attention_node = mask;
  g.embedding_node = gap;
  g.logits_node = logits;
  return finish(b, pretrained);
}

Network build_vgg_baseline(ModelConfig config, const ModelParameters* pretrained, std::uint64_t seed) {
  config.architecture = Architecture::vgg;
  validate(config);
  GraphBuilder b(config, seed);
  const int block5 = add_backbone(b, config).second;
  const int gap = b.join("gap", NodeKind::global_avg_pool, {block5});
  const int logits = b.dense("logits", gap, config.n_classes);
  auto& g = b.graph();
  g.feature_node = block5;
  g.embedding_node = gap;
  g.logits_node = logits;
  return finish(b, pretrained);
}

Network build_network(const ModelConfig& config, const ModelParameters* pretrained, std::uint64_t seed) {
  return config.architecture == Architecture::vgg ? build_vgg_baseline(config, pretrained, seed)
                                                  : build_ragnet_v2(config, pretrained, seed);
}

nlohmann::json to_json(const ArchitectureGraph& graph) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : graph.layers) {
    nlohmann::json j{{"name", l.name},
                     {"kind", to_string(l.kind)},
                     {"inputs", l.inputs},
                     {"output", {l.output.height, l.output.width, l.output.channels}},
                     {"block", l.block}};
    if (l.kind == NodeKind::conv || l.kind == NodeKind::max_pool) {
      j["kernel"] = {l.kernel_h, l.kernel_w};
      j["stride"] = {l.stride_h, l.stride_w};
      j["padding"] = {l.pad_h, l.pad_w};
    }
    if (l.kind == NodeKind::conv || l.kind == NodeKind::dense) {
      j["out_channels"] = l.out_channels;
      j["activation"] = to_string(l.activation);
    }
    layers.push_back(std::move(j));
  }
  return {{"config", graph.config},
          {"layers", layers},
          {"feature_node", graph.layers[graph.feature_node].name},
          {"embedding_node", graph.layers[graph.embedding_node].name},
          {"logits_node", graph.layers[graph.logits_node].name}};
}

void load_into(ModelParameters& params, const ModelParameters& bundle) {
  for (const auto& src : bundle.arrays) {
    const int i = params.find(src.name);
    if (i < 0) throw Error(ErrorCode::ShapeMismatch, "bundle array " + src.name + " not in model");
    auto& dst = params.arrays[i];
    if (dst.shape != src.shape || dst.values.size() != src.values.size()) {
      throw Error(ErrorCode::ShapeMismatch, "bundle array " + src.name + " has a different shape");
    }
    dst.values = src.values;
  }
}

namespace {

std::string file_name_for(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), '/', '.');
  return s + ".f64";
}

}  // namespace

void save_weights(const ModelParameters& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& a : params.arrays) {
    const auto file = file_name_for(a.name);
    std::ofstream out(dir / file, std::ios::binary);
    // Stored as little-endian IEEE-754 doubles (the host order on supported targets).
    out.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / file).string());
    index.push_back({{"name", a.name}, {"shape", a.shape}, {"frozen", a.frozen}, {"file", file}});
  }
  std::ofstream out(dir / "index.json", std::ios::binary);
  out << nlohmann::json{{"arrays", index}}.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write weight index");
}

ModelParameters load_weights(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error(ErrorCode::IoFailure, "no index.json in " + dir.string());
  const auto index = nlohmann::json::parse(in);
  ModelParameters params;
  for (const auto& entry : index.at("arrays")) {
    ParamArray a;
    a.name = entry.at("name").get<std::string>();
    a.shape = entry.at("shape").get<std::vector<int>>();
    a.frozen = entry.value("frozen", false);
    std::size_t n = 1;
    for (int d : a.shape) n *= static_cast<std::size_t>(d);
    a.values.resize(n);
    const auto path = dir / entry.at("file").get<std::string>();
    std::ifstream f(path, std::ios::binary);
    f.read(reinterpret_cast<char*>(a.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f || f.gcount() != static_cast<std::streamsize>(n * sizeof(double))) {
      throw Error(ErrorCode::IoFailure, "truncated array file " + path.string());
    }
    params.arrays.push_back(std::move(a));
  }
  return params;
}

std::vector<double> softmax(std::span<const double> logits) {
  double top = -std::numeric_limits<double>::infinity();
  for (double s : logits) {
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteLogit, "logit is not finite");
    top = std::max(top, s);
  }
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

Tensor make_input(const BScan& scan, const ModelConfig& config) {
  if (scan.pixels.rows != kScanRows || scan.pixels.cols != kScanCols) {
    throw Error(ErrorCode::ShapeMismatch, "scan " + scan.image_id + " is not 248x384");
  }
  const Matrix m = resample(scan.pixels, config.input_height, config.input_width);
  // Fixed per-channel standardization with the usual ImageNet statistics.
  static constexpr double mean[3] = {0.485, 0.456, 0.406};
  static constexpr double stddev[3] = {0.229, 0.224, 0.225};
  Tensor t({3, config.input_height, config.input_width});
  for (int c = 0; c < 3; ++c) {
    auto plane = t.channel(c);
    for (std::size_t i = 0; i < m.size(); ++i) plane[i] = (m.data[i] - mean[c]) / stddev[c];
  }
  return t;
}

ForwardTrace forward_tensor(const Network& net, const Tensor& input) {
  engine::Workspace ws;
  engine::forward(net.graph, net.params, input, ws);
  ForwardTrace t;
  t.features = ws.outputs[net.graph.feature_node];
  if (net.graph.attention_node >= 0) t.attention_mask = ws.outputs[net.graph.attention_node];
  t.embedding = ws.outputs[net.graph.embedding_node].data;
  t.logits = ws.outputs[net.graph.logits_node].data;
  t.probabilities = softmax(t.logits);
  return t;
}

ForwardTrace forward(const Network& net, const BScan& scan) {
  return forward_tensor(net, make_input(scan, net.graph.config));
}

std::vector<ForwardTrace> forward(const Network& net, std::span<const BScan> batch) {
  if (batch.empty()) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  std::vector<ForwardTrace> out;
  out.reserve(batch.size());
  for (const auto& scan : batch) out.push_back(forward(net, scan));
  return out;
}

}  // namespace octgrade
