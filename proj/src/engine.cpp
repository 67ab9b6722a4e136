#include "octgrade/engine.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "octgrade/error.hpp"

namespace octgrade::engine {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstRowMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Upper bound on im2col buffer entries; convolutions are evaluated in bands
// of output rows so full-resolution inputs stay within memory.
constexpr std::size_t kColsBudget = std::size_t{1} << 22;

int rows_per_band(const LayerSpec& l, int in_channels) {
  const std::size_t k = static_cast<std::size_t>(in_channels) * l.kernel_h * l.kernel_w;
  const std::size_t per_row = k * l.output.width;
  return static_cast<int>(std::clamp<std::size_t>(kColsBudget / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(l.output.height)));
}

void im2col(const LayerSpec& l, const Tensor& in, int r0, int r1, RowMat& cols) {
  const int out_w = l.output.width;
  const int positions = (r1 - r0) * out_w;
  cols.resize(static_cast<Eigen::Index>(in.shape.channels) * l.kernel_h * l.kernel_w, positions);
  Eigen::Index row = 0;
  for (int ci = 0; ci < in.shape.channels; ++ci) {
    for (int ky = 0; ky < l.kernel_h; ++ky) {
      for (int kx = 0; kx < l.kernel_w; ++kx, ++row) {
        double* dst = cols.row(row).data();
        for (int r = r0; r < r1; ++r) {
          const int iy = r * l.stride_h - l.pad_h + ky;
          for (int w = 0; w < out_w; ++w) {
            const int ix = w * l.stride_w - l.pad_w + kx;
            const bool inside = iy >= 0 && iy < in.shape.height && ix >= 0 && ix < in.shape.width;
            *dst++ = inside ? in.at(ci, iy, ix) : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const LayerSpec& l, const RowMat& cols, int r0, int r1, Tensor& grad_in) {
  const int out_w = l.output.width;
  Eigen::Index row = 0;
  for (int ci = 0; ci < grad_in.shape.channels; ++ci) {
    for (int ky = 0; ky < l.kernel_h; ++ky) {
      for (int kx = 0; kx < l.kernel_w; ++kx, ++row) {
        const double* src = cols.row(row).data();
        for (int r = r0; r < r1; ++r) {
          const int iy = r * l.stride_h - l.pad_h + ky;
          for (int w = 0; w < out_w; ++w, ++src) {
            const int ix = w * l.stride_w - l.pad_w + kx;
            if (iy >= 0 && iy < grad_in.shape.height && ix >= 0 && ix < grad_in.shape.width) {
              grad_in.at(ci, iy, ix) += *src;
            }
          }
        }
      }
    }
  }
}

void activate(Activation a, std::vector<double>& v) {
  switch (a) {
    case Activation::none: break;
    case Activation::relu:
      for (double& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::sigmoid:
      for (double& x : v) x = 1.0 / (1.0 + std::exp(-x));
      break;
  }
}

// dL/dpre from dL/dout, using the stored post-activation output.
void activation_backward(Activation a, const std::vector<double>& out, std::vector<double>& grad) {
  switch (a) {
    case Activation::none: break;
    case Activation::relu:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (out[i] <= 0.0) grad[i] = 0.0;
      }
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= out[i] * (1.0 - out[i]);
      break;
  }
}

void conv_forward(const LayerSpec& l, const ModelParameters& params, const Tensor& in, Tensor& out) {
  out = Tensor(l.output);
  const auto& weight = params.arrays[l.weight_param].values;
  const auto& bias = params.arrays[l.bias_param].values;
  const Eigen::Index k = static_cast<Eigen::Index>(in.shape.channels) * l.kernel_h * l.kernel_w;
  ConstRowMap w(weight.data(), l.out_channels, k, Eigen::OuterStride<>(k));
  const int plane = l.output.height * l.output.width;
  const int band = rows_per_band(l, in.shape.channels);
  RowMat cols;
  for (int r0 = 0; r0 < l.output.height; r0 += band) {
    const int r1 = std::min(l.output.height, r0 + band);
    im2col(l, in, r0, r1, cols);
    RowMap dst(out.data.data() + static_cast<std::size_t>(r0) * l.output.width, l.out_channels,
               cols.cols(), Eigen::OuterStride<>(plane));
    dst.noalias() = w * cols;
  }
  for (int c = 0; c < l.out_channels; ++c) {
    for (double& v : out.channel(c)) v += bias[c];
  }
  activate(l.activation, out.data);
}

void conv_backward(const LayerSpec& l, const ModelParameters& params, const Tensor& in,
                   const Tensor& out, std::vector<double> grad_pre, Gradients& grads,
                   Tensor* grad_in) {
  activation_backward(l.activation, out.data, grad_pre);
  const Eigen::Index k = static_cast<Eigen::Index>(in.shape.channels) * l.kernel_h * l.kernel_w;
  const int plane = l.output.height * l.output.width;
  auto& gw_store = grads.arrays[l.weight_param];
  auto& gb_store = grads.arrays[l.bias_param];
  const bool want_params = !gw_store.empty();
  if (want_params) {
    for (int c = 0; c < l.out_channels; ++c) {
      double s = 0.0;
      const double* g = grad_pre.data() + static_cast<std::size_t>(c) * plane;
      for (int i = 0; i < plane; ++i) s += g[i];
      gb_store[c] += s;
    }
  }
  const auto& weight = params.arrays[l.weight_param].values;
  ConstRowMap w(weight.data(), l.out_channels, k, Eigen::OuterStride<>(k));
  RowMap gw(gw_store.data(), want_params ? l.out_channels : 0, want_params ? k : 0,
            Eigen::OuterStride<>(k));
  const int band = rows_per_band(l, in.shape.channels);
  RowMat cols;
  RowMat dcols;
  for (int r0 = 0; r0 < l.output.height; r0 += band) {
    const int r1 = std::min(l.output.height, r0 + band);
    const Eigen::Index positions = static_cast<Eigen::Index>(r1 - r0) * l.output.width;
    ConstRowMap g(grad_pre.data() + static_cast<std::size_t>(r0) * l.output.width, l.out_channels,
                  positions, Eigen::OuterStride<>(plane));
    if (want_params) {
      im2col(l, in, r0, r1, cols);
      gw.noalias() += g * cols.transpose();
    }
    if (grad_in) {
      dcols.noalias() = w.transpose() * g;
      col2im_add(l, dcols, r0, r1, *grad_in);
    }
  }
}

void pool_forward(const LayerSpec& l, const Tensor& in, Tensor& out, std::vector<int>& argmax) {
  out = Tensor(l.output);
  argmax.assign(out.data.size(), 0);
  std::size_t o = 0;
  for (int c = 0; c < l.output.channels; ++c) {
    for (int r = 0; r < l.output.height; ++r) {
      for (int w = 0; w < l.output.width; ++w, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = 0;
        for (int ky = 0; ky < l.kernel_h; ++ky) {
          const int iy = r * l.stride_h + ky;
          for (int kx = 0; kx < l.kernel_w; ++kx) {
            const int ix = w * l.stride_w + kx;
            const double v = in.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_idx = (c * in.shape.height + iy) * in.shape.width + ix;
            }
          }
        }
        out.data[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
}

}  // namespace

Gradients Gradients::zeros_like(const ModelParameters& params) {
  Gradients g;
  g.arrays.resize(params.arrays.size());
  for (std::size_t i = 0; i < params.arrays.size(); ++i) {
    if (!params.arrays[i].frozen) g.arrays[i].assign(params.arrays[i].values.size(), 0.0);
  }
  return g;
}

void Gradients::zero() {
  for (auto& a : arrays) std::fill(a.begin(), a.end(), 0.0);
}

std::vector<char> trainable_layers(const ArchitectureGraph& graph, const ModelParameters& params) {
  std::vector<char> needs(graph.layers.size(), 0);
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const LayerSpec& l = graph.layers[i];
    bool n = l.weight_param >= 0 && !params.arrays[l.weight_param].frozen;
    n = n || (l.bias_param >= 0 && !params.arrays[l.bias_param].frozen);
    for (int in : l.inputs) n = n || needs[in];
    needs[i] = n;
  }
  return needs;
}

void forward(const ArchitectureGraph& graph, const ModelParameters& params, const Tensor& input,
             Workspace& ws, const std::vector<char>* skip) {
  const std::size_t n = graph.layers.size();
  ws.outputs.resize(n);
  ws.argmax.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (skip && (*skip)[i]) continue;
    const LayerSpec& l = graph.layers[i];
    Tensor& out = ws.outputs[i];
    switch (l.kind) {
      case NodeKind::input:
        if (!(input.shape == l.output)) {
          throw Error(ErrorCode::ShapeMismatch, "input tensor does not match the graph input");
        }
        out = input;
        break;
      case NodeKind::conv:
        conv_forward(l, params, ws.outputs[l.inputs[0]], out);
        break;
      case NodeKind::max_pool:
        pool_forward(l, ws.outputs[l.inputs[0]], out, ws.argmax[i]);
        break;
      case NodeKind::concat: {
        out = Tensor(l.output);
        auto dst = out.data.begin();
        for (int in : l.inputs) dst = std::copy(ws.outputs[in].data.begin(), ws.outputs[in].data.end(), dst);
        break;
      }
      case NodeKind::multiply: {
        const Tensor& a = ws.outputs[l.inputs[0]];
        const Tensor& b = ws.outputs[l.inputs[1]];
        out = Tensor(l.output);
        for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] = a.data[k] * b.data[k];
        break;
      }
      case NodeKind::global_avg_pool: {
        const Tensor& in = ws.outputs[l.inputs[0]];
        out = Tensor(l.output);
        const double inv = 1.0 / (static_cast<double>(in.shape.height) * in.shape.width);
        for (int c = 0; c < in.shape.channels; ++c) {
          double s = 0.0;
          for (double v : in.channel(c)) s += v;
          out.data[c] = s * inv;
        }
        break;
      }
      case NodeKind::dense: {
        const Tensor& in = ws.outputs[l.inputs[0]];
        const auto& w = params.arrays[l.weight_param].values;
        const auto& b = params.arrays[l.bias_param].values;
        out = Tensor(l.output);
        const int n_in = static_cast<int>(in.data.size());
        for (int o = 0; o < l.out_channels; ++o) {
          double s = b[o];
          for (int k = 0; k < n_in; ++k) s += in.data[k] * w[static_cast<std::size_t>(k) * l.out_channels + o];
          out.data[o] = s;
        }
        activate(l.activation, out.data);
        break;
      }
    }
  }
}

void backward(const ArchitectureGraph& graph, const ModelParameters& params, const Workspace& ws,
              std::span<const double> dlogits, const std::vector<char>& needs_grad,
              Gradients& grads) {
  const std::size_t n = graph.layers.size();
  std::vector<Tensor> delta(n);
  const int last = graph.logits_node;
  delta[last] = Tensor(graph.layers[last].output);
  std::copy(dlogits.begin(), dlogits.end(), delta[last].data.begin());

  auto grad_for = [&](int idx) -> Tensor* {
    if (!needs_grad[idx]) return nullptr;
    if (delta[idx].data.empty()) delta[idx] = Tensor(graph.layers[idx].output);
    return &delta[idx];
  };

  for (int i = static_cast<int>(n) - 1; i >= 0; --i) {
    if (!needs_grad[i] || delta[i].data.empty()) continue;
    const LayerSpec& l = graph.layers[i];
    const Tensor& g = delta[i];
    switch (l.kind) {
      case NodeKind::input:
        break;
      case NodeKind::conv:
        conv_backward(l, params, ws.outputs[l.inputs[0]], ws.outputs[i], g.data, grads,
                      grad_for(l.inputs[0]));
        break;
      case NodeKind::max_pool:
        if (Tensor* gi = grad_for(l.inputs[0])) {
          const auto& am = ws.argmax[i];
          for (std::size_t k = 0; k < g.data.size(); ++k) gi->data[am[k]] += g.data[k];
        }
        break;
      case NodeKind::concat: {
        std::size_t offset = 0;
        for (int in : l.inputs) {
          const std::size_t len = graph.layers[in].output.numel();
          if (Tensor* gi = grad_for(in)) {
            for (std::size_t k = 0; k < len; ++k) gi->data[k] += g.data[offset + k];
          }
          offset += len;
        }
        break;
      }
      case NodeKind::multiply: {
        const Tensor& a = ws.outputs[l.inputs[0]];
        const Tensor& b = ws.outputs[l.inputs[1]];
        if (Tensor* ga = grad_for(l.inputs[0])) {
          for (std::size_t k = 0; k < g.data.size(); ++k) ga->data[k] += g.data[k] * b.data[k];
        }
        if (Tensor* gb = grad_for(l.inputs[1])) {
          for (std::size_t k = 0; k < g.data.size(); ++k) gb->data[k] += g.data[k] * a.data[k];
        }
        break;
      }
      case NodeKind::global_avg_pool:
        if (Tensor* gi = grad_for(l.inputs[0])) {
          const Shape3 s = gi->shape;
          const double inv = 1.0 / (static_cast<double>(s.height) * s.width);
          for (int c = 0; c < s.channels; ++c) {
            for (double& v : gi->channel(c)) v += g.data[c] * inv;
          }
        }
        break;
      case NodeKind::dense: {
        const Tensor& in = ws.outputs[l.inputs[0]];
        std::vector<double> gpre = g.data;
        activation_backward(l.activation, ws.outputs[i].data, gpre);
        const auto& w = params.arrays[l.weight_param].values;
        auto& gw = grads.arrays[l.weight_param];
        auto& gb = grads.arrays[l.bias_param];
        const int n_in = static_cast<int>(in.data.size());
        if (!gw.empty()) {
          for (int k = 0; k < n_in; ++k) {
            for (int o = 0; o < l.out_channels; ++o) {
              gw[static_cast<std::size_t>(k) * l.out_channels + o] += in.data[k] * gpre[o];
            }
          }
          for (int o = 0; o < l.out_channels; ++o) gb[o] += gpre[o];
        }
        if (Tensor* gi = grad_for(l.inputs[0])) {
          for (int k = 0; k < n_in; ++k) {
            double s = 0.0;
            for (int o = 0; o < l.out_channels; ++o) {
              s += w[static_cast<std::size_t>(k) * l.out_channels + o] * gpre[o];
            }
            gi->data[k] += s;
          }
        }
        break;
      }
    }
  }
}

}  // namespace octgrade::engine
