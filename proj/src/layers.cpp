#include "vra/layers.hpp"

#include <cmath>

#include "vra/errors.hpp"

namespace vra {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv2d") return LayerKind::Conv2D;
  if (name == "maxpool2d") return LayerKind::MaxPool2D;
  if (name == "batchnorm") return LayerKind::BatchNorm;
  if (name == "relu") return LayerKind::ReLU;
  if (name == "sigmoid") return LayerKind::Sigmoid;
  if (name == "flatten") return LayerKind::Flatten;
  throw FormatError("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(int in, int out) {
  LayerSpec l;
  l.kind = LayerKind::Dense;
  l.in_features = in;
  l.out_features = out;
  l.weights.assign(size_t(in) * size_t(out), 0.0f);
  l.bias.assign(size_t(out), 0.0f);
  return l;
}

LayerSpec LayerSpec::conv2d(int in_ch, int out_ch, int kernel, int stride,
                            int padding) {
  LayerSpec l;
  l.kind = LayerKind::Conv2D;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.weights.assign(size_t(out_ch) * size_t(in_ch) * size_t(kernel) * size_t(kernel), 0.0f);
  l.bias.assign(size_t(out_ch), 0.0f);
  return l;
}

LayerSpec LayerSpec::maxpool2d(int kernel, int stride) {
  LayerSpec l;
  l.kind = LayerKind::MaxPool2D;
  l.kernel = kernel;
  l.stride = stride == 0 ? kernel : stride;
  return l;
}

LayerSpec LayerSpec::batchnorm(int channels) {
  LayerSpec l;
  l.kind = LayerKind::BatchNorm;
  l.channels = channels;
  l.bn_scale.assign(size_t(channels), 1.0f);
  l.bn_shift.assign(size_t(channels), 0.0f);
  l.bn_mean.assign(size_t(channels), 0.0f);
  l.bn_var.assign(size_t(channels), 1.0f);
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::ReLU;
  return l;
}

LayerSpec LayerSpec::sigmoid() {
  LayerSpec l;
  l.kind = LayerKind::Sigmoid;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = LayerKind::Flatten;
  return l;
}

std::vector<int> LayerSpec::output_shape(const std::vector<int>& in) const {
  switch (kind) {
    case LayerKind::Dense: {
      if (in.size() != 1 || in[0] != in_features) {
        throw ShapeError("dense: expected [" + std::to_string(in_features) +
                         "] input");
      }
      return {out_features};
    }
    case LayerKind::Conv2D: {
      if (in.size() != 3 || in[0] != in_channels) {
        throw ShapeError("conv2d: expected [" + std::to_string(in_channels) +
                         ",H,W] input");
      }
      int h = (in[1] + 2 * padding - kernel) / stride + 1;
      int w = (in[2] + 2 * padding - kernel) / stride + 1;
      if (h <= 0 || w <= 0) throw ShapeError("conv2d: kernel larger than input");
      return {out_channels, h, w};
    }
    case LayerKind::MaxPool2D: {
      if (in.size() != 3) throw ShapeError("maxpool2d: expected [C,H,W] input");
      int h = (in[1] - kernel) / stride + 1;
      int w = (in[2] - kernel) / stride + 1;
      if (h <= 0 || w <= 0) throw ShapeError("maxpool2d: window larger than input");
      return {in[0], h, w};
    }
    case LayerKind::BatchNorm: {
      int ch = in.size() == 3 ? in[0] : (in.size() == 1 ? in[0] : -1);
      if (ch != channels) {
        throw ShapeError("batchnorm: channel mismatch, got " +
                         std::to_string(ch) + " expected " +
                         std::to_string(channels));
      }
      return in;
    }
    case LayerKind::ReLU:
    case LayerKind::Sigmoid:
      return in;
    case LayerKind::Flatten:
      return {int(shape_numel(in))};
  }
  throw ShapeError("unreachable layer kind");
}

int64_t LayerSpec::param_count() const {
  return int64_t(weights.size()) + int64_t(bias.size()) +
         int64_t(bn_scale.size()) + int64_t(bn_shift.size()) +
         int64_t(bn_mean.size()) + int64_t(bn_var.size());
}

std::vector<std::vector<int>> NetworkModel::layer_shapes() const {
  std::vector<std::vector<int>> shapes;
  shapes.reserve(layers.size());
  std::vector<int> cur = input_shape;
  for (const LayerSpec& l : layers) {
    cur = l.output_shape(cur);
    shapes.push_back(cur);
  }
  return shapes;
}

void NetworkModel::validate() const {
  if (layers.empty()) throw ShapeError("model: no layers");
  if (num_classes < 2) throw ShapeError("model: num_classes must be >= 2");
  if (shape_numel(input_shape) <= 0) throw ShapeError("model: empty input shape");

  std::vector<int> cur = input_shape;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    std::string at = "layer " + std::to_string(i) + " (" +
                     layer_kind_name(l.kind) + ")";
    switch (l.kind) {
      case LayerKind::Dense:
        if (int64_t(l.weights.size()) !=
                int64_t(l.in_features) * int64_t(l.out_features) ||
            int(l.bias.size()) != l.out_features) {
          throw ShapeError(at + ": weight/bias size mismatch");
        }
        break;
      case LayerKind::Conv2D:
        if (int64_t(l.weights.size()) != int64_t(l.out_channels) *
                                             int64_t(l.in_channels) *
                                             int64_t(l.kernel) * int64_t(l.kernel) ||
            int(l.bias.size()) != l.out_channels) {
          throw ShapeError(at + ": weight/bias size mismatch");
        }
        if (l.stride <= 0 || l.kernel <= 0 || l.padding < 0) {
          throw ShapeError(at + ": bad hyperparameters");
        }
        break;
      case LayerKind::MaxPool2D:
        if (l.stride <= 0 || l.kernel <= 0) throw ShapeError(at + ": bad window");
        break;
      case LayerKind::BatchNorm: {
        size_t ch = size_t(l.channels);
        if (l.bn_scale.size() != ch || l.bn_shift.size() != ch ||
            l.bn_mean.size() != ch || l.bn_var.size() != ch) {
          throw ShapeError(at + ": statistics size mismatch");
        }
        for (float v : l.bn_var) {
          if (!(v > 0.0f)) throw ShapeError(at + ": variance must be positive");
        }
        break;
      }
      default:
        break;
    }
    cur = l.output_shape(cur);
  }
  if (cur.size() != 1 || cur[0] != num_classes) {
    throw ShapeError("model: final layer emits " +
                     Tensor::zeros(cur).shape_str() + ", expected [" +
                     std::to_string(num_classes) + "] logits");
  }
}

std::vector<Surface> analysis_surfaces(const NetworkModel& model) {
  std::vector<Surface> out;
  std::vector<std::vector<int>> shapes = model.layer_shapes();
  for (size_t i = 0; i < model.layers.size(); ++i) {
    LayerKind k = model.layers[i].kind;
    if (k != LayerKind::Dense && k != LayerKind::Conv2D) continue;
    Surface s;
    s.owner_layer = int(i);
    s.tap_layer = int(i);
    if (i + 1 < model.layers.size()) {
      LayerKind next = model.layers[i + 1].kind;
      if (next == LayerKind::ReLU || next == LayerKind::Sigmoid) {
        s.tap_layer = int(i + 1);
      }
    }
    s.shape = shapes[size_t(s.tap_layer)];
    s.size = int(shape_numel(s.shape));
    s.is_output = (size_t(s.tap_layer) + 1 == model.layers.size());
    out.push_back(std::move(s));
  }
  return out;
}

const Surface& checked_surface(const std::vector<Surface>& surfaces,
                               const NeuronRef& ref) {
  if (ref.layer_index < 0 || size_t(ref.layer_index) >= surfaces.size()) {
    throw AddressingError("neuron ref: surface " +
                          std::to_string(ref.layer_index) + " out of range (" +
                          std::to_string(surfaces.size()) + " surfaces)");
  }
  const Surface& s = surfaces[size_t(ref.layer_index)];
  if (ref.neuron_index < 0 || ref.neuron_index >= s.size) {
    throw AddressingError("neuron ref: neuron " +
                          std::to_string(ref.neuron_index) +
                          " out of range for surface " +
                          std::to_string(ref.layer_index) + " (size " +
                          std::to_string(s.size) + ")");
  }
  return s;
}

}  // namespace vra
