#include "vra/forward.hpp"

#include <cmath>
#include <cstring>

#include "vra/errors.hpp"

namespace vra {

namespace {

template <typename T>
void apply_dense(const LayerSpec& l, const std::vector<T>& in,
                 std::vector<T>& out) {
  out.assign(size_t(l.out_features), T(0));
  for (int k = 0; k < l.out_features; ++k) {
    T acc = T(l.bias[size_t(k)]);
    const float* w = l.weights.data() + size_t(k) * size_t(l.in_features);
    for (int i = 0; i < l.in_features; ++i) acc += T(w[i]) * in[size_t(i)];
    out[size_t(k)] = acc;
  }
}

template <typename T>
void apply_conv2d(const LayerSpec& l, const std::vector<T>& in, int in_h,
                  int in_w, std::vector<T>& out, int out_h, int out_w) {
  out.assign(size_t(l.out_channels) * size_t(out_h) * size_t(out_w), T(0));
  for (int oc = 0; oc < l.out_channels; ++oc) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        T acc = T(l.bias[size_t(oc)]);
        for (int ic = 0; ic < l.in_channels; ++ic) {
          for (int ky = 0; ky < l.kernel; ++ky) {
            int iy = oy * l.stride + ky - l.padding;
            if (iy < 0 || iy >= in_h) continue;
            for (int kx = 0; kx < l.kernel; ++kx) {
              int ix = ox * l.stride + kx - l.padding;
              if (ix < 0 || ix >= in_w) continue;
              float w = l.weights[((size_t(oc) * size_t(l.in_channels) + size_t(ic)) *
                                       size_t(l.kernel) + size_t(ky)) * size_t(l.kernel) + size_t(kx)];
              acc += T(w) * in[(size_t(ic) * size_t(in_h) + size_t(iy)) * size_t(in_w) + size_t(ix)];
            }
          }
        }
        out[(size_t(oc) * size_t(out_h) + size_t(oy)) * size_t(out_w) + size_t(ox)] = acc;
      }
    }
  }
}

// NaN-propagating window max: the first NaN wins; otherwise the first index
// attaining the strict maximum (matched exactly by the backward routing).
template <typename T>
T window_max(const std::vector<T>& in, int /*ch*/, int in_h, int in_w, int base,
             int y0, int x0, int k) {
  bool first = true;
  T best = T(0);
  for (int dy = 0; dy < k; ++dy) {
    for (int dx = 0; dx < k; ++dx) {
      int iy = y0 + dy, ix = x0 + dx;
      if (iy >= in_h || ix >= in_w) continue;
      T v = in[size_t(base) + size_t(iy) * size_t(in_w) + size_t(ix)];
      if (std::isnan(double(v))) return v;
      if (first || v > best) {
        best = v;
        first = false;
      }
    }
  }
  return best;
}

template <typename T>
void apply_maxpool(const LayerSpec& l, const std::vector<T>& in, int ch,
                   int in_h, int in_w, std::vector<T>& out, int out_h,
                   int out_w) {
  out.assign(size_t(ch) * size_t(out_h) * size_t(out_w), T(0));
  for (int c = 0; c < ch; ++c) {
    int base = c * in_h * in_w;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        out[(size_t(c) * size_t(out_h) + size_t(oy)) * size_t(out_w) + size_t(ox)] =
            window_max(in, c, in_h, in_w, base, oy * l.stride, ox * l.stride,
                       l.kernel);
      }
    }
  }
}

template <typename T>
void apply_batchnorm(const LayerSpec& l, const std::vector<T>& in,
                     int per_channel, std::vector<T>& out) {
  out.resize(in.size());
  for (int c = 0; c < l.channels; ++c) {
    T inv_std = T(1) / std::sqrt(T(l.bn_var[size_t(c)]));
    T scale = T(l.bn_scale[size_t(c)]) * inv_std;
    T shift = T(l.bn_shift[size_t(c)]) - T(l.bn_mean[size_t(c)]) * scale;
    for (int i = 0; i < per_channel; ++i) {
      size_t idx = size_t(c) * size_t(per_channel) + size_t(i);
      out[idx] = in[idx] * scale + shift;
    }
  }
}

// One layer, generic scalar. in_shape is the layer's input shape.
template <typename T>
void apply_layer(const LayerSpec& l, const std::vector<int>& in_shape,
                 const std::vector<T>& in, std::vector<T>& out) {
  switch (l.kind) {
    case LayerKind::Dense:
      apply_dense(l, in, out);
      return;
    case LayerKind::Conv2D: {
      std::vector<int> os = l.output_shape(in_shape);
      apply_conv2d(l, in, in_shape[1], in_shape[2], out, os[1], os[2]);
      return;
    }
    case LayerKind::MaxPool2D: {
      std::vector<int> os = l.output_shape(in_shape);
      apply_maxpool(l, in, in_shape[0], in_shape[1], in_shape[2], out, os[1],
                    os[2]);
      return;
    }
    case LayerKind::BatchNorm: {
      int per_channel = int(shape_numel(in_shape)) / l.channels;
      apply_batchnorm(l, in, per_channel, out);
      return;
    }
    case LayerKind::ReLU:
      out.resize(in.size());
      for (size_t i = 0; i < in.size(); ++i) out[i] = relu_value(in[i]);
      return;
    case LayerKind::Sigmoid:
      out.resize(in.size());
      for (size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_value(in[i]);
      return;
    case LayerKind::Flatten:
      out = in;
      return;
  }
}

struct HookPoint {
  int tap_layer = -1;
  int index = 0;
  bool is_override = false;
  float delta = 0.0f;
  float override_value = 0.0f;
};

template <typename T>
void apply_hook_value(std::vector<T>& v, const HookPoint& h) {
  T& x = v[size_t(h.index)];
  x = h.is_override ? T(h.override_value) : x + T(h.delta);
}

// Runs the full network on one input, optionally retaining every layer
// output. acts[i] is the output of layer i.
template <typename T>
void forward_layers(const NetworkModel& model, std::span<const float> input,
                    const HookPoint* hook,
                    std::vector<std::vector<T>>& acts) {
  acts.assign(model.layers.size(), {});
  std::vector<T> cur(input.size());
  for (size_t i = 0; i < input.size(); ++i) cur[i] = T(input[i]);
  std::vector<int> shape = model.input_shape;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    apply_layer(model.layers[i], shape, cur, acts[i]);
    if (hook && hook->tap_layer == int(i)) apply_hook_value(acts[i], *hook);
    shape = model.layers[i].output_shape(shape);
    cur = acts[i];
  }
}

HookPoint resolve_hook(const NetworkModel& model, const InjectionHook& hook) {
  std::vector<Surface> surfaces = analysis_surfaces(model);
  const Surface& s = checked_surface(surfaces, hook.target);
  HookPoint h;
  h.tap_layer = s.tap_layer;
  h.index = hook.target.neuron_index;
  h.is_override = hook.is_override;
  h.delta = hook.delta;
  h.override_value = hook.override_value;
  return h;
}

int64_t check_batch(const NetworkModel& model, const Tensor& batch) {
  int64_t in_n = shape_numel(model.input_shape);
  if (batch.shape.size() != model.input_shape.size() + 1) {
    throw ShapeError("forward: batch shape " + batch.shape_str() +
                     " lacks a leading batch dimension over model input");
  }
  for (size_t i = 0; i < model.input_shape.size(); ++i) {
    if (batch.shape[i + 1] != model.input_shape[i]) {
      throw ShapeError("forward: batch shape " + batch.shape_str() +
                       " does not match model input shape");
    }
  }
  return in_n;
}

// Backward pass for d(sum of logit differences)/d(activations), double
// precision, from the last layer down to stop_layer (exclusive). acts holds
// the injected-state outputs of every layer.
std::vector<double> backward_to_layer(const NetworkModel& model,
                                      std::span<const float> input,
                                      const std::vector<std::vector<double>>& acts,
                                      std::vector<double> grad_out,
                                      int stop_layer) {
  std::vector<std::vector<int>> shapes = model.layer_shapes();
  for (int li = int(model.layers.size()) - 1; li > stop_layer; --li) {
    const LayerSpec& l = model.layers[size_t(li)];
    const std::vector<int>& in_shape =
        li == 0 ? model.input_shape : shapes[size_t(li - 1)];
    // Layer input values at the injected state.
    std::vector<double> in_vals;
    if (li == 0) {
      in_vals.assign(input.begin(), input.end());
    } else {
      in_vals = acts[size_t(li - 1)];
    }
    std::vector<double> grad_in(in_vals.size(), 0.0);
    switch (l.kind) {
      case LayerKind::Dense: {
        for (int k = 0; k < l.out_features; ++k) {
          double g = grad_out[size_t(k)];
          if (g == 0.0) continue;
          const float* w = l.weights.data() + size_t(k) * size_t(l.in_features);
          for (int i = 0; i < l.in_features; ++i) {
            grad_in[size_t(i)] += double(w[i]) * g;
          }
        }
        break;
      }
      case LayerKind::Conv2D: {
        std::vector<int> os = shapes[size_t(li)];
        int in_h = in_shape[1], in_w = in_shape[2];
        int out_h = os[1], out_w = os[2];
        for (int oc = 0; oc < l.out_channels; ++oc) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              double g = grad_out[(size_t(oc) * size_t(out_h) + size_t(oy)) *
                                      size_t(out_w) + size_t(ox)];
              if (g == 0.0) continue;
              for (int ic = 0; ic < l.in_channels; ++ic) {
                for (int ky = 0; ky < l.kernel; ++ky) {
                  int iy = oy * l.stride + ky - l.padding;
                  if (iy < 0 || iy >= in_h) continue;
                  for (int kx = 0; kx < l.kernel; ++kx) {
                    int ix = ox * l.stride + kx - l.padding;
                    if (ix < 0 || ix >= in_w) continue;
                    float w = l.weights[((size_t(oc) * size_t(l.in_channels) + size_t(ic)) *
                                             size_t(l.kernel) + size_t(ky)) * size_t(l.kernel) + size_t(kx)];
                    grad_in[(size_t(ic) * size_t(in_h) + size_t(iy)) * size_t(in_w) + size_t(ix)] +=
                        double(w) * g;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::MaxPool2D: {
        std::vector<int> os = shapes[size_t(li)];
        int ch = in_shape[0], in_h = in_shape[1], in_w = in_shape[2];
        int out_h = os[1], out_w = os[2];
        for (int c = 0; c < ch; ++c) {
          int base = c * in_h * in_w;
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              double g = grad_out[(size_t(c) * size_t(out_h) + size_t(oy)) *
                                      size_t(out_w) + size_t(ox)];
              if (g == 0.0) continue;
              // Route to the window element the forward max selected: the
              // first NaN if any, else the first index attaining the max.
              int sel = -1;
              bool first = true;
              double best = 0.0;
              for (int dy = 0; dy < l.kernel && sel < 0; ++dy) {
                for (int dx = 0; dx < l.kernel; ++dx) {
                  int iy = oy * l.stride + dy, ix = ox * l.stride + dx;
                  if (iy >= in_h || ix >= in_w) continue;
                  int idx = base + iy * in_w + ix;
                  double v = in_vals[size_t(idx)];
                  if (std::isnan(v)) {
                    sel = idx;
                    break;
                  }
                  if (first || v > best) {
                    best = v;
                    sel = idx;
                    first = false;
                  }
                }
              }
              if (sel >= 0) grad_in[size_t(sel)] += g;
            }
          }
        }
        break;
      }
      case LayerKind::BatchNorm: {
        int per_channel = int(in_vals.size()) / l.channels;
        for (int c = 0; c < l.channels; ++c) {
          double scale =
              double(l.bn_scale[size_t(c)]) / std::sqrt(double(l.bn_var[size_t(c)]));
          for (int i = 0; i < per_channel; ++i) {
            size_t idx = size_t(c) * size_t(per_channel) + size_t(i);
            grad_in[idx] = grad_out[idx] * scale;
          }
        }
        break;
      }
      case LayerKind::ReLU:
        for (size_t i = 0; i < in_vals.size(); ++i) {
          grad_in[i] = in_vals[i] > 0.0 ? grad_out[i] : 0.0;
        }
        break;
      case LayerKind::Sigmoid:
        for (size_t i = 0; i < in_vals.size(); ++i) {
          double y = acts[size_t(li)][i];
          grad_in[i] = y * (1.0 - y) * grad_out[i];
        }
        break;
      case LayerKind::Flatten:
        grad_in = grad_out;
        break;
    }
    grad_out = std::move(grad_in);
  }
  return grad_out;
}

}  // namespace

int golden_top_class(std::span<const float> logits) {
  if (logits.empty()) throw ShapeError("golden_top_class: empty logits");
  int best = -1;
  for (int i = 0; i < int(logits.size()); ++i) {
    if (std::isnan(logits[size_t(i)])) continue;
    if (best < 0 || logits[size_t(i)] > logits[size_t(best)]) best = i;
  }
  return best < 0 ? 0 : best;
}

int golden_top_class_f64(std::span<const double> logits) {
  if (logits.empty()) throw ShapeError("golden_top_class: empty logits");
  int best = -1;
  for (int i = 0; i < int(logits.size()); ++i) {
    if (std::isnan(logits[size_t(i)])) continue;
    if (best < 0 || logits[size_t(i)] > logits[size_t(best)]) best = i;
  }
  return best < 0 ? 0 : best;
}

double misclassification_loss_f64(std::span<const double> logits,
                                  int golden_top) {
  double top = logits[size_t(golden_top)];
  double s = 0.0;
  for (double v : logits) s += top - v;  // the i == t term contributes zero
  return 1.0 / (1.0 + std::exp(-s));
}

double misclassification_loss(std::span<const float> logits, int golden_top) {
  if (logits.empty()) throw ShapeError("misclassification_loss: empty logits");
  if (golden_top < 0 || golden_top >= int(logits.size())) {
    throw AddressingError("misclassification_loss: bad golden_top");
  }
  std::vector<double> wide(logits.begin(), logits.end());
  return misclassification_loss_f64(wide, golden_top);
}

ForwardResult forward(const NetworkModel& model, const Tensor& batch,
                      const InjectionHook* hook, bool retain) {
  int64_t in_n = check_batch(model, batch);
  int b = batch.shape[0];
  HookPoint hp;
  if (hook) hp = resolve_hook(model, *hook);

  ForwardResult result;
  result.logits = Tensor::zeros({b, model.num_classes});
  result.golden_top.resize(size_t(b));
  result.retained = retain;
  if (retain) result.per_layer_activations.resize(size_t(b));

  std::vector<std::vector<float>> acts;
  for (int j = 0; j < b; ++j) {
    std::span<const float> input(batch.values.data() + size_t(j) * size_t(in_n),
                                 size_t(in_n));
    forward_layers<float>(model, input, nullptr, acts);
    const std::vector<float>& golden_logits = acts.back();
    result.golden_top[size_t(j)] = golden_top_class(golden_logits);
    if (hook) {
      forward_layers<float>(model, input, &hp, acts);
    }
    const std::vector<float>& logits = acts.back();
    std::memcpy(result.logits.values.data() + size_t(j) * size_t(model.num_classes),
                logits.data(), sizeof(float) * size_t(model.num_classes));
    if (retain) result.per_layer_activations[size_t(j)] = acts;
  }
  return result;
}

std::vector<double> forward_logits_f64(const NetworkModel& model,
                                       std::span<const float> input,
                                       const InjectionHook* hook) {
  HookPoint hp;
  if (hook) hp = resolve_hook(model, *hook);
  std::vector<std::vector<double>> acts;
  forward_layers<double>(model, input, hook ? &hp : nullptr, acts);
  return acts.back();
}

std::vector<NeuronGradient> grad_wrt_neuron(const NetworkModel& model,
                                            const Tensor& batch,
                                            const InjectionHook& hook) {
  int64_t in_n = check_batch(model, batch);
  int b = batch.shape[0];
  HookPoint hp = resolve_hook(model, hook);
  int n = model.num_classes;

  std::vector<NeuronGradient> out(static_cast<size_t>(b));
  std::vector<std::vector<float>> golden_acts;
  std::vector<std::vector<double>> acts;
  for (int j = 0; j < b; ++j) {
    std::span<const float> input(batch.values.data() + size_t(j) * size_t(in_n),
                                 size_t(in_n));
    forward_layers<float>(model, input, nullptr, golden_acts);
    int t = golden_top_class(golden_acts.back());
    forward_layers<double>(model, input, &hp, acts);

    // Seed with d(sum)/d(logit): N-1 for the golden-top class, -1 otherwise.
    std::vector<double> seed(size_t(n), -1.0);
    seed[size_t(t)] = double(n - 1);
    std::vector<double> g =
        backward_to_layer(model, input, acts, std::move(seed), hp.tap_layer);

    double sum_grad = g[size_t(hp.index)];
    double s = 0.0;
    double top = acts.back()[size_t(t)];
    for (double v : acts.back()) s += top - v;
    double sig = 1.0 / (1.0 + std::exp(-s));
    NeuronGradient& ng = out[size_t(j)];
    ng.sum_grad = sum_grad;
    ng.loss_grad = sig * (1.0 - sig) * sum_grad;
    ng.undefined = !std::isfinite(sum_grad) || !std::isfinite(s);
  }
  return out;
}

}  // namespace vra
