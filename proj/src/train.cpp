#include "vra/train.hpp"

#include <cmath>
#include <cstring>

#include "vra/errors.hpp"
#include "vra/fast_engine.hpp"
#include "vra/forward.hpp"
#include "vra/parallel.hpp"
#include "vra/rng.hpp"

namespace vra {

NetworkModel init_weights(NetworkModel arch, uint64_t seed) {
  for (size_t li = 0; li < arch.layers.size(); ++li) {
    LayerSpec& l = arch.layers[li];
    if (l.kind != LayerKind::Dense && l.kind != LayerKind::Conv2D) continue;
    bool relu_next = li + 1 < arch.layers.size() &&
                     arch.layers[li + 1].kind == LayerKind::ReLU;
    int fan_in = l.kind == LayerKind::Dense
                     ? l.in_features
                     : l.in_channels * l.kernel * l.kernel;
    double std_dev = std::sqrt((relu_next ? 2.0 : 1.0) / double(fan_in));
    Rng rng(mix_seed(seed, 0x1417 + li));
    for (float& w : l.weights) w = float(std_dev * rng.next_gaussian());
    for (float& b : l.bias) b = 0.0f;
  }
  return arch;
}

namespace {

struct TrainScratch {
  // Per-layer activations for one sample and gradients flowing backwards.
  std::vector<std::vector<float>> acts;
  std::vector<float> grad_a, grad_b;
  // Per-layer weight/bias gradient accumulators.
  std::vector<std::vector<float>> gw, gb;
};

void forward_sample(const NetworkModel& m,
                    const std::vector<std::vector<int>>& shapes,
                    const float* input, TrainScratch& s) {
  std::vector<float> cur(input, input + shape_numel(m.input_shape));
  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerSpec& l = m.layers[li];
    const std::vector<int>& in_shape =
        li == 0 ? m.input_shape : shapes[li - 1];
    std::vector<float>& out = s.acts[li];
    switch (l.kind) {
      case LayerKind::Dense: {
        out.assign(size_t(l.out_features), 0.0f);
        for (int k = 0; k < l.out_features; ++k) {
          float acc = l.bias[size_t(k)];
          const float* w = l.weights.data() + size_t(k) * size_t(l.in_features);
          for (int i = 0; i < l.in_features; ++i) acc += w[i] * cur[size_t(i)];
          out[size_t(k)] = acc;
        }
        break;
      }
      case LayerKind::Conv2D: {
        const std::vector<int>& os = shapes[li];
        int in_h = in_shape[1], in_w = in_shape[2];
        int out_h = os[1], out_w = os[2];
        out.assign(size_t(l.out_channels) * size_t(out_h) * size_t(out_w), 0.0f);
        for (int oc = 0; oc < l.out_channels; ++oc) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              float acc = l.bias[size_t(oc)];
              for (int ic = 0; ic < l.in_channels; ++ic) {
                for (int ky = 0; ky < l.kernel; ++ky) {
                  int iy = oy * l.stride + ky - l.padding;
                  if (iy < 0 || iy >= in_h) continue;
                  for (int kx = 0; kx < l.kernel; ++kx) {
                    int ix = ox * l.stride + kx - l.padding;
                    if (ix < 0 || ix >= in_w) continue;
                    acc += l.weights[((size_t(oc) * size_t(l.in_channels) + size_t(ic)) *
                                          size_t(l.kernel) + size_t(ky)) * size_t(l.kernel) + size_t(kx)] *
                           cur[(size_t(ic) * size_t(in_h) + size_t(iy)) * size_t(in_w) + size_t(ix)];
                  }
                }
              }
              out[(size_t(oc) * size_t(out_h) + size_t(oy)) * size_t(out_w) + size_t(ox)] = acc;
            }
          }
        }
        break;
      }
      case LayerKind::MaxPool2D: {
        const std::vector<int>& os = shapes[li];
        int ch = in_shape[0], in_h = in_shape[1], in_w = in_shape[2];
        int out_h = os[1], out_w = os[2];
        out.assign(size_t(ch) * size_t(out_h) * size_t(out_w), 0.0f);
        for (int c = 0; c < ch; ++c) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              bool first = true;
              float best = 0.0f;
              for (int dy = 0; dy < l.kernel; ++dy) {
                for (int dx = 0; dx < l.kernel; ++dx) {
                  int iy = oy * l.stride + dy, ix = ox * l.stride + dx;
                  if (iy >= in_h || ix >= in_w) continue;
                  float v = cur[(size_t(c) * size_t(in_h) + size_t(iy)) * size_t(in_w) + size_t(ix)];
                  if (first || v > best) {
                    best = v;
                    first = false;
                  }
                }
              }
              out[(size_t(c) * size_t(out_h) + size_t(oy)) * size_t(out_w) + size_t(ox)] = best;
            }
          }
        }
        break;
      }
      case LayerKind::BatchNorm: {
        int per_channel = int(cur.size()) / l.channels;
        out.resize(cur.size());
        for (int c = 0; c < l.channels; ++c) {
          float inv_std = 1.0f / std::sqrt(l.bn_var[size_t(c)]);
          float scale = l.bn_scale[size_t(c)] * inv_std;
          float shift = l.bn_shift[size_t(c)] - l.bn_mean[size_t(c)] * scale;
          for (int i = 0; i < per_channel; ++i) {
            size_t idx = size_t(c) * size_t(per_channel) + size_t(i);
            out[idx] = cur[idx] * scale + shift;
          }
        }
        break;
      }
      case LayerKind::ReLU:
        out.resize(cur.size());
        for (size_t i = 0; i < cur.size(); ++i) out[i] = relu_value(cur[i]);
        break;
      case LayerKind::Sigmoid:
        out.resize(cur.size());
        for (size_t i = 0; i < cur.size(); ++i) out[i] = sigmoid_value(cur[i]);
        break;
      case LayerKind::Flatten:
        out = cur;
        break;
    }
    cur = out;
  }
}

// Backward for one sample; accumulates weight/bias grads, returns nothing.
// grad_a enters as d(loss)/d(logits).
void backward_sample(const NetworkModel& m,
                     const std::vector<std::vector<int>>& shapes,
                     const float* input, TrainScratch& s) {
  for (int li = int(m.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& l = m.layers[size_t(li)];
    const std::vector<int>& in_shape =
        li == 0 ? m.input_shape : shapes[size_t(li - 1)];
    const float* in_vals =
        li == 0 ? input : s.acts[size_t(li - 1)].data();
    size_t in_n = size_t(shape_numel(in_shape));
    std::vector<float>& g_out = s.grad_a;
    std::vector<float>& g_in = s.grad_b;
    g_in.assign(in_n, 0.0f);
    switch (l.kind) {
      case LayerKind::Dense: {
        std::vector<float>& gw = s.gw[size_t(li)];
        std::vector<float>& gb = s.gb[size_t(li)];
        for (int k = 0; k < l.out_features; ++k) {
          float g = g_out[size_t(k)];
          if (g == 0.0f) continue;
          gb[size_t(k)] += g;
          const float* w = l.weights.data() + size_t(k) * size_t(l.in_features);
          float* gwrow = gw.data() + size_t(k) * size_t(l.in_features);
          for (int i = 0; i < l.in_features; ++i) {
            gwrow[i] += g * in_vals[i];
            g_in[size_t(i)] += w[i] * g;
          }
        }
        break;
      }
      case LayerKind::Conv2D: {
        const std::vector<int>& os = shapes[size_t(li)];
        int in_h = in_shape[1], in_w = in_shape[2];
        int out_h = os[1], out_w = os[2];
        std::vector<float>& gw = s.gw[size_t(li)];
        std::vector<float>& gb = s.gb[size_t(li)];
        for (int oc = 0; oc < l.out_channels; ++oc) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              float g = g_out[(size_t(oc) * size_t(out_h) + size_t(oy)) * size_t(out_w) + size_t(ox)];
              if (g == 0.0f) continue;
              gb[size_t(oc)] += g;
              for (int ic = 0; ic < l.in_channels; ++ic) {
                for (int ky = 0; ky < l.kernel; ++ky) {
                  int iy = oy * l.stride + ky - l.padding;
                  if (iy < 0 || iy >= in_h) continue;
                  for (int kx = 0; kx < l.kernel; ++kx) {
                    int ix = ox * l.stride + kx - l.padding;
                    if (ix < 0 || ix >= in_w) continue;
                    size_t widx = ((size_t(oc) * size_t(l.in_channels) + size_t(ic)) *
                                       size_t(l.kernel) + size_t(ky)) * size_t(l.kernel) + size_t(kx);
                    size_t iidx = (size_t(ic) * size_t(in_h) + size_t(iy)) * size_t(in_w) + size_t(ix);
                    gw[widx] += g * in_vals[iidx];
                    g_in[iidx] += l.weights[widx] * g;
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::MaxPool2D: {
        const std::vector<int>& os = shapes[size_t(li)];
        int ch = in_shape[0], in_h = in_shape[1], in_w = in_shape[2];
        int out_h = os[1], out_w = os[2];
        for (int c = 0; c < ch; ++c) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              float g = g_out[(size_t(c) * size_t(out_h) + size_t(oy)) * size_t(out_w) + size_t(ox)];
              if (g == 0.0f) continue;
              int sel = -1;
              bool first = true;
              float best = 0.0f;
              for (int dy = 0; dy < l.kernel; ++dy) {
                for (int dx = 0; dx < l.kernel; ++dx) {
                  int iy = oy * l.stride + dy, ix = ox * l.stride + dx;
                  if (iy >= in_h || ix >= in_w) continue;
                  int idx = (c * in_h + iy) * in_w + ix;
                  float v = in_vals[idx];
                  if (first || v > best) {
                    best = v;
                    sel = idx;
                    first = false;
                  }
                }
              }
              if (sel >= 0) g_in[size_t(sel)] += g;
            }
          }
        }
        break;
      }
      case LayerKind::BatchNorm: {
        int per_channel = int(in_n) / l.channels;
        for (int c = 0; c < l.channels; ++c) {
          float scale = l.bn_scale[size_t(c)] / std::sqrt(l.bn_var[size_t(c)]);
          for (int i = 0; i < per_channel; ++i) {
            size_t idx = size_t(c) * size_t(per_channel) + size_t(i);
            g_in[idx] = g_out[idx] * scale;
          }
        }
        break;
      }
      case LayerKind::ReLU:
        for (size_t i = 0; i < in_n; ++i) {
          g_in[i] = in_vals[i] > 0.0f ? g_out[i] : 0.0f;
        }
        break;
      case LayerKind::Sigmoid:
        for (size_t i = 0; i < in_n; ++i) {
          float y = s.acts[size_t(li)][i];
          g_in[i] = y * (1.0f - y) * g_out[i];
        }
        break;
      case LayerKind::Flatten:
        g_in.assign(g_out.begin(), g_out.end());
        break;
    }
    std::swap(s.grad_a, s.grad_b);
  }
}

}  // namespace

double evaluate_accuracy(const NetworkModel& model, const Dataset& data) {
  GoldenCache cache = GoldenCache::build(model, data.data, {}, default_workers());
  int correct = 0;
  for (int i = 0; i < data.size(); ++i) {
    if (cache.golden_top[size_t(i)] == data.labels[size_t(i)]) ++correct;
  }
  return data.size() == 0 ? 0.0 : double(correct) / double(data.size());
}

TrainResult train_fixture(const NetworkModel& arch, const Dataset& train,
                          const Dataset* test, const TrainConfig& cfg) {
  TrainResult result;
  result.model = arch;
  NetworkModel& m = result.model;
  m.validate();
  if (train.size() == 0) throw TrainingError("train_fixture: empty dataset");
  if (cfg.batch_size <= 0) throw TrainingError("train_fixture: bad batch size");

  std::vector<std::vector<int>> shapes = m.layer_shapes();
  int64_t in_n = shape_numel(m.input_shape);
  if (train.sample_numel() != in_n) {
    throw ShapeError("train_fixture: dataset sample size does not match model");
  }
  int n_cls = m.num_classes;

  TrainScratch s;
  s.acts.resize(m.layers.size());
  s.gw.resize(m.layers.size());
  s.gb.resize(m.layers.size());
  for (size_t li = 0; li < m.layers.size(); ++li) {
    s.gw[li].assign(m.layers[li].weights.size(), 0.0f);
    s.gb[li].assign(m.layers[li].bias.size(), 0.0f);
  }

  std::vector<int> order(static_cast<size_t>(train.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5bff1e + uint64_t(epoch)));
    for (int i = int(order.size()) - 1; i > 0; --i) {
      int r = int(shuffle_rng.next_below(uint64_t(i + 1)));
      std::swap(order[size_t(i)], order[size_t(r)]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < train.size(); start += cfg.batch_size) {
      int end = std::min(train.size(), start + cfg.batch_size);
      int bs = end - start;
      for (size_t li = 0; li < m.layers.size(); ++li) {
        std::fill(s.gw[li].begin(), s.gw[li].end(), 0.0f);
        std::fill(s.gb[li].begin(), s.gb[li].end(), 0.0f);
      }
      for (int bi = start; bi < end; ++bi) {
        int row = order[size_t(bi)];
        const float* x = train.data.values.data() + size_t(row) * size_t(in_n);
        forward_sample(m, shapes, x, s);
        const std::vector<float>& logits = s.acts.back();
        // Softmax cross-entropy gradient: p - onehot.
        float mx = logits[0];
        for (float v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        for (float v : logits) denom += std::exp(double(v) - double(mx));
        int label = train.labels[size_t(row)];
        double logp = double(logits[size_t(label)]) - double(mx) - std::log(denom);
        epoch_loss -= logp;
        s.grad_a.assign(size_t(n_cls), 0.0f);
        for (int c = 0; c < n_cls; ++c) {
          double p = std::exp(double(logits[size_t(c)]) - double(mx)) / denom;
          s.grad_a[size_t(c)] = float((p - (c == label ? 1.0 : 0.0)) / double(bs));
        }
        backward_sample(m, shapes, x, s);
      }
      float lr = float(cfg.learning_rate);
      for (size_t li = 0; li < m.layers.size(); ++li) {
        LayerSpec& l = m.layers[li];
        for (size_t wi = 0; wi < l.weights.size(); ++wi) {
          l.weights[wi] -= lr * s.gw[li][wi];
        }
        for (size_t bi2 = 0; bi2 < l.bias.size(); ++bi2) {
          l.bias[bi2] -= lr * s.gb[li][bi2];
        }
      }
      ++batches;
    }
    if (!std::isfinite(epoch_loss)) {
      throw TrainingError("train_fixture: diverged (non-finite loss) at epoch " +
                          std::to_string(epoch));
    }
  }

  result.train_accuracy = evaluate_accuracy(m, train);
  if (test) result.test_accuracy = evaluate_accuracy(m, *test);
  return result;
}

NetworkModel make_mlp(const std::vector<int>& dims, bool use_sigmoid,
                      const std::vector<int>& input_shape) {
  NetworkModel m;
  m.input_shape = input_shape;
  m.num_classes = dims.back();
  if (shape_numel(input_shape) != dims.front()) {
    throw ShapeError("make_mlp: input shape does not match first dim");
  }
  if (input_shape.size() > 1) m.layers.push_back(LayerSpec::flatten());
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    m.layers.push_back(LayerSpec::dense(dims[i], dims[i + 1]));
    if (i + 2 < dims.size()) {
      m.layers.push_back(use_sigmoid ? LayerSpec::sigmoid() : LayerSpec::relu());
    }
  }
  return m;
}

NetworkModel make_lenet() {
  NetworkModel m;
  m.input_shape = {1, 28, 28};
  m.num_classes = 10;
  m.layers.push_back(LayerSpec::conv2d(1, 6, 5));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::maxpool2d(2));
  m.layers.push_back(LayerSpec::conv2d(6, 12, 5));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::maxpool2d(2));
  m.layers.push_back(LayerSpec::flatten());
  m.layers.push_back(LayerSpec::dense(192, 48));
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(LayerSpec::dense(48, 10));
  return m;
}

}  // namespace vra
