#include "vra/fast_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "vra/errors.hpp"
#include "vra/parallel.hpp"

namespace vra {

namespace {

// Full single-input forward retaining every layer output (float).
void forward_retain(const NetworkModel& model, std::span<const float> input,
                    std::vector<std::vector<float>>& acts) {
  acts.assign(model.layers.size(), {});
  std::vector<float> cur(input.begin(), input.end());
  std::vector<int> shape = model.input_shape;
  for (size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    std::vector<int> out_shape = l.output_shape(shape);
    std::vector<float>& out = acts[i];
    switch (l.kind) {
      case LayerKind::Dense: {
        out.assign(size_t(l.out_features), 0.0f);
        for (int k = 0; k < l.out_features; ++k) {
          float acc = l.bias[size_t(k)];
          const float* w = l.weights.data() + size_t(k) * size_t(l.in_features);
          for (int j = 0; j < l.in_features; ++j) acc += w[j] * cur[size_t(j)];
          out[size_t(k)] = acc;
        }
        break;
      }
      case LayerKind::Conv2D: {
        int in_h = shape[1], in_w = shape[2];
        int out_h = out_shape[1], out_w = out_shape[2];
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
        int ch = shape[0], in_h = shape[1], in_w = shape[2];
        int out_h = out_shape[1], out_w = out_shape[2];
        out.assign(size_t(ch) * size_t(out_h) * size_t(out_w), 0.0f);
        for (int c = 0; c < ch; ++c) {
          for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
              bool first = true;
              float best = 0.0f;
              for (int dy = 0; dy < l.kernel && !(std::isnan(best)); ++dy) {
                for (int dx = 0; dx < l.kernel; ++dx) {
                  int iy = oy * l.stride + dy, ix = ox * l.stride + dx;
                  if (iy >= in_h || ix >= in_w) continue;
                  float v = cur[(size_t(c) * size_t(in_h) + size_t(iy)) * size_t(in_w) + size_t(ix)];
                  if (std::isnan(v)) {
                    best = v;
                    break;
                  }
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
        int per_channel = int(shape_numel(shape)) / l.channels;
        out.resize(cur.size());
        for (int c = 0; c < l.channels; ++c) {
          float inv_std = 1.0f / std::sqrt(l.bn_var[size_t(c)]);
          float scale = l.bn_scale[size_t(c)] * inv_std;
          float shift = l.bn_shift[size_t(c)] - l.bn_mean[size_t(c)] * scale;
          for (int j = 0; j < per_channel; ++j) {
            size_t idx = size_t(c) * size_t(per_channel) + size_t(j);
            out[idx] = cur[idx] * scale + shift;
          }
        }
        break;
      }
      case LayerKind::ReLU:
        out.resize(cur.size());
        for (size_t j = 0; j < cur.size(); ++j) out[j] = relu_value(cur[j]);
        break;
      case LayerKind::Sigmoid:
        out.resize(cur.size());
        for (size_t j = 0; j < cur.size(); ++j) out[j] = sigmoid_value(cur[j]);
        break;
      case LayerKind::Flatten:
        out = cur;
        break;
    }
    cur = out;
    shape = std::move(out_shape);
  }
}

}  // namespace

GoldenCache GoldenCache::build(const NetworkModel& model, const Tensor& data,
                               const std::vector<int>& indices, int workers) {
  model.validate();
  int64_t in_n = shape_numel(model.input_shape);
  if (data.shape.empty() || shape_numel(std::vector<int>(data.shape.begin() + 1, data.shape.end())) != in_n) {
    throw ShapeError("golden cache: data shape " + data.shape_str() +
                     " does not match model input");
  }
  std::vector<int> rows = indices;
  if (rows.empty()) {
    rows.resize(size_t(data.shape[0]));
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = int(i);
  }
  for (int r : rows) {
    if (r < 0 || r >= data.shape[0]) {
      throw AddressingError("golden cache: dataset index " + std::to_string(r) +
                            " out of range");
    }
  }

  GoldenCache cache;
  cache.model = &model;
  cache.surfaces = analysis_surfaces(model);
  cache.shapes = model.layer_shapes();
  int b = int(rows.size());
  int n = model.num_classes;
  cache.acts.resize(size_t(b));
  cache.inputs.resize(size_t(b));
  cache.golden_logits.assign(size_t(b) * size_t(n), 0.0f);
  cache.golden_top.assign(size_t(b), 0);
  cache.golden_margin.assign(size_t(b), 0.0f);

  parallel_for(size_t(b), workers, [&](size_t j) {
    const float* src = data.values.data() + size_t(rows[j]) * size_t(in_n);
    cache.inputs[j].assign(src, src + in_n);
    forward_retain(model, cache.inputs[j], cache.acts[j]);
    const std::vector<float>& logits = cache.acts[j].back();
    std::memcpy(cache.golden_logits.data() + j * size_t(n), logits.data(),
                sizeof(float) * size_t(n));
    int t = golden_top_class(logits);
    cache.golden_top[j] = t;
    bool first = true;
    float other = 0.0f;
    for (int i = 0; i < n; ++i) {
      if (i == t) continue;
      if (first || logits[size_t(i)] > other) {
        other = logits[size_t(i)];
        first = false;
      }
    }
    cache.golden_margin[j] = logits[size_t(t)] - other;
  });
  return cache;
}

InjectionEngine::InjectionEngine(const GoldenCache& cache) : cache_(cache) {
  size_t max_n = shape_numel(cache.model->input_shape);
  for (const auto& s : cache.shapes) {
    max_n = std::max(max_n, size_t(shape_numel(s)));
  }
  cur_.resize(max_n);
  next_.resize(max_n);
  logits_scratch_.resize(size_t(cache.model->num_classes));
  logit_tangent_.resize(size_t(cache.model->num_classes));
}

void InjectionEngine::propagate(int input_idx, int from_layer,
                                bool want_tangent) {
  const NetworkModel& m = *cache_.model;
  const auto& acts = cache_.acts[size_t(input_idx)];
  int num_layers = int(m.layers.size());

  for (int li = from_layer + 1; li < num_layers && !cur_.idx.empty(); ++li) {
    const LayerSpec& l = m.layers[size_t(li)];
    const std::vector<float>& gin = acts[size_t(li - 1)];
    const std::vector<float>& gout = acts[size_t(li)];
    const std::vector<int>& in_shape = cache_.shapes[size_t(li - 1)];
    next_.begin();

    switch (l.kind) {
      case LayerKind::Dense: {
        for (int i : cur_.idx) {
          float dv = cur_.a[size_t(i)] - gin[size_t(i)];
          float tv = cur_.b[size_t(i)];
          for (int k = 0; k < l.out_features; ++k) {
            float w = l.weights[size_t(k) * size_t(l.in_features) + size_t(i)];
            next_.touch(k);
            next_.a[size_t(k)] += w * dv;
            if (want_tangent) next_.b[size_t(k)] += w * tv;
          }
        }
        for (int k : next_.idx) next_.a[size_t(k)] += gout[size_t(k)];
        break;
      }
      case LayerKind::Conv2D: {
        int in_h = in_shape[1], in_w = in_shape[2];
        const std::vector<int>& os = cache_.shapes[size_t(li)];
        int out_h = os[1], out_w = os[2];
        for (int i : cur_.idx) {
          int ic = i / (in_h * in_w);
          int rem = i - ic * in_h * in_w;
          int iy = rem / in_w, ix = rem - (rem / in_w) * in_w;
          float dv = cur_.a[size_t(i)] - gin[size_t(i)];
          float tv = cur_.b[size_t(i)];
          for (int ky = 0; ky < l.kernel; ++ky) {
            int num = iy + l.padding - ky;
            if (num < 0 || num % l.stride != 0) continue;
            int oy = num / l.stride;
            if (oy >= out_h) continue;
            for (int kx = 0; kx < l.kernel; ++kx) {
              int numx = ix + l.padding - kx;
              if (numx < 0 || numx % l.stride != 0) continue;
              int ox = numx / l.stride;
              if (ox >= out_w) continue;
              for (int oc = 0; oc < l.out_channels; ++oc) {
                float w = l.weights[((size_t(oc) * size_t(l.in_channels) + size_t(ic)) *
                                         size_t(l.kernel) + size_t(ky)) * size_t(l.kernel) + size_t(kx)];
                int o = (oc * out_h + oy) * out_w + ox;
                next_.touch(o);
                next_.a[size_t(o)] += w * dv;
                if (want_tangent) next_.b[size_t(o)] += w * tv;
              }
            }
          }
        }
        for (int k : next_.idx) next_.a[size_t(k)] += gout[size_t(k)];
        break;
      }
      case LayerKind::MaxPool2D: {
        int in_h = in_shape[1], in_w = in_shape[2];
        const std::vector<int>& os = cache_.shapes[size_t(li)];
        int out_h = os[1], out_w = os[2];
        // Mark affected windows.
        for (int i : cur_.idx) {
          int c = i / (in_h * in_w);
          int rem = i - c * in_h * in_w;
          int iy = rem / in_w, ix = rem - (rem / in_w) * in_w;
          int oy_lo = iy - l.kernel + 1 <= 0 ? 0 : (iy - l.kernel + 1 + l.stride - 1) / l.stride;
          int oy_hi = std::min(out_h - 1, iy / l.stride);
          int ox_lo = ix - l.kernel + 1 <= 0 ? 0 : (ix - l.kernel + 1 + l.stride - 1) / l.stride;
          int ox_hi = std::min(out_w - 1, ix / l.stride);
          for (int oy = oy_lo; oy <= oy_hi; ++oy) {
            for (int ox = ox_lo; ox <= ox_hi; ++ox) {
              next_.touch((c * out_h + oy) * out_w + ox);
            }
          }
        }
        // Recompute each affected window with updated inputs; same selection
        // rule as the full engine (first NaN wins, else first strict max).
        for (int o : next_.idx) {
          int c = o / (out_h * out_w);
          int rem = o - c * out_h * out_w;
          int oy = rem / out_w, ox = rem - (rem / out_w) * out_w;
          bool first = true;
          float best = 0.0f;
          float best_t = 0.0f;
          bool done = false;
          for (int dy = 0; dy < l.kernel && !done; ++dy) {
            for (int dx = 0; dx < l.kernel; ++dx) {
              int iy = oy * l.stride + dy, ix2 = ox * l.stride + dx;
              if (iy >= in_h || ix2 >= in_w) continue;
              int ii = (c * in_h + iy) * in_w + ix2;
              bool upd = cur_.marked(ii);
              float v = upd ? cur_.a[size_t(ii)] : gin[size_t(ii)];
              if (std::isnan(v)) {
                best = v;
                best_t = v;  // undefined selection: mark tangent as NaN too
                done = true;
                break;
              }
              if (first || v > best) {
                best = v;
                best_t = upd ? cur_.b[size_t(ii)] : 0.0f;
                first = false;
              }
            }
          }
          next_.a[size_t(o)] = best;
          next_.b[size_t(o)] = best_t;
        }
        break;
      }
      case LayerKind::BatchNorm: {
        int per_channel = int(gin.size()) / l.channels;
        for (int i : cur_.idx) {
          int c = i / per_channel;
          float inv_std = 1.0f / std::sqrt(l.bn_var[size_t(c)]);
          float scale = l.bn_scale[size_t(c)] * inv_std;
          float shift = l.bn_shift[size_t(c)] - l.bn_mean[size_t(c)] * scale;
          next_.touch(i);
          next_.a[size_t(i)] = cur_.a[size_t(i)] * scale + shift;
          next_.b[size_t(i)] = cur_.b[size_t(i)] * scale;
        }
        break;
      }
      case LayerKind::ReLU: {
        for (int i : cur_.idx) {
          float v = cur_.a[size_t(i)];
          next_.touch(i);
          next_.a[size_t(i)] = relu_value(v);
          next_.b[size_t(i)] =
              std::isnan(v) ? v : (v > 0.0f ? cur_.b[size_t(i)] : 0.0f);
        }
        break;
      }
      case LayerKind::Sigmoid: {
        for (int i : cur_.idx) {
          float y = sigmoid_value(cur_.a[size_t(i)]);
          next_.touch(i);
          next_.a[size_t(i)] = y;
          next_.b[size_t(i)] = y * (1.0f - y) * cur_.b[size_t(i)];
        }
        break;
      }
      case LayerKind::Flatten: {
        for (int i : cur_.idx) {
          next_.touch(i);
          next_.a[size_t(i)] = cur_.a[size_t(i)];
          next_.b[size_t(i)] = cur_.b[size_t(i)];
        }
        break;
      }
    }

    // Drop wavefront entries that settled back to the golden value with no
    // surviving tangent; masked faults die out here.
    size_t kept = 0;
    for (size_t p = 0; p < next_.idx.size(); ++p) {
      int i = next_.idx[p];
      float v = next_.a[size_t(i)];
      if (v != gout[size_t(i)] || next_.b[size_t(i)] != 0.0f || std::isnan(v)) {
        next_.idx[kept++] = i;
      }
    }
    next_.idx.resize(kept);
    std::swap(cur_, next_);
  }
}

ProbeOutcome InjectionEngine::run(int input_idx, int surface_idx, int neuron,
                                  bool is_override, float value,
                                  bool want_tangent) {
  ++probes_;
  const Surface& s = cache_.surfaces[size_t(surface_idx)];
  float golden = cache_.activation(input_idx, surface_idx, neuron);
  float injected = is_override ? value : golden + value;

  ProbeOutcome out;
  int t = cache_.golden_top[size_t(input_idx)];
  int n = cache_.num_classes();
  const float* gl = cache_.golden_logits.data() + size_t(input_idx) * size_t(n);
  if (injected == golden && !want_tangent) {
    std::memcpy(logits_scratch_.data(), gl, sizeof(float) * size_t(n));
    out.top = t;
    out.misclassified = false;
    out.margin = cache_.golden_margin[size_t(input_idx)];
    return out;
  }

  cur_.begin();
  cur_.touch(neuron);
  cur_.a[size_t(neuron)] = injected;
  cur_.b[size_t(neuron)] = 1.0f;
  propagate(input_idx, s.tap_layer, want_tangent);

  std::memcpy(logits_scratch_.data(), gl, sizeof(float) * size_t(n));
  std::fill(logit_tangent_.begin(), logit_tangent_.end(), 0.0f);
  bool any_nan = false;
  for (int i : cur_.idx) {
    logits_scratch_[size_t(i)] = cur_.a[size_t(i)];
    logit_tangent_[size_t(i)] = cur_.b[size_t(i)];
  }
  for (int i = 0; i < n; ++i) {
    if (std::isnan(logits_scratch_[size_t(i)])) any_nan = true;
  }

  out.top = golden_top_class(logits_scratch_);
  out.misclassified = out.top != t;
  if (any_nan) {
    out.margin = std::numeric_limits<float>::quiet_NaN();
  } else {
    bool first = true;
    float other = 0.0f;
    for (int i = 0; i < n; ++i) {
      if (i == t) continue;
      if (first || logits_scratch_[size_t(i)] > other) {
        other = logits_scratch_[size_t(i)];
        first = false;
      }
    }
    out.margin = logits_scratch_[size_t(t)] - other;
  }
  if (want_tangent) {
    float sum = 0.0f;
    for (int i = 0; i < n; ++i) sum += logit_tangent_[size_t(i)];
    out.tangent = float(n) * logit_tangent_[size_t(t)] - sum;
    out.tangent_undefined = !std::isfinite(out.tangent) || any_nan;
  }
  return out;
}

std::vector<float> InjectionEngine::injected_logits(int input_idx,
                                                    int surface_idx, int neuron,
                                                    bool is_override,
                                                    float value) {
  run(input_idx, surface_idx, neuron, is_override, value, false);
  return logits_scratch_;
}

}  // namespace vra
