#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vra/forward.hpp"
#include "vra/layers.hpp"
#include "vra/tensor.hpp"

namespace vra {

// Golden (fault-free) activations for a set of inputs, retained layer by
// layer. Immutable after build; shared read-only across workers. Holds a
// pointer to the model, which must outlive the cache.
struct GoldenCache {
  const NetworkModel* model = nullptr;
  std::vector<Surface> surfaces;
  std::vector<std::vector<int>> shapes;  // output shape per layer
  std::vector<std::vector<std::vector<float>>> acts;  // [input][layer][flat]
  std::vector<std::vector<float>> inputs;             // raw model inputs
  std::vector<float> golden_logits;                   // [input*N]
  std::vector<int> golden_top;
  std::vector<float> golden_margin;  // top logit minus best other logit

  int count() const { return int(inputs.size()); }
  int num_classes() const { return model->num_classes; }

  float activation(int input_idx, int surface_idx, int neuron) const {
    return acts[size_t(input_idx)][size_t(surfaces[size_t(surface_idx)].tap_layer)]
               [size_t(neuron)];
  }

  // indices selects rows of data ([n, ...input_shape]); empty = all rows.
  static GoldenCache build(const NetworkModel& model, const Tensor& data,
                           const std::vector<int>& indices, int workers);
};

struct ProbeOutcome {
  int top = 0;
  bool misclassified = false;
  float margin = 0.0f;   // NaN when any injected logit is NaN
  float tangent = 0.0f;  // d(summed logit differences)/d(neuron), if requested
  bool tangent_undefined = false;
};

// Event-driven injected forward: starting from the cached golden activations,
// propagates only the wavefront of values that the injection actually
// changes. Orders of magnitude cheaper than a full forward for conv nets.
// One instance per worker thread (owns scratch buffers).
class InjectionEngine {
 public:
  explicit InjectionEngine(const GoldenCache& cache);

  // value is a delta (is_override=false) or a replacement (is_override=true).
  ProbeOutcome run(int input_idx, int surface_idx, int neuron,
                   bool is_override, float value, bool want_tangent);

  // Injected logits for one probe (diagnostics and equivalence tests).
  std::vector<float> injected_logits(int input_idx, int surface_idx,
                                     int neuron, bool is_override, float value);

  uint64_t probes_executed() const { return probes_; }
  const GoldenCache& cache() const { return cache_; }

 private:
  struct Plane {
    std::vector<int> mark;
    std::vector<float> a;  // value or delta accumulator
    std::vector<float> b;  // tangent accumulator
    std::vector<int> idx;
    int epoch = 0;

    void resize(size_t n) {
      mark.assign(n, 0);
      a.resize(n);
      b.resize(n);
    }
    void begin() {
      ++epoch;
      idx.clear();
    }
    bool marked(int i) const { return mark[size_t(i)] == epoch; }
    void touch(int i) {
      if (mark[size_t(i)] != epoch) {
        mark[size_t(i)] = epoch;
        a[size_t(i)] = 0.0f;
        b[size_t(i)] = 0.0f;
        idx.push_back(i);
      }
    }
  };

  const GoldenCache& cache_;
  Plane cur_, next_;
  std::vector<float> logits_scratch_;
  std::vector<float> logit_tangent_;
  uint64_t probes_ = 0;

  void propagate(int input_idx, int from_layer, bool want_tangent);
};

}  // namespace vra
