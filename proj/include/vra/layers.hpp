#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vra/tensor.hpp"

namespace vra {

enum class LayerKind { Dense, Conv2D, MaxPool2D, BatchNorm, ReLU, Sigmoid, Flatten };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

// One layer of a feed-forward classifier. A single struct with kind-specific
// fields keeps serialization and shape checking in one place.
struct LayerSpec {
  LayerKind kind = LayerKind::Dense;

  // Dense
  int in_features = 0;
  int out_features = 0;

  // Conv2D / MaxPool2D
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;

  // BatchNorm (inference mode, fixed statistics, per channel)
  int channels = 0;

  std::vector<float> weights;  // Dense: [out,in]; Conv2D: [out,in,k,k]
  std::vector<float> bias;     // Dense/Conv2D: [out]
  std::vector<float> bn_scale, bn_shift, bn_mean, bn_var;

  static LayerSpec dense(int in, int out);
  static LayerSpec conv2d(int in_ch, int out_ch, int kernel, int stride = 1,
                          int padding = 0);
  static LayerSpec maxpool2d(int kernel, int stride = 0);  // stride 0 -> kernel
  static LayerSpec batchnorm(int channels);
  static LayerSpec relu();
  static LayerSpec sigmoid();
  static LayerSpec flatten();

  // Output shape for a given input shape; throws ShapeError on mismatch.
  std::vector<int> output_shape(const std::vector<int>& in_shape) const;
  // Number of learnable parameters (weights + bias).
  int64_t param_count() const;
};

struct NetworkModel {
  std::vector<LayerSpec> layers;
  std::vector<int> input_shape;
  int num_classes = 0;

  // Checks shape chaining, parameter sizes, BatchNorm variance positivity and
  // that the final layer emits [num_classes]. Throws ShapeError.
  void validate() const;
  std::vector<std::vector<int>> layer_shapes() const;  // output shape per layer
};

// Identifies one scalar neuron output eligible for analysis. layer_index
// addresses the list returned by analysis_surfaces(), not the raw layer list.
struct NeuronRef {
  int layer_index = 0;
  int neuron_index = 0;
};

// A neuron-output surface: the value of a Dense/Conv2D output after the
// activation that immediately follows it (if any). tap_layer is the raw layer
// whose output carries the surface values.
struct Surface {
  int owner_layer = 0;  // the Dense/Conv2D layer
  int tap_layer = 0;    // owner, or owner+1 when ReLU/Sigmoid follows
  int size = 0;
  std::vector<int> shape;
  bool is_output = false;  // tap is the final layer (logits surface)
};

std::vector<Surface> analysis_surfaces(const NetworkModel& model);

// Validates a NeuronRef against the surface list; throws AddressingError.
const Surface& checked_surface(const std::vector<Surface>& surfaces,
                               const NeuronRef& ref);

// Additive perturbation (delta) or absolute replacement (override) of one
// neuron output; exactly one injection is active per forward execution.
struct InjectionHook {
  NeuronRef target;
  bool is_override = false;
  float delta = 0.0f;
  float override_value = 0.0f;

  static InjectionHook add(NeuronRef t, float d) {
    InjectionHook h;
    h.target = t;
    h.delta = d;
    return h;
  }
  static InjectionHook replace(NeuronRef t, float v) {
    InjectionHook h;
    h.target = t;
    h.is_override = true;
    h.override_value = v;
    return h;
  }
};

}  // namespace vra
