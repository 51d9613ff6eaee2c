#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "vra/layers.hpp"
#include "vra/tensor.hpp"

namespace vra {

// Scalar activation helpers shared by every execution engine so that
// reference, shadow and event-driven paths agree bit-for-bit on element ops.
// relu is written as (x < 0 ? 0 : x) so NaN propagates.
template <typename T>
inline T relu_value(T x) {
  return x < T(0) ? T(0) : x;
}

template <typename T>
inline T sigmoid_value(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

struct ForwardResult {
  Tensor logits;                // [B, N]; injected outputs when a hook is set
  std::vector<int> golden_top;  // per input, from the uninjected pass
  // Retained when requested: per input, per layer output (injected state).
  std::vector<std::vector<std::vector<float>>> per_layer_activations;
  bool retained = false;
};

// Argmax with ties broken toward the lowest index. NaN entries are never
// selected; if every entry is NaN, returns 0. Throws ShapeError when empty.
int golden_top_class(std::span<const float> logits);
int golden_top_class_f64(std::span<const double> logits);

// Eq-style misclassification loss: sigmoid of the summed differences between
// the golden-top logit and every logit (the i == t term contributes zero).
// Computed in double; NaN logits yield a NaN (flagged) loss.
double misclassification_loss(std::span<const float> logits, int golden_top);
double misclassification_loss_f64(std::span<const double> logits, int golden_top);

// Reference batched forward. batch has shape [B, ...input_shape]. When hook
// is present, the target neuron's output is perturbed for every input right
// after the surface value is produced; Inf/NaN then propagate per IEEE-754.
ForwardResult forward(const NetworkModel& model, const Tensor& batch,
                      const InjectionHook* hook = nullptr, bool retain = false);

// Double-precision shadow execution of one input (weights widened on the
// fly). Used by the gradient path and by finite-difference oracles, which
// need a smooth function with negligible rounding noise.
std::vector<double> forward_logits_f64(const NetworkModel& model,
                                       std::span<const float> input,
                                       const InjectionHook* hook = nullptr);

struct NeuronGradient {
  double loss_grad = 0.0;  // dL/d(neuron output) at the injected state
  double sum_grad = 0.0;   // d(summed logit differences)/d(neuron output)
  bool undefined = false;  // NaN/Inf met in the downstream path
};

// Reverse-mode gradient of the misclassification loss with respect to the
// target neuron's post-injection output, one entry per input. Only layers
// downstream of the target participate. The sigmoid factor is applied last,
// in double, so sum_grad == 0.0 exactly identifies dead propagation paths
// (no saturation artifacts).
std::vector<NeuronGradient> grad_wrt_neuron(const NetworkModel& model,
                                            const Tensor& batch,
                                            const InjectionHook& hook);

}  // namespace vra
