#pragma once

#include <cstdint>

#include "vra/dataset.hpp"
#include "vra/layers.hpp"

namespace vra {

struct TrainConfig {
  uint64_t seed = 1;
  int epochs = 10;
  double learning_rate = 0.1;
  int batch_size = 32;
};

struct TrainResult {
  NetworkModel model;
  double train_accuracy = 0.0;
  double test_accuracy = -1.0;
};

// Seeded He/Xavier initialization of all Dense/Conv weights (architecture
// fields are taken from arch as-is).
NetworkModel init_weights(NetworkModel arch, uint64_t seed);

// Plain mini-batch SGD with softmax cross-entropy on the logits. Training is
// single-threaded and bit-deterministic for a given seed. epochs == 0 returns
// the initialized model untouched. Throws TrainingError (with the epoch
// index) if the loss diverges to NaN.
TrainResult train_fixture(const NetworkModel& arch, const Dataset& train,
                          const Dataset* test, const TrainConfig& cfg);

// Classification accuracy of the golden network on a dataset.
double evaluate_accuracy(const NetworkModel& model, const Dataset& data);

// Fixture architectures.
NetworkModel make_mlp(const std::vector<int>& dims, bool use_sigmoid,
                      const std::vector<int>& input_shape);
NetworkModel make_lenet();

}  // namespace vra
