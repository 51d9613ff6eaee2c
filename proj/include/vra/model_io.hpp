#pragma once

#include <cstdint>
#include <string>

#include "vra/layers.hpp"

namespace vra {

// Training provenance recorded in the model-file header.
struct ModelMeta {
  uint64_t seed = 0;
  std::string dataset_id;
  double train_accuracy = -1.0;
  double test_accuracy = -1.0;
  int epochs = 0;
  double learning_rate = 0.0;
};

// Model file: "VRMF" magic, u32 LE format version, u64 LE header length, a
// JSON header (layer specs, shapes, class count, metadata, payload layout),
// then a contiguous little-endian float32 payload. Per-layer byte segments
// recorded in the header must exactly tile the payload; load(save(m))
// reproduces weights bit-exactly.
void save_model(const NetworkModel& model, const ModelMeta& meta,
                const std::string& path);

struct LoadedModel {
  NetworkModel model;
  ModelMeta meta;
};

LoadedModel load_model(const std::string& path);

}  // namespace vra
