#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vra/tensor.hpp"

namespace vra {

// An in-memory labeled dataset. Images are normalized to [0,1] at load time.
struct Dataset {
  std::string id;
  Tensor data;              // [n, ...sample shape]
  std::vector<int> labels;  // in [0, num_classes)
  int num_classes = 0;

  int size() const { return data.shape.empty() ? 0 : data.shape[0]; }
  int64_t sample_numel() const {
    return size() == 0 ? 0 : data.numel() / size();
  }
};

// IDX (MNIST-convention) readers/writers: big-endian dimension fields, magic
// 0x00000803 for ubyte images, 0x00000801 for ubyte labels. Pixels are
// normalized by 1/255 on read.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx_images(const std::string& path, const Tensor& images01);
void save_idx_labels(const std::string& path, const std::vector<int>& labels);

// Gaussian-blob classification data. Class centers sit on a regular simplex
// with pairwise distance cluster_separation (requires num_classes <=
// input_dim + 1); blob covariance is the identity. Deterministic given seed.
struct SyntheticSpec {
  int num_classes = 2;
  int input_dim = 2;
  int samples_per_class = 100;
  double cluster_separation = 6.0;
  uint64_t seed = 1;
  // Offsets the per-sample noise stream while keeping the class centers
  // fixed; used to carve disjoint train/test splits of one distribution.
  uint64_t sample_offset = 0;
};

Dataset gen_synthetic(const SyntheticSpec& spec);

// Deterministic 28x28 10-class glyph dataset standing in for handwritten
// digits in offline runs: fixed per-class stroke patterns with random shift,
// intensity and pixel noise. Returned with values in [0,1].
Dataset gen_digit_glyphs(int count, uint64_t seed);

// Plain-text index manifests ('#' comments, one index per line).
void save_manifest(const std::string& path, const std::string& comment,
                   const std::vector<int>& indices);
std::vector<int> load_manifest(const std::string& path);

// A dataset directory: dataset.json describing either an IDX file pair per
// split or a synthetic spec; loads the requested split ("train" or "test").
Dataset load_dataset_dir(const std::string& dir, const std::string& split);

}  // namespace vra
