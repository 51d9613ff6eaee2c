#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <unistd.h>
#include <filesystem>
#include <fstream>

#include "vra/dataset.hpp"
#include "vra/errors.hpp"
#include "vra/train.hpp"

using namespace vra;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("vra_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("idx round trip on a hand-written 4-image pair") {
  TempDir tmp;
  // 4 images of 2x2, pixel k of image i = 16*i + k scaled; include 255.
  Tensor images({4, 1, 2, 2},
                {0 / 255.0f,   16 / 255.0f,  32 / 255.0f,  48 / 255.0f,
                 64 / 255.0f,  80 / 255.0f,  96 / 255.0f,  112 / 255.0f,
                 128 / 255.0f, 144 / 255.0f, 160 / 255.0f, 176 / 255.0f,
                 192 / 255.0f, 208 / 255.0f, 224 / 255.0f, 255 / 255.0f});
  std::vector<int> labels{3, 1, 0, 2};
  save_idx_images(tmp.file("img.idx"), images);
  save_idx_labels(tmp.file("lab.idx"), labels);

  Dataset d = load_idx(tmp.file("img.idx"), tmp.file("lab.idx"));
  CHECK(d.data.shape == std::vector<int>{4, 1, 2, 2});
  CHECK(d.labels == labels);
  CHECK(d.num_classes == 4);
  for (size_t i = 0; i < images.values.size(); ++i) {
    CHECK(d.data.values[i] == images.values[i]);
  }
  CHECK(d.data.values.back() == 1.0f);  // byte 255 -> exactly 1.0
}

TEST_CASE("idx loader rejects malformed files") {
  TempDir tmp;
  Tensor images({2, 1, 2, 2}, std::vector<float>(8, 0.5f));
  save_idx_images(tmp.file("img.idx"), images);
  save_idx_labels(tmp.file("lab3.idx"), {0, 1, 1});
  CHECK_THROWS_WITH_AS(
      load_idx(tmp.file("img.idx"), tmp.file("lab3.idx")),
      doctest::Contains("image count 2 != label count 3"), FormatError);

  // Corrupt the image magic.
  {
    std::fstream f(tmp.file("img.idx"),
                   std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    char zero[4] = {0x13, 0x37, 0x13, 0x37};
    f.write(zero, 4);
  }
  save_idx_labels(tmp.file("lab.idx"), {0, 1});
  CHECK_THROWS_WITH_AS(load_idx(tmp.file("img.idx"), tmp.file("lab.idx")),
                       doctest::Contains("bad image magic"), FormatError);
}

TEST_CASE("synthetic blobs: determinism, separability, errors") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.input_dim = 2;
  spec.samples_per_class = 150;
  spec.cluster_separation = 10.0;
  spec.seed = 7;

  Dataset a = gen_synthetic(spec);
  Dataset b = gen_synthetic(spec);
  CHECK(a.data.values == b.data.values);
  CHECK(a.labels == b.labels);

  // Train-and-evaluate oracle: a linear classifier on separation-10 blobs
  // must exceed 99% accuracy.
  NetworkModel arch = make_mlp({2, 2}, false, {2});
  TrainConfig tc;
  tc.seed = 3;
  tc.epochs = 40;
  tc.learning_rate = 0.2;
  tc.batch_size = 16;
  TrainResult tr = train_fixture(init_weights(arch, 3), a, nullptr, tc);
  CHECK(tr.train_accuracy > 0.99);

  SyntheticSpec bad = spec;
  bad.samples_per_class = 0;
  CHECK_THROWS_AS(gen_synthetic(bad), ConfigError);

  // Same centers for a shifted sample stream (train/test consistency).
  SyntheticSpec test_spec = spec;
  test_spec.sample_offset = uint64_t(1) << 32;
  test_spec.samples_per_class = 100;
  Dataset held_out = gen_synthetic(test_spec);
  CHECK(evaluate_accuracy(tr.model, held_out) > 0.99);
}

TEST_CASE("three-class blobs sit on an equilateral triangle") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.input_dim = 2;
  spec.samples_per_class = 2000;
  spec.cluster_separation = 8.0;
  spec.seed = 21;
  Dataset d = gen_synthetic(spec);
  // Empirical class means approximate the centers; pairwise distances must
  // approach the configured separation.
  double mean[3][2] = {};
  int count[3] = {};
  for (int i = 0; i < d.size(); ++i) {
    int c = d.labels[size_t(i)];
    mean[c][0] += d.data.values[size_t(i) * 2];
    mean[c][1] += d.data.values[size_t(i) * 2 + 1];
    ++count[c];
  }
  for (int c = 0; c < 3; ++c) {
    mean[c][0] /= count[c];
    mean[c][1] /= count[c];
  }
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      double dx = mean[a][0] - mean[b][0], dy = mean[a][1] - mean[b][1];
      CHECK(std::sqrt(dx * dx + dy * dy) == doctest::Approx(8.0).epsilon(0.05));
    }
  }
}

TEST_CASE("digit glyphs: deterministic, quantized, balanced") {
  Dataset a = gen_digit_glyphs(100, 5);
  Dataset b = gen_digit_glyphs(100, 5);
  CHECK(a.data.values == b.data.values);
  CHECK(a.num_classes == 10);
  for (int i = 0; i < 100; ++i) CHECK(a.labels[size_t(i)] == i % 10);
  // Values are u8-quantized so an IDX round trip is exact.
  TempDir tmp;
  save_idx_images(tmp.file("img.idx"), a.data);
  save_idx_labels(tmp.file("lab.idx"), a.labels);
  Dataset c = load_idx(tmp.file("img.idx"), tmp.file("lab.idx"));
  CHECK(c.data.values == a.data.values);
}

TEST_CASE("manifest round trip and validation") {
  TempDir tmp;
  std::vector<int> idx{0, 5, 17, 3};
  save_manifest(tmp.file("set1.txt"), "dataset digits split train", idx);
  CHECK(load_manifest(tmp.file("set1.txt")) == idx);

  std::ofstream(tmp.file("bad.txt")) << "# only comments\n";
  CHECK_THROWS_AS(load_manifest(tmp.file("bad.txt")), FormatError);
  std::ofstream(tmp.file("junk.txt")) << "12\nnope\n";
  CHECK_THROWS_AS(load_manifest(tmp.file("junk.txt")), FormatError);
}

TEST_CASE("dataset directory loader (idx and synthetic)") {
  TempDir tmp;
  std::filesystem::create_directories(tmp.file("d"));
  Dataset glyphs = gen_digit_glyphs(20, 9);
  save_idx_images(tmp.file("d/train-images.idx"), glyphs.data);
  save_idx_labels(tmp.file("d/train-labels.idx"), glyphs.labels);
  save_idx_images(tmp.file("d/test-images.idx"), glyphs.data);
  save_idx_labels(tmp.file("d/test-labels.idx"), glyphs.labels);
  std::ofstream(tmp.file("d/dataset.json"))
      << R"({"id":"glyphs","kind":"idx","train_images":"train-images.idx",
           "train_labels":"train-labels.idx","test_images":"test-images.idx",
           "test_labels":"test-labels.idx","num_classes":10})";
  Dataset train = load_dataset_dir(tmp.file("d"), "train");
  CHECK(train.size() == 20);
  CHECK(train.num_classes == 10);

  std::filesystem::create_directories(tmp.file("s"));
  std::ofstream(tmp.file("s/dataset.json"))
      << R"({"id":"blobs","kind":"synthetic","num_classes":2,"input_dim":3,
           "samples_per_class":30,"test_samples_per_class":10,
           "cluster_separation":6.0,"seed":11})";
  Dataset strain = load_dataset_dir(tmp.file("s"), "train");
  Dataset stest = load_dataset_dir(tmp.file("s"), "test");
  CHECK(strain.size() == 60);
  CHECK(stest.size() == 20);
  CHECK(strain.data.values != stest.data.values);

  CHECK_THROWS_AS(load_dataset_dir(tmp.file("missing"), "train"), FormatError);
  CHECK_THROWS_AS(load_dataset_dir(tmp.file("s"), "dev"), ConfigError);
}
