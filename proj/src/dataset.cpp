#include "vra/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "vra/errors.hpp"
#include "vra/rng.hpp"

namespace vra {

namespace {

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

uint32_t read_u32_be(std::istream& in, const std::string& what) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("idx: truncated " + what);
  return (uint32_t(b[0]) << 24) | (uint32_t(b[1]) << 16) |
         (uint32_t(b[2]) << 8) | uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, uint32_t v) {
  uint8_t b[4] = {uint8_t(v >> 24), uint8_t(v >> 16), uint8_t(v >> 8),
                  uint8_t(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw FormatError("load_idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw FormatError("load_idx: cannot open " + labels_path);

  uint32_t magic = read_u32_be(img, "image magic");
  if (magic != kImagesMagic) {
    throw FormatError("load_idx: bad image magic in " + images_path);
  }
  uint32_t n = read_u32_be(img, "image count");
  uint32_t h = read_u32_be(img, "image rows");
  uint32_t w = read_u32_be(img, "image cols");

  uint32_t lmagic = read_u32_be(lab, "label magic");
  if (lmagic != kLabelsMagic) {
    throw FormatError("load_idx: bad label magic in " + labels_path);
  }
  uint32_t ln = read_u32_be(lab, "label count");
  if (n != ln) {
    throw FormatError("load_idx: image count " + std::to_string(n) +
                      " != label count " + std::to_string(ln));
  }
  if (n == 0 || h == 0 || w == 0) throw FormatError("load_idx: empty dataset");

  std::vector<uint8_t> pix(size_t(n) * size_t(h) * size_t(w));
  img.read(reinterpret_cast<char*>(pix.data()), std::streamsize(pix.size()));
  if (size_t(img.gcount()) != pix.size()) {
    throw FormatError("load_idx: truncated image payload in " + images_path);
  }
  std::vector<uint8_t> raw_labels(static_cast<size_t>(n));
  lab.read(reinterpret_cast<char*>(raw_labels.data()), std::streamsize(n));
  if (size_t(lab.gcount()) != size_t(n)) {
    throw FormatError("load_idx: truncated label payload in " + labels_path);
  }

  Dataset d;
  d.data = Tensor::zeros({int(n), 1, int(h), int(w)});
  for (size_t i = 0; i < pix.size(); ++i) {
    d.data.values[i] = float(pix[i]) / 255.0f;
  }
  d.labels.resize(size_t(n));
  int max_label = 0;
  for (size_t i = 0; i < size_t(n); ++i) {
    d.labels[i] = int(raw_labels[i]);
    max_label = std::max(max_label, d.labels[i]);
  }
  d.num_classes = max_label + 1;
  return d;
}

void save_idx_images(const std::string& path, const Tensor& images01) {
  if (images01.shape.size() != 4 && images01.shape.size() != 3) {
    throw ShapeError("save_idx_images: expected [n,1,h,w] or [n,h,w]");
  }
  int n = images01.shape[0];
  int h = images01.shape[images01.shape.size() - 2];
  int w = images01.shape[images01.shape.size() - 1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_idx_images: cannot open " + path);
  write_u32_be(out, kImagesMagic);
  write_u32_be(out, uint32_t(n));
  write_u32_be(out, uint32_t(h));
  write_u32_be(out, uint32_t(w));
  std::vector<uint8_t> bytes(images01.values.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, images01.values[i]));
    bytes[i] = uint8_t(std::lround(v * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
}

void save_idx_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_idx_labels: cannot open " + path);
  write_u32_be(out, kLabelsMagic);
  write_u32_be(out, uint32_t(labels.size()));
  for (int l : labels) {
    if (l < 0 || l > 255) throw FormatError("save_idx_labels: label out of range");
    uint8_t b = uint8_t(l);
    out.write(reinterpret_cast<const char*>(&b), 1);
  }
}

namespace {

// Class centers on a regular simplex with pairwise distance `sep`, then a
// seed-derived axis permutation and sign pattern (an isometry, so distances
// are preserved while centers still depend on the seed).
std::vector<std::vector<double>> simplex_centers(int k, int d, double sep,
                                                 uint64_t seed) {
  std::vector<std::vector<double>> centers(size_t(k), std::vector<double>(size_t(d), 0.0));
  if (k <= d) {
    double a = sep / std::sqrt(2.0);
    for (int c = 0; c < k; ++c) centers[size_t(c)][size_t(c)] = a;
  } else if (k == d + 1) {
    // Vertices e_i of the standard simplex in R^k, centered, then expressed
    // in an orthonormal basis of the sum-zero hyperplane (Helmert basis).
    // Their pairwise distance is sqrt(2), so scale by sep/sqrt(2).
    double scale = sep / std::sqrt(2.0);
    for (int c = 0; c < k; ++c) {
      for (int j = 0; j < d; ++j) {
        int m = j + 1;  // Helmert row m has m leading entries and one -m entry
        double norm = std::sqrt(double(m) * double(m + 1));
        double comp;
        if (c < m) {
          comp = 1.0 / norm;
        } else if (c == m) {
          comp = -double(m) / norm;
        } else {
          comp = 0.0;
        }
        centers[size_t(c)][size_t(j)] = comp * scale;
      }
    }
  } else {
    // More classes than simplex vertices: deterministic random directions.
    for (int c = 0; c < k; ++c) {
      Rng rng(mix_seed(seed, 0x5eedc0de + uint64_t(c)));
      double norm2 = 0.0;
      std::vector<double> v(static_cast<size_t>(d));
      for (int j = 0; j < d; ++j) {
        v[size_t(j)] = rng.next_gaussian();
        norm2 += v[size_t(j)] * v[size_t(j)];
      }
      double inv = sep / std::sqrt(norm2 == 0.0 ? 1.0 : norm2);
      for (int j = 0; j < d; ++j) centers[size_t(c)][size_t(j)] = v[size_t(j)] * inv;
    }
  }

  // Seed-derived isometry: permute axes and flip signs.
  Rng rng(mix_seed(seed, 0xa11ce));
  std::vector<int> perm(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) perm[size_t(j)] = j;
  for (int j = d - 1; j > 0; --j) {
    int r = int(rng.next_below(uint64_t(j + 1)));
    std::swap(perm[size_t(j)], perm[size_t(r)]);
  }
  std::vector<double> sign(static_cast<size_t>(d));
  for (int j = 0; j < d; ++j) sign[size_t(j)] = rng.next_below(2) ? -1.0 : 1.0;
  for (auto& c : centers) {
    std::vector<double> out(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) out[size_t(j)] = sign[size_t(j)] * c[size_t(perm[size_t(j)])];
    c = std::move(out);
  }
  return centers;
}

}  // namespace

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("gen_synthetic: num_classes < 2");
  if (spec.input_dim < 1) throw ConfigError("gen_synthetic: input_dim < 1");
  if (spec.samples_per_class <= 0) {
    throw ConfigError("gen_synthetic: samples_per_class must be positive");
  }
  int k = spec.num_classes, d = spec.input_dim;
  auto centers = simplex_centers(k, d, spec.cluster_separation, spec.seed);

  int n = k * spec.samples_per_class;
  Dataset out;
  out.id = "synthetic";
  out.num_classes = k;
  out.data = Tensor::zeros({n, d});
  out.labels.resize(size_t(n));
  for (int s = 0; s < n; ++s) {
    int c = s % k;  // interleaved so mini-batches stay mixed
    out.labels[size_t(s)] = c;
    Rng rng(mix_seed(spec.seed, 0xb10b5 + spec.sample_offset + uint64_t(s)));
    for (int j = 0; j < d; ++j) {
      double v = centers[size_t(c)][size_t(j)] + rng.next_gaussian();
      out.data.values[size_t(s) * size_t(d) + size_t(j)] = float(v);
    }
  }
  return out;
}

namespace {

// 7x7 stroke patterns for the ten glyph classes, upscaled x4 to 28x28.
const char* const kGlyphs[10][7] = {
    {".#####.", "#.....#", "#.....#", "#.....#", "#.....#", "#.....#", ".#####."},
    {"...#...", "..##...", "...#...", "...#...", "...#...", "...#...", "..###.."},
    {".#####.", "#.....#", "......#", "..###..", ".#.....", "#......", "#######"},
    {".#####.", "......#", "......#", "..####.", "......#", "......#", ".#####."},
    {"....##.", "...#.#.", "..#..#.", ".#...#.", "#######", ".....#.", ".....#."},
    {"#######", "#......", "#......", "######.", "......#", "......#", "######."},
    {".#####.", "#......", "#......", "######.", "#.....#", "#.....#", ".#####."},
    {"#######", "......#", ".....#.", "....#..", "...#...", "..#....", "..#...."},
    {".#####.", "#.....#", "#.....#", ".#####.", "#.....#", "#.....#", ".#####."},
    {".#####.", "#.....#", "#.....#", ".######", "......#", "......#", ".#####."},
};

}  // namespace

Dataset gen_digit_glyphs(int count, uint64_t seed) {
  if (count <= 0) throw ConfigError("gen_digit_glyphs: count must be positive");
  const int side = 28, cell = 4, grid = 7;
  Dataset out;
  out.id = "digits";
  out.num_classes = 10;
  out.data = Tensor::zeros({count, 1, side, side});
  out.labels.resize(size_t(count));

  for (int s = 0; s < count; ++s) {
    int cls = s % 10;
    out.labels[size_t(s)] = cls;
    Rng rng(mix_seed(seed, 0xd161755 + uint64_t(s)));
    int dx = int(rng.next_below(5)) - 2;
    int dy = int(rng.next_below(5)) - 2;
    double ink = 0.55 + 0.45 * rng.next_unit();
    float* img = out.data.values.data() + size_t(s) * size_t(side) * size_t(side);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        int gy = y - dy, gx = x - dx;
        bool on = false;
        if (gy >= 0 && gy < grid * cell && gx >= 0 && gx < grid * cell) {
          on = kGlyphs[cls][gy / cell][gx / cell] == '#';
        }
        double v = on ? ink : 0.0;
        v += 0.18 * rng.next_gaussian();
        v = std::min(1.0, std::max(0.0, v));
        // Quantize to u8 so in-memory data matches an IDX round trip exactly.
        img[y * side + x] = float(std::lround(v * 255.0)) / 255.0f;
      }
    }
  }
  return out;
}

void save_manifest(const std::string& path, const std::string& comment,
                   const std::vector<int>& indices) {
  std::ofstream out(path);
  if (!out) throw FormatError("save_manifest: cannot open " + path);
  if (!comment.empty()) out << "# " << comment << "\n";
  for (int i : indices) out << i << "\n";
}

std::vector<int> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("load_manifest: cannot open " + path);
  std::vector<int> out;
  std::string line;
  while (std::getline(in, line)) {
    size_t pos = line.find_first_not_of(" \t\r");
    if (pos == std::string::npos || line[pos] == '#') continue;
    try {
      out.push_back(std::stoi(line));
    } catch (const std::exception&) {
      throw FormatError("load_manifest: bad index line '" + line + "' in " + path);
    }
  }
  if (out.empty()) throw FormatError("load_manifest: no indices in " + path);
  return out;
}

Dataset load_dataset_dir(const std::string& dir, const std::string& split) {
  std::string json_path = dir + "/dataset.json";
  std::ifstream in(json_path);
  if (!in) throw FormatError("load_dataset_dir: cannot open " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError("load_dataset_dir: bad json in " + json_path + ": " + e.what());
  }
  std::string kind = j.value("kind", "");
  if (split != "train" && split != "test") {
    throw ConfigError("load_dataset_dir: split must be train|test");
  }
  if (kind == "idx") {
    std::string img = j.at(split + "_images").get<std::string>();
    std::string lab = j.at(split + "_labels").get<std::string>();
    Dataset d = load_idx(dir + "/" + img, dir + "/" + lab);
    d.id = j.value("id", "idx");
    if (j.contains("num_classes")) d.num_classes = j["num_classes"].get<int>();
    return d;
  }
  if (kind == "synthetic") {
    SyntheticSpec spec;
    spec.num_classes = j.at("num_classes").get<int>();
    spec.input_dim = j.at("input_dim").get<int>();
    spec.cluster_separation = j.at("cluster_separation").get<double>();
    spec.seed = j.at("seed").get<uint64_t>();
    if (split == "train") {
      spec.samples_per_class = j.at("samples_per_class").get<int>();
    } else {
      spec.samples_per_class = j.value("test_samples_per_class", 0);
      if (spec.samples_per_class <= 0) {
        spec.samples_per_class = std::max(1, j.at("samples_per_class").get<int>() / 4);
      }
      // Same centers, disjoint sample stream.
      spec.sample_offset = uint64_t(1) << 32;
    }
    Dataset d = gen_synthetic(spec);
    d.id = j.value("id", "synthetic");
    return d;
  }
  throw FormatError("load_dataset_dir: unknown dataset kind '" + kind + "'");
}

}  // namespace vra
