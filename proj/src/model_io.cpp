#include "vra/model_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "vra/errors.hpp"

namespace vra {

namespace {

constexpr char kMagic[4] = {'V', 'R', 'M', 'F'};
constexpr uint32_t kFormatVersion = 1;

using Json = nlohmann::json;

void append_f32_le(std::vector<uint8_t>& out, const std::vector<float>& v) {
  for (float f : v) {
    uint32_t bits = std::bit_cast<uint32_t>(f);
    out.push_back(uint8_t(bits));
    out.push_back(uint8_t(bits >> 8));
    out.push_back(uint8_t(bits >> 16));
    out.push_back(uint8_t(bits >> 24));
  }
}

std::vector<float> read_f32_le(const std::vector<uint8_t>& payload,
                               uint64_t offset, uint64_t length,
                               const std::string& what, size_t layer) {
  if (length % 4 != 0 || offset % 4 != 0) {
    throw FormatError("load_model: misaligned segment for " + what +
                      " at layer " + std::to_string(layer));
  }
  if (offset + length < offset || offset + length > payload.size()) {
    throw FormatError("load_model: truncated payload at layer " +
                      std::to_string(layer) + " (" + what + ")");
  }
  std::vector<float> out(length / 4);
  for (size_t i = 0; i < out.size(); ++i) {
    const uint8_t* p = payload.data() + offset + 4 * i;
    uint32_t bits = uint32_t(p[0]) | (uint32_t(p[1]) << 8) |
                    (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

struct FieldRef {
  const char* name;
  std::vector<float> LayerSpec::* member;
};

constexpr FieldRef kFields[] = {
    {"weights", &LayerSpec::weights},   {"bias", &LayerSpec::bias},
    {"bn_scale", &LayerSpec::bn_scale}, {"bn_shift", &LayerSpec::bn_shift},
    {"bn_mean", &LayerSpec::bn_mean},   {"bn_var", &LayerSpec::bn_var},
};

Json layer_to_json(const LayerSpec& l, std::vector<uint8_t>& payload) {
  Json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::Dense:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      break;
    case LayerKind::Conv2D:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::MaxPool2D:
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      break;
    case LayerKind::BatchNorm:
      j["channels"] = l.channels;
      break;
    default:
      break;
  }
  Json segs = Json::object();
  for (const FieldRef& f : kFields) {
    const std::vector<float>& v = l.*(f.member);
    if (v.empty()) continue;
    segs[f.name] = {payload.size(), v.size() * 4};
    append_f32_le(payload, v);
  }
  if (!segs.empty()) j["segments"] = segs;
  return j;
}

LayerSpec layer_from_json(const Json& j, const std::vector<uint8_t>& payload,
                          size_t layer_idx) {
  LayerSpec l;
  l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
  switch (l.kind) {
    case LayerKind::Dense:
      l.in_features = j.at("in_features").get<int>();
      l.out_features = j.at("out_features").get<int>();
      break;
    case LayerKind::Conv2D:
      l.in_channels = j.at("in_channels").get<int>();
      l.out_channels = j.at("out_channels").get<int>();
      l.kernel = j.at("kernel").get<int>();
      l.stride = j.at("stride").get<int>();
      l.padding = j.at("padding").get<int>();
      break;
    case LayerKind::MaxPool2D:
      l.kernel = j.at("kernel").get<int>();
      l.stride = j.at("stride").get<int>();
      break;
    case LayerKind::BatchNorm:
      l.channels = j.at("channels").get<int>();
      break;
    default:
      break;
  }
  if (j.contains("segments")) {
    for (const FieldRef& f : kFields) {
      if (!j["segments"].contains(f.name)) continue;
      const Json& seg = j["segments"][f.name];
      if (!seg.is_array() || seg.size() != 2) {
        throw FormatError("load_model: bad segment for " + std::string(f.name) +
                          " at layer " + std::to_string(layer_idx));
      }
      l.*(f.member) = read_f32_le(payload, seg[0].get<uint64_t>(),
                                  seg[1].get<uint64_t>(), f.name, layer_idx);
    }
  }
  return l;
}

}  // namespace

void save_model(const NetworkModel& model, const ModelMeta& meta,
                const std::string& path) {
  model.validate();
  std::vector<uint8_t> payload;
  Json header;
  header["format_version"] = kFormatVersion;
  header["input_shape"] = model.input_shape;
  header["num_classes"] = model.num_classes;
  Json layers = Json::array();
  for (const LayerSpec& l : model.layers) {
    layers.push_back(layer_to_json(l, payload));
  }
  header["layers"] = std::move(layers);
  header["payload_bytes"] = payload.size();
  Json m;
  m["seed"] = meta.seed;
  m["dataset"] = meta.dataset_id;
  m["train_accuracy"] = meta.train_accuracy;
  m["test_accuracy"] = meta.test_accuracy;
  m["epochs"] = meta.epochs;
  m["learning_rate"] = meta.learning_rate;
  header["metadata"] = std::move(m);

  std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_model: cannot open " + path);
  out.write(kMagic, 4);
  uint32_t ver = kFormatVersion;
  uint8_t ver_le[4] = {uint8_t(ver), uint8_t(ver >> 8), uint8_t(ver >> 16),
                       uint8_t(ver >> 24)};
  out.write(reinterpret_cast<const char*>(ver_le), 4);
  uint64_t hlen = header_str.size();
  uint8_t hlen_le[8];
  for (int i = 0; i < 8; ++i) hlen_le[i] = uint8_t(hlen >> (8 * i));
  out.write(reinterpret_cast<const char*>(hlen_le), 8);
  out.write(header_str.data(), std::streamsize(header_str.size()));
  out.write(reinterpret_cast<const char*>(payload.data()),
            std::streamsize(payload.size()));
  if (!out) throw FormatError("save_model: write failed for " + path);
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_model: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("load_model: bad magic in " + path);
  }
  uint8_t ver_le[4];
  in.read(reinterpret_cast<char*>(ver_le), 4);
  if (!in) throw FormatError("load_model: truncated version field");
  uint32_t ver = uint32_t(ver_le[0]) | (uint32_t(ver_le[1]) << 8) |
                 (uint32_t(ver_le[2]) << 16) | (uint32_t(ver_le[3]) << 24);
  if (ver != kFormatVersion) {
    throw FormatError("load_model: unsupported format version " +
                      std::to_string(ver));
  }
  uint8_t hlen_le[8];
  in.read(reinterpret_cast<char*>(hlen_le), 8);
  if (!in) throw FormatError("load_model: truncated header length");
  uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) hlen |= uint64_t(hlen_le[i]) << (8 * i);
  if (hlen > (uint64_t(1) << 30)) {
    throw FormatError("load_model: implausible header length");
  }
  std::string header_str(size_t(hlen), '\0');
  in.read(header_str.data(), std::streamsize(hlen));
  if (size_t(in.gcount()) != hlen) {
    throw FormatError("load_model: truncated header");
  }
  Json header;
  try {
    header = Json::parse(header_str);
  } catch (const std::exception& e) {
    throw FormatError(std::string("load_model: corrupt header: ") + e.what());
  }

  std::vector<uint8_t> payload((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
  uint64_t declared = header.value("payload_bytes", uint64_t(payload.size()));
  if (declared != payload.size()) {
    // Identify the first layer whose segment falls outside the actual bytes.
    size_t at_layer = 0;
    if (header.contains("layers")) {
      for (size_t i = 0; i < header["layers"].size(); ++i) {
        const Json& lj = header["layers"][i];
        if (!lj.contains("segments")) continue;
        for (auto& [name, seg] : lj["segments"].items()) {
          uint64_t end = seg[0].get<uint64_t>() + seg[1].get<uint64_t>();
          if (end > payload.size()) {
            at_layer = i;
            throw FormatError("load_model: truncated payload at layer " +
                              std::to_string(at_layer) + " (" + name + ")");
          }
        }
      }
    }
    throw FormatError("load_model: payload is " +
                      std::to_string(payload.size()) + " bytes, header says " +
                      std::to_string(declared));
  }

  LoadedModel lm;
  try {
    lm.model.input_shape = header.at("input_shape").get<std::vector<int>>();
    lm.model.num_classes = header.at("num_classes").get<int>();
    uint64_t covered = 0;
    std::vector<std::pair<uint64_t, uint64_t>> segments;
    for (size_t i = 0; i < header.at("layers").size(); ++i) {
      lm.model.layers.push_back(
          layer_from_json(header["layers"][i], payload, i));
      const Json& lj = header["layers"][i];
      if (lj.contains("segments")) {
        for (auto& [name, seg] : lj["segments"].items()) {
          segments.emplace_back(seg[0].get<uint64_t>(), seg[1].get<uint64_t>());
          covered += seg[1].get<uint64_t>();
        }
      }
    }
    // Segments must exactly tile the payload: no gaps, no overlaps.
    std::sort(segments.begin(), segments.end());
    uint64_t cursor = 0;
    for (auto& [off, len] : segments) {
      if (off != cursor) {
        throw FormatError("load_model: payload layout gap/overlap at offset " +
                          std::to_string(off));
      }
      cursor = off + len;
    }
    if (cursor != payload.size() || covered != payload.size()) {
      throw FormatError("load_model: segments cover " + std::to_string(cursor) +
                        " of " + std::to_string(payload.size()) +
                        " payload bytes");
    }
    const Json& m = header.at("metadata");
    lm.meta.seed = m.value("seed", uint64_t(0));
    lm.meta.dataset_id = m.value("dataset", std::string());
    lm.meta.train_accuracy = m.value("train_accuracy", -1.0);
    lm.meta.test_accuracy = m.value("test_accuracy", -1.0);
    lm.meta.epochs = m.value("epochs", 0);
    lm.meta.learning_rate = m.value("learning_rate", 0.0);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("load_model: corrupt header field: ") +
                      e.what());
  }
  try {
    lm.model.validate();
  } catch (const ShapeError& e) {
    throw FormatError(std::string("load_model: inconsistent model: ") +
                      e.what());
  }
  return lm;
}

}  // namespace vra
