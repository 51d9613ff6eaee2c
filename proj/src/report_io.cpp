#include "vra/report_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "vra/errors.hpp"

namespace vra {

namespace {

using Json = nlohmann::json;

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') {
    out.back().pop_back();
  }
  return out;
}

std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw FormatError(std::string(what) + ": cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream out(path);
  if (!out) throw FormatError(std::string(what) + ": cannot open " + path);
  return out;
}

void expect_header(std::ifstream& in, const std::string& expected,
                   const std::string& path) {
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("csv: empty file " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) {
    throw FormatError("csv: unexpected header in " + path + ": '" + line + "'");
  }
}

int parse_int(const std::string& s, const std::string& path) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError("csv: bad integer '" + s + "' in " + path);
  }
  return v;
}

}  // namespace

std::string fmt_f32(float v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string fmt_f64(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

float parse_f32(const std::string& s) {
  float v = 0.0f;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError("bad float '" + s + "'");
  }
  return v;
}

double parse_f64(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw FormatError("bad float '" + s + "'");
  }
  return v;
}

namespace {

constexpr const char* kRangesHeader =
    "layer,neuron,r_lower,r_upper,vv_lower,vv_upper,case,zero_grad_pos,"
    "zero_grad_neg,decision";

ScreenDecision decision_from_name(const std::string& s) {
  if (s == "skip") return ScreenDecision::Skip;
  if (s == "full") return ScreenDecision::FullAnalysis;
  if (s == "semi") return ScreenDecision::SemiAnalysis;
  throw FormatError("unknown screen decision '" + s + "'");
}

}  // namespace

void write_ranges_csv(
    const std::string& path,
    const std::vector<std::vector<NeuronVulnerability>>& ranges) {
  std::ofstream out = open_out(path, "write_ranges_csv");
  out << kRangesHeader << "\n";
  for (size_t s = 0; s < ranges.size(); ++s) {
    for (const NeuronVulnerability& nv : ranges[s]) {
      out << s << ',' << nv.neuron.neuron_index << ',' << fmt_f32(nv.r_lower)
          << ',' << fmt_f32(nv.r_upper) << ',' << fmt_f32(nv.vv_lower) << ','
          << fmt_f32(nv.vv_upper) << ',' << side_case_name(nv.range_case.neg_side)
          << '/' << side_case_name(nv.range_case.pos_side) << ','
          << fmt_f32(nv.zero_grad_pos) << ',' << fmt_f32(nv.zero_grad_neg)
          << ',' << screen_decision_name(nv.decision) << "\n";
    }
  }
}

std::vector<std::vector<NeuronVulnerability>> read_ranges_csv(
    const std::string& path) {
  std::ifstream in = open_in(path, "read_ranges_csv");
  expect_header(in, kRangesHeader, path);
  std::vector<std::vector<NeuronVulnerability>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 10) {
      throw FormatError("read_ranges_csv: bad record in " + path + ": " + line);
    }
    NeuronVulnerability nv;
    int layer = parse_int(f[0], path);
    nv.neuron.layer_index = layer;
    nv.neuron.neuron_index = parse_int(f[1], path);
    nv.r_lower = parse_f32(f[2]);
    nv.r_upper = parse_f32(f[3]);
    nv.vv_lower = parse_f32(f[4]);
    nv.vv_upper = parse_f32(f[5]);
    size_t slash = f[6].find('/');
    if (slash == std::string::npos) {
      throw FormatError("read_ranges_csv: bad case '" + f[6] + "'");
    }
    nv.range_case.neg_side = side_case_from_name(f[6].substr(0, slash));
    nv.range_case.pos_side = side_case_from_name(f[6].substr(slash + 1));
    nv.zero_grad_pos = parse_f32(f[7]);
    nv.zero_grad_neg = parse_f32(f[8]);
    nv.decision = decision_from_name(f[9]);
    if (layer < 0) throw FormatError("read_ranges_csv: negative layer");
    if (size_t(layer) >= out.size()) out.resize(size_t(layer) + 1);
    if (int(out[size_t(layer)].size()) != nv.neuron.neuron_index) {
      throw FormatError("read_ranges_csv: non-contiguous neuron indices in " +
                        path);
    }
    out[size_t(layer)].push_back(nv);
  }
  return out;
}

void write_lvf_csv(const std::string& path, const VulnerabilityFactors& vf) {
  std::ofstream out = open_out(path, "write_lvf_csv");
  out << "layer,lvf_pct\n";
  for (size_t s = 0; s < vf.surfaces.size(); ++s) {
    out << vf.surfaces[s].surface << ',' << fmt_f64(vf.lvf_pct(s)) << "\n";
  }
}

std::vector<std::pair<int, double>> read_lvf_csv(const std::string& path) {
  std::ifstream in = open_in(path, "read_lvf_csv");
  expect_header(in, "layer,lvf_pct", path);
  std::vector<std::pair<int, double>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 2) throw FormatError("read_lvf_csv: bad record " + line);
    out.emplace_back(parse_int(f[0], path), parse_f64(f[1]));
  }
  return out;
}

void write_nvf_csv(const std::string& path, const VulnerabilityFactors& vf) {
  std::ofstream out = open_out(path, "write_nvf_csv");
  out << "layer,neuron,nvf_pct,vulnerable_bits,semi_bits\n";
  for (size_t s = 0; s < vf.surfaces.size(); ++s) {
    const SurfaceFactors& sf = vf.surfaces[s];
    for (size_t n = 0; n < sf.neurons.size(); ++n) {
      out << sf.surface << ',' << n << ',' << fmt_f64(vf.nvf_pct(s, n)) << ','
          << sf.neurons[n].vulnerable_bits << ',' << sf.neurons[n].semi_bits
          << "\n";
    }
  }
}

void write_bvf_csv(const std::string& path, const VulnerabilityFactors& vf) {
  std::ofstream out = open_out(path, "write_bvf_csv");
  out << "layer,neuron,bit,bvf_pct,vulnerable_count\n";
  for (size_t s = 0; s < vf.surfaces.size(); ++s) {
    const SurfaceFactors& sf = vf.surfaces[s];
    for (size_t n = 0; n < sf.neurons.size(); ++n) {
      for (int bit = 0; bit < vf.word_length; ++bit) {
        out << sf.surface << ',' << n << ',' << bit << ','
            << fmt_f64(vf.bvf_pct(s, n, bit)) << ','
            << sf.neurons[n].bit_vulnerable[size_t(bit)] << "\n";
      }
    }
  }
}

namespace {

constexpr const char* kCampaignHeader =
    "layer,neuron,bit,input_index,golden,faulty,delta,category,outcome,"
    "faulty_top";

FaultCategory category_from_name(const std::string& s) {
  if (s == "non_critical") return FaultCategory::NonCritical;
  if (s == "semi_critical") return FaultCategory::SemiCritical;
  if (s == "critical") return FaultCategory::Critical;
  throw FormatError("unknown fault category '" + s + "'");
}

}  // namespace

void write_campaign_csv(const std::string& path, const CampaignResult& c) {
  std::ofstream out = open_out(path, "write_campaign_csv");
  out << kCampaignHeader << "\n";
  for (const FaultRecord& r : c.faults) {
    float delta_repr;
    switch (r.delta.kind) {
      case DeltaKind::Finite: delta_repr = r.delta.delta; break;
      case DeltaKind::PlusInf: delta_repr = std::numeric_limits<float>::infinity(); break;
      case DeltaKind::MinusInf: delta_repr = -std::numeric_limits<float>::infinity(); break;
      default: delta_repr = std::numeric_limits<float>::quiet_NaN(); break;
    }
    out << r.spec.surface << ',' << r.spec.neuron << ',' << r.spec.bit << ','
        << r.spec.input_index << ',' << fmt_f32(r.delta.golden) << ','
        << fmt_f32(r.delta.faulty) << ',' << fmt_f32(delta_repr) << ','
        << fault_category_name(r.category) << ','
        << fault_outcome_name(r.outcome) << ',' << r.faulty_top << "\n";
  }
}

CampaignResult read_campaign_csv(const std::string& path) {
  std::ifstream in = open_in(path, "read_campaign_csv");
  expect_header(in, kCampaignHeader, path);
  CampaignResult c;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 10) {
      throw FormatError("read_campaign_csv: bad record: " + line);
    }
    FaultRecord r;
    r.spec.surface = parse_int(f[0], path);
    r.spec.neuron = parse_int(f[1], path);
    r.spec.bit = parse_int(f[2], path);
    r.spec.input_index = parse_int(f[3], path);
    r.delta.golden = parse_f32(f[4]);
    r.delta.faulty = parse_f32(f[5]);
    float d = parse_f32(f[6]);
    if (std::isnan(d)) {
      r.delta.kind = DeltaKind::NaNDelta;
    } else if (std::isinf(d)) {
      r.delta.kind = d > 0 ? DeltaKind::PlusInf : DeltaKind::MinusInf;
    } else {
      r.delta.kind = DeltaKind::Finite;
      r.delta.delta = d;
    }
    r.category = category_from_name(f[7]);
    if (f[8] == "masked") {
      r.outcome = FaultOutcome::Masked;
    } else if (f[8] == "misclassified") {
      r.outcome = FaultOutcome::Misclassified;
    } else {
      throw FormatError("unknown outcome '" + f[8] + "'");
    }
    r.faulty_top = parse_int(f[9], path);
    c.faults.push_back(r);
    ++c.counts[int(r.category)][int(r.outcome)];
  }
  if (!c.faults.empty()) c.surface = c.faults.front().spec.surface;
  return c;
}

void write_metrics_json(const std::string& path, const std::string& set_name,
                        const std::vector<LayerMetrics>& layers) {
  Json j;
  j["set"] = set_name;
  Json arr = Json::array();
  for (const LayerMetrics& lm : layers) {
    Json e;
    e["layer"] = lm.surface;
    e["faults"] = lm.faults;
    const ValidationMetrics& m = lm.metrics;
    e["true_non_critical_pct"] =
        m.true_non_critical_pct ? Json(*m.true_non_critical_pct) : Json();
    e["true_critical_pct"] =
        m.true_critical_pct ? Json(*m.true_critical_pct) : Json();
    e["non_critical_fraction_pct"] = m.non_critical_fraction_pct;
    e["semi_fraction_pct"] = m.semi_fraction_pct;
    e["semi_masked"] = m.semi_masked;
    e["semi_misclassified"] = m.semi_misclassified;
    arr.push_back(std::move(e));
  }
  j["layers"] = std::move(arr);
  std::ofstream out = open_out(path, "write_metrics_json");
  out << j.dump(2) << "\n";
}

std::vector<LayerMetrics> read_metrics_json(const std::string& path,
                                            std::string* set_name) {
  std::ifstream in = open_in(path, "read_metrics_json");
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw FormatError("read_metrics_json: " + std::string(e.what()));
  }
  if (set_name) *set_name = j.value("set", "");
  std::vector<LayerMetrics> out;
  for (const Json& e : j.at("layers")) {
    LayerMetrics lm;
    lm.surface = e.at("layer").get<int>();
    lm.faults = e.at("faults").get<uint64_t>();
    if (!e.at("true_non_critical_pct").is_null()) {
      lm.metrics.true_non_critical_pct = e["true_non_critical_pct"].get<double>();
    }
    if (!e.at("true_critical_pct").is_null()) {
      lm.metrics.true_critical_pct = e["true_critical_pct"].get<double>();
    }
    lm.metrics.non_critical_fraction_pct =
        e.at("non_critical_fraction_pct").get<double>();
    lm.metrics.semi_fraction_pct = e.at("semi_fraction_pct").get<double>();
    lm.metrics.semi_masked = e.at("semi_masked").get<uint64_t>();
    lm.metrics.semi_misclassified = e.at("semi_misclassified").get<uint64_t>();
    out.push_back(std::move(lm));
  }
  return out;
}

void write_correlation_csv(const std::string& path,
                           const CorrelationReport& report) {
  std::ofstream out = open_out(path, "write_correlation_csv");
  out << "layer,lvf_pct,acc_loss_same_set,acc_loss_diff_set\n";
  for (size_t i = 0; i < report.surfaces.size(); ++i) {
    out << report.surfaces[i] << ',' << fmt_f64(report.lvf_pct[i]) << ','
        << fmt_f64(report.acc_loss_same[i]) << ','
        << fmt_f64(report.acc_loss_diff[i]) << "\n";
  }
}

CorrelationReport read_correlation_csv(const std::string& path) {
  std::ifstream in = open_in(path, "read_correlation_csv");
  expect_header(in, "layer,lvf_pct,acc_loss_same_set,acc_loss_diff_set", path);
  CorrelationReport r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 4) {
      throw FormatError("read_correlation_csv: bad record: " + line);
    }
    r.surfaces.push_back(parse_int(f[0], path));
    r.lvf_pct.push_back(parse_f64(f[1]));
    r.acc_loss_same.push_back(parse_f64(f[2]));
    r.acc_loss_diff.push_back(parse_f64(f[3]));
  }
  r.rho_same = spearman(r.lvf_pct, r.acc_loss_same);
  r.rho_diff = spearman(r.lvf_pct, r.acc_loss_diff);
  return r;
}

}  // namespace vra
