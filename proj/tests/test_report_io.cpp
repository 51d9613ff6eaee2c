#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "vra/errors.hpp"
#include "vra/report_io.hpp"
#include "vra/rng.hpp"

using namespace vra;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("vra_rio_" + std::to_string(12345) + "_" +
            std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

NeuronVulnerability nv_of(int layer, int neuron, float rl, float ru, float vl,
                          float vu) {
  NeuronVulnerability nv;
  nv.neuron = NeuronRef{layer, neuron};
  nv.r_lower = rl;
  nv.r_upper = ru;
  nv.vv_lower = vl;
  nv.vv_upper = vu;
  nv.range_case = classify_range_case(nv);
  nv.zero_grad_pos = 0.25f;
  nv.zero_grad_neg = 0.0f;
  nv.decision = ScreenDecision::SemiAnalysis;
  return nv;
}

}  // namespace

TEST_CASE("float formatting: shortest round trip, inf/nan spellings") {
  CHECK(fmt_f32(kInf) == "inf");
  CHECK(fmt_f32(-kInf) == "-inf");
  CHECK(fmt_f32(std::numeric_limits<float>::quiet_NaN()) == "nan");
  CHECK(parse_f32("inf") == kInf);
  CHECK(parse_f32("-inf") == -kInf);
  CHECK(std::isnan(parse_f32("nan")));
  CHECK_THROWS_AS(parse_f32("1.5x"), FormatError);

  Rng rng(909);
  for (int i = 0; i < 5000; ++i) {
    uint32_t bits = uint32_t(rng.next_u64());
    float v = std::bit_cast<float>(bits);
    if (std::isnan(v)) continue;
    float back = parse_f32(fmt_f32(v));
    CHECK(std::bit_cast<uint32_t>(back) == std::bit_cast<uint32_t>(v));
  }
}

TEST_CASE("ranges csv round trip") {
  TempDir tmp;
  std::vector<std::vector<NeuronVulnerability>> ranges(3);
  ranges[0].push_back(nv_of(0, 0, -5.39f, kInf, -5.39f, kInf));
  ranges[0].push_back(nv_of(0, 1, -1.25f, 3.5f, -2.0f, 5.0f));
  // Layer 1 left unanalyzed (filtered); layer 2 analyzed.
  ranges[2].push_back(nv_of(2, 0, -kInf, kInf, -kInf, kInf));

  write_ranges_csv(tmp.file("ranges.csv"), ranges);
  auto back = read_ranges_csv(tmp.file("ranges.csv"));
  REQUIRE(back.size() == 3);
  REQUIRE(back[0].size() == 2);
  CHECK(back[1].empty());
  CHECK(back[0][0].r_lower == -5.39f);
  CHECK(back[0][0].r_upper == kInf);
  CHECK(back[0][1].vv_upper == 5.0f);
  CHECK(back[0][1].range_case.pos_side == SideCase::SemiThenVulnerable);
  CHECK(back[0][1].zero_grad_pos == 0.25f);
  CHECK(back[0][1].decision == ScreenDecision::SemiAnalysis);
  CHECK(back[2][0].r_upper == kInf);
}

TEST_CASE("campaign csv round trip covers non-finite deltas") {
  TempDir tmp;
  CampaignResult c;
  c.surface = 1;
  FaultRecord r1;
  r1.spec = {1, 7, 23, 4};
  r1.delta = bitflip_delta(2.0f, 23);
  r1.category = FaultCategory::NonCritical;
  r1.outcome = FaultOutcome::Masked;
  r1.faulty_top = 2;
  FaultRecord r2;
  r2.spec = {1, 3, 30, 0};
  r2.delta = bitflip_delta(1.0f, 30);  // +inf
  r2.category = FaultCategory::Critical;
  r2.outcome = FaultOutcome::Misclassified;
  r2.faulty_top = 0;
  FaultRecord r3;
  r3.spec = {1, 5, 30, 2};
  r3.delta = bitflip_delta(1.5f, 30);  // nan
  r3.category = FaultCategory::Critical;
  r3.outcome = FaultOutcome::Misclassified;
  r3.faulty_top = 1;
  c.faults = {r1, r2, r3};
  for (const FaultRecord& r : c.faults) {
    ++c.counts[int(r.category)][int(r.outcome)];
  }

  write_campaign_csv(tmp.file("campaign.csv"), c);
  CampaignResult back = read_campaign_csv(tmp.file("campaign.csv"));
  REQUIRE(back.total() == 3);
  CHECK(back.faults[0].delta.kind == DeltaKind::Finite);
  CHECK(back.faults[0].delta.delta == 2.0f);
  CHECK(back.faults[1].delta.kind == DeltaKind::PlusInf);
  CHECK(back.faults[2].delta.kind == DeltaKind::NaNDelta);
  CHECK(back.faults[2].category == FaultCategory::Critical);
  CHECK(back.counts[int(FaultCategory::Critical)][int(FaultOutcome::Misclassified)] == 2);
}

TEST_CASE("metrics json round trip with undefined entries") {
  TempDir tmp;
  std::vector<LayerMetrics> layers(2);
  layers[0].surface = 0;
  layers[0].faults = 2401;
  layers[0].metrics.true_non_critical_pct = 99.958;
  layers[0].metrics.non_critical_fraction_pct = 88.5;
  layers[0].metrics.semi_fraction_pct = 1.5;
  layers[0].metrics.semi_masked = 20;
  layers[0].metrics.semi_misclassified = 16;
  // Layer with no critical faults: true_critical undefined.
  layers[1].surface = 1;
  layers[1].faults = 313;
  layers[1].metrics.true_non_critical_pct = 100.0;
  layers[1].metrics.non_critical_fraction_pct = 100.0;

  write_metrics_json(tmp.file("metrics.json"), "set1", layers);
  std::string set_name;
  auto back = read_metrics_json(tmp.file("metrics.json"), &set_name);
  CHECK(set_name == "set1");
  REQUIRE(back.size() == 2);
  CHECK(*back[0].metrics.true_non_critical_pct == doctest::Approx(99.958));
  CHECK_FALSE(back[0].metrics.true_critical_pct.has_value());
  CHECK_FALSE(back[1].metrics.true_critical_pct.has_value());
  CHECK(back[1].faults == 313);
}

TEST_CASE("lvf and correlation csv round trips") {
  TempDir tmp;
  VulnerabilityFactors vf;
  vf.num_inputs = 10;
  SurfaceFactors s0;
  s0.surface = 0;
  s0.neurons.resize(4);
  s0.neurons[0].vulnerable_bits = 32;
  s0.vulnerable_bits = 32;
  vf.surfaces.push_back(s0);
  SurfaceFactors s1;
  s1.surface = 2;
  s1.neurons.resize(2);
  s1.neurons[1].vulnerable_bits = 100;
  s1.vulnerable_bits = 100;
  vf.surfaces.push_back(s1);

  write_lvf_csv(tmp.file("lvf.csv"), vf);
  auto lvf = read_lvf_csv(tmp.file("lvf.csv"));
  REQUIRE(lvf.size() == 2);
  CHECK(lvf[0].first == 0);
  CHECK(lvf[0].second == doctest::Approx(100.0 * 32 / (10.0 * 4 * 32)));
  CHECK(lvf[1].first == 2);

  CorrelationReport rep;
  rep.surfaces = {0, 1, 2};
  rep.lvf_pct = {0.5, 1.25, 4.0};
  rep.acc_loss_same = {0.001, 0.01, 0.08};
  rep.acc_loss_diff = {0.002, 0.012, 0.05};
  write_correlation_csv(tmp.file("corr.csv"), rep);
  CorrelationReport back = read_correlation_csv(tmp.file("corr.csv"));
  CHECK(back.surfaces == rep.surfaces);
  CHECK(back.lvf_pct == rep.lvf_pct);
  REQUIRE(back.rho_same.has_value());
  CHECK(*back.rho_same == doctest::Approx(1.0));

  write_nvf_csv(tmp.file("nvf.csv"), vf);
  write_bvf_csv(tmp.file("bvf.csv"), vf);
  CHECK(std::filesystem::file_size(tmp.file("bvf.csv")) > 0);
}

TEST_CASE("csv readers reject malformed headers") {
  TempDir tmp;
  std::ofstream(tmp.file("bad.csv")) << "wrong,header\n1,2\n";
  CHECK_THROWS_AS(read_ranges_csv(tmp.file("bad.csv")), FormatError);
  CHECK_THROWS_AS(read_lvf_csv(tmp.file("bad.csv")), FormatError);
  CHECK_THROWS_AS(read_campaign_csv(tmp.file("bad.csv")), FormatError);
}
