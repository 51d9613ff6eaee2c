#include <doctest.h>

#include <cmath>
#include <limits>

#include "vra/dataset.hpp"
#include "vra/rng.hpp"
#include "vra/errors.hpp"
#include "vra/train.hpp"
#include "vra/validation.hpp"

using namespace vra;

namespace {

constexpr float kInf = std::numeric_limits<float>::infinity();

NeuronVulnerability full_line() {
  NeuronVulnerability nv;
  nv.range_case = classify_range_case(nv);
  return nv;
}

// A trained 3-class blob classifier plus its golden cache over a small
// evaluation set, shared by the campaign tests. The cache keeps a pointer to
// the model, so the members are built in place and never moved.
struct CampaignFixture {
  Dataset data;
  NetworkModel model;
  GoldenCache cache;

  CampaignFixture() {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.input_dim = 2;
    spec.samples_per_class = 40;
    spec.cluster_separation = 8.0;
    spec.seed = 101;
    data = gen_synthetic(spec);
    NetworkModel arch = make_mlp({2, 8, 3}, false, {2});
    TrainConfig tc;
    tc.seed = 103;
    tc.epochs = 25;
    tc.learning_rate = 0.1;
    tc.batch_size = 16;
    TrainResult tr = train_fixture(init_weights(arch, 103), data, nullptr, tc);
    model = std::move(tr.model);
    cache = GoldenCache::build(model, data.data, {}, 2);
  }
};

}  // namespace

TEST_CASE("campaign size follows the statistical sample formula") {
  // 100-neuron layer: N = 3200 bits -> 2401 faults.
  NetworkModel m;
  m.input_shape = {4};
  m.num_classes = 2;
  LayerSpec d1 = LayerSpec::dense(4, 100);
  LayerSpec d2 = LayerSpec::dense(100, 2);
  Rng rng(11);
  for (float& w : d1.weights) w = float(rng.next_gaussian() * 0.3);
  for (float& w : d2.weights) w = float(rng.next_gaussian() * 0.3);
  m.layers.push_back(d1);
  m.layers.push_back(LayerSpec::relu());
  m.layers.push_back(d2);

  Tensor data({3, 4}, {0.1f, -0.2f, 0.3f, 0.4f, 1.0f, 0.5f, -0.5f, 0.25f,
                       -1.0f, 2.0f, 0.0f, 0.75f});
  GoldenCache cache = GoldenCache::build(m, data, {}, 1);
  std::vector<NeuronVulnerability> ranges(100, full_line());
  CampaignResult c = run_campaign(cache, 0, ranges, 99, 2);
  CHECK(c.total() == 2401);
  for (const FaultRecord& r : c.faults) {
    CHECK(r.spec.neuron < 100);
    CHECK(r.spec.bit < 32);
    CHECK(r.spec.input_index < 3);
    // Full-line ranges categorize every finite/inf delta as non-critical
    // except NaN, which is always critical.
    if (r.delta.kind == DeltaKind::NaNDelta) {
      CHECK(r.category == FaultCategory::Critical);
    } else {
      CHECK(r.category == FaultCategory::NonCritical);
    }
  }
}

TEST_CASE("campaign determinism: same seed, same records") {
  CampaignFixture fx;
  std::vector<NeuronVulnerability> ranges(8, full_line());
  CampaignResult a = run_campaign(fx.cache, 0, ranges, 7, 1);
  CampaignResult b = run_campaign(fx.cache, 0, ranges, 7, 2);
  REQUIRE(a.total() == b.total());
  for (size_t i = 0; i < a.faults.size(); ++i) {
    CHECK(a.faults[i].spec.neuron == b.faults[i].spec.neuron);
    CHECK(a.faults[i].spec.bit == b.faults[i].spec.bit);
    CHECK(a.faults[i].spec.input_index == b.faults[i].spec.input_index);
    CHECK(a.faults[i].outcome == b.faults[i].outcome);
    CHECK(a.faults[i].faulty_top == b.faults[i].faulty_top);
  }
  CampaignResult c = run_campaign(fx.cache, 0, ranges, 8, 1);
  bool differs = false;
  for (size_t i = 0; i < std::min(a.faults.size(), c.faults.size()); ++i) {
    differs |= a.faults[i].spec.neuron != c.faults[i].spec.neuron;
  }
  CHECK(differs);
}

TEST_CASE("run_campaign validates its inputs") {
  CampaignFixture fx;
  std::vector<NeuronVulnerability> short_ranges(3, full_line());
  CHECK_THROWS_AS(run_campaign(fx.cache, 0, short_ranges, 1, 1), ShapeError);
  std::vector<NeuronVulnerability> ranges(8, full_line());
  CHECK_THROWS_AS(run_campaign(fx.cache, 9, ranges, 1, 1), AddressingError);
}

TEST_CASE("zero-delta faults are non-critical and masked") {
  // A sign flip on an exactly-zero activation produces -0.0: delta 0.0.
  NetworkModel m;
  m.input_shape = {1};
  m.num_classes = 2;
  LayerSpec d1 = LayerSpec::dense(1, 1);
  d1.weights = {1.0f};
  m.layers.push_back(d1);
  m.layers.push_back(LayerSpec::relu());
  LayerSpec d2 = LayerSpec::dense(1, 2);
  d2.weights = {1.0f, -1.0f};
  d2.bias = {0.0f, 0.5f};
  m.layers.push_back(d2);
  Tensor data({1, 1}, {-2.0f});  // relu output is exactly 0
  GoldenCache cache = GoldenCache::build(m, data, {}, 1);
  REQUIRE(cache.activation(0, 0, 0) == 0.0f);

  BitflipDelta d = bitflip_delta(0.0f, 31);
  REQUIRE(d.kind == DeltaKind::Finite);
  REQUIRE(d.delta == 0.0f);
  CHECK(categorize_fault(d, full_line()) == FaultCategory::NonCritical);

  InjectionEngine engine(cache);
  ProbeOutcome po = engine.run(0, 0, 0, true, d.faulty, false);
  CHECK_FALSE(po.misclassified);
}

TEST_CASE("validate() percentage arithmetic") {
  CampaignResult c;
  c.counts[int(FaultCategory::NonCritical)][int(FaultOutcome::Masked)] = 999;
  c.counts[int(FaultCategory::NonCritical)][int(FaultOutcome::Misclassified)] = 1;
  c.counts[int(FaultCategory::Critical)][int(FaultOutcome::Misclassified)] = 50;
  c.counts[int(FaultCategory::SemiCritical)][int(FaultOutcome::Masked)] = 30;
  c.counts[int(FaultCategory::SemiCritical)][int(FaultOutcome::Misclassified)] = 20;
  c.faults.resize(1100);

  ValidationMetrics m = validate(c);
  REQUIRE(m.true_non_critical_pct.has_value());
  CHECK(*m.true_non_critical_pct == doctest::Approx(99.9));
  REQUIRE(m.true_critical_pct.has_value());
  CHECK(*m.true_critical_pct == doctest::Approx(100.0));
  CHECK(m.non_critical_fraction_pct == doctest::Approx(1000.0 / 1100.0 * 100));
  CHECK(m.semi_fraction_pct == doctest::Approx(50.0 / 1100.0 * 100));
  CHECK(m.semi_masked == 30);
  CHECK(m.semi_misclassified == 20);

  CampaignResult none;
  ValidationMetrics empty = validate(none);
  CHECK_FALSE(empty.true_non_critical_pct.has_value());
  CHECK_FALSE(empty.true_critical_pct.has_value());
}

TEST_CASE("validation metrics against computed ranges stay high") {
  CampaignFixture fx;
  AnalysisConfig cfg;
  AnalysisResult analysis = analyze_model(fx.cache, cfg, 2, {}, false);
  for (size_t s = 0; s < analysis.ranges.size(); ++s) {
    CampaignResult campaign =
        run_campaign(fx.cache, int(s), analysis.ranges[s], 1234 + s, 2);
    ValidationMetrics m = validate(campaign);
    if (m.true_non_critical_pct) CHECK(*m.true_non_critical_pct >= 99.0);
    if (m.true_critical_pct) CHECK(*m.true_critical_pct >= 99.0);
  }
}

TEST_CASE("spearman rank correlation") {
  std::vector<double> x{1.0, 2.0, 3.0, 4.0};
  std::vector<double> y{10.0, 20.0, 40.0, 80.0};  // strictly increasing map
  REQUIRE(spearman(x, y).has_value());
  CHECK(*spearman(x, y) == doctest::Approx(1.0));
  std::vector<double> rev{4.0, 3.0, 2.0, 1.0};
  CHECK(*spearman(x, rev) == doctest::Approx(-1.0));
  std::vector<double> constant{5.0, 5.0, 5.0, 5.0};
  CHECK_FALSE(spearman(x, constant).has_value());
  // Ties get average ranks.
  std::vector<double> tied{1.0, 1.0, 2.0, 3.0};
  std::vector<double> tied_y{2.0, 2.0, 4.0, 9.0};
  CHECK(*spearman(tied, tied_y) == doctest::Approx(1.0));
}

TEST_CASE("campaign accuracy loss on a hand-built case") {
  CampaignFixture fx;
  std::vector<NeuronVulnerability> ranges(8, full_line());
  CampaignResult campaign = run_campaign(fx.cache, 0, ranges, 31, 2);
  double loss =
      campaign_accuracy_loss(fx.cache, fx.data.labels, campaign);
  // Faulty accuracy can exceed golden accuracy only marginally; the loss is
  // bounded by [-1, 1] and usually small but non-negative here.
  CHECK(loss >= -1.0);
  CHECK(loss <= 1.0);

  std::vector<int> bad_labels(10, 0);
  CHECK_THROWS_AS(campaign_accuracy_loss(fx.cache, bad_labels, campaign),
                  ShapeError);
}

TEST_CASE("lvf_accuracy_correlation wiring") {
  std::vector<int> surfaces{0, 1, 2};
  std::vector<double> lvf{1.0, 2.0, 3.0};
  std::vector<double> same{0.01, 0.02, 0.03};
  std::vector<double> diff{0.03, 0.02, 0.01};
  CorrelationReport r = lvf_accuracy_correlation(surfaces, lvf, same, diff);
  CHECK(*r.rho_same == doctest::Approx(1.0));
  CHECK(*r.rho_diff == doctest::Approx(-1.0));
  std::vector<int> two{0, 1};
  CHECK_THROWS_AS(
      lvf_accuracy_correlation(two, {1.0, 2.0}, {0.1, 0.2}, {0.1, 0.2}),
      ConfigError);
}
