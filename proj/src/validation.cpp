#include "vra/validation.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "vra/errors.hpp"

namespace vra {

const char* fault_outcome_name(FaultOutcome o) {
  return o == FaultOutcome::Masked ? "masked" : "misclassified";
}

CampaignResult run_campaign(const GoldenCache& eval_cache, int surface_idx,
                            const std::vector<NeuronVulnerability>& ranges,
                            uint64_t seed, int workers) {
  if (surface_idx < 0 || size_t(surface_idx) >= eval_cache.surfaces.size()) {
    throw AddressingError("run_campaign: surface out of range");
  }
  const Surface& surf = eval_cache.surfaces[size_t(surface_idx)];
  if (int(ranges.size()) != surf.size) {
    throw ShapeError("run_campaign: ranges missing for surface " +
                     std::to_string(surface_idx) + " (" +
                     std::to_string(ranges.size()) + " of " +
                     std::to_string(surf.size) + " neurons)");
  }
  if (eval_cache.count() == 0) throw ShapeError("run_campaign: empty dataset");

  CampaignResult result;
  result.surface = surface_idx;
  result.seed = seed;
  uint64_t count = required_faults(uint64_t(kWordLength) * uint64_t(surf.size));
  std::vector<FaultSpec> specs =
      sample_faults(surf.size, count, eval_cache.count(), seed);
  for (FaultSpec& f : specs) f.surface = surface_idx;
  result.faults.resize(specs.size());

  int w = workers <= 0 ? 1 : workers;
  auto run_one = [&](size_t i, InjectionEngine& engine) {
    const FaultSpec& f = specs[i];
    FaultRecord& rec = result.faults[i];
    rec.spec = f;
    float golden = eval_cache.activation(f.input_index, surface_idx, f.neuron);
    rec.delta = bitflip_delta(golden, f.bit);
    rec.category = categorize_delta(rec.delta, ranges[size_t(f.neuron)]);
    ProbeOutcome po = engine.run(f.input_index, surface_idx, f.neuron, true,
                                 rec.delta.faulty, false);
    rec.faulty_top = po.top;
    rec.outcome =
        po.misclassified ? FaultOutcome::Misclassified : FaultOutcome::Masked;
  };

  if (w <= 1 || specs.size() <= 1) {
    InjectionEngine engine(eval_cache);
    for (size_t i = 0; i < specs.size(); ++i) run_one(i, engine);
  } else {
    size_t nw = std::min<size_t>(size_t(w), specs.size());
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (size_t t = 0; t < nw; ++t) {
      pool.emplace_back([&, t, nw] {
        InjectionEngine engine(eval_cache);
        for (size_t i = t; i < specs.size(); i += nw) run_one(i, engine);
      });
    }
    for (auto& th : pool) th.join();
  }

  for (const FaultRecord& rec : result.faults) {
    ++result.counts[int(rec.category)][int(rec.outcome)];
  }
  return result;
}

ValidationMetrics validate(const CampaignResult& c) {
  ValidationMetrics m;
  uint64_t total = c.total();
  uint64_t nc = c.category_total(FaultCategory::NonCritical);
  uint64_t cr = c.category_total(FaultCategory::Critical);
  uint64_t semi = c.category_total(FaultCategory::SemiCritical);
  if (nc > 0) {
    m.true_non_critical_pct =
        100.0 * double(c.counts[int(FaultCategory::NonCritical)][int(FaultOutcome::Masked)]) /
        double(nc);
  }
  if (cr > 0) {
    m.true_critical_pct =
        100.0 *
        double(c.counts[int(FaultCategory::Critical)][int(FaultOutcome::Misclassified)]) /
        double(cr);
  }
  if (total > 0) {
    m.non_critical_fraction_pct = 100.0 * double(nc) / double(total);
    m.semi_fraction_pct = 100.0 * double(semi) / double(total);
  }
  m.semi_masked = c.counts[int(FaultCategory::SemiCritical)][int(FaultOutcome::Masked)];
  m.semi_misclassified =
      c.counts[int(FaultCategory::SemiCritical)][int(FaultOutcome::Misclassified)];
  return m;
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  size_t n = v.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    double avg = 0.5 * (double(i) + double(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x,
                               const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  std::vector<double> rx = ranks_with_ties(x);
  std::vector<double> ry = ranks_with_ties(y);
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= double(rx.size());
  my /= double(ry.size());
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) {
    double dx = rx[i] - mx, dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;  // constant vector
  return sxy / std::sqrt(sxx * syy);
}

double campaign_accuracy_loss(const GoldenCache& eval_cache,
                              const std::vector<int>& labels,
                              const CampaignResult& campaign) {
  if (int(labels.size()) != eval_cache.count()) {
    throw ShapeError("campaign_accuracy_loss: label count mismatch");
  }
  int correct = 0;
  for (int i = 0; i < eval_cache.count(); ++i) {
    if (eval_cache.golden_top[size_t(i)] == labels[size_t(i)]) ++correct;
  }
  double golden_acc = double(correct) / double(eval_cache.count());
  uint64_t faulty_correct = 0;
  for (const FaultRecord& r : campaign.faults) {
    if (r.faulty_top == labels[size_t(r.spec.input_index)]) ++faulty_correct;
  }
  double faulty_acc =
      campaign.faults.empty()
          ? golden_acc
          : double(faulty_correct) / double(campaign.faults.size());
  return golden_acc - faulty_acc;
}

CorrelationReport lvf_accuracy_correlation(
    const std::vector<int>& surfaces, const std::vector<double>& lvf_pct,
    const std::vector<double>& acc_loss_same,
    const std::vector<double>& acc_loss_diff) {
  if (surfaces.size() < 3) {
    throw ConfigError("lvf_accuracy_correlation: need at least 3 layers");
  }
  if (lvf_pct.size() != surfaces.size() ||
      acc_loss_same.size() != surfaces.size() ||
      acc_loss_diff.size() != surfaces.size()) {
    throw ShapeError("lvf_accuracy_correlation: vector length mismatch");
  }
  CorrelationReport r;
  r.surfaces = surfaces;
  r.lvf_pct = lvf_pct;
  r.acc_loss_same = acc_loss_same;
  r.acc_loss_diff = acc_loss_diff;
  r.rho_same = spearman(lvf_pct, acc_loss_same);
  r.rho_diff = spearman(lvf_pct, acc_loss_diff);
  return r;
}

}  // namespace vra
