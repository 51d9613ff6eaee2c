#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vra/analysis.hpp"
#include "vra/fast_engine.hpp"
#include "vra/fault_model.hpp"

namespace vra {

enum class FaultOutcome { Masked, Misclassified };
const char* fault_outcome_name(FaultOutcome o);

struct FaultRecord {
  FaultSpec spec;
  BitflipDelta delta;
  FaultCategory category = FaultCategory::NonCritical;
  FaultOutcome outcome = FaultOutcome::Masked;
  int faulty_top = 0;
};

struct CampaignResult {
  int surface = 0;
  uint64_t seed = 0;
  std::vector<FaultRecord> faults;
  // counts[category][outcome]
  uint64_t counts[3][2] = {{0, 0}, {0, 0}, {0, 0}};

  uint64_t total() const { return faults.size(); }
  uint64_t category_total(FaultCategory c) const {
    return counts[int(c)][0] + counts[int(c)][1];
  }
};

// Statistical FI campaign against one layer (surface): required_faults(32 x
// neurons) single bitflips, each paired with one dataset input, categorized
// against the ranges and executed to record the classification outcome.
CampaignResult run_campaign(const GoldenCache& eval_cache, int surface_idx,
                            const std::vector<NeuronVulnerability>& ranges,
                            uint64_t seed, int workers);

// Alias of the shared delta classifier under the validation-facing name.
inline FaultCategory categorize_fault(const BitflipDelta& d,
                                      const NeuronVulnerability& nv) {
  return categorize_delta(d, nv);
}

struct ValidationMetrics {
  // Percentage of NonCritical faults that were masked / Critical faults that
  // misclassified; unset when the denominator is zero.
  std::optional<double> true_non_critical_pct;
  std::optional<double> true_critical_pct;
  double non_critical_fraction_pct = 0.0;
  double semi_fraction_pct = 0.0;
  // Diagnostic split of semi faults.
  uint64_t semi_masked = 0;
  uint64_t semi_misclassified = 0;
};

ValidationMetrics validate(const CampaignResult& campaign);

// Spearman rank correlation with average ranks on ties; nullopt for constant
// vectors (undefined).
std::optional<double> spearman(const std::vector<double>& x,
                               const std::vector<double>& y);

// Per-layer accuracy loss under a campaign: golden accuracy over the
// evaluation set minus accuracy over the campaign's faulty runs, both against
// true labels.
double campaign_accuracy_loss(const GoldenCache& eval_cache,
                              const std::vector<int>& labels,
                              const CampaignResult& campaign);

struct CorrelationReport {
  std::vector<int> surfaces;
  std::vector<double> lvf_pct;
  std::vector<double> acc_loss_same;
  std::vector<double> acc_loss_diff;
  std::optional<double> rho_same;
  std::optional<double> rho_diff;
};

CorrelationReport lvf_accuracy_correlation(
    const std::vector<int>& surfaces, const std::vector<double>& lvf_pct,
    const std::vector<double>& acc_loss_same,
    const std::vector<double>& acc_loss_diff);

}  // namespace vra
