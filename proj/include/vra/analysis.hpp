#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vra/fast_engine.hpp"
#include "vra/fault_model.hpp"
#include "vra/layers.hpp"

namespace vra {

struct AnalysisConfig {
  float probe_epsilon = 10000.0f;   // applied as +eps and -eps
  float search_bound = 500000.0f;   // search domain [-bound, +bound]
  float tolerance = 0.05f;          // relative, absolute floor near zero
  float zero_grad_threshold = 0.98f;
  int word_length = kWordLength;
  int batch_size = 64;
  uint64_t seed = 1;

  void validate() const;
};

enum class ScreenDecision { Skip, FullAnalysis, SemiAnalysis };
const char* screen_decision_name(ScreenDecision d);

// Step-1 screening output for one neuron over the analysis batch.
struct ScreenResult {
  NeuronRef neuron;
  float zero_grad_pos = 0.0f;  // fraction of inputs insensitive to +eps
  float zero_grad_neg = 0.0f;
  ScreenDecision decision = ScreenDecision::FullAnalysis;

  struct PerInput {
    // An input is insensitive on a sign when the path derivative is exactly
    // zero at the probe and the probe did not already change the top class.
    bool pos_sensitive = false;
    bool neg_sensitive = false;
    // True when the probe itself misclassified: the threshold lies below the
    // probe magnitude, so the initial interval is (0, eps] instead of
    // (eps, bound].
    bool pos_below_probe = false;
    bool neg_below_probe = false;
    float pos_margin = 0.0f;  // logit margin observed at the probe
    float neg_margin = 0.0f;
    float pos_grad = 0.0f;  // path derivative at the probe (diagnostic)
    float neg_grad = 0.0f;
  };
  std::vector<PerInput> inputs;
};

ScreenResult gradient_screen(InjectionEngine& engine, int surface_idx,
                             int neuron, const AnalysisConfig& cfg);

// Per-input non-vulnerable interval [lower, upper] (+-inf when unbounded).
struct Bounds {
  float lower = -std::numeric_limits<float>::infinity();
  float upper = std::numeric_limits<float>::infinity();
};

struct SearchOutcome {
  bool found = false;        // false: no misclassification within the domain
  float threshold = 0.0f;    // signed inner (non-misclassifying) endpoint
  int iterations = 0;        // forward probes spent on this (input, sign)
  bool anomaly = false;
};

// Bisection (with a few secant-accelerated steps) over the misclassification
// predicate along one sign, assuming monotonicity in |delta|. below_probe and
// probe_margin come from the screen: the probe at sign*eps has already been
// evaluated, so the bracket starts tight without re-probing.
SearchOutcome search_threshold(InjectionEngine& engine, int input_idx,
                               int surface_idx, int neuron, int sign,
                               bool below_probe, float probe_margin,
                               const AnalysisConfig& cfg);

// Closed-form per-input bounds for an output-layer neuron: the logit
// difference to the golden top class, made inclusive-safe under the
// lowest-index argmax tie rule (one-ulp shrink when the competing class index
// is below the golden top).
Bounds last_layer_bounds(std::span<const float> golden_logits, int neuron_class);

enum class SideCase { NoVulnerable, VulnerableOnly, SemiThenVulnerable };
const char* side_case_name(SideCase c);
SideCase side_case_from_name(const std::string& s);

struct RangeCase {
  SideCase neg_side = SideCase::NoVulnerable;
  SideCase pos_side = SideCase::NoVulnerable;
};

// Intersected vulnerability ranges for one neuron.
// R_NV = [r_lower, r_upper]; R_VV = (-inf, vv_lower) U (vv_upper, +inf);
// the gaps between them are semi-vulnerable.
struct NeuronVulnerability {
  NeuronRef neuron;
  float r_lower = -std::numeric_limits<float>::infinity();
  float r_upper = std::numeric_limits<float>::infinity();
  float vv_lower = -std::numeric_limits<float>::infinity();
  float vv_upper = std::numeric_limits<float>::infinity();
  RangeCase range_case;
  float zero_grad_pos = 0.0f;
  float zero_grad_neg = 0.0f;
  ScreenDecision decision = ScreenDecision::FullAnalysis;
};

// Intersection over inputs (Step 2): R_NV bounds tighten (max of lowers, min
// of uppers), R_VV bounds are absorbed outwards (min of lowers, max of
// uppers; any unbounded input empties that vulnerable side).
NeuronVulnerability neuron_ranges(NeuronRef neuron,
                                  std::span<const Bounds> per_input);

RangeCase classify_range_case(const NeuronVulnerability& nv);

enum class FaultCategory { NonCritical, SemiCritical, Critical };
const char* fault_category_name(FaultCategory c);

// Shared by Step-3 bitflip mapping and FI fault categorization. Finite deltas
// compare against the bounds (R_NV bounds inclusive); NaN is always critical;
// infinite deltas are critical when the matching vulnerable side is
// non-empty, semi when only a semi gap extends that way.
FaultCategory categorize_delta(const BitflipDelta& d,
                               const NeuronVulnerability& nv);

// Vulnerability-factor tallies. Integer counts keep the metric identities
// exact: NVF is the mean of BVF over bits, LVF the mean of NVF over neurons.
struct NeuronTally {
  uint64_t vulnerable_bits = 0;  // includes semi (counted conservatively)
  uint64_t semi_bits = 0;        // reported separately
  std::array<uint32_t, kWordLength> bit_vulnerable{};
};

struct SurfaceFactors {
  int surface = 0;
  uint64_t vulnerable_bits = 0;
  uint64_t semi_bits = 0;
  std::vector<NeuronTally> neurons;
};

struct VulnerabilityFactors {
  int num_inputs = 0;
  int word_length = kWordLength;
  std::vector<SurfaceFactors> surfaces;

  double lvf_pct(size_t s) const;
  double nvf_pct(size_t s, size_t n) const;
  double bvf_pct(size_t s, size_t n, int bit) const;
};

// Step 3: map every bitflip of every analyzed neuron's golden activation over
// the analysis inputs onto the ranges. No forward passes are involved.
VulnerabilityFactors bitflip_map(
    const GoldenCache& cache,
    const std::vector<std::vector<NeuronVulnerability>>& ranges,
    const AnalysisConfig& cfg, int workers);

struct AnalysisCounters {
  uint64_t neurons_examined = 0;
  uint64_t neurons_skipped = 0;
  uint64_t neurons_searched = 0;
  uint64_t neurons_closed_form = 0;
  uint64_t forward_sweeps = 0;   // batched screen + search executions
  uint64_t gradient_sweeps = 0;  // batched gradient evaluations (2 per screen)
  uint64_t single_probes = 0;    // raw per-input injected forwards
  uint64_t search_sweeps = 0;
  uint64_t max_iterations_per_input_sign = 0;
  uint64_t anomalies = 0;

  uint64_t neurons_screened() const { return neurons_skipped + neurons_searched; }
  double avg_sweeps_per_searched_neuron() const {
    return neurons_searched == 0
               ? 0.0
               : double(forward_sweeps) / double(neurons_searched);
  }
  double avg_sweeps_per_screened_neuron() const {
    return neurons_screened() == 0
               ? 0.0
               : double(forward_sweeps) / double(neurons_screened());
  }
  double skip_fraction() const {
    return neurons_examined == 0
               ? 0.0
               : double(neurons_skipped) / double(neurons_examined);
  }
};

struct AnalysisResult {
  std::vector<std::vector<NeuronVulnerability>> ranges;  // per surface
  VulnerabilityFactors factors;
  AnalysisCounters counters;
  AnalysisConfig config;
  // Retained only when requested (debug/acceptance): per surface, per neuron,
  // per input bounds.
  std::vector<std::vector<std::vector<Bounds>>> per_input_bounds;
};

// Full Step 1-3 pipeline over the cached analysis inputs. surface_filter
// empty = all surfaces; otherwise only listed surface indices are analyzed.
AnalysisResult analyze_model(const GoldenCache& cache,
                             const AnalysisConfig& cfg, int workers,
                             const std::vector<int>& surface_filter = {},
                             bool retain_per_input = false);

}  // namespace vra
