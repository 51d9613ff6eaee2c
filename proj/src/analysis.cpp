#include "vra/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "vra/errors.hpp"
#include "vra/parallel.hpp"

namespace vra {

void AnalysisConfig::validate() const {
  if (!(zero_grad_threshold > 0.5f && zero_grad_threshold < 1.0f)) {
    throw ConfigError("analysis config: zero_grad_threshold must be in (0.5, 1)");
  }
  if (!(probe_epsilon > 0.0f)) {
    throw ConfigError("analysis config: probe_epsilon must be positive");
  }
  if (probe_epsilon > search_bound) {
    throw ConfigError("analysis config: probe_epsilon exceeds search_bound");
  }
  if (!(tolerance > 0.0f)) {
    throw ConfigError("analysis config: tolerance must be positive");
  }
  if (word_length != kWordLength) {
    throw ConfigError("analysis config: word_length must be 32");
  }
}

const char* screen_decision_name(ScreenDecision d) {
  switch (d) {
    case ScreenDecision::Skip: return "skip";
    case ScreenDecision::FullAnalysis: return "full";
    case ScreenDecision::SemiAnalysis: return "semi";
  }
  return "?";
}

ScreenResult gradient_screen(InjectionEngine& engine, int surface_idx,
                             int neuron, const AnalysisConfig& cfg) {
  const GoldenCache& cache = engine.cache();
  int b = cache.count();
  if (b == 0) throw ShapeError("gradient_screen: empty batch");

  ScreenResult r;
  r.neuron = NeuronRef{surface_idx, neuron};
  r.inputs.resize(size_t(b));
  int insens_pos = 0, insens_neg = 0;
  for (int j = 0; j < b; ++j) {
    ProbeOutcome p =
        engine.run(j, surface_idx, neuron, false, cfg.probe_epsilon, true);
    ProbeOutcome m =
        engine.run(j, surface_idx, neuron, false, -cfg.probe_epsilon, true);
    ScreenResult::PerInput& pi = r.inputs[size_t(j)];
    bool pos_insensitive =
        p.tangent == 0.0f && !p.tangent_undefined && !p.misclassified;
    bool neg_insensitive =
        m.tangent == 0.0f && !m.tangent_undefined && !m.misclassified;
    pi.pos_sensitive = !pos_insensitive;
    pi.neg_sensitive = !neg_insensitive;
    pi.pos_below_probe = p.misclassified;
    pi.neg_below_probe = m.misclassified;
    pi.pos_margin = p.margin;
    pi.neg_margin = m.margin;
    pi.pos_grad = p.tangent;
    pi.neg_grad = m.tangent;
    insens_pos += pos_insensitive ? 1 : 0;
    insens_neg += neg_insensitive ? 1 : 0;
  }
  r.zero_grad_pos = float(insens_pos) / float(b);
  r.zero_grad_neg = float(insens_neg) / float(b);

  float th = cfg.zero_grad_threshold;
  auto in_semi_band = [th](float f) { return f > 1.0f - th && f <= th; };
  if (r.zero_grad_pos > th && r.zero_grad_neg > th) {
    r.decision = ScreenDecision::Skip;
  } else if (in_semi_band(r.zero_grad_pos) || in_semi_band(r.zero_grad_neg)) {
    r.decision = ScreenDecision::SemiAnalysis;
  } else {
    r.decision = ScreenDecision::FullAnalysis;
  }
  return r;
}

SearchOutcome search_threshold(InjectionEngine& engine, int input_idx,
                               int surface_idx, int neuron, int sign,
                               bool below_probe, float probe_margin,
                               const AnalysisConfig& cfg) {
  const GoldenCache& cache = engine.cache();
  SearchOutcome out;
  double lo, hi, m_lo, m_hi;
  if (below_probe) {
    lo = 0.0;
    m_lo = double(cache.golden_margin[size_t(input_idx)]);
    hi = double(cfg.probe_epsilon);
    m_hi = double(probe_margin);
  } else {
    ProbeOutcome pb = engine.run(input_idx, surface_idx, neuron, false,
                                 float(sign) * cfg.search_bound, false);
    ++out.iterations;
    if (!pb.misclassified) {
      out.found = false;  // no misclassification anywhere in the domain
      return out;
    }
    lo = double(cfg.probe_epsilon);
    m_lo = double(probe_margin);
    hi = double(cfg.search_bound);
    m_hi = double(pb.margin);
  }

  // A few secant steps narrow the bracket fast when the margin is near-linear
  // in delta (always true once no further activation switches occur); pure
  // bisection afterwards keeps the worst case bounded.
  int secant_left = 3;
  while (out.iterations < 64) {
    double mid = 0.5 * (lo + hi);
    double band = double(cfg.tolerance) * std::max(1.0, std::fabs(mid));
    if (hi - lo <= band) break;
    double c = mid;
    if (secant_left > 0) {
      --secant_left;
      if (std::isfinite(m_lo) && std::isfinite(m_hi) && m_lo > 0.0 &&
          m_hi < m_lo) {
        double fp = lo + m_lo * (hi - lo) / (m_lo - m_hi);
        double guard = 0.05 * (hi - lo);
        fp = std::min(hi - guard, std::max(lo + guard, fp));
        if (std::isfinite(fp) && fp > lo && fp < hi) c = fp;
      }
    }
    ProbeOutcome pc = engine.run(input_idx, surface_idx, neuron, false,
                                 float(sign) * float(c), false);
    ++out.iterations;
    if (pc.misclassified) {
      hi = c;
      m_hi = double(pc.margin);
    } else {
      lo = c;
      m_lo = double(pc.margin);
    }
  }
  out.found = true;
  out.threshold = float(sign) * float(lo);
  return out;
}

Bounds last_layer_bounds(std::span<const float> golden_logits,
                         int neuron_class) {
  int n = int(golden_logits.size());
  if (neuron_class < 0 || neuron_class >= n) {
    throw AddressingError("last_layer_bounds: class out of range");
  }
  int t = golden_top_class(golden_logits);
  Bounds b;
  if (neuron_class == t) {
    int j = -1;
    for (int k = 0; k < n; ++k) {
      if (k == t) continue;
      if (j < 0 || golden_logits[size_t(k)] > golden_logits[size_t(j)]) j = k;
    }
    float margin = golden_logits[size_t(t)] - golden_logits[size_t(j)];
    float bound = -margin;
    // At delta == -margin the top ties with class j; the lowest index wins.
    if (j < t) bound = std::nextafter(bound, std::numeric_limits<float>::infinity());
    b.lower = bound;
  } else {
    float margin = golden_logits[size_t(t)] - golden_logits[size_t(neuron_class)];
    float bound = margin;
    if (neuron_class < t) {
      bound = std::nextafter(bound, -std::numeric_limits<float>::infinity());
    }
    b.upper = bound;
  }
  return b;
}

const char* side_case_name(SideCase c) {
  switch (c) {
    case SideCase::NoVulnerable: return "novuln";
    case SideCase::VulnerableOnly: return "vuln";
    case SideCase::SemiThenVulnerable: return "semivuln";
  }
  return "?";
}

SideCase side_case_from_name(const std::string& s) {
  if (s == "novuln") return SideCase::NoVulnerable;
  if (s == "vuln") return SideCase::VulnerableOnly;
  if (s == "semivuln") return SideCase::SemiThenVulnerable;
  throw FormatError("unknown side case '" + s + "'");
}

NeuronVulnerability neuron_ranges(NeuronRef neuron,
                                  std::span<const Bounds> per_input) {
  if (per_input.empty()) throw ShapeError("neuron_ranges: no inputs analyzed");
  NeuronVulnerability nv;
  nv.neuron = neuron;
  float inf = std::numeric_limits<float>::infinity();
  nv.r_lower = -inf;
  nv.r_upper = inf;
  nv.vv_lower = inf;   // min over inputs
  nv.vv_upper = -inf;  // max over inputs
  for (const Bounds& b : per_input) {
    nv.r_lower = std::max(nv.r_lower, b.lower);
    nv.r_upper = std::min(nv.r_upper, b.upper);
    nv.vv_lower = std::min(nv.vv_lower, b.lower);
    nv.vv_upper = std::max(nv.vv_upper, b.upper);
  }
  nv.range_case = classify_range_case(nv);
  return nv;
}

RangeCase classify_range_case(const NeuronVulnerability& nv) {
  RangeCase c;
  if (std::isinf(nv.r_upper) && nv.r_upper > 0.0f) {
    c.pos_side = SideCase::NoVulnerable;
  } else if (nv.vv_upper == nv.r_upper) {
    c.pos_side = SideCase::VulnerableOnly;
  } else {
    c.pos_side = SideCase::SemiThenVulnerable;
  }
  if (std::isinf(nv.r_lower) && nv.r_lower < 0.0f) {
    c.neg_side = SideCase::NoVulnerable;
  } else if (nv.vv_lower == nv.r_lower) {
    c.neg_side = SideCase::VulnerableOnly;
  } else {
    c.neg_side = SideCase::SemiThenVulnerable;
  }
  return c;
}

const char* fault_category_name(FaultCategory c) {
  switch (c) {
    case FaultCategory::NonCritical: return "non_critical";
    case FaultCategory::SemiCritical: return "semi_critical";
    case FaultCategory::Critical: return "critical";
  }
  return "?";
}

FaultCategory categorize_delta(const BitflipDelta& d,
                               const NeuronVulnerability& nv) {
  switch (d.kind) {
    case DeltaKind::NaNDelta:
      return FaultCategory::Critical;
    case DeltaKind::PlusInf:
      if (!std::isinf(nv.vv_upper)) return FaultCategory::Critical;
      if (!std::isinf(nv.r_upper)) return FaultCategory::SemiCritical;
      return FaultCategory::NonCritical;
    case DeltaKind::MinusInf:
      if (!std::isinf(nv.vv_lower)) return FaultCategory::Critical;
      if (!std::isinf(nv.r_lower)) return FaultCategory::SemiCritical;
      return FaultCategory::NonCritical;
    case DeltaKind::Finite:
      break;
  }
  float x = d.delta;
  if (x >= nv.r_lower && x <= nv.r_upper) return FaultCategory::NonCritical;
  if (x < nv.vv_lower || x > nv.vv_upper) return FaultCategory::Critical;
  return FaultCategory::SemiCritical;
}

double VulnerabilityFactors::lvf_pct(size_t s) const {
  const SurfaceFactors& f = surfaces[s];
  if (f.neurons.empty() || num_inputs == 0) return 0.0;
  double den = double(num_inputs) * double(f.neurons.size()) * double(word_length);
  return 100.0 * double(f.vulnerable_bits) / den;
}

double VulnerabilityFactors::nvf_pct(size_t s, size_t n) const {
  if (num_inputs == 0) return 0.0;
  double den = double(num_inputs) * double(word_length);
  return 100.0 * double(surfaces[s].neurons[n].vulnerable_bits) / den;
}

double VulnerabilityFactors::bvf_pct(size_t s, size_t n, int bit) const {
  if (num_inputs == 0) return 0.0;
  return 100.0 * double(surfaces[s].neurons[n].bit_vulnerable[size_t(bit)]) /
         double(num_inputs);
}

VulnerabilityFactors bitflip_map(
    const GoldenCache& cache,
    const std::vector<std::vector<NeuronVulnerability>>& ranges,
    const AnalysisConfig& cfg, int workers) {
  cfg.validate();
  VulnerabilityFactors vf;
  vf.num_inputs = cache.count();
  vf.word_length = cfg.word_length;
  if (ranges.size() != cache.surfaces.size()) {
    throw ShapeError("bitflip_map: ranges do not cover the surface list");
  }

  for (size_t s = 0; s < ranges.size(); ++s) {
    if (ranges[s].empty()) continue;  // surface not analyzed (filtered out)
    if (int(ranges[s].size()) != cache.surfaces[s].size) {
      throw ShapeError("bitflip_map: missing ranges for surface " +
                       std::to_string(s));
    }
    SurfaceFactors sf;
    sf.surface = int(s);
    sf.neurons.resize(ranges[s].size());
    vf.surfaces.push_back(std::move(sf));
  }

  int b = cache.count();
  for (SurfaceFactors& sf : vf.surfaces) {
    int s = sf.surface;
    parallel_for(sf.neurons.size(), workers, [&](size_t n) {
      NeuronTally& tally = sf.neurons[n];
      const NeuronVulnerability& nv = ranges[size_t(s)][n];
      for (int j = 0; j < b; ++j) {
        float golden = cache.activation(j, s, int(n));
        for (int bit = 0; bit < cfg.word_length; ++bit) {
          BitflipDelta d = bitflip_delta(golden, bit);
          FaultCategory cat = categorize_delta(d, nv);
          if (cat == FaultCategory::Critical || cat == FaultCategory::SemiCritical) {
            ++tally.vulnerable_bits;
            ++tally.bit_vulnerable[size_t(bit)];
            if (cat == FaultCategory::SemiCritical) ++tally.semi_bits;
          }
        }
      }
    });
    for (const NeuronTally& t : sf.neurons) {
      sf.vulnerable_bits += t.vulnerable_bits;
      sf.semi_bits += t.semi_bits;
    }
  }
  return vf;
}

namespace {

struct TaskStats {
  ScreenDecision decision = ScreenDecision::FullAnalysis;
  bool closed_form = false;
  uint64_t screen_sweeps = 0;
  uint64_t gradient_sweeps = 0;
  uint64_t search_sweeps = 0;
  uint64_t probes = 0;
  uint64_t max_iterations = 0;
  uint64_t anomalies = 0;
};

}  // namespace

AnalysisResult analyze_model(const GoldenCache& cache,
                             const AnalysisConfig& cfg, int workers,
                             const std::vector<int>& surface_filter,
                             bool retain_per_input) {
  cfg.validate();
  const std::vector<Surface>& surfaces = cache.surfaces;
  int b = cache.count();
  if (b == 0) throw ShapeError("analyze_model: empty analysis batch");

  std::vector<bool> selected(surfaces.size(), surface_filter.empty());
  for (int s : surface_filter) {
    if (s < 0 || size_t(s) >= surfaces.size()) {
      throw AddressingError("analyze_model: surface filter index " +
                            std::to_string(s) + " out of range");
    }
    selected[size_t(s)] = true;
  }

  AnalysisResult result;
  result.config = cfg;
  result.ranges.resize(surfaces.size());
  result.per_input_bounds.resize(surfaces.size());

  std::vector<std::pair<int, int>> tasks;
  for (size_t s = 0; s < surfaces.size(); ++s) {
    if (!selected[s]) continue;
    result.ranges[s].resize(size_t(surfaces[s].size));
    if (retain_per_input) {
      result.per_input_bounds[s].resize(size_t(surfaces[s].size));
    }
    for (int n = 0; n < surfaces[s].size; ++n) tasks.emplace_back(int(s), n);
  }
  std::vector<TaskStats> stats(tasks.size());

  int w = workers <= 0 ? 1 : workers;
  auto run_task = [&](size_t ti, InjectionEngine& engine) {
    auto [s, n] = tasks[ti];
    TaskStats& st = stats[ti];
    const Surface& surf = surfaces[size_t(s)];
    NeuronVulnerability nv;
    std::vector<Bounds> bounds(static_cast<size_t>(b));

    if (surf.is_output) {
      st.closed_form = true;
      for (int j = 0; j < b; ++j) {
        std::span<const float> logits(
            cache.golden_logits.data() + size_t(j) * size_t(cache.num_classes()),
            size_t(cache.num_classes()));
        bounds[size_t(j)] = last_layer_bounds(logits, n);
      }
      nv = neuron_ranges(NeuronRef{s, n}, bounds);
      nv.decision = ScreenDecision::FullAnalysis;
    } else {
      uint64_t probes_before = engine.probes_executed();
      ScreenResult screen = gradient_screen(engine, s, n, cfg);
      st.screen_sweeps = 2;
      st.gradient_sweeps = 2;
      st.decision = screen.decision;
      if (screen.decision != ScreenDecision::Skip) {
        for (int sign : {+1, -1}) {
          uint64_t sign_sweeps = 0;
          for (int j = 0; j < b; ++j) {
            const ScreenResult::PerInput& pi = screen.inputs[size_t(j)];
            bool sensitive = sign > 0 ? pi.pos_sensitive : pi.neg_sensitive;
            if (!sensitive) continue;
            bool below = sign > 0 ? pi.pos_below_probe : pi.neg_below_probe;
            float margin = sign > 0 ? pi.pos_margin : pi.neg_margin;
            SearchOutcome so = search_threshold(engine, j, s, n, sign, below,
                                                margin, cfg);
            if (so.found) {
              if (sign > 0) {
                bounds[size_t(j)].upper = so.threshold;
              } else {
                bounds[size_t(j)].lower = so.threshold;
              }
            }
            sign_sweeps = std::max(sign_sweeps, uint64_t(so.iterations));
            st.max_iterations =
                std::max(st.max_iterations, uint64_t(so.iterations));
            if (so.anomaly) ++st.anomalies;
          }
          st.search_sweeps += sign_sweeps;
        }
      }
      nv = neuron_ranges(NeuronRef{s, n}, bounds);
      nv.zero_grad_pos = screen.zero_grad_pos;
      nv.zero_grad_neg = screen.zero_grad_neg;
      nv.decision = screen.decision;
      st.probes = engine.probes_executed() - probes_before;
    }
    result.ranges[size_t(s)][size_t(n)] = nv;
    if (retain_per_input) {
      result.per_input_bounds[size_t(s)][size_t(n)] = std::move(bounds);
    }
  };

  if (w <= 1 || tasks.size() <= 1) {
    InjectionEngine engine(cache);
    for (size_t i = 0; i < tasks.size(); ++i) run_task(i, engine);
  } else {
    size_t nw = std::min<size_t>(size_t(w), tasks.size());
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (size_t t = 0; t < nw; ++t) {
      pool.emplace_back([&, t, nw] {
        InjectionEngine engine(cache);
        for (size_t i = t; i < tasks.size(); i += nw) run_task(i, engine);
      });
    }
    for (auto& th : pool) th.join();
  }

  AnalysisCounters& c = result.counters;
  for (const TaskStats& st : stats) {
    ++c.neurons_examined;
    if (st.closed_form) {
      ++c.neurons_closed_form;
      continue;
    }
    if (st.decision == ScreenDecision::Skip) {
      ++c.neurons_skipped;
    } else {
      ++c.neurons_searched;
    }
    c.forward_sweeps += st.screen_sweeps + st.search_sweeps;
    c.search_sweeps += st.search_sweeps;
    c.gradient_sweeps += st.gradient_sweeps;
    c.single_probes += st.probes;
    c.max_iterations_per_input_sign =
        std::max(c.max_iterations_per_input_sign, st.max_iterations);
    c.anomalies += st.anomalies;
  }

  result.factors = bitflip_map(cache, result.ranges, cfg, workers);
  return result;
}

}  // namespace vra
