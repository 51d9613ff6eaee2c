#pragma once

#include <string>
#include <vector>

#include "vra/analysis.hpp"
#include "vra/validation.hpp"

namespace vra {

// Shortest-round-trip decimal formatting (std::to_chars); infinities and NaN
// are spelled "inf"/"-inf"/"nan".
std::string fmt_f32(float v);
std::string fmt_f64(double v);
float parse_f32(const std::string& s);
double parse_f64(const std::string& s);

// ranges.csv: one record per analyzed neuron.
void write_ranges_csv(const std::string& path,
                      const std::vector<std::vector<NeuronVulnerability>>& ranges);
std::vector<std::vector<NeuronVulnerability>> read_ranges_csv(
    const std::string& path);

// factors_lvf.csv (header "layer,lvf_pct"), factors_nvf.csv, factors_bvf.csv.
void write_lvf_csv(const std::string& path, const VulnerabilityFactors& vf);
std::vector<std::pair<int, double>> read_lvf_csv(const std::string& path);
void write_nvf_csv(const std::string& path, const VulnerabilityFactors& vf);
void write_bvf_csv(const std::string& path, const VulnerabilityFactors& vf);

// campaign dump: layer,neuron,bit,input_index,golden,faulty,delta,category,
// outcome,faulty_top.
void write_campaign_csv(const std::string& path, const CampaignResult& c);
CampaignResult read_campaign_csv(const std::string& path);

// metrics.json: per-layer ValidationMetrics for one input set.
struct LayerMetrics {
  int surface = 0;
  uint64_t faults = 0;
  ValidationMetrics metrics;
};
void write_metrics_json(const std::string& path, const std::string& set_name,
                        const std::vector<LayerMetrics>& layers);
std::vector<LayerMetrics> read_metrics_json(const std::string& path,
                                            std::string* set_name = nullptr);

// Fig-5-style plot data: layer,lvf_pct,acc_loss_same_set,acc_loss_diff_set.
void write_correlation_csv(const std::string& path,
                           const CorrelationReport& report);
CorrelationReport read_correlation_csv(const std::string& path);

}  // namespace vra
