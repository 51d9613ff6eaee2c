// vra: vulnerability-range analysis for feed-forward classifiers.
//
// Subcommands:
//   fixture   train and persist the pinned fixture zoo (models + datasets)
//   analyze   compute per-neuron vulnerability ranges and LVF/NVF/BVF factors
//   validate  statistical fault-injection campaigns against saved ranges
//   report    print a human-readable summary of a run directory

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vra/analysis.hpp"
#include "vra/dataset.hpp"
#include "vra/errors.hpp"
#include "vra/fast_engine.hpp"
#include "vra/model_io.hpp"
#include "vra/parallel.hpp"
#include "vra/report_io.hpp"
#include "vra/rng.hpp"
#include "vra/sha256.hpp"
#include "vra/train.hpp"
#include "vra/validation.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct CommonOpts {
  std::string model_path;
  std::string data_dir;
  std::string out_dir;
  std::string set1_path;
  std::string set2_path;
  uint64_t seed = 7;
  int workers = vra::default_workers();
  bool verbose = false;
  // Analysis constants; defaults follow the experimental setup.
  double epsilon = 10000.0;
  double search_bound = 500000.0;
  double tolerance = 0.05;
  double zero_grad_threshold = 0.98;
  std::vector<int> layers;
};

vra::AnalysisConfig to_analysis_config(const CommonOpts& o) {
  vra::AnalysisConfig cfg;
  cfg.probe_epsilon = float(o.epsilon);
  cfg.search_bound = float(o.search_bound);
  cfg.tolerance = float(o.tolerance);
  cfg.zero_grad_threshold = float(o.zero_grad_threshold);
  cfg.seed = o.seed;
  return cfg;
}

Json config_echo(const vra::AnalysisConfig& cfg) {
  Json j;
  j["probe_epsilon"] = cfg.probe_epsilon;
  j["search_bound"] = cfg.search_bound;
  j["tolerance"] = cfg.tolerance;
  j["zero_grad_threshold"] = cfg.zero_grad_threshold;
  j["word_length"] = cfg.word_length;
  j["seed"] = cfg.seed;
  return j;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw vra::FormatError("cannot open " + path);
  out << content;
}

Json counters_json(const vra::AnalysisCounters& c) {
  Json j;
  j["neurons_examined"] = c.neurons_examined;
  j["neurons_skipped"] = c.neurons_skipped;
  j["neurons_searched"] = c.neurons_searched;
  j["neurons_closed_form"] = c.neurons_closed_form;
  j["forward_sweeps"] = c.forward_sweeps;
  j["search_sweeps"] = c.search_sweeps;
  j["gradient_sweeps"] = c.gradient_sweeps;
  j["single_probes"] = c.single_probes;
  j["max_iterations_per_input_sign"] = c.max_iterations_per_input_sign;
  j["anomalies"] = c.anomalies;
  j["screen_skip_fraction"] = c.skip_fraction();
  j["avg_sweeps_per_searched_neuron"] = c.avg_sweeps_per_searched_neuron();
  j["avg_sweeps_per_screened_neuron"] = c.avg_sweeps_per_screened_neuron();
  return j;
}

// ---------------------------------------------------------------- fixture --

struct FixtureSpec {
  std::string name;
  std::string data;  // data subdirectory
  vra::NetworkModel arch;
  vra::TrainConfig train;
};

int cmd_fixture(const CommonOpts& o) {
  fs::create_directories(o.out_dir + "/data/digits");
  fs::create_directories(o.out_dir + "/data/blobs3");
  fs::create_directories(o.out_dir + "/models");
  fs::create_directories(o.out_dir + "/manifests");

  // Digit-glyph dataset, IDX on disk.
  vra::Dataset train = vra::gen_digit_glyphs(2000, o.seed);
  vra::Dataset test = vra::gen_digit_glyphs(500, vra::mix_seed(o.seed, 0x7e57));
  std::string ddir = o.out_dir + "/data/digits";
  vra::save_idx_images(ddir + "/train-images.idx", train.data);
  vra::save_idx_labels(ddir + "/train-labels.idx", train.labels);
  vra::save_idx_images(ddir + "/test-images.idx", test.data);
  vra::save_idx_labels(ddir + "/test-labels.idx", test.labels);
  Json dj;
  dj["id"] = "digits-v1";
  dj["kind"] = "idx";
  dj["train_images"] = "train-images.idx";
  dj["train_labels"] = "train-labels.idx";
  dj["test_images"] = "test-images.idx";
  dj["test_labels"] = "test-labels.idx";
  dj["num_classes"] = 10;
  write_text(ddir + "/dataset.json", dj.dump(2) + "\n");

  Json bj;
  bj["id"] = "blobs3-v1";
  bj["kind"] = "synthetic";
  bj["num_classes"] = 3;
  bj["input_dim"] = 2;
  bj["samples_per_class"] = 400;
  bj["test_samples_per_class"] = 100;
  bj["cluster_separation"] = 8.0;
  bj["seed"] = vra::mix_seed(o.seed, 0xb10b);
  write_text(o.out_dir + "/data/blobs3/dataset.json", bj.dump(2) + "\n");

  std::vector<FixtureSpec> fixtures;
  {
    FixtureSpec f;
    f.name = "mlp_sigmoid";
    f.data = "digits";
    f.arch = vra::make_mlp({784, 64, 32, 10}, true, {1, 28, 28});
    f.train = {vra::mix_seed(o.seed, 1), 30, 0.5, 32};
    fixtures.push_back(std::move(f));
  }
  {
    FixtureSpec f;
    f.name = "mlp_relu";
    f.data = "digits";
    f.arch = vra::make_mlp({784, 64, 32, 10}, false, {1, 28, 28});
    f.train = {vra::mix_seed(o.seed, 2), 20, 0.1, 32};
    fixtures.push_back(std::move(f));
  }
  {
    FixtureSpec f;
    f.name = "lenet";
    f.data = "digits";
    f.arch = vra::make_lenet();
    f.train = {vra::mix_seed(o.seed, 3), 10, 0.08, 32};
    fixtures.push_back(std::move(f));
  }
  {
    FixtureSpec f;
    f.name = "synth_mlp";
    f.data = "blobs3";
    f.arch = vra::make_mlp({2, 16, 3}, false, {2});
    f.train = {vra::mix_seed(o.seed, 4), 40, 0.05, 16};
    fixtures.push_back(std::move(f));
  }

  Json manifest;
  manifest["seed"] = o.seed;
  Json models = Json::array();
  for (const FixtureSpec& f : fixtures) {
    vra::Dataset ftrain = vra::load_dataset_dir(o.out_dir + "/data/" + f.data, "train");
    vra::Dataset ftest = vra::load_dataset_dir(o.out_dir + "/data/" + f.data, "test");
    vra::NetworkModel init = vra::init_weights(f.arch, f.train.seed);
    vra::TrainResult tr = vra::train_fixture(init, ftrain, &ftest, f.train);
    vra::ModelMeta meta;
    meta.seed = f.train.seed;
    meta.dataset_id = ftrain.id;
    meta.train_accuracy = tr.train_accuracy;
    meta.test_accuracy = tr.test_accuracy;
    meta.epochs = f.train.epochs;
    meta.learning_rate = f.train.learning_rate;
    std::string mpath = o.out_dir + "/models/" + f.name + ".vrm";
    vra::save_model(tr.model, meta, mpath);

    // Analysis set (set1) from the train split, held-out set (set2) = test.
    vra::Rng rng(vra::mix_seed(o.seed, 0x5e7 + uint64_t(f.name.size()) * 131 +
                                           uint64_t(f.name[0])));
    int set1_size = std::min(200, ftrain.size());
    std::vector<int> all(static_cast<size_t>(ftrain.size()));
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
    for (int i = int(all.size()) - 1; i > 0; --i) {
      int r = int(rng.next_below(uint64_t(i + 1)));
      std::swap(all[size_t(i)], all[size_t(r)]);
    }
    std::vector<int> set1(all.begin(), all.begin() + set1_size);
    std::sort(set1.begin(), set1.end());
    std::vector<int> set2(static_cast<size_t>(ftest.size()));
    for (size_t i = 0; i < set2.size(); ++i) set2[i] = int(i);
    std::string m1 = o.out_dir + "/manifests/" + f.name + ".set1.txt";
    std::string m2 = o.out_dir + "/manifests/" + f.name + ".set2.txt";
    vra::save_manifest(m1, "dataset " + f.data + " split train", set1);
    vra::save_manifest(m2, "dataset " + f.data + " split test", set2);

    Json mj;
    mj["name"] = f.name;
    mj["model"] = "models/" + f.name + ".vrm";
    mj["data"] = "data/" + f.data;
    mj["set1"] = "manifests/" + f.name + ".set1.txt";
    mj["set2"] = "manifests/" + f.name + ".set2.txt";
    mj["train_accuracy"] = tr.train_accuracy;
    mj["test_accuracy"] = tr.test_accuracy;
    mj["model_sha256"] = vra::Sha256::of_file(mpath);
    models.push_back(std::move(mj));
    if (o.verbose) {
      std::cerr << f.name << ": train acc " << tr.train_accuracy
                << ", test acc " << tr.test_accuracy << "\n";
    }
  }
  manifest["models"] = std::move(models);
  write_text(o.out_dir + "/fixture_manifest.json", manifest.dump(2) + "\n");
  std::cout << "fixture zoo written to " << o.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------- analyze --

int cmd_analyze(const CommonOpts& o) {
  vra::AnalysisConfig cfg = to_analysis_config(o);
  cfg.validate();
  fs::create_directories(o.out_dir);

  vra::LoadedModel lm = vra::load_model(o.model_path);
  vra::Dataset train = vra::load_dataset_dir(o.data_dir, "train");
  std::vector<int> set1 = vra::load_manifest(o.set1_path);
  vra::GoldenCache cache =
      vra::GoldenCache::build(lm.model, train.data, set1, o.workers);
  vra::AnalysisResult result =
      vra::analyze_model(cache, cfg, o.workers, o.layers, false);

  std::string ranges_path = o.out_dir + "/ranges.csv";
  vra::write_ranges_csv(ranges_path, result.ranges);
  vra::write_lvf_csv(o.out_dir + "/factors_lvf.csv", result.factors);
  vra::write_nvf_csv(o.out_dir + "/factors_nvf.csv", result.factors);
  vra::write_bvf_csv(o.out_dir + "/factors_bvf.csv", result.factors);

  Json manifest;
  manifest["command"] = "analyze";
  manifest["model"] = o.model_path;
  manifest["inputs"] = {
      {"model_sha256", vra::Sha256::of_file(o.model_path)},
      {"set1_sha256", vra::Sha256::of_file(o.set1_path)},
      {"dataset_json_sha256", vra::Sha256::of_file(o.data_dir + "/dataset.json")},
  };
  manifest["analysis_inputs"] = set1.size();
  manifest["config"] = config_echo(cfg);
  if (!o.layers.empty()) manifest["layer_filter"] = o.layers;
  manifest["counters"] = counters_json(result.counters);
  Json outputs = Json::object();
  for (const char* f : {"ranges.csv", "factors_lvf.csv", "factors_nvf.csv",
                        "factors_bvf.csv"}) {
    outputs[f] = vra::Sha256::of_file(o.out_dir + "/" + f);
  }
  manifest["outputs"] = std::move(outputs);
  write_text(o.out_dir + "/run_manifest.json", manifest.dump(2) + "\n");

  if (o.verbose) {
    std::cerr << "examined " << result.counters.neurons_examined
              << " neurons, skipped " << result.counters.neurons_skipped
              << ", avg sweeps/searched "
              << result.counters.avg_sweeps_per_searched_neuron() << "\n";
  }
  std::cout << "analysis written to " << o.out_dir << "\n";
  return 0;
}

// --------------------------------------------------------------- validate --

int cmd_validate(const CommonOpts& o, const std::string& ranges_dir) {
  fs::create_directories(o.out_dir);
  std::string ranges_path = ranges_dir + "/ranges.csv";
  if (!fs::exists(ranges_path)) {
    throw vra::FormatError("validate: missing ranges file " + ranges_path);
  }
  vra::LoadedModel lm = vra::load_model(o.model_path);
  std::vector<std::vector<vra::NeuronVulnerability>> ranges =
      vra::read_ranges_csv(ranges_path);
  std::vector<std::pair<int, double>> lvf =
      vra::read_lvf_csv(ranges_dir + "/factors_lvf.csv");

  vra::Dataset train = vra::load_dataset_dir(o.data_dir, "train");
  vra::Dataset test = vra::load_dataset_dir(o.data_dir, "test");
  std::vector<int> set1 = vra::load_manifest(o.set1_path);
  std::vector<int> set2 = vra::load_manifest(o.set2_path);

  vra::GoldenCache cache1 =
      vra::GoldenCache::build(lm.model, train.data, set1, o.workers);
  vra::GoldenCache cache2 =
      vra::GoldenCache::build(lm.model, test.data, set2, o.workers);
  std::vector<int> labels1, labels2;
  for (int i : set1) labels1.push_back(train.labels[size_t(i)]);
  for (int i : set2) labels2.push_back(test.labels[size_t(i)]);
  if (ranges.size() > cache1.surfaces.size()) {
    throw vra::FormatError("validate: ranges list more layers than the model");
  }

  struct SetRun {
    const char* name;
    vra::GoldenCache* cache;
    std::vector<int>* labels;
    uint64_t tag;
  };
  SetRun runs[2] = {{"set1", &cache1, &labels1, 1}, {"set2", &cache2, &labels2, 2}};

  std::vector<int> analyzed_surfaces;
  for (size_t s = 0; s < ranges.size(); ++s) {
    if (!ranges[s].empty()) analyzed_surfaces.push_back(int(s));
  }
  if (analyzed_surfaces.empty()) {
    throw vra::FormatError("validate: ranges file lists no analyzed layers");
  }

  std::vector<double> acc_loss_same, acc_loss_diff;
  Json manifest;
  manifest["command"] = "validate";
  Json outputs = Json::object();

  for (SetRun& run : runs) {
    std::vector<vra::LayerMetrics> per_layer;
    std::string campaign_path = o.out_dir + "/campaign_" + run.name + ".csv";
    vra::CampaignResult merged;  // all layers, one dump per set
    for (int s : analyzed_surfaces) {
      uint64_t seed = vra::mix_seed(vra::mix_seed(o.seed, run.tag), uint64_t(s));
      vra::CampaignResult campaign =
          vra::run_campaign(*run.cache, s, ranges[size_t(s)], seed, o.workers);
      vra::LayerMetrics lmx;
      lmx.surface = s;
      lmx.faults = campaign.total();
      lmx.metrics = vra::validate(campaign);
      per_layer.push_back(lmx);
      double loss = vra::campaign_accuracy_loss(*run.cache, *run.labels, campaign);
      (run.tag == 1 ? acc_loss_same : acc_loss_diff).push_back(loss);
      if (o.verbose) {
        std::cerr << run.name << " layer " << s << ": " << campaign.total()
                  << " faults, non-critical "
                  << lmx.metrics.non_critical_fraction_pct << "%\n";
      }
      merged.faults.insert(merged.faults.end(), campaign.faults.begin(),
                           campaign.faults.end());
    }
    vra::write_campaign_csv(campaign_path, merged);
    std::string metrics_path =
        o.out_dir + "/metrics_" + std::string(run.name) + ".json";
    vra::write_metrics_json(metrics_path, run.name, per_layer);
    outputs["campaign_" + std::string(run.name) + ".csv"] =
        vra::Sha256::of_file(campaign_path);
    outputs["metrics_" + std::string(run.name) + ".json"] =
        vra::Sha256::of_file(metrics_path);
  }

  // Correlation report (defined for >= 3 analyzed layers).
  Json summary;
  summary["analyzed_layers"] = analyzed_surfaces;
  if (analyzed_surfaces.size() >= 3) {
    std::vector<double> lvf_vec;
    for (int s : analyzed_surfaces) {
      double v = 0.0;
      bool found = false;
      for (auto& [layer, pct] : lvf) {
        if (layer == s) {
          v = pct;
          found = true;
          break;
        }
      }
      if (!found) {
        throw vra::FormatError("validate: factors_lvf.csv lacks layer " +
                               std::to_string(s));
      }
      lvf_vec.push_back(v);
    }
    vra::CorrelationReport rep = vra::lvf_accuracy_correlation(
        analyzed_surfaces, lvf_vec, acc_loss_same, acc_loss_diff);
    vra::write_correlation_csv(o.out_dir + "/lvf_accuracy.csv", rep);
    summary["spearman_same_set"] =
        rep.rho_same ? Json(*rep.rho_same) : Json("undefined");
    summary["spearman_diff_set"] =
        rep.rho_diff ? Json(*rep.rho_diff) : Json("undefined");
    outputs["lvf_accuracy.csv"] =
        vra::Sha256::of_file(o.out_dir + "/lvf_accuracy.csv");
  } else {
    summary["spearman_same_set"] = "undefined";
    summary["spearman_diff_set"] = "undefined";
  }

  manifest["inputs"] = {
      {"model_sha256", vra::Sha256::of_file(o.model_path)},
      {"ranges_sha256", vra::Sha256::of_file(ranges_path)},
      {"set1_sha256", vra::Sha256::of_file(o.set1_path)},
      {"set2_sha256", vra::Sha256::of_file(o.set2_path)},
  };
  manifest["seed"] = o.seed;
  manifest["summary"] = std::move(summary);
  manifest["outputs"] = std::move(outputs);
  write_text(o.out_dir + "/run_manifest.json", manifest.dump(2) + "\n");
  std::cout << "validation written to " << o.out_dir << "\n";
  return 0;
}

// ----------------------------------------------------------------- report --

int cmd_report(const std::string& dir) {
  bool printed = false;
  if (fs::exists(dir + "/factors_lvf.csv")) {
    auto lvf = vra::read_lvf_csv(dir + "/factors_lvf.csv");
    std::cout << "layer vulnerability factors:\n";
    for (auto& [layer, pct] : lvf) {
      std::cout << "  layer " << layer << ": LVF " << pct << "%\n";
    }
    printed = true;
  }
  for (const char* set : {"set1", "set2"}) {
    std::string path = dir + "/metrics_" + std::string(set) + ".json";
    if (!fs::exists(path)) continue;
    auto layers = vra::read_metrics_json(path);
    std::cout << "validation metrics (" << set << "):\n";
    for (const vra::LayerMetrics& lm : layers) {
      std::cout << "  layer " << lm.surface << ": " << lm.faults << " faults";
      if (lm.metrics.true_non_critical_pct) {
        std::cout << ", true non-critical " << *lm.metrics.true_non_critical_pct
                  << "%";
      }
      if (lm.metrics.true_critical_pct) {
        std::cout << ", true critical " << *lm.metrics.true_critical_pct << "%";
      }
      std::cout << ", non-critical fraction "
                << lm.metrics.non_critical_fraction_pct << "%\n";
    }
    printed = true;
  }
  if (fs::exists(dir + "/lvf_accuracy.csv")) {
    vra::CorrelationReport rep =
        vra::read_correlation_csv(dir + "/lvf_accuracy.csv");
    std::cout << "LVF vs accuracy-loss Spearman: same-set "
              << (rep.rho_same ? std::to_string(*rep.rho_same) : "undefined")
              << ", cross-set "
              << (rep.rho_diff ? std::to_string(*rep.rho_diff) : "undefined")
              << "\n";
    printed = true;
  }
  if (fs::exists(dir + "/run_manifest.json")) {
    std::ifstream in(dir + "/run_manifest.json");
    Json j;
    in >> j;
    if (j.contains("counters")) {
      const Json& c = j["counters"];
      std::cout << "instrumentation: " << c["neurons_examined"]
                << " neurons examined, skip fraction "
                << c["screen_skip_fraction"] << ", avg sweeps/searched neuron "
                << c["avg_sweeps_per_searched_neuron"]
                << ", max per-(input,sign) "
                << c["max_iterations_per_input_sign"] << "\n";
    }
    printed = true;
  }
  if (!printed) {
    std::cerr << "report: nothing to report in " << dir << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vulnerability-range analysis for feed-forward classifiers"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string ranges_dir, report_dir;

  auto add_common = [&](CLI::App* c, bool needs_model) {
    if (needs_model) {
      c->add_option("--model", o.model_path, "model file (.vrm)")->required();
      c->add_option("--data", o.data_dir, "dataset directory")->required();
    }
    c->add_option("--out", o.out_dir, "output directory")->required();
    c->add_option("--seed", o.seed, "run seed");
    c->add_option("--workers", o.workers, "worker threads");
    c->add_flag("--verbose", o.verbose, "progress logging to stderr");
  };

  CLI::App* fixture = app.add_subcommand("fixture", "train the fixture zoo");
  add_common(fixture, false);

  CLI::App* analyze = app.add_subcommand("analyze", "compute vulnerability ranges");
  add_common(analyze, true);
  analyze->add_option("--set1", o.set1_path, "analysis-set manifest")->required();
  analyze->add_option("--epsilon", o.epsilon, "probe epsilon");
  analyze->add_option("--search-bound", o.search_bound, "search domain bound");
  analyze->add_option("--tolerance", o.tolerance, "threshold tolerance");
  analyze->add_option("--zero-grad-threshold", o.zero_grad_threshold,
                      "zero-gradient skip threshold");
  analyze->add_option("--layers", o.layers, "surface indices to analyze")
      ->delimiter(',');

  CLI::App* validate = app.add_subcommand("validate", "fault-injection validation");
  add_common(validate, true);
  validate->add_option("--set1", o.set1_path, "analysis-set manifest")->required();
  validate->add_option("--set2", o.set2_path, "held-out-set manifest")->required();
  validate->add_option("--ranges", ranges_dir, "analyze output directory")->required();

  CLI::App* report = app.add_subcommand("report", "summarize a run directory");
  report->add_option("--dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(fixture)) return cmd_fixture(o);
    if (app.got_subcommand(analyze)) return cmd_analyze(o);
    if (app.got_subcommand(validate)) return cmd_validate(o, ranges_dir);
    if (app.got_subcommand(report)) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
