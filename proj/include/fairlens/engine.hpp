#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairlens/bias_core.hpp"
#include "fairlens/bias_post.hpp"
#include "fairlens/kernel_shap.hpp"
#include "fairlens/model_client.hpp"
#include "fairlens/monitor.hpp"
#include "fairlens/tabular.hpp"

namespace fairlens {

inline constexpr const char* kEngineVersion = "0.1.0";

// "all" expansions, frozen per release and echoed into the report.
const std::vector<std::string>& all_pre_training_metrics();
const std::vector<std::string>& all_post_training_metrics();

struct ShapMethodConfig {
  std::optional<std::string> baseline_path;
  int num_samples = 3000;
  AggMethod agg = AggMethod::mean_abs;
};

struct ReportMethodConfig {
  std::string name = "report";
  std::string title = "Analysis Report";
};

// Fully resolved analysis configuration (defaults applied, columns checked).
struct AnalysisConfig {
  DatasetFormat dataset_format = DatasetFormat::csv;

  OutcomeSpec outcome;
  bool label_available = true;  // monitor runs tolerate a missing label column
  std::vector<FacetSpec> facets;
  std::vector<std::string> facet_keys;
  std::optional<std::string> group_variable;

  std::optional<std::vector<std::string>> pre_methods;   // expanded
  std::optional<std::vector<std::string>> post_methods;  // expanded
  std::optional<ShapMethodConfig> shap;
  std::optional<ReportMethodConfig> report;

  std::optional<PredictorConfig> predictor;
  double probability_threshold = 0.5;
  std::vector<std::string> positive_classes;  // label-mode prediction rule
  int flip_test_k = 5;
  int monitor_resamples = 1000;
};

enum class ValidateMode { run, monitor };

// Parses and validates the analysis config against the dataset: strict schema
// (unknown keys are errors named by JSON path), cross-field rules, column
// existence. Applies per-column kind overrides to the dataset.
AnalysisConfig validate(const std::string& config_bytes, TabularDataset& ds,
                        ValidateMode mode = ValidateMode::run);

struct ReportWarning {
  std::string step;     // validate | pre_training_bias | post_training_bias | shap
  std::string code;     // error code or flag name
  std::string message;
};

struct MetricEntry {
  std::optional<double> value;  // nullopt = undefined (zero denominator)
  bool infinite = false;        // +inf divergence sentinel
  std::vector<std::string> flags;
  std::vector<StratumDisparity> strata;  // conditional metrics only
};

struct FacetSection {
  std::string facet_key;
  std::map<std::string, MetricEntry> pre;
  std::map<std::string, MetricEntry> post;
};

struct AnalysisReport {
  std::string engine_version = kEngineVersion;
  std::string config_digest;
  std::string dataset_digest;
  std::size_t rows = 0;
  std::uint64_t seed = 0;

  std::vector<std::string> pre_methods_echo;
  std::vector<std::string> post_methods_echo;

  std::vector<FacetSection> facets;

  bool has_explanations = false;
  AttributionResult attributions;

  bool report_requested = false;
  std::string report_name = "report";
  std::string report_title = "Analysis Report";

  std::vector<ReportWarning> warnings;
};

struct JobOptions {
  int workers = 1;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::string dataset_digest;
};

// Runs the batch pipeline: pre-training bias, post-training bias,
// explanations. A failing step degrades to a warning; FatalJobError only when
// no requested method produced output.
AnalysisReport run_job(const AnalysisConfig& cfg, const TabularDataset& ds,
                       const JobOptions& opts);

// Canonical report serialization: sorted keys, floats at 12 significant
// digits. (dataset bytes, config bytes, seed) fully determine these bytes.
std::string analysis_json(const AnalysisReport& report);

// Static, self-contained HTML rendering of the report.
std::string render_html(const AnalysisReport& report);

// Writes analysis.json (atomically), explanations_shap/out.csv and the HTML
// report into out_dir.
void emit_reports(const AnalysisReport& report, const std::string& out_dir);

// Reference ranges from a finished report: point +/- margin * |point| per
// defined finite metric, plus the global importance ranking.
MonitorBaseline baseline_from_report(const std::string& analysis_json_text,
                                     double bias_margin);

struct MonitorRunResult {
  std::map<std::string, BootstrapResult> bootstrap;
  std::vector<DriftAlert> alerts;
  std::optional<double> ndcg;
  std::vector<ReportWarning> warnings;
  bool any_alert_fired = false;
};

struct MonitorOptions {
  int workers = 1;
  std::uint64_t seed = 0;
  std::optional<int> resamples;  // overrides the config when set
};

// One-shot monitor pass: bootstraps every baseline bias metric computable on
// the live batch, checks range overlap, and compares the live importance
// ranking by nDCG when explanations are configured.
MonitorRunResult run_monitor(const AnalysisConfig& cfg, const TabularDataset& ds,
                             const MonitorBaseline& baseline,
                             const MonitorOptions& opts);

std::string monitor_json(const MonitorRunResult& result);

void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace fairlens
