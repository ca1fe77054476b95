#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fairlens/bench.hpp"
#include "fairlens/engine.hpp"
#include "fairlens/logging.hpp"
#include "fairlens/util.hpp"

namespace {

using namespace fairlens;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

DatasetFormat format_from_flag(const std::string& flag,
                               DatasetFormat config_default) {
  if (flag.empty()) return config_default;
  if (flag == "csv") return DatasetFormat::csv;
  if (flag == "jsonlines") return DatasetFormat::jsonlines;
  throw ConfigError("--dataset-format must be csv or jsonlines");
}

struct DatasetArgs {
  std::string config_path;
  std::string dataset_path;
  std::string format_flag;
  bool header = false;
  bool no_header = false;

  std::optional<bool> header_hint() const {
    if (header) return true;
    if (no_header) return false;
    return std::nullopt;
  }
};

void add_dataset_options(CLI::App* cmd, DatasetArgs& args) {
  cmd->add_option("--config", args.config_path, "analysis config JSON")
      ->required();
  cmd->add_option("--dataset", args.dataset_path, "dataset file")->required();
  cmd->add_option("--dataset-format", args.format_flag,
                  "csv or jsonlines (default: config dataset_type)");
  cmd->add_flag("--header", args.header, "first dataset row is a header");
  cmd->add_flag("--no-header", args.no_header, "dataset has no header row");
}

int run_command(const DatasetArgs& args, const std::string& output_dir,
                int workers, std::uint64_t seed) {
  const std::string config_bytes = read_file(args.config_path);
  const std::string dataset_bytes = read_file(args.dataset_path);

  // Peek at dataset_type for the format default, full validation follows.
  DatasetFormat format = DatasetFormat::csv;
  {
    auto peek = nlohmann::json::parse(config_bytes, nullptr, false);
    if (peek.is_object() &&
        peek.value("dataset_type", "") == "application/jsonlines") {
      format = DatasetFormat::jsonlines;
    }
  }
  format = format_from_flag(args.format_flag, format);

  TabularDataset ds = parse_dataset(dataset_bytes, format, args.header_hint());
  const AnalysisConfig cfg = validate(config_bytes, ds);

  JobOptions opts;
  opts.workers = workers;
  opts.seed = seed;
  opts.config_digest = digest_hex(config_bytes);
  opts.dataset_digest = digest_hex(dataset_bytes);

  const AnalysisReport report = run_job(cfg, ds, opts);
  emit_reports(report, output_dir);
  std::printf("wrote %s/analysis.json (%zu rows, %zu warnings)\n",
              output_dir.c_str(), report.rows, report.warnings.size());
  return 0;
}

int baseline_command(const std::string& from_report, double margin,
                     const std::string& output) {
  const MonitorBaseline baseline =
      baseline_from_report(read_file(from_report), margin);
  write_file_atomic(output, monitor_baseline_to_json(baseline));
  std::printf("wrote %s (%zu metric ranges, %zu reference features)\n",
              output.c_str(), baseline.bias_ranges.size(),
              baseline.reference_importance.size());
  return 0;
}

int monitor_command(const DatasetArgs& args, const std::string& baseline_path,
                    const std::string& output_dir, int workers,
                    std::uint64_t seed, std::optional<int> resamples) {
  const std::string config_bytes = read_file(args.config_path);
  const std::string dataset_bytes = read_file(args.dataset_path);
  const MonitorBaseline baseline = load_monitor_baseline(baseline_path);

  DatasetFormat format = DatasetFormat::csv;
  {
    auto peek = nlohmann::json::parse(config_bytes, nullptr, false);
    if (peek.is_object() &&
        peek.value("dataset_type", "") == "application/jsonlines") {
      format = DatasetFormat::jsonlines;
    }
  }
  format = format_from_flag(args.format_flag, format);

  TabularDataset ds = parse_dataset(dataset_bytes, format, args.header_hint());
  const AnalysisConfig cfg =
      validate(config_bytes, ds, ValidateMode::monitor);

  MonitorOptions opts;
  opts.workers = workers;
  opts.seed = seed;
  opts.resamples = resamples;

  const MonitorRunResult result = run_monitor(cfg, ds, baseline, opts);
  std::error_code ec;
  std::filesystem::create_directories(output_dir, ec);
  write_file_atomic(output_dir + "/monitor.json", monitor_json(result));
  std::printf("wrote %s/monitor.json (%zu alerts checked, %s)\n",
              output_dir.c_str(), result.alerts.size(),
              result.any_alert_fired ? "ALERT FIRED" : "no alerts");
  return result.any_alert_fired ? 2 : 0;
}

int bench_command(std::size_t rows, const std::string& workers_csv,
                  const std::string& phase, const std::string& output,
                  std::uint64_t seed) {
  std::vector<int> workers;
  std::stringstream ss(workers_csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) workers.push_back(std::stoi(tok));
  }
  if (workers.empty()) throw ConfigError("--workers list must not be empty");
  if (rows == 0) throw ConfigError("--rows must be positive");

  const TabularDataset seed_ds = make_credit_fixture(1000, seed);
  OversampleSpec spec;
  spec.target_rows = rows;
  spec.seed = seed;
  const TabularDataset ds =
      rows == seed_ds.row_count ? seed_ds : oversample(seed_ds, spec);

  // Train a logistic model on the fixture and target it as a local model.
  std::vector<std::size_t> feat_cols;
  for (std::size_t j = 2; j < ds.columns.size(); ++j) feat_cols.push_back(j);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.row_count),
                    static_cast<Eigen::Index>(feat_cols.size()));
  for (std::size_t jj = 0; jj < feat_cols.size(); ++jj) {
    x.col(static_cast<Eigen::Index>(jj)) =
        ds.column(feat_cols[jj]).numeric_values().matrix();
  }
  OutcomeSpec outcome;
  outcome.label = ColumnRef::by_name("Class1Good2Bad");
  outcome.positive_values = {"1"};
  const BinaryVector y = binarize_labels(ds, outcome);
  const LinearModel model = fit_logistic(x, y);

  const std::string model_path = output + ".model.json";
  write_file_atomic(model_path, local_model_to_json(model));

  nlohmann::json config = {
      {"dataset_type", "text/csv"},
      {"label", "Class1Good2Bad"},
      {"label_values_or_threshold", {1}},
      {"facet", {{{"name_or_index", "ForeignWorker"}, {"value_or_threshold", {1}}}}},
      {"group_variable", "A151"},
      {"predictor", {{"local_model", model_path}}},
  };
  if (phase == "pre_bias") {
    config["methods"] = {{"pre_training_bias", {{"methods", "all"}}}};
  } else if (phase == "post_bias") {
    config["methods"] = {{"post_training_bias", {{"methods", "all"}}}};
  } else if (phase == "shap") {
    config["methods"] = {
        {"shap", {{"num_samples", 512}, {"agg_method", "mean_abs"}}}};
  } else {
    throw ConfigError("--phase must be pre_bias, post_bias or shap");
  }

  const ScalingResult result =
      scaling_run(ds, config.dump(), workers, phase, seed);
  write_file_atomic(output, timings_to_csv(result.records));

  bool digests_match = true;
  for (const auto& d : result.digests) {
    digests_match = digests_match && d == result.digests[0];
  }
  for (const auto& r : result.records) {
    std::printf("%s rows=%zu workers=%d wall=%.3fs\n", r.phase.c_str(), r.rows,
                r.workers, r.wall_seconds);
  }
  std::printf("digests %s\n", digests_match ? "identical" : "DIFFER");
  return digests_match ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fairness and explainability engine for tabular models"};
  app.require_subcommand(1);

  DatasetArgs run_args;
  std::string run_output = "out";
  int run_workers = 1;
  std::uint64_t run_seed = 0;
  CLI::App* run = app.add_subcommand("run", "run an analysis job");
  add_dataset_options(run, run_args);
  run->add_option("--output", run_output, "output directory")->required();
  run->add_option("--workers", run_workers, "worker threads");
  run->add_option("--seed", run_seed, "RNG seed");

  std::string baseline_from;
  double baseline_margin = 0.1;
  std::string baseline_output;
  CLI::App* baseline =
      app.add_subcommand("baseline", "derive a monitor baseline from a report");
  baseline->add_option("--from-report", baseline_from, "analysis.json path")
      ->required();
  baseline->add_option("--bias-margin", baseline_margin,
                       "range half-width as a fraction of |value|");
  baseline->add_option("--output", baseline_output, "baseline JSON path")
      ->required();

  DatasetArgs monitor_args;
  std::string monitor_baseline_path;
  std::string monitor_output = "out";
  int monitor_workers = 1;
  std::uint64_t monitor_seed = 0;
  int monitor_resamples = -1;
  CLI::App* monitor =
      app.add_subcommand("monitor", "check a live batch against a baseline");
  add_dataset_options(monitor, monitor_args);
  monitor->add_option("--baseline", monitor_baseline_path, "baseline JSON")
      ->required();
  monitor->add_option("--output", monitor_output, "output directory")
      ->required();
  monitor->add_option("--workers", monitor_workers, "worker threads");
  monitor->add_option("--seed", monitor_seed, "RNG seed");
  monitor->add_option("--resamples", monitor_resamples,
                      "bootstrap resamples (default: config monitor.resamples)");

  std::size_t bench_rows = 1000;
  std::string bench_workers = "1,2,4";
  std::string bench_phase = "shap";
  std::string bench_output = "timings.csv";
  std::uint64_t bench_seed = 7;
  CLI::App* bench = app.add_subcommand("bench", "desk-scale timing harness");
  bench->add_option("--rows", bench_rows, "dataset rows (oversampled fixture)");
  bench->add_option("--workers", bench_workers, "comma-separated worker counts");
  bench->add_option("--phase", bench_phase, "pre_bias, post_bias or shap");
  bench->add_option("--output", bench_output, "timings CSV path");
  bench->add_option("--seed", bench_seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return run_command(run_args, run_output, run_workers, run_seed);
    }
    if (baseline->parsed()) {
      return baseline_command(baseline_from, baseline_margin, baseline_output);
    }
    if (monitor->parsed()) {
      return monitor_command(
          monitor_args, monitor_baseline_path, monitor_output, monitor_workers,
          monitor_seed,
          monitor_resamples > 0 ? std::optional<int>(monitor_resamples)
                                : std::nullopt);
    }
    if (bench->parsed()) {
      return bench_command(bench_rows, bench_workers, bench_phase, bench_output,
                           bench_seed);
    }
  } catch (const fairlens::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
