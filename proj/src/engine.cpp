#include "fairlens/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairlens/logging.hpp"
#include "fairlens/util.hpp"

namespace fairlens {

namespace {

using nlohmann::json;

const std::vector<std::string> kPreAll = {"CI", "DPL",  "KL", "JS",
                                          "LP", "TVD", "KS", "CDDL"};
const std::vector<std::string> kPostAll = {"DPPL", "DI",  "DCA", "DCR",
                                           "AD",   "RD",  "DAR", "DRR",
                                           "TE",   "CDDPL", "FT"};

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  std::vector<std::string> unknown;
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) unknown.push_back(path.empty() ? key : path + "." + key);
  }
  if (!unknown.empty()) {
    std::string joined;
    for (std::size_t i = 0; i < unknown.size(); ++i) {
      if (i > 0) joined += ", ";
      joined += unknown[i];
    }
    throw SchemaError("unknown config keys: " + joined);
  }
}

std::string scalar_to_token(const json& v, const std::string& path) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw SchemaError(path + " must be a string or number");
}

ColumnRef parse_column_ref(const json& v, const std::string& path) {
  if (v.is_string()) return ColumnRef::by_name(v.get<std::string>());
  if (v.is_number_integer()) {
    const auto idx = v.get<std::int64_t>();
    if (idx < 0) throw SchemaError(path + " index must be nonnegative");
    return ColumnRef::by_index(static_cast<std::size_t>(idx));
  }
  throw SchemaError(path + " must be a column name or index");
}

// label_values_or_threshold / value_or_threshold: an array or scalar string
// selects raw values; a scalar number is a threshold.
void parse_values_or_threshold(const json& v, const std::string& path,
                               std::vector<std::string>& values,
                               std::optional<double>& threshold) {
  if (v.is_array()) {
    if (v.empty()) throw SchemaError(path + " must not be an empty list");
    for (std::size_t i = 0; i < v.size(); ++i) {
      values.push_back(scalar_to_token(v.at(i), path + "[" + std::to_string(i) + "]"));
    }
    return;
  }
  if (v.is_number()) {
    threshold = v.get<double>();
    return;
  }
  if (v.is_string()) {
    values.push_back(v.get<std::string>());
    return;
  }
  throw SchemaError(path + " must be a list of values or a numeric threshold");
}

std::vector<std::string> parse_methods_list(const json& v, const std::string& path,
                                            const std::vector<std::string>& all) {
  if (v.is_string()) {
    if (v.get<std::string>() != "all") {
      throw SchemaError(path + " must be \"all\" or a list of metric names");
    }
    return all;
  }
  if (!v.is_array()) {
    throw SchemaError(path + " must be \"all\" or a list of metric names");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string name =
        scalar_to_token(v.at(i), path + "[" + std::to_string(i) + "]");
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw SchemaError(path + "[" + std::to_string(i) + "]: unknown metric '" +
                        name + "'");
    }
    out.push_back(name);
  }
  if (out.empty()) throw SchemaError(path + " must not be empty");
  return out;
}

FieldSelector parse_selector(const json& v, const std::string& path) {
  if (v.is_number_integer()) {
    const auto idx = v.get<std::int64_t>();
    if (idx < 0) throw SchemaError(path + " index must be nonnegative");
    return static_cast<std::size_t>(idx);
  }
  if (v.is_string()) return v.get<std::string>();
  throw SchemaError(path + " must be a field index or name");
}

void resolve_column(const ColumnRef& ref, const TabularDataset& ds,
                    const std::string& path) {
  try {
    ref.resolve(ds);
  } catch (const MissingColumn& e) {
    throw ColumnNotFound(path + ": " + e.what());
  }
}

}  // namespace

const std::vector<std::string>& all_pre_training_metrics() { return kPreAll; }
const std::vector<std::string>& all_post_training_metrics() { return kPostAll; }

AnalysisConfig validate(const std::string& config_bytes, TabularDataset& ds,
                        ValidateMode mode) {
  json doc = json::parse(config_bytes, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw SchemaError("analysis config is not a JSON object");
  }
  check_keys(doc, "",
             {"dataset_type", "label", "label_values_or_threshold", "facet",
              "group_variable", "column_kinds", "probability_threshold",
              "positive_classes", "methods", "predictor", "monitor"});

  AnalysisConfig cfg;

  if (!doc.contains("dataset_type")) {
    throw SchemaError("dataset_type is required");
  }
  const std::string dataset_type = doc.at("dataset_type").get<std::string>();
  if (dataset_type == "text/csv") {
    cfg.dataset_format = DatasetFormat::csv;
  } else if (dataset_type == "application/jsonlines") {
    cfg.dataset_format = DatasetFormat::jsonlines;
  } else {
    throw SchemaError("dataset_type must be text/csv or application/jsonlines");
  }

  // Column kind overrides come first; later checks see the final kinds.
  if (doc.contains("column_kinds")) {
    if (!doc.at("column_kinds").is_object()) {
      throw SchemaError("column_kinds must be an object");
    }
    for (const auto& [name, kind] : doc.at("column_kinds").items()) {
      const std::string path = "column_kinds." + name;
      Column* col = nullptr;
      for (auto& c : ds.columns) {
        if (c.name == name) col = &c;
      }
      if (col == nullptr) throw ColumnNotFound(path + ": no such column");
      const std::string k = kind.get<std::string>();
      if (k == "categorical") {
        col->kind = ColumnKind::categorical;
      } else if (k == "numeric") {
        for (const auto& cell : col->values) {
          if (cell_missing(cell)) continue;
          const std::string* s = cell_scalar(cell);
          if (s == nullptr || !parse_finite_real(*s)) {
            throw CrossFieldError(path + ": column has non-numeric cells");
          }
        }
        col->kind = ColumnKind::numeric;
      } else {
        throw SchemaError(path + " must be numeric or categorical");
      }
    }
  }

  // Outcome.
  if (!doc.contains("label")) throw SchemaError("label is required");
  cfg.outcome.label = parse_column_ref(doc.at("label"), "label");
  if (!doc.contains("label_values_or_threshold")) {
    throw SchemaError("label_values_or_threshold is required");
  }
  parse_values_or_threshold(doc.at("label_values_or_threshold"),
                            "label_values_or_threshold",
                            cfg.outcome.positive_values, cfg.outcome.threshold);

  cfg.label_available = true;
  try {
    resolve_column(cfg.outcome.label, ds, "label");
  } catch (const ColumnNotFound&) {
    if (mode == ValidateMode::run) throw;
    cfg.label_available = false;  // live batches may lack ground truth
  }
  if (cfg.label_available && cfg.outcome.threshold.has_value()) {
    if (ds.column(cfg.outcome.label.resolve(ds)).kind != ColumnKind::numeric) {
      throw CrossFieldError(
          "label_values_or_threshold: numeric threshold on non-numeric column");
    }
  }

  // Facets.
  if (!doc.contains("facet") || !doc.at("facet").is_array() ||
      doc.at("facet").empty()) {
    throw SchemaError("facet must be a nonempty list");
  }
  for (std::size_t i = 0; i < doc.at("facet").size(); ++i) {
    const std::string path = "facet[" + std::to_string(i) + "]";
    const json& f = doc.at("facet").at(i);
    if (!f.is_object()) throw SchemaError(path + " must be an object");
    check_keys(f, path, {"name_or_index", "value_or_threshold",
                         "disadvantaged_above_threshold"});
    if (!f.contains("name_or_index")) {
      throw SchemaError(path + ".name_or_index is required");
    }
    FacetSpec spec;
    spec.facet = parse_column_ref(f.at("name_or_index"), path + ".name_or_index");
    if (!f.contains("value_or_threshold")) {
      throw SchemaError(path + ".value_or_threshold is required");
    }
    parse_values_or_threshold(f.at("value_or_threshold"),
                              path + ".value_or_threshold",
                              spec.disadvantaged_values, spec.threshold);
    spec.above_threshold_is_disadvantaged =
        f.value("disadvantaged_above_threshold", false);
    resolve_column(spec.facet, ds, path + ".name_or_index");
    if (spec.threshold.has_value() &&
        ds.column(spec.facet.resolve(ds)).kind != ColumnKind::numeric) {
      throw CrossFieldError(path +
                            ".value_or_threshold: numeric threshold on "
                            "non-numeric column");
    }
    std::string key = spec.facet.describe();
    for (const auto& existing : cfg.facet_keys) {
      if (existing == key) key += "#" + std::to_string(i);
    }
    cfg.facet_keys.push_back(key);
    cfg.facets.push_back(std::move(spec));
  }

  if (doc.contains("group_variable")) {
    const ColumnRef ref =
        parse_column_ref(doc.at("group_variable"), "group_variable");
    resolve_column(ref, ds, "group_variable");
    cfg.group_variable = ds.column(ref.resolve(ds)).name;
  }

  if (doc.contains("probability_threshold")) {
    cfg.probability_threshold = doc.at("probability_threshold").get<double>();
  }
  if (doc.contains("positive_classes")) {
    const json& pc = doc.at("positive_classes");
    if (!pc.is_array()) throw SchemaError("positive_classes must be a list");
    for (std::size_t i = 0; i < pc.size(); ++i) {
      cfg.positive_classes.push_back(scalar_to_token(
          pc.at(i), "positive_classes[" + std::to_string(i) + "]"));
    }
  }

  // Methods.
  if (!doc.contains("methods") || !doc.at("methods").is_object()) {
    throw SchemaError("methods must be an object");
  }
  const json& methods = doc.at("methods");
  check_keys(methods, "methods",
             {"shap", "pre_training_bias", "post_training_bias", "report"});
  if (methods.contains("pre_training_bias")) {
    const json& m = methods.at("pre_training_bias");
    check_keys(m, "methods.pre_training_bias", {"methods"});
    if (!m.contains("methods")) {
      throw SchemaError("methods.pre_training_bias.methods is required");
    }
    cfg.pre_methods = parse_methods_list(
        m.at("methods"), "methods.pre_training_bias.methods", kPreAll);
  }
  if (methods.contains("post_training_bias")) {
    const json& m = methods.at("post_training_bias");
    check_keys(m, "methods.post_training_bias", {"methods", "flip_test_k"});
    if (!m.contains("methods")) {
      throw SchemaError("methods.post_training_bias.methods is required");
    }
    cfg.post_methods = parse_methods_list(
        m.at("methods"), "methods.post_training_bias.methods", kPostAll);
    cfg.flip_test_k = m.value("flip_test_k", 5);
    if (cfg.flip_test_k < 1) {
      throw SchemaError("methods.post_training_bias.flip_test_k must be >= 1");
    }
  }
  if (methods.contains("shap")) {
    const json& m = methods.at("shap");
    check_keys(m, "methods.shap", {"baseline", "num_samples", "agg_method"});
    ShapMethodConfig shap;
    if (m.contains("baseline")) {
      shap.baseline_path = m.at("baseline").get<std::string>();
    }
    shap.num_samples = m.value("num_samples", 3000);
    if (shap.num_samples < 1) {
      throw SchemaError("methods.shap.num_samples must be positive");
    }
    const std::string agg = m.value("agg_method", "mean_abs");
    if (agg == "mean_abs") shap.agg = AggMethod::mean_abs;
    else if (agg == "median") shap.agg = AggMethod::median;
    else if (agg == "mean") shap.agg = AggMethod::mean;
    else throw SchemaError("methods.shap.agg_method must be mean_abs, median or mean");
    cfg.shap = shap;
  }
  if (methods.contains("report")) {
    const json& m = methods.at("report");
    check_keys(m, "methods.report", {"name", "title"});
    ReportMethodConfig rep;
    rep.name = m.value("name", "report");
    rep.title = m.value("title", "Analysis Report");
    cfg.report = rep;
  }
  if (!cfg.pre_methods && !cfg.post_methods && !cfg.shap) {
    throw CrossFieldError(
        "methods: at least one of pre_training_bias, post_training_bias, shap "
        "is required");
  }

  // Predictor.
  if (doc.contains("predictor")) {
    const json& p = doc.at("predictor");
    if (!p.is_object()) throw SchemaError("predictor must be an object");
    check_keys(p, "predictor",
               {"endpoint_url", "local_model", "model_name", "instance_type",
                "initial_instance_count", "content_type", "label", "probability",
                "label_headers", "max_payload_bytes", "max_retries",
                "max_concurrent_requests", "retry_base_ms", "include_facet"});
    PredictorConfig pc;
    if (p.contains("endpoint_url")) {
      pc.endpoint_url = p.at("endpoint_url").get<std::string>();
    }
    if (p.contains("local_model")) {
      pc.local_model_path = p.at("local_model").get<std::string>();
    }
    pc.content_type = p.value("content_type", "text/csv");
    if (pc.content_type != "text/csv" &&
        pc.content_type != "application/jsonlines") {
      throw SchemaError(
          "predictor.content_type must be text/csv or application/jsonlines");
    }
    if (p.contains("label")) {
      pc.label_selector = parse_selector(p.at("label"), "predictor.label");
    }
    if (p.contains("probability")) {
      pc.probability_selector =
          parse_selector(p.at("probability"), "predictor.probability");
    }
    if (p.contains("label_headers")) {
      for (const auto& h : p.at("label_headers")) {
        pc.label_headers.push_back(
            scalar_to_token(h, "predictor.label_headers"));
      }
    }
    // Default response shape: a bare score in the first field.
    if (!pc.label_selector && !pc.probability_selector) {
      pc.probability_selector = FieldSelector{std::size_t{0}};
    }
    pc.max_payload_bytes =
        p.value("max_payload_bytes", std::size_t{6 * 1024 * 1024});
    pc.max_retries = p.value("max_retries", 4);
    pc.max_concurrent_requests = p.value("max_concurrent_requests", 4);
    pc.retry_base_ms = p.value("retry_base_ms", 100);
    pc.include_facet = p.value("include_facet", false);
    if (pc.max_retries < 0 || pc.max_concurrent_requests < 1 ||
        pc.max_payload_bytes == 0) {
      throw SchemaError("predictor retry/concurrency/payload limits out of range");
    }
    cfg.predictor = std::move(pc);
  }

  if (doc.contains("monitor")) {
    const json& m = doc.at("monitor");
    check_keys(m, "monitor", {"resamples"});
    cfg.monitor_resamples = m.value("resamples", 1000);
    if (cfg.monitor_resamples < 1) {
      throw SchemaError("monitor.resamples must be >= 1");
    }
  }

  // Cross-field rules.
  if ((cfg.post_methods || cfg.shap) && !cfg.predictor) {
    throw CrossFieldError(
        "predictor: required because methods request post_training_bias or shap");
  }
  auto requests = [](const std::optional<std::vector<std::string>>& methods,
                     const char* name) {
    return methods && std::find(methods->begin(), methods->end(), name) !=
                          methods->end();
  };
  // "all" soft-skips CDDL/CDDPL at run time when no group_variable is given;
  // an explicit request makes it a hard error.
  const bool explicit_pre =
      doc.contains("methods") && methods.contains("pre_training_bias") &&
      methods.at("pre_training_bias").at("methods").is_array();
  const bool explicit_post =
      doc.contains("methods") && methods.contains("post_training_bias") &&
      methods.at("post_training_bias").at("methods").is_array();
  if (!cfg.group_variable) {
    if (explicit_pre && requests(cfg.pre_methods, "CDDL")) {
      throw CrossFieldError(
          "group_variable: required because CDDL was requested");
    }
    if (explicit_post && requests(cfg.post_methods, "CDDPL")) {
      throw CrossFieldError(
          "group_variable: required because CDDPL was requested");
    }
  }
  return cfg;
}

namespace {

struct PredictionBundle {
  std::shared_ptr<ModelClient> client;
  std::vector<std::size_t> feature_cols;
  PredictionSet predictions;
  BinaryVector binary;
  bool ready = false;
};

BinaryPredictionRule resolve_prediction_rule(const AnalysisConfig& cfg,
                                             const PredictionSet& ps) {
  BinaryPredictionRule rule;
  if (ps.scores.has_value() && ps.scores->cols() == 1) {
    rule.score_threshold = cfg.probability_threshold;
    return rule;
  }
  if (ps.labels.has_value()) {
    rule.positive_classes = !cfg.positive_classes.empty()
                                ? cfg.positive_classes
                                : cfg.outcome.positive_values;
    if (rule.positive_classes.empty()) {
      throw IncompatibleRule(
          "label predictions need positive_classes (the outcome rule is a "
          "threshold)");
    }
    return rule;
  }
  throw IncompatibleRule(
      "prediction set has neither single scores nor labels to binarize");
}

ScoreFn make_score_fn(std::shared_ptr<ModelClient> client,
                      const AnalysisConfig& cfg) {
  return [client, cfg](const std::vector<Row>& rows) -> Eigen::VectorXd {
    const PredictionSet ps = client->predict_rows(rows);
    if (ps.scores.has_value()) {
      if (ps.scores->cols() == 1) return ps.scores->col(0);
      Eigen::Index col = 0;
      const auto& headers = client->config().label_headers;
      if (cfg.positive_classes.size() == 1 && !headers.empty()) {
        for (std::size_t j = 0; j < headers.size(); ++j) {
          if (headers[j] == cfg.positive_classes[0]) {
            col = static_cast<Eigen::Index>(j);
          }
        }
      }
      return ps.scores->col(col);
    }
    if (ps.labels.has_value()) {
      BinaryPredictionRule rule;
      rule.positive_classes = !cfg.positive_classes.empty()
                                  ? cfg.positive_classes
                                  : cfg.outcome.positive_values;
      if (rule.positive_classes.empty()) {
        throw ModelFailure("cannot score label-only predictions without classes");
      }
      return binarize_predictions(ps, rule).cast<double>();
    }
    throw ModelFailure("model response had neither scores nor labels");
  };
}

MetricEntry entry_from_value(double v) {
  MetricEntry e;
  if (std::isinf(v)) {
    e.infinite = true;
    e.flags.push_back("infinite_divergence");
  } else {
    e.value = v;
  }
  return e;
}

MetricEntry entry_undefined(const std::string& flag) {
  MetricEntry e;
  e.flags.push_back(flag);
  return e;
}

std::vector<std::size_t> resolve_facet_cols(const AnalysisConfig& cfg,
                                            const TabularDataset& ds) {
  std::vector<std::size_t> cols;
  for (const auto& f : cfg.facets) cols.push_back(f.facet.resolve(ds));
  return cols;
}

}  // namespace

AnalysisReport run_job(const AnalysisConfig& cfg, const TabularDataset& ds,
                       const JobOptions& opts) {
  AnalysisReport report;
  report.config_digest = opts.config_digest;
  report.dataset_digest = opts.dataset_digest;
  report.rows = ds.row_count;
  report.seed = opts.seed;
  if (cfg.pre_methods) report.pre_methods_echo = *cfg.pre_methods;
  if (cfg.post_methods) report.post_methods_echo = *cfg.post_methods;
  if (cfg.report) {
    report.report_requested = true;
    report.report_name = cfg.report->name;
    report.report_title = cfg.report->title;
  }

  auto warn = [&](const std::string& step, const std::string& code,
                  const std::string& message) {
    report.warnings.push_back({step, code, message});
    log::warn(step + ": " + code + ": " + message);
  };

  bool any_output = false;

  // Shared inputs.
  std::optional<BinaryVector> labels;
  if (cfg.label_available && (cfg.pre_methods || cfg.post_methods)) {
    try {
      labels = binarize_labels(ds, cfg.outcome);
    } catch (const Error& e) {
      warn("validate", e.code(), e.what());
    }
  }

  std::vector<std::optional<GroupAssignment>> partitions;
  for (std::size_t i = 0; i < cfg.facets.size(); ++i) {
    try {
      partitions.emplace_back(partition_groups(ds, cfg.facets[i]));
    } catch (const Error& e) {
      partitions.emplace_back(std::nullopt);
      warn("validate", e.code(),
           "facet " + cfg.facet_keys[i] + ": " + e.what());
    }
  }

  const Column* strata = nullptr;
  if (cfg.group_variable) strata = ds.find_column(*cfg.group_variable);

  for (std::size_t i = 0; i < cfg.facets.size(); ++i) {
    FacetSection section;
    section.facet_key = cfg.facet_keys[i];
    report.facets.push_back(section);
  }

  // Step 2: pre-training bias.
  if (cfg.pre_methods) {
    for (std::size_t i = 0; i < cfg.facets.size(); ++i) {
      if (!partitions[i] || !labels) continue;
      const GroupAssignment& groups = *partitions[i];
      try {
        const GroupLabelCounts counts = tally(*labels, groups, opts.workers);
        const DivergenceSuite divergences = divergence_suite(counts);
        for (const auto& metric : *cfg.pre_methods) {
          MetricEntry entry;
          if (metric == "CI") entry = entry_from_value(class_imbalance(counts));
          else if (metric == "DPL") entry = entry_from_value(dpl(counts));
          else if (metric == "KL") entry = entry_from_value(divergences.kl);
          else if (metric == "JS") entry = entry_from_value(divergences.js);
          else if (metric == "LP") entry = entry_from_value(divergences.lp);
          else if (metric == "TVD") entry = entry_from_value(divergences.tvd);
          else if (metric == "KS") entry = entry_from_value(divergences.ks);
          else if (metric == "CDDL") {
            if (strata == nullptr) {
              entry = entry_undefined("group_variable_missing");
              warn("pre_training_bias", "MissingColumn",
                   "CDDL skipped: no group_variable configured");
            } else {
              const ConditionalDisparity cd = cddl(*labels, groups, *strata);
              entry = entry_from_value(cd.value);
              entry.strata = cd.strata;
              if (cd.any_degenerate) entry.flags.push_back("degenerate_strata");
            }
          }
          report.facets[i].pre[metric] = std::move(entry);
        }
        any_output = true;
      } catch (const Error& e) {
        warn("pre_training_bias", e.code(), e.what());
      }
    }
  }

  // Predictions, shared by steps 3 and 4.
  PredictionBundle bundle;
  if (cfg.post_methods || cfg.shap) {
    try {
      if (!cfg.predictor) {
        throw CrossFieldError("predictor block required");
      }
      if (!cfg.predictor->endpoint_url && !cfg.predictor->local_model_path) {
        throw EndpointUnreachable(
            "predictor has neither endpoint_url nor local_model");
      }
      PredictorConfig pc = *cfg.predictor;
      bundle.feature_cols =
          feature_columns(ds, cfg.outcome.label.resolve(ds),
                          resolve_facet_cols(cfg, ds), pc.include_facet);
      for (std::size_t j : bundle.feature_cols) {
        pc.feature_names.push_back(ds.column(j).name);
      }
      bundle.client = std::make_shared<ModelClient>(std::move(pc));
      bundle.predictions =
          bundle.client->predict_batchwise(ds, bundle.feature_cols);
      bundle.binary = binarize_predictions(
          bundle.predictions, resolve_prediction_rule(cfg, bundle.predictions));
      bundle.ready = true;
    } catch (const Error& e) {
      warn(cfg.post_methods ? "post_training_bias" : "shap", e.code(), e.what());
      if (cfg.post_methods && cfg.shap) warn("shap", e.code(), e.what());
    }
  }

  // Step 3: post-training bias.
  if (cfg.post_methods && bundle.ready) {
    std::optional<EncodedFeatures> encoded;
    for (std::size_t i = 0; i < cfg.facets.size(); ++i) {
      if (!partitions[i] || !labels) continue;
      const GroupAssignment& groups = *partitions[i];
      try {
        const ConfusionByGroup cm =
            confusion(*labels, bundle.binary, groups, opts.workers);
        const auto suite = post_training_suite(cm);
        for (const auto& metric : *cfg.post_methods) {
          MetricEntry entry;
          if (auto it = suite.find(metric); it != suite.end()) {
            entry = it->second.has_value() ? entry_from_value(*it->second)
                                           : entry_undefined("zero_denominator");
          } else if (metric == "CDDPL") {
            if (strata == nullptr) {
              entry = entry_undefined("group_variable_missing");
              warn("post_training_bias", "MissingColumn",
                   "CDDPL skipped: no group_variable configured");
            } else {
              const ConditionalDisparity cd = cddpl(bundle.binary, groups, *strata);
              entry = entry_from_value(cd.value);
              entry.strata = cd.strata;
              if (cd.any_degenerate) entry.flags.push_back("degenerate_strata");
            }
          } else if (metric == "FT") {
            try {
              if (!encoded) encoded = encode_features(ds, bundle.feature_cols);
              FlipTestConfig ft;
              ft.k = cfg.flip_test_k;
              entry = entry_from_value(
                  flip_test(*encoded, bundle.binary, groups, ft, opts.workers));
            } catch (const InsufficientNeighbors& e) {
              entry = entry_undefined("insufficient_neighbors");
              warn("post_training_bias", e.code(), e.what());
            }
          }
          report.facets[i].post[metric] = std::move(entry);
        }
        any_output = true;
      } catch (const Error& e) {
        warn("post_training_bias", e.code(), e.what());
      }
    }
  }

  // Step 4: explanations.
  if (cfg.shap && bundle.ready) {
    try {
      Baseline baseline;
      std::vector<std::string> names;
      for (std::size_t j : bundle.feature_cols) names.push_back(ds.column(j).name);
      if (cfg.shap->baseline_path) {
        baseline = load_baseline_csv(*cfg.shap->baseline_path, names);
      } else {
        baseline = auto_baseline(ds, bundle.feature_cols);
      }
      ShapConfig sc;
      sc.num_samples = cfg.shap->num_samples;
      sc.mode = ShapMode::automatic;
      sc.seed = opts.seed;
      sc.agg = cfg.shap->agg;
      report.attributions = explain_dataset(ds, bundle.feature_cols,
                                            make_score_fn(bundle.client, cfg),
                                            baseline, sc, opts.workers);
      report.has_explanations = true;
      any_output = true;
      if (report.attributions.ridge_fallbacks > 0) {
        warn("shap", "SingularSystem",
             std::to_string(report.attributions.ridge_fallbacks) +
                 " examples solved with ridge regularization");
      }
    } catch (const Error& e) {
      warn("shap", e.code(), e.what());
    }
  }

  if (!any_output) {
    throw FatalJobError("no requested method produced output");
  }
  return report;
}

namespace {

json entry_to_json(const MetricEntry& e) {
  json o;
  if (e.infinite) o["value"] = "Infinity";
  else if (!e.value.has_value()) o["value"] = "undefined";
  else o["value"] = canonical_round(*e.value);
  o["flags"] = e.flags;
  if (!e.strata.empty()) {
    json strata = json::array();
    for (const auto& s : e.strata) {
      strata.push_back({{"key", s.key},
                        {"n", s.n},
                        {"dd", canonical_round(s.dd)},
                        {"degenerate", s.degenerate}});
    }
    o["strata"] = std::move(strata);
  }
  return o;
}

}  // namespace

std::string analysis_json(const AnalysisReport& report) {
  json doc;
  doc["job"] = {{"config_digest", report.config_digest},
                {"dataset_digest", report.dataset_digest},
                {"engine_version", report.engine_version},
                {"rows", report.rows},
                {"seed", report.seed}};

  json methods;
  if (!report.pre_methods_echo.empty()) {
    methods["pre_training_bias"] = report.pre_methods_echo;
  }
  if (!report.post_methods_echo.empty()) {
    methods["post_training_bias"] = report.post_methods_echo;
  }
  doc["methods"] = std::move(methods);

  if (!report.pre_methods_echo.empty()) {
    json section = json::object();
    for (const auto& facet : report.facets) {
      json metrics = json::object();
      for (const auto& [name, entry] : facet.pre) {
        metrics[name] = entry_to_json(entry);
      }
      if (!metrics.empty()) section[facet.facet_key] = std::move(metrics);
    }
    doc["pre_training_bias"] = std::move(section);
  }
  if (!report.post_methods_echo.empty()) {
    json section = json::object();
    for (const auto& facet : report.facets) {
      json metrics = json::object();
      for (const auto& [name, entry] : facet.post) {
        metrics[name] = entry_to_json(entry);
      }
      if (!metrics.empty()) section[facet.facet_key] = std::move(metrics);
    }
    doc["post_training_bias"] = std::move(section);
  }

  if (report.has_explanations) {
    const auto& attr = report.attributions;
    json global = json::array();
    std::vector<std::size_t> order(attr.feature_names.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      const double gx = attr.global[static_cast<Eigen::Index>(x)];
      const double gy = attr.global[static_cast<Eigen::Index>(y)];
      if (gx != gy) return gx > gy;
      return attr.feature_names[x] < attr.feature_names[y];
    });
    for (std::size_t j : order) {
      global.push_back({attr.feature_names[j],
                        canonical_round(attr.global[static_cast<Eigen::Index>(j)])});
    }
    const char* agg = attr.agg == AggMethod::mean_abs
                          ? "mean_abs"
                          : (attr.agg == AggMethod::median ? "median" : "mean");
    doc["explanations"] = {{"agg_method", agg},
                           {"base_value", canonical_round(attr.base_value)},
                           {"global_importance", std::move(global)},
                           {"local_matrix_file", "explanations_shap/out.csv"},
                           {"ridge_fallbacks", attr.ridge_fallbacks}};
  }

  json warnings = json::array();
  for (const auto& w : report.warnings) {
    warnings.push_back(
        {{"step", w.step}, {"code", w.code}, {"message", w.message}});
  }
  doc["warnings"] = std::move(warnings);
  return doc.dump(2) + "\n";
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out << contents;
    if (!out.good()) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "'");
}

void emit_reports(const AnalysisReport& report, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory '" + out_dir + "'");

  write_file_atomic(out_dir + "/analysis.json", analysis_json(report));

  if (report.has_explanations) {
    const std::string shap_dir = out_dir + "/explanations_shap";
    std::filesystem::create_directories(shap_dir, ec);
    if (ec) throw IoError("cannot create '" + shap_dir + "'");
    std::string csv;
    const auto& attr = report.attributions;
    for (std::size_t j = 0; j < attr.feature_names.size(); ++j) {
      if (j > 0) csv += ",";
      csv += csv_quote(attr.feature_names[j]);
    }
    csv += "\n";
    char buf[64];
    for (Eigen::Index i = 0; i < attr.local.rows(); ++i) {
      for (Eigen::Index j = 0; j < attr.local.cols(); ++j) {
        if (j > 0) csv += ",";
        std::snprintf(buf, sizeof(buf), "%.12g", attr.local(i, j));
        csv += buf;
      }
      csv += "\n";
    }
    write_file_atomic(shap_dir + "/out.csv", csv);
  }

  if (report.report_requested) {
    write_file_atomic(out_dir + "/" + report.report_name + ".html",
                      render_html(report));
  }
}

MonitorBaseline baseline_from_report(const std::string& analysis_json_text,
                                     double bias_margin) {
  json doc = json::parse(analysis_json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw SchemaError("analysis report is not a JSON object");
  }
  MonitorBaseline baseline;

  std::size_t facet_count = 0;
  for (const char* section : {"pre_training_bias", "post_training_bias"}) {
    if (doc.contains(section)) {
      facet_count = std::max(facet_count, doc.at(section).size());
    }
  }
  const bool qualify = facet_count > 1;
  for (const char* section : {"pre_training_bias", "post_training_bias"}) {
    if (!doc.contains(section)) continue;
    for (const auto& [facet_key, metrics] : doc.at(section).items()) {
      for (const auto& [metric, entry] : metrics.items()) {
        if (!entry.contains("value") || !entry.at("value").is_number()) continue;
        const double v = entry.at("value").get<double>();
        const double margin = bias_margin * std::abs(v);
        const std::string key = qualify ? facet_key + ":" + metric : metric;
        baseline.bias_ranges[key] = {v - margin, v + margin};
      }
    }
  }

  if (doc.contains("explanations") &&
      doc.at("explanations").contains("global_importance")) {
    for (const auto& pair : doc.at("explanations").at("global_importance")) {
      baseline.reference_importance.emplace_back(pair.at(0).get<std::string>(),
                                                 pair.at(1).get<double>());
    }
  }

  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  baseline.created_at = buf;
  if (doc.contains("job") && doc.at("job").contains("config_digest")) {
    baseline.source_job = doc.at("job").at("config_digest").get<std::string>();
  }
  return baseline;
}

MonitorRunResult run_monitor(const AnalysisConfig& cfg, const TabularDataset& ds,
                             const MonitorBaseline& baseline,
                             const MonitorOptions& opts) {
  MonitorRunResult result;
  auto warn = [&](const std::string& code, const std::string& message) {
    result.warnings.push_back({"monitor", code, message});
    log::warn("monitor: " + code + ": " + message);
  };

  const int resamples = opts.resamples.value_or(cfg.monitor_resamples);

  // Live labels are optional post-deployment.
  std::optional<BinaryVector> labels;
  if (cfg.label_available) {
    try {
      labels = binarize_labels(ds, cfg.outcome);
    } catch (const Error& e) {
      warn(e.code(), e.what());
    }
  } else {
    warn("MissingColumn",
         "live batch lacks the label column; label-dependent metrics skipped");
  }

  std::vector<std::optional<GroupAssignment>> partitions;
  for (std::size_t i = 0; i < cfg.facets.size(); ++i) {
    try {
      partitions.emplace_back(partition_groups(ds, cfg.facets[i]));
    } catch (const Error& e) {
      partitions.emplace_back(std::nullopt);
      warn(e.code(), "facet " + cfg.facet_keys[i] + ": " + e.what());
    }
  }

  // Predictions are needed for post metrics and importance drift.
  std::shared_ptr<ModelClient> client;
  std::vector<std::size_t> feature_cols;
  std::optional<BinaryVector> preds;
  if (cfg.predictor &&
      (cfg.predictor->endpoint_url || cfg.predictor->local_model_path)) {
    try {
      PredictorConfig pc = *cfg.predictor;
      const std::size_t label_col =
          cfg.label_available ? cfg.outcome.label.resolve(ds)
                              : static_cast<std::size_t>(-1);
      feature_cols = feature_columns(ds, label_col, resolve_facet_cols(cfg, ds),
                                     pc.include_facet);
      for (std::size_t j : feature_cols) {
        pc.feature_names.push_back(ds.column(j).name);
      }
      client = std::make_shared<ModelClient>(std::move(pc));
      const PredictionSet ps = client->predict_batchwise(ds, feature_cols);
      preds = binarize_predictions(ps, resolve_prediction_rule(cfg, ps));
    } catch (const Error& e) {
      warn(e.code(), e.what());
      client.reset();
      preds.reset();
    }
  } else if (cfg.predictor) {
    warn("EndpointUnreachable",
         "predictor has neither endpoint_url nor local_model");
  }

  const Column* strata =
      cfg.group_variable ? ds.find_column(*cfg.group_variable) : nullptr;
  std::optional<EncodedFeatures> encoded;

  // Bias drift per baseline range. Keys may carry a "<facet>:" prefix in
  // multi-facet baselines; bare keys resolve to the first facet.
  std::size_t metric_index = 0;
  for (const auto& [key, range] : baseline.bias_ranges) {
    ++metric_index;
    std::string metric = key;
    std::size_t facet_idx = 0;
    if (const auto colon = key.find(':'); colon != std::string::npos) {
      const std::string facet_key = key.substr(0, colon);
      metric = key.substr(colon + 1);
      bool found = false;
      for (std::size_t i = 0; i < cfg.facet_keys.size(); ++i) {
        if (cfg.facet_keys[i] == facet_key) {
          facet_idx = i;
          found = true;
        }
      }
      if (!found) {
        warn("ColumnNotFound",
             key + ": facet '" + facet_key + "' not in the monitor config");
        continue;
      }
    }
    if (facet_idx >= partitions.size() || !partitions[facet_idx]) {
      warn("DegenerateFacet", key + ": facet partition unavailable");
      continue;
    }

    LiveBatch live;
    live.labels = labels;
    live.preds = preds;
    live.groups = *partitions[facet_idx];
    live.strata = strata;
    live.flip_test_k = cfg.flip_test_k;
    if (metric == "FT" && preds.has_value()) {
      if (!encoded) encoded = encode_features(ds, feature_cols);
      live.features = &*encoded;
    }

    if (!metric_available(metric, live)) {
      warn("MetricSkipped",
           key + ": not computable on this batch (missing labels, predictions "
                 "or columns)");
      continue;
    }
    try {
      BootstrapResult boot = bootstrap_bias(
          live, metric, resamples, mix_seed(opts.seed, metric_index),
          opts.workers);
      DriftAlert alert = bias_drift(range, boot, key);
      result.any_alert_fired = result.any_alert_fired || alert.fired;
      result.bootstrap[key] = boot;
      result.alerts.push_back(std::move(alert));
    } catch (const Error& e) {
      warn(e.code(), key + ": " + e.what());
    }
  }

  // Importance drift.
  if (!baseline.reference_importance.empty()) {
    if (cfg.shap && client) {
      try {
        std::vector<std::string> names;
        for (std::size_t j : feature_cols) names.push_back(ds.column(j).name);
        Baseline shap_baseline =
            cfg.shap->baseline_path
                ? load_baseline_csv(*cfg.shap->baseline_path, names)
                : auto_baseline(ds, feature_cols);
        ShapConfig sc;
        sc.num_samples = cfg.shap->num_samples;
        sc.seed = opts.seed;
        sc.agg = cfg.shap->agg;
        const AttributionResult attr =
            explain_dataset(ds, feature_cols, make_score_fn(client, cfg),
                            shap_baseline, sc, opts.workers);
        std::vector<std::pair<std::string, double>> live_importance;
        for (std::size_t j = 0; j < attr.feature_names.size(); ++j) {
          live_importance.emplace_back(
              attr.feature_names[j],
              attr.global[static_cast<Eigen::Index>(j)]);
        }
        const NdcgResult ndcg = ndcg_drift(baseline, live_importance);
        result.ndcg = ndcg.ndcg;
        result.any_alert_fired = result.any_alert_fired || ndcg.alert.fired;
        result.alerts.push_back(ndcg.alert);
      } catch (const Error& e) {
        warn(e.code(), std::string("importance drift: ") + e.what());
      }
    } else {
      warn("MetricSkipped",
           "importance drift skipped: needs a shap method block and a usable "
           "predictor");
    }
  }
  return result;
}

std::string monitor_json(const MonitorRunResult& result) {
  json doc;
  json alerts = json::array();
  for (const auto& a : result.alerts) {
    alerts.push_back(
        {{"kind", a.kind == DriftAlert::Kind::bias ? "bias" : "explainability"},
         {"detail", a.detail},
         {"observed", canonical_round(a.observed)},
         {"bound_low", canonical_round(a.bound_low)},
         {"bound_high", canonical_round(a.bound_high)},
         {"fired", a.fired}});
  }
  doc["alerts"] = std::move(alerts);

  json boot = json::object();
  for (const auto& [key, b] : result.bootstrap) {
    boot[key] = {{"point", canonical_round(b.point)},
                 {"ci_low", canonical_round(b.ci_low)},
                 {"ci_high", canonical_round(b.ci_high)},
                 {"resamples", b.resamples},
                 {"undefined_resamples", b.undefined_resamples},
                 {"confidence", b.confidence},
                 {"low_sample", b.low_sample},
                 {"pathological", b.pathological}};
  }
  doc["bootstrap"] = std::move(boot);
  if (result.ndcg.has_value()) doc["ndcg"] = canonical_round(*result.ndcg);

  json warnings = json::array();
  for (const auto& w : result.warnings) {
    warnings.push_back(
        {{"step", w.step}, {"code", w.code}, {"message", w.message}});
  }
  doc["warnings"] = std::move(warnings);
  doc["any_alert_fired"] = result.any_alert_fired;
  return doc.dump(2) + "\n";
}

}  // namespace fairlens
