#include "fairlens/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fairlens/bias_core.hpp"
#include "fairlens/parallel.hpp"
#include "fairlens/util.hpp"

namespace fairlens {

namespace {

using nlohmann::json;

double percentile_interpolated(const std::vector<double>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double pos = q * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

MonitorBaseline parse_monitor_baseline(const std::string& json_text) {
  json doc = json::parse(json_text, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw SchemaError("baseline file is not a JSON object");
  }
  MonitorBaseline out;
  out.schema_version = doc.value("schema_version", 1);
  if (doc.contains("bias_ranges")) {
    for (const auto& [metric, range] : doc.at("bias_ranges").items()) {
      if (!range.is_array() || range.size() != 2) {
        throw SchemaError("bias_ranges." + metric + " must be [min, max]");
      }
      const double lo = range.at(0).get<double>();
      const double hi = range.at(1).get<double>();
      if (lo > hi) {
        throw SchemaError("bias_ranges." + metric + " has min > max");
      }
      out.bias_ranges[metric] = {lo, hi};
    }
  }
  if (doc.contains("reference_importance")) {
    for (const auto& entry : doc.at("reference_importance")) {
      if (!entry.is_array() || entry.size() != 2) {
        throw SchemaError("reference_importance entries must be [feature, score]");
      }
      const double score = entry.at(1).get<double>();
      if (!std::isfinite(score)) {
        throw SchemaError("reference_importance score is not finite");
      }
      out.reference_importance.emplace_back(entry.at(0).get<std::string>(), score);
    }
    std::stable_sort(out.reference_importance.begin(),
                     out.reference_importance.end(),
                     [](const auto& x, const auto& y) { return x.second > y.second; });
  }
  out.created_at = doc.value("created_at", "");
  out.source_job = doc.value("source_job", "");
  return out;
}

std::string monitor_baseline_to_json(const MonitorBaseline& baseline) {
  json doc;
  doc["schema_version"] = baseline.schema_version;
  doc["bias_ranges"] = json::object();
  for (const auto& [metric, range] : baseline.bias_ranges) {
    doc["bias_ranges"][metric] = {canonical_round(range.first),
                                  canonical_round(range.second)};
  }
  doc["reference_importance"] = json::array();
  for (const auto& [feature, score] : baseline.reference_importance) {
    doc["reference_importance"].push_back({feature, canonical_round(score)});
  }
  doc["created_at"] = baseline.created_at;
  doc["source_job"] = baseline.source_job;
  return doc.dump(2) + "\n";
}

MonitorBaseline load_monitor_baseline(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open baseline file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_monitor_baseline(buffer.str());
}

BootstrapResult bootstrap_ci(std::size_t n_rows, const ResampleMetricFn& metric,
                             int resamples, std::uint64_t seed, int workers) {
  if (n_rows == 0) throw AllResamplesUndefined("live batch is empty");
  if (resamples < 1) throw ConfigError("resamples must be >= 1");

  std::vector<std::size_t> identity(n_rows);
  for (std::size_t i = 0; i < n_rows; ++i) identity[i] = i;
  const std::optional<double> point = metric(identity);
  if (!point.has_value()) {
    throw AllResamplesUndefined("metric undefined on the live batch");
  }

  BootstrapResult out;
  out.point = *point;
  out.resamples = resamples;
  out.low_sample = n_rows < 10;

  if (n_rows == 1) {
    // The only possible resample is the batch itself.
    out.ci_low = out.ci_high = *point;
    return out;
  }

  std::vector<std::optional<double>> values(static_cast<std::size_t>(resamples));
  parallel_items(static_cast<std::size_t>(resamples), workers, [&](std::size_t r) {
    std::mt19937_64 rng(mix_seed(seed, r));
    std::uniform_int_distribution<std::size_t> pick(0, n_rows - 1);
    std::vector<std::size_t> idx(n_rows);
    for (std::size_t i = 0; i < n_rows; ++i) idx[i] = pick(rng);
    values[r] = metric(idx);
  });

  std::vector<double> defined;
  defined.reserve(values.size());
  for (const auto& v : values) {
    if (v.has_value()) defined.push_back(*v);
    else ++out.undefined_resamples;
  }
  if (defined.empty()) {
    throw AllResamplesUndefined("metric undefined on every resample");
  }
  std::sort(defined.begin(), defined.end());
  const double alpha = 1.0 - out.confidence;
  out.ci_low = percentile_interpolated(defined, alpha / 2.0);
  out.ci_high = percentile_interpolated(defined, 1.0 - alpha / 2.0);
  out.pathological = out.point < out.ci_low || out.point > out.ci_high;
  return out;
}

namespace {

bool is_pre_metric(const std::string& m) {
  return m == "CI" || m == "DPL" || m == "KL" || m == "JS" || m == "LP" ||
         m == "TVD" || m == "KS" || m == "CDDL";
}

bool is_post_count_metric(const std::string& m) {
  return m == "DPPL" || m == "DI" || m == "DCA" || m == "DCR" || m == "AD" ||
         m == "RD" || m == "DAR" || m == "DRR" || m == "TE";
}

// Post-training count metrics that only need predictions, not labels.
bool is_label_free(const std::string& m) {
  return m == "DPPL" || m == "DI" || m == "CDDPL" || m == "FT";
}

std::optional<double> finite_or_nullopt(double v) {
  if (std::isinf(v)) return std::nullopt;  // +inf KL cannot be bootstrapped
  return v;
}

}  // namespace

bool metric_available(const std::string& metric, const LiveBatch& live) {
  const bool has_labels = live.labels.has_value();
  const bool has_preds = live.preds.has_value();
  if (is_pre_metric(metric) && metric != "CDDL") return has_labels;
  if (metric == "CDDL") return has_labels && live.strata != nullptr;
  if (metric == "CDDPL") return has_preds && live.strata != nullptr;
  if (metric == "FT") return has_preds && live.features != nullptr;
  if (is_post_count_metric(metric)) {
    if (is_label_free(metric)) return has_preds;
    return has_labels && has_preds;
  }
  return false;
}

std::optional<double> evaluate_bias_metric(const std::string& metric,
                                           const LiveBatch& live,
                                           const std::vector<std::size_t>& idx) {
  const std::size_t n = idx.size();
  GroupAssignment groups(n);
  for (std::size_t i = 0; i < n; ++i) groups[i] = live.groups[idx[i]];

  auto subset = [&](const BinaryVector& src) {
    BinaryVector out(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      out[static_cast<Eigen::Index>(i)] =
          src[static_cast<Eigen::Index>(idx[i])];
    }
    return out;
  };

  try {
    if (metric == "CDDL" || metric == "CDDPL") {
      const BinaryVector y =
          subset(metric == "CDDL" ? *live.labels : *live.preds);
      Column strata_subset;
      strata_subset.name = live.strata->name;
      strata_subset.kind = live.strata->kind;
      strata_subset.values.reserve(n);
      for (std::size_t i : idx) strata_subset.values.push_back(live.strata->values[i]);
      return cddl(y, groups, strata_subset).value;
    }
    if (metric == "FT") {
      // Resampled feature rows reuse the batch-level encoding.
      const BinaryVector preds = subset(*live.preds);
      EncodedFeatures sub;
      sub.numeric.resize(static_cast<Eigen::Index>(n), live.features->numeric.cols());
      sub.categorical.resize(static_cast<Eigen::Index>(n),
                             live.features->categorical.cols());
      for (std::size_t i = 0; i < n; ++i) {
        sub.numeric.row(static_cast<Eigen::Index>(i)) =
            live.features->numeric.row(static_cast<Eigen::Index>(idx[i]));
        sub.categorical.row(static_cast<Eigen::Index>(i)) =
            live.features->categorical.row(static_cast<Eigen::Index>(idx[i]));
      }
      FlipTestConfig cfg;
      cfg.k = live.flip_test_k;
      return flip_test(sub, preds, groups, cfg);
    }
    if (is_pre_metric(metric)) {
      const GroupLabelCounts c = tally(subset(*live.labels), groups);
      if (metric == "CI") return class_imbalance(c);
      if (metric == "DPL") return dpl(c);
      const DivergenceSuite suite = divergence_suite(c);
      if (metric == "KL") return finite_or_nullopt(suite.kl);
      if (metric == "JS") return suite.js;
      if (metric == "LP") return suite.lp;
      if (metric == "TVD") return suite.tvd;
      if (metric == "KS") return suite.ks;
    }
    if (is_post_count_metric(metric)) {
      BinaryVector labels;
      if (live.labels.has_value()) {
        labels = subset(*live.labels);
      } else if (is_label_free(metric)) {
        labels = BinaryVector::Zero(static_cast<Eigen::Index>(n));
      } else {
        return std::nullopt;
      }
      const ConfusionByGroup c = confusion(labels, subset(*live.preds), groups);
      const auto suite = post_training_suite(c);
      const auto it = suite.find(metric);
      if (it == suite.end()) return std::nullopt;
      return it->second;
    }
  } catch (const DegenerateFacet&) {
    return std::nullopt;
  } catch (const InsufficientNeighbors&) {
    return std::nullopt;
  }
  throw ConfigError("unknown bias metric '" + metric + "'");
}

BootstrapResult bootstrap_bias(const LiveBatch& live, const std::string& metric,
                               int resamples, std::uint64_t seed, int workers) {
  if (!metric_available(metric, live)) {
    throw AllResamplesUndefined("metric '" + metric +
                                "' is not computable on this batch");
  }
  return bootstrap_ci(
      live.rows(),
      [&](const std::vector<std::size_t>& idx) {
        return evaluate_bias_metric(metric, live, idx);
      },
      resamples, seed, workers);
}

DriftAlert bias_drift(std::pair<double, double> reference_range,
                      const BootstrapResult& live, const std::string& metric) {
  DriftAlert alert;
  alert.kind = DriftAlert::Kind::bias;
  alert.detail = metric;
  alert.observed = live.point;
  alert.bound_low = reference_range.first;
  alert.bound_high = reference_range.second;
  alert.fired = live.ci_high < reference_range.first ||
                live.ci_low > reference_range.second;
  return alert;
}

NdcgResult ndcg_drift(const MonitorBaseline& reference,
                      const std::vector<std::pair<std::string, double>>& live) {
  const auto& ref = reference.reference_importance;
  if (ref.empty()) throw ZeroReferenceMass("reference importance is empty");

  std::map<std::string, std::size_t> ref_rank;
  std::map<std::string, double> ref_score;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ref_rank[ref[i].first] = i;
    ref_score[ref[i].first] = ref[i].second;
  }
  if (live.size() != ref.size()) {
    throw FeatureSetMismatch("live ranking has " + std::to_string(live.size()) +
                             " features, reference has " +
                             std::to_string(ref.size()));
  }
  for (const auto& [feature, _] : live) {
    if (ref_rank.find(feature) == ref_rank.end()) {
      throw FeatureSetMismatch("live feature '" + feature +
                               "' is not in the reference ranking");
    }
  }

  bool any_mass = false;
  for (const auto& [_, score] : ref) {
    if (score != 0.0) any_mass = true;
  }
  if (!any_mass) throw ZeroReferenceMass("all reference scores are zero");

  // Live order: score descending, ties broken by reference rank.
  std::vector<std::pair<std::string, double>> ordered = live;
  std::sort(ordered.begin(), ordered.end(),
            [&](const auto& x, const auto& y) {
              if (x.second != y.second) return x.second > y.second;
              return ref_rank.at(x.first) < ref_rank.at(y.first);
            });

  double dcg = 0.0;
  double idcg = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double discount = std::log2(static_cast<double>(i) + 2.0);
    dcg += ref_score.at(ordered[i].first) / discount;
    idcg += ref[i].second / discount;
  }

  NdcgResult out;
  out.ndcg = dcg / idcg;
  out.alert.kind = DriftAlert::Kind::explainability;
  out.alert.detail = "ranking";
  out.alert.observed = out.ndcg;
  out.alert.bound_low = kNdcgAlertThreshold;
  out.alert.bound_high = kNdcgAlertThreshold;
  out.alert.fired = out.ndcg < kNdcgAlertThreshold;
  return out;
}

}  // namespace fairlens
