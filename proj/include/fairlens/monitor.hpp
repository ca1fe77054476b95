#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairlens/bias_post.hpp"
#include "fairlens/tabular.hpp"
#include "fairlens/types.hpp"

namespace fairlens {

// Reference ranges and importance ranking captured from an earlier evaluation.
struct MonitorBaseline {
  int schema_version = 1;
  std::map<std::string, std::pair<double, double>> bias_ranges;
  std::vector<std::pair<std::string, double>> reference_importance;  // desc
  std::string created_at;
  std::string source_job;
};

MonitorBaseline parse_monitor_baseline(const std::string& json_text);
std::string monitor_baseline_to_json(const MonitorBaseline& baseline);
MonitorBaseline load_monitor_baseline(const std::string& path);

struct BootstrapResult {
  double point = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int resamples = 0;            // requested
  int undefined_resamples = 0;  // dropped because the metric was undefined
  double confidence = 0.95;
  bool low_sample = false;    // batch under 10 rows
  bool pathological = false;  // point escaped its own percentile interval
};

// Metric over a with-replacement row sample; nullopt marks an undefined draw.
using ResampleMetricFn =
    std::function<std::optional<double>(const std::vector<std::size_t>&)>;

// Percentile bootstrap: `resamples` with-replacement draws of size n_rows,
// per-resample RNG streams derived from (seed, resample index) so results are
// identical for any worker count. Percentiles use linear interpolation over
// the sorted resample values.
BootstrapResult bootstrap_ci(std::size_t n_rows, const ResampleMetricFn& metric,
                             int resamples, std::uint64_t seed, int workers = 1);

// A live batch; labels may be absent post-deployment, which restricts the
// monitorable metrics to label-free ones.
struct LiveBatch {
  std::optional<BinaryVector> labels;
  std::optional<BinaryVector> preds;
  GroupAssignment groups;
  const Column* strata = nullptr;           // for CDDL / CDDPL
  const EncodedFeatures* features = nullptr;  // for FT
  int flip_test_k = 5;

  std::size_t rows() const { return groups.size(); }
};

// True when the named metric can be evaluated from what the batch carries.
bool metric_available(const std::string& metric, const LiveBatch& live);

// Point evaluation of a named bias metric on a subset of the batch rows.
std::optional<double> evaluate_bias_metric(const std::string& metric,
                                           const LiveBatch& live,
                                           const std::vector<std::size_t>& idx);

BootstrapResult bootstrap_bias(const LiveBatch& live, const std::string& metric,
                               int resamples, std::uint64_t seed,
                               int workers = 1);

struct DriftAlert {
  enum class Kind { bias, explainability };
  Kind kind = Kind::bias;
  std::string detail;  // metric name, or "ranking"
  double observed = 0.0;
  double bound_low = 0.0;   // reference range (bias) or threshold (ndcg)
  double bound_high = 0.0;
  bool fired = false;
};

// Fires iff the bootstrap CI and the reference range are disjoint; touching
// endpoints count as overlap.
DriftAlert bias_drift(std::pair<double, double> reference_range,
                      const BootstrapResult& live, const std::string& metric);

inline constexpr double kNdcgAlertThreshold = 0.90;

struct NdcgResult {
  double ndcg = 1.0;
  DriftAlert alert;
};

// nDCG of the live importance ranking against the reference ranking, with
// gains taken from the reference scores. Live ties are broken by reference
// rank. Alerts strictly below 0.90.
NdcgResult ndcg_drift(const MonitorBaseline& reference,
                      const std::vector<std::pair<std::string, double>>& live);

}  // namespace fairlens
